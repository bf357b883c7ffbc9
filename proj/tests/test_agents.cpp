#include <doctest.h>

#include <random>

#include "env_fixture.hpp"
#include "simrec/agents.hpp"
#include "stub_env.hpp"
#include "test_util.hpp"

using namespace simrec;
using namespace simrec::rl;

namespace {

std::vector<std::string> action_ids(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("a" + std::to_string(i));
    return out;
}

Transition make_transition(int in_dim, int action, double reward, bool done,
                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Transition t;
    t.obs = Eigen::VectorXd(in_dim);
    t.next_obs = Eigen::VectorXd(in_dim);
    for (int i = 0; i < in_dim; ++i) {
        t.obs[i] = dist(rng);
        t.next_obs[i] = dist(rng);
    }
    t.action = action;
    t.reward = reward;
    t.done = done;
    return t;
}

}  // namespace

TEST_CASE("featurizer produces a fixed-shape padded view") {
    ObservationSpec spec;
    spec.recent_k = 4;
    spec.emb_dim = 0;
    Featurizer feat(spec, action_ids(6), nullptr);
    CHECK(feat.input_dim() == 12);
    CHECK(feat.pad_index() == 6);
    CHECK(feat.action_index("a3") == 3);
    CHECK(feat.action_index("zz") == -1);

    corpus::UserHistory hist;
    for (int k = 0; k < 2; ++k) {
        corpus::Interaction it;
        it.user_id = "u";
        it.item_id = "a" + std::to_string(k);
        it.label = k;
        it.position = k;
        hist.push_back(it);
    }
    AgentObservation obs = feat.observe(hist);
    REQUIRE(obs.item_indices.size() == 4);
    // most recent interaction occupies the last slot; padding up front
    CHECK(obs.item_indices[0] == feat.pad_index());
    CHECK(obs.item_indices[1] == feat.pad_index());
    CHECK(obs.item_indices[2] == 0);
    CHECK(obs.item_indices[3] == 1);
    CHECK(obs.labels[3] == 1);

    Eigen::VectorXd x = feat.encode(obs);
    CHECK(x.size() == 12);
    CHECK(x[0] == 0.0);                   // padding slot: not present
    CHECK(x[3 * 2] == 1.0);               // slot 2 present
    CHECK(x[3 * 3 + 1] == 1.0);           // slot 3 label

    // longer histories keep only the last K
    for (int k = 2; k < 9; ++k) {
        corpus::Interaction it;
        it.user_id = "u";
        it.item_id = "a" + std::to_string(k % 6);
        it.label = 0;
        it.position = k;
        hist.push_back(it);
    }
    AgentObservation full = feat.observe(hist);
    CHECK(full.item_indices.size() == 4);
    CHECK(full.item_indices[3] == feat.action_index(hist.back().item_id));
}

TEST_CASE("featurizer pools liked and disliked summaries separately") {
    emb::HashProvider provider(5, 8);
    emb::EmbeddingCache cache(8);
    std::vector<emb::ProfileEmbedding> embs;
    for (int i = 0; i < 3; ++i) {
        distill::ItemProfile p;
        p.item_id = "a" + std::to_string(i);
        p.pros = {"pro" + std::to_string(i)};
        p.cons = {"con" + std::to_string(i)};
        embs.push_back(emb::pool_profile(p, cache, provider));
    }
    emb::EmbeddingStore store(embs);

    ObservationSpec spec;
    spec.recent_k = 3;
    spec.emb_dim = 8;
    Featurizer feat(spec, action_ids(3), &store);

    corpus::UserHistory hist;
    for (int k = 0; k < 3; ++k) {
        corpus::Interaction it;
        it.user_id = "u";
        it.item_id = "a" + std::to_string(k);
        it.label = k == 1 ? 1 : 0;
        it.position = k;
        hist.push_back(it);
    }
    AgentObservation obs = feat.observe(hist);
    // liked summary equals the single liked item's e_pos
    CHECK((obs.liked_summary - *store.find("a1")->e_pos).cwiseAbs().maxCoeff() < 1e-12);
    // disliked summary is the mean of the two disliked items' e_neg
    Eigen::VectorXd want =
        0.5 * (*store.find("a0")->e_neg + *store.find("a2")->e_neg);
    CHECK((obs.disliked_summary - want).cwiseAbs().maxCoeff() < 1e-12);

    corpus::UserHistory empty;
    AgentObservation zero = feat.observe(empty);
    CHECK(zero.liked_summary.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("replay buffer is FIFO with uniform without-replacement sampling") {
    ReplayBuffer buffer(8);
    CHECK(buffer.capacity() == 8);
    for (int i = 0; i < 11; ++i) buffer.add(make_transition(3, i, i, false, i));
    CHECK(buffer.size() == 8);
    // after capacity + 3 insertions the oldest 3 are gone
    CHECK(buffer.at(0).action == 3);
    CHECK(buffer.at(7).action == 10);

    std::mt19937_64 rng(5);
    auto batch = buffer.sample(8, rng);
    std::set<const Transition*> distinct(batch.begin(), batch.end());
    CHECK(distinct.size() == 8);  // without replacement within the batch

    CHECK_THROWS_AS(buffer.sample(9, rng), InternalError);
    CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
}

TEST_CASE("select_action argmax, tie rule, and legality mask") {
    MlpConfig cfg;
    cfg.input = 2;
    cfg.hidden = {4};
    cfg.output = 3;
    Mlp q(cfg);
    std::mt19937_64 rng(1);
    Eigen::VectorXd obs = Eigen::VectorXd::Zero(2);

    // force known Q-values: zero weights, bias = (0.1, 0.9, 0.3)
    for (auto& w : q.w) w.setZero();
    q.b[0].setZero();
    q.b[1] << 0.1, 0.9, 0.3;
    CHECK(select_action(q, obs, 0.0, {0, 1, 2}, rng) == 1);
    // legality mask removes the argmax
    CHECK(select_action(q, obs, 0.0, {0, 2}, rng) == 2);
    // all-equal Q-values: lowest index wins
    q.b[1].setZero();
    CHECK(select_action(q, obs, 0.0, {0, 1, 2}, rng) == 0);
    CHECK(select_action(q, obs, 0.0, {1, 2}, rng) == 1);

    CHECK_THROWS_AS(select_action(q, obs, 0.0, {}, rng), Error);
    CHECK_THROWS_AS(select_action(q, obs, 1.5, {0}, rng), ConfigError);
}

TEST_CASE("epsilon=1 explores uniformly (chi-square over 10000 draws)") {
    MlpConfig cfg;
    cfg.input = 2;
    cfg.hidden = {4};
    cfg.output = 10;
    Mlp q(cfg);
    std::mt19937_64 rng(20240505);
    Eigen::VectorXd obs = Eigen::VectorXd::Zero(2);
    std::vector<int> legal = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

    std::vector<int> counts(10, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++counts[select_action(q, obs, 1.0, legal, rng)];

    double expected = draws / 10.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 9 degrees of freedom, p = 0.001 critical value
    CHECK(chi2 < 27.88);
}

TEST_CASE("TD targets: terminal masking and the myopic limit") {
    MlpConfig cfg;
    cfg.input = 3;
    cfg.hidden = {5};
    cfg.output = 2;
    cfg.seed = 3;
    Mlp online(cfg);
    Mlp target(online);

    Transition terminal = make_transition(3, 0, 1.0, true, 1);
    Transition running = make_transition(3, 1, 0.25, false, 2);
    std::vector<const Transition*> batch = {&terminal, &running};

    // loss computed against hand-assembled targets
    auto q_of = [&](const Mlp& net, const Eigen::VectorXd& x) { return net.forward(x); };
    double target_terminal = 1.0;  // done masks the bootstrap entirely
    double gamma = 0.9;
    double target_running = 0.25 + gamma * q_of(target, running.next_obs).maxCoeff();

    Mlp::Grads grads = online.zero_grads();
    double loss = td_loss_and_grad(online, target, batch, gamma, grads);
    double d0 = q_of(online, terminal.obs)[0] - target_terminal;
    double d1 = q_of(online, running.obs)[1] - target_running;
    CHECK(loss == doctest::Approx((d0 * d0 + d1 * d1) / 2.0).epsilon(1e-12));

    // gamma = 0: the target is exactly the reward
    Mlp::Grads g2 = online.zero_grads();
    double myopic = td_loss_and_grad(online, target, {&running}, 0.0, g2);
    double dm = q_of(online, running.obs)[1] - 0.25;
    CHECK(myopic == doctest::Approx(dm * dm).epsilon(1e-12));
}

TEST_CASE("TD gradients match central finite differences on a toy net") {
    MlpConfig cfg;
    cfg.input = 4;
    cfg.hidden = {6};
    cfg.output = 2;
    cfg.seed = 8;
    Mlp online(cfg);
    Mlp target(cfg);  // same shapes, different role

    std::vector<Transition> storage = {make_transition(4, 0, 1.0, false, 11),
                                       make_transition(4, 1, 0.0, true, 12),
                                       make_transition(4, 1, 0.5, false, 13)};
    std::vector<const Transition*> batch;
    for (auto& t : storage) batch.push_back(&t);
    const double gamma = 0.95;

    Mlp::Grads grads = online.zero_grads();
    td_loss_and_grad(online, target, batch, gamma, grads);

    double worst = 0.0;
    for (std::size_t l = 0; l < online.w.size(); ++l) {
        auto check_param = [&](double& param, double analytic) {
            const double h = 1e-6;
            const double orig = param;
            Mlp::Grads scratch = online.zero_grads();
            param = orig + h;
            double up = td_loss_and_grad(online, target, batch, gamma, scratch);
            scratch = online.zero_grads();
            param = orig - h;
            double down = td_loss_and_grad(online, target, batch, gamma, scratch);
            param = orig;
            double fd = (up - down) / (2.0 * h);
            if (std::abs(fd) < 1e-9 && std::abs(analytic) < 1e-9) return;
            worst = std::max(worst,
                             std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd)));
        };
        for (long i = 0; i < online.w[l].size(); ++i)
            check_param(*(online.w[l].data() + i), *(grads.w[l].data() + i));
        for (long i = 0; i < online.b[l].size(); ++i)
            check_param(*(online.b[l].data() + i), *(grads.b[l].data() + i));
    }
    CHECK_MESSAGE(worst < 1e-4, "worst relative TD gradient error ", worst);
}

TEST_CASE("one update descends the TD loss on a frozen batch at lr 1e-4") {
    MlpConfig cfg;
    cfg.input = 5;
    cfg.hidden = {8, 8};
    cfg.output = 3;
    cfg.seed = 21;
    Mlp online(cfg);
    Mlp target(online);
    MlpAdam opt(online);

    std::vector<Transition> storage;
    for (int i = 0; i < 16; ++i)
        storage.push_back(make_transition(5, i % 3, i % 2, i % 5 == 0, 100 + i));
    std::vector<const Transition*> batch;
    for (auto& t : storage) batch.push_back(&t);

    double before = dqn_update(online, target, batch, 0.9, 1e-4, opt);
    Mlp::Grads scratch = online.zero_grads();
    double after = td_loss_and_grad(online, target, batch, 0.9, scratch);
    CHECK(after < before);
}

TEST_CASE("agent training syncs the target and masks repeats") {
    sim::EnvConfig env_cfg;
    env_cfg.horizon = 5;
    env_cfg.seed = 31;
    auto world = testutil::make_mini_world(env_cfg);

    DqnConfig cfg;
    cfg.buffer_capacity = 256;
    cfg.batch_size = 8;
    cfg.warmup = 16;
    cfg.target_sync_every = 10;
    cfg.seed = 5;
    cfg.hidden = {16, 16};

    ObservationSpec spec;
    spec.recent_k = 4;
    spec.emb_dim = 16;
    Featurizer feat(spec, world->env->action_items(), &world->embeddings);
    DqnAgent agent(cfg, feat);

    auto curve = agent.train(*world->env, 30);
    CHECK(curve.size() == 30);
    CHECK(agent.updates() > 0);

    // after a multiple-of-sync update count the networks coincide
    if (agent.updates() % cfg.target_sync_every == 0) {
        for (std::size_t l = 0; l < agent.online().w.size(); ++l)
            CHECK((agent.online().w[l] - agent.target().w[l]).cwiseAbs().maxCoeff() == 0.0);
    }

    // epsilon anneals downward along the curve
    CHECK(curve.front().epsilon > curve.back().epsilon);

    // greedy evaluation never repeats within an episode
    sim::EnvState s = world->env->reset("user0");
    std::set<std::string> seen;
    for (int k = 0; k < env_cfg.horizon; ++k) {
        std::string action = agent.act_greedy(s);
        CHECK(seen.insert(action).second);
        s = world->env->step(s, action).next;
    }
}

TEST_CASE("zero training episodes leave the agent bit-identical") {
    testutil::TempDir tmp("simrec-agent0");
    sim::EnvConfig env_cfg;
    env_cfg.horizon = 3;
    auto world = testutil::make_mini_world(env_cfg);

    DqnConfig cfg;
    cfg.seed = 9;
    ObservationSpec spec;
    spec.recent_k = 3;
    spec.emb_dim = 16;
    Featurizer feat(spec, world->env->action_items(), &world->embeddings);

    DqnAgent agent(cfg, feat);
    agent.save(tmp.path() / "before.ckpt");
    auto curve = agent.train(*world->env, 0);
    CHECK(curve.empty());
    agent.save(tmp.path() / "after.ckpt");
    CHECK(read_file(tmp.path() / "before.ckpt") == read_file(tmp.path() / "after.ckpt"));
}

TEST_CASE("training is deterministic for a fixed seed") {
    sim::EnvConfig env_cfg;
    env_cfg.horizon = 4;
    env_cfg.seed = 77;
    auto world = testutil::make_mini_world(env_cfg);

    DqnConfig cfg;
    cfg.buffer_capacity = 128;
    cfg.batch_size = 8;
    cfg.warmup = 8;
    cfg.seed = 13;
    cfg.hidden = {12};
    ObservationSpec spec;
    spec.recent_k = 4;
    spec.emb_dim = 16;

    auto run = [&]() {
        Featurizer feat(spec, world->env->action_items(), &world->embeddings);
        DqnAgent agent(cfg, feat);
        return agent.train(*world->env, 12);
    };
    auto c1 = run();
    auto c2 = run();
    REQUIRE(c1.size() == c2.size());
    for (std::size_t i = 0; i < c1.size(); ++i) {
        CHECK(c1[i].total_reward == c2[i].total_reward);
        CHECK(c1[i].epsilon == c2[i].epsilon);
        CHECK(c1[i].loss_mean == c2[i].loss_mean);
    }
}

TEST_CASE("agent checkpoints round-trip through JSON") {
    testutil::TempDir tmp("simrec-agent");
    sim::EnvConfig env_cfg;
    env_cfg.horizon = 3;
    auto world = testutil::make_mini_world(env_cfg);

    DqnConfig cfg;
    cfg.seed = 4;
    cfg.hidden = {10, 6};
    ObservationSpec spec;
    spec.recent_k = 3;
    spec.emb_dim = 16;
    Featurizer feat(spec, world->env->action_items(), &world->embeddings);
    DqnAgent agent(cfg, feat);
    agent.train(*world->env, 5);

    auto path = tmp.path() / "agent.ckpt";
    agent.save(path);
    DqnAgent loaded = DqnAgent::load(path, &world->embeddings);
    CHECK(loaded.config().hidden == cfg.hidden);
    CHECK(loaded.featurizer().action_items() == feat.action_items());
    CHECK(loaded.updates() == agent.updates());

    sim::EnvState s = world->env->reset("user1");
    CHECK(loaded.act_greedy(s) == agent.act_greedy(s));

    auto path2 = tmp.path() / "agent2.ckpt";
    loaded.save(path2);
    CHECK(read_file(path) == read_file(path2));

    CHECK_THROWS_AS(DqnAgent::load(tmp.path() / "nope.ckpt", nullptr), InputError);
}

TEST_CASE("random policy emits full episodes and matches the like-rate") {
    testutil::StubEnv stub(100, 0.3, 10);
    double p = stub.exact_like_rate();

    const int episodes = 400;
    auto curve = rl::run_random_policy(stub, episodes, 7);
    REQUIRE(curve.size() == episodes);

    double total = 0.0;
    for (const auto& pt : curve) total += pt.total_reward;
    double mean_per_step = total / (episodes * 10.0);

    // Monte Carlo first: the standard error of the policy estimate
    double se = std::sqrt(p * (1.0 - p) / (episodes * 10.0));
    CHECK(std::abs(mean_per_step - p) < 3.0 * se);

    // determinism
    auto again = rl::run_random_policy(stub, episodes, 7);
    for (std::size_t i = 0; i < curve.size(); ++i)
        CHECK(curve[i].total_reward == again[i].total_reward);
}

TEST_CASE("learning curve CSV is stable") {
    testutil::TempDir tmp("simrec-curve");
    std::vector<CurvePoint> curve = {{0, 3.0, 1.0, 0.5}, {1, 4.0, 0.9, 0.25}};
    auto path = tmp.path() / "curve.csv";
    save_curve_csv(path, curve);
    std::string content = read_file(path);
    CHECK(content.find("episode,total_reward,epsilon,loss_mean") == 0);
    CHECK(content.find("0,3,1,0.5") != std::string::npos);

    auto path2 = tmp.path() / "curve2.csv";
    save_curve_csv(path2, curve);
    CHECK(read_file(path) == read_file(path2));
}
