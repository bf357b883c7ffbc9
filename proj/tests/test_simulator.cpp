#include <doctest.h>

#include <sstream>

#include "env_fixture.hpp"
#include "simrec/simulator.hpp"
#include "test_util.hpp"

#include <json.hpp>

using namespace simrec;
using namespace simrec::sim;

TEST_CASE("ensemble_reward is the majority function on all 8 combinations") {
    // exhaustive enumeration oracle
    for (int mask = 0; mask < 8; ++mask) {
        int a = (mask >> 2) & 1, b = (mask >> 1) & 1, c = mask & 1;
        int majority = (a + b + c >= 2) ? 1 : 0;
        CHECK(ensemble_reward(a, b, c) == majority);
    }
    // the published inference rows
    CHECK(ensemble_reward(0, 0, 1) == 0);
    CHECK(ensemble_reward(1, 0, 1) == 1);
    CHECK(ensemble_reward(1, 1, 1) == 1);
    CHECK(ensemble_reward(1, 1, 0) == 1);
    CHECK(ensemble_reward(0, 0, 0) == 0);

    CHECK_THROWS_AS(ensemble_reward(2, 0, 0), InputError);
    CHECK_THROWS_AS(ensemble_reward(0, -1, 0), InputError);
}

TEST_CASE("vote-flip bound: one changed vote flips the reward only under disagreement") {
    for (int mask = 0; mask < 8; ++mask) {
        int v[3] = {(mask >> 2) & 1, (mask >> 1) & 1, mask & 1};
        int base = ensemble_reward(v[0], v[1], v[2]);
        for (int flip = 0; flip < 3; ++flip) {
            int w[3] = {v[0], v[1], v[2]};
            w[flip] = 1 - w[flip];
            int changed = ensemble_reward(w[0], w[1], w[2]);
            int other_a = v[(flip + 1) % 3], other_b = v[(flip + 2) % 3];
            if (other_a == other_b)
                CHECK(changed == base);  // the untouched pair already decides
            else
                CHECK(changed != base);
        }
    }
}

TEST_CASE("reset produces the seed state and validates the user") {
    EnvConfig cfg;
    cfg.horizon = 5;
    auto world = testutil::make_mini_world(cfg);

    EnvState s = world->env->reset("user0");
    CHECK(s.step_index == 0);
    CHECK(s.history.size() == 4);
    CHECK(s.recommended.empty());
    CHECK(!s.last_context.has_value());

    EnvState again = world->env->reset("user0");
    CHECK(again.history.size() == s.history.size());

    CHECK_THROWS_AS(world->env->reset("nobody"), InputError);
}

TEST_CASE("cold-start users with empty seed histories are valid") {
    EnvConfig cfg;
    cfg.horizon = 3;
    auto world = testutil::make_mini_world(cfg);
    world->histories["fresh"] = {};
    sim::Stores stores;
    stores.catalog = &world->catalog;
    stores.categories = &world->categories;
    stores.profiles = &world->profiles;
    stores.embeddings = &world->embeddings;
    stores.sta_model = &world->sta_model;
    Environment env(stores, world->histories, cfg);

    EnvState s = env.reset("fresh");
    CHECK(s.history.empty());
    StepOutcome out = env.step(s, "m0");
    CHECK((out.reward == 0 || out.reward == 1));
    CHECK(out.next.history.size() == 1);
}

TEST_CASE("step appends the simulated label and enforces the action rules") {
    EnvConfig cfg;
    cfg.horizon = 3;
    auto world = testutil::make_mini_world(cfg);

    EnvState s = world->env->reset("user1");
    std::size_t seed_len = s.history.size();

    StepOutcome o1 = world->env->step(s, "m0");
    CHECK(o1.next.step_index == 1);
    CHECK(o1.next.history.size() == seed_len + 1);
    CHECK(o1.next.history.back().item_id == "m0");
    CHECK(o1.next.history.back().label == o1.reward);
    CHECK(o1.verdict.reward == o1.reward);
    CHECK(!o1.done);
    // pre-existing entries untouched
    for (std::size_t i = 0; i < seed_len; ++i)
        CHECK(o1.next.history[i].item_id == s.history[i].item_id);

    // repeat within the episode is an error naming the step
    CHECK_THROWS_WITH_AS(world->env->step(o1.next, "m0"),
                         doctest::Contains("already recommended"), InputError);

    // out-of-space action
    CHECK_THROWS_AS(world->env->step(o1.next, "unknown-item"), InputError);

    StepOutcome o2 = world->env->step(o1.next, "m1");
    StepOutcome o3 = world->env->step(o2.next, "m2");
    CHECK(o3.done);
    CHECK(o3.next.step_index == 3);
    CHECK_THROWS_AS(world->env->step(o3.next, "m3"), InputError);  // episode over

    // verdict consistency: recompute the majority from the stored votes
    for (const auto* o : {&o1, &o2, &o3})
        CHECK(o->verdict.reward ==
              ensemble_reward(o->verdict.vote_mat, o->verdict.vote_sim, o->verdict.vote_sta));
}

TEST_CASE("episodes replay bit-identically for a fixed seed") {
    EnvConfig cfg;
    cfg.horizon = 6;
    cfg.seed = 123;
    auto world = testutil::make_mini_world(cfg);
    std::vector<std::string> actions = {"m0", "m3", "m2", "m7", "m5", "m9"};

    auto run_episode = [&]() {
        std::vector<EnsembleVerdict> verdicts;
        EnvState s = world->env->reset("user2");
        for (const auto& a : actions) {
            StepOutcome o = world->env->step(s, a);
            verdicts.push_back(o.verdict);
            s = o.next;
        }
        return verdicts;
    };
    auto v1 = run_episode();
    auto v2 = run_episode();
    REQUIRE(v1.size() == v2.size());
    for (std::size_t i = 0; i < v1.size(); ++i) {
        CHECK(v1[i].reward == v2[i].reward);
        CHECK(v1[i].vote_mat == v2[i].vote_mat);
        CHECK(v1[i].vote_sim == v2[i].vote_sim);
        CHECK(v1[i].vote_sta == v2[i].vote_sta);
        CHECK(v1[i].sta_score == v2[i].sta_score);
        CHECK(v1[i].coins_used == v2[i].coins_used);
    }

    // a different env seed may change tie outcomes but never crashes
    EnvConfig cfg2 = cfg;
    cfg2.seed = 124;
    auto world2 = testutil::make_mini_world(cfg2);
    EnvState s = world2->env->reset("user2");
    for (const auto& a : actions) s = world2->env->step(s, a).next;
    CHECK(s.step_index == 6);
}

TEST_CASE("reward range and episode totals stay within the horizon") {
    EnvConfig cfg;
    cfg.horizon = 8;
    auto world = testutil::make_mini_world(cfg);
    EnvState s = world->env->reset("user0");
    int total = 0;
    for (int k = 0; k < cfg.horizon; ++k) {
        StepOutcome o = world->env->step(s, "m" + std::to_string(k));
        CHECK((o.reward == 0 || o.reward == 1));
        total += o.reward;
        s = o.next;
    }
    CHECK(total >= 0);
    CHECK(total <= cfg.horizon);
}

TEST_CASE("allow_repeats permits revisiting an item") {
    EnvConfig cfg;
    cfg.horizon = 4;
    cfg.allow_repeats = true;
    auto world = testutil::make_mini_world(cfg);
    EnvState s = world->env->reset("user0");
    StepOutcome o1 = world->env->step(s, "m4");
    StepOutcome o2 = world->env->step(o1.next, "m4");  // no throw
    CHECK(o2.next.step_index == 2);
}

TEST_CASE("action space capping and config validation") {
    EnvConfig cfg;
    cfg.horizon = 2;
    cfg.action_cap = 5;
    auto world = testutil::make_mini_world(cfg);
    CHECK(world->env->action_items().size() == 5);
    EnvState s = world->env->reset("user0");
    CHECK_THROWS_AS(world->env->step(s, "m9"), InputError);  // beyond the cap

    EnvConfig bad;
    bad.horizon = 0;
    CHECK_THROWS_AS(testutil::make_mini_world(bad), ConfigError);
    EnvConfig bad_gamma;
    bad_gamma.gamma = 1.5;
    CHECK_THROWS_AS(testutil::make_mini_world(bad_gamma), ConfigError);
}

TEST_CASE("episode traces round-trip through JSONL") {
    testutil::TempDir tmp("simrec-traces");
    EnvConfig cfg;
    cfg.horizon = 4;
    auto world = testutil::make_mini_world(cfg);

    EpisodeTrace trace;
    trace.episode = 3;
    trace.user_id = "user0";
    EnvState s = world->env->reset("user0");
    for (int k = 0; k < cfg.horizon; ++k) {
        std::string action = "m" + std::to_string(k);
        StepOutcome o = world->env->step(s, action);
        StepRecord rec;
        rec.step = k;
        rec.item_id = action;
        rec.category = world->env->item_category(action);
        rec.verdict = o.verdict;
        trace.steps.push_back(rec);
        s = o.next;
    }

    auto path = tmp.path() / "traces.jsonl";
    save_traces_jsonl(path, {trace});
    auto loaded = load_traces_jsonl(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].episode == 3);
    CHECK(loaded[0].user_id == "user0");
    REQUIRE(loaded[0].steps.size() == 4);
    CHECK(loaded[0].total_reward() == trace.total_reward());
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& a = loaded[0].steps[i].verdict;
        const auto& b = trace.steps[i].verdict;
        CHECK(a.reward == b.reward);
        CHECK(a.sta_score == b.sta_score);
        CHECK(a.match.alpha_pos == b.match.alpha_pos);
        CHECK(a.similarity.beta_pos.has_value() == b.similarity.beta_pos.has_value());
        if (a.similarity.beta_pos) CHECK(*a.similarity.beta_pos == *b.similarity.beta_pos);
    }

    auto path2 = tmp.path() / "traces2.jsonl";
    save_traces_jsonl(path2, loaded);
    CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("environment protocol serves reset and step over streams") {
    EnvConfig cfg;
    cfg.horizon = 2;
    auto world = testutil::make_mini_world(cfg);

    std::istringstream in(
        R"({"cmd":"actions"})"
        "\n"
        R"({"cmd":"step","item":"m0"})"
        "\n"
        R"({"cmd":"reset","user":"user0"})"
        "\n"
        R"({"cmd":"step","item":"m0"})"
        "\n"
        R"({"cmd":"step","item":"m1"})"
        "\n"
        R"({"cmd":"bogus"})"
        "\n"
        R"({"cmd":"quit"})"
        "\n");
    std::ostringstream out;
    serve_env(*world->env, in, out);

    std::istringstream lines(out.str());
    std::string line;
    std::vector<nlohmann::json> replies;
    while (std::getline(lines, line)) replies.push_back(nlohmann::json::parse(line));

    REQUIRE(replies.size() == 7);
    CHECK(replies[0]["ok"] == true);
    CHECK(replies[0]["items"].size() == world->env->action_items().size());
    CHECK(replies[1]["ok"] == false);  // step before reset
    CHECK(replies[2]["ok"] == true);
    CHECK(replies[2]["step_index"] == 0);
    CHECK(replies[3]["ok"] == true);
    CHECK(replies[3].contains("verdict"));
    CHECK(replies[3]["done"] == false);
    CHECK(replies[4]["done"] == true);
    CHECK(replies[5]["ok"] == false);  // unknown command
    CHECK(replies[6]["ok"] == true);   // quit

    // the reward reported over the wire matches an in-process replay
    EnvState s = world->env->reset("user0");
    StepOutcome o = world->env->step(s, "m0");
    CHECK(replies[3]["reward"] == o.reward);
}
