#include "simrec/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "simrec/log.hpp"

namespace simrec::rl {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

// --- featurizer -----------------------------------------------------------------

Featurizer::Featurizer(ObservationSpec spec, std::vector<std::string> action_items,
                       const emb::EmbeddingStore* store)
    : spec_(spec), action_items_(std::move(action_items)), store_(store) {
    if (spec_.recent_k <= 0) throw ConfigError("Featurizer: recent_k must be positive");
    if (spec_.emb_dim < 0) throw ConfigError("Featurizer: emb_dim must be >= 0");
    for (std::size_t i = 0; i < action_items_.size(); ++i)
        index_[action_items_[i]] = static_cast<int>(i);
}

int Featurizer::action_index(const std::string& item) const {
    auto it = index_.find(item);
    return it == index_.end() ? -1 : it->second;
}

AgentObservation Featurizer::observe(const corpus::UserHistory& history) const {
    AgentObservation obs;
    const int k = spec_.recent_k;
    obs.item_indices.assign(k, pad_index());
    obs.labels.assign(k, 0);

    const std::size_t n = std::min<std::size_t>(history.size(), static_cast<std::size_t>(k));
    // Most recent interaction lands in the last slot.
    for (std::size_t i = 0; i < n; ++i) {
        const auto& it = history[history.size() - n + i];
        int idx = action_index(it.item_id);
        obs.item_indices[k - n + i] = idx >= 0 ? idx : pad_index();
        obs.labels[k - n + i] = it.label;
    }

    obs.liked_summary = VectorXd::Zero(spec_.emb_dim);
    obs.disliked_summary = VectorXd::Zero(spec_.emb_dim);
    if (spec_.emb_dim > 0 && store_) {
        int liked_n = 0, disliked_n = 0;
        for (std::size_t i = history.size() - n; i < history.size(); ++i) {
            const auto* e = store_->find(history[i].item_id);
            if (!e) continue;
            if (history[i].label == 1 && e->e_pos) {
                obs.liked_summary += *e->e_pos;
                ++liked_n;
            } else if (history[i].label == 0 && e->e_neg) {
                obs.disliked_summary += *e->e_neg;
                ++disliked_n;
            }
        }
        if (liked_n > 0) obs.liked_summary /= static_cast<double>(liked_n);
        if (disliked_n > 0) obs.disliked_summary /= static_cast<double>(disliked_n);
    }
    return obs;
}

VectorXd Featurizer::encode(const AgentObservation& obs) const {
    const int k = spec_.recent_k;
    VectorXd x = VectorXd::Zero(input_dim());
    const double denom = static_cast<double>(action_items_.size());
    for (int i = 0; i < k; ++i) {
        bool present = obs.item_indices[i] != pad_index();
        x[3 * i] = present ? 1.0 : 0.0;
        x[3 * i + 1] = present ? static_cast<double>(obs.labels[i]) : 0.0;
        x[3 * i + 2] =
            present ? (static_cast<double>(obs.item_indices[i]) + 0.5) / std::max(denom, 1.0)
                    : 0.0;
    }
    if (spec_.emb_dim > 0) {
        x.segment(3 * k, spec_.emb_dim) = obs.liked_summary;
        x.segment(3 * k + spec_.emb_dim, spec_.emb_dim) = obs.disliked_summary;
    }
    return x;
}

// --- replay buffer ------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
    data_.reserve(capacity);
}

void ReplayBuffer::add(Transition t) {
    if (count_ < capacity_) {
        data_.push_back(std::move(t));
        ++count_;
    } else {
        data_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t logical_index) const {
    if (logical_index >= count_) throw InternalError("ReplayBuffer: index out of range");
    if (count_ < capacity_) return data_[logical_index];
    return data_[(next_ + logical_index) % capacity_];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch,
                                                    std::mt19937_64& rng) const {
    if (batch == 0 || batch > count_)
        throw InternalError("ReplayBuffer: bad batch size " + std::to_string(batch) +
                            " for buffer of " + std::to_string(count_));
    // Partial Fisher-Yates over the index range: uniform without replacement.
    std::vector<std::size_t> idx(count_);
    for (std::size_t i = 0; i < count_; ++i) idx[i] = i;
    std::vector<const Transition*> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, count_ - 1);
        std::swap(idx[i], idx[pick(rng)]);
        out.push_back(&data_[count_ < capacity_ ? idx[i] : (next_ + idx[i]) % capacity_]);
    }
    return out;
}

// --- MLP -------------------------------------------------------------------------------

Mlp::Mlp(const MlpConfig& config) : config_(config) {
    if (config_.input <= 0 || config_.output <= 0)
        throw ConfigError("Mlp: input and output sizes must be positive");
    std::mt19937_64 rng(config_.seed);
    std::vector<int> sizes;
    sizes.push_back(config_.input);
    for (int h : config_.hidden) sizes.push_back(h);
    sizes.push_back(config_.output);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        double stddev = std::sqrt(2.0 / static_cast<double>(sizes[l]));
        std::normal_distribution<double> dist(0.0, stddev);
        MatrixXd wl(sizes[l], sizes[l + 1]);
        for (long i = 0; i < wl.rows(); ++i)
            for (long j = 0; j < wl.cols(); ++j) wl(i, j) = dist(rng);
        w.push_back(std::move(wl));
        b.push_back(VectorXd::Zero(sizes[l + 1]));
    }
}

Mlp::Cache Mlp::forward_cached(const MatrixXd& x) const {
    Cache c;
    c.input = x;
    MatrixXd cur = x;
    for (std::size_t l = 0; l < w.size(); ++l) {
        MatrixXd z = (cur * w[l]).rowwise() + b[l].transpose();
        c.pre.push_back(z);
        if (l + 1 < w.size()) {
            cur = z.cwiseMax(0.0);
            c.act.push_back(cur);
        } else {
            c.out = z;
        }
    }
    return c;
}

MatrixXd Mlp::forward_batch(const MatrixXd& x) const { return forward_cached(x).out; }

VectorXd Mlp::forward(const VectorXd& x) const {
    return forward_batch(x.transpose()).row(0).transpose();
}

void Mlp::Grads::set_zero() {
    for (auto& m : w) m.setZero();
    for (auto& v : b) v.setZero();
}

Mlp::Grads Mlp::zero_grads() const {
    Grads g;
    for (const auto& m : w) g.w.push_back(MatrixXd::Zero(m.rows(), m.cols()));
    for (const auto& v : b) g.b.push_back(VectorXd::Zero(v.size()));
    return g;
}

void Mlp::backward(const Cache& cache, const MatrixXd& d_out, Grads& grads) const {
    MatrixXd delta = d_out;
    for (std::size_t l = w.size(); l-- > 0;) {
        const MatrixXd& inputs = l == 0 ? cache.input : cache.act[l - 1];
        grads.w[l] += inputs.transpose() * delta;
        grads.b[l] += delta.colwise().sum().transpose();
        if (l == 0) break;
        delta = (delta * w[l].transpose()).eval();
        delta = (delta.array() * (cache.pre[l - 1].array() > 0.0).cast<double>()).matrix();
    }
}

MlpAdam::MlpAdam(const Mlp& net) : m_(net.zero_grads()), v_(net.zero_grads()) {}

void MlpAdam::step(Mlp& net, const Mlp::Grads& grads, double lr) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t l = 0; l < net.w.size(); ++l) {
        m_.w[l] = b1 * m_.w[l] + (1.0 - b1) * grads.w[l];
        v_.w[l] = (b2 * v_.w[l].array() + (1.0 - b2) * grads.w[l].array().square()).matrix();
        net.w[l].array() -=
            lr * (m_.w[l].array() / corr1) / ((v_.w[l].array() / corr2).sqrt() + eps);
        m_.b[l] = b1 * m_.b[l] + (1.0 - b1) * grads.b[l];
        v_.b[l] = (b2 * v_.b[l].array() + (1.0 - b2) * grads.b[l].array().square()).matrix();
        net.b[l].array() -=
            lr * (m_.b[l].array() / corr1) / ((v_.b[l].array() / corr2).sqrt() + eps);
    }
}

// --- DQN core -----------------------------------------------------------------------------

int select_action(const Mlp& q, const VectorXd& obs, double epsilon,
                  const std::vector<int>& legal, std::mt19937_64& rng) {
    if (legal.empty())
        throw Error("select_action: no legal action remains (horizon exceeds the action space)");
    if (epsilon < 0.0 || epsilon > 1.0)
        throw ConfigError("select_action: epsilon must be in [0, 1]");
    if (epsilon > 0.0) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        if (unit(rng) < epsilon) {
            std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
            return legal[pick(rng)];
        }
    }
    VectorXd values = q.forward(obs);
    int best = legal.front();
    double best_v = values[best];
    for (int a : legal) {
        if (values[a] > best_v) {
            best_v = values[a];
            best = a;
        }
    }
    return best;
}

double td_loss_and_grad(const Mlp& online, const Mlp& target,
                        const std::vector<const Transition*>& batch, double gamma,
                        Mlp::Grads& grads) {
    if (batch.empty()) throw InternalError("td_loss_and_grad: empty batch");
    const std::size_t n = batch.size();
    const long in_dim = batch.front()->obs.size();

    MatrixXd obs(n, in_dim), next_obs(n, in_dim);
    for (std::size_t i = 0; i < n; ++i) {
        obs.row(i) = batch[i]->obs.transpose();
        next_obs.row(i) = batch[i]->next_obs.transpose();
    }

    Mlp::Cache cache = online.forward_cached(obs);
    MatrixXd next_q = target.forward_batch(next_obs);

    MatrixXd d_out = MatrixXd::Zero(n, cache.out.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double bootstrap = batch[i]->done ? 0.0 : gamma * next_q.row(i).maxCoeff();
        double td_target = batch[i]->reward + bootstrap;
        double diff = cache.out(i, batch[i]->action) - td_target;
        loss += diff * diff;
        d_out(i, batch[i]->action) = 2.0 * diff / static_cast<double>(n);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss))
        throw Error("dqn_update: non-finite TD loss (batch of " + std::to_string(n) + ")");
    online.backward(cache, d_out, grads);
    return loss;
}

double dqn_update(Mlp& online, const Mlp& target, const std::vector<const Transition*>& batch,
                  double gamma, double lr, MlpAdam& optimizer) {
    Mlp::Grads grads = online.zero_grads();
    double loss = td_loss_and_grad(online, target, batch, gamma, grads);
    optimizer.step(online, grads, lr);
    return loss;
}

// --- agent ------------------------------------------------------------------------------------

DqnAgent::DqnAgent(DqnConfig config, Featurizer featurizer)
    : config_(config),
      featurizer_(std::move(featurizer)),
      online_(MlpConfig{featurizer_.input_dim(), config.hidden,
                        static_cast<int>(featurizer_.action_items().size()),
                        mix_seed(config.seed, 0x0d9eull)}),
      target_(online_),
      optimizer_(online_),
      buffer_(config.buffer_capacity),
      rng_(mix_seed(config.seed, 0xa9e27ull)) {
    if (config_.batch_size <= 0) throw ConfigError("DqnAgent: batch_size must be positive");
    if (config_.target_sync_every <= 0)
        throw ConfigError("DqnAgent: target_sync_every must be positive");
}

std::vector<int> DqnAgent::legal_actions(const sim::EnvState& state, bool allow_repeats) const {
    std::vector<int> legal;
    const auto& items = featurizer_.action_items();
    legal.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!allow_repeats && state.recommended.count(items[i])) continue;
        legal.push_back(static_cast<int>(i));
    }
    return legal;
}

std::vector<CurvePoint> DqnAgent::train(const sim::EnvInterface& env, int episodes) {
    std::vector<CurvePoint> curve;
    if (episodes <= 0) return curve;

    std::vector<std::string> users = env.user_ids();
    if (users.empty()) throw ConfigError("DqnAgent::train: environment has no users");

    const double anneal_span =
        std::max(1.0, config_.anneal_fraction * static_cast<double>(episodes));
    const std::size_t min_fill =
        std::max<std::size_t>(config_.warmup, static_cast<std::size_t>(config_.batch_size));

    for (int ep = 0; ep < episodes; ++ep) {
        double eps = config_.eps_start +
                     (config_.eps_end - config_.eps_start) *
                         std::min(1.0, static_cast<double>(ep) / anneal_span);
        std::uniform_int_distribution<std::size_t> pick_user(0, users.size() - 1);
        sim::EnvState state = env.reset(users[pick_user(rng_)]);
        VectorXd obs = featurizer_.encode(featurizer_.observe(state.history));

        double total_reward = 0.0;
        double loss_sum = 0.0;
        int loss_n = 0;
        bool done = false;
        while (!done) {
            std::vector<int> legal = legal_actions(state, env.config().allow_repeats);
            int action = select_action(online_, obs, eps, legal, rng_);
            sim::StepOutcome outcome = env.step(state, featurizer_.action_items()[action]);
            VectorXd next_obs = featurizer_.encode(featurizer_.observe(outcome.next.history));

            buffer_.add(Transition{obs, action, static_cast<double>(outcome.reward), next_obs,
                                   outcome.done});
            total_reward += outcome.reward;

            if (buffer_.size() >= min_fill) {
                auto batch =
                    buffer_.sample(static_cast<std::size_t>(config_.batch_size), rng_);
                loss_sum += dqn_update(online_, target_, batch, config_.gamma, config_.lr,
                                       optimizer_);
                ++loss_n;
                ++updates_;
                if (updates_ % config_.target_sync_every == 0) target_ = online_;
            }

            state = std::move(outcome.next);
            obs = std::move(next_obs);
            done = outcome.done;
        }
        curve.push_back(CurvePoint{ep, total_reward, eps,
                                   loss_n > 0 ? loss_sum / loss_n : 0.0});
    }
    return curve;
}

std::string DqnAgent::act_greedy(const sim::EnvState& state) const {
    std::vector<int> legal = legal_actions(state, false);
    if (legal.empty()) throw Error("act_greedy: no legal action remains");
    VectorXd obs = featurizer_.encode(featurizer_.observe(state.history));
    VectorXd values = online_.forward(obs);
    int best = legal.front();
    double best_v = values[best];
    for (int a : legal) {
        if (values[a] > best_v) {
            best_v = values[a];
            best = a;
        }
    }
    return featurizer_.action_items()[best];
}

// --- random baseline ------------------------------------------------------------------------

std::vector<CurvePoint> run_random_policy(const sim::EnvInterface& env, int episodes,
                                          std::uint64_t seed) {
    std::vector<CurvePoint> curve;
    std::mt19937_64 rng(mix_seed(seed, 0xba5eull));
    std::vector<std::string> users = env.user_ids();
    if (users.empty()) throw ConfigError("run_random_policy: environment has no users");

    for (int ep = 0; ep < episodes; ++ep) {
        std::uniform_int_distribution<std::size_t> pick_user(0, users.size() - 1);
        sim::EnvState state = env.reset(users[pick_user(rng)]);
        double total_reward = 0.0;
        bool done = false;
        while (!done) {
            std::vector<std::string> legal;
            for (const auto& item : env.action_items()) {
                if (!env.config().allow_repeats && state.recommended.count(item)) continue;
                legal.push_back(item);
            }
            if (legal.empty())
                throw Error("run_random_policy: no legal action remains");
            std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
            sim::StepOutcome outcome = env.step(state, legal[pick(rng)]);
            total_reward += outcome.reward;
            state = std::move(outcome.next);
            done = outcome.done;
        }
        curve.push_back(CurvePoint{ep, total_reward, 1.0, 0.0});
    }
    return curve;
}

// --- persistence -------------------------------------------------------------------------------

void save_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
    std::vector<std::string> lines;
    lines.reserve(curve.size() + 1);
    lines.push_back("episode,total_reward,epsilon,loss_mean");
    char buf[160];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g", p.episode, p.total_reward,
                      p.epsilon, p.loss_mean);
        lines.push_back(buf);
    }
    write_lines(path, lines);
}

namespace {

json mlp_to_json(const Mlp& net) {
    json layers = json::array();
    for (std::size_t l = 0; l < net.w.size(); ++l) {
        json wj = json::array();
        for (long i = 0; i < net.w[l].rows(); ++i) {
            json row = json::array();
            for (long c = 0; c < net.w[l].cols(); ++c) row.push_back(net.w[l](i, c));
            wj.push_back(std::move(row));
        }
        json bj = json::array();
        for (long i = 0; i < net.b[l].size(); ++i) bj.push_back(net.b[l][i]);
        layers.push_back({{"w", std::move(wj)}, {"b", std::move(bj)}});
    }
    return layers;
}

void mlp_from_json(Mlp& net, const json& layers) {
    if (layers.size() != net.w.size()) throw InputError("agent checkpoint: layer count mismatch");
    for (std::size_t l = 0; l < net.w.size(); ++l) {
        const json& wj = layers[l].at("w");
        if (static_cast<long>(wj.size()) != net.w[l].rows())
            throw InputError("agent checkpoint: weight shape mismatch");
        for (long i = 0; i < net.w[l].rows(); ++i) {
            if (static_cast<long>(wj[i].size()) != net.w[l].cols())
                throw InputError("agent checkpoint: weight shape mismatch");
            for (long c = 0; c < net.w[l].cols(); ++c) net.w[l](i, c) = wj[i][c].get<double>();
        }
        const json& bj = layers[l].at("b");
        if (static_cast<long>(bj.size()) != net.b[l].size())
            throw InputError("agent checkpoint: bias shape mismatch");
        for (long i = 0; i < net.b[l].size(); ++i) net.b[l][i] = bj[i].get<double>();
    }
}

}  // namespace

void DqnAgent::save(const std::filesystem::path& path) const {
    json j;
    j["format"] = "simrec-dqn-agent";
    j["version"] = 1;
    j["config"] = {{"buffer_capacity", config_.buffer_capacity},
                   {"batch_size", config_.batch_size},
                   {"target_sync_every", config_.target_sync_every},
                   {"lr", config_.lr},
                   {"gamma", config_.gamma},
                   {"eps_start", config_.eps_start},
                   {"eps_end", config_.eps_end},
                   {"anneal_fraction", config_.anneal_fraction},
                   {"hidden", config_.hidden},
                   {"warmup", config_.warmup},
                   {"seed", config_.seed}};
    j["observation"] = {{"recent_k", featurizer_.spec().recent_k},
                        {"emb_dim", featurizer_.spec().emb_dim}};
    j["action_items"] = featurizer_.action_items();
    j["online"] = mlp_to_json(online_);
    j["target"] = mlp_to_json(target_);
    j["updates"] = updates_;
    std::ostringstream rng_state;
    rng_state << rng_;
    j["rng_state"] = rng_state.str();
    write_lines(path, {j.dump()});
}

DqnAgent DqnAgent::load(const std::filesystem::path& path, const emb::EmbeddingStore* store) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || j.value("format", "") != "simrec-dqn-agent")
        throw InputError(path.string() + ": not a DQN agent checkpoint");

    DqnConfig cfg;
    const json& c = j.at("config");
    cfg.buffer_capacity = c.at("buffer_capacity").get<std::size_t>();
    cfg.batch_size = c.at("batch_size").get<int>();
    cfg.target_sync_every = c.at("target_sync_every").get<int>();
    cfg.lr = c.at("lr").get<double>();
    cfg.gamma = c.at("gamma").get<double>();
    cfg.eps_start = c.at("eps_start").get<double>();
    cfg.eps_end = c.at("eps_end").get<double>();
    cfg.anneal_fraction = c.at("anneal_fraction").get<double>();
    cfg.hidden = c.at("hidden").get<std::vector<int>>();
    cfg.warmup = c.at("warmup").get<std::size_t>();
    cfg.seed = c.at("seed").get<std::uint64_t>();

    ObservationSpec spec;
    spec.recent_k = j.at("observation").at("recent_k").get<int>();
    spec.emb_dim = j.at("observation").at("emb_dim").get<int>();
    std::vector<std::string> actions = j.at("action_items").get<std::vector<std::string>>();

    DqnAgent agent(cfg, Featurizer(spec, std::move(actions), store));
    mlp_from_json(agent.online_, j.at("online"));
    mlp_from_json(agent.target_, j.at("target"));
    agent.updates_ = j.value("updates", 0L);
    if (j.contains("rng_state")) {
        std::istringstream rng_state(j.at("rng_state").get<std::string>());
        rng_state >> agent.rng_;
    }
    return agent;
}

}  // namespace simrec::rl
