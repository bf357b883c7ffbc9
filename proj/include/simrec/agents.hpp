#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "simrec/embedding.hpp"
#include "simrec/simulator.hpp"

namespace simrec::rl {

// --- observation featurization -------------------------------------------------

struct ObservationSpec {
    int recent_k = 10;
    int emb_dim = 0;  // width of the pooled-profile summaries; 0 disables them
};

struct AgentObservation {
    std::vector<int> item_indices;  // last K action-space indices, padded
    std::vector<int> labels;        // parallel to item_indices; 0 for padding
    Eigen::VectorXd liked_summary;
    Eigen::VectorXd disliked_summary;
};

/// Maps a user history onto the agent's fixed-shape view: the last K
/// interactions plus mean-pooled profile embeddings of recently liked and
/// disliked items.
class Featurizer {
public:
    Featurizer(ObservationSpec spec, std::vector<std::string> action_items,
               const emb::EmbeddingStore* store);

    const ObservationSpec& spec() const { return spec_; }
    const std::vector<std::string>& action_items() const { return action_items_; }
    int pad_index() const { return static_cast<int>(action_items_.size()); }
    int action_index(const std::string& item) const;  // -1 when outside the space

    AgentObservation observe(const corpus::UserHistory& history) const;
    Eigen::VectorXd encode(const AgentObservation& obs) const;
    int input_dim() const { return 3 * spec_.recent_k + 2 * spec_.emb_dim; }

private:
    ObservationSpec spec_;
    std::vector<std::string> action_items_;
    std::unordered_map<std::string, int> index_;
    const emb::EmbeddingStore* store_;
};

// --- experience replay ------------------------------------------------------------

struct Transition {
    Eigen::VectorXd obs;
    int action = 0;
    double reward = 0.0;
    Eigen::VectorXd next_obs;
    bool done = false;
};

/// FIFO ring buffer with uniform without-replacement batch sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void add(Transition t);
    std::size_t size() const { return count_; }
    std::size_t capacity() const { return capacity_; }

    /// Logical index 0 is the oldest stored transition.
    const Transition& at(std::size_t logical_index) const;

    std::vector<const Transition*> sample(std::size_t batch, std::mt19937_64& rng) const;

private:
    std::vector<Transition> data_;
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::size_t count_ = 0;
};

// --- Q-network ----------------------------------------------------------------------

struct MlpConfig {
    int input = 0;
    std::vector<int> hidden = {128, 128};
    int output = 0;
    std::uint64_t seed = 7;
};

/// Plain fully connected ReLU network with hand-rolled gradients.
class Mlp {
public:
    Mlp() = default;
    explicit Mlp(const MlpConfig& config);

    const MlpConfig& config() const { return config_; }

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;  // one row per sample

    struct Cache {
        Eigen::MatrixXd input;
        std::vector<Eigen::MatrixXd> pre;  // pre-activation per layer
        std::vector<Eigen::MatrixXd> act;  // post-activation per hidden layer
        Eigen::MatrixXd out;
    };
    Cache forward_cached(const Eigen::MatrixXd& x) const;

    struct Grads {
        std::vector<Eigen::MatrixXd> w;
        std::vector<Eigen::VectorXd> b;
        void set_zero();
    };
    Grads zero_grads() const;
    void backward(const Cache& cache, const Eigen::MatrixXd& d_out, Grads& grads) const;

    std::vector<Eigen::MatrixXd> w;  // (fan_in x fan_out) per layer
    std::vector<Eigen::VectorXd> b;

private:
    MlpConfig config_;
};

/// Adam optimizer state for one Mlp.
class MlpAdam {
public:
    explicit MlpAdam(const Mlp& net);
    void step(Mlp& net, const Mlp::Grads& grads, double lr);

private:
    Mlp::Grads m_, v_;
    long t_ = 0;
};

// --- DQN ------------------------------------------------------------------------------

struct DqnConfig {
    std::size_t buffer_capacity = 10000;
    int batch_size = 64;
    int target_sync_every = 200;  // gradient updates between target refreshes
    double lr = 1e-3;
    double gamma = 0.95;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double anneal_fraction = 0.5;  // of the episode budget
    std::vector<int> hidden = {128, 128};
    std::size_t warmup = 500;  // transitions before updates begin
    std::uint64_t seed = 7;
};

/// Epsilon-greedy over the legal (non-repeated) actions; greedy ties break
/// to the lowest action index. `legal` must be sorted ascending.
int select_action(const Mlp& q, const Eigen::VectorXd& obs, double epsilon,
                  const std::vector<int>& legal, std::mt19937_64& rng);

/// Mean squared TD error of the batch and its gradients w.r.t. the online
/// network (targets r + gamma * (1 - done) * max_a Q_target).
double td_loss_and_grad(const Mlp& online, const Mlp& target,
                        const std::vector<const Transition*>& batch, double gamma,
                        Mlp::Grads& grads);

/// One optimizer step on the TD loss; returns the pre-step loss.
double dqn_update(Mlp& online, const Mlp& target, const std::vector<const Transition*>& batch,
                  double gamma, double lr, MlpAdam& optimizer);

struct CurvePoint {
    int episode = 0;
    double total_reward = 0.0;
    double epsilon = 0.0;
    double loss_mean = 0.0;
};

void save_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

class DqnAgent {
public:
    DqnAgent(DqnConfig config, Featurizer featurizer);

    const DqnConfig& config() const { return config_; }
    const Featurizer& featurizer() const { return featurizer_; }
    const Mlp& online() const { return online_; }
    const Mlp& target() const { return target_; }
    long updates() const { return updates_; }

    /// Episode loop with linear epsilon annealing and periodic target sync.
    /// Users are drawn uniformly per episode from the environment.
    std::vector<CurvePoint> train(const sim::EnvInterface& env, int episodes);

    /// Greedy action (item id) for evaluation.
    std::string act_greedy(const sim::EnvState& state) const;

    void save(const std::filesystem::path& path) const;
    static DqnAgent load(const std::filesystem::path& path, const emb::EmbeddingStore* store);

private:
    std::vector<int> legal_actions(const sim::EnvState& state, bool allow_repeats) const;

    DqnConfig config_;
    Featurizer featurizer_;
    Mlp online_;
    Mlp target_;
    MlpAdam optimizer_;
    ReplayBuffer buffer_;
    std::mt19937_64 rng_;
    long updates_ = 0;
};

/// Uniform-random legal policy over the same episode loop; the directional
/// baseline for learning checks.
std::vector<CurvePoint> run_random_policy(const sim::EnvInterface& env, int episodes,
                                          std::uint64_t seed);

}  // namespace simrec::rl
