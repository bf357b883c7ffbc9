#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "simrec/common.hpp"
#include "simrec/corpus.hpp"

namespace simrec::seq {

struct SeqModelConfig {
    int dim = 32;       // item/positional embedding width
    int max_len = 50;   // history positions fed to the encoder
    int ffn_dim = 32;
    int blocks = 1;     // only the single-block encoder is supported
    double lr = 1e-3;
    int epochs = 20;
    int batch_size = 64;
    std::uint64_t seed = 7;
};

/// All trainable tensors. Also reused as the gradient container.
struct Weights {
    Eigen::MatrixXd emb;  // (vocab+2) x dim; row 0 = padding, row 1 = out-of-vocabulary
    Eigen::MatrixXd pos;  // max_len x dim
    Eigen::MatrixXd wq, wk, wv;  // dim x dim
    Eigen::MatrixXd w1;          // dim x ffn_dim
    Eigen::VectorXd b1;          // ffn_dim
    Eigen::MatrixXd w2;          // ffn_dim x dim
    Eigen::VectorXd b2;          // dim
    double out_bias = 0.0;

    void set_zero();
    bool all_finite() const;
};

struct Example {
    std::vector<int> history;  // item indices, chronological
    int candidate = 0;
    int label = 0;
};

struct ForwardCache {
    std::vector<int> tokens;
    int candidate = 0;
    Eigen::MatrixXd x, q, k, v, att, h1, z, g, h2;
    Eigen::VectorXd pooled;
    double logit = 0.0;
    double score = 0.0;
};

/// Sequence-conditioned engagement scorer: item + positional embeddings, one
/// causal self-attention block with a residual feed-forward, mean-pooled
/// state dotted with the candidate embedding, logistic output.
class SeqModel {
public:
    static constexpr int kPad = 0;
    static constexpr int kOov = 1;

    SeqModel() = default;
    SeqModel(SeqModelConfig config, std::vector<std::string> item_ids);

    const SeqModelConfig& config() const { return config_; }
    const std::vector<std::string>& item_ids() const { return item_ids_; }

    /// kOov for ids outside the training vocabulary.
    int index_of(const std::string& item_id) const;

    double score(const std::vector<int>& history, int candidate) const;
    double score_ids(const corpus::UserHistory& history, const std::string& candidate) const;

    ForwardCache forward(const std::vector<int>& history, int candidate) const;

    /// Binary cross-entropy of one example (computed from the logit, so large
    /// scores stay finite) plus its parameter gradients, accumulated into
    /// `grads`.
    double loss_and_grad(const Example& ex, Weights& grads) const;

    Weights weights;

    void save(const std::filesystem::path& path) const;
    static SeqModel load(const std::filesystem::path& path);

private:
    SeqModelConfig config_;
    std::vector<std::string> item_ids_;
    std::unordered_map<std::string, int> index_;
};

struct StaResult {
    int vote = 0;
    double score = 0.0;
};

/// Vote 1 iff the model's engagement score clears 0.5 (boundary inclusive).
StaResult sta_vote(const SeqModel& model, const corpus::UserHistory& history,
                   const std::string& candidate);

struct Dataset {
    std::vector<Example> train;
    std::vector<Example> validation;
};

/// (prefix, candidate, label) triples from each user's history, holding the
/// last interaction of every user out for validation.
Dataset build_leave_last_out(const std::map<std::string, corpus::UserHistory>& histories,
                             const SeqModel& model);

struct TrainingLog {
    std::vector<double> epoch_loss;
    double val_auc = 0.0;
    std::size_t train_examples = 0;
    std::size_t val_examples = 0;
};

/// Seeded mini-batch Adam on BCE. Throws on an empty corpus and on a
/// non-finite loss (naming the epoch).
TrainingLog train(SeqModel& model, const Dataset& dataset);

/// Convenience wrapper: vocabulary + model init + leave-last-out + train.
SeqModel train_sequential(const std::map<std::string, corpus::UserHistory>& histories,
                          const std::vector<std::string>& vocabulary,
                          const SeqModelConfig& config, TrainingLog* log = nullptr);

/// Rank-based AUC with midrank tie handling. Returns 0.5 when one class is
/// absent.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace simrec::seq
