#include "simrec/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "simrec/log.hpp"

namespace simrec::seq {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

void Weights::set_zero() {
    emb.setZero();
    pos.setZero();
    wq.setZero();
    wk.setZero();
    wv.setZero();
    w1.setZero();
    b1.setZero();
    w2.setZero();
    b2.setZero();
    out_bias = 0.0;
}

bool Weights::all_finite() const {
    return emb.allFinite() && pos.allFinite() && wq.allFinite() && wk.allFinite() &&
           wv.allFinite() && w1.allFinite() && b1.allFinite() && w2.allFinite() &&
           b2.allFinite() && std::isfinite(out_bias);
}

namespace {

MatrixXd random_matrix(std::mt19937_64& rng, long rows, long cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

SeqModel::SeqModel(SeqModelConfig config, std::vector<std::string> item_ids)
    : config_(config), item_ids_(std::move(item_ids)) {
    if (config_.dim <= 0 || config_.max_len <= 0 || config_.ffn_dim <= 0)
        throw ConfigError("SeqModel: dim, max_len and ffn_dim must be positive");
    if (config_.blocks != 1)
        throw ConfigError("SeqModel: only a single encoder block is supported");
    index_.reserve(item_ids_.size());
    for (std::size_t i = 0; i < item_ids_.size(); ++i) {
        if (!index_.emplace(item_ids_[i], static_cast<int>(i) + 2).second)
            throw ConfigError("SeqModel: duplicate item id in vocabulary: " + item_ids_[i]);
    }

    std::mt19937_64 rng(config_.seed);
    const long v = static_cast<long>(item_ids_.size()) + 2;
    const long d = config_.dim;
    const long f = config_.ffn_dim;
    const double proj = 1.0 / std::sqrt(static_cast<double>(d));
    weights.emb = random_matrix(rng, v, d, 0.1);
    weights.pos = random_matrix(rng, config_.max_len, d, 0.1);
    weights.wq = random_matrix(rng, d, d, proj);
    weights.wk = random_matrix(rng, d, d, proj);
    weights.wv = random_matrix(rng, d, d, proj);
    weights.w1 = random_matrix(rng, d, f, proj);
    weights.b1 = VectorXd::Zero(f);
    weights.w2 = random_matrix(rng, f, d, 1.0 / std::sqrt(static_cast<double>(f)));
    weights.b2 = VectorXd::Zero(d);
    weights.out_bias = 0.0;
}

int SeqModel::index_of(const std::string& item_id) const {
    auto it = index_.find(item_id);
    return it == index_.end() ? kOov : it->second;
}

ForwardCache SeqModel::forward(const std::vector<int>& history, int candidate) const {
    const int L = config_.max_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));

    ForwardCache c;
    c.candidate = candidate;
    c.tokens.assign(L, kPad);
    const std::size_t n = std::min<std::size_t>(history.size(), static_cast<std::size_t>(L));
    for (std::size_t i = 0; i < n; ++i) c.tokens[i] = history[history.size() - n + i];

    c.x.resize(L, config_.dim);
    for (int i = 0; i < L; ++i)
        c.x.row(i) = weights.emb.row(c.tokens[i]) + weights.pos.row(i);

    c.q = c.x * weights.wq;
    c.k = c.x * weights.wk;
    c.v = c.x * weights.wv;

    // Causal softmax attention: position i sees positions 0..i.
    c.att = MatrixXd::Zero(L, L);
    for (int i = 0; i < L; ++i) {
        double max_s = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= i; ++j)
            max_s = std::max(max_s, c.q.row(i).dot(c.k.row(j)) * scale);
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
            double e = std::exp(c.q.row(i).dot(c.k.row(j)) * scale - max_s);
            c.att(i, j) = e;
            denom += e;
        }
        c.att.row(i).head(i + 1) /= denom;
    }

    c.h1 = c.x + c.att * c.v;
    c.z = (c.h1 * weights.w1).rowwise() + weights.b1.transpose();
    c.g = c.z.cwiseMax(0.0);
    c.h2 = c.h1 + ((c.g * weights.w2).rowwise() + weights.b2.transpose());
    c.pooled = c.h2.colwise().mean();
    c.logit = c.pooled.dot(weights.emb.row(candidate)) + weights.out_bias;
    c.score = sigmoid(c.logit);
    return c;
}

double SeqModel::score(const std::vector<int>& history, int candidate) const {
    double s = forward(history, candidate).score;
    // Keep the reported engagement score strictly inside (0, 1).
    return std::clamp(s, 1e-12, 1.0 - 1e-12);
}

double SeqModel::score_ids(const corpus::UserHistory& history,
                           const std::string& candidate) const {
    std::vector<int> idx;
    idx.reserve(history.size());
    for (const auto& it : history) idx.push_back(index_of(it.item_id));
    return score(idx, index_of(candidate));
}

double SeqModel::loss_and_grad(const Example& ex, Weights& grads) const {
    const ForwardCache c = forward(ex.history, ex.candidate);
    const int L = config_.max_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));

    // BCE from the logit: log(1 + e^z) stays finite for any z.
    const double z = c.logit;
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    const double loss = softplus - static_cast<double>(ex.label) * z;

    const double dlogit = c.score - static_cast<double>(ex.label);

    grads.emb.row(ex.candidate) += dlogit * c.pooled.transpose();
    grads.out_bias += dlogit;

    VectorXd d_pooled = dlogit * weights.emb.row(ex.candidate).transpose();
    MatrixXd d_h2 = MatrixXd::Zero(L, config_.dim);
    d_h2.rowwise() += (d_pooled / static_cast<double>(L)).transpose();

    // Feed-forward (h2 = h1 + relu(h1 w1 + b1) w2 + b2)
    MatrixXd d_g = d_h2 * weights.w2.transpose();
    grads.w2 += c.g.transpose() * d_h2;
    grads.b2 += d_h2.colwise().sum().transpose();
    MatrixXd d_z = ((c.z.array() > 0.0).cast<double>() * d_g.array()).matrix();
    grads.w1 += c.h1.transpose() * d_z;
    grads.b1 += d_z.colwise().sum().transpose();
    MatrixXd d_h1 = d_h2 + d_z * weights.w1.transpose();

    // Attention (h1 = x + att v)
    MatrixXd d_att = d_h1 * c.v.transpose();
    MatrixXd d_v = c.att.transpose() * d_h1;

    // Row-wise softmax backward over the causal window.
    MatrixXd d_scores = MatrixXd::Zero(L, L);
    for (int i = 0; i < L; ++i) {
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) dot += d_att(i, j) * c.att(i, j);
        for (int j = 0; j <= i; ++j) d_scores(i, j) = c.att(i, j) * (d_att(i, j) - dot);
    }

    MatrixXd d_q = d_scores * c.k * scale;
    MatrixXd d_k = d_scores.transpose() * c.q * scale;

    grads.wq += c.x.transpose() * d_q;
    grads.wk += c.x.transpose() * d_k;
    grads.wv += c.x.transpose() * d_v;

    MatrixXd d_x = d_h1 + d_q * weights.wq.transpose() + d_k * weights.wk.transpose() +
                   d_v * weights.wv.transpose();

    for (int i = 0; i < L; ++i) {
        grads.emb.row(c.tokens[i]) += d_x.row(i);
        grads.pos.row(i) += d_x.row(i);
    }
    return loss;
}

// --- training -----------------------------------------------------------------

namespace {

Weights zero_like(const Weights& w) {
    Weights z = w;
    z.set_zero();
    return z;
}

struct Adam {
    Weights m, v;
    long t = 0;

    explicit Adam(const Weights& shape) : m(zero_like(shape)), v(zero_like(shape)) {}

    void step(Weights& w, const Weights& g, double lr) {
        ++t;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t));
        auto update = [&](auto& wt, auto& mt, auto& vt, const auto& gt) {
            mt = b1 * mt + (1.0 - b1) * gt;
            vt = (b2 * vt.array() + (1.0 - b2) * gt.array().square()).matrix();
            wt.array() -=
                lr * (mt.array() / corr1) / ((vt.array() / corr2).sqrt() + eps);
        };
        update(w.emb, m.emb, v.emb, g.emb);
        update(w.pos, m.pos, v.pos, g.pos);
        update(w.wq, m.wq, v.wq, g.wq);
        update(w.wk, m.wk, v.wk, g.wk);
        update(w.wv, m.wv, v.wv, g.wv);
        update(w.w1, m.w1, v.w1, g.w1);
        update(w.b1, m.b1, v.b1, g.b1);
        update(w.w2, m.w2, v.w2, g.w2);
        update(w.b2, m.b2, v.b2, g.b2);
        m.out_bias = b1 * m.out_bias + (1.0 - b1) * g.out_bias;
        v.out_bias = b2 * v.out_bias + (1.0 - b2) * g.out_bias * g.out_bias;
        w.out_bias -= lr * (m.out_bias / corr1) / (std::sqrt(v.out_bias / corr2) + eps);
    }
};

void scale_weights(Weights& g, double s) {
    g.emb *= s;
    g.pos *= s;
    g.wq *= s;
    g.wk *= s;
    g.wv *= s;
    g.w1 *= s;
    g.b1 *= s;
    g.w2 *= s;
    g.b2 *= s;
    g.out_bias *= s;
}

}  // namespace

Dataset build_leave_last_out(const std::map<std::string, corpus::UserHistory>& histories,
                             const SeqModel& model) {
    Dataset ds;
    for (const auto& [user, hist] : histories) {
        (void)user;
        std::vector<int> prefix;
        for (std::size_t k = 0; k < hist.size(); ++k) {
            Example ex;
            ex.history = prefix;
            ex.candidate = model.index_of(hist[k].item_id);
            ex.label = hist[k].label;
            if (k + 1 == hist.size() && hist.size() > 1)
                ds.validation.push_back(std::move(ex));
            else
                ds.train.push_back(std::move(ex));
            prefix.push_back(model.index_of(hist[k].item_id));
        }
    }
    return ds;
}

TrainingLog train(SeqModel& model, const Dataset& dataset) {
    if (dataset.train.empty()) throw InputError("train: empty training corpus");
    const auto& cfg = model.config();

    TrainingLog log;
    log.train_examples = dataset.train.size();
    log.val_examples = dataset.validation.size();

    std::vector<std::size_t> order(dataset.train.size());
    std::iota(order.begin(), order.end(), 0);

    Adam adam(model.weights);
    Weights grads = zero_like(model.weights);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5e9u, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t done = 0;
        while (done < order.size()) {
            std::size_t batch_end =
                std::min(done + static_cast<std::size_t>(std::max(1, cfg.batch_size)),
                         order.size());
            grads.set_zero();
            for (std::size_t i = done; i < batch_end; ++i)
                epoch_loss += model.loss_and_grad(dataset.train[order[i]], grads);
            scale_weights(grads, 1.0 / static_cast<double>(batch_end - done));
            adam.step(model.weights, grads, cfg.lr);
            done = batch_end;
        }
        epoch_loss /= static_cast<double>(order.size());
        if (!std::isfinite(epoch_loss) || !model.weights.all_finite())
            throw Error("sequential model training diverged at epoch " + std::to_string(epoch));
        log.epoch_loss.push_back(epoch_loss);
    }

    if (!dataset.validation.empty()) {
        std::vector<double> scores;
        std::vector<int> labels;
        scores.reserve(dataset.validation.size());
        for (const auto& ex : dataset.validation) {
            scores.push_back(model.score(ex.history, ex.candidate));
            labels.push_back(ex.label);
        }
        log.val_auc = auc(scores, labels);
    }
    return log;
}

SeqModel train_sequential(const std::map<std::string, corpus::UserHistory>& histories,
                          const std::vector<std::string>& vocabulary,
                          const SeqModelConfig& config, TrainingLog* log) {
    if (histories.empty()) throw InputError("train_sequential: no user histories");
    SeqModel model(config, vocabulary);
    Dataset ds = build_leave_last_out(histories, model);
    TrainingLog l = train(model, ds);
    Logger::instance().event("seqmodel_trained",
                             {{"train_examples", std::to_string(l.train_examples)},
                              {"val_auc", std::to_string(l.val_auc)}});
    if (log) *log = l;
    return model;
}

StaResult sta_vote(const SeqModel& model, const corpus::UserHistory& history,
                   const std::string& candidate) {
    StaResult res;
    res.score = model.score_ids(history, candidate);
    res.vote = res.score >= 0.5 ? 1 : 0;
    return res;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw InternalError("auc: size mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) return 0.5;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Midranks over tied score groups.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        i = j;
    }
    double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// --- checkpoint -----------------------------------------------------------------

namespace {

json matrix_json(const MatrixXd& m) {
    json rows = json::array();
    for (long i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXd matrix_from_json(const json& j, long rows, long cols, const char* name) {
    if (static_cast<long>(j.size()) != rows)
        throw InputError(std::string("checkpoint tensor shape mismatch: ") + name);
    MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i) {
        if (static_cast<long>(j[i].size()) != cols)
            throw InputError(std::string("checkpoint tensor shape mismatch: ") + name);
        for (long c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

json vector_json(const VectorXd& v) {
    json arr = json::array();
    for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

VectorXd vector_from_json(const json& j, long n, const char* name) {
    if (static_cast<long>(j.size()) != n)
        throw InputError(std::string("checkpoint tensor shape mismatch: ") + name);
    VectorXd v(n);
    for (long i = 0; i < n; ++i) v[i] = j[i].get<double>();
    return v;
}

}  // namespace

void SeqModel::save(const std::filesystem::path& path) const {
    json j;
    j["format"] = "simrec-seqmodel";
    j["version"] = 1;
    j["config"] = {{"dim", config_.dim},         {"max_len", config_.max_len},
                   {"ffn_dim", config_.ffn_dim}, {"blocks", config_.blocks},
                   {"lr", config_.lr},           {"epochs", config_.epochs},
                   {"batch_size", config_.batch_size},
                   {"seed", config_.seed}};
    j["items"] = item_ids_;
    j["weights"] = {{"emb", matrix_json(weights.emb)}, {"pos", matrix_json(weights.pos)},
                    {"wq", matrix_json(weights.wq)},   {"wk", matrix_json(weights.wk)},
                    {"wv", matrix_json(weights.wv)},   {"w1", matrix_json(weights.w1)},
                    {"b1", vector_json(weights.b1)},   {"w2", matrix_json(weights.w2)},
                    {"b2", vector_json(weights.b2)},   {"out_bias", weights.out_bias}};
    write_lines(path, {j.dump()});
}

SeqModel SeqModel::load(const std::filesystem::path& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || j.value("format", "") != "simrec-seqmodel")
        throw InputError(path.string() + ": not a sequential model checkpoint");

    SeqModelConfig cfg;
    const json& c = j.at("config");
    cfg.dim = c.at("dim").get<int>();
    cfg.max_len = c.at("max_len").get<int>();
    cfg.ffn_dim = c.at("ffn_dim").get<int>();
    cfg.blocks = c.at("blocks").get<int>();
    cfg.lr = c.at("lr").get<double>();
    cfg.epochs = c.at("epochs").get<int>();
    cfg.batch_size = c.at("batch_size").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();

    std::vector<std::string> ids;
    for (const auto& id : j.at("items")) ids.push_back(id.get<std::string>());

    SeqModel model(cfg, std::move(ids));
    const json& w = j.at("weights");
    const long v = static_cast<long>(model.item_ids_.size()) + 2;
    model.weights.emb = matrix_from_json(w.at("emb"), v, cfg.dim, "emb");
    model.weights.pos = matrix_from_json(w.at("pos"), cfg.max_len, cfg.dim, "pos");
    model.weights.wq = matrix_from_json(w.at("wq"), cfg.dim, cfg.dim, "wq");
    model.weights.wk = matrix_from_json(w.at("wk"), cfg.dim, cfg.dim, "wk");
    model.weights.wv = matrix_from_json(w.at("wv"), cfg.dim, cfg.dim, "wv");
    model.weights.w1 = matrix_from_json(w.at("w1"), cfg.dim, cfg.ffn_dim, "w1");
    model.weights.b1 = vector_from_json(w.at("b1"), cfg.ffn_dim, "b1");
    model.weights.w2 = matrix_from_json(w.at("w2"), cfg.ffn_dim, cfg.dim, "w2");
    model.weights.b2 = vector_from_json(w.at("b2"), cfg.dim, "b2");
    model.weights.out_bias = w.at("out_bias").get<double>();
    if (!model.weights.all_finite())
        throw InputError(path.string() + ": checkpoint contains non-finite weights");
    return model;
}

}  // namespace simrec::seq
