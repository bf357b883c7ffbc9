#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "simrec/corpus.hpp"
#include "simrec/distill.hpp"
#include "simrec/embedding.hpp"
#include "simrec/logical.hpp"
#include "simrec/seqmodel.hpp"

namespace simrec::sim {

struct EnvConfig {
    int horizon = 20;
    double gamma = 0.95;  // belongs to the agent's return; carried for reporting
    bool allow_repeats = false;
    int action_cap = 0;  // 0 = full catalog
    std::uint64_t seed = 7;
    std::vector<std::string> action_items;  // optional fixed candidate pool
};

/// One step's explanation payload: the three base votes with their scores,
/// plus the majority reward.
struct EnsembleVerdict {
    int vote_mat = 0;
    int vote_sim = 0;
    int vote_sta = 0;
    logical::MatchScore match;
    logical::SimilarityScore similarity;
    double sta_score = 0.0;
    int reward = 0;
    int coins_used = 0;
    bool mat_tie = false;
    bool sim_tie = false;
    bool fallback_used = false;
};

struct EnvState {
    std::string user_id;
    corpus::UserHistory history;  // seed history plus simulated interactions
    int step_index = 0;
    std::set<std::string> recommended;  // this episode
    std::optional<logical::PreferenceContext> last_context;
};

struct StepOutcome {
    EnvState next;
    EnsembleVerdict verdict;
    int reward = 0;
    bool done = false;
};

/// Majority of the three base votes (1 iff at least two vote 1).
int ensemble_reward(int vote_mat, int vote_sim, int vote_sta);

class EnvInterface {
public:
    virtual ~EnvInterface() = default;
    virtual const std::vector<std::string>& action_items() const = 0;
    virtual const EnvConfig& config() const = 0;
    virtual std::vector<std::string> user_ids() const = 0;
    virtual EnvState reset(const std::string& user_id) const = 0;
    virtual StepOutcome step(const EnvState& state, const std::string& action) const = 0;
    virtual std::string item_category(const std::string& item_id) const { return {}; }
};

struct Stores {
    const corpus::Catalog* catalog = nullptr;
    const corpus::CategoryTable* categories = nullptr;
    const distill::ProfileStore* profiles = nullptr;
    const emb::EmbeddingStore* embeddings = nullptr;
    const seq::SeqModel* sta_model = nullptr;
};

/// The ensemble user simulator as a step-based environment. Episodes are a
/// pure function of (seed, user, action sequence): tie coins are keyed by
/// (seed, user, step), so traces replay bit-identically.
class Environment : public EnvInterface {
public:
    Environment(Stores stores, std::map<std::string, corpus::UserHistory> seed_histories,
                EnvConfig config);

    const std::vector<std::string>& action_items() const override { return actions_; }
    const EnvConfig& config() const override { return config_; }
    std::vector<std::string> user_ids() const override;

    EnvState reset(const std::string& user_id) const override;
    StepOutcome step(const EnvState& state, const std::string& action) const override;
    std::string item_category(const std::string& item_id) const override;

private:
    Stores stores_;
    std::map<std::string, corpus::UserHistory> seed_histories_;
    EnvConfig config_;
    std::vector<std::string> actions_;
    std::set<std::string> action_set_;
};

// --- episode traces ----------------------------------------------------------

struct StepRecord {
    int step = 0;
    std::string item_id;
    std::string category;
    EnsembleVerdict verdict;
};

struct EpisodeTrace {
    int episode = 0;
    std::string user_id;
    std::vector<StepRecord> steps;

    int total_reward() const;
};

void save_traces_jsonl(const std::filesystem::path& path,
                       const std::vector<EpisodeTrace>& traces);
std::vector<EpisodeTrace> load_traces_jsonl(const std::filesystem::path& path);

// --- newline-delimited JSON environment protocol ------------------------------

/// Serves reset/step/actions/quit requests, one JSON object per line, for
/// out-of-process agents. Returns when the input stream ends or on "quit".
void serve_env(EnvInterface& env, std::istream& in, std::ostream& out);

}  // namespace simrec::sim
