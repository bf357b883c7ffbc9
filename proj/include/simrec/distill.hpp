#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "simrec/common.hpp"
#include "simrec/corpus.hpp"

namespace simrec::distill {

enum class PromptKind { Objective, SubjectivePositive, SubjectiveNegative };

enum class Polarity { Pro, Con };

/// The malformed-LLM-output error: zero reason blocks could be parsed.
class MalformedResponse : public Error {
public:
    using Error::Error;
};

struct PromptTemplate {
    PromptKind kind = PromptKind::Objective;
    std::string body;       // text with {NAME} {ATTRIBUTES} {CATEGORIES} {RATING} {COMMENTS}
    int expected_pros = 0;  // pros blocks the reply format asks for
    int expected_cons = 0;

    static PromptTemplate objective(const std::string& domain_noun = "Movie");
    static PromptTemplate subjective(int label, const std::string& domain_noun = "Movie");
};

struct DistilledReason {
    Polarity polarity = Polarity::Pro;
    std::string reason;
    std::string evidence;
    std::vector<std::string> keywords;  // normalized, non-empty
};

bool operator==(const DistilledReason& a, const DistilledReason& b);

/// Per-keyword source tally: how many objective vs subjective blocks
/// contributed it.
struct Provenance {
    int objective = 0;
    int subjective = 0;
};

struct ItemProfile {
    std::string item_id;
    std::string final_category;
    std::set<std::string> pros;  // D_pos
    std::set<std::string> cons;  // D_neg
    std::map<std::string, Provenance> pros_sources;
    std::map<std::string, Provenance> cons_sources;
    bool distillation_failed = false;
};

std::string render_objective_prompt(const PromptTemplate& tpl, const corpus::RawItem& item,
                                    const std::string& category);
std::string render_subjective_prompt(const PromptTemplate& tpl, const corpus::RawItem& item,
                                     const std::string& category, const corpus::RawReview& review);

/// Tolerant line-oriented extraction of "Pros k:"/"Cons k:" blocks with their
/// "Keywords:" and "Evidence:" payloads. Throws MalformedResponse when no
/// block at all can be recovered; a partial parse is a success.
std::vector<DistilledReason> parse_distillation_response(const std::string& text);

// --- LLM client --------------------------------------------------------------

struct LlmRequest {
    std::string prompt;
    std::string item_id;  // metadata for local backends; not sent on the wire
    PromptKind kind = PromptKind::Objective;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const LlmRequest& request) = 0;
    virtual std::string name() const = 0;
};

/// Emits well-formed responses whose keywords are a seeded hash of
/// (item_id, block index). Fully offline and deterministic.
class MockLlm : public LlmClient {
public:
    explicit MockLlm(std::uint64_t seed) : seed_(seed) {}
    std::string complete(const LlmRequest& request) override;
    std::string name() const override { return "mock"; }

private:
    std::uint64_t seed_;
};

struct HttpLlmConfig {
    std::string url;    // full endpoint URL, e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string api_key;
    int connect_timeout_s = 10;
    int read_timeout_s = 120;
    double temperature = 0.0;
};

/// Chat-completion endpoint client: posts {model, messages, temperature},
/// reads {choices:[{message:{content}}]}.
class HttpLlm : public LlmClient {
public:
    explicit HttpLlm(HttpLlmConfig config);
    std::string complete(const LlmRequest& request) override;
    std::string name() const override { return "http"; }

private:
    HttpLlmConfig config_;
    std::string host_;
    std::string path_;
};

/// Reads SIMREC_LLM_URL / SIMREC_LLM_MODEL / SIMREC_LLM_KEY.
HttpLlmConfig http_llm_config_from_env();

/// Parses a backend selector: "mock:<seed>" or "http".
std::unique_ptr<LlmClient> make_llm_client(const std::string& selector);

// --- distillation pipeline ---------------------------------------------------

struct DistillOptions {
    std::string domain_noun = "Movie";
    int review_cap = 10;  // most recent reviews per item
    int retries = 2;
    int concurrency = 1;
    double rating_threshold = 3.0;
};

/// One objective prompt plus one subjective prompt per sampled review;
/// keyword sets unioned by polarity with provenance. MalformedResponse is
/// retried up to `retries` times, then the prompt contributes nothing.
/// Transport failure after retries marks the profile distillation_failed.
ItemProfile distill_item(const corpus::RawItem& item, const std::string& category,
                         const std::vector<corpus::RawReview>& reviews, LlmClient& llm,
                         const DistillOptions& opts);

/// Distills every catalog item, up to opts.concurrency items in flight;
/// output order matches catalog order regardless of scheduling.
std::vector<ItemProfile> distill_catalog(const corpus::Catalog& catalog,
                                         const corpus::CategoryTable& categories,
                                         const std::vector<corpus::RawReview>& reviews,
                                         LlmClient& llm, const DistillOptions& opts);

/// Removes keywords whose per-polarity profile frequency is below low_cut or
/// above high_cut * |profiles|.
std::vector<ItemProfile> filter_keywords(const std::vector<ItemProfile>& profiles, int low_cut,
                                         double high_cut);

// --- profile store -----------------------------------------------------------

class ProfileStore {
public:
    ProfileStore() = default;
    explicit ProfileStore(std::vector<ItemProfile> profiles);

    const ItemProfile* find(const std::string& item_id) const;
    const std::vector<ItemProfile>& profiles() const { return profiles_; }
    std::size_t size() const { return profiles_.size(); }

private:
    std::vector<ItemProfile> profiles_;
    std::map<std::string, std::size_t> index_;
};

void save_profiles_jsonl(const std::filesystem::path& path,
                         const std::vector<ItemProfile>& profiles);
std::vector<ItemProfile> load_profiles_jsonl(const std::filesystem::path& path);

}  // namespace simrec::distill
