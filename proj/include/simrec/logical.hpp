#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "simrec/corpus.hpp"
#include "simrec/distill.hpp"
#include "simrec/embedding.hpp"

namespace simrec::logical {

/// Seeded fair-coin source for vote ties. Draw count is exposed so traces can
/// show exactly when a tie was broken by chance.
class TieBreaker {
public:
    explicit TieBreaker(std::uint64_t seed) : rng_(seed) {}

    int flip() {
        ++draws_;
        return static_cast<int>(rng_() & 1u);
    }
    int draws() const { return draws_; }

private:
    std::mt19937_64 rng_;
    int draws_ = 0;
};

/// The candidate-conditioned slice of a user's history: same-category
/// interactions split into liked and disliked item sets, falling back to the
/// whole history when the category slice is empty.
struct PreferenceContext {
    std::string candidate_id;
    std::vector<corpus::Interaction> slice;  // h_C, ordered
    std::set<std::string> liked;             // I_pos
    std::set<std::string> disliked;          // I_neg
    bool fallback_used = false;
};

PreferenceContext build_context(const corpus::UserHistory& history, const std::string& candidate,
                                const corpus::CategoryTable& categories);

struct MatchedKeyword {
    std::string history_item;
    std::string keyword;
};

struct MatchScore {
    int alpha_pos = 0;
    int alpha_neg = 0;
    std::vector<MatchedKeyword> matched_pros;
    std::vector<MatchedKeyword> matched_cons;
};

struct MatchResult {
    int vote = 0;
    bool tie = false;
    MatchScore score;
};

/// Keyword-matching vote: alpha_pos sums |candidate pros ∩ liked item pros|
/// over liked items, alpha_neg the cons analogue over disliked items. Votes 1
/// when alpha_pos wins, 0 when alpha_neg wins, coin on equality.
MatchResult match_vote(const PreferenceContext& ctx, const distill::ProfileStore& profiles,
                       TieBreaker& coin);

struct SimilarityScore {
    std::optional<double> beta_pos;  // absent when no comparable pair exists
    std::optional<double> beta_neg;
    std::string argmax_pos_item;
    std::string argmax_neg_item;
};

struct SimilarityResult {
    int vote = 0;
    bool tie = false;
    SimilarityScore score;
};

enum class SimAggregation { Max, Mean };  // Mean exists for ablation only

/// Embedding-similarity vote: beta_pos is the max cosine between the
/// candidate's pooled pros vector and each liked item's, beta_neg the cons
/// analogue over disliked items. An absent beta loses to any present one;
/// double absence or exact equality falls to the coin.
SimilarityResult similarity_vote(const PreferenceContext& ctx, const emb::EmbeddingStore& store,
                                 TieBreaker& coin, SimAggregation agg = SimAggregation::Max);

}  // namespace simrec::logical
