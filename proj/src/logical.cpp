#include "simrec/logical.hpp"

#include <algorithm>

namespace simrec::logical {

PreferenceContext build_context(const corpus::UserHistory& history, const std::string& candidate,
                                const corpus::CategoryTable& categories) {
    PreferenceContext ctx;
    ctx.candidate_id = candidate;
    const std::string& cand_cat = categories.category_of(candidate);

    for (const auto& it : history) {
        if (categories.category_of(it.item_id) == cand_cat) ctx.slice.push_back(it);
    }
    if (ctx.slice.empty() && !history.empty()) {
        ctx.slice = history;
        ctx.fallback_used = true;
    }

    // Later occurrences of an item id override earlier ones, so an item
    // re-labeled mid-episode lands in exactly one set.
    for (const auto& it : ctx.slice) {
        if (it.label == 1) {
            ctx.liked.insert(it.item_id);
            ctx.disliked.erase(it.item_id);
        } else {
            ctx.disliked.insert(it.item_id);
            ctx.liked.erase(it.item_id);
        }
    }
    return ctx;
}

namespace {

const std::set<std::string> kEmpty;

const std::set<std::string>& pros_of(const distill::ProfileStore& profiles,
                                     const std::string& item) {
    const auto* p = profiles.find(item);
    return p ? p->pros : kEmpty;
}

const std::set<std::string>& cons_of(const distill::ProfileStore& profiles,
                                     const std::string& item) {
    const auto* p = profiles.find(item);
    return p ? p->cons : kEmpty;
}

int accumulate_matches(const std::set<std::string>& candidate_kws,
                       const std::set<std::string>& items,
                       const distill::ProfileStore& profiles, bool pros,
                       std::vector<MatchedKeyword>& matched) {
    int total = 0;
    for (const auto& item : items) {
        const auto& kws = pros ? pros_of(profiles, item) : cons_of(profiles, item);
        for (const auto& kw : candidate_kws) {
            if (kws.count(kw)) {
                ++total;
                matched.push_back({item, kw});
            }
        }
    }
    return total;
}

}  // namespace

MatchResult match_vote(const PreferenceContext& ctx, const distill::ProfileStore& profiles,
                       TieBreaker& coin) {
    MatchResult res;
    const auto& cand_pros = pros_of(profiles, ctx.candidate_id);
    const auto& cand_cons = cons_of(profiles, ctx.candidate_id);

    res.score.alpha_pos =
        accumulate_matches(cand_pros, ctx.liked, profiles, true, res.score.matched_pros);
    res.score.alpha_neg =
        accumulate_matches(cand_cons, ctx.disliked, profiles, false, res.score.matched_cons);

    if (res.score.alpha_pos > res.score.alpha_neg) {
        res.vote = 1;
    } else if (res.score.alpha_pos < res.score.alpha_neg) {
        res.vote = 0;
    } else {
        res.tie = true;
        res.vote = coin.flip();
    }
    return res;
}

namespace {

// Aggregated cosine between the candidate's pooled vector and each history
// item's, skipping items with no pooled vector. Absent when nothing compares.
std::optional<double> aggregate_similarity(const std::optional<emb::Vector>& cand_vec,
                                           const std::set<std::string>& items,
                                           const emb::EmbeddingStore& store, bool pos,
                                           SimAggregation agg, std::string& argmax_item) {
    if (!cand_vec) return std::nullopt;
    std::optional<double> best;
    double sum = 0.0;
    int count = 0;
    for (const auto& item : items) {
        const auto* e = store.find(item);
        if (!e) continue;
        const auto& vec = pos ? e->e_pos : e->e_neg;
        if (!vec) continue;
        double sim = emb::cosine(*cand_vec, *vec);
        sum += sim;
        ++count;
        if (!best || sim > *best) {
            best = sim;
            argmax_item = item;
        }
    }
    if (count == 0) return std::nullopt;
    return agg == SimAggregation::Max ? best : std::optional<double>(sum / count);
}

}  // namespace

SimilarityResult similarity_vote(const PreferenceContext& ctx, const emb::EmbeddingStore& store,
                                 TieBreaker& coin, SimAggregation agg) {
    SimilarityResult res;
    const auto* cand = store.find(ctx.candidate_id);
    std::optional<emb::Vector> cand_pos = cand ? cand->e_pos : std::nullopt;
    std::optional<emb::Vector> cand_neg = cand ? cand->e_neg : std::nullopt;

    res.score.beta_pos = aggregate_similarity(cand_pos, ctx.liked, store, true, agg,
                                              res.score.argmax_pos_item);
    res.score.beta_neg = aggregate_similarity(cand_neg, ctx.disliked, store, false, agg,
                                              res.score.argmax_neg_item);

    const auto& bp = res.score.beta_pos;
    const auto& bn = res.score.beta_neg;
    if (bp && bn) {
        if (*bp > *bn) {
            res.vote = 1;
        } else if (*bp < *bn) {
            res.vote = 0;
        } else {
            res.tie = true;
            res.vote = coin.flip();
        }
    } else if (bp) {
        res.vote = 1;
    } else if (bn) {
        res.vote = 0;
    } else {
        res.tie = true;
        res.vote = coin.flip();
    }
    return res;
}

}  // namespace simrec::logical
