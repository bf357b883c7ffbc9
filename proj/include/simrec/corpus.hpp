#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "simrec/common.hpp"

namespace simrec::corpus {

/// Reserved label for items whose raw categories were all filtered away.
inline constexpr const char* kUncategorized = "UNCATEGORIZED";

struct RawItem {
    std::string item_id;
    std::string name;
    std::vector<std::string> attributes;
    std::vector<std::string> raw_categories;
};

struct RawReview {
    std::string user_id;
    std::string item_id;
    double rating = 0.0;
    std::string comment;
    std::optional<std::int64_t> timestamp;
};

struct Interaction {
    std::string user_id;
    std::string item_id;
    int label = 0;      // binary {0,1}
    int position = 0;   // ordinal index within the user's chronological sequence
};

using UserHistory = std::vector<Interaction>;

/// Immutable item catalog with id lookup.
class Catalog {
public:
    Catalog() = default;
    explicit Catalog(std::vector<RawItem> items);

    const std::vector<RawItem>& items() const { return items_; }
    const RawItem* find(const std::string& item_id) const;
    bool contains(const std::string& item_id) const { return find(item_id) != nullptr; }
    std::size_t size() const { return items_.size(); }

private:
    std::vector<RawItem> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct CategoryTable {
    std::map<std::string, std::string> final_category;  // item_id -> category
    std::set<std::string> vocabulary;                   // retained labels (+ sentinel when used)

    const std::string& category_of(const std::string& item_id) const;
};

/// 1 iff rating >= threshold. Throws InputError on non-finite rating.
int binarize_rating(double rating, double threshold);

/// Drops labels held by fewer than low_cut items or by more than
/// high_cut * |items| items, then gives every item its highest-frequency
/// surviving raw label (ties broken lexicographically). Items left with no
/// surviving label get the UNCATEGORIZED sentinel.
CategoryTable assign_categories(const std::vector<RawItem>& items, int low_cut, double high_cut);

struct IngestStats {
    std::size_t reviews_total = 0;
    std::size_t reviews_rejected = 0;  // unknown item references
};

/// Per-user chronologically ordered interactions with binarized labels.
/// Duplicate (user, item) pairs keep only the latest review. Reviews naming
/// unknown items are rejected, counted, and logged.
std::map<std::string, UserHistory> build_user_histories(const std::vector<RawReview>& reviews,
                                                        const Catalog& catalog, double threshold,
                                                        IngestStats* stats = nullptr);

// --- line-delimited JSON interchange ---------------------------------------

std::vector<RawItem> load_items_jsonl(const std::filesystem::path& path);
std::vector<RawReview> load_reviews_jsonl(const std::filesystem::path& path);

void save_items_jsonl(const std::filesystem::path& path, const std::vector<RawItem>& items);
void save_reviews_jsonl(const std::filesystem::path& path, const std::vector<RawReview>& reviews,
                        double threshold);

void save_categories_jsonl(const std::filesystem::path& path, const CategoryTable& table);
CategoryTable load_categories_jsonl(const std::filesystem::path& path);

void save_histories_jsonl(const std::filesystem::path& path,
                          const std::map<std::string, UserHistory>& histories);
std::map<std::string, UserHistory> load_histories_jsonl(const std::filesystem::path& path);

}  // namespace simrec::corpus
