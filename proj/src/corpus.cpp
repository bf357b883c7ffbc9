#include "simrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "simrec/log.hpp"

namespace simrec::corpus {

using nlohmann::json;

Catalog::Catalog(std::vector<RawItem> items) : items_(std::move(items)) {
    index_.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].item_id.empty()) throw InputError("catalog item with empty item_id");
        if (items_[i].name.empty())
            throw InputError("catalog item '" + items_[i].item_id + "' has empty name");
        if (!index_.emplace(items_[i].item_id, i).second)
            throw InputError("duplicate item_id in catalog: " + items_[i].item_id);
    }
}

const RawItem* Catalog::find(const std::string& item_id) const {
    auto it = index_.find(item_id);
    return it == index_.end() ? nullptr : &items_[it->second];
}

const std::string& CategoryTable::category_of(const std::string& item_id) const {
    auto it = final_category.find(item_id);
    if (it == final_category.end())
        throw InputError("item has no category assignment: " + item_id);
    return it->second;
}

int binarize_rating(double rating, double threshold) {
    if (!std::isfinite(rating)) throw InputError("non-finite rating");
    if (!std::isfinite(threshold)) throw InputError("non-finite rating threshold");
    return rating >= threshold ? 1 : 0;
}

CategoryTable assign_categories(const std::vector<RawItem>& items, int low_cut, double high_cut) {
    if (items.empty()) throw InputError("assign_categories: empty item list");
    if (low_cut < 0) throw ConfigError("assign_categories: low_cut must be >= 0");
    if (high_cut < 0.0 || high_cut > 1.0)
        throw ConfigError("assign_categories: high_cut must be in [0, 1]");

    // Item-level label frequency: a label counts once per item that lists it.
    std::map<std::string, int> freq;
    for (const auto& item : items) {
        std::set<std::string> distinct(item.raw_categories.begin(), item.raw_categories.end());
        for (const auto& c : distinct)
            if (!c.empty()) ++freq[c];
    }

    const double high_bound = high_cut * static_cast<double>(items.size());
    CategoryTable table;
    for (const auto& [label, n] : freq) {
        if (n < low_cut) continue;
        // Small slack so an exact boundary (e.g. 0.3 * 10) is retained.
        if (static_cast<double>(n) > high_bound + 1e-9) continue;
        table.vocabulary.insert(label);
    }

    for (const auto& item : items) {
        std::string best;
        int best_freq = -1;
        std::set<std::string> distinct(item.raw_categories.begin(), item.raw_categories.end());
        for (const auto& c : distinct) {
            if (!table.vocabulary.count(c)) continue;
            int f = freq.at(c);
            if (f > best_freq || (f == best_freq && c < best)) {
                best = c;
                best_freq = f;
            }
        }
        if (best.empty()) {
            best = kUncategorized;
            table.vocabulary.insert(kUncategorized);
        }
        table.final_category[item.item_id] = best;
    }
    return table;
}

std::map<std::string, UserHistory> build_user_histories(const std::vector<RawReview>& reviews,
                                                        const Catalog& catalog, double threshold,
                                                        IngestStats* stats) {
    IngestStats local;
    IngestStats& st = stats ? *stats : local;

    struct Rec {
        const RawReview* review;
        std::int64_t ts;
        std::size_t input_order;
    };
    std::map<std::string, std::vector<Rec>> by_user;
    for (std::size_t i = 0; i < reviews.size(); ++i) {
        const RawReview& r = reviews[i];
        ++st.reviews_total;
        if (!catalog.contains(r.item_id)) {
            ++st.reviews_rejected;
            Logger::instance().event(
                "review_rejected",
                {{"user_id", r.user_id}, {"item_id", r.item_id}, {"reason", "unknown_item"}},
                "warn");
            continue;
        }
        if (!std::isfinite(r.rating)) {
            ++st.reviews_rejected;
            Logger::instance().event(
                "review_rejected",
                {{"user_id", r.user_id}, {"item_id", r.item_id}, {"reason", "non_finite_rating"}},
                "warn");
            continue;
        }
        // Missing timestamps sort first; stable sort keeps their input order.
        std::int64_t ts = r.timestamp.value_or(std::numeric_limits<std::int64_t>::min());
        by_user[r.user_id].push_back(Rec{&r, ts, i});
    }

    std::map<std::string, UserHistory> out;
    for (auto& [user, recs] : by_user) {
        std::stable_sort(recs.begin(), recs.end(),
                         [](const Rec& a, const Rec& b) { return a.ts < b.ts; });
        // Latest review per (user, item) wins.
        std::map<std::string, std::size_t> last_pos;
        for (std::size_t i = 0; i < recs.size(); ++i) last_pos[recs[i].review->item_id] = i;

        UserHistory hist;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (last_pos.at(recs[i].review->item_id) != i) continue;
            Interaction it;
            it.user_id = user;
            it.item_id = recs[i].review->item_id;
            it.label = binarize_rating(recs[i].review->rating, threshold);
            it.position = static_cast<int>(hist.size());
            hist.push_back(std::move(it));
        }
        if (!hist.empty()) out.emplace(user, std::move(hist));
    }
    return out;
}

// --- JSONL ------------------------------------------------------------------

namespace {

json parse_line(std::size_t n, const std::string& line, const std::filesystem::path& path) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw InputError(path.string() + ":" + std::to_string(n) + ": invalid JSON object");
    return j;
}

}  // namespace

std::vector<RawItem> load_items_jsonl(const std::filesystem::path& path) {
    std::vector<RawItem> items;
    std::size_t rejected = 0;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = parse_line(n, line, path);
        RawItem item;
        item.item_id = j.value("item_id", "");
        item.name = j.value("name", "");
        if (item.item_id.empty() || item.name.empty()) {
            ++rejected;
            Logger::instance().event("item_rejected",
                                     {{"line", std::to_string(n)}, {"reason", "missing_fields"}},
                                     "warn");
            return;
        }
        if (j.contains("attributes"))
            for (const auto& a : j.at("attributes")) item.attributes.push_back(a.get<std::string>());
        if (j.contains("categories"))
            for (const auto& c : j.at("categories"))
                item.raw_categories.push_back(c.get<std::string>());
        items.push_back(std::move(item));
    });
    if (rejected)
        Logger::instance().event("items_rejected_total", {{"count", std::to_string(rejected)}},
                                 "warn");
    return items;
}

std::vector<RawReview> load_reviews_jsonl(const std::filesystem::path& path) {
    std::vector<RawReview> reviews;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = parse_line(n, line, path);
        RawReview r;
        r.user_id = j.value("user_id", "");
        r.item_id = j.value("item_id", "");
        if (r.user_id.empty() || r.item_id.empty())
            throw InputError(path.string() + ":" + std::to_string(n) +
                             ": review missing user_id/item_id");
        if (!j.contains("rating") || !j.at("rating").is_number())
            throw InputError(path.string() + ":" + std::to_string(n) + ": review missing rating");
        r.rating = j.at("rating").get<double>();
        r.comment = j.value("comment", "");
        if (j.contains("timestamp") && j.at("timestamp").is_number_integer())
            r.timestamp = j.at("timestamp").get<std::int64_t>();
        reviews.push_back(std::move(r));
    });
    return reviews;
}

void save_items_jsonl(const std::filesystem::path& path, const std::vector<RawItem>& items) {
    std::vector<std::string> lines;
    lines.reserve(items.size());
    for (const auto& item : items) {
        json j;
        j["item_id"] = item.item_id;
        j["name"] = item.name;
        j["attributes"] = item.attributes;
        j["categories"] = item.raw_categories;
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

void save_reviews_jsonl(const std::filesystem::path& path, const std::vector<RawReview>& reviews,
                        double threshold) {
    std::vector<std::string> lines;
    lines.reserve(reviews.size());
    for (const auto& r : reviews) {
        json j;
        j["user_id"] = r.user_id;
        j["item_id"] = r.item_id;
        j["rating"] = r.rating;
        j["label"] = binarize_rating(r.rating, threshold);
        if (!r.comment.empty()) j["comment"] = r.comment;
        if (r.timestamp) j["timestamp"] = *r.timestamp;
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

void save_categories_jsonl(const std::filesystem::path& path, const CategoryTable& table) {
    std::vector<std::string> lines;
    json header;
    header["format"] = "simrec-categories";
    header["version"] = 1;
    header["vocabulary"] = table.vocabulary;
    lines.push_back(header.dump());
    for (const auto& [item, cat] : table.final_category) {
        json j;
        j["item_id"] = item;
        j["category"] = cat;
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

CategoryTable load_categories_jsonl(const std::filesystem::path& path) {
    CategoryTable table;
    bool header_seen = false;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = parse_line(n, line, path);
        if (!header_seen) {
            if (j.value("format", "") != "simrec-categories")
                throw InputError(path.string() + ": missing category table header");
            for (const auto& v : j.at("vocabulary")) table.vocabulary.insert(v.get<std::string>());
            header_seen = true;
            return;
        }
        table.final_category[j.at("item_id").get<std::string>()] =
            j.at("category").get<std::string>();
    });
    if (!header_seen) throw InputError(path.string() + ": empty category table");
    return table;
}

void save_histories_jsonl(const std::filesystem::path& path,
                          const std::map<std::string, UserHistory>& histories) {
    std::vector<std::string> lines;
    lines.reserve(histories.size());
    for (const auto& [user, hist] : histories) {
        json steps = json::array();
        for (const auto& it : hist) steps.push_back({{"item_id", it.item_id}, {"label", it.label}});
        json j;
        j["user_id"] = user;
        j["interactions"] = std::move(steps);
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

std::map<std::string, UserHistory> load_histories_jsonl(const std::filesystem::path& path) {
    std::map<std::string, UserHistory> out;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = parse_line(n, line, path);
        std::string user = j.at("user_id").get<std::string>();
        UserHistory hist;
        for (const auto& step : j.at("interactions")) {
            Interaction it;
            it.user_id = user;
            it.item_id = step.at("item_id").get<std::string>();
            it.label = step.at("label").get<int>();
            if (it.label != 0 && it.label != 1)
                throw InputError(path.string() + ":" + std::to_string(n) + ": non-binary label");
            it.position = static_cast<int>(hist.size());
            hist.push_back(std::move(it));
        }
        out.emplace(std::move(user), std::move(hist));
    });
    return out;
}

}  // namespace simrec::corpus
