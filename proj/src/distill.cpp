#include "simrec/distill.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "simrec/http_util.hpp"
#include "simrec/log.hpp"

namespace simrec::distill {

using nlohmann::json;

// --- templates ----------------------------------------------------------------

namespace {

std::string lower_first(const std::string& s) {
    std::string out = s;
    if (!out.empty()) out[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[0])));
    return out;
}

std::string reply_block(const std::string& label, int k, bool evidence_first) {
    std::string n = std::to_string(k);
    std::string head = label + " " + n + ": [" + to_lower(label) + " " + n + "]\n";
    std::string ev = "Evidence: [evidence of " + to_lower(label) + " " + n + "]\n";
    std::string kw = "Keywords: [keywords of " + to_lower(label) + " " + n + "]\n";
    return evidence_first ? head + ev + kw : head + kw + ev;
}

}  // namespace

PromptTemplate PromptTemplate::objective(const std::string& domain_noun) {
    PromptTemplate tpl;
    tpl.kind = PromptKind::Objective;
    tpl.expected_pros = 3;
    tpl.expected_cons = 3;
    std::string noun_l = lower_first(domain_noun);
    std::string body =
        "Given a " + domain_noun +
        " named {NAME} and its characteristics, I need you to provide pros and cons, "
        "corresponding evidence and keywords from a customer perspective. " +
        domain_noun + " has the following attributes: {ATTRIBUTES}. Categories of the " + noun_l +
        " include {CATEGORIES}. Reasons, keywords, and evidence should be concise and "
        "reasonable. Keywords should appear positive or negative. Evidence should refer to the "
        "information given. Strictly follow the reply format, fill [], do not say anything "
        "else:\n";
    for (int k = 1; k <= 3; ++k) body += reply_block("Pros", k, /*evidence_first=*/true);
    for (int k = 1; k <= 3; ++k) body += reply_block("Cons", k, /*evidence_first=*/true);
    tpl.body = std::move(body);
    return tpl;
}

PromptTemplate PromptTemplate::subjective(int label, const std::string& domain_noun) {
    PromptTemplate tpl;
    tpl.kind = label == 1 ? PromptKind::SubjectivePositive : PromptKind::SubjectiveNegative;
    tpl.expected_pros = label == 1 ? 3 : 0;
    tpl.expected_cons = label == 1 ? 0 : 3;
    const std::string block = label == 1 ? "Pros" : "Cons";
    std::string noun_l = lower_first(domain_noun);
    std::string body =
        "A customer rates {RATING} to the " + noun_l +
        " with comments: {COMMENTS} The information of this " + noun_l +
        " is: name: {NAME}, attributes: {ATTRIBUTES}, categories: {CATEGORIES}.\n"
        "I need you to provide " +
        block +
        ", corresponding evidence and keywords of the rating based on given information. "
        "Evidence should refer to the information given. Strictly follow the reply format, "
        "fill [], do not say anything else:\n";
    for (int k = 1; k <= 3; ++k) body += reply_block(block, k, /*evidence_first=*/false);
    tpl.body = std::move(body);
    return tpl;
}

namespace {

const std::vector<std::string> kPlaceholders = {"{NAME}", "{ATTRIBUTES}", "{CATEGORIES}",
                                                "{RATING}", "{COMMENTS}"};

std::string substitute(std::string body, const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        std::size_t pos = 0;
        while ((pos = body.find(key, pos)) != std::string::npos) {
            body.replace(pos, key.size(), value);
            pos += value.size();
        }
    }
    for (const auto& p : kPlaceholders) {
        if (body.find(p) != std::string::npos)
            throw ConfigError("prompt template: unsubstituted placeholder " + p);
    }
    return body;
}

std::string attributes_text(const corpus::RawItem& item) {
    if (item.attributes.empty()) return "none provided";
    return join(item.attributes, ", ");
}

std::string format_rating(double rating) {
    // Whole numbers render without a trailing ".0" ("rates 4 to the ...").
    if (rating == static_cast<double>(static_cast<long long>(rating)))
        return std::to_string(static_cast<long long>(rating));
    json j = rating;
    return j.dump();
}

}  // namespace

std::string render_objective_prompt(const PromptTemplate& tpl, const corpus::RawItem& item,
                                    const std::string& category) {
    if (tpl.kind != PromptKind::Objective)
        throw ConfigError("render_objective_prompt: wrong template kind");
    if (item.name.empty()) throw ConfigError("render_objective_prompt: item has no name");
    if (category.empty()) throw ConfigError("render_objective_prompt: item has no category");
    return substitute(tpl.body, {{"{NAME}", item.name},
                                 {"{ATTRIBUTES}", attributes_text(item)},
                                 {"{CATEGORIES}", category}});
}

std::string render_subjective_prompt(const PromptTemplate& tpl, const corpus::RawItem& item,
                                     const std::string& category,
                                     const corpus::RawReview& review) {
    if (tpl.kind == PromptKind::Objective)
        throw ConfigError("render_subjective_prompt: wrong template kind");
    if (review.item_id != item.item_id)
        throw ConfigError("render_subjective_prompt: review does not belong to item");
    std::string comments = trim(review.comment);
    if (comments.empty()) comments = "(no comment)";
    return substitute(tpl.body, {{"{NAME}", item.name},
                                 {"{ATTRIBUTES}", attributes_text(item)},
                                 {"{CATEGORIES}", category},
                                 {"{RATING}", format_rating(review.rating)},
                                 {"{COMMENTS}", comments}});
}

// --- response parsing ----------------------------------------------------------

namespace {

// Matches "pros 3:" / "Cons 1." headers; returns label length consumed and the
// payload after the separator, or nullopt.
struct BlockHeader {
    Polarity polarity;
    std::string rest;
};

std::optional<BlockHeader> match_block_header(const std::string& line) {
    std::string t = trim(line);
    Polarity pol;
    std::size_t i = 0;
    if (starts_with_icase(t, "pros")) {
        pol = Polarity::Pro;
        i = 4;
    } else if (starts_with_icase(t, "cons")) {
        pol = Polarity::Con;
        i = 4;
    } else {
        return std::nullopt;
    }
    while (i < t.size() && std::isspace(static_cast<unsigned char>(t[i]))) ++i;
    std::size_t digits = 0;
    while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) {
        ++i;
        ++digits;
    }
    if (digits == 0) return std::nullopt;
    while (i < t.size() && std::isspace(static_cast<unsigned char>(t[i]))) ++i;
    if (i >= t.size() || (t[i] != ':' && t[i] != '.')) return std::nullopt;
    ++i;
    return BlockHeader{pol, trim(t.substr(i))};
}

std::optional<std::string> match_labeled_line(const std::string& line, const char* label) {
    std::string t = trim(line);
    if (!starts_with_icase(t, label)) return std::nullopt;
    std::size_t i = std::string(label).size();
    while (i < t.size() && std::isspace(static_cast<unsigned char>(t[i]))) ++i;
    if (i >= t.size() || t[i] != ':') return std::nullopt;
    return trim(t.substr(i + 1));
}

std::string strip_outer_brackets(const std::string& s) {
    std::string t = trim(s);
    if (t.size() >= 2 && t.front() == '[' && t.back() == ']')
        return trim(t.substr(1, t.size() - 2));
    return t;
}

std::vector<std::string> split_keywords(const std::string& payload) {
    std::vector<std::string> out;
    for (const auto& piece : split_any(strip_outer_brackets(payload), ",;")) {
        std::string kw = normalize_keyword(piece);
        if (!kw.empty()) out.push_back(std::move(kw));
    }
    return out;
}

}  // namespace

bool operator==(const DistilledReason& a, const DistilledReason& b) {
    return a.polarity == b.polarity && a.reason == b.reason && a.evidence == b.evidence &&
           a.keywords == b.keywords;
}

std::vector<DistilledReason> parse_distillation_response(const std::string& text) {
    struct PendingBlock {
        DistilledReason reason;
        bool has_keywords = false;
        bool has_evidence = false;
    };

    std::vector<DistilledReason> out;
    std::optional<PendingBlock> current;

    auto flush = [&]() {
        if (current && !current->reason.keywords.empty())
            out.push_back(std::move(current->reason));
        current.reset();
    };

    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        std::string line =
            end == std::string::npos ? text.substr(start) : text.substr(start, end - start);
        start = end == std::string::npos ? text.size() + 1 : end + 1;

        if (auto header = match_block_header(line)) {
            flush();
            PendingBlock block;
            block.reason.polarity = header->polarity;
            block.reason.reason = strip_outer_brackets(header->rest);
            current = std::move(block);
            continue;
        }
        if (!current) continue;
        if (auto kw = match_labeled_line(line, "keywords")) {
            if (!current->has_keywords) {
                current->reason.keywords = split_keywords(*kw);
                current->has_keywords = true;
            }
            continue;
        }
        if (auto ev = match_labeled_line(line, "evidence")) {
            if (!current->has_evidence) {
                current->reason.evidence = strip_outer_brackets(*ev);
                current->has_evidence = true;
            }
            continue;
        }
    }
    flush();

    if (out.empty()) throw MalformedResponse("no pros/cons blocks recognized in LLM response");
    return out;
}

// --- mock backend ---------------------------------------------------------------

namespace {

// Canonical 6-slot layout: pros occupy global block indices 0-2, cons 3-5,
// so objective and subjective responses for the same item agree keyword-wise.
std::string mock_keyword(std::uint64_t seed, const std::string& item_id, int block_index, int j) {
    std::uint64_t h = splitmix64(mix_seed(seed, fnv1a(item_id),
                                          static_cast<std::uint64_t>(block_index * 8 + j)));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "kw%06llx", static_cast<unsigned long long>(h & 0xffffff));
    return buf;
}

std::string mock_block(std::uint64_t seed, const std::string& item_id, const char* label, int k,
                       int global_index) {
    std::string kws =
        mock_keyword(seed, item_id, global_index, 0) + ", " +
        mock_keyword(seed, item_id, global_index, 1);
    std::string n = std::to_string(k);
    return std::string(label) + " " + n + ": [synthetic " + to_lower(label) + " " + n + "]\n" +
           "Evidence: [derived from the listed attributes]\n" + "Keywords: [" + kws + "]\n";
}

}  // namespace

std::string MockLlm::complete(const LlmRequest& request) {
    std::string out;
    if (request.kind == PromptKind::Objective || request.kind == PromptKind::SubjectivePositive) {
        for (int k = 1; k <= 3; ++k) out += mock_block(seed_, request.item_id, "Pros", k, k - 1);
    }
    if (request.kind == PromptKind::Objective || request.kind == PromptKind::SubjectiveNegative) {
        for (int k = 1; k <= 3; ++k) out += mock_block(seed_, request.item_id, "Cons", k, k + 2);
    }
    return out;
}

// --- HTTP backend -----------------------------------------------------------------

HttpLlmConfig http_llm_config_from_env() {
    HttpLlmConfig cfg;
    if (const char* url = std::getenv("SIMREC_LLM_URL")) cfg.url = url;
    if (const char* model = std::getenv("SIMREC_LLM_MODEL")) cfg.model = model;
    if (const char* key = std::getenv("SIMREC_LLM_KEY")) cfg.api_key = key;
    return cfg;
}

namespace {

void split_url(const std::string& url, std::string& base, std::string& path) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL missing scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        base = url;
        path = "/";
    } else {
        base = url.substr(0, path_start);
        path = url.substr(path_start);
    }
}

}  // namespace

std::string HttpLlm::complete(const LlmRequest& request) {
    json body;
    body["model"] = config_.model;
    body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt}}});
    body["temperature"] = config_.temperature;
    std::string raw = http_post_json(host_, path_, config_.api_key, body.dump(),
                                     config_.connect_timeout_s, config_.read_timeout_s);
    json reply = json::parse(raw, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty() ||
        !reply["choices"][0].contains("message"))
        throw BackendError("LLM endpoint returned unexpected payload");
    return reply["choices"][0]["message"].value("content", "");
}

HttpLlm::HttpLlm(HttpLlmConfig config) : config_(std::move(config)) {
    if (config_.url.empty())
        throw ConfigError("LLM endpoint URL not configured (SIMREC_LLM_URL)");
    split_url(config_.url, host_, path_);
}

std::unique_ptr<LlmClient> make_llm_client(const std::string& selector) {
    if (starts_with_icase(selector, "mock:")) {
        std::uint64_t seed = 0;
        try {
            seed = std::stoull(selector.substr(5));
        } catch (const std::exception&) {
            throw ConfigError("invalid mock LLM seed in selector: " + selector);
        }
        return std::make_unique<MockLlm>(seed);
    }
    if (selector == "http") return std::make_unique<HttpLlm>(http_llm_config_from_env());
    throw ConfigError("unknown LLM backend selector: " + selector +
                      " (expected mock:<seed> or http)");
}

// --- distillation pipeline ----------------------------------------------------------

namespace {

// Runs one prompt with the retry budget. Returns parsed blocks, an empty list
// after persistent format failures, or nullopt on transport failure.
std::optional<std::vector<DistilledReason>> run_prompt(LlmClient& llm, const LlmRequest& request,
                                                       int retries) {
    for (int attempt = 0; attempt <= retries; ++attempt) {
        try {
            return parse_distillation_response(llm.complete(request));
        } catch (const MalformedResponse&) {
            Logger::instance().event("llm_malformed_response",
                                     {{"item_id", request.item_id},
                                      {"attempt", std::to_string(attempt)}},
                                     "warn");
        } catch (const BackendError& e) {
            Logger::instance().event("llm_transport_failure",
                                     {{"item_id", request.item_id},
                                      {"attempt", std::to_string(attempt)},
                                      {"message", e.what()}},
                                     "warn");
            if (attempt == retries) return std::nullopt;
        }
    }
    return std::vector<DistilledReason>{};
}

void absorb(ItemProfile& profile, const std::vector<DistilledReason>& blocks, bool objective) {
    for (const auto& block : blocks) {
        auto& target = block.polarity == Polarity::Pro ? profile.pros : profile.cons;
        auto& sources =
            block.polarity == Polarity::Pro ? profile.pros_sources : profile.cons_sources;
        for (const auto& kw : block.keywords) {
            target.insert(kw);
            if (objective)
                ++sources[kw].objective;
            else
                ++sources[kw].subjective;
        }
    }
}

std::vector<const corpus::RawReview*> pick_reviews(const std::vector<corpus::RawReview>& reviews,
                                                   int cap) {
    std::vector<const corpus::RawReview*> ptrs;
    ptrs.reserve(reviews.size());
    for (const auto& r : reviews) ptrs.push_back(&r);
    // Most recent first; reviews without a timestamp go last.
    std::stable_sort(ptrs.begin(), ptrs.end(),
                     [](const corpus::RawReview* a, const corpus::RawReview* b) {
                         auto ta = a->timestamp.value_or(std::numeric_limits<std::int64_t>::min());
                         auto tb = b->timestamp.value_or(std::numeric_limits<std::int64_t>::min());
                         return ta > tb;
                     });
    if (cap >= 0 && ptrs.size() > static_cast<std::size_t>(cap)) ptrs.resize(cap);
    return ptrs;
}

}  // namespace

ItemProfile distill_item(const corpus::RawItem& item, const std::string& category,
                         const std::vector<corpus::RawReview>& reviews, LlmClient& llm,
                         const DistillOptions& opts) {
    if (opts.retries < 0) throw ConfigError("distill_item: retries must be >= 0");

    ItemProfile profile;
    profile.item_id = item.item_id;
    profile.final_category = category;

    PromptTemplate obj_tpl = PromptTemplate::objective(opts.domain_noun);
    LlmRequest obj_req{render_objective_prompt(obj_tpl, item, category), item.item_id,
                       PromptKind::Objective};
    auto obj_blocks = run_prompt(llm, obj_req, opts.retries);
    if (!obj_blocks) {
        profile.distillation_failed = true;
        return profile;
    }
    absorb(profile, *obj_blocks, /*objective=*/true);

    for (const corpus::RawReview* review : pick_reviews(reviews, opts.review_cap)) {
        int label = corpus::binarize_rating(review->rating, opts.rating_threshold);
        PromptTemplate sub_tpl = PromptTemplate::subjective(label, opts.domain_noun);
        LlmRequest sub_req{render_subjective_prompt(sub_tpl, item, category, *review),
                           item.item_id,
                           label == 1 ? PromptKind::SubjectivePositive
                                      : PromptKind::SubjectiveNegative};
        auto sub_blocks = run_prompt(llm, sub_req, opts.retries);
        if (!sub_blocks) {
            profile.distillation_failed = true;
            profile.pros.clear();
            profile.cons.clear();
            profile.pros_sources.clear();
            profile.cons_sources.clear();
            return profile;
        }
        absorb(profile, *sub_blocks, /*objective=*/false);
    }
    return profile;
}

std::vector<ItemProfile> distill_catalog(const corpus::Catalog& catalog,
                                         const corpus::CategoryTable& categories,
                                         const std::vector<corpus::RawReview>& reviews,
                                         LlmClient& llm, const DistillOptions& opts) {
    std::map<std::string, std::vector<corpus::RawReview>> reviews_by_item;
    for (const auto& r : reviews) reviews_by_item[r.item_id].push_back(r);
    static const std::vector<corpus::RawReview> kNoReviews;

    const std::size_t n = catalog.size();
    std::vector<ItemProfile> profiles(n);
    std::atomic<std::size_t> cursor{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        while (true) {
            std::size_t i = cursor.fetch_add(1);
            if (i >= n || failed.load()) break;
            const auto& item = catalog.items()[i];
            try {
                auto it = reviews_by_item.find(item.item_id);
                const auto& item_reviews = it == reviews_by_item.end() ? kNoReviews : it->second;
                profiles[i] = distill_item(item, categories.category_of(item.item_id),
                                           item_reviews, llm, opts);
            } catch (const std::exception& e) {
                std::lock_guard lock(error_mutex);
                if (!failed.exchange(true)) first_error = e.what();
            }
        }
    };

    int threads = std::max(1, opts.concurrency);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw Error("distillation aborted: " + first_error);
    return profiles;
}

std::vector<ItemProfile> filter_keywords(const std::vector<ItemProfile>& profiles, int low_cut,
                                         double high_cut) {
    if (profiles.empty()) throw InputError("filter_keywords: empty profile list");
    if (low_cut < 0) throw ConfigError("filter_keywords: low_cut must be >= 0");
    if (high_cut < 0.0 || high_cut > 1.0)
        throw ConfigError("filter_keywords: high_cut must be in [0, 1]");

    std::map<std::string, int> pro_df, con_df;
    for (const auto& p : profiles) {
        for (const auto& kw : p.pros) ++pro_df[kw];
        for (const auto& kw : p.cons) ++con_df[kw];
    }
    const double high_bound = high_cut * static_cast<double>(profiles.size());
    auto keep = [&](const std::map<std::string, int>& df, const std::string& kw) {
        int n = df.at(kw);
        return n >= low_cut && static_cast<double>(n) <= high_bound + 1e-9;
    };

    std::vector<ItemProfile> out;
    out.reserve(profiles.size());
    for (const auto& p : profiles) {
        ItemProfile f = p;
        f.pros.clear();
        f.cons.clear();
        f.pros_sources.clear();
        f.cons_sources.clear();
        for (const auto& kw : p.pros)
            if (keep(pro_df, kw)) {
                f.pros.insert(kw);
                if (auto it = p.pros_sources.find(kw); it != p.pros_sources.end())
                    f.pros_sources[kw] = it->second;
            }
        for (const auto& kw : p.cons)
            if (keep(con_df, kw)) {
                f.cons.insert(kw);
                if (auto it = p.cons_sources.find(kw); it != p.cons_sources.end())
                    f.cons_sources[kw] = it->second;
            }
        out.push_back(std::move(f));
    }
    return out;
}

// --- profile store --------------------------------------------------------------------

ProfileStore::ProfileStore(std::vector<ItemProfile> profiles) : profiles_(std::move(profiles)) {
    for (std::size_t i = 0; i < profiles_.size(); ++i) index_[profiles_[i].item_id] = i;
}

const ItemProfile* ProfileStore::find(const std::string& item_id) const {
    auto it = index_.find(item_id);
    return it == index_.end() ? nullptr : &profiles_[it->second];
}

namespace {

json sources_to_json(const std::map<std::string, Provenance>& sources) {
    json j = json::object();
    for (const auto& [kw, prov] : sources) j[kw] = {{"obj", prov.objective}, {"sub", prov.subjective}};
    return j;
}

std::map<std::string, Provenance> sources_from_json(const json& j) {
    std::map<std::string, Provenance> out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out[it.key()] = Provenance{it.value().value("obj", 0), it.value().value("sub", 0)};
    return out;
}

}  // namespace

void save_profiles_jsonl(const std::filesystem::path& path,
                         const std::vector<ItemProfile>& profiles) {
    std::vector<std::string> lines;
    lines.reserve(profiles.size());
    for (const auto& p : profiles) {
        json j;
        j["item_id"] = p.item_id;
        j["category"] = p.final_category;
        j["pros"] = p.pros;
        j["cons"] = p.cons;
        j["sources"] = {{"pros", sources_to_json(p.pros_sources)},
                        {"cons", sources_to_json(p.cons_sources)}};
        j["distillation_failed"] = p.distillation_failed;
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

std::vector<ItemProfile> load_profiles_jsonl(const std::filesystem::path& path) {
    std::vector<ItemProfile> out;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw InputError(path.string() + ":" + std::to_string(n) + ": invalid JSON");
        ItemProfile p;
        p.item_id = j.at("item_id").get<std::string>();
        p.final_category = j.value("category", "");
        for (const auto& kw : j.value("pros", json::array())) p.pros.insert(kw.get<std::string>());
        for (const auto& kw : j.value("cons", json::array())) p.cons.insert(kw.get<std::string>());
        if (j.contains("sources")) {
            p.pros_sources = sources_from_json(j["sources"].value("pros", json::object()));
            p.cons_sources = sources_from_json(j["sources"].value("cons", json::object()));
        }
        p.distillation_failed = j.value("distillation_failed", false);
        out.push_back(std::move(p));
    });
    return out;
}

}  // namespace simrec::distill
