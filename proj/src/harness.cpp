#include "simrec/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "simrec/log.hpp"

namespace simrec::harness {

using nlohmann::json;

// --- policies ------------------------------------------------------------------

std::string GreedyDqnPolicy::act(const sim::EnvInterface&, const sim::EnvState& state) {
    return agent_.act_greedy(state);
}

std::string RandomPolicy::act(const sim::EnvInterface& env, const sim::EnvState& state) {
    std::vector<const std::string*> legal;
    for (const auto& item : env.action_items()) {
        if (!env.config().allow_repeats && state.recommended.count(item)) continue;
        legal.push_back(&item);
    }
    if (legal.empty()) throw Error("RandomPolicy: no legal action remains");
    std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
    return *legal[pick(rng_)];
}

// --- evaluation ------------------------------------------------------------------

EvalReport metrics_from_traces(const std::vector<sim::EpisodeTrace>& traces) {
    EvalReport report;
    report.episodes = static_cast<int>(traces.size());
    if (traces.empty()) return report;

    double total = 0.0;
    double liking_sum = 0.0;
    for (const auto& trace : traces) {
        total += trace.total_reward();
        const std::size_t window = std::min<std::size_t>(10, trace.steps.size());
        if (window < 10) report.short_horizon = true;
        int liked = 0;
        for (std::size_t i = 0; i < window; ++i) liked += trace.steps[i].verdict.reward;
        if (window > 0) liking_sum += static_cast<double>(liked) / static_cast<double>(window);
    }
    report.total_reward = total;
    report.avg_reward = total / static_cast<double>(traces.size());
    report.liking_pct = liking_sum / static_cast<double>(traces.size());
    return report;
}

namespace {

std::string digest_env(const sim::EnvInterface& env, int episodes, std::uint64_t seed) {
    const sim::EnvConfig& c = env.config();
    std::ostringstream ss;
    ss << "horizon=" << c.horizon << ";gamma=" << c.gamma << ";repeats=" << c.allow_repeats
       << ";actions=" << env.action_items().size() << ";env_seed=" << c.seed
       << ";episodes=" << episodes << ";eval_seed=" << seed;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
    return buf;
}

}  // namespace

EvalRun evaluate(Policy& policy, const sim::EnvInterface& env, int episodes, std::uint64_t seed) {
    if (episodes <= 0) throw ConfigError("evaluate: episodes must be positive");
    std::vector<std::string> users = env.user_ids();
    if (users.empty()) throw ConfigError("evaluate: environment has no users");
    std::mt19937_64 rng(mix_seed(seed, 0xe7a1ull));

    EvalRun run;
    for (int ep = 0; ep < episodes; ++ep) {
        std::uniform_int_distribution<std::size_t> pick_user(0, users.size() - 1);
        sim::EpisodeTrace trace;
        trace.episode = ep;
        trace.user_id = users[pick_user(rng)];
        sim::EnvState state = env.reset(trace.user_id);
        bool done = false;
        while (!done) {
            std::string action = policy.act(env, state);
            sim::StepOutcome outcome = env.step(state, action);
            sim::StepRecord rec;
            rec.step = state.step_index;
            rec.item_id = action;
            rec.category = env.item_category(action);
            rec.verdict = outcome.verdict;
            trace.steps.push_back(std::move(rec));
            state = std::move(outcome.next);
            done = outcome.done;
        }
        run.traces.push_back(std::move(trace));
    }

    run.report = metrics_from_traces(run.traces);
    run.report.seed = seed;
    run.report.config_digest = digest_env(env, episodes, seed);

    // The report must be reproducible from the traces alone.
    EvalReport check = metrics_from_traces(run.traces);
    if (check.avg_reward != run.report.avg_reward ||
        check.total_reward != run.report.total_reward ||
        check.liking_pct != run.report.liking_pct)
        throw InternalError("evaluate: report does not match its own traces");
    return run;
}

void save_report_json(const std::filesystem::path& path, const EvalReport& report) {
    json j;
    j["avg_reward"] = report.avg_reward;
    j["total_reward"] = report.total_reward;
    j["liking_pct"] = report.liking_pct;
    j["episodes"] = report.episodes;
    j["seed"] = report.seed;
    j["config_digest"] = report.config_digest;
    j["short_horizon"] = report.short_horizon;
    write_lines(path, {j.dump()});
}

std::string report_text(const EvalReport& report) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "episodes      %d\n"
                  "avg reward    %.4f\n"
                  "total reward  %.4f\n"
                  "liking%%       %.2f%%%s\n"
                  "seed          %llu\n"
                  "config        %s\n",
                  report.episodes, report.avg_reward, report.total_reward,
                  report.liking_pct * 100.0,
                  report.short_horizon ? "  (window truncated: horizon < 10)" : "",
                  static_cast<unsigned long long>(report.seed), report.config_digest.c_str());
    return buf;
}

// --- synthetic world ----------------------------------------------------------------

namespace {

std::string cat_name(int c) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "cat%02d", c);
    return buf;
}

std::string pro_keyword(int cat, int j) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "p-c%02d-%02d", cat, j);
    return buf;
}

std::string con_keyword(int j) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "n-%03d", j);
    return buf;
}

template <typename T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool, int k,
                                          std::mt19937_64& rng) {
    if (k > static_cast<int>(pool.size()))
        throw ConfigError("generate_world: sample size exceeds pool size");
    std::vector<T> copy = pool;
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, copy.size() - 1);
        std::swap(copy[i], copy[pick(rng)]);
    }
    copy.resize(k);
    return copy;
}

}  // namespace

bool SyntheticWorld::likes(const std::string& user_id, const std::string& item_id) const {
    const auto plant_it = plants.find(user_id);
    if (plant_it == plants.end()) throw InputError("unknown world user: " + user_id);
    if (categories.category_of(item_id) != plant_it->second.favorite_category) return false;
    for (const auto& p : profiles) {
        if (p.item_id != item_id) continue;
        for (const auto& kw : p.pros)
            if (plant_it->second.affinity.count(kw)) return true;
        return false;
    }
    throw InputError("unknown world item: " + item_id);
}

SyntheticWorld generate_world(const WorldSpec& spec) {
    if (spec.n_users <= 0 || spec.n_items <= 0 || spec.n_categories <= 0)
        throw ConfigError("generate_world: sizes must be positive");
    if (spec.pros_per_item > spec.pros_pool_per_category)
        throw ConfigError("generate_world: pros_per_item exceeds the per-category pool");
    if (spec.cons_per_item > spec.cons_pool)
        throw ConfigError("generate_world: cons_per_item exceeds the cons pool");
    if (spec.affinity_size > spec.pros_pool_per_category)
        throw ConfigError("generate_world: affinity_size exceeds the per-category pool");
    if (spec.history_len >= spec.n_items)
        throw ConfigError("generate_world: history_len must be below n_items");

    SyntheticWorld world;
    world.spec = spec;
    std::mt19937_64 rng(mix_seed(spec.seed, 0x5eedull));

    std::vector<std::vector<std::string>> pro_pools(spec.n_categories);
    for (int c = 0; c < spec.n_categories; ++c)
        for (int j = 0; j < spec.pros_pool_per_category; ++j)
            pro_pools[c].push_back(pro_keyword(c, j));
    std::vector<std::string> con_pool;
    for (int j = 0; j < spec.cons_pool; ++j) con_pool.push_back(con_keyword(j));

    static const char* kAdjectives[] = {"cozy", "modern", "classic", "bold",
                                        "quiet", "vivid",  "rustic",  "sleek"};

    std::vector<std::vector<std::string>> items_by_cat(spec.n_categories);
    std::uniform_int_distribution<int> pick_cat(0, spec.n_categories - 1);
    for (int i = 0; i < spec.n_items; ++i) {
        corpus::RawItem item;
        char id[24];
        std::snprintf(id, sizeof(id), "item%04d", i);
        item.item_id = id;
        item.name = "Synthetic Item " + std::to_string(i);
        int cat = pick_cat(rng);
        item.raw_categories = {cat_name(cat)};
        item.attributes = {kAdjectives[rng() % 8], kAdjectives[rng() % 8]};

        distill::ItemProfile profile;
        profile.item_id = item.item_id;
        profile.final_category = cat_name(cat);
        for (const auto& kw : sample_without_replacement(pro_pools[cat], spec.pros_per_item, rng)) {
            profile.pros.insert(kw);
            profile.pros_sources[kw].objective = 1;
        }
        for (const auto& kw : sample_without_replacement(con_pool, spec.cons_per_item, rng)) {
            profile.cons.insert(kw);
            profile.cons_sources[kw].objective = 1;
        }

        world.categories.final_category[item.item_id] = cat_name(cat);
        items_by_cat[cat].push_back(item.item_id);
        world.items.push_back(std::move(item));
        world.profiles.push_back(std::move(profile));
    }
    for (int c = 0; c < spec.n_categories; ++c) world.categories.vocabulary.insert(cat_name(c));

    distill::ProfileStore profile_store(world.profiles);
    std::vector<std::string> all_items;
    for (const auto& item : world.items) all_items.push_back(item.item_id);

    std::int64_t ts_base = 1600000000;
    for (int u = 0; u < spec.n_users; ++u) {
        char id[24];
        std::snprintf(id, sizeof(id), "user%03d", u);
        std::string user_id = id;

        UserPlant plant;
        int fav = pick_cat(rng);
        // A favorite category with no items would make the plant vacuous.
        while (items_by_cat[fav].empty()) fav = pick_cat(rng);
        plant.favorite_category = cat_name(fav);
        for (const auto& kw :
             sample_without_replacement(pro_pools[fav], spec.affinity_size, rng))
            plant.affinity.insert(kw);

        corpus::UserHistory hist;
        std::set<std::string> used;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        while (static_cast<int>(hist.size()) < spec.history_len) {
            const std::vector<std::string>& pool =
                unit(rng) < spec.favorite_mix ? items_by_cat[fav] : all_items;
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            const std::string& item_id = pool[pick(rng)];
            if (used.count(item_id)) continue;
            used.insert(item_id);

            const distill::ItemProfile* profile = profile_store.find(item_id);
            bool liked = world.categories.category_of(item_id) == plant.favorite_category;
            if (liked) {
                liked = false;
                for (const auto& kw : profile->pros)
                    if (plant.affinity.count(kw)) {
                        liked = true;
                        break;
                    }
            }

            corpus::Interaction it;
            it.user_id = user_id;
            it.item_id = item_id;
            it.label = liked ? 1 : 0;
            it.position = static_cast<int>(hist.size());
            hist.push_back(it);

            corpus::RawReview review;
            review.user_id = user_id;
            review.item_id = item_id;
            review.rating = liked ? 4.0 : 2.0;
            review.timestamp = ts_base + static_cast<std::int64_t>(hist.size());
            review.comment = liked ? "enjoyed the " + *profile->pros.begin()
                                   : "put off by the " + *profile->cons.begin();
            world.reviews.push_back(std::move(review));
        }
        world.plants.emplace(user_id, std::move(plant));
        world.histories.emplace(std::move(user_id), std::move(hist));
    }
    return world;
}

void save_world(const std::filesystem::path& dir, const SyntheticWorld& world) {
    std::filesystem::create_directories(dir);
    corpus::save_items_jsonl(dir / "items.jsonl", world.items);
    corpus::save_reviews_jsonl(dir / "reviews.jsonl", world.reviews, 3.0);
    corpus::save_categories_jsonl(dir / "categories.jsonl", world.categories);
    corpus::save_histories_jsonl(dir / "histories.jsonl", world.histories);
    distill::save_profiles_jsonl(dir / "profiles.jsonl", world.profiles);

    json users = json::object();
    for (const auto& [user, plant] : world.plants)
        users[user] = {{"favorite_category", plant.favorite_category},
                       {"affinity", plant.affinity}};
    json j;
    j["format"] = "simrec-world";
    j["version"] = 1;
    j["spec"] = {{"n_users", world.spec.n_users},
                 {"n_items", world.spec.n_items},
                 {"n_categories", world.spec.n_categories},
                 {"pros_per_item", world.spec.pros_per_item},
                 {"cons_per_item", world.spec.cons_per_item},
                 {"pros_pool_per_category", world.spec.pros_pool_per_category},
                 {"cons_pool", world.spec.cons_pool},
                 {"affinity_size", world.spec.affinity_size},
                 {"history_len", world.spec.history_len},
                 {"favorite_mix", world.spec.favorite_mix},
                 {"seed", world.spec.seed}};
    j["users"] = std::move(users);
    write_lines(dir / "world.json", {j.dump()});
}

// --- trace rendering -----------------------------------------------------------------

namespace {

std::string matches_text(const std::vector<logical::MatchedKeyword>& matches) {
    std::vector<std::string> parts;
    parts.reserve(matches.size());
    for (const auto& m : matches) parts.push_back(m.history_item + ":" + m.keyword);
    return join(parts, "|");
}

std::string beta_text(const std::optional<double>& beta, const char* fmt) {
    if (!beta) return "-";
    char buf[40];
    std::snprintf(buf, sizeof(buf), fmt, *beta);
    return buf;
}

}  // namespace

std::string render_trace_table(const sim::EpisodeTrace& trace) {
    const std::vector<std::string> headers = {"step",  "item",  "category", "matched pros",
                                              "matched cons", "a+",   "a-",
                                              "b+",    "b-",    "sta",      "votes",
                                              "R"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : trace.steps) {
        const auto& v = s.verdict;
        char sta[24];
        std::snprintf(sta, sizeof(sta), "%.3f", v.sta_score);
        std::string votes = std::to_string(v.vote_mat) + "/" + std::to_string(v.vote_sim) + "/" +
                            std::to_string(v.vote_sta);
        rows.push_back({std::to_string(s.step), s.item_id, s.category,
                        matches_text(v.match.matched_pros), matches_text(v.match.matched_cons),
                        std::to_string(v.match.alpha_pos), std::to_string(v.match.alpha_neg),
                        beta_text(v.similarity.beta_pos, "%.3f"),
                        beta_text(v.similarity.beta_neg, "%.3f"), sta, votes,
                        std::to_string(v.reward)});
    }

    std::vector<std::size_t> widths(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) widths[c] = headers[c].size();
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());

    std::ostringstream out;
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << row[c] << std::string(widths[c] - row[c].size(), ' ');
            out << (c + 1 < row.size() ? "  " : "");
        }
        out << '\n';
    };
    emit_row(headers);
    std::size_t total = 0;
    for (std::size_t wc : widths) total += wc + 2;
    out << std::string(total > 2 ? total - 2 : total, '-') << '\n';
    for (const auto& row : rows) emit_row(row);
    return out.str();
}

std::string render_trace_csv(const sim::EpisodeTrace& trace) {
    std::ostringstream out;
    out << "step,item_id,category,vote_mat,vote_sim,vote_sta,reward,alpha_pos,alpha_neg,"
           "beta_pos,beta_neg,sta_score,matched_pros,matched_cons\n";
    char buf[64];
    for (const auto& s : trace.steps) {
        const auto& v = s.verdict;
        out << s.step << ',' << s.item_id << ',' << s.category << ',' << v.vote_mat << ','
            << v.vote_sim << ',' << v.vote_sta << ',' << v.reward << ',' << v.match.alpha_pos
            << ',' << v.match.alpha_neg << ',' << beta_text(v.similarity.beta_pos, "%.17g") << ','
            << beta_text(v.similarity.beta_neg, "%.17g") << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", v.sta_score);
        out << buf << ',' << matches_text(v.match.matched_pros) << ','
            << matches_text(v.match.matched_cons) << '\n';
    }
    return out.str();
}

}  // namespace simrec::harness
