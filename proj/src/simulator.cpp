#include "simrec/simulator.hpp"

#include <istream>
#include <ostream>

#include <json.hpp>

namespace simrec::sim {

using nlohmann::json;

int ensemble_reward(int vote_mat, int vote_sim, int vote_sta) {
    for (int v : {vote_mat, vote_sim, vote_sta})
        if (v != 0 && v != 1) throw InputError("ensemble_reward: vote outside {0,1}");
    return vote_mat + vote_sim + vote_sta >= 2 ? 1 : 0;
}

Environment::Environment(Stores stores, std::map<std::string, corpus::UserHistory> seed_histories,
                         EnvConfig config)
    : stores_(stores), seed_histories_(std::move(seed_histories)), config_(std::move(config)) {
    if (!stores_.catalog || !stores_.categories || !stores_.profiles || !stores_.embeddings ||
        !stores_.sta_model)
        throw ConfigError("Environment: all stores must be provided");
    if (config_.horizon < 1) throw ConfigError("Environment: horizon must be >= 1");
    if (config_.gamma < 0.0 || config_.gamma > 1.0)
        throw ConfigError("Environment: gamma must be in [0, 1]");

    if (!config_.action_items.empty()) {
        actions_ = config_.action_items;
    } else {
        for (const auto& item : stores_.catalog->items()) actions_.push_back(item.item_id);
        if (config_.action_cap > 0 &&
            actions_.size() > static_cast<std::size_t>(config_.action_cap))
            actions_.resize(config_.action_cap);
    }
    if (actions_.empty()) throw ConfigError("Environment: empty action space");
    for (const auto& a : actions_) {
        if (!stores_.catalog->contains(a))
            throw ConfigError("Environment: action item not in catalog: " + a);
        action_set_.insert(a);
    }
}

std::vector<std::string> Environment::user_ids() const {
    std::vector<std::string> out;
    out.reserve(seed_histories_.size());
    for (const auto& [user, hist] : seed_histories_) out.push_back(user);
    return out;
}

std::string Environment::item_category(const std::string& item_id) const {
    return stores_.categories->category_of(item_id);
}

EnvState Environment::reset(const std::string& user_id) const {
    auto it = seed_histories_.find(user_id);
    if (it == seed_histories_.end())
        throw InputError("Environment::reset: unknown user " + user_id);
    EnvState state;
    state.user_id = user_id;
    state.history = it->second;
    state.step_index = 0;
    return state;
}

StepOutcome Environment::step(const EnvState& state, const std::string& action) const {
    if (!action_set_.count(action))
        throw InputError("Environment::step: action outside the action space: " + action);
    if (!config_.allow_repeats && state.recommended.count(action))
        throw InputError("Environment::step: item " + action +
                         " was already recommended at an earlier step of this episode (step " +
                         std::to_string(state.step_index) + ")");
    if (state.step_index >= config_.horizon)
        throw InputError("Environment::step: episode already finished");

    logical::PreferenceContext ctx =
        logical::build_context(state.history, action, *stores_.categories);

    logical::TieBreaker coin(
        mix_seed(config_.seed, fnv1a(state.user_id), static_cast<std::uint64_t>(state.step_index)));

    logical::MatchResult mat = logical::match_vote(ctx, *stores_.profiles, coin);
    logical::SimilarityResult sim = logical::similarity_vote(ctx, *stores_.embeddings, coin);
    seq::StaResult sta = seq::sta_vote(*stores_.sta_model, state.history, action);

    StepOutcome out;
    out.verdict.vote_mat = mat.vote;
    out.verdict.vote_sim = sim.vote;
    out.verdict.vote_sta = sta.vote;
    out.verdict.match = std::move(mat.score);
    out.verdict.similarity = std::move(sim.score);
    out.verdict.sta_score = sta.score;
    out.verdict.mat_tie = mat.tie;
    out.verdict.sim_tie = sim.tie;
    out.verdict.fallback_used = ctx.fallback_used;
    out.verdict.coins_used = coin.draws();
    out.verdict.reward = ensemble_reward(mat.vote, sim.vote, sta.vote);
    out.reward = out.verdict.reward;

    out.next = state;
    corpus::Interaction appended;
    appended.user_id = state.user_id;
    appended.item_id = action;
    appended.label = out.reward;  // the simulated label y_c is the ensemble's belief
    appended.position = static_cast<int>(state.history.size());
    out.next.history.push_back(std::move(appended));
    out.next.recommended.insert(action);
    out.next.step_index = state.step_index + 1;
    out.next.last_context = std::move(ctx);
    out.done = out.next.step_index >= config_.horizon;
    return out;
}

// --- trace serialization -------------------------------------------------------

int EpisodeTrace::total_reward() const {
    int total = 0;
    for (const auto& s : steps) total += s.verdict.reward;
    return total;
}

namespace {

json verdict_to_json(const EnsembleVerdict& v) {
    json matched_pros = json::array();
    for (const auto& m : v.match.matched_pros)
        matched_pros.push_back({{"item", m.history_item}, {"keyword", m.keyword}});
    json matched_cons = json::array();
    for (const auto& m : v.match.matched_cons)
        matched_cons.push_back({{"item", m.history_item}, {"keyword", m.keyword}});

    json j;
    j["votes"] = {v.vote_mat, v.vote_sim, v.vote_sta};
    j["reward"] = v.reward;
    j["alpha_pos"] = v.match.alpha_pos;
    j["alpha_neg"] = v.match.alpha_neg;
    j["matched_pros"] = std::move(matched_pros);
    j["matched_cons"] = std::move(matched_cons);
    j["beta_pos"] = v.similarity.beta_pos ? json(*v.similarity.beta_pos) : json();
    j["beta_neg"] = v.similarity.beta_neg ? json(*v.similarity.beta_neg) : json();
    j["argmax_pos_item"] = v.similarity.argmax_pos_item;
    j["argmax_neg_item"] = v.similarity.argmax_neg_item;
    j["sta_score"] = v.sta_score;
    j["coins_used"] = v.coins_used;
    j["mat_tie"] = v.mat_tie;
    j["sim_tie"] = v.sim_tie;
    j["fallback_used"] = v.fallback_used;
    return j;
}

EnsembleVerdict verdict_from_json(const json& j) {
    EnsembleVerdict v;
    v.vote_mat = j.at("votes")[0].get<int>();
    v.vote_sim = j.at("votes")[1].get<int>();
    v.vote_sta = j.at("votes")[2].get<int>();
    v.reward = j.at("reward").get<int>();
    v.match.alpha_pos = j.at("alpha_pos").get<int>();
    v.match.alpha_neg = j.at("alpha_neg").get<int>();
    for (const auto& m : j.at("matched_pros"))
        v.match.matched_pros.push_back({m.at("item").get<std::string>(),
                                        m.at("keyword").get<std::string>()});
    for (const auto& m : j.at("matched_cons"))
        v.match.matched_cons.push_back({m.at("item").get<std::string>(),
                                        m.at("keyword").get<std::string>()});
    if (!j.at("beta_pos").is_null()) v.similarity.beta_pos = j.at("beta_pos").get<double>();
    if (!j.at("beta_neg").is_null()) v.similarity.beta_neg = j.at("beta_neg").get<double>();
    v.similarity.argmax_pos_item = j.value("argmax_pos_item", "");
    v.similarity.argmax_neg_item = j.value("argmax_neg_item", "");
    v.sta_score = j.at("sta_score").get<double>();
    v.coins_used = j.value("coins_used", 0);
    v.mat_tie = j.value("mat_tie", false);
    v.sim_tie = j.value("sim_tie", false);
    v.fallback_used = j.value("fallback_used", false);
    return v;
}

}  // namespace

void save_traces_jsonl(const std::filesystem::path& path,
                       const std::vector<EpisodeTrace>& traces) {
    std::vector<std::string> lines;
    lines.reserve(traces.size());
    for (const auto& trace : traces) {
        json steps = json::array();
        for (const auto& s : trace.steps) {
            json rec = verdict_to_json(s.verdict);
            rec["step"] = s.step;
            rec["item_id"] = s.item_id;
            rec["category"] = s.category;
            steps.push_back(std::move(rec));
        }
        json j;
        j["episode"] = trace.episode;
        j["user_id"] = trace.user_id;
        j["steps"] = std::move(steps);
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

std::vector<EpisodeTrace> load_traces_jsonl(const std::filesystem::path& path) {
    std::vector<EpisodeTrace> out;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw InputError(path.string() + ":" + std::to_string(n) + ": invalid JSON");
        EpisodeTrace trace;
        trace.episode = j.at("episode").get<int>();
        trace.user_id = j.at("user_id").get<std::string>();
        for (const auto& rec : j.at("steps")) {
            StepRecord s;
            s.step = rec.at("step").get<int>();
            s.item_id = rec.at("item_id").get<std::string>();
            s.category = rec.value("category", "");
            s.verdict = verdict_from_json(rec);
            trace.steps.push_back(std::move(s));
        }
        out.push_back(std::move(trace));
    });
    return out;
}

// --- environment protocol --------------------------------------------------------

void serve_env(EnvInterface& env, std::istream& in, std::ostream& out) {
    std::optional<EnvState> state;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json reply;
        try {
            json req = json::parse(line);
            std::string cmd = req.value("cmd", "");
            if (cmd == "reset") {
                state = env.reset(req.at("user").get<std::string>());
                reply["ok"] = true;
                reply["user_id"] = state->user_id;
                reply["step_index"] = state->step_index;
                reply["history_len"] = state->history.size();
            } else if (cmd == "step") {
                if (!state) throw InputError("step before reset");
                StepOutcome outcome = env.step(*state, req.at("item").get<std::string>());
                state = outcome.next;
                reply["ok"] = true;
                reply["reward"] = outcome.reward;
                reply["done"] = outcome.done;
                reply["verdict"] = verdict_to_json(outcome.verdict);
                reply["step_index"] = state->step_index;
                reply["history_len"] = state->history.size();
            } else if (cmd == "actions") {
                reply["ok"] = true;
                reply["items"] = env.action_items();
            } else if (cmd == "quit") {
                reply["ok"] = true;
                out << reply.dump() << '\n' << std::flush;
                return;
            } else {
                throw InputError("unknown command: " + cmd);
            }
        } catch (const std::exception& e) {
            reply = json{{"ok", false}, {"error", e.what()}};
        }
        out << reply.dump() << '\n' << std::flush;
    }
}

}  // namespace simrec::sim
