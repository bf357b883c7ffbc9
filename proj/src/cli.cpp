#include "simrec/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "simrec/agents.hpp"
#include "simrec/common.hpp"
#include "simrec/corpus.hpp"
#include "simrec/distill.hpp"
#include "simrec/embedding.hpp"
#include "simrec/harness.hpp"
#include "simrec/log.hpp"
#include "simrec/seqmodel.hpp"
#include "simrec/simulator.hpp"

namespace simrec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- shared helpers -----------------------------------------------------------

void require_exists(const fs::path& path, const char* what) {
    if (!fs::exists(path))
        throw InputError(std::string(what) + " not found: " + path.string());
}

/// True when every output exists and none is older than the newest input.
bool outputs_up_to_date(const std::vector<fs::path>& inputs,
                        const std::vector<fs::path>& outputs) {
    fs::file_time_type newest_input = fs::file_time_type::min();
    for (const auto& p : inputs) {
        if (!fs::exists(p)) return false;
        newest_input = std::max(newest_input, fs::last_write_time(p));
    }
    for (const auto& p : outputs) {
        if (!fs::exists(p)) return false;
        if (fs::last_write_time(p) < newest_input) return false;
    }
    return !outputs.empty();
}

bool maybe_skip(bool force, const std::vector<fs::path>& inputs,
                const std::vector<fs::path>& outputs, const std::string& stage) {
    if (force) return false;
    if (!outputs_up_to_date(inputs, outputs)) return false;
    Logger::instance().event("stage_skipped",
                             {{"stage", stage}, {"reason", "outputs newer than inputs"}});
    return true;
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError(context + ": unknown key \"" + it.key() + "\"");
    }
}

json load_json_config(const fs::path& path) {
    require_exists(path, "config file");
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    return j;
}

// --- environment bundle ----------------------------------------------------------

struct EnvBundle {
    corpus::Catalog catalog;
    corpus::CategoryTable categories;
    distill::ProfileStore profiles;
    emb::EmbeddingStore embeddings;
    seq::SeqModel sta_model;
    std::map<std::string, corpus::UserHistory> histories;
    int emb_dim = 0;
    rl::DqnConfig agent_config;
    int episodes_default = 2000;
    std::vector<fs::path> store_paths;
    std::unique_ptr<sim::Environment> env;
};

std::unique_ptr<EnvBundle> load_env_bundle(const fs::path& config_path,
                                           std::optional<std::uint64_t> seed_override) {
    json j = load_json_config(config_path);
    check_keys(j, {"horizon", "gamma", "allow_repeats", "action_cap", "seed", "paths", "agent"},
               config_path.string());
    json paths = j.value("paths", json::object());
    check_keys(paths, {"items", "categories", "histories", "profiles", "embeddings", "sta_model"},
               config_path.string() + " paths");
    for (const char* key : {"items", "categories", "histories", "profiles", "embeddings",
                            "sta_model"}) {
        if (!paths.contains(key))
            throw ConfigError(config_path.string() + ": paths." + key + " is required");
    }
    // Relative store paths resolve against the config file's directory.
    auto resolve = [&](const std::string& key) {
        fs::path p = paths.at(key).get<std::string>();
        return p.is_absolute() ? p : config_path.parent_path() / p;
    };

    sim::EnvConfig env_cfg;
    env_cfg.horizon = j.value("horizon", 20);
    env_cfg.gamma = j.value("gamma", 0.95);
    env_cfg.allow_repeats = j.value("allow_repeats", false);
    env_cfg.action_cap = j.value("action_cap", 0);
    env_cfg.seed = j.value("seed", std::uint64_t{7});
    if (seed_override) env_cfg.seed = *seed_override;

    auto bundle = std::make_unique<EnvBundle>();
    fs::path items_path = resolve("items");
    fs::path categories_path = resolve("categories");
    fs::path histories_path = resolve("histories");
    fs::path profiles_path = resolve("profiles");
    fs::path embeddings_path = resolve("embeddings");
    fs::path sta_path = resolve("sta_model");
    for (const auto& p : {items_path, categories_path, histories_path, profiles_path,
                          embeddings_path, sta_path})
        require_exists(p, "environment store");
    bundle->store_paths = {items_path,    categories_path, histories_path,
                           profiles_path, embeddings_path, sta_path};

    bundle->catalog = corpus::Catalog(corpus::load_items_jsonl(items_path));
    bundle->categories = corpus::load_categories_jsonl(categories_path);
    bundle->histories = corpus::load_histories_jsonl(histories_path);
    bundle->profiles = distill::ProfileStore(distill::load_profiles_jsonl(profiles_path));
    {
        auto embs = emb::load_profile_embeddings_jsonl(embeddings_path);
        for (const auto& e : embs) {
            if (e.e_pos) {
                bundle->emb_dim = static_cast<int>(e.e_pos->size());
                break;
            }
            if (e.e_neg) {
                bundle->emb_dim = static_cast<int>(e.e_neg->size());
                break;
            }
        }
        bundle->embeddings = emb::EmbeddingStore(std::move(embs));
    }
    bundle->sta_model = seq::SeqModel::load(sta_path);

    json agent = j.value("agent", json::object());
    check_keys(agent,
               {"episodes", "buffer", "batch", "sync", "lr", "eps_start", "eps_end", "anneal",
                "hidden", "recent_k", "warmup"},
               config_path.string() + " agent");
    rl::DqnConfig& a = bundle->agent_config;
    a.buffer_capacity = agent.value("buffer", std::size_t{10000});
    a.batch_size = agent.value("batch", 64);
    a.target_sync_every = agent.value("sync", 200);
    a.lr = agent.value("lr", 1e-3);
    a.gamma = env_cfg.gamma;
    a.eps_start = agent.value("eps_start", 1.0);
    a.eps_end = agent.value("eps_end", 0.05);
    a.anneal_fraction = agent.value("anneal", 0.5);
    if (agent.contains("hidden")) a.hidden = agent.at("hidden").get<std::vector<int>>();
    a.warmup = agent.value("warmup", std::size_t{500});
    a.seed = env_cfg.seed;
    bundle->episodes_default = agent.value("episodes", 2000);

    sim::Stores stores;
    stores.catalog = &bundle->catalog;
    stores.categories = &bundle->categories;
    stores.profiles = &bundle->profiles;
    stores.embeddings = &bundle->embeddings;
    stores.sta_model = &bundle->sta_model;
    bundle->env = std::make_unique<sim::Environment>(stores, bundle->histories, env_cfg);

    rl::ObservationSpec spec;
    spec.recent_k = agent.value("recent_k", 10);
    spec.emb_dim = bundle->emb_dim;
    (void)spec;
    return bundle;
}

// --- stages -------------------------------------------------------------------------

struct IngestArgs {
    std::string items, reviews, out;
    double threshold = 3.0;
    int cat_low = 5;
    double cat_high = 0.5;
    bool force = false;
};

void run_ingest(const IngestArgs& args) {
    fs::path out_dir = args.out;
    std::vector<fs::path> outputs = {out_dir / "items.jsonl", out_dir / "reviews.jsonl",
                                     out_dir / "categories.jsonl", out_dir / "histories.jsonl"};
    if (maybe_skip(args.force, {args.items, args.reviews}, outputs, "ingest")) return;

    require_exists(args.items, "item catalog");
    require_exists(args.reviews, "review file");
    auto items = corpus::load_items_jsonl(args.items);
    corpus::Catalog catalog(items);
    auto reviews = corpus::load_reviews_jsonl(args.reviews);

    auto table = corpus::assign_categories(catalog.items(), args.cat_low, args.cat_high);
    corpus::IngestStats stats;
    auto histories = corpus::build_user_histories(reviews, catalog, args.threshold, &stats);

    fs::create_directories(out_dir);
    corpus::save_items_jsonl(out_dir / "items.jsonl", catalog.items());
    corpus::save_reviews_jsonl(out_dir / "reviews.jsonl", reviews, args.threshold);
    corpus::save_categories_jsonl(out_dir / "categories.jsonl", table);
    corpus::save_histories_jsonl(out_dir / "histories.jsonl", histories);
    Logger::instance().event("ingest_done",
                             {{"items", std::to_string(catalog.size())},
                              {"users", std::to_string(histories.size())},
                              {"reviews_rejected", std::to_string(stats.reviews_rejected)}});
}

struct DistillArgs {
    std::string items_dir, out, llm = "mock:7";
    int review_cap = 10;
    int retries = 2;
    int concurrency = 8;
    std::string domain_noun = "Movie";
    double threshold = 3.0;
    bool force = false;
};

void run_distill(const DistillArgs& args) {
    fs::path dir = args.items_dir;
    fs::path items_path = dir / "items.jsonl";
    fs::path categories_path = dir / "categories.jsonl";
    fs::path reviews_path = dir / "reviews.jsonl";

    std::vector<fs::path> inputs = {items_path, categories_path};
    if (fs::exists(reviews_path)) inputs.push_back(reviews_path);
    if (maybe_skip(args.force, inputs, {args.out}, "distill")) return;

    require_exists(items_path, "ingested item file");
    require_exists(categories_path, "category table");
    corpus::Catalog catalog(corpus::load_items_jsonl(items_path));
    auto categories = corpus::load_categories_jsonl(categories_path);
    std::vector<corpus::RawReview> reviews;
    if (fs::exists(reviews_path)) reviews = corpus::load_reviews_jsonl(reviews_path);

    auto llm = distill::make_llm_client(args.llm);
    distill::DistillOptions opts;
    opts.domain_noun = args.domain_noun;
    opts.review_cap = args.review_cap;
    opts.retries = args.retries;
    opts.concurrency = args.concurrency;
    opts.rating_threshold = args.threshold;

    auto profiles = distill::distill_catalog(catalog, categories, reviews, *llm, opts);
    distill::save_profiles_jsonl(args.out, profiles);
    Logger::instance().event("distill_done", {{"profiles", std::to_string(profiles.size())},
                                              {"backend", llm->name()}});
}

struct EmbedArgs {
    std::string profiles, out, provider = "hash:7";
    int dim = 384;
    bool force = false;
};

void run_embed(const EmbedArgs& args) {
    fs::path out_dir = args.out;
    fs::path cache_path = out_dir / "cache.jsonl";
    fs::path emb_path = out_dir / "profile_embeddings.jsonl";
    if (maybe_skip(args.force, {args.profiles}, {cache_path, emb_path}, "embed")) return;

    require_exists(args.profiles, "profile store");
    auto profiles = distill::load_profiles_jsonl(args.profiles);
    auto provider = emb::make_provider(args.provider, args.dim);

    emb::EmbeddingCache cache = fs::exists(cache_path) ? emb::EmbeddingCache::load(cache_path)
                                                       : emb::EmbeddingCache(provider->dim());
    std::vector<emb::ProfileEmbedding> embeddings;
    embeddings.reserve(profiles.size());
    for (const auto& p : profiles) embeddings.push_back(emb::pool_profile(p, cache, *provider));

    fs::create_directories(out_dir);
    cache.save(cache_path);
    emb::save_profile_embeddings_jsonl(emb_path, embeddings, provider->dim());
    Logger::instance().event("embed_done", {{"profiles", std::to_string(embeddings.size())},
                                            {"cached_keywords", std::to_string(cache.size())},
                                            {"provider", provider->name()}});
}

struct TrainStaArgs {
    std::string histories, out, items;
    int dim = 32;
    int layers = 1;
    int maxlen = 50;
    int epochs = 20;
    int ffn = 0;  // 0 = same as dim
    double lr = 1e-3;
    int batch = 64;
    std::uint64_t seed = 7;
    bool force = false;
};

void run_train_sta(const TrainStaArgs& args) {
    std::vector<fs::path> inputs = {args.histories};
    if (!args.items.empty()) inputs.push_back(args.items);
    if (maybe_skip(args.force, inputs, {args.out}, "train-sta")) return;

    require_exists(args.histories, "history file");
    auto histories = corpus::load_histories_jsonl(args.histories);

    std::vector<std::string> vocabulary;
    if (!args.items.empty()) {
        require_exists(args.items, "item catalog");
        for (const auto& item : corpus::load_items_jsonl(args.items))
            vocabulary.push_back(item.item_id);
    } else {
        std::set<std::string> seen;
        for (const auto& [user, hist] : histories)
            for (const auto& it : hist) seen.insert(it.item_id);
        vocabulary.assign(seen.begin(), seen.end());
    }

    seq::SeqModelConfig cfg;
    cfg.dim = args.dim;
    cfg.max_len = args.maxlen;
    cfg.ffn_dim = args.ffn > 0 ? args.ffn : args.dim;
    cfg.blocks = args.layers;
    cfg.lr = args.lr;
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch;
    cfg.seed = args.seed;

    seq::TrainingLog log;
    seq::SeqModel model = seq::train_sequential(histories, vocabulary, cfg, &log);
    model.save(args.out);
    Logger::instance().event(
        "train_sta_done",
        {{"epochs", std::to_string(log.epoch_loss.size())},
         {"final_loss", log.epoch_loss.empty() ? "n/a" : std::to_string(log.epoch_loss.back())},
         {"val_auc", std::to_string(log.val_auc)}});
}

struct TrainRlArgs {
    std::string env_config, algo = "dqn", out, curve;
    int episodes = 2000;
    std::uint64_t seed = 7;
    bool seed_set = false;
    bool episodes_set = false;
    int recent_k = 10;
    bool force = false;
};

void run_train_rl(const TrainRlArgs& args) {
    std::optional<std::uint64_t> seed_override;
    if (args.seed_set) seed_override = args.seed;
    auto bundle = load_env_bundle(args.env_config, seed_override);
    int episodes = args.episodes_set ? args.episodes : bundle->episodes_default;

    std::vector<fs::path> inputs = bundle->store_paths;
    inputs.push_back(args.env_config);
    std::vector<fs::path> outputs;
    if (!args.out.empty()) outputs.push_back(args.out);
    if (!args.curve.empty()) outputs.push_back(args.curve);
    if (!outputs.empty() && maybe_skip(args.force, inputs, outputs, "train-rl")) return;

    if (args.algo == "dqn") {
        if (args.out.empty()) throw ConfigError("train-rl --algo dqn requires --out");
        rl::ObservationSpec spec;
        spec.recent_k = args.recent_k;
        spec.emb_dim = bundle->emb_dim;
        rl::Featurizer featurizer(spec, bundle->env->action_items(), &bundle->embeddings);
        rl::DqnAgent agent(bundle->agent_config, std::move(featurizer));
        auto curve = agent.train(*bundle->env, episodes);
        agent.save(args.out);
        if (!args.curve.empty()) rl::save_curve_csv(args.curve, curve);
        double tail = 0.0;
        std::size_t n_tail = std::min<std::size_t>(100, curve.size());
        for (std::size_t i = curve.size() - n_tail; i < curve.size(); ++i)
            tail += curve[i].total_reward;
        Logger::instance().event(
            "train_rl_done",
            {{"algo", "dqn"},
             {"episodes", std::to_string(curve.size())},
             {"tail_mean_reward",
              std::to_string(n_tail ? tail / static_cast<double>(n_tail) : 0.0)}});
    } else if (args.algo == "random") {
        if (args.curve.empty()) throw ConfigError("train-rl --algo random requires --curve");
        auto curve = rl::run_random_policy(*bundle->env, episodes, bundle->env->config().seed);
        rl::save_curve_csv(args.curve, curve);
        Logger::instance().event("train_rl_done", {{"algo", "random"},
                                                   {"episodes", std::to_string(curve.size())}});
    } else {
        throw ConfigError("unknown --algo \"" + args.algo + "\" (supported: dqn, random)");
    }
}

struct EvalArgs {
    std::string agent, env_config, out;
    int episodes = 100;
    std::uint64_t seed = 7;
    bool force = false;
};

void run_eval(const EvalArgs& args) {
    auto bundle = load_env_bundle(args.env_config, std::nullopt);
    fs::path out_dir = args.out;
    std::vector<fs::path> inputs = bundle->store_paths;
    inputs.push_back(args.env_config);
    inputs.push_back(args.agent);
    std::vector<fs::path> outputs = {out_dir / "report.json", out_dir / "report.txt",
                                     out_dir / "traces.jsonl"};
    if (maybe_skip(args.force, inputs, outputs, "eval")) return;

    require_exists(args.agent, "agent checkpoint");
    rl::DqnAgent agent = rl::DqnAgent::load(args.agent, &bundle->embeddings);
    harness::GreedyDqnPolicy policy(agent);
    harness::EvalRun run = harness::evaluate(policy, *bundle->env, args.episodes, args.seed);

    fs::create_directories(out_dir);
    harness::save_report_json(out_dir / "report.json", run.report);
    write_lines(out_dir / "report.txt", {harness::report_text(run.report)});
    sim::save_traces_jsonl(out_dir / "traces.jsonl", run.traces);
    Logger::instance().event("eval_done",
                             {{"episodes", std::to_string(run.report.episodes)},
                              {"avg_reward", std::to_string(run.report.avg_reward)},
                              {"liking_pct", std::to_string(run.report.liking_pct)}});
}

struct TraceArgs {
    std::string traces;
    int episode = 0;
    std::string csv_out;
};

void run_trace(const TraceArgs& args) {
    require_exists(args.traces, "trace file");
    auto traces = sim::load_traces_jsonl(args.traces);
    const sim::EpisodeTrace* match = nullptr;
    for (const auto& t : traces)
        if (t.episode == args.episode) {
            match = &t;
            break;
        }
    if (!match)
        throw InputError("episode " + std::to_string(args.episode) + " not found in " +
                         args.traces);
    std::cout << harness::render_trace_table(*match);
    if (!args.csv_out.empty()) {
        write_lines(args.csv_out, {harness::render_trace_csv(*match)});
        Logger::instance().event("trace_csv_written", {{"path", args.csv_out}});
    }
}

struct GenWorldArgs {
    harness::WorldSpec spec;
    std::string out;
    bool force = false;
};

void run_genworld(const GenWorldArgs& args) {
    fs::path out_dir = args.out;
    std::vector<fs::path> outputs = {out_dir / "items.jsonl",      out_dir / "reviews.jsonl",
                                     out_dir / "categories.jsonl", out_dir / "histories.jsonl",
                                     out_dir / "profiles.jsonl",   out_dir / "world.json"};
    if (args.force || !outputs_up_to_date({}, outputs)) {
        harness::SyntheticWorld world = harness::generate_world(args.spec);
        harness::save_world(out_dir, world);
        Logger::instance().event("genworld_done",
                                 {{"users", std::to_string(args.spec.n_users)},
                                  {"items", std::to_string(args.spec.n_items)},
                                  {"categories", std::to_string(args.spec.n_categories)}});
    } else {
        Logger::instance().event("stage_skipped",
                                 {{"stage", "genworld"}, {"reason", "outputs already present"}});
    }
}

void run_serve_env(const std::string& env_config) {
    auto bundle = load_env_bundle(env_config, std::nullopt);
    Logger::instance().event("serve_env_ready",
                             {{"users", std::to_string(bundle->histories.size())},
                              {"actions", std::to_string(bundle->env->action_items().size())}});
    sim::serve_env(*bundle->env, std::cin, std::cout);
}

int classify_exception() {
    try {
        throw;
    } catch (const ConfigError&) {
        return kExitConfig;
    } catch (const BackendError&) {
        return kExitBackend;
    } catch (const InputError&) {
        return kExitMissingInput;
    } catch (const distill::MalformedResponse&) {
        return kExitBackend;
    } catch (const InternalError&) {
        return kExitInternal;
    } catch (const std::exception&) {
        return kExitInternal;
    }
}

}  // namespace

int run_subcommand(const std::vector<std::string>& args) {
    CLI::App app{"simrec: explainable user-simulation environment for RL recommenders"};
    app.require_subcommand(1);

    bool quiet = false;
    bool force = false;
    std::uint64_t global_seed = 7;
    app.add_flag("--quiet", quiet, "terse human-readable logs instead of JSON lines");
    app.add_flag("--force", force, "rebuild outputs even when they are newer than inputs");
    auto* seed_opt = app.add_option("--seed", global_seed, "global random seed");

    IngestArgs ingest;
    auto* cmd_ingest = app.add_subcommand("ingest", "binarize ratings and build user histories");
    cmd_ingest->add_option("--items", ingest.items, "raw item catalog (.jsonl)")->required();
    cmd_ingest->add_option("--reviews", ingest.reviews, "raw reviews (.jsonl)")->required();
    cmd_ingest->add_option("--out", ingest.out, "output directory")->required();
    cmd_ingest->add_option("--threshold", ingest.threshold, "like threshold on the rating scale");
    cmd_ingest->add_option("--cat-low", ingest.cat_low, "drop categories on fewer items");
    cmd_ingest->add_option("--cat-high", ingest.cat_high,
                           "drop categories on more than this catalog fraction");

    DistillArgs distill_args;
    auto* cmd_distill =
        app.add_subcommand("distill", "extract pros/cons keyword profiles through an LLM");
    cmd_distill->add_option("--items", distill_args.items_dir, "ingested data directory")
        ->required();
    cmd_distill->add_option("--out", distill_args.out, "profile output (.jsonl)")->required();
    cmd_distill->add_option("--llm", distill_args.llm, "backend: mock:<seed> or http");
    cmd_distill->add_option("--review-cap", distill_args.review_cap,
                            "most recent reviews per item");
    cmd_distill->add_option("--retries", distill_args.retries, "retries per malformed response");
    cmd_distill->add_option("--concurrency", distill_args.concurrency,
                            "items distilled in parallel");
    cmd_distill->add_option("--domain-noun", distill_args.domain_noun,
                            "dataset noun used in prompts (Movie, business, game, ...)");
    cmd_distill->add_option("--threshold", distill_args.threshold,
                            "like threshold for review polarity");

    EmbedArgs embed_args;
    auto* cmd_embed = app.add_subcommand("embed", "pool keyword embeddings per profile");
    cmd_embed->add_option("--profiles", embed_args.profiles, "profile store (.jsonl)")->required();
    cmd_embed->add_option("--out", embed_args.out, "embedding cache directory")->required();
    cmd_embed->add_option("--provider", embed_args.provider,
                          "backend: hash:<seed>, file:<path>, or remote");
    cmd_embed->add_option("--dim", embed_args.dim, "embedding dimension");

    TrainStaArgs sta_args;
    auto* cmd_sta = app.add_subcommand("train-sta", "train the sequential statistical model");
    cmd_sta->add_option("--histories", sta_args.histories, "user histories (.jsonl)")->required();
    cmd_sta->add_option("--out", sta_args.out, "model checkpoint path")->required();
    cmd_sta->add_option("--items", sta_args.items, "item catalog for the vocabulary (.jsonl)");
    cmd_sta->add_option("--dim", sta_args.dim, "embedding width");
    cmd_sta->add_option("--layers", sta_args.layers, "encoder blocks (only 1 supported)");
    cmd_sta->add_option("--maxlen", sta_args.maxlen, "history positions fed to the encoder");
    cmd_sta->add_option("--epochs", sta_args.epochs, "training epochs");
    cmd_sta->add_option("--ffn", sta_args.ffn, "feed-forward width (default: same as --dim)");
    cmd_sta->add_option("--lr", sta_args.lr, "learning rate");
    cmd_sta->add_option("--batch", sta_args.batch, "mini-batch size");
    auto* sta_seed = cmd_sta->add_option("--seed", sta_args.seed, "training seed");

    TrainRlArgs rl_args;
    auto* cmd_rl = app.add_subcommand("train-rl", "train an RL agent against the simulator");
    cmd_rl->add_option("--env", rl_args.env_config, "environment config (.json)")->required();
    cmd_rl->add_option("--algo", rl_args.algo, "dqn or random");
    auto* rl_episodes = cmd_rl->add_option("--episodes", rl_args.episodes, "training episodes");
    auto* rl_seed = cmd_rl->add_option("--seed", rl_args.seed, "training seed");
    cmd_rl->add_option("--out", rl_args.out, "agent checkpoint path");
    cmd_rl->add_option("--curve", rl_args.curve, "learning curve CSV path");
    cmd_rl->add_option("--recent-k", rl_args.recent_k, "history slots in the observation");

    EvalArgs eval_args;
    auto* cmd_eval = app.add_subcommand("eval", "greedy evaluation with metrics and traces");
    cmd_eval->add_option("--agent", eval_args.agent, "agent checkpoint")->required();
    cmd_eval->add_option("--env", eval_args.env_config, "environment config (.json)")->required();
    cmd_eval->add_option("--episodes", eval_args.episodes, "evaluation episodes");
    cmd_eval->add_option("--seed", eval_args.seed, "evaluation seed");
    cmd_eval->add_option("--out", eval_args.out, "report directory")->required();

    TraceArgs trace_args;
    auto* cmd_trace = app.add_subcommand("trace", "render the case-study table for one episode");
    cmd_trace->add_option("--traces", trace_args.traces, "trace file (.jsonl)")->required();
    cmd_trace->add_option("--episode", trace_args.episode, "episode id")->required();
    cmd_trace->add_option("--csv", trace_args.csv_out, "also write the row data as CSV");

    GenWorldArgs world_args;
    auto* cmd_world =
        app.add_subcommand("genworld", "generate a planted-preference synthetic world");
    cmd_world->add_option("--users", world_args.spec.n_users, "number of users");
    cmd_world->add_option("--items", world_args.spec.n_items, "number of items");
    cmd_world->add_option("--categories", world_args.spec.n_categories, "number of categories");
    auto* world_seed = cmd_world->add_option("--seed", world_args.spec.seed, "world seed");
    cmd_world->add_option("--out", world_args.out, "world directory")->required();
    cmd_world->add_option("--history-len", world_args.spec.history_len, "seed history length");
    cmd_world->add_option("--pros-per-item", world_args.spec.pros_per_item, "pros per item");
    cmd_world->add_option("--cons-per-item", world_args.spec.cons_per_item, "cons per item");
    cmd_world->add_option("--pros-pool", world_args.spec.pros_pool_per_category,
                          "pro keyword pool per category");
    cmd_world->add_option("--cons-pool", world_args.spec.cons_pool, "global con keyword pool");
    cmd_world->add_option("--affinity", world_args.spec.affinity_size,
                          "planted affinity keywords per user");
    cmd_world->add_option("--favorite-mix", world_args.spec.favorite_mix,
                          "seed-history share drawn from the favorite category");

    std::string serve_config;
    auto* cmd_serve =
        app.add_subcommand("serve-env", "serve the environment protocol over stdio");
    cmd_serve->add_option("--env", serve_config, "environment config (.json)")->required();

    std::vector<const char*> argv;
    argv.push_back("simrec");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints usage, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", "cli"},
                          {"message", e.what()},
                          {"exit_code", kExitConfig}}
                         .dump()
                  << '\n';
        return kExitConfig;
    }

    Logger::instance().set_mode(quiet ? LogMode::Human : LogMode::Json);

    try {
        if (*cmd_ingest) {
            ingest.force = force;
            run_ingest(ingest);
        } else if (*cmd_distill) {
            distill_args.force = force;
            if (seed_opt->count() && distill_args.llm.rfind("mock:", 0) == 0)
                distill_args.llm = "mock:" + std::to_string(global_seed);
            run_distill(distill_args);
        } else if (*cmd_embed) {
            embed_args.force = force;
            if (seed_opt->count() && embed_args.provider.rfind("hash:", 0) == 0)
                embed_args.provider = "hash:" + std::to_string(global_seed);
            run_embed(embed_args);
        } else if (*cmd_sta) {
            sta_args.force = force;
            if (!sta_seed->count() && seed_opt->count()) sta_args.seed = global_seed;
            run_train_sta(sta_args);
        } else if (*cmd_rl) {
            rl_args.force = force;
            rl_args.episodes_set = rl_episodes->count() > 0;
            rl_args.seed_set = rl_seed->count() > 0;
            if (!rl_args.seed_set && seed_opt->count()) {
                rl_args.seed = global_seed;
                rl_args.seed_set = true;
            }
            run_train_rl(rl_args);
        } else if (*cmd_eval) {
            eval_args.force = force;
            run_eval(eval_args);
        } else if (*cmd_trace) {
            run_trace(trace_args);
        } else if (*cmd_world) {
            world_args.force = force;
            if (!world_seed->count() && seed_opt->count()) world_args.spec.seed = global_seed;
            run_genworld(world_args);
        } else if (*cmd_serve) {
            run_serve_env(serve_config);
        }
        return kExitOk;
    } catch (const std::exception& e) {
        int code = classify_exception();
        std::cerr << json{{"error", "stage"}, {"message", e.what()}, {"exit_code", code}}.dump()
                  << '\n';
        return code;
    }
}

}  // namespace simrec::cli
