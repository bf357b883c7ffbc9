#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "simrec/cli.hpp"
#include "simrec/common.hpp"
#include "test_util.hpp"

#include <json.hpp>

using namespace simrec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<std::string> args) {
    return cli::run_subcommand(std::vector<std::string>(args));
}

void write_env_config(const fs::path& path, const fs::path& dir, int horizon) {
    json cfg;
    cfg["horizon"] = horizon;
    cfg["gamma"] = 0.9;
    cfg["allow_repeats"] = false;
    cfg["seed"] = 7;
    cfg["paths"] = {{"items", (dir / "world/items.jsonl").string()},
                    {"categories", (dir / "world/categories.jsonl").string()},
                    {"histories", (dir / "world/histories.jsonl").string()},
                    {"profiles", (dir / "profiles.jsonl").string()},
                    {"embeddings", (dir / "emb/profile_embeddings.jsonl").string()},
                    {"sta_model", (dir / "sta.ckpt").string()}};
    cfg["agent"] = {{"buffer", 512}, {"batch", 16}, {"warmup", 32},
                    {"hidden", {16, 16}}, {"recent_k", 4}};
    std::ofstream(path) << cfg.dump(2);
}

}  // namespace

TEST_CASE("help and usage errors carry the documented exit codes") {
    CHECK(run({"--help"}) == cli::kExitOk);
    CHECK(run({"no-such-command"}) == cli::kExitConfig);
    CHECK(run({}) == cli::kExitConfig);               // a subcommand is required
    CHECK(run({"ingest"}) == cli::kExitConfig);       // missing required flags
    CHECK(run({"ingest", "--items", "/nonexistent/items.jsonl", "--reviews",
               "/nonexistent/reviews.jsonl", "--out", "/tmp/simrec-cli-nowhere"}) ==
          cli::kExitMissingInput);
}

TEST_CASE("full pipeline smoke run: genworld through trace") {
    testutil::TempDir tmp("simrec-cli");
    const fs::path dir = tmp.path();

    CHECK(run({"genworld", "--users", "20", "--items", "50", "--categories", "3",
               "--history-len", "8", "--seed", "7", "--out", (dir / "world").string()}) ==
          cli::kExitOk);
    for (const char* f :
         {"items.jsonl", "reviews.jsonl", "categories.jsonl", "histories.jsonl",
          "profiles.jsonl", "world.json"})
        CHECK(fs::exists(dir / "world" / f));

    CHECK(run({"distill", "--items", (dir / "world").string(), "--out",
               (dir / "profiles.jsonl").string(), "--llm", "mock:7", "--review-cap", "2",
               "--concurrency", "3"}) == cli::kExitOk);
    CHECK(fs::exists(dir / "profiles.jsonl"));

    CHECK(run({"embed", "--profiles", (dir / "profiles.jsonl").string(), "--out",
               (dir / "emb").string(), "--provider", "hash:7", "--dim", "16"}) ==
          cli::kExitOk);
    CHECK(fs::exists(dir / "emb" / "cache.jsonl"));
    CHECK(fs::exists(dir / "emb" / "profile_embeddings.jsonl"));

    CHECK(run({"train-sta", "--histories", (dir / "world/histories.jsonl").string(),
               "--items", (dir / "world/items.jsonl").string(), "--out",
               (dir / "sta.ckpt").string(), "--dim", "8", "--maxlen", "8", "--epochs", "2",
               "--seed", "7"}) == cli::kExitOk);
    CHECK(fs::exists(dir / "sta.ckpt"));

    write_env_config(dir / "env.json", dir, 5);
    CHECK(run({"train-rl", "--env", (dir / "env.json").string(), "--algo", "dqn",
               "--episodes", "12", "--seed", "7", "--out", (dir / "agent.ckpt").string(),
               "--curve", (dir / "curve.csv").string()}) == cli::kExitOk);
    CHECK(fs::exists(dir / "agent.ckpt"));
    std::string curve = read_file(dir / "curve.csv");
    CHECK(curve.find("episode,total_reward,epsilon,loss_mean") == 0);
    CHECK(std::count(curve.begin(), curve.end(), '\n') == 13);  // header + 12 episodes

    CHECK(run({"train-rl", "--env", (dir / "env.json").string(), "--algo", "random",
               "--episodes", "6", "--curve", (dir / "random.csv").string()}) == cli::kExitOk);

    CHECK(run({"eval", "--agent", (dir / "agent.ckpt").string(), "--env",
               (dir / "env.json").string(), "--episodes", "4", "--seed", "3", "--out",
               (dir / "report").string()}) == cli::kExitOk);
    CHECK(fs::exists(dir / "report/report.json"));
    CHECK(fs::exists(dir / "report/report.txt"));
    CHECK(fs::exists(dir / "report/traces.jsonl"));

    json report = json::parse(read_file(dir / "report/report.json"));
    CHECK(report["episodes"] == 4);
    CHECK(std::abs(report["total_reward"].get<double>() -
                   report["avg_reward"].get<double>() * 4.0) < 1e-9);
    CHECK(report["liking_pct"].get<double>() >= 0.0);
    CHECK(report["liking_pct"].get<double>() <= 1.0);

    CHECK(run({"trace", "--traces", (dir / "report/traces.jsonl").string(), "--episode",
               "0", "--csv", (dir / "episode0.csv").string()}) == cli::kExitOk);
    std::string csv = read_file(dir / "episode0.csv");
    CHECK(csv.find("step,item_id,category") == 0);
    CHECK(run({"trace", "--traces", (dir / "report/traces.jsonl").string(), "--episode",
               "99"}) == cli::kExitMissingInput);
}

TEST_CASE("stages skip work when outputs are newer than inputs") {
    testutil::TempDir tmp("simrec-cli-idem");
    const fs::path dir = tmp.path();

    REQUIRE(run({"genworld", "--users", "6", "--items", "30", "--categories", "3",
                 "--history-len", "6", "--out", (dir / "world").string()}) == cli::kExitOk);

    auto items = dir / "world/items.jsonl";
    auto reviews = dir / "world/reviews.jsonl";
    REQUIRE(run({"ingest", "--items", items.string(), "--reviews", reviews.string(),
                 "--out", (dir / "ingested").string()}) == cli::kExitOk);
    auto stamp = fs::last_write_time(dir / "ingested/histories.jsonl");

    // second run skips: outputs untouched
    REQUIRE(run({"ingest", "--items", items.string(), "--reviews", reviews.string(),
                 "--out", (dir / "ingested").string()}) == cli::kExitOk);
    CHECK(fs::last_write_time(dir / "ingested/histories.jsonl") == stamp);

    // --force rebuilds
    REQUIRE(run({"--force", "ingest", "--items", items.string(), "--reviews",
                 reviews.string(), "--out", (dir / "ingested").string()}) == cli::kExitOk);
    CHECK(fs::last_write_time(dir / "ingested/histories.jsonl") > stamp);
}

TEST_CASE("ingest output feeds distill (ratings binarized at the threshold)") {
    testutil::TempDir tmp("simrec-cli-ingest");
    const fs::path dir = tmp.path();

    std::ofstream(dir / "items.jsonl")
        << R"({"item_id":"a","name":"A","attributes":["x"],"categories":["c1"]})" << "\n"
        << R"({"item_id":"b","name":"B","attributes":[],"categories":["c1","c2"]})" << "\n";
    std::ofstream(dir / "reviews.jsonl")
        << R"({"user_id":"u1","item_id":"a","rating":4.0,"comment":"nice","timestamp":10})"
        << "\n"
        << R"({"user_id":"u1","item_id":"b","rating":2.0,"timestamp":20})" << "\n"
        << R"({"user_id":"u1","item_id":"ghost","rating":5.0,"timestamp":30})" << "\n";

    REQUIRE(run({"ingest", "--items", (dir / "items.jsonl").string(), "--reviews",
                 (dir / "reviews.jsonl").string(), "--out", (dir / "out").string(),
                 "--threshold", "3.0", "--cat-low", "1", "--cat-high", "1.0"}) ==
            cli::kExitOk);

    json hist = json::parse(read_file(dir / "out/histories.jsonl"));
    CHECK(hist["user_id"] == "u1");
    REQUIRE(hist["interactions"].size() == 2);  // the unknown item was rejected
    CHECK(hist["interactions"][0]["label"] == 1);
    CHECK(hist["interactions"][1]["label"] == 0);

    REQUIRE(run({"distill", "--items", (dir / "out").string(), "--out",
                 (dir / "profiles.jsonl").string(), "--llm", "mock:3"}) == cli::kExitOk);
    std::string profiles = read_file(dir / "profiles.jsonl");
    CHECK(std::count(profiles.begin(), profiles.end(), '\n') == 2);
}

TEST_CASE("environment config rejects unknown keys and missing stores") {
    testutil::TempDir tmp("simrec-cli-env");
    const fs::path dir = tmp.path();

    std::ofstream(dir / "bad.json") << R"({"horizon": 5, "mystery_knob": true})";
    CHECK(run({"train-rl", "--env", (dir / "bad.json").string(), "--algo", "dqn", "--out",
               (dir / "a.ckpt").string()}) == cli::kExitConfig);

    std::ofstream(dir / "incomplete.json") << R"({"horizon": 5, "paths": {}})";
    CHECK(run({"train-rl", "--env", (dir / "incomplete.json").string(), "--algo", "dqn",
               "--out", (dir / "a.ckpt").string()}) == cli::kExitConfig);

    CHECK(run({"train-rl", "--env", (dir / "nowhere.json").string(), "--algo", "dqn",
               "--out", (dir / "a.ckpt").string()}) == cli::kExitMissingInput);
}
