#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "strmac/cli.hpp"
#include "strmac/eval.hpp"

namespace fs = std::filesystem;
using namespace strmac;

namespace {

// The CLI writes status lines to cout and errors to cerr; keep the test log
// clean and make stdout assertable.
struct Capture {
    std::ostringstream out, err;
    std::streambuf* old_out;
    std::streambuf* old_err;
    Capture()
        : old_out(std::cout.rdbuf(out.rdbuf())), old_err(std::cerr.rdbuf(err.rdbuf())) {}
    ~Capture() {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
    }
};

int run_quiet(std::vector<std::string> args, std::string* stdout_text = nullptr) {
    Capture cap;
    const int code = cli::run(std::move(args));
    if (stdout_text) *stdout_text = cap.out.str();
    return code;
}

struct TempDir {
    fs::path root;
    explicit TempDir(const std::string& name) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempDir() { fs::remove_all(root); }
    std::string sub(const std::string& name) const { return (root / name).string(); }
    std::string file(const std::string& dir, const std::string& name) const {
        return (root / dir / name).string();
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    REQUIRE(out.good());
}

} // namespace

TEST_CASE("enumerate prints the exact path count") {
    std::string out;
    CHECK(run_quiet({"enumerate", "5"}, &out) == 0);
    CHECK(out == "325\n");
    CHECK(run_quiet({"enumerate", "3"}, &out) == 0);
    CHECK(out == "15\n");
    CHECK(run_quiet({"enumerate", "7"}, &out) == 0);
    CHECK(out == "13699\n");
    CHECK(run_quiet({"enumerate", "20"}, &out) == 0);
    CHECK(out == "6613313319248080000\n");
}

TEST_CASE("usage and validation problems exit with 2, help with 0") {
    CHECK(run_quiet({"--help"}) == 0);
    CHECK(run_quiet({}) == 2);
    CHECK(run_quiet({"frobnicate"}) == 2);
    CHECK(run_quiet({"enumerate"}) == 2);         // missing required positional
    CHECK(run_quiet({"enumerate", "34"}) == 2);   // 128-bit overflow
    CHECK(run_quiet({"enumerate", "200"}) == 2);
    CHECK(run_quiet({"search", "--data", "/nonexistent/ds.jsonl"}) == 2);
    CHECK(run_quiet({"infer", "--model", "/nonexistent/m.json", "--data", "x"}) == 2);
    CHECK(run_quiet({"gradcheck", "--pairs", "0"}) == 2);
}

TEST_CASE("filesystem failures surface as internal errors") {
    TempDir tmp("strmac_cli_fs");
    const std::string blocker = tmp.sub("blocker");
    write_text(blocker, "not a directory\n");
    CHECK(run_quiet({"--out", blocker + "/sub", "gen", "--tasks", "5"}) == 1);
}

TEST_CASE("gen writes loadable datasets and disjoint splits share a population") {
    TempDir tmp("strmac_cli_gen");
    CHECK(run_quiet({"--seed", "9", "--out", tmp.sub("a"), "gen", "--tasks", "30"}) == 0);
    const Dataset a = load_dataset(tmp.file("a", "dataset.jsonl"));
    REQUIRE(a.tasks.size() == 30);
    CHECK(a.tasks.front().task_id == 0);
    CHECK(a.tasks.back().task_id == 29);

    CHECK(run_quiet({"--seed", "9", "--out", tmp.sub("b"), "gen", "--tasks", "10",
                     "--task-offset", "30"}) == 0);
    const Dataset b = load_dataset(tmp.file("b", "dataset.jsonl"));
    REQUIRE(b.tasks.size() == 10);
    CHECK(b.tasks.front().task_id == 30);
    REQUIRE(b.profiles.size() == a.profiles.size());
    for (std::size_t i = 0; i < a.profiles.size(); ++i) {
        CHECK(b.profiles[i].expertise == a.profiles[i].expertise);
        CHECK(b.profiles[i].base_token_cost == a.profiles[i].base_token_cost);
    }

    CHECK(run_quiet({"--seed", "9", "--out", tmp.sub("c"), "gen", "--tasks", "30"}) == 0);
    CHECK(slurp(tmp.file("c", "dataset.jsonl")) == slurp(tmp.file("a", "dataset.jsonl")));
    CHECK(run_quiet({"--seed", "10", "--out", tmp.sub("d"), "gen", "--tasks", "30"}) == 0);
    CHECK(slurp(tmp.file("d", "dataset.jsonl")) != slurp(tmp.file("a", "dataset.jsonl")));

    CHECK(run_quiet({"--out", tmp.sub("e"), "gen", "--tasks", "0"}) == 2);
}

TEST_CASE("the full command chain runs end to end") {
    TempDir tmp("strmac_cli_chain");
    const std::string dir = tmp.sub("run");
    CHECK(run_quiet({"--seed", "11", "--out", dir, "gen", "--tasks", "25"}) == 0);
    const std::string data = tmp.file("run", "dataset.jsonl");

    CHECK(run_quiet({"--out", dir, "search", "--data", data, "--mode", "pruned"}) == 0);
    CHECK(line_count(slurp(tmp.file("run", "harvest.jsonl"))) == 25);
    const nlohmann::json stats =
        nlohmann::json::parse(slurp(tmp.file("run", "search_stats.json")));
    CHECK(stats.at("mode") == "pruned");
    CHECK(stats.at("n_tasks") == 25);
    CHECK(stats.at("mean_paths_evaluated").get<double>() < 325.0);
    CHECK(stats.at("sampled_fraction").get<double>() > 0.0);
    CHECK(stats.at("n_examples").get<std::int64_t>() > 0);
    const std::vector<TrainingExample> examples =
        load_examples(tmp.file("run", "examples.jsonl"));
    CHECK(examples.size() ==
          static_cast<std::size_t>(stats.at("n_examples").get<std::int64_t>()));

    write_text(tmp.sub("train.json"), "{\"epochs\": 3, \"batch_size\": 16}\n");
    CHECK(run_quiet({"--seed", "11", "--config", tmp.sub("train.json"), "--out", dir, "train",
                     "--data", data, "--examples", tmp.file("run", "examples.jsonl")}) == 0);
    const RouterModel model = load_router(tmp.file("run", "model.json"));
    CHECK(model.n_agents == 5);
    const std::string loss = slurp(tmp.file("run", "loss.csv"));
    CHECK(loss.rfind("epoch,mean_loss\n", 0) == 0);
    CHECK(line_count(loss) == 4); // header + one row per epoch

    CHECK(run_quiet({"--out", dir, "infer", "--model", tmp.file("run", "model.json"), "--data",
                     data}) == 0);
    const std::string paths = slurp(tmp.file("run", "paths.jsonl"));
    CHECK(line_count(paths) == 25);
    std::istringstream path_stream(paths);
    std::string line;
    while (std::getline(path_stream, line)) {
        const ExecutionPath p = path_from_json(nlohmann::json::parse(line));
        CHECK(p.steps.size() <= 5);
    }
    CHECK(line_count(slurp(tmp.file("run", "trace.jsonl"))) >= 25);

    CHECK(run_quiet({"--seed", "11", "--out", dir, "eval", "--method", "strmac", "--model",
                     tmp.file("run", "model.json"), "--data", data}) == 0);
    const nlohmann::json report = nlohmann::json::parse(slurp(tmp.file("run", "report.json")));
    CHECK(report.at("method") == "strmac");
    CHECK(report.at("per_task").size() == 25);
    CHECK(slurp(tmp.file("run", "report.txt")).find("Method") != std::string::npos);
    CHECK(slurp(tmp.file("run", "paths.svg")).rfind("<svg", 0) == 0);

    CHECK(run_quiet({"--seed", "11", "--out", dir, "eval", "--method", "bogus", "--data",
                     data}) == 2);
    CHECK(run_quiet({"--seed", "11", "--out", dir, "eval", "--method", "strmac", "--data",
                     data}) == 2); // no --model
    CHECK(run_quiet({"--seed", "11", "--out", dir, "eval", "--method", "fixed_chain", "--data",
                     data}) == 2); // no --order

    std::string out;
    CHECK(run_quiet({"--seed", "11", "--out", dir, "eval", "--method", "fixed_chain", "--order",
                     "2,0", "--data", data},
                    &out) == 0);
    CHECK(out.find("fixed_chain") != std::string::npos);

    CHECK(run_quiet({"--seed", "11", "--out", dir, "gradcheck", "--pairs", "3"}, &out) == 0);
    CHECK(out.find("PASS") != std::string::npos);
    const nlohmann::json gc = nlohmann::json::parse(slurp(tmp.file("run", "gradcheck.json")));
    CHECK(gc.at("pass") == true);
}

TEST_CASE("guided search needs a model and then respects k") {
    TempDir tmp("strmac_cli_guided");
    const std::string dir = tmp.sub("run");
    CHECK(run_quiet({"--seed", "21", "--out", dir, "gen", "--tasks", "15"}) == 0);
    const std::string data = tmp.file("run", "dataset.jsonl");
    CHECK(run_quiet({"--out", dir, "search", "--data", data, "--mode", "guided"}) == 2);
    CHECK(run_quiet({"--out", dir, "search", "--data", data, "--mode", "sideways"}) == 2);

    CHECK(run_quiet({"--out", dir, "search", "--data", data, "--mode", "pruned"}) == 0);
    write_text(tmp.sub("train.json"), "{\"epochs\": 2}\n");
    CHECK(run_quiet({"--seed", "21", "--config", tmp.sub("train.json"), "--out", dir, "train",
                     "--data", data, "--examples", tmp.file("run", "examples.jsonl")}) == 0);

    CHECK(run_quiet({"--out", dir, "search", "--data", data, "--mode", "guided", "--model",
                     tmp.file("run", "model.json"), "--k", "1"}) == 0);
    const nlohmann::json stats =
        nlohmann::json::parse(slurp(tmp.file("run", "search_stats.json")));
    CHECK(stats.at("mode") == "guided");
    CHECK(stats.at("k") == 1);
    CHECK(run_quiet({"--out", dir, "search", "--data", data, "--mode", "guided", "--model",
                     tmp.file("run", "model.json"), "--k", "9"}) == 2);
}

TEST_CASE("evolve writes the model and a per-round report") {
    TempDir tmp("strmac_cli_evolve");
    const std::string dir = tmp.sub("run");
    CHECK(run_quiet({"--seed", "31", "--out", tmp.sub("tr"), "gen", "--tasks", "30"}) == 0);
    CHECK(run_quiet({"--seed", "31", "--out", tmp.sub("ho"), "gen", "--tasks", "10",
                     "--task-offset", "30"}) == 0);
    write_text(tmp.sub("pipe.json"),
               "{\"rounds\": 2, \"bootstrap_fraction\": 0.4, \"train\": {\"epochs\": 2}}\n");
    CHECK(run_quiet({"--seed", "31", "--config", tmp.sub("pipe.json"), "--out", dir, "evolve",
                     "--train-data", tmp.file("tr", "dataset.jsonl"), "--heldout-data",
                     tmp.file("ho", "dataset.jsonl")}) == 0);
    CHECK_NOTHROW(load_router(tmp.file("run", "model.json")));
    const nlohmann::json rounds = nlohmann::json::parse(slurp(tmp.file("run", "rounds.json")));
    REQUIRE(rounds.at("rounds").size() == 2);
    CHECK(rounds.at("rounds")[0].at("round") == 1);
    CHECK(rounds.at("rounds")[1].at("cumulative_examples").get<std::int64_t>() >
          rounds.at("rounds")[0].at("cumulative_examples").get<std::int64_t>());
    CHECK(rounds.at("overall_mean_paths_evaluated").get<double>() > 0.0);
}

TEST_CASE("identical seeds reproduce every artifact byte for byte") {
    TempDir tmp("strmac_cli_repro");
    write_text(tmp.sub("train.json"), "{\"epochs\": 2}\n");
    for (const std::string run : {"r1", "r2"}) {
        const std::string dir = tmp.sub(run);
        REQUIRE(run_quiet({"--seed", "77", "--out", dir, "gen", "--tasks", "20"}) == 0);
        const std::string data = tmp.file(run, "dataset.jsonl");
        REQUIRE(run_quiet({"--out", dir, "search", "--data", data, "--mode", "pruned"}) == 0);
        REQUIRE(run_quiet({"--seed", "77", "--config", tmp.sub("train.json"), "--out", dir,
                           "train", "--data", data, "--examples",
                           tmp.file(run, "examples.jsonl")}) == 0);
        REQUIRE(run_quiet({"--out", dir, "infer", "--model", tmp.file(run, "model.json"),
                           "--data", data}) == 0);
        REQUIRE(run_quiet({"--seed", "77", "--out", dir, "eval", "--method", "strmac",
                           "--model", tmp.file(run, "model.json"), "--data", data}) == 0);
    }
    for (const std::string name :
         {"dataset.jsonl", "harvest.jsonl", "examples.jsonl", "search_stats.json", "model.json",
          "loss.csv", "paths.jsonl", "trace.jsonl", "report.json", "report.txt", "paths.svg"})
        CHECK(slurp(tmp.file("r1", name)) == slurp(tmp.file("r2", name)));
}
