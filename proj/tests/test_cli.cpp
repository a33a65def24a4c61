#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kBin = ULIM_BIN;

struct RunResult {
  int exit_code = -1;
  std::string stdout_text;
};

// Runs the CLI with stdout captured to a file; stderr flows through.
RunResult run(const std::string& args) {
  static int counter = 0;
  fs::path out = fs::temp_directory_path() / ("ulim_cli_out_" + std::to_string(counter++));
  int raw = std::system((kBin + " " + args + " > " + out.string()).c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out);
  std::ostringstream ss;
  ss << in.rdbuf();
  r.stdout_text = ss.str();
  fs::remove(out);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
}

// One pipeline workspace shared by the whole suite; built on first use.
const fs::path& workspace() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "ulim_cli_ws";
    fs::remove_all(d);
    fs::create_directories(d);
    spit(d / "gen.json",
         R"({"n_users": 12, "n_items": 80, "n_categories": 5, "seq_len": 25,
             "interests_per_user": 2, "persistence": 0.85, "popularity_skew": 1.0,
             "seed": 3})");
    spit(d / "dual.json",
         R"({"d": 8, "heads": 2, "short_window": 10, "long_max": 200, "alpha": 0.5,
             "beta": 0.5, "lr": 0.01, "batch_size": 8, "negatives": 8, "epochs": 1,
             "targets_per_user": 1, "use_positions": false,
             "global_short_negatives": false, "self_attention_long": false, "seed": 3})");
    spit(d / "pgin.json",
         R"({"d": 8, "heads": 2, "short_window": 10, "long_max": 200, "lr": 0.01,
             "batch_size": 8, "epochs": 1, "targets_per_user": 1, "seed": 3})");
    return d;
  }();
  return dir;
}

std::string q(const fs::path& p) { return " " + p.string(); }

}  // namespace

TEST_CASE("help and argument errors") {
  CHECK(run("--help").exit_code == 0);
  CHECK(run("--help").stdout_text.find("gen-data") != std::string::npos);
  CHECK(run("no-such-command").exit_code == 2);
  CHECK(run("").exit_code == 2);                       // missing subcommand
  CHECK(run("gen-data").exit_code == 2);               // missing required --out
  CHECK(run("gen-data --bogus x --out /tmp/x").exit_code == 2);
}

TEST_CASE("full pipeline runs clean") {
  const fs::path& ws = workspace();
  CHECK(run("gen-data --config" + q(ws / "gen.json") + " --out" + q(ws / "data"))
            .exit_code == 0);
  CHECK(fs::exists(ws / "data" / "events.jsonl"));
  CHECK(fs::exists(ws / "data" / "catalog.jsonl"));
  CHECK(fs::exists(ws / "data" / "test.jsonl"));

  CHECK(run("train --data" + q(ws / "data") + " --config" + q(ws / "dual.json") +
            " --out" + q(ws / "dual_model"))
            .exit_code == 0);
  CHECK(fs::exists(ws / "dual_model" / "header.json"));
  json meta = json::parse(slurp(ws / "dual_model" / "header.json"));
  CHECK(meta.at("meta").at("kind") == "dual");
  CHECK(meta.at("meta").at("config").at("d") == 8);

  CHECK(run("train-pgin --data" + q(ws / "data") + " --config" + q(ws / "pgin.json") +
            " --out" + q(ws / "pgin_model"))
            .exit_code == 0);
  CHECK(run("build-index --model" + q(ws / "dual_model") + " --catalog" + q(ws / "data") +
            " --out" + q(ws / "index") + " --seed 9")
            .exit_code == 0);
  CHECK(fs::exists(ws / "index" / "manifest.json"));
}

TEST_CASE("retrieve emits a valid ranked result") {
  const fs::path& ws = workspace();
  std::string serve = " --data" + q(ws / "data") + " --dual-model" + q(ws / "dual_model") +
                      " --pgin-model" + q(ws / "pgin_model") + " --index" + q(ws / "index");
  RunResult r = run("retrieve" + serve + " --user 0 --k 2 --n 15");
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.stdout_text);
  CHECK(j.at("user_id") == 0);
  CHECK(j.at("predicted_categories").size() == 2);
  auto items = j.at("items");
  REQUIRE(!items.empty());
  CHECK(items.size() <= 15);
  for (std::size_t i = 1; i < items.size(); ++i)
    CHECK(items[i - 1].at("score").get<double>() >= items[i].at("score").get<double>());

  CHECK(run("retrieve" + serve + " --user 9999 --k 2 --n 15").exit_code == 1);
  CHECK(run("retrieve" + serve + " --user 0 --mode bogus").exit_code == 1);
}

TEST_CASE("predict-cats reports categories and blend weight") {
  const fs::path& ws = workspace();
  RunResult r = run("predict-cats --data" + q(ws / "data") + " --model" +
                    q(ws / "pgin_model") + " --user 1 --k 3");
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.stdout_text);
  CHECK(j.at("categories").size() == 3);
  double p = j.at("p_poi").get<double>();
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
  CHECK(j.at("y_hat_topk").size() == 3);
  double prev = 1.0;
  for (const auto& e : j.at("y_hat_topk")) {
    double prob = e.at("p").get<double>();
    CHECK(prob <= prev + 1e-12);
    prev = prob;
  }

  // the dual model directory is not a category model
  CHECK(run("predict-cats --data" + q(ws / "data") + " --model" + q(ws / "dual_model") +
            " --user 1 --k 3")
            .exit_code == 1);
}

TEST_CASE("eval, ablate, sweep-k, and bench write their CSVs") {
  const fs::path& ws = workspace();
  spit(ws / "spec.json",
       R"({"variants": ["ulim", "short-only-baseline"], "cutoffs": [20, 40], "k": 1,
           "mode": "exact", "nprobe": 4, "measure_latency": false})");
  CHECK(run("eval --data" + q(ws / "data") + " --config" + q(ws / "dual.json") +
            " --pgin-config" + q(ws / "pgin.json") + " --spec" + q(ws / "spec.json") +
            " --out" + q(ws / "metrics.csv"))
            .exit_code == 0);
  std::string metrics = slurp(ws / "metrics.csv");
  CHECK(metrics.rfind("variant,k,cutoff,hr,p50_ms,p95_ms\n", 0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 5);  // header + 4 rows

  std::string serve = " --data" + q(ws / "data") + " --dual-model" + q(ws / "dual_model") +
                      " --pgin-model" + q(ws / "pgin_model") + " --index" + q(ws / "index");
  CHECK(run("sweep-k" + serve + " --ks 0,1,2 --cutoff 30 --out" + q(ws / "sweep.csv"))
            .exit_code == 0);
  std::string sweep = slurp(ws / "sweep.csv");
  CHECK(sweep.rfind("k,hr,mean_latency_ms\n", 0) == 0);
  CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 4);

  CHECK(run("bench" + serve + " --nprobes 1,2 --ks 0,1 --out" + q(ws / "bench.csv"))
            .exit_code == 0);
  CHECK(slurp(ws / "bench.csv")
            .rfind("kind,mode,nprobe,k,p50_ms,p95_ms,p99_ms,recall100\n", 0) == 0);

  CHECK(run("sweep-k" + serve + " --ks bogus --out" + q(ws / "x.csv")).exit_code == 1);
}

TEST_CASE("reruns with identical inputs are byte-identical") {
  const fs::path& ws = workspace();
  // regenerate the dataset and retrain into fresh directories
  REQUIRE(run("gen-data --config" + q(ws / "gen.json") + " --out" + q(ws / "data2"))
              .exit_code == 0);
  for (const char* f : {"events.jsonl", "catalog.jsonl", "test.jsonl"})
    CHECK(slurp(ws / "data" / f) == slurp(ws / "data2" / f));

  REQUIRE(run("train --data" + q(ws / "data") + " --config" + q(ws / "dual.json") +
              " --out" + q(ws / "dual_model2"))
              .exit_code == 0);
  for (const auto& entry : fs::directory_iterator(ws / "dual_model")) {
    fs::path other = ws / "dual_model2" / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(entry.path()) == slurp(other));
  }

  std::string serve = " --data" + q(ws / "data") + " --dual-model" + q(ws / "dual_model") +
                      " --pgin-model" + q(ws / "pgin_model") + " --index" + q(ws / "index");
  RunResult a = run("retrieve" + serve + " --user 2 --k 2 --n 20");
  RunResult b = run("retrieve" + serve + " --user 2 --k 2 --n 20");
  CHECK(a.stdout_text == b.stdout_text);

  REQUIRE(run("sweep-k" + serve + " --ks 0,1 --cutoff 30 --out" + q(ws / "sweep_b.csv"))
              .exit_code == 0);
  REQUIRE(run("sweep-k" + serve + " --ks 0,1 --cutoff 30 --out" + q(ws / "sweep_c.csv"))
              .exit_code == 0);
  CHECK(slurp(ws / "sweep_b.csv") == slurp(ws / "sweep_c.csv"));
}

TEST_CASE("ULIM_LOG validation and verbosity") {
  const fs::path& ws = workspace();
  std::string cmd = "ULIM_LOG=bogus " + kBin + " gen-data --config" + q(ws / "gen.json") +
                    " --out" + q(ws / "data3") + " 2> /dev/null";
  int raw = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(raw) == 1);

  fs::path errfile = ws / "stderr.txt";
  cmd = "ULIM_LOG=info " + kBin + " gen-data --config" + q(ws / "gen.json") + " --out" +
        q(ws / "data3") + " 2>" + errfile.string();
  raw = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(raw) == 0);
  CHECK(slurp(errfile).find("[info]") != std::string::npos);
}
