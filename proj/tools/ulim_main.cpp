// Command-line front end: data generation, training, index building, serving,
// and evaluation as one subcommand per process.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ulim/evalharness.hpp"

using namespace ulim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("ULIM_LOG");
  if (!env) return LogLevel::error;
  std::string s(env);
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  if (s == "error" || s.empty()) return LogLevel::error;
  throw ConfigError("ULIM_LOG must be one of error|info|debug, got '" + s + "'");
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[info] " << msg << "\n";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

DualConfig dual_config_from(const std::string& config_path) {
  if (config_path.empty()) return DualConfig{};
  return DualConfig::from_json(read_file(config_path));
}

PginConfig pgin_config_from(const std::string& config_path) {
  if (config_path.empty()) return PginConfig{};
  return PginConfig::from_json(read_file(config_path));
}

DualConfig load_dual_model_config(const fs::path& dir) {
  json meta = json::parse(ParamStore::load_meta(dir));
  if (meta.value("kind", "") != "dual")
    throw ConfigError(dir.string() + " does not hold an interest model");
  return DualConfig::from_json(meta.at("config").dump());
}

PginConfig load_pgin_model_config(const fs::path& dir) {
  json meta = json::parse(ParamStore::load_meta(dir));
  if (meta.value("kind", "") != "pgin")
    throw ConfigError(dir.string() + " does not hold a category model");
  return PginConfig::from_json(meta.at("config").dump());
}

const UserHistory& find_user(const Dataset& data, Id user) {
  for (const UserHistory& u : data.users)
    if (u.user_id == user) return u;
  throw LookupError("unknown user id " + std::to_string(user));
}

// Shared serving bundle loaded from disk.
struct LoadedServing {
  Dataset data;
  ParamStore dual_params;
  DualConfig dual_cfg;
  ParamStore pgin_params;
  PginConfig pgin_cfg;
  IndexSet indexes;

  ServingModels models() const {
    return ServingModels{&dual_params, &dual_cfg, &pgin_params, &pgin_cfg};
  }
};

LoadedServing load_serving(const std::string& data_dir, const std::string& dual_dir,
                           const std::string& pgin_dir, const std::string& index_dir) {
  LoadedServing s;
  s.data = load_dataset(data_dir);
  s.dual_params = ParamStore::load(dual_dir);
  s.dual_cfg = load_dual_model_config(dual_dir);
  s.pgin_params = ParamStore::load(pgin_dir);
  s.pgin_cfg = load_pgin_model_config(pgin_dir);
  s.indexes = IndexSet::load(index_dir);
  return s;
}

std::vector<std::size_t> parse_size_list(const std::string& csv, const char* flag) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t comma = csv.find(',', start);
    std::string tok = csv.substr(start, comma == std::string::npos ? csv.size() - start
                                                                   : comma - start);
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": bad list entry '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
  return out;
}

ExperimentSpec spec_from_json(const std::string& path) {
  ExperimentSpec spec;
  if (path.empty()) return spec;
  json j = json::parse(read_file(path));
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "variants") {
      spec.variants.clear();
      for (const auto& v : it.value()) spec.variants.push_back(parse_variant(v));
    } else if (key == "cutoffs") {
      spec.cutoffs = it.value().get<std::vector<std::size_t>>();
    } else if (key == "k") {
      spec.k = it.value().get<std::size_t>();
    } else if (key == "mode") {
      spec.mode = parse_search_mode(it.value());
    } else if (key == "nprobe") {
      spec.nprobe = it.value().get<std::size_t>();
    } else if (key == "measure_latency") {
      spec.measure_latency = it.value().get<bool>();
    } else {
      throw ConfigError("experiment spec: unknown key '" + key + "'");
    }
  }
  if (spec.variants.empty() || spec.cutoffs.empty())
    throw ConfigError("experiment spec: variants and cutoffs must be non-empty");
  return spec;
}

json scored_to_json(const std::vector<ScoredItem>& items) {
  json arr = json::array();
  for (const ScoredItem& s : items)
    arr.push_back({{"item_id", s.item}, {"score", s.score}, {"source", s.source}});
  return arr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-aware dual-interest retrieval toolkit"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_config, gd_out;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic click dataset");
  gen->add_option("--config", gd_config, "Generator config JSON");
  gen->add_option("--out", gd_out, "Output dataset directory")->required();

  // train
  std::string tr_data, tr_config, tr_out;
  CLI::App* train = app.add_subcommand("train", "Train the dual-interest model");
  train->add_option("--data", tr_data, "Dataset directory")->required();
  train->add_option("--config", tr_config, "Training config JSON");
  train->add_option("--out", tr_out, "Model output directory")->required();

  // train-pgin
  std::string tp_data, tp_config, tp_out;
  CLI::App* train_p = app.add_subcommand("train-pgin", "Train the next-category model");
  train_p->add_option("--data", tp_data, "Dataset directory")->required();
  train_p->add_option("--config", tp_config, "Training config JSON");
  train_p->add_option("--out", tp_out, "Model output directory")->required();

  // build-index
  std::string bi_model, bi_catalog, bi_out;
  std::uint64_t bi_seed = 1;
  CLI::App* build = app.add_subcommand("build-index", "Build per-category ANN indexes");
  build->add_option("--model", bi_model, "Dual-interest model directory")->required();
  build->add_option("--catalog", bi_catalog, "Dataset directory holding the catalog")
      ->required();
  build->add_option("--out", bi_out, "Index output directory")->required();
  build->add_option("--seed", bi_seed, "Clustering seed");

  // retrieve
  std::string rt_data, rt_dual, rt_pgin, rt_index, rt_mode = "exact";
  Id rt_user = 0;
  std::size_t rt_k = 2, rt_n = 100, rt_nprobe = 4;
  bool rt_no_quota = false;
  CLI::App* retrieve = app.add_subcommand("retrieve", "Run one cascaded retrieval");
  retrieve->add_option("--data", rt_data, "Dataset directory")->required();
  retrieve->add_option("--dual-model", rt_dual, "Dual-interest model directory")
      ->required();
  retrieve->add_option("--pgin-model", rt_pgin, "Category model directory")->required();
  retrieve->add_option("--index", rt_index, "Index directory")->required();
  retrieve->add_option("--user", rt_user, "User id")->required();
  retrieve->add_option("--k", rt_k, "Predicted categories / long-term searches");
  retrieve->add_option("--n", rt_n, "Total results requested");
  retrieve->add_option("--mode", rt_mode, "exact or ivf");
  retrieve->add_option("--nprobe", rt_nprobe, "IVF probe count");
  retrieve->add_flag("--quota-disabled", rt_no_quota,
                     "Full depth per source, no merge truncation");

  // predict-cats
  std::string pc_data, pc_model;
  Id pc_user = 0;
  std::size_t pc_k = 2;
  CLI::App* predict = app.add_subcommand("predict-cats", "Predict a user's next categories");
  predict->add_option("--data", pc_data, "Dataset directory")->required();
  predict->add_option("--model", pc_model, "Category model directory")->required();
  predict->add_option("--user", pc_user, "User id")->required();
  predict->add_option("--k", pc_k, "Number of categories");

  // bench
  std::string bn_data, bn_dual, bn_pgin, bn_index, bn_load, bn_out;
  std::string bn_nprobes = "1,4,16", bn_ks = "0,1,2";
  CLI::App* bench = app.add_subcommand("bench", "Benchmark search and cascade latency");
  bench->add_option("--data", bn_data, "Dataset directory")->required();
  bench->add_option("--dual-model", bn_dual, "Dual-interest model directory")->required();
  bench->add_option("--pgin-model", bn_pgin, "Category model directory")->required();
  bench->add_option("--index", bn_index, "Index directory")->required();
  bench->add_option("--load", bn_load, "Optional queries.jsonl with {\"user_id\":...}");
  bench->add_option("--nprobes", bn_nprobes, "Comma-separated IVF probe counts");
  bench->add_option("--ks", bn_ks, "Comma-separated category counts");
  bench->add_option("--out", bn_out, "Output CSV path")->required();

  // eval / ablate (same engine; ablate pins all variants)
  std::string ev_data, ev_spec, ev_dual_cfg, ev_pgin_cfg, ev_out;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Train per variant and report hit rates");
  CLI::App* ablate = app.add_subcommand("ablate", "Run the full ablation grid");
  for (CLI::App* cmd : {eval_cmd, ablate}) {
    cmd->add_option("--data", ev_data, "Dataset directory")->required();
    cmd->add_option("--config", ev_dual_cfg, "Dual-interest training config JSON");
    cmd->add_option("--pgin-config", ev_pgin_cfg, "Category model training config JSON");
    cmd->add_option("--out", ev_out, "Output CSV path")->required();
  }
  eval_cmd->add_option("--spec", ev_spec, "Experiment spec JSON");

  // sweep-k
  std::string sw_data, sw_dual, sw_pgin, sw_index, sw_ks = "1,2,4,8", sw_out;
  std::size_t sw_cutoff = 200;
  bool sw_latency = false;
  CLI::App* sweep = app.add_subcommand("sweep-k", "Hit rate as a function of k");
  sweep->add_option("--data", sw_data, "Dataset directory")->required();
  sweep->add_option("--dual-model", sw_dual, "Dual-interest model directory")->required();
  sweep->add_option("--pgin-model", sw_pgin, "Category model directory")->required();
  sweep->add_option("--index", sw_index, "Index directory")->required();
  sweep->add_option("--ks", sw_ks, "Comma-separated k values");
  sweep->add_option("--cutoff", sw_cutoff, "Hit-rate cutoff");
  sweep->add_flag("--measure-latency", sw_latency, "Record mean retrieval latency");
  sweep->add_option("--out", sw_out, "Output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    log_level();  // validate ULIM_LOG up front

    if (gen->parsed()) {
      SynthConfig cfg =
          gd_config.empty() ? SynthConfig{} : SynthConfig::from_json_file(gd_config);
      SynthData data = synth_generate(cfg);
      write_dataset(data, gd_out, cfg);
      log_info("wrote dataset with " + std::to_string(data.users.size()) + " users to " +
               gd_out);
    } else if (train->parsed()) {
      Dataset data = load_dataset(tr_data);
      DualConfig cfg = dual_config_from(tr_config);
      DualTrainResult result = train_dual(data, cfg);
      json meta = {{"kind", "dual"},
                   {"config", json::parse(cfg.to_json())},
                   {"epoch_losses", result.epoch_losses}};
      result.params.save(tr_out, meta.dump());
      log_info("final epoch loss " + std::to_string(result.epoch_losses.back()));
    } else if (train_p->parsed()) {
      Dataset data = load_dataset(tp_data);
      PginConfig cfg = pgin_config_from(tp_config);
      PginTrainResult result = train_pgin(data, cfg);
      json meta = {{"kind", "pgin"},
                   {"config", json::parse(cfg.to_json())},
                   {"epoch_losses", result.epoch_losses}};
      result.params.save(tp_out, meta.dump());
      log_info("final epoch loss " + std::to_string(result.epoch_losses.back()));
    } else if (build->parsed()) {
      Dataset data = load_dataset(bi_catalog);
      ParamStore params = ParamStore::load(bi_model);
      DualConfig cfg = load_dual_model_config(bi_model);
      IndexSet indexes = build_indexes(params, data.catalog, cfg, bi_seed);
      json meta = {{"kind", "index"}, {"seed", bi_seed}};
      indexes.save(bi_out, meta.dump());
      log_info("built " + std::to_string(indexes.by_category.size()) +
               " category indexes plus the global index");
    } else if (retrieve->parsed()) {
      LoadedServing s = load_serving(rt_data, rt_dual, rt_pgin, rt_index);
      RetrievalConfig rcfg{rt_k, parse_search_mode(rt_mode), rt_nprobe, rt_no_quota};
      const UserHistory& user = find_user(s.data, rt_user);
      RetrievalResult r = cascaded_retrieve(user, rt_user, s.models(), s.indexes,
                                            s.data.catalog, rcfg, rt_n);
      json out = {{"user_id", rt_user},
                  {"predicted_categories", r.predicted_categories},
                  {"global_only_fallback", r.global_only_fallback},
                  {"items", scored_to_json(r.items)}};
      std::cout << out.dump(2) << "\n";
    } else if (predict->parsed()) {
      Dataset data = load_dataset(pc_data);
      ParamStore params = ParamStore::load(pc_model);
      PginConfig cfg = load_pgin_model_config(pc_model);
      const UserHistory& user = find_user(data, pc_user);
      PginOutput out = pgin_forward(user, pc_user, data.catalog.n_categories(), params, cfg);
      std::vector<Id> cats = predict_topk(
          out.y_hat, std::min(pc_k, static_cast<std::size_t>(data.catalog.n_categories())));
      json topk = json::array();
      for (Id c : cats)
        topk.push_back({{"category_id", c}, {"p", out.y_hat[static_cast<std::size_t>(c)]}});
      json j = {{"user_id", pc_user},
                {"categories", cats},
                {"p_poi", out.p_poi},
                {"y_hat_topk", topk}};
      std::cout << j.dump(2) << "\n";
    } else if (bench->parsed()) {
      LoadedServing s = load_serving(bn_data, bn_dual, bn_pgin, bn_index);
      std::vector<const UserHistory*> users;
      if (bn_load.empty()) {
        for (const UserHistory& u : s.data.users) users.push_back(&u);
      } else {
        std::ifstream in(bn_load);
        if (!in) throw IngestError("cannot read " + bn_load);
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          users.push_back(&find_user(s.data, json::parse(line).at("user_id").get<Id>()));
        }
        if (users.empty()) throw IngestError(bn_load + " holds no queries");
      }
      auto rows = bench_serving(s.indexes, s.models(), s.data.catalog, users,
                                parse_size_list(bn_nprobes, "--nprobes"),
                                parse_size_list(bn_ks, "--ks"));
      write_bench_csv(rows, bn_out);
      log_info("wrote " + std::to_string(rows.size()) + " bench rows to " + bn_out);
    } else if (eval_cmd->parsed() || ablate->parsed()) {
      Dataset data = load_dataset(ev_data);
      DualConfig dual_cfg = dual_config_from(ev_dual_cfg);
      PginConfig pgin_cfg = pgin_config_from(ev_pgin_cfg);
      ExperimentSpec spec = spec_from_json(eval_cmd->parsed() ? ev_spec : "");
      if (ablate->parsed())
        spec.variants = {Variant::ulim, Variant::half_sequence, Variant::self_attention,
                         Variant::short_only};
      auto rows = run_experiment(data, dual_cfg, pgin_cfg, spec);
      write_metrics_csv(rows, ev_out);
      log_info("wrote " + std::to_string(rows.size()) + " metric rows to " + ev_out);
    } else if (sweep->parsed()) {
      LoadedServing s = load_serving(sw_data, sw_dual, sw_pgin, sw_index);
      auto rows = sweep_k(s.data, s.models(), s.indexes,
                          parse_size_list(sw_ks, "--ks"), sw_cutoff, sw_latency);
      write_sweep_csv(rows, sw_out);
      log_info("wrote " + std::to_string(rows.size()) + " sweep rows to " + sw_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
