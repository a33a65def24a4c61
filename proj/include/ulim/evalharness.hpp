#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ulim/retrieval.hpp"

namespace ulim {

// One ranked retrieval per held-out test pair.
struct TestResult {
  Id held_out_item = 0;
  std::vector<ScoredItem> ranked;
};

double hit_rate_at(const std::vector<TestResult>& results, std::size_t n);

enum class Variant { ulim, half_sequence, self_attention, short_only };
Variant parse_variant(const std::string& s);
std::string variant_name(Variant v);

DualConfig apply_variant(DualConfig base, Variant v);

struct MetricsRow {
  std::string variant;
  std::size_t k = 0;
  std::size_t cutoff = 0;
  double hr = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
};

void write_metrics_csv(const std::vector<MetricsRow>& rows,
                       const std::filesystem::path& path);

struct ExperimentSpec {
  std::vector<Variant> variants = {Variant::ulim, Variant::half_sequence,
                                   Variant::self_attention, Variant::short_only};
  std::vector<std::size_t> cutoffs = {50, 100, 200};
  std::size_t k = 2;
  SearchMode mode = SearchMode::exact;
  std::size_t nprobe = 4;
  bool measure_latency = false;
};

// Trains the dual model per variant (PGIN once, shared), builds indexes,
// retrieves for every test pair, reports HR per cutoff.
std::vector<MetricsRow> run_experiment(const Dataset& data, const DualConfig& dual_cfg,
                                       const PginConfig& pgin_cfg,
                                       const ExperimentSpec& spec);

// Per-test retrievals for pre-trained models.
std::vector<TestResult> evaluate_retrieval(const Dataset& data, const ServingModels& models,
                                           const IndexSet& indexes,
                                           const RetrievalConfig& rcfg, std::size_t depth,
                                           double* mean_latency_ms = nullptr);

struct SweepRow {
  std::size_t k = 0;
  double hr = 0.0;
  double mean_latency_ms = 0.0;
};

// K-sensitivity with per-source quota disabled (per-source depth = cutoff, no
// merge truncation), so the candidate set is monotone in K.
std::vector<SweepRow> sweep_k(const Dataset& data, const ServingModels& models,
                              const IndexSet& indexes, const std::vector<std::size_t>& ks,
                              std::size_t cutoff, bool measure_latency);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace ulim
