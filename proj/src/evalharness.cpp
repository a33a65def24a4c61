#include "ulim/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>

namespace ulim {

namespace fs = std::filesystem;

double hit_rate_at(const std::vector<TestResult>& results, std::size_t n) {
  if (results.empty()) throw ConfigError("hit_rate_at: empty test set");
  if (n == 0) throw ConfigError("hit_rate_at: cutoff must be >= 1");
  std::size_t hits = 0;
  for (const TestResult& r : results) {
    const std::size_t depth = std::min(n, r.ranked.size());
    for (std::size_t i = 0; i < depth; ++i)
      if (r.ranked[i].item == r.held_out_item) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

Variant parse_variant(const std::string& s) {
  if (s == "ulim") return Variant::ulim;
  if (s == "ulim-half-sequence") return Variant::half_sequence;
  if (s == "ulim-self-attention") return Variant::self_attention;
  if (s == "short-only-baseline") return Variant::short_only;
  throw ConfigError("unknown variant '" + s + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::ulim: return "ulim";
    case Variant::half_sequence: return "ulim-half-sequence";
    case Variant::self_attention: return "ulim-self-attention";
    case Variant::short_only: return "short-only-baseline";
  }
  throw ConfigError("bad variant");
}

DualConfig apply_variant(DualConfig base, Variant v) {
  switch (v) {
    case Variant::ulim:
      break;
    case Variant::half_sequence:
      base.long_max = std::max<std::size_t>(1, base.long_max / 2);
      break;
    case Variant::self_attention:
      base.self_attention_long = true;
      break;
    case Variant::short_only:
      // Stand-in for a single-vector two-tower baseline: short loss only,
      // negatives from the full catalog, serving is global-only (K = 0).
      base.alpha = 0.0;
      base.beta = 1.0;
      base.global_short_negatives = true;
      break;
  }
  return base;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "variant,k,cutoff,hr,p50_ms,p95_ms\n";
  for (const MetricsRow& r : rows)
    out << r.variant << "," << r.k << "," << r.cutoff << "," << r.hr << "," << r.p50_ms
        << "," << r.p95_ms << "\n";
  if (!out) throw IngestError("failed to write " + path.string());
}

std::vector<TestResult> evaluate_retrieval(const Dataset& data, const ServingModels& models,
                                           const IndexSet& indexes,
                                           const RetrievalConfig& rcfg, std::size_t depth,
                                           double* mean_latency_ms) {
  std::map<Id, const UserHistory*> by_user;
  for (const UserHistory& u : data.users) by_user[u.user_id] = &u;
  std::vector<TestResult> results;
  double total_ms = 0.0;
  for (const BehaviorEvent& pair : data.test_pairs) {
    auto it = by_user.find(pair.user_id);
    if (it == by_user.end() || it->second->events.empty()) continue;
    auto t0 = std::chrono::steady_clock::now();
    RetrievalResult r = cascaded_retrieve(*it->second, pair.user_id, models, indexes,
                                          data.catalog, rcfg, depth);
    total_ms +=
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    results.push_back({pair.item_id, std::move(r.items)});
  }
  if (results.empty()) throw ConfigError("evaluate_retrieval: no evaluable test pairs");
  if (mean_latency_ms)
    *mean_latency_ms = total_ms / static_cast<double>(results.size());
  return results;
}

std::vector<MetricsRow> run_experiment(const Dataset& data, const DualConfig& dual_cfg,
                                       const PginConfig& pgin_cfg,
                                       const ExperimentSpec& spec) {
  PginTrainResult pgin = train_pgin(data, pgin_cfg);
  const std::size_t depth = *std::max_element(spec.cutoffs.begin(), spec.cutoffs.end());

  std::vector<MetricsRow> rows;
  for (Variant v : spec.variants) {
    DualConfig vcfg = apply_variant(dual_cfg, v);
    DualTrainResult dual = train_dual(data, vcfg);
    IndexSet indexes = build_indexes(dual.params, data.catalog, vcfg, vcfg.seed);
    ServingModels models{&dual.params, &vcfg, &pgin.params, &pgin_cfg};
    RetrievalConfig rcfg;
    rcfg.k = (v == Variant::short_only) ? 0 : spec.k;
    rcfg.mode = spec.mode;
    rcfg.nprobe = spec.nprobe;
    double mean_ms = 0.0;
    auto results = evaluate_retrieval(data, models, indexes, rcfg, depth,
                                      spec.measure_latency ? &mean_ms : nullptr);
    for (std::size_t cutoff : spec.cutoffs) {
      MetricsRow row;
      row.variant = variant_name(v);
      row.k = rcfg.k;
      row.cutoff = cutoff;
      row.hr = hit_rate_at(results, cutoff);
      row.p50_ms = spec.measure_latency ? mean_ms : 0.0;
      row.p95_ms = 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<SweepRow> sweep_k(const Dataset& data, const ServingModels& models,
                              const IndexSet& indexes, const std::vector<std::size_t>& ks,
                              std::size_t cutoff, bool measure_latency) {
  std::vector<SweepRow> rows;
  for (std::size_t k : ks) {
    RetrievalConfig rcfg;
    rcfg.k = k;
    rcfg.mode = SearchMode::exact;
    rcfg.quota_disabled = true;
    double mean_ms = 0.0;
    auto results = evaluate_retrieval(data, models, indexes, rcfg, cutoff,
                                      measure_latency ? &mean_ms : nullptr);
    // Quota disabled: a hit is membership in the union of per-source top-cutoff
    // lists, so the candidate set (and HR) is monotone in K.
    std::size_t hits = 0;
    for (const TestResult& r : results)
      for (const ScoredItem& s : r.ranked)
        if (s.item == r.held_out_item) {
          ++hits;
          break;
        }
    SweepRow row;
    row.k = k;
    row.hr = static_cast<double>(hits) / static_cast<double>(results.size());
    row.mean_latency_ms = mean_ms;
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "k,hr,mean_latency_ms\n";
  for (const SweepRow& r : rows)
    out << r.k << "," << r.hr << "," << r.mean_latency_ms << "\n";
  if (!out) throw IngestError("failed to write " + path.string());
}

}  // namespace ulim
