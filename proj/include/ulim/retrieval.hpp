#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ulim/datamodel.hpp"
#include "ulim/dual_interest.hpp"
#include "ulim/pgin.hpp"

namespace ulim {

enum class SearchMode { exact, ivf };
SearchMode parse_search_mode(const std::string& s);

// One index partition: either a single category's items or the full catalog.
struct CategoryIndex {
  Id category = -1;  // -1 for the global index
  std::vector<Id> items;
  Tensor embeddings;  // items.size() x d, frozen item-tower outputs
  // IVF structure
  Tensor centroids;  // nlist x d
  std::vector<std::vector<std::size_t>> postings;  // row indices per centroid

  std::size_t size() const { return items.size(); }
  std::size_t nlist() const { return centroids.rows(); }
};

struct IndexSet {
  std::map<Id, CategoryIndex> by_category;
  CategoryIndex global;
  std::size_t d = 0;

  void save(const std::filesystem::path& dir, const std::string& meta_json) const;
  static IndexSet load(const std::filesystem::path& dir);
  static std::string load_meta(const std::filesystem::path& dir);
};

IndexSet build_indexes(const ParamStore& params, const Catalog& catalog,
                       const DualConfig& cfg, std::uint64_t seed);

struct ScoredItem {
  Id item = 0;
  double score = 0.0;
  int source = -1;  // 0..K-1: long-term slot, K: short-term/global
};

// Top-n by inner product, ties broken by lower item id. If n exceeds the index
// size, returns everything and sets *truncated.
std::vector<ScoredItem> search(const CategoryIndex& index, const Tensor& query,
                               std::size_t n, SearchMode mode, std::size_t nprobe,
                               bool* truncated = nullptr);

struct RetrievalConfig {
  std::size_t k = 2;  // predicted categories / long-term slots
  SearchMode mode = SearchMode::exact;
  std::size_t nprobe = 4;
  bool quota_disabled = false;  // per-source depth n_total, no merge truncation
};

struct RetrievalResult {
  std::vector<ScoredItem> items;  // unique, score-descending
  std::vector<Id> predicted_categories;
  std::size_t requested = 0;
  bool global_only_fallback = false;
};

struct ServingModels {
  const ParamStore* dual_params = nullptr;
  const DualConfig* dual_cfg = nullptr;
  const ParamStore* pgin_params = nullptr;
  const PginConfig* pgin_cfg = nullptr;
};

RetrievalResult cascaded_retrieve(const UserHistory& history, Id user_id,
                                  const ServingModels& models, const IndexSet& indexes,
                                  const Catalog& catalog, const RetrievalConfig& cfg,
                                  std::size_t n_total);

struct BenchRow {
  std::string kind;  // "search" or "cascade"
  std::string mode;
  std::size_t nprobe = 0;
  std::size_t k = 0;
  double p50_ms = 0, p95_ms = 0, p99_ms = 0;
  double recall100 = 0;
};

std::vector<BenchRow> bench_serving(const IndexSet& indexes, const ServingModels& models,
                                    const Catalog& catalog,
                                    const std::vector<const UserHistory*>& query_users,
                                    const std::vector<std::size_t>& nprobes,
                                    const std::vector<std::size_t>& k_values);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path);

}  // namespace ulim
