#include "ulim/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include "json.hpp"
#include "ulim/rng.hpp"

namespace ulim {

namespace fs = std::filesystem;
using nlohmann::json;

SearchMode parse_search_mode(const std::string& s) {
  if (s == "exact") return SearchMode::exact;
  if (s == "ivf") return SearchMode::ivf;
  throw ConfigError("unknown search mode '" + s + "' (want exact|ivf)");
}

namespace {

double dot(const Tensor& emb, std::size_t row, const Tensor& query) {
  const std::size_t d = emb.cols();
  double acc = 0.0;
  for (std::size_t c = 0; c < d; ++c)
    acc += static_cast<double>(emb.at(row, c)) * static_cast<double>(query[c]);
  return acc;
}

// Deterministic Lloyd k-means over index rows, L2 assignment.
void train_ivf(CategoryIndex& index, std::uint64_t seed) {
  const std::size_t n = index.size();
  const std::size_t d = index.embeddings.cols();
  const std::size_t nlist = static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(n))));
  Rng rng(seed);
  // Distinct seed rows.
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  for (std::size_t i = 0; i < nlist; ++i)
    std::swap(rows[i], rows[i + rng.next_below(n - i)]);
  index.centroids = Tensor({nlist, d});
  for (std::size_t c = 0; c < nlist; ++c)
    for (std::size_t j = 0; j < d; ++j)
      index.centroids.at(c, j) = index.embeddings.at(rows[c], j);

  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 10; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = 1e300;
      std::size_t best_c = 0;
      for (std::size_t c = 0; c < nlist; ++c) {
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double diff = static_cast<double>(index.embeddings.at(i, j)) -
                        static_cast<double>(index.centroids.at(c, j));
          dist += diff * diff;
        }
        if (dist < best) {
          best = dist;
          best_c = c;
        }
      }
      assign[i] = best_c;
    }
    std::vector<std::vector<double>> sums(nlist, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(nlist, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j)
        sums[assign[i]][j] += index.embeddings.at(i, j);
    }
    for (std::size_t c = 0; c < nlist; ++c) {
      if (counts[c] == 0) continue;  // keep the stale centroid
      for (std::size_t j = 0; j < d; ++j)
        index.centroids.at(c, j) =
            static_cast<float>(sums[c][j] / static_cast<double>(counts[c]));
    }
  }
  index.postings.assign(nlist, {});
  for (std::size_t i = 0; i < n; ++i) index.postings[assign[i]].push_back(i);
}

CategoryIndex build_one(Id category, const std::vector<Id>& items, const ParamStore& params,
                        const Catalog& catalog, std::uint64_t seed) {
  CategoryIndex index;
  index.category = category;
  index.items = items;
  const std::size_t d = params.get("cat_emb").cols();
  index.embeddings = Tensor({items.size(), d});
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor e = item_embed(items[i], params, catalog);
    for (std::size_t j = 0; j < d; ++j) index.embeddings.at(i, j) = e[j];
  }
  train_ivf(index, seed);
  return index;
}

}  // namespace

IndexSet build_indexes(const ParamStore& params, const Catalog& catalog,
                       const DualConfig& cfg, std::uint64_t seed) {
  (void)cfg;
  IndexSet set;
  set.d = params.get("cat_emb").cols();
  std::vector<Id> all_items;
  for (Id c = 0; c < catalog.n_categories(); ++c) {
    const auto& items = catalog.items_in(c);
    if (items.empty()) {
      std::cerr << "warning: category " << c << " is empty, index omitted\n";
      continue;
    }
    set.by_category.emplace(
        c, build_one(c, items, params, catalog, mix_seed(seed, 0x11f + c)));
    all_items.insert(all_items.end(), items.begin(), items.end());
  }
  std::sort(all_items.begin(), all_items.end());
  set.global = build_one(-1, all_items, params, catalog, mix_seed(seed, 0x6710));
  return set;
}

std::vector<ScoredItem> search(const CategoryIndex& index, const Tensor& query,
                               std::size_t n, SearchMode mode, std::size_t nprobe,
                               bool* truncated) {
  if (n < 1) throw ConfigError("search: n must be >= 1");
  if (query.size() != index.embeddings.cols())
    throw DimensionError("search: query dim " + std::to_string(query.size()) +
                         " vs index dim " + std::to_string(index.embeddings.cols()));
  if (truncated) *truncated = false;
  std::vector<std::size_t> rows;
  if (mode == SearchMode::exact) {
    rows.resize(index.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  } else {
    const std::size_t probe = std::min(std::max<std::size_t>(nprobe, 1), index.nlist());
    // Rank centroids by inner product with the query (scores are IP).
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t c = 0; c < index.nlist(); ++c)
      ranked.emplace_back(-dot(index.centroids, c, query), c);
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t i = 0; i < probe; ++i)
      for (std::size_t r : index.postings[ranked[i].second]) rows.push_back(r);
  }
  std::vector<ScoredItem> scored;
  scored.reserve(rows.size());
  for (std::size_t r : rows)
    scored.push_back({index.items[r], dot(index.embeddings, r, query), -1});
  std::sort(scored.begin(), scored.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  });
  if (scored.size() > n) {
    scored.resize(n);
  } else if (scored.size() < n && truncated) {
    *truncated = true;
  }
  return scored;
}

RetrievalResult cascaded_retrieve(const UserHistory& history, Id user_id,
                                  const ServingModels& models, const IndexSet& indexes,
                                  const Catalog& catalog, const RetrievalConfig& cfg,
                                  std::size_t n_total) {
  if (history.events.empty())
    throw DimensionError("cascaded_retrieve: user has no recent events");
  if (n_total < 1) throw ConfigError("cascaded_retrieve: n_total must be >= 1");
  const DualConfig& dcfg = *models.dual_cfg;

  UserHistory capped;
  capped.user_id = history.user_id;
  const std::size_t l0 =
      history.events.size() > dcfg.long_max ? history.events.size() - dcfg.long_max : 0;
  capped.events.assign(history.events.begin() + static_cast<std::ptrdiff_t>(l0),
                       history.events.end());
  UserHistory window = short_term_window(capped, dcfg.short_window);

  RetrievalResult result;
  result.requested = n_total;
  const std::size_t per_source =
      cfg.quota_disabled
          ? n_total
          : (n_total + cfg.k) / (cfg.k + 1);  // ceil(n_total / (K+1))

  Tensor v_short = encode_short(window.events, *models.dual_params, dcfg);

  std::vector<ScoredItem> merged;
  std::size_t usable_slots = 0;
  if (cfg.k > 0) {
    PginOutput pgin_out = pgin_forward(capped, user_id, catalog.n_categories(),
                                       *models.pgin_params, *models.pgin_cfg);
    result.predicted_categories =
        predict_topk(pgin_out.y_hat, std::min(cfg.k, static_cast<std::size_t>(
                                                         catalog.n_categories())));
    CategorySubsequences subseqs = cluster_by_category(capped, catalog);
    for (std::size_t slot = 0; slot < result.predicted_categories.size(); ++slot) {
      Id cat = result.predicted_categories[slot];
      auto sub_it = subseqs.find(cat);
      auto idx_it = indexes.by_category.find(cat);
      if (sub_it == subseqs.end() || sub_it->second.empty() ||
          idx_it == indexes.by_category.end())
        continue;  // no category-aware subsequence to encode; skip the slot
      Tensor v_long = encode_long(sub_it->second, v_short, *models.dual_params, dcfg);
      auto hits = search(idx_it->second, v_long, per_source, cfg.mode, cfg.nprobe);
      for (ScoredItem& h : hits) h.source = static_cast<int>(slot);
      merged.insert(merged.end(), hits.begin(), hits.end());
      ++usable_slots;
    }
  }
  result.global_only_fallback = (cfg.k > 0 && usable_slots == 0);

  auto global_hits = search(indexes.global, v_short, per_source, cfg.mode, cfg.nprobe);
  for (ScoredItem& h : global_hits) h.source = static_cast<int>(cfg.k);
  merged.insert(merged.end(), global_hits.begin(), global_hits.end());

  // Dedupe keeping max score per item, then rank.
  std::unordered_map<Id, ScoredItem> best;
  for (const ScoredItem& s : merged) {
    auto [it, inserted] = best.emplace(s.item, s);
    if (!inserted && s.score > it->second.score) it->second = s;
  }
  result.items.reserve(best.size());
  for (const auto& [item, s] : best) result.items.push_back(s);
  std::sort(result.items.begin(), result.items.end(),
            [](const ScoredItem& a, const ScoredItem& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.item < b.item;
            });
  if (!cfg.quota_disabled && result.items.size() > n_total) result.items.resize(n_total);
  return result;
}

void IndexSet::save(const fs::path& dir, const std::string& meta_json) const {
  fs::create_directories(dir);
  json manifest;
  manifest["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
  manifest["d"] = d;
  auto dump_index = [&](const CategoryIndex& index, const std::string& stem) {
    json j;
    j["category"] = index.category;
    j["items"] = index.items;
    j["postings"] = index.postings;
    j["emb_file"] = stem + ".f32";
    j["centroid_file"] = stem + "_centroids.f32";
    j["nlist"] = index.nlist();
    for (const auto& [file, t] :
         {std::pair<std::string, const Tensor*>{stem + ".f32", &index.embeddings},
          {stem + "_centroids.f32", &index.centroids}}) {
      std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(float)));
      if (!out) throw IngestError("failed to write " + file);
    }
    return j;
  };
  json cats = json::array();
  for (const auto& [cat, index] : by_category)
    cats.push_back(dump_index(index, "cat_" + std::to_string(cat)));
  manifest["categories"] = std::move(cats);
  manifest["global"] = dump_index(global, "global");
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw IngestError("failed to write manifest.json");
}

namespace {
CategoryIndex load_index(const fs::path& dir, const json& j, std::size_t d) {
  CategoryIndex index;
  index.category = j.at("category").get<Id>();
  index.items = j.at("items").get<std::vector<Id>>();
  index.postings = j.at("postings").get<std::vector<std::vector<std::size_t>>>();
  const std::size_t nlist = j.at("nlist").get<std::size_t>();
  index.embeddings = Tensor({index.items.size(), d});
  index.centroids = Tensor({nlist, d});
  for (const auto& [file, t] :
       {std::pair<std::string, Tensor*>{j.at("emb_file"), &index.embeddings},
        {j.at("centroid_file"), &index.centroids}}) {
    std::ifstream in(dir / file, std::ios::binary);
    if (!in) throw IngestError("missing index blob " + file);
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(t->size() * sizeof(float)))
      throw IngestError("truncated index blob " + file);
  }
  return index;
}
}  // namespace

IndexSet IndexSet::load(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IngestError("missing manifest.json in " + dir.string());
  json manifest = json::parse(in);
  IndexSet set;
  set.d = manifest.at("d").get<std::size_t>();
  for (const json& j : manifest.at("categories")) {
    CategoryIndex index = load_index(dir, j, set.d);
    set.by_category.emplace(index.category, std::move(index));
  }
  set.global = load_index(dir, manifest.at("global"), set.d);
  return set;
}

std::string IndexSet::load_meta(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IngestError("missing manifest.json in " + dir.string());
  return json::parse(in).at("meta").dump();
}

namespace {

double percentile(std::vector<double>& v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double idx = p * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

double recall_against(const std::vector<ScoredItem>& got,
                      const std::vector<ScoredItem>& want) {
  if (want.empty()) return 1.0;
  std::unordered_map<Id, bool> in_got;
  for (const ScoredItem& s : got) in_got[s.item] = true;
  std::size_t hit = 0;
  for (const ScoredItem& s : want)
    if (in_got.count(s.item)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(want.size());
}

}  // namespace

std::vector<BenchRow> bench_serving(const IndexSet& indexes, const ServingModels& models,
                                    const Catalog& catalog,
                                    const std::vector<const UserHistory*>& query_users,
                                    const std::vector<std::size_t>& nprobes,
                                    const std::vector<std::size_t>& k_values) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;

  // Query vectors: each user's short-term embedding.
  std::vector<Tensor> queries;
  for (const UserHistory* u : query_users) {
    UserHistory w = short_term_window(*u, models.dual_cfg->short_window);
    if (w.events.empty()) continue;
    queries.push_back(encode_short(w.events, *models.dual_params, *models.dual_cfg));
  }

  const std::size_t depth = 100;
  std::vector<std::vector<ScoredItem>> exact_results;
  {
    BenchRow row{"search", "exact", 0, 0, 0, 0, 0, 1.0};
    std::vector<double> lat;
    for (const Tensor& q : queries) {
      auto t0 = clock::now();
      exact_results.push_back(search(indexes.global, q, depth, SearchMode::exact, 0));
      lat.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    row.p50_ms = percentile(lat, 0.50);
    row.p95_ms = percentile(lat, 0.95);
    row.p99_ms = percentile(lat, 0.99);
    rows.push_back(row);
  }
  for (std::size_t nprobe : nprobes) {
    BenchRow row{"search", "ivf", nprobe, 0, 0, 0, 0, 0.0};
    std::vector<double> lat;
    double recall = 0.0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      auto t0 = clock::now();
      auto got = search(indexes.global, queries[qi], depth, SearchMode::ivf, nprobe);
      lat.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      recall += recall_against(got, exact_results[qi]);
    }
    row.p50_ms = percentile(lat, 0.50);
    row.p95_ms = percentile(lat, 0.95);
    row.p99_ms = percentile(lat, 0.99);
    row.recall100 = queries.empty() ? 1.0 : recall / static_cast<double>(queries.size());
    rows.push_back(row);
  }
  for (std::size_t k : k_values) {
    BenchRow row{"cascade", "exact", 0, k, 0, 0, 0, 1.0};
    RetrievalConfig rcfg;
    rcfg.k = k;
    rcfg.mode = SearchMode::exact;
    std::vector<double> lat;
    for (const UserHistory* u : query_users) {
      if (u->events.empty()) continue;
      auto t0 = clock::now();
      cascaded_retrieve(*u, u->user_id, models, indexes, catalog, rcfg, depth);
      lat.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    row.p50_ms = percentile(lat, 0.50);
    row.p95_ms = percentile(lat, 0.95);
    row.p99_ms = percentile(lat, 0.99);
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "kind,mode,nprobe,k,p50_ms,p95_ms,p99_ms,recall100\n";
  for (const BenchRow& r : rows)
    out << r.kind << "," << r.mode << "," << r.nprobe << "," << r.k << "," << r.p50_ms
        << "," << r.p95_ms << "," << r.p99_ms << "," << r.recall100 << "\n";
  if (!out) throw IngestError("failed to write " + path.string());
}

}  // namespace ulim
