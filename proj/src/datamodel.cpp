#include "ulim/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "ulim/rng.hpp"

namespace ulim {

namespace fs = std::filesystem;
using nlohmann::json;

Catalog::Catalog(std::vector<Id> item_category, Id n_categories)
    : item_category_(std::move(item_category)), n_categories_(n_categories) {
  category_items_.resize(static_cast<std::size_t>(n_categories));
  for (Id item = 0; item < n_items(); ++item) {
    Id cat = item_category_[static_cast<std::size_t>(item)];
    if (cat < 0 || cat >= n_categories_)
      throw IngestError("item " + std::to_string(item) + " has out-of-range category " +
                        std::to_string(cat));
    category_items_[static_cast<std::size_t>(cat)].push_back(item);
  }
}

Id Catalog::category_of(Id item) const {
  if (item < 0 || item >= n_items())
    throw IngestError("item " + std::to_string(item) + " not in catalog");
  return item_category_[static_cast<std::size_t>(item)];
}

const std::vector<Id>& Catalog::items_in(Id category) const {
  if (category < 0 || category >= n_categories_)
    throw LookupError("category " + std::to_string(category) + " not in catalog");
  return category_items_[static_cast<std::size_t>(category)];
}

CategorySubsequences cluster_by_category(const UserHistory& history, const Catalog& catalog) {
  CategorySubsequences out;
  for (const BehaviorEvent& ev : history.events) {
    Id cat = catalog.category_of(ev.item_id);  // throws for unknown items
    out[cat].push_back(ev);
  }
  return out;
}

UserHistory short_term_window(const UserHistory& history, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("short_term_window: max_len must be >= 1");
  UserHistory out;
  out.user_id = history.user_id;
  const std::size_t L = history.events.size();
  const std::size_t take = std::min(L, max_len);
  out.events.assign(history.events.end() - static_cast<std::ptrdiff_t>(take),
                    history.events.end());
  return out;
}

std::vector<Id> merged_category_sequence(const UserHistory& long_hist,
                                         const UserHistory& short_hist) {
  // Merge both (already time-ascending) streams, then walk newest-first and
  // keep the first sighting of each category.
  std::vector<BehaviorEvent> merged;
  merged.reserve(long_hist.events.size() + short_hist.events.size());
  std::merge(long_hist.events.begin(), long_hist.events.end(), short_hist.events.begin(),
             short_hist.events.end(), std::back_inserter(merged),
             [](const BehaviorEvent& a, const BehaviorEvent& b) { return a.ts < b.ts; });
  std::vector<Id> out;
  std::unordered_set<Id> seen;
  for (auto it = merged.rbegin(); it != merged.rend(); ++it) {
    if (seen.insert(it->category_id).second) out.push_back(it->category_id);
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_users < 1 || n_items < 1 || n_categories < 1)
    throw ConfigError("synth: counts must be positive");
  if (n_items < n_categories)
    throw ConfigError("synth: need at least one item per category");
  if (interests_per_user < 1 || interests_per_user > n_categories)
    throw ConfigError("synth: interests_per_user must be in [1, n_categories]");
  if (persistence < 0.0 || persistence > 1.0)
    throw ConfigError("synth: persistence must be in [0, 1]");
  if (seq_len < 1) throw ConfigError("synth: seq_len must be >= 1");
  if (popularity_skew < 0.0) throw ConfigError("synth: popularity_skew must be >= 0");
}

SynthConfig SynthConfig::from_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j = json::parse(in);
  SynthConfig c;
  const std::unordered_set<std::string> known = {
      "n_users", "n_items", "n_categories", "seq_len", "interests_per_user",
      "persistence", "popularity_skew", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("synth config: unknown key '" + key + "'");
  c.n_users = j.value("n_users", c.n_users);
  c.n_items = j.value("n_items", c.n_items);
  c.n_categories = j.value("n_categories", c.n_categories);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.interests_per_user = j.value("interests_per_user", c.interests_per_user);
  c.persistence = j.value("persistence", c.persistence);
  c.popularity_skew = j.value("popularity_skew", c.popularity_skew);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string SynthConfig::to_json() const {
  json j;
  j["n_users"] = n_users;
  j["n_items"] = n_items;
  j["n_categories"] = n_categories;
  j["seq_len"] = seq_len;
  j["interests_per_user"] = interests_per_user;
  j["persistence"] = persistence;
  j["popularity_skew"] = popularity_skew;
  j["seed"] = seed;
  return j.dump(2);
}

namespace {

// Cumulative zipf weights over m ranks: w_r proportional to 1/(r+1)^s.
std::vector<double> zipf_cdf(std::size_t m, double s) {
  std::vector<double> cdf(m);
  double acc = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
    cdf[r] = acc;
  }
  for (double& v : cdf) v /= acc;
  return cdf;
}

std::size_t sample_cdf(const std::vector<double>& cdf, double u) {
  auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) return cdf.size() - 1;
  return static_cast<std::size_t>(it - cdf.begin());
}

BehaviorEvent draw_event(Id user, std::int64_t ts, const std::vector<Id>& interests,
                         double persistence, const Catalog& catalog,
                         const std::vector<std::vector<double>>& category_cdfs, Rng& rng) {
  Id cat;
  if (rng.next_double() < persistence) {
    cat = interests[rng.next_below(interests.size())];
  } else {
    cat = static_cast<Id>(rng.next_below(static_cast<std::uint64_t>(catalog.n_categories())));
  }
  const auto& items = catalog.items_in(cat);
  const auto& cdf = category_cdfs[static_cast<std::size_t>(cat)];
  Id item = items[sample_cdf(cdf, rng.next_double())];
  return BehaviorEvent{user, item, cat, ts};
}

}  // namespace

SynthData synth_generate(const SynthConfig& config) {
  config.validate();
  // Round-robin item->category assignment keeps partitions near-equal.
  std::vector<Id> item_cat(static_cast<std::size_t>(config.n_items));
  for (Id i = 0; i < config.n_items; ++i)
    item_cat[static_cast<std::size_t>(i)] = i % config.n_categories;
  Catalog catalog(std::move(item_cat), config.n_categories);

  std::vector<std::vector<double>> category_cdfs(
      static_cast<std::size_t>(config.n_categories));
  for (Id c = 0; c < config.n_categories; ++c)
    category_cdfs[static_cast<std::size_t>(c)] =
        zipf_cdf(catalog.items_in(c).size(), config.popularity_skew);

  SynthData data;
  data.catalog = catalog;
  for (Id u = 0; u < config.n_users; ++u) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(u)));
    // Distinct interest categories, uniform without replacement.
    std::vector<Id> interests;
    std::unordered_set<Id> taken;
    while (static_cast<int>(interests.size()) < config.interests_per_user) {
      Id c = static_cast<Id>(rng.next_below(static_cast<std::uint64_t>(config.n_categories)));
      if (taken.insert(c).second) interests.push_back(c);
    }
    UserHistory hist;
    hist.user_id = u;
    for (std::size_t t = 0; t < config.seq_len; ++t)
      hist.events.push_back(draw_event(u, static_cast<std::int64_t>(t), interests,
                                       config.persistence, catalog, category_cdfs, rng));
    data.test_pairs.push_back(draw_event(u, static_cast<std::int64_t>(config.seq_len),
                                         interests, config.persistence, catalog,
                                         category_cdfs, rng));
    data.users.push_back(std::move(hist));
  }
  return data;
}

namespace {

void write_events(const fs::path& path, const std::vector<BehaviorEvent>& events) {
  std::ofstream out(path, std::ios::trunc);
  for (const BehaviorEvent& ev : events) {
    out << "{\"user_id\":" << ev.user_id << ",\"item_id\":" << ev.item_id
        << ",\"category_id\":" << ev.category_id << ",\"ts\":" << ev.ts << "}\n";
  }
  if (!out) throw IngestError("failed to write " + path.string());
}

std::vector<BehaviorEvent> read_events(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::vector<BehaviorEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IngestError(path.string() + ":" + std::to_string(lineno) + ": bad JSON");
    events.push_back(BehaviorEvent{j.at("user_id").get<Id>(), j.at("item_id").get<Id>(),
                                   j.at("category_id").get<Id>(),
                                   j.at("ts").get<std::int64_t>()});
  }
  return events;
}

}  // namespace

void write_dataset(const SynthData& data, const fs::path& dir, const SynthConfig& config) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "catalog.jsonl", std::ios::trunc);
    for (Id item = 0; item < data.catalog.n_items(); ++item)
      out << "{\"item_id\":" << item
          << ",\"category_id\":" << data.catalog.category_of(item) << "}\n";
    if (!out) throw IngestError("failed to write catalog.jsonl");
  }
  std::vector<BehaviorEvent> all;
  for (const UserHistory& u : data.users)
    all.insert(all.end(), u.events.begin(), u.events.end());
  write_events(dir / "events.jsonl", all);
  write_events(dir / "test.jsonl", data.test_pairs);
  std::ofstream cfg(dir / "gen_config.json", std::ios::trunc);
  cfg << config.to_json() << "\n";
}

Dataset load_dataset(const fs::path& dir) {
  Dataset out;
  {
    std::ifstream in(dir / "catalog.jsonl");
    if (!in) throw IngestError("cannot open " + (dir / "catalog.jsonl").string());
    std::unordered_map<Id, Id> mapping;
    Id max_item = -1, max_cat = -1;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      Id item = j.at("item_id").get<Id>(), cat = j.at("category_id").get<Id>();
      if (item < 0 || cat < 0) throw IngestError("catalog ids must be nonnegative");
      mapping[item] = cat;
      max_item = std::max(max_item, item);
      max_cat = std::max(max_cat, cat);
    }
    std::vector<Id> item_cat(static_cast<std::size_t>(max_item + 1), -1);
    for (const auto& [item, cat] : mapping) item_cat[static_cast<std::size_t>(item)] = cat;
    for (Id i = 0; i <= max_item; ++i)
      if (item_cat[static_cast<std::size_t>(i)] < 0)
        throw IngestError("catalog has a gap at item " + std::to_string(i));
    out.catalog = Catalog(std::move(item_cat), max_cat + 1);
  }
  std::vector<BehaviorEvent> events = read_events(dir / "events.jsonl");
  std::map<Id, UserHistory> by_user;
  for (const BehaviorEvent& ev : events) {
    if (ev.ts < 0) throw IngestError("negative timestamp for user " + std::to_string(ev.user_id));
    if (out.catalog.category_of(ev.item_id) != ev.category_id)
      throw IngestError("event category mismatch for item " + std::to_string(ev.item_id));
    auto& h = by_user[ev.user_id];
    h.user_id = ev.user_id;
    h.events.push_back(ev);
  }
  for (auto& [uid, hist] : by_user) {
    std::stable_sort(hist.events.begin(), hist.events.end(),
                     [](const BehaviorEvent& a, const BehaviorEvent& b) { return a.ts < b.ts; });
    out.users.push_back(std::move(hist));
  }
  if (fs::exists(dir / "test.jsonl")) out.test_pairs = read_events(dir / "test.jsonl");
  return out;
}

}  // namespace ulim
