#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ulim/tensor.hpp"

namespace ulim {

using Id = std::int64_t;

struct BehaviorEvent {
  Id user_id = 0;
  Id item_id = 0;
  Id category_id = 0;
  std::int64_t ts = 0;
};

struct UserHistory {
  Id user_id = 0;
  std::vector<BehaviorEvent> events;  // time-ascending
};

// Item ids and category ids are dense: item_id in [0, n_items),
// category_id in [0, n_categories).
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::vector<Id> item_category, Id n_categories);

  Id category_of(Id item) const;
  Id n_items() const { return static_cast<Id>(item_category_.size()); }
  Id n_categories() const { return n_categories_; }
  const std::vector<Id>& items_in(Id category) const;

 private:
  std::vector<Id> item_category_;
  std::vector<std::vector<Id>> category_items_;
  Id n_categories_ = 0;
};

using CategorySubsequences = std::map<Id, std::vector<BehaviorEvent>>;

CategorySubsequences cluster_by_category(const UserHistory& history, const Catalog& catalog);
UserHistory short_term_window(const UserHistory& history, std::size_t max_len = 100);
std::vector<Id> merged_category_sequence(const UserHistory& long_hist,
                                         const UserHistory& short_hist);

struct SynthConfig {
  Id n_users = 50;
  Id n_items = 500;
  Id n_categories = 10;
  std::size_t seq_len = 100;
  int interests_per_user = 3;
  double persistence = 0.8;
  double popularity_skew = 1.0;  // zipf exponent for in-category item choice
  std::uint64_t seed = 1;

  void validate() const;
  static SynthConfig from_json_file(const std::filesystem::path& path);
  std::string to_json() const;
};

struct SynthData {
  Catalog catalog;
  std::vector<UserHistory> users;        // training-visible histories
  std::vector<BehaviorEvent> test_pairs; // one held-out next click per user
};

SynthData synth_generate(const SynthConfig& config);

// JSON-lines IO. Events: {user_id,item_id,category_id,ts}; catalog:
// {item_id,category_id}. Loading sorts by timestamp and validates categories.
void write_dataset(const SynthData& data, const std::filesystem::path& dir,
                   const SynthConfig& config);
struct Dataset {
  Catalog catalog;
  std::vector<UserHistory> users;
  std::vector<BehaviorEvent> test_pairs;
};
Dataset load_dataset(const std::filesystem::path& dir);

inline Dataset to_dataset(const SynthData& data) {
  return Dataset{data.catalog, data.users, data.test_pairs};
}

}  // namespace ulim
