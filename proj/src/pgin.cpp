#include "ulim/pgin.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "ulim/adam.hpp"
#include "ulim/layers.hpp"
#include "ulim/rng.hpp"

namespace ulim {

using nlohmann::json;

void PginConfig::validate() const {
  if (d < 1) throw ConfigError("pgin: d must be >= 1");
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("pgin: d must be divisible by heads");
  if (short_window < 1) throw ConfigError("pgin: short_window must be >= 1");
  if (batch_size < 1) throw ConfigError("pgin: batch_size must be >= 1");
}

PginConfig PginConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  PginConfig c;
  c.d = j.value("d", c.d);
  c.heads = j.value("heads", c.heads);
  c.short_window = j.value("short_window", c.short_window);
  c.long_max = j.value("long_max", c.long_max);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.targets_per_user = j.value("targets_per_user", c.targets_per_user);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string PginConfig::to_json() const {
  json j;
  j["d"] = d;
  j["heads"] = heads;
  j["short_window"] = short_window;
  j["long_max"] = long_max;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["targets_per_user"] = targets_per_user;
  j["seed"] = seed;
  return j.dump();
}

ParamStore init_pgin(Id n_categories, Id n_users, const PginConfig& cfg) {
  cfg.validate();
  ParamStore store;
  Rng rng(mix_seed(cfg.seed, 0x9617));
  const std::size_t d = cfg.d;
  store.add("pcat_emb", static_cast<std::size_t>(n_categories), d, rng, d);
  store.add("user_emb", static_cast<std::size_t>(n_users), d, rng, d);
  init_mhsa(store, "gmhsa", d, rng);
  init_target_attention(store, "gfuse", d, rng);
  init_mlp(store, "gmlp", {d, 2 * d, static_cast<std::size_t>(n_categories)}, rng);
  init_target_attention(store, "pta", d, rng);
  init_mlp(store, "gate", {2 * d, d, 1}, rng);
  return store;
}

namespace {

Tape::VarId embed_categories(Tape& tape, const ParamStore& params,
                             const std::vector<BehaviorEvent>& events) {
  std::vector<std::size_t> rows;
  rows.reserve(events.size());
  for (const BehaviorEvent& ev : events)
    rows.push_back(static_cast<std::size_t>(ev.category_id));
  return tape.param_rows("pcat_emb", params.get("pcat_emb"), rows);
}

// Pointer branch: attention weights over observed categories, scattered to N.
struct PointerVars {
  Tape::VarId y_poi = -1;
  Tape::VarId summary = -1;
};

PointerVars pointer_branch(Tape& tape, const ParamStore& params,
                           const std::vector<Id>& merged_cats, Tape::VarId query,
                           Id n_categories) {
  if (merged_cats.empty()) throw DimensionError("pointer_forward: empty category history");
  std::vector<std::size_t> positions;
  positions.reserve(merged_cats.size());
  for (Id c : merged_cats) {
    if (c < 0 || c >= n_categories)
      throw LookupError("pointer_forward: category " + std::to_string(c) + " out of range");
    positions.push_back(static_cast<std::size_t>(c));
  }
  Tape::VarId keys = tape.param_rows("pcat_emb", params.get("pcat_emb"), positions);
  const double scale = 1.0 / std::sqrt(static_cast<double>(tape.cols(keys)));
  Tape::VarId weights = tape.softmax_rows(tape.scale(tape.matmul_nt(query, keys), scale));
  PointerVars out;
  // Scatter preserves the simplex (positions are distinct); renormalize anyway
  // to absorb float drift.
  out.y_poi = tape.row_normalize(
      tape.scatter_cols(weights, positions, static_cast<std::size_t>(n_categories)));
  out.summary = tape.matmul(tape.matmul(weights, keys),
                            tape.param("pta.wp", params.get("pta.wp")));
  return out;
}

struct GeneratorVars {
  Tape::VarId y_gen = -1;
  Tape::VarId fused = -1;
};

GeneratorVars generator_branch(Tape& tape, const ParamStore& params, const PginConfig& cfg,
                               const std::vector<BehaviorEvent>& long_hist,
                               const std::vector<BehaviorEvent>& short_hist,
                               Tape::VarId user_ctx) {
  if (long_hist.empty() && short_hist.empty())
    throw DimensionError("generator_forward: both histories empty");
  std::vector<Tape::VarId> pooled;
  if (!long_hist.empty())
    pooled.push_back(tape.mean_rows(
        mhsa(tape, params, "gmhsa", embed_categories(tape, params, long_hist), cfg.heads)));
  if (!short_hist.empty())
    pooled.push_back(tape.mean_rows(
        mhsa(tape, params, "gmhsa", embed_categories(tape, params, short_hist), cfg.heads)));
  Tape::VarId stacked = pooled.size() == 1 ? pooled[0] : tape.concat_rows(pooled);
  GeneratorVars out;
  out.fused = target_attention(tape, params, "gfuse", user_ctx, stacked, stacked);
  out.y_gen = tape.softmax_rows(mlp(tape, params, "gmlp", out.fused));
  return out;
}

Tape::VarId gate_score(Tape& tape, const ParamStore& params, Tape::VarId features) {
  return tape.sigmoid(mlp(tape, params, "gate", features));
}

}  // namespace

Tensor pointer_forward(const std::vector<Id>& merged_cats, const Tensor& user_ctx,
                       const ParamStore& params) {
  Tape tape;
  Id n = static_cast<Id>(params.get("pcat_emb").rows());
  return tape.value(
      pointer_branch(tape, params, merged_cats, tape.input(user_ctx), n).y_poi);
}

Tensor generator_forward(const std::vector<BehaviorEvent>& long_hist,
                         const std::vector<BehaviorEvent>& short_hist,
                         const Tensor& user_ctx, const ParamStore& params,
                         const PginConfig& cfg) {
  Tape tape;
  return tape.value(
      generator_branch(tape, params, cfg, long_hist, short_hist, tape.input(user_ctx)).y_gen);
}

std::pair<double, Tensor> gate_blend(const Tensor& y_poi, const Tensor& y_gen,
                                     const Tensor& gate_features, const ParamStore& params) {
  if (y_poi.size() != y_gen.size()) throw DimensionError("gate_blend: simplex size mismatch");
  Tape tape;
  Tape::VarId p = gate_score(tape, params, tape.input(gate_features));
  Tape::VarId blended =
      tape.add(tape.mul_scalar_var(tape.input(y_poi), p),
               tape.mul_scalar_var(tape.input(y_gen), tape.one_minus(p)));
  return {tape.scalar(p), tape.value(blended)};
}

PginForwardVars pgin_forward_var(Tape& tape, const ParamStore& params, const PginConfig& cfg,
                                 const UserHistory& history, Id user_id, Id n_categories) {
  if (history.events.empty()) throw DimensionError("pgin_forward: empty history");
  UserHistory capped;
  capped.user_id = history.user_id;
  const std::size_t l0 =
      history.events.size() > cfg.long_max ? history.events.size() - cfg.long_max : 0;
  capped.events.assign(history.events.begin() + static_cast<std::ptrdiff_t>(l0),
                       history.events.end());
  UserHistory shortw = short_term_window(capped, cfg.short_window);

  Tape::VarId user_vec = tape.param_rows(
      "user_emb", params.get("user_emb"), {static_cast<std::size_t>(user_id)});
  GeneratorVars gen =
      generator_branch(tape, params, cfg, capped.events, shortw.events, user_vec);

  std::vector<Id> merged = merged_category_sequence(capped, shortw);
  PointerVars ptr = pointer_branch(tape, params, merged, gen.fused, n_categories);
  Tape::VarId p = gate_score(tape, params, tape.concat_cols({gen.fused, ptr.summary}));
  Tape::VarId y_hat = tape.add(tape.mul_scalar_var(ptr.y_poi, p),
                               tape.mul_scalar_var(gen.y_gen, tape.one_minus(p)));
  PginForwardVars out;
  out.y_hat = y_hat;
  out.out.y_poi = tape.value(ptr.y_poi);
  out.out.y_gen = tape.value(gen.y_gen);
  out.out.p_poi = tape.scalar(p);
  out.out.y_hat = tape.value(y_hat);
  return out;
}

PginOutput pgin_forward(const UserHistory& history, Id user_id, Id n_categories,
                        const ParamStore& params, const PginConfig& cfg) {
  Tape tape;
  return pgin_forward_var(tape, params, cfg, history, user_id, n_categories).out;
}

double pgin_loss(const PginOutput& output, Id true_category) {
  if (true_category < 0 || true_category >= static_cast<Id>(output.y_hat.size()))
    throw LookupError("pgin_loss: category label out of range");
  return -std::log(static_cast<double>(output.y_hat[static_cast<std::size_t>(true_category)]) +
                   1e-9);
}

std::vector<Id> predict_topk(const Tensor& y_hat, std::size_t k) {
  const std::size_t n = y_hat.size();
  if (k < 1 || k > n) throw ConfigError("predict_topk: k must be in [1, N]");
  std::vector<Id> order(n);
  std::iota(order.begin(), order.end(), Id{0});
  std::sort(order.begin(), order.end(), [&](Id a, Id b) {
    float pa = y_hat[static_cast<std::size_t>(a)], pb = y_hat[static_cast<std::size_t>(b)];
    if (pa != pb) return pa > pb;
    return a < b;  // deterministic tie-break
  });
  order.resize(k);
  return order;
}

namespace {

struct PginSample {
  std::size_t user_index;
  std::size_t pos_index;  // label = category of this event; history = events before it
};

std::vector<PginSample> pgin_samples(const Dataset& data, const PginConfig& cfg) {
  std::vector<PginSample> samples;
  for (std::size_t ui = 0; ui < data.users.size(); ++ui) {
    const auto& events = data.users[ui].events;
    if (events.size() < 2) continue;
    std::size_t first = events.size() > cfg.targets_per_user
                            ? events.size() - cfg.targets_per_user
                            : 1;
    for (std::size_t t = std::max<std::size_t>(first, 1); t < events.size(); ++t)
      samples.push_back({ui, t});
  }
  return samples;
}

}  // namespace

PginTrainResult train_pgin(const Dataset& data, const PginConfig& cfg) {
  cfg.validate();
  if (data.users.empty()) throw ConfigError("train_pgin: empty dataset");
  Id n_users = 0;
  for (const UserHistory& u : data.users) n_users = std::max(n_users, u.user_id + 1);
  const Id N = data.catalog.n_categories();

  PginTrainResult result;
  result.params = init_pgin(N, n_users, cfg);
  Adam opt(cfg.lr);
  std::vector<PginSample> samples = pgin_samples(data, cfg);
  if (samples.empty()) throw ConfigError("train_pgin: no trainable samples");

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0x4619 + epoch));
    for (std::size_t i = samples.size(); i > 1; --i)
      std::swap(samples[i - 1], samples[rng.next_below(i)]);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
      Tape tape;
      Tape::VarId sum = tape.input(Tensor({1, 1}));
      std::size_t count = 0;
      for (std::size_t i = start; i < std::min(start + cfg.batch_size, samples.size()); ++i) {
        const PginSample& s = samples[i];
        const auto& events = data.users[s.user_index].events;
        UserHistory hist;
        hist.user_id = data.users[s.user_index].user_id;
        hist.events.assign(events.begin(),
                           events.begin() + static_cast<std::ptrdiff_t>(s.pos_index));
        PginForwardVars fwd =
            pgin_forward_var(tape, result.params, cfg, hist, hist.user_id, N);
        sum = tape.add(sum, tape.neg_log_pick(
                                fwd.y_hat,
                                static_cast<std::size_t>(events[s.pos_index].category_id),
                                1e-9));
        ++count;
      }
      if (count == 0) continue;
      Tape::VarId loss = tape.scale(sum, 1.0 / static_cast<double>(count));
      const double lv = tape.scalar(loss);
      if (!std::isfinite(lv))
        throw StateError("train_pgin: non-finite loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.step(result.params, tape.param_grads());
      total += lv;
      ++steps;
    }
    result.epoch_losses.push_back(steps ? total / static_cast<double>(steps) : 0.0);
  }
  if (!result.params.all_finite()) throw StateError("train_pgin: non-finite parameters");
  return result;
}

double pgin_top1_accuracy(const Dataset& data, const ParamStore& params,
                          const PginConfig& cfg) {
  if (data.test_pairs.empty()) throw ConfigError("pgin_top1_accuracy: no test pairs");
  const Id N = data.catalog.n_categories();
  std::map<Id, const UserHistory*> by_user;
  for (const UserHistory& u : data.users) by_user[u.user_id] = &u;
  std::size_t hits = 0, total = 0;
  for (const BehaviorEvent& pair : data.test_pairs) {
    auto it = by_user.find(pair.user_id);
    if (it == by_user.end() || it->second->events.empty()) continue;
    PginOutput out = pgin_forward(*it->second, pair.user_id, N, params, cfg);
    if (predict_topk(out.y_hat, 1)[0] == pair.category_id) ++hits;
    ++total;
  }
  if (total == 0) throw ConfigError("pgin_top1_accuracy: no evaluable users");
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace ulim
