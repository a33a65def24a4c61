#include "ulim/dual_interest.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <unordered_set>

#include "json.hpp"
#include "ulim/rng.hpp"

namespace ulim {

using nlohmann::json;

void DualConfig::validate() const {
  if (d < 1) throw ConfigError("dual: d must be >= 1");
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("dual: d must be divisible by heads");
  if (alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0)
    throw ConfigError("dual: need alpha >= 0, beta >= 0, alpha + beta > 0");
  if (batch_size < 1 || negatives < 1) throw ConfigError("dual: batch/negatives must be >= 1");
  if (short_window < 1) throw ConfigError("dual: short_window must be >= 1");
  if (targets_per_user < 1) throw ConfigError("dual: targets_per_user must be >= 1");
}

DualConfig DualConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  DualConfig c;
  c.d = j.value("d", c.d);
  c.heads = j.value("heads", c.heads);
  c.short_window = j.value("short_window", c.short_window);
  c.long_max = j.value("long_max", c.long_max);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.negatives = j.value("negatives", c.negatives);
  c.epochs = j.value("epochs", c.epochs);
  c.targets_per_user = j.value("targets_per_user", c.targets_per_user);
  c.use_positions = j.value("use_positions", c.use_positions);
  c.global_short_negatives = j.value("global_short_negatives", c.global_short_negatives);
  c.self_attention_long = j.value("self_attention_long", c.self_attention_long);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string DualConfig::to_json() const {
  json j;
  j["d"] = d;
  j["heads"] = heads;
  j["short_window"] = short_window;
  j["long_max"] = long_max;
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["negatives"] = negatives;
  j["epochs"] = epochs;
  j["targets_per_user"] = targets_per_user;
  j["use_positions"] = use_positions;
  j["global_short_negatives"] = global_short_negatives;
  j["self_attention_long"] = self_attention_long;
  j["seed"] = seed;
  return j.dump();
}

ParamStore init_dual_model(const Catalog& catalog, const DualConfig& cfg) {
  cfg.validate();
  ParamStore store;
  Rng rng(mix_seed(cfg.seed, 0xd0a1));
  const std::size_t d = cfg.d;
  store.add("item_emb", static_cast<std::size_t>(catalog.n_items()), d, rng, d);
  store.add("cat_emb", static_cast<std::size_t>(catalog.n_categories()), d, rng, d);
  init_mlp(store, "tower", {2 * d, d, d}, rng);
  init_mhsa(store, "mhsa", d, rng, cfg.use_positions ? cfg.short_window : 0);
  if (cfg.self_attention_long) {
    init_mhsa(store, "lmhsa", d, rng);
  } else {
    init_target_attention(store, "ta", d, rng);
  }
  return store;
}

Tape::VarId item_embed_var(Tape& tape, const ParamStore& params, const Catalog& catalog,
                           const std::vector<Id>& items) {
  std::vector<std::size_t> item_rows, cat_rows;
  item_rows.reserve(items.size());
  cat_rows.reserve(items.size());
  for (Id item : items) {
    cat_rows.push_back(static_cast<std::size_t>(catalog.category_of(item)));
    item_rows.push_back(static_cast<std::size_t>(item));
  }
  Tape::VarId it = tape.param_rows("item_emb", params.get("item_emb"), item_rows);
  Tape::VarId ct = tape.param_rows("cat_emb", params.get("cat_emb"), cat_rows);
  return mlp(tape, params, "tower", tape.concat_cols({it, ct}));
}

Tensor item_embed(Id item, const ParamStore& params, const Catalog& catalog) {
  Tape tape;
  return tape.value(item_embed_var(tape, params, catalog, {item}));
}

namespace {

Tape::VarId embed_events(Tape& tape, const ParamStore& params,
                         const std::vector<BehaviorEvent>& events) {
  std::vector<std::size_t> item_rows, cat_rows;
  for (const BehaviorEvent& ev : events) {
    item_rows.push_back(static_cast<std::size_t>(ev.item_id));
    cat_rows.push_back(static_cast<std::size_t>(ev.category_id));
  }
  return tape.add(tape.param_rows("item_emb", params.get("item_emb"), item_rows),
                  tape.param_rows("cat_emb", params.get("cat_emb"), cat_rows));
}

}  // namespace

Tape::VarId encode_short_var(Tape& tape, const ParamStore& params, const DualConfig& cfg,
                             const std::vector<BehaviorEvent>& window) {
  if (window.empty()) throw DimensionError("encode_short: empty window");
  Tape::VarId emb = embed_events(tape, params, window);
  Tape::VarId enc = mhsa(tape, params, "mhsa", emb, cfg.heads, cfg.use_positions);
  return tape.mean_rows(enc);
}

Tape::VarId encode_long_var(Tape& tape, const ParamStore& params, const DualConfig& cfg,
                            const std::vector<BehaviorEvent>& subseq, Tape::VarId v_short) {
  if (subseq.empty()) throw DimensionError("encode_long: empty category subsequence");
  Tape::VarId emb = embed_events(tape, params, subseq);
  if (cfg.self_attention_long) {
    // Ablation: no cross-sequence interaction, query-free self-attention.
    return tape.mean_rows(mhsa(tape, params, "lmhsa", emb, cfg.heads, false));
  }
  return target_attention(tape, params, "ta", v_short, emb, emb);
}

Tensor encode_short(const std::vector<BehaviorEvent>& window, const ParamStore& params,
                    const DualConfig& cfg) {
  Tape tape;
  return tape.value(encode_short_var(tape, params, cfg, window));
}

Tensor encode_long(const std::vector<BehaviorEvent>& subseq, const Tensor& v_short,
                   const ParamStore& params, const DualConfig& cfg) {
  Tape tape;
  return tape.value(encode_long_var(tape, params, cfg, subseq, tape.input(v_short)));
}

namespace {

// logits = [v . e_pos, v . e_neg...]; loss = -log softmax[0].
Tape::VarId sampled_nll(Tape& tape, Tape::VarId v, Tape::VarId e_pos, Tape::VarId e_negs) {
  Tape::VarId pos_logit = tape.matmul_nt(v, e_pos);
  Tape::VarId neg_logits = tape.matmul_nt(v, e_negs);
  return tape.nll_from_logits(tape.concat_cols({pos_logit, neg_logits}), 0);
}

}  // namespace

double sampled_softmax_loss(const Tensor& v, Id pos, const std::vector<Id>& negs,
                            const ParamStore& params, const Catalog& catalog) {
  if (negs.empty()) throw ConfigError("sampled_softmax_loss: empty negative set");
  for (Id n : negs)
    if (n == pos) throw ConfigError("sampled_softmax_loss: positive appears in negatives");
  Tape tape;
  Tape::VarId vv = tape.input(v);
  Tape::VarId e_pos = item_embed_var(tape, params, catalog, {pos});
  Tape::VarId e_negs = item_embed_var(tape, params, catalog, negs);
  return tape.scalar(sampled_nll(tape, vv, e_pos, e_negs));
}

std::vector<TrainBatch> build_batches(const Dataset& data, const DualConfig& cfg,
                                      std::uint64_t epoch_seed) {
  if (data.users.empty()) throw ConfigError("build_batches: empty dataset");
  Rng rng(epoch_seed);
  // One sample per trailing event per user; the short window needs at least
  // one earlier event, so pos_index starts at 1.
  std::map<Id, std::vector<TrainSample>> by_cat;
  for (std::size_t ui = 0; ui < data.users.size(); ++ui) {
    const auto& events = data.users[ui].events;
    if (events.size() < 2) continue;
    std::size_t first = events.size() > cfg.targets_per_user
                            ? events.size() - cfg.targets_per_user
                            : 1;
    for (std::size_t t = std::max<std::size_t>(first, 1); t < events.size(); ++t)
      by_cat[events[t].category_id].push_back({ui, t});
  }

  std::vector<TrainBatch> batches;
  for (auto& [cat, samples] : by_cat) {
    // Fisher-Yates, seeded.
    for (std::size_t i = samples.size(); i > 1; --i)
      std::swap(samples[i - 1], samples[rng.next_below(i)]);
    for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
      TrainBatch batch;
      batch.category = cat;
      batch.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(start),
                           samples.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                 start + cfg.batch_size, samples.size())));
      std::unordered_set<Id> positives;
      for (const TrainSample& s : batch.samples)
        positives.insert(data.users[s.user_index].events[s.pos_index].item_id);
      const auto& pool = data.catalog.items_in(cat);
      std::vector<Id> candidates;
      for (Id item : pool)
        if (!positives.count(item)) candidates.push_back(item);
      std::size_t want = cfg.negatives;
      if (candidates.size() < want) {
        std::cerr << "warning: category " << cat << " has only " << candidates.size()
                  << " candidate negatives (wanted " << want << ")\n";
        want = candidates.size();
      }
      if (want == 0) continue;  // nothing to contrast against
      // Sample without replacement via partial Fisher-Yates.
      for (std::size_t i = 0; i < want; ++i)
        std::swap(candidates[i], candidates[i + rng.next_below(candidates.size() - i)]);
      batch.negatives.assign(candidates.begin(),
                             candidates.begin() + static_cast<std::ptrdiff_t>(want));
      if (cfg.global_short_negatives) {
        std::unordered_set<Id> chosen;
        while (chosen.size() < want) {
          Id item = static_cast<Id>(
              rng.next_below(static_cast<std::uint64_t>(data.catalog.n_items())));
          if (!positives.count(item)) chosen.insert(item);
        }
        batch.global_negatives.assign(chosen.begin(), chosen.end());
        std::sort(batch.global_negatives.begin(), batch.global_negatives.end());
      }
      batches.push_back(std::move(batch));
    }
  }
  for (std::size_t i = batches.size(); i > 1; --i)
    std::swap(batches[i - 1], batches[rng.next_below(i)]);
  return batches;
}

namespace {

struct SampleContext {
  std::vector<BehaviorEvent> window;  // short-term
  std::vector<BehaviorEvent> subseq;  // long-term, positive's category, pre-positive
  Id pos_item = 0;
};

SampleContext sample_context(const Dataset& data, const TrainSample& s,
                             const DualConfig& cfg) {
  const auto& events = data.users[s.user_index].events;
  SampleContext ctx;
  ctx.pos_item = events[s.pos_index].item_id;
  const std::size_t t = s.pos_index;
  const std::size_t w0 = t > cfg.short_window ? t - cfg.short_window : 0;
  ctx.window.assign(events.begin() + static_cast<std::ptrdiff_t>(w0),
                    events.begin() + static_cast<std::ptrdiff_t>(t));
  const std::size_t l0 = t > cfg.long_max ? t - cfg.long_max : 0;
  const Id cat = events[t].category_id;
  for (std::size_t i = l0; i < t; ++i)
    if (events[i].category_id == cat) ctx.subseq.push_back(events[i]);
  return ctx;
}

}  // namespace

Tape::VarId composite_loss_var(Tape& tape, const ParamStore& params, const Dataset& data,
                               const TrainBatch& batch, const DualConfig& cfg) {
  if (batch.samples.empty() || batch.negatives.empty())
    throw ConfigError("composite_loss: empty batch");
  for (const TrainSample& s : batch.samples) {
    const BehaviorEvent& pos = data.users[s.user_index].events[s.pos_index];
    if (pos.category_id != batch.category)
      throw StateError("composite_loss: batch is not category-homogeneous");
  }
  Tape::VarId e_negs = item_embed_var(tape, params, data.catalog, batch.negatives);
  Tape::VarId e_short_negs =
      batch.global_negatives.empty()
          ? e_negs
          : item_embed_var(tape, params, data.catalog, batch.global_negatives);

  Tape::VarId sum_l = tape.input(Tensor({1, 1}));
  Tape::VarId sum_s = tape.input(Tensor({1, 1}));
  std::size_t count_l = 0, count_s = 0;
  for (const TrainSample& s : batch.samples) {
    SampleContext ctx = sample_context(data, s, cfg);
    if (ctx.window.empty()) continue;
    Tape::VarId v_short = encode_short_var(tape, params, cfg, ctx.window);
    Tape::VarId e_pos = item_embed_var(tape, params, data.catalog, {ctx.pos_item});
    sum_s = tape.add(sum_s, sampled_nll(tape, v_short, e_pos, e_short_negs));
    ++count_s;
    if (!ctx.subseq.empty()) {
      Tape::VarId v_long = encode_long_var(tape, params, cfg, ctx.subseq, v_short);
      sum_l = tape.add(sum_l, sampled_nll(tape, v_long, e_pos, e_negs));
      ++count_l;
    }
  }
  if (count_s == 0) throw ConfigError("composite_loss: no usable samples in batch");
  Tape::VarId loss = tape.scale(sum_s, cfg.beta / static_cast<double>(count_s));
  if (count_l > 0)
    loss = tape.add(loss, tape.scale(sum_l, cfg.alpha / static_cast<double>(count_l)));
  return loss;
}

double composite_loss(const Dataset& data, const TrainBatch& batch,
                      const ParamStore& params, const DualConfig& cfg) {
  Tape tape;
  return tape.scalar(composite_loss_var(tape, params, data, batch, cfg));
}

DualTrainResult train_dual(const Dataset& data, const DualConfig& cfg) {
  cfg.validate();
  DualTrainResult result;
  result.params = init_dual_model(data.catalog, cfg);
  Adam opt(cfg.lr);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = build_batches(data, cfg, mix_seed(cfg.seed, 0xe90c + epoch));
    double total = 0.0;
    std::size_t n = 0;
    for (const TrainBatch& batch : batches) {
      Tape tape;
      Tape::VarId loss = composite_loss_var(tape, result.params, data, batch, cfg);
      const double lv = tape.scalar(loss);
      if (!std::isfinite(lv))
        throw StateError("train_dual: non-finite loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.step(result.params, tape.param_grads());
      total += lv;
      ++n;
    }
    result.epoch_losses.push_back(n ? total / static_cast<double>(n) : 0.0);
  }
  if (!result.params.all_finite()) throw StateError("train_dual: non-finite parameters");
  return result;
}

}  // namespace ulim
