#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ulim/adam.hpp"
#include "ulim/datamodel.hpp"
#include "ulim/layers.hpp"
#include "ulim/params.hpp"
#include "ulim/tape.hpp"

namespace ulim {

struct DualConfig {
  std::size_t d = 32;
  int heads = 2;
  std::size_t short_window = 100;
  std::size_t long_max = 2000;  // cap on the long behavior sequence
  double alpha = 0.5;
  double beta = 0.5;
  double lr = 0.005;
  std::size_t batch_size = 16;
  std::size_t negatives = 16;
  std::size_t epochs = 5;
  std::size_t targets_per_user = 4;  // trailing events used as positives
  bool use_positions = false;
  bool global_short_negatives = false;  // draw L_s negatives from the full catalog
  bool self_attention_long = false;     // ablation: query-free long encoder
  std::uint64_t seed = 1;

  void validate() const;
  static DualConfig from_json(const std::string& text);
  std::string to_json() const;
};

// Parameter names: item_emb, cat_emb, tower.(w|b)N, mhsa.w{q,k,v,o}[,pos],
// ta.wp, and lmhsa.* for the self-attention ablation.
ParamStore init_dual_model(const Catalog& catalog, const DualConfig& cfg);

// Item tower: e_i = MLP(concat(item row, category row)).
Tape::VarId item_embed_var(Tape& tape, const ParamStore& params, const Catalog& catalog,
                           const std::vector<Id>& items);
Tensor item_embed(Id item, const ParamStore& params, const Catalog& catalog);

// Sequence-event embedding (item row + category row), then encoders.
Tape::VarId encode_short_var(Tape& tape, const ParamStore& params, const DualConfig& cfg,
                             const std::vector<BehaviorEvent>& window);
Tape::VarId encode_long_var(Tape& tape, const ParamStore& params, const DualConfig& cfg,
                            const std::vector<BehaviorEvent>& subseq, Tape::VarId v_short);
Tensor encode_short(const std::vector<BehaviorEvent>& window, const ParamStore& params,
                    const DualConfig& cfg);
Tensor encode_long(const std::vector<BehaviorEvent>& subseq, const Tensor& v_short,
                   const ParamStore& params, const DualConfig& cfg);

// Sampled softmax with the positive included in the denominator.
double sampled_softmax_loss(const Tensor& v, Id pos, const std::vector<Id>& negs,
                            const ParamStore& params, const Catalog& catalog);

struct TrainSample {
  std::size_t user_index = 0;  // into Dataset::users
  std::size_t pos_index = 0;   // event index of the positive
};

struct TrainBatch {
  Id category = 0;
  std::vector<TrainSample> samples;
  std::vector<Id> negatives;         // shared in-batch, same category
  std::vector<Id> global_negatives;  // only with global_short_negatives
};

std::vector<TrainBatch> build_batches(const Dataset& data, const DualConfig& cfg,
                                      std::uint64_t epoch_seed);

Tape::VarId composite_loss_var(Tape& tape, const ParamStore& params, const Dataset& data,
                               const TrainBatch& batch, const DualConfig& cfg);
double composite_loss(const Dataset& data, const TrainBatch& batch,
                      const ParamStore& params, const DualConfig& cfg);

struct DualTrainResult {
  ParamStore params;
  std::vector<double> epoch_losses;
};

DualTrainResult train_dual(const Dataset& data, const DualConfig& cfg);

}  // namespace ulim
