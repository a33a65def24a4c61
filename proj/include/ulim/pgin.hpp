#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ulim/datamodel.hpp"
#include "ulim/params.hpp"
#include "ulim/tape.hpp"

namespace ulim {

struct PginConfig {
  std::size_t d = 32;
  int heads = 2;
  std::size_t short_window = 100;
  std::size_t long_max = 2000;
  double lr = 0.005;
  std::size_t batch_size = 8;
  std::size_t epochs = 5;
  std::size_t targets_per_user = 4;
  std::uint64_t seed = 1;

  void validate() const;
  static PginConfig from_json(const std::string& text);
  std::string to_json() const;
};

// Parameter names: pcat_emb (N x d), user_emb (n_users x d), gmhsa.*,
// gfuse.wp, gmlp.*, pta.wp, gate.*.
ParamStore init_pgin(Id n_categories, Id n_users, const PginConfig& cfg);

struct PginOutput {
  Tensor y_poi;       // 1 x N, zero outside observed categories
  Tensor y_gen;       // 1 x N
  double p_poi = 0.0; // forced to 0 when the category history is empty
  Tensor y_hat;       // 1 x N
};

// Spec-surface forwards over frozen params.
Tensor pointer_forward(const std::vector<Id>& merged_cats, const Tensor& user_ctx,
                       const ParamStore& params);
Tensor generator_forward(const std::vector<BehaviorEvent>& long_hist,
                         const std::vector<BehaviorEvent>& short_hist,
                         const Tensor& user_ctx, const ParamStore& params,
                         const PginConfig& cfg);
std::pair<double, Tensor> gate_blend(const Tensor& y_poi, const Tensor& y_gen,
                                     const Tensor& gate_features, const ParamStore& params);

// Full forward used by training and serving; builds the graph on the given
// tape and also returns the loss-ready y_hat var.
struct PginForwardVars {
  Tape::VarId y_hat = -1;
  PginOutput out;
};
PginForwardVars pgin_forward_var(Tape& tape, const ParamStore& params, const PginConfig& cfg,
                                 const UserHistory& history, Id user_id, Id n_categories);
PginOutput pgin_forward(const UserHistory& history, Id user_id, Id n_categories,
                        const ParamStore& params, const PginConfig& cfg);

double pgin_loss(const PginOutput& output, Id true_category);
std::vector<Id> predict_topk(const Tensor& y_hat, std::size_t k);

struct PginTrainResult {
  ParamStore params;
  std::vector<double> epoch_losses;
};
PginTrainResult train_pgin(const Dataset& data, const PginConfig& cfg);

// Top-1 next-category accuracy over held-out test pairs.
double pgin_top1_accuracy(const Dataset& data, const ParamStore& params,
                          const PginConfig& cfg);

}  // namespace ulim
