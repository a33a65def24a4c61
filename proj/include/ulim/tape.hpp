#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ulim/tensor.hpp"

namespace ulim {

// Gradients produced by one backward pass: one entry per touched parameter,
// shaped like the parameter itself.
struct LayerGrads {
  std::map<std::string, Tensor> params;
};

// Reverse-mode tape over 2-D values. Storage entering and leaving the tape is
// float32 (Tensor); arithmetic inside the tape runs in double so gradient
// checks against central finite differences stay tight.
class Tape {
 public:
  using VarId = int;

  // Leaves.
  VarId input(const Tensor& t);
  VarId param(const std::string& name, const Tensor& t);
  // Gather rows of a named table; backward scatter-adds into the table grad.
  VarId param_rows(const std::string& name, const Tensor& table,
                   const std::vector<std::size_t>& rows);

  // Elementwise / structural ops.
  VarId add(VarId a, VarId b);
  VarId add_row_broadcast(VarId a, VarId bias_row);
  VarId scale(VarId a, double c);
  VarId relu(VarId a);
  VarId sigmoid(VarId a);
  VarId one_minus(VarId a);
  VarId mul_scalar_var(VarId a, VarId s);  // s is 1x1
  VarId concat_cols(const std::vector<VarId>& parts);
  VarId concat_rows(const std::vector<VarId>& parts);
  VarId slice_cols(VarId a, std::size_t c0, std::size_t c1);
  VarId scatter_cols(VarId a, const std::vector<std::size_t>& positions,
                     std::size_t width);

  // Linear algebra.
  VarId matmul(VarId a, VarId b);
  VarId matmul_nt(VarId a, VarId b);  // a * b^T

  // Reductions / probabilistic.
  VarId mean_rows(VarId a);
  VarId softmax_rows(VarId a);
  VarId row_normalize(VarId a);
  VarId nll_from_logits(VarId logits, std::size_t target);     // 1x1
  VarId neg_log_pick(VarId probs, std::size_t target, double eps);  // 1x1

  // Inspection.
  Tensor value(VarId v) const;
  double scalar(VarId v) const;
  std::size_t rows(VarId v) const { return nodes_[v].rows; }
  std::size_t cols(VarId v) const { return nodes_[v].cols; }

  // Runs reverse accumulation from a 1x1 loss node.
  void backward(VarId loss);

  bool ran_backward() const { return ran_backward_; }
  const std::map<std::string, std::vector<double>>& param_grads() const;
  LayerGrads grads() const;  // float32 view of param_grads()

 private:
  struct Node {
    std::size_t rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
  };

  VarId make_node(std::size_t r, std::size_t c);
  Node& node(VarId v) { return nodes_[v]; }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> back_fns_;
  std::map<std::string, std::vector<double>> param_grads_;
  std::map<std::string, std::vector<std::size_t>> param_shapes_;
  bool ran_backward_ = false;
};

}  // namespace ulim
