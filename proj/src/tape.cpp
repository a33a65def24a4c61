#include "ulim/tape.hpp"

#include <algorithm>
#include <cmath>

namespace ulim {

Tape::VarId Tape::make_node(std::size_t r, std::size_t c) {
  Node n;
  n.rows = r;
  n.cols = c;
  n.val.assign(r * c, 0.0);
  n.grad.assign(r * c, 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

Tape::VarId Tape::input(const Tensor& t) {
  VarId v = make_node(t.rows(), t.cols());
  auto& n = node(v);
  for (std::size_t i = 0; i < t.size(); ++i) n.val[i] = t[i];
  return v;
}

Tape::VarId Tape::param(const std::string& name, const Tensor& t) {
  VarId v = input(t);
  param_shapes_[name] = {t.rows(), t.cols()};
  param_grads_.try_emplace(name, std::vector<double>(t.size(), 0.0));
  back_fns_.push_back([this, v, name] {
    auto& g = param_grads_[name];
    const auto& n = nodes_[v];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
  return v;
}

Tape::VarId Tape::param_rows(const std::string& name, const Tensor& table,
                             const std::vector<std::size_t>& rows) {
  const std::size_t d = table.cols();
  VarId v = make_node(rows.size(), d);
  auto& n = node(v);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= table.rows()) {
      throw LookupError("row " + std::to_string(rows[r]) + " out of range for " + name);
    }
    for (std::size_t c = 0; c < d; ++c) n.val[r * d + c] = table.at(rows[r], c);
  }
  param_shapes_[name] = {table.rows(), table.cols()};
  param_grads_.try_emplace(name, std::vector<double>(table.size(), 0.0));
  back_fns_.push_back([this, v, name, rows, d] {
    auto& g = param_grads_[name];
    const auto& n = nodes_[v];
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) g[rows[r] * d + c] += n.grad[r * d + c];
  });
  return v;
}

Tape::VarId Tape::add(VarId a, VarId b) {
  if (rows(a) != rows(b) || cols(a) != cols(b))
    throw DimensionError("add: shape mismatch " + std::to_string(rows(a)) + "x" +
                         std::to_string(cols(a)) + " vs " + std::to_string(rows(b)) +
                         "x" + std::to_string(cols(b)));
  VarId v = make_node(rows(a), cols(a));
  auto& n = node(v);
  for (std::size_t i = 0; i < n.val.size(); ++i)
    n.val[i] = nodes_[a].val[i] + nodes_[b].val[i];
  back_fns_.push_back([this, v, a, b] {
    for (std::size_t i = 0; i < nodes_[v].grad.size(); ++i) {
      nodes_[a].grad[i] += nodes_[v].grad[i];
      nodes_[b].grad[i] += nodes_[v].grad[i];
    }
  });
  return v;
}

Tape::VarId Tape::add_row_broadcast(VarId a, VarId bias_row) {
  if (rows(bias_row) != 1 || cols(bias_row) != cols(a))
    throw DimensionError("add_row_broadcast: bias must be 1x" + std::to_string(cols(a)));
  const std::size_t R = rows(a), C = cols(a);
  VarId v = make_node(R, C);
  auto& n = node(v);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      n.val[r * C + c] = nodes_[a].val[r * C + c] + nodes_[bias_row].val[c];
  back_fns_.push_back([this, v, a, bias_row, R, C] {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        nodes_[a].grad[r * C + c] += nodes_[v].grad[r * C + c];
        nodes_[bias_row].grad[c] += nodes_[v].grad[r * C + c];
      }
  });
  return v;
}

Tape::VarId Tape::scale(VarId a, double c) {
  VarId v = make_node(rows(a), cols(a));
  auto& n = node(v);
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = nodes_[a].val[i] * c;
  back_fns_.push_back([this, v, a, c] {
    for (std::size_t i = 0; i < nodes_[v].grad.size(); ++i)
      nodes_[a].grad[i] += nodes_[v].grad[i] * c;
  });
  return v;
}

Tape::VarId Tape::relu(VarId a) {
  VarId v = make_node(rows(a), cols(a));
  auto& n = node(v);
  for (std::size_t i = 0; i < n.val.size(); ++i)
    n.val[i] = nodes_[a].val[i] > 0.0 ? nodes_[a].val[i] : 0.0;
  back_fns_.push_back([this, v, a] {
    for (std::size_t i = 0; i < nodes_[v].grad.size(); ++i)
      if (nodes_[a].val[i] > 0.0) nodes_[a].grad[i] += nodes_[v].grad[i];
  });
  return v;
}

Tape::VarId Tape::sigmoid(VarId a) {
  VarId v = make_node(rows(a), cols(a));
  auto& n = node(v);
  for (std::size_t i = 0; i < n.val.size(); ++i)
    n.val[i] = 1.0 / (1.0 + std::exp(-nodes_[a].val[i]));
  back_fns_.push_back([this, v, a] {
    for (std::size_t i = 0; i < nodes_[v].grad.size(); ++i) {
      double y = nodes_[v].val[i];
      nodes_[a].grad[i] += nodes_[v].grad[i] * y * (1.0 - y);
    }
  });
  return v;
}

Tape::VarId Tape::one_minus(VarId a) {
  VarId v = make_node(rows(a), cols(a));
  auto& n = node(v);
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = 1.0 - nodes_[a].val[i];
  back_fns_.push_back([this, v, a] {
    for (std::size_t i = 0; i < nodes_[v].grad.size(); ++i)
      nodes_[a].grad[i] -= nodes_[v].grad[i];
  });
  return v;
}

Tape::VarId Tape::mul_scalar_var(VarId a, VarId s) {
  if (rows(s) != 1 || cols(s) != 1) throw DimensionError("mul_scalar_var: s must be 1x1");
  VarId v = make_node(rows(a), cols(a));
  auto& n = node(v);
  const double sv = nodes_[s].val[0];
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = nodes_[a].val[i] * sv;
  back_fns_.push_back([this, v, a, s] {
    double sv = nodes_[s].val[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes_[v].grad.size(); ++i) {
      nodes_[a].grad[i] += nodes_[v].grad[i] * sv;
      acc += nodes_[v].grad[i] * nodes_[a].val[i];
    }
    nodes_[s].grad[0] += acc;
  });
  return v;
}

Tape::VarId Tape::concat_cols(const std::vector<VarId>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t R = rows(parts[0]);
  std::size_t C = 0;
  for (VarId p : parts) {
    if (rows(p) != R) throw DimensionError("concat_cols: row mismatch");
    C += cols(p);
  }
  VarId v = make_node(R, C);
  auto& n = node(v);
  std::size_t off = 0;
  for (VarId p : parts) {
    const std::size_t pc = cols(p);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < pc; ++c)
        n.val[r * C + off + c] = nodes_[p].val[r * pc + c];
    off += pc;
  }
  back_fns_.push_back([this, v, parts, R, C] {
    std::size_t o = 0;
    for (VarId p : parts) {
      const std::size_t pc = cols(p);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < pc; ++c)
          nodes_[p].grad[r * pc + c] += nodes_[v].grad[r * C + o + c];
      o += pc;
    }
  });
  return v;
}

Tape::VarId Tape::concat_rows(const std::vector<VarId>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t C = cols(parts[0]);
  std::size_t R = 0;
  for (VarId p : parts) {
    if (cols(p) != C) throw DimensionError("concat_rows: col mismatch");
    R += rows(p);
  }
  VarId v = make_node(R, C);
  auto& n = node(v);
  std::size_t off = 0;
  for (VarId p : parts) {
    for (std::size_t i = 0; i < nodes_[p].val.size(); ++i)
      n.val[off + i] = nodes_[p].val[i];
    off += nodes_[p].val.size();
  }
  back_fns_.push_back([this, v, parts] {
    std::size_t o = 0;
    for (VarId p : parts) {
      for (std::size_t i = 0; i < nodes_[p].grad.size(); ++i)
        nodes_[p].grad[i] += nodes_[v].grad[o + i];
      o += nodes_[p].grad.size();
    }
  });
  return v;
}

Tape::VarId Tape::slice_cols(VarId a, std::size_t c0, std::size_t c1) {
  if (c1 <= c0 || c1 > cols(a)) throw DimensionError("slice_cols: bad range");
  const std::size_t R = rows(a), C = cols(a), W = c1 - c0;
  VarId v = make_node(R, W);
  auto& n = node(v);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < W; ++c) n.val[r * W + c] = nodes_[a].val[r * C + c0 + c];
  back_fns_.push_back([this, v, a, c0, R, C, W] {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < W; ++c)
        nodes_[a].grad[r * C + c0 + c] += nodes_[v].grad[r * W + c];
  });
  return v;
}

Tape::VarId Tape::scatter_cols(VarId a, const std::vector<std::size_t>& positions,
                               std::size_t width) {
  if (rows(a) != 1 || cols(a) != positions.size())
    throw DimensionError("scatter_cols: need 1x" + std::to_string(positions.size()));
  VarId v = make_node(1, width);
  auto& n = node(v);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= width) throw DimensionError("scatter_cols: position out of range");
    n.val[positions[i]] += nodes_[a].val[i];
  }
  back_fns_.push_back([this, v, a, positions] {
    for (std::size_t i = 0; i < positions.size(); ++i)
      nodes_[a].grad[i] += nodes_[v].grad[positions[i]];
  });
  return v;
}

Tape::VarId Tape::matmul(VarId a, VarId b) {
  if (cols(a) != rows(b))
    throw DimensionError("matmul: " + std::to_string(rows(a)) + "x" + std::to_string(cols(a)) +
                         " times " + std::to_string(rows(b)) + "x" + std::to_string(cols(b)));
  const std::size_t M = rows(a), K = cols(a), N = cols(b);
  VarId v = make_node(M, N);
  auto& n = node(v);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double av = nodes_[a].val[i * K + k];
      for (std::size_t j = 0; j < N; ++j) n.val[i * N + j] += av * nodes_[b].val[k * N + j];
    }
  back_fns_.push_back([this, v, a, b, M, K, N] {
    // dA = G B^T ; dB = A^T G
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const double g = nodes_[v].grad[i * N + j];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < K; ++k) {
          nodes_[a].grad[i * K + k] += g * nodes_[b].val[k * N + j];
          nodes_[b].grad[k * N + j] += g * nodes_[a].val[i * K + k];
        }
      }
  });
  return v;
}

Tape::VarId Tape::matmul_nt(VarId a, VarId b) {
  if (cols(a) != cols(b))
    throw DimensionError("matmul_nt: inner dims " + std::to_string(cols(a)) + " vs " +
                         std::to_string(cols(b)));
  const std::size_t M = rows(a), K = cols(a), N = rows(b);
  VarId v = make_node(M, N);
  auto& n = node(v);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        acc += nodes_[a].val[i * K + k] * nodes_[b].val[j * K + k];
      n.val[i * N + j] = acc;
    }
  back_fns_.push_back([this, v, a, b, M, K, N] {
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const double g = nodes_[v].grad[i * N + j];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < K; ++k) {
          nodes_[a].grad[i * K + k] += g * nodes_[b].val[j * K + k];
          nodes_[b].grad[j * K + k] += g * nodes_[a].val[i * K + k];
        }
      }
  });
  return v;
}

Tape::VarId Tape::mean_rows(VarId a) {
  const std::size_t R = rows(a), C = cols(a);
  if (R == 0) throw DimensionError("mean_rows: empty input");
  VarId v = make_node(1, C);
  auto& n = node(v);
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < R; ++r) acc += nodes_[a].val[r * C + c];
    n.val[c] = acc / static_cast<double>(R);
  }
  back_fns_.push_back([this, v, a, R, C] {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c)
        nodes_[a].grad[r * C + c] += nodes_[v].grad[c] / static_cast<double>(R);
  });
  return v;
}

Tape::VarId Tape::softmax_rows(VarId a) {
  const std::size_t R = rows(a), C = cols(a);
  if (C == 0) throw DimensionError("softmax_rows: empty row");
  VarId v = make_node(R, C);
  auto& n = node(v);
  for (std::size_t r = 0; r < R; ++r) {
    double mx = nodes_[a].val[r * C];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, nodes_[a].val[r * C + c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      n.val[r * C + c] = std::exp(nodes_[a].val[r * C + c] - mx);
      denom += n.val[r * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) n.val[r * C + c] /= denom;
  }
  back_fns_.push_back([this, v, a, R, C] {
    for (std::size_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c)
        dot += nodes_[v].grad[r * C + c] * nodes_[v].val[r * C + c];
      for (std::size_t c = 0; c < C; ++c)
        nodes_[a].grad[r * C + c] +=
            nodes_[v].val[r * C + c] * (nodes_[v].grad[r * C + c] - dot);
    }
  });
  return v;
}

Tape::VarId Tape::row_normalize(VarId a) {
  if (rows(a) != 1) throw DimensionError("row_normalize: expects a row vector");
  const std::size_t C = cols(a);
  VarId v = make_node(1, C);
  auto& n = node(v);
  double s = 0.0;
  for (std::size_t c = 0; c < C; ++c) s += nodes_[a].val[c];
  if (s <= 0.0) throw DimensionError("row_normalize: nonpositive mass");
  for (std::size_t c = 0; c < C; ++c) n.val[c] = nodes_[a].val[c] / s;
  back_fns_.push_back([this, v, a, C, s] {
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += nodes_[v].grad[c] * nodes_[v].val[c];
    for (std::size_t c = 0; c < C; ++c)
      nodes_[a].grad[c] += (nodes_[v].grad[c] - dot) / s;
  });
  return v;
}

Tape::VarId Tape::nll_from_logits(VarId logits, std::size_t target) {
  if (rows(logits) != 1) throw DimensionError("nll_from_logits: expects a row vector");
  const std::size_t C = cols(logits);
  if (target >= C) throw DimensionError("nll_from_logits: target out of range");
  VarId v = make_node(1, 1);
  double mx = nodes_[logits].val[0];
  for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, nodes_[logits].val[c]);
  double denom = 0.0;
  for (std::size_t c = 0; c < C; ++c) denom += std::exp(nodes_[logits].val[c] - mx);
  node(v).val[0] = std::log(denom) + mx - nodes_[logits].val[target];
  back_fns_.push_back([this, v, logits, target, C, mx, denom] {
    const double g = nodes_[v].grad[0];
    for (std::size_t c = 0; c < C; ++c) {
      double p = std::exp(nodes_[logits].val[c] - mx) / denom;
      nodes_[logits].grad[c] += g * (p - (c == target ? 1.0 : 0.0));
    }
  });
  return v;
}

Tape::VarId Tape::neg_log_pick(VarId probs, std::size_t target, double eps) {
  if (rows(probs) != 1) throw DimensionError("neg_log_pick: expects a row vector");
  if (target >= cols(probs)) throw DimensionError("neg_log_pick: target out of range");
  VarId v = make_node(1, 1);
  const double p = nodes_[probs].val[target] + eps;
  node(v).val[0] = -std::log(p);
  back_fns_.push_back([this, v, probs, target, p] {
    nodes_[probs].grad[target] -= nodes_[v].grad[0] / p;
  });
  return v;
}

Tensor Tape::value(VarId v) const {
  const Node& n = nodes_[v];
  Tensor t({n.rows, n.cols});
  for (std::size_t i = 0; i < n.val.size(); ++i) t[i] = static_cast<float>(n.val[i]);
  return t;
}

double Tape::scalar(VarId v) const {
  const Node& n = nodes_[v];
  if (n.val.size() != 1) throw DimensionError("scalar: node is not 1x1");
  return n.val[0];
}

void Tape::backward(VarId loss) {
  if (loss < 0 || loss >= static_cast<VarId>(nodes_.size()))
    throw StateError("backward: no recorded forward pass");
  if (nodes_[loss].val.size() != 1) throw StateError("backward: loss must be 1x1");
  if (back_fns_.empty() && param_grads_.empty())
    throw StateError("backward: no recorded forward pass");
  nodes_[loss].grad[0] = 1.0;
  for (auto it = back_fns_.rbegin(); it != back_fns_.rend(); ++it) (*it)();
  ran_backward_ = true;
}

const std::map<std::string, std::vector<double>>& Tape::param_grads() const {
  if (!ran_backward_) throw StateError("param_grads: backward not run");
  return param_grads_;
}

LayerGrads Tape::grads() const {
  if (!ran_backward_) throw StateError("grads: backward not run");
  LayerGrads out;
  for (const auto& [name, g] : param_grads_) {
    const auto& shape = param_shapes_.at(name);
    Tensor t({shape[0], shape[1]});
    for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<float>(g[i]);
    out.params.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace ulim
