#include "ulim/layers.hpp"

#include <cmath>

namespace ulim {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + a.shape_str() + " times " + b.shape_str());
  const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
  Tensor out({M, N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        acc += static_cast<double>(a.at(i, k)) * static_cast<double>(b.at(k, j));
      out.at(i, j) = static_cast<float>(acc);
    }
  return out;
}

Tensor softmax(const Tensor& x, double temperature) {
  if (x.size() == 0) throw DimensionError("softmax: empty input");
  if (temperature <= 0.0) throw ConfigError("softmax: temperature must be positive");
  Tensor out(x.shape());
  double mx = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) mx = std::max<double>(mx, x[i]);
  double denom = 0.0;
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp((static_cast<double>(x[i]) - mx) / temperature);
    denom += e[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(e[i] / denom);
  return out;
}

void init_mhsa(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng,
               std::size_t pos_len) {
  store.add(prefix + ".wq", d, d, rng);
  store.add(prefix + ".wk", d, d, rng);
  store.add(prefix + ".wv", d, d, rng);
  store.add(prefix + ".wo", d, d, rng);
  if (pos_len > 0) store.add(prefix + ".pos", pos_len, d, rng, d);
}

void init_target_attention(ParamStore& store, const std::string& prefix, std::size_t d,
                           Rng& rng) {
  store.add(prefix + ".wp", d, d, rng);
}

void init_mlp(ParamStore& store, const std::string& prefix,
              const std::vector<std::size_t>& layer_sizes, Rng& rng) {
  if (layer_sizes.size() < 2) throw ConfigError("mlp: need at least input and output size");
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    store.add(prefix + ".w" + std::to_string(l), layer_sizes[l], layer_sizes[l + 1], rng);
    store.add_zeros(prefix + ".b" + std::to_string(l), 1, layer_sizes[l + 1]);
  }
}

Tape::VarId mhsa(Tape& tape, const ParamStore& store, const std::string& prefix,
                 Tape::VarId x, int heads, bool use_positions) {
  const std::size_t T = tape.rows(x), d = tape.cols(x);
  if (T < 1) throw DimensionError("mhsa: empty sequence");
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("mhsa: dimension " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  if (use_positions) {
    const Tensor& pos = store.get(prefix + ".pos");
    if (T > pos.rows()) throw ConfigError("mhsa: sequence longer than position table");
    std::vector<std::size_t> idx(T);
    for (std::size_t i = 0; i < T; ++i) idx[i] = i;
    x = tape.add(x, tape.param_rows(prefix + ".pos", pos, idx));
  }
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  Tape::VarId q = tape.matmul(x, tape.param(prefix + ".wq", store.get(prefix + ".wq")));
  Tape::VarId k = tape.matmul(x, tape.param(prefix + ".wk", store.get(prefix + ".wk")));
  Tape::VarId v = tape.matmul(x, tape.param(prefix + ".wv", store.get(prefix + ".wv")));
  std::vector<Tape::VarId> head_outs;
  for (int h = 0; h < heads; ++h) {
    const std::size_t c0 = static_cast<std::size_t>(h) * dh, c1 = c0 + dh;
    Tape::VarId qh = tape.slice_cols(q, c0, c1);
    Tape::VarId kh = tape.slice_cols(k, c0, c1);
    Tape::VarId vh = tape.slice_cols(v, c0, c1);
    Tape::VarId scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
    Tape::VarId attn = tape.softmax_rows(scores);
    head_outs.push_back(tape.matmul(attn, vh));
  }
  Tape::VarId cat = tape.concat_cols(head_outs);
  return tape.matmul(cat, tape.param(prefix + ".wo", store.get(prefix + ".wo")));
}

Tape::VarId target_attention(Tape& tape, const ParamStore& store, const std::string& prefix,
                             Tape::VarId query, Tape::VarId keys, Tape::VarId values) {
  const std::size_t T = tape.rows(keys), d = tape.cols(keys);
  if (T < 1) throw DimensionError("target_attention: empty key sequence");
  if (tape.rows(values) != T) throw DimensionError("target_attention: key/value length mismatch");
  if (tape.rows(query) != 1 || tape.cols(query) != d)
    throw DimensionError("target_attention: query must be 1x" + std::to_string(d));
  Tape::VarId scores = tape.scale(tape.matmul_nt(query, keys), 1.0 / std::sqrt(double(d)));
  Tape::VarId weights = tape.softmax_rows(scores);
  Tape::VarId ctx = tape.matmul(weights, values);
  return tape.matmul(ctx, tape.param(prefix + ".wp", store.get(prefix + ".wp")));
}

Tape::VarId mlp(Tape& tape, const ParamStore& store, const std::string& prefix,
                Tape::VarId x) {
  std::size_t layers = 0;
  while (store.has(prefix + ".w" + std::to_string(layers))) ++layers;
  if (layers == 0) throw LookupError("mlp: no layers under prefix " + prefix);
  Tape::VarId h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string w = prefix + ".w" + std::to_string(l);
    const std::string b = prefix + ".b" + std::to_string(l);
    h = tape.add_row_broadcast(tape.matmul(h, tape.param(w, store.get(w))),
                               tape.param(b, store.get(b)));
    if (l + 1 < layers) h = tape.relu(h);
  }
  return h;
}

Tensor mhsa_forward(const Tensor& seq, const ParamStore& store, const std::string& prefix,
                    int heads, bool use_positions) {
  Tape tape;
  return tape.value(mhsa(tape, store, prefix, tape.input(seq), heads, use_positions));
}

Tensor target_attention_forward(const Tensor& query, const Tensor& keys,
                                const Tensor& values, const ParamStore& store,
                                const std::string& prefix) {
  Tape tape;
  return tape.value(target_attention(tape, store, prefix, tape.input(query),
                                     tape.input(keys), tape.input(values)));
}

Tensor mlp_forward(const Tensor& x, const ParamStore& store, const std::string& prefix) {
  Tape tape;
  return tape.value(mlp(tape, store, prefix, tape.input(x)));
}

}  // namespace ulim
