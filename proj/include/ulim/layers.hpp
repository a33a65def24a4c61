#pragma once

#include <string>
#include <vector>

#include "ulim/params.hpp"
#include "ulim/tape.hpp"

namespace ulim {

// ---- Tensor-level ops (no gradients) ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, double temperature = 1.0);

// ---- Parameter layout helpers ----
// MHSA under <prefix>: wq wk wv wo, all d x d; optional pos (max_len x d).
// Target attention under <prefix>: wp, d x d.
// MLP under <prefix>: w0/b0, w1/b1, ... ReLU between layers, linear output.

void init_mhsa(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng,
               std::size_t pos_len = 0);
void init_target_attention(ParamStore& store, const std::string& prefix, std::size_t d,
                           Rng& rng);
void init_mlp(ParamStore& store, const std::string& prefix,
              const std::vector<std::size_t>& layer_sizes, Rng& rng);

// ---- Tape-level layers ----

Tape::VarId mhsa(Tape& tape, const ParamStore& store, const std::string& prefix,
                 Tape::VarId x, int heads, bool use_positions = false);
Tape::VarId target_attention(Tape& tape, const ParamStore& store, const std::string& prefix,
                             Tape::VarId query, Tape::VarId keys, Tape::VarId values);
Tape::VarId mlp(Tape& tape, const ParamStore& store, const std::string& prefix,
                Tape::VarId x);

// ---- Convenience forwards over Tensors ----

Tensor mhsa_forward(const Tensor& seq, const ParamStore& store, const std::string& prefix,
                    int heads, bool use_positions = false);
Tensor target_attention_forward(const Tensor& query, const Tensor& keys,
                                const Tensor& values, const ParamStore& store,
                                const std::string& prefix);
Tensor mlp_forward(const Tensor& x, const ParamStore& store, const std::string& prefix);

}  // namespace ulim
