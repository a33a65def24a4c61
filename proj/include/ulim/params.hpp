#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ulim/rng.hpp"
#include "ulim/tensor.hpp"

namespace ulim {

// Named trainable tensors. Iteration order is lexicographic, which keeps
// optimizer sweeps and serialization deterministic.
class ParamStore {
 public:
  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in defaults to rows.
  Tensor& add(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng,
              std::size_t fan_in = 0);
  Tensor& add_zeros(const std::string& name, std::size_t rows, std::size_t cols);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  std::size_t count() const { return tensors_.size(); }

  bool all_finite() const;

  // Model directory layout: header.json (shapes + caller metadata) plus one
  // little-endian raw float32 file per tensor.
  void save(const std::filesystem::path& dir, const std::string& meta_json) const;
  static ParamStore load(const std::filesystem::path& dir);
  static std::string load_meta(const std::filesystem::path& dir);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace ulim
