#include "ulim/params.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace ulim {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols,
                        Rng& rng, std::size_t fan_in) {
  if (fan_in == 0) fan_in = rows;
  Tensor t({rows, cols});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.uniform(-bound, bound));
  auto [it, inserted] = tensors_.insert_or_assign(name, std::move(t));
  return it->second;
}

Tensor& ParamStore::add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  auto [it, inserted] = tensors_.insert_or_assign(name, Tensor({rows, cols}));
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LookupError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LookupError("unknown parameter: " + name);
  return it->second;
}

bool ParamStore::all_finite() const {
  for (const auto& [name, t] : tensors_)
    if (!t.all_finite()) return false;
  return true;
}

namespace {
std::string tensor_file(const std::string& name) {
  std::string f = name;
  for (char& c : f)
    if (c == '/' || c == '.') c = '_';
  return f + ".f32";
}
}  // namespace

void ParamStore::save(const fs::path& dir, const std::string& meta_json) const {
  fs::create_directories(dir);
  json header;
  header["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
  json tensors = json::object();
  for (const auto& [name, t] : tensors_) {
    tensors[name] = {{"shape", t.shape()}, {"file", tensor_file(name)}};
    std::ofstream out(dir / tensor_file(name), std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!out) throw IngestError("failed to write tensor file for " + name);
  }
  header["tensors"] = std::move(tensors);
  std::ofstream hdr(dir / "header.json", std::ios::trunc);
  hdr << header.dump(2) << "\n";
  if (!hdr) throw IngestError("failed to write header.json in " + dir.string());
}

ParamStore ParamStore::load(const fs::path& dir) {
  std::ifstream hdr(dir / "header.json");
  if (!hdr) throw IngestError("missing header.json in " + dir.string());
  json header = json::parse(hdr);
  ParamStore store;
  for (const auto& [name, desc] : header.at("tensors").items()) {
    std::vector<std::size_t> shape = desc.at("shape").get<std::vector<std::size_t>>();
    Tensor t(shape);
    std::ifstream in(dir / desc.at("file").get<std::string>(), std::ios::binary);
    if (!in) throw IngestError("missing tensor file for " + name);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float)))
      throw IngestError("truncated tensor file for " + name);
    store.tensors_.insert_or_assign(name, std::move(t));
  }
  return store;
}

std::string ParamStore::load_meta(const fs::path& dir) {
  std::ifstream hdr(dir / "header.json");
  if (!hdr) throw IngestError("missing header.json in " + dir.string());
  json header = json::parse(hdr);
  return header.at("meta").dump();
}

}  // namespace ulim
