#include "scenediff/denoiser/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "scenediff/common.hpp"

namespace scenediff::denoiser {

using nlohmann::json;

void DenoiserDims::validate() const {
  if (d_h < 1 || heads < 1 || layers < 1 || t_hist < 1 || horizon < 1 ||
      d_k < 1 || max_lane_tokens < 0 || lane_waypoint_window < 2) {
    throw std::invalid_argument("denoiser dims: all sizes must be >= 1");
  }
  if (d_h % heads != 0) {
    throw std::invalid_argument("denoiser dims: d_h must be divisible by heads");
  }
  if (d_k * heads != d_h) {
    throw std::invalid_argument("denoiser dims: d_k * heads must equal d_h");
  }
  if (d_s != 4 || d_a != 2) {
    throw std::invalid_argument("denoiser dims: channel split is fixed at 4+2");
  }
}

DenseArray& ParamSet::add(const std::string& name,
                          std::vector<std::int64_t> shape) {
  if (contains(name)) {
    throw std::invalid_argument("params: duplicate name " + name);
  }
  items_.emplace_back(name, DenseArray(std::move(shape)));
  return items_.back().second;
}

DenseArray& ParamSet::at(const std::string& name) {
  for (auto& [n, a] : items_) {
    if (n == name) return a;
  }
  throw std::invalid_argument("params: unknown name " + name);
}

const DenseArray& ParamSet::at(const std::string& name) const {
  for (const auto& [n, a] : items_) {
    if (n == name) return a;
  }
  throw std::invalid_argument("params: unknown name " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& [n, a] : items_) {
    if (n == name) return true;
  }
  return false;
}

namespace {

void fill_uniform(DenseArray& a, std::int64_t fan_in, Prng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < a.size(); ++i) {
    a[i] = (rng.uniform() * 2.0 - 1.0) * bound;
  }
}

void add_matrix(ParamSet& s, const std::string& name, std::int64_t in,
                std::int64_t out, Prng& rng) {
  fill_uniform(s.add(name, {in, out}), in, rng);
}

void add_bias(ParamSet& s, const std::string& name, std::int64_t n) {
  s.add(name, {n});
}

void add_layer_norm(ParamSet& s, const std::string& prefix, std::int64_t n) {
  DenseArray& gain = s.add(prefix + ".gain", {n});
  for (std::int64_t i = 0; i < n; ++i) gain[i] = 1.0;
  s.add(prefix + ".bias", {n});
}

}  // namespace

DenoiserParams init_params(const DenoiserDims& dims, std::uint64_t seed) {
  dims.validate();
  DenoiserParams p;
  p.dims = dims;
  Prng rng(seed);
  ParamSet& s = p.set;
  const std::int64_t dh = dims.d_h;
  const std::int64_t din = dims.d_s + dims.d_a;

  add_matrix(s, "rffn.w1", din, dh, rng);
  add_bias(s, "rffn.b1", dh);
  add_matrix(s, "rffn.w2", dh, dh, rng);
  add_bias(s, "rffn.b2", dh);
  add_matrix(s, "step.w", dh, dh, rng);

  add_matrix(s, "edge.w1", 7, dh, rng);
  add_bias(s, "edge.b1", dh);
  add_matrix(s, "edge.w2", dh, dh, rng);
  add_bias(s, "edge.b2", dh);

  add_matrix(s, "lane.enc", 4, dh, rng);
  add_bias(s, "lane.enc_b", dh);
  fill_uniform(s.add("lane.pool_q", {dh}), dh, rng);

  for (std::int64_t l = 0; l < dims.layers; ++l) {
    const std::string lp = "layer" + std::to_string(l);
    add_matrix(s, lp + ".t.wq", dh, dh, rng);
    add_matrix(s, lp + ".t.wk", dh, dh, rng);
    add_matrix(s, lp + ".t.wv", dh, dh, rng);
    add_matrix(s, lp + ".t.wo", dh, dh, rng);
    add_layer_norm(s, lp + ".t.ln1", dh);
    add_matrix(s, lp + ".t.ffn_w1", dh, 4 * dh, rng);
    add_bias(s, lp + ".t.ffn_b1", 4 * dh);
    add_matrix(s, lp + ".t.ffn_w2", 4 * dh, dh, rng);
    add_bias(s, lp + ".t.ffn_b2", dh);
    add_layer_norm(s, lp + ".t.ln2", dh);

    add_matrix(s, lp + ".s.wq", dh, dh, rng);
    add_matrix(s, lp + ".s.wk", 2 * dh, dh, rng);
    add_matrix(s, lp + ".s.wv", 2 * dh, dh, rng);
    add_matrix(s, lp + ".s.wgate", 2 * dh, dh, rng);
    add_matrix(s, lp + ".s.wself", dh, dh, rng);
    add_layer_norm(s, lp + ".s.ln", dh);

    add_matrix(s, lp + ".m.wq", dh, dh, rng);
    add_matrix(s, lp + ".m.wk", dh, dh, rng);
    add_matrix(s, lp + ".m.wv", dh, dh, rng);
    add_matrix(s, lp + ".m.wo", dh, dh, rng);
    add_layer_norm(s, lp + ".m.ln", dh);
  }

  add_matrix(s, "out.w", dh, dims.d_a, rng);
  add_bias(s, "out.b", dims.d_a);
  return p;
}

ParamVars::ParamVars(Graph& g, const DenoiserParams& p, bool trainable) {
  vars_.reserve(p.set.size());
  for (std::size_t i = 0; i < p.set.size(); ++i) {
    const auto& [name, arr] = p.set.item(i);
    vars_.emplace_back(name, trainable ? g.leaf(arr) : g.constant(arr));
  }
}

Var ParamVars::operator[](const std::string& name) const {
  for (const auto& [n, v] : vars_) {
    if (n == name) return v;
  }
  throw std::invalid_argument("params: unknown name " + name);
}

void save_checkpoint(const DenoiserParams& params, const std::string& path) {
  json manifest;
  manifest["format"] = "scenediff-checkpoint";
  manifest["version"] = 1;
  manifest["dims"] = {{"d_s", params.dims.d_s},
                      {"d_a", params.dims.d_a},
                      {"d_h", params.dims.d_h},
                      {"heads", params.dims.heads},
                      {"d_k", params.dims.d_k},
                      {"layers", params.dims.layers},
                      {"t_hist", params.dims.t_hist},
                      {"horizon", params.dims.horizon},
                      {"max_lane_tokens", params.dims.max_lane_tokens},
                      {"lane_waypoint_window", params.dims.lane_waypoint_window},
                      {"social_radius", params.dims.social_radius},
                      {"map_radius", params.dims.map_radius}};
  json arrays = json::array();
  for (std::size_t i = 0; i < params.set.size(); ++i) {
    const auto& [name, arr] = params.set.item(i);
    arrays.push_back({{"name", name}, {"shape", arr.shape()}});
  }
  manifest["arrays"] = std::move(arrays);
  std::string header = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  const char magic[8] = {'S', 'D', 'C', 'K', 'P', 'T', '0', '1'};
  out.write(magic, 8);
  std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t i = 0; i < params.set.size(); ++i) {
    const DenseArray& arr = params.set.item(i).second;
    out.write(reinterpret_cast<const char*>(arr.data()),
              static_cast<std::streamsize>(arr.size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

DenoiserParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "SDCKPT01", 8) != 0) {
    throw DataError("checkpoint: bad magic in '" + path + "'");
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("checkpoint: truncated header in '" + path + "'");
  json manifest = json::parse(header);

  DenoiserParams p;
  const json& d = manifest.at("dims");
  p.dims.d_s = d.at("d_s").get<std::int64_t>();
  p.dims.d_a = d.at("d_a").get<std::int64_t>();
  p.dims.d_h = d.at("d_h").get<std::int64_t>();
  p.dims.heads = d.at("heads").get<std::int64_t>();
  p.dims.d_k = d.at("d_k").get<std::int64_t>();
  p.dims.layers = d.at("layers").get<std::int64_t>();
  p.dims.t_hist = d.at("t_hist").get<std::int64_t>();
  p.dims.horizon = d.at("horizon").get<std::int64_t>();
  p.dims.max_lane_tokens = d.at("max_lane_tokens").get<std::int64_t>();
  p.dims.lane_waypoint_window = d.at("lane_waypoint_window").get<std::int64_t>();
  p.dims.social_radius = d.at("social_radius").get<double>();
  p.dims.map_radius = d.at("map_radius").get<double>();

  for (const json& a : manifest.at("arrays")) {
    std::vector<std::int64_t> shape = a.at("shape").get<std::vector<std::int64_t>>();
    DenseArray& arr = p.set.add(a.at("name").get<std::string>(), shape);
    in.read(reinterpret_cast<char*>(arr.data()),
            static_cast<std::streamsize>(arr.size() * sizeof(double)));
  }
  if (!in) throw DataError("checkpoint: truncated data in '" + path + "'");
  return p;
}

}  // namespace scenediff::denoiser
