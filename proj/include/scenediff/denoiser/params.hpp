#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scenediff/tensor/array.hpp"
#include "scenediff/tensor/graph.hpp"

namespace scenediff::denoiser {

struct DenoiserDims {
  std::int64_t d_s = 4;
  std::int64_t d_a = 2;
  std::int64_t d_h = 64;
  std::int64_t heads = 4;
  std::int64_t d_k = 16;  // d_h / heads
  std::int64_t layers = 2;
  std::int64_t t_hist = 4;
  std::int64_t horizon = 20;
  std::int64_t max_lane_tokens = 8;      // per agent, nearest-first
  std::int64_t lane_waypoint_window = 20;
  double social_radius = 30.0;
  double map_radius = 60.0;

  void validate() const;
};

// Named flat parameter arrays with stable ordering.
class ParamSet {
 public:
  DenseArray& add(const std::string& name, std::vector<std::int64_t> shape);
  DenseArray& at(const std::string& name);
  const DenseArray& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return items_.size(); }
  std::pair<std::string, DenseArray>& item(std::size_t i) { return items_[i]; }
  const std::pair<std::string, DenseArray>& item(std::size_t i) const {
    return items_[i];
  }

 private:
  std::vector<std::pair<std::string, DenseArray>> items_;
};

struct DenoiserParams {
  DenoiserDims dims;
  ParamSet set;
};

// Deterministic init: uniform +-1/sqrt(fan_in) per matrix, zeros for biases
// and layer-norm shifts, ones for layer-norm gains. Same seed, same bits.
DenoiserParams init_params(const DenoiserDims& dims, std::uint64_t seed);

// Parameters lifted into a graph, as trainable leaves or constants.
class ParamVars {
 public:
  ParamVars(Graph& g, const DenoiserParams& p, bool trainable);
  Var operator[](const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& items() const { return vars_; }

 private:
  std::vector<std::pair<std::string, Var>> vars_;
};

// Versioned checkpoint: JSON manifest (dims + array index) followed by raw
// little-endian doubles; save/load round trips bit-exactly.
void save_checkpoint(const DenoiserParams& params, const std::string& path);
DenoiserParams load_checkpoint(const std::string& path);

}  // namespace scenediff::denoiser
