#include "scenediff/tensor/array.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace scenediff {

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

std::int64_t shape_size(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

DenseArray::DenseArray(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e < 1) {
      throw std::invalid_argument("DenseArray: extents must be >= 1, got " +
                                  shape_to_string(shape_));
    }
  }
  data_.assign(static_cast<std::size_t>(shape_size(shape_)), 0.0);
}

DenseArray::DenseArray(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e < 1) {
      throw std::invalid_argument("DenseArray: extents must be >= 1, got " +
                                  shape_to_string(shape_));
    }
  }
  if (shape_size(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw std::invalid_argument("DenseArray: shape " + shape_to_string(shape_) +
                                " does not match data length " +
                                std::to_string(data_.size()));
  }
}

DenseArray DenseArray::full(std::vector<std::int64_t> shape, double v) {
  DenseArray a(std::move(shape));
  for (auto& x : a.data_) x = v;
  return a;
}

std::int64_t DenseArray::dim(std::int64_t i) const {
  std::int64_t n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n) {
    throw std::invalid_argument("DenseArray: dim " + std::to_string(i) +
                                " out of range for shape " + shape_str());
  }
  return shape_[static_cast<std::size_t>(i)];
}

std::int64_t DenseArray::flat_index(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<std::int64_t>(idx.size()) != ndim()) {
    throw std::invalid_argument("DenseArray: index rank " +
                                std::to_string(idx.size()) +
                                " does not match shape " + shape_str());
  }
  std::int64_t flat = 0;
  std::size_t d = 0;
  for (auto i : idx) {
    if (i < 0 || i >= shape_[d]) {
      throw std::out_of_range("DenseArray: index out of range in dim " +
                              std::to_string(d) + " for shape " + shape_str());
    }
    flat = flat * shape_[d] + i;
    ++d;
  }
  return flat;
}

double& DenseArray::at(std::initializer_list<std::int64_t> idx) {
  return data_[static_cast<std::size_t>(flat_index(idx))];
}

double DenseArray::at(std::initializer_list<std::int64_t> idx) const {
  return data_[static_cast<std::size_t>(flat_index(idx))];
}

bool DenseArray::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

DenseArray DenseArray::reshaped(std::vector<std::int64_t> shape) const {
  if (shape_size(shape) != size()) {
    throw std::invalid_argument("DenseArray: cannot reshape " + shape_str() +
                                " to " + shape_to_string(shape));
  }
  return DenseArray(std::move(shape), data_);
}

std::string DenseArray::shape_str() const { return shape_to_string(shape_); }

std::vector<std::int64_t> broadcast_shape(const std::vector<std::int64_t>& a,
                                          const std::vector<std::int64_t>& b) {
  std::size_t n = std::max(a.size(), b.size());
  std::vector<std::int64_t> out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    std::int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument("shape mismatch: " + shape_to_string(a) +
                                  " vs " + shape_to_string(b));
    }
    out[n - 1 - i] = std::max(ea, eb);
  }
  return out;
}

}  // namespace scenediff
