#include "jointseq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "jointseq/error.hpp"

namespace jointseq {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != product(shape_)) {
    throw Error(ErrorCode::kShapeMismatch,
                "data length " + std::to_string(data_.size()) + " vs shape " +
                    shape_string(shape_));
  }
}

std::size_t Tensor::rows() const { return shape_.empty() ? 1 : (rank() == 1 ? 1 : shape_[0]); }

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  if (rank() == 1) return shape_[0];
  return data_.size() / shape_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "item() on " + shape_string(shape_));
  }
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void require_shape(const Tensor& t, const std::vector<std::size_t>& shape,
                   const char* what) {
  if (t.shape() != shape) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": expected " +
                                               shape_string(shape) + ", got " +
                                               shape_string(t.shape()));
  }
}

}  // namespace jointseq
