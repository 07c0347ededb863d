#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ipdfer {

/// Dense row-major tensor of doubles. Rank is dynamic (1..4 in practice);
/// images are stored NCHW with the last index fastest.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    v_.assign(static_cast<std::size_t>(count(dims_)), 0.0);
  }

  Tensor(std::vector<int> dims, std::vector<double> values)
      : dims_(std::move(dims)), v_(std::move(values)) {
    if (static_cast<std::int64_t>(v_.size()) != count(dims_))
      throw std::invalid_argument("tensor: value count does not match shape");
  }

  static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& dims() const { return dims_; }

  std::int64_t size() const { return static_cast<std::int64_t>(v_.size()); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  double& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return v_[static_cast<std::size_t>(i)]; }

  /// NCHW element access for 4-D tensors.
  double& at4(int n, int c, int h, int w) {
    return v_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
  }
  double at4(int n, int c, int h, int w) const {
    return v_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
  }

  double& at2(int r, int c) { return v_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * dims_[1] + c)]; }
  double at2(int r, int c) const { return v_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * dims_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  /// Value of a single-element tensor.
  double item() const {
    if (v_.size() != 1) throw std::invalid_argument("tensor: item() on non-scalar");
    return v_[0];
  }

  void fill(double v) { std::fill(v_.begin(), v_.end(), v); }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

  static std::int64_t count(const std::vector<int>& dims) {
    std::int64_t n = 1;
    for (int d : dims) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> dims_;
  std::vector<double> v_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace ipdfer
