#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "nutrifuse/errors.hpp"
#include "nutrifuse/rng.hpp"

namespace nf {

// Dense row-major double tensor. Values only; autodiff lives in Var.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor from_vector(const std::vector<double>& v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0);
  static Tensor rand_uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi);

  bool defined() const { return !shape_.empty(); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t size(int dim) const;
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  Tensor reshaped(std::vector<int64_t> new_shape) const;
  void fill(double v);
  bool all_finite() const;
  double item() const;  // numel()==1

  std::string shape_str() const;

 private:
  int64_t flat_index(std::initializer_list<int64_t> idx) const;

  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

bool same_shape(const Tensor& a, const Tensor& b);
// exact bit-for-bit equality, used by determinism and fusion-bypass checks
bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace nf
