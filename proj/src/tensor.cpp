#include "nutrifuse/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace nf {

namespace {
int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeMismatchError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeMismatchError("tensor data size does not match shape");
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from_vector(const std::vector<double>& v) {
  return Tensor({static_cast<int64_t>(v.size())}, v);
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = rng.normal() * stddev;
  return t;
}

Tensor Tensor::rand_uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = rng.uniform(lo, hi);
  return t;
}

int64_t Tensor::size(int dim) const {
  if (dim < 0) dim += ndim();
  if (dim < 0 || dim >= ndim()) throw ShapeMismatchError("tensor dim out of range");
  return shape_[static_cast<size_t>(dim)];
}

int64_t Tensor::flat_index(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) throw ShapeMismatchError("index rank mismatch");
  int64_t flat = 0;
  int d = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= shape_[static_cast<size_t>(d)]) throw ShapeMismatchError("index out of range");
    flat = flat * shape_[static_cast<size_t>(d)] + i;
    ++d;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
  return data_[static_cast<size_t>(flat_index(idx))];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return data_[static_cast<size_t>(flat_index(idx))];
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw ShapeMismatchError("reshape changes element count: " + shape_str());
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeMismatchError("item() on non-scalar tensor " + shape_str());
  return data_[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ")";
  return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) throw ShapeMismatchError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace nf
