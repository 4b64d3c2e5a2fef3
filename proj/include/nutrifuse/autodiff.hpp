#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nutrifuse/tensor.hpp"

namespace nf {

// Reverse-mode tape node. Ops attach a backward closure that scatters the
// node's grad into its parents' grads.
struct TapeNode {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TapeNode>> parents;
  std::function<void(TapeNode&)> backward_fn;

  Tensor& ensure_grad();
  void accum_grad(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<TapeNode> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  Tensor& value_mut();
  const Tensor& grad() const;
  bool has_grad() const;
  bool requires_grad() const;
  void zero_grad();
  const std::shared_ptr<TapeNode>& node() const { return node_; }

 private:
  std::shared_ptr<TapeNode> node_;
};

bool grad_enabled();

// Disables tape recording in scope (inference mode); intermediate activations
// are then freed as soon as their handles die.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var gelu(const Var& a);
Var absolute(const Var& a);

// linear algebra
Var matmul(const Var& a, const Var& b);                       // (M,K)x(K,N)
Var linear(const Var& x, const Var& w, const Var& b);         // (N,F),(O,F),(O)->(N,O)
Var bmm(const Var& a, const Var& b);                          // (B,M,K)x(B,K,N)
Var bmm_nt(const Var& a, const Var& b);                       // (B,M,K)x(B,N,K)->(B,M,N)

// convolution / pooling, NCHW
Var conv2d(const Var& x, const Var& w, const Var& b, int sh, int sw, int ph, int pw);
Var maxpool2d(const Var& x, int kh, int kw, int sh, int sw, int ph = 0, int pw = 0);
Var avgpool2d(const Var& x, int kh, int kw, int sh, int sw, int ph = 0, int pw = 0);
Var global_avgpool(const Var& x);  // (N,C,H,W)->(N,C)

// normalization
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Var& running_mean,
                 Var& running_var, bool training, double momentum = 0.1, double eps = 1e-5);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var softmax_lastdim(const Var& x);

// shape ops
Var concat(const std::vector<Var>& xs, int dim);
Var narrow(const Var& x, int dim, int64_t start, int64_t len);
Var permute(const Var& x, const std::vector<int>& order);
Var reshape(const Var& x, std::vector<int64_t> shape);
Var tile_batch(const Var& x, int64_t n);  // (s...) -> (n, s...)

// fusion / reductions
Var add_channel(const Var& x, const Var& t);  // (N,C,H,W) + (N,C)
Var mean_dim0(const Var& x);                  // (N,K)->(K)
Var sum_all(const Var& x);                    // ->(1)

}  // namespace nf
