#include "nutrifuse/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace nf {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tensor& TapeNode::ensure_grad() {
  if (!grad.defined()) grad = Tensor::zeros(value.shape());
  return grad;
}

void TapeNode::accum_grad(const Tensor& g) {
  Tensor& d = ensure_grad();
  const double* s = g.data();
  double* p = d.data();
  for (int64_t i = 0; i < d.numel(); ++i) p[i] += s[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<TapeNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw PreconditionError("use of undefined Var");
  return node_->value;
}

Tensor& Var::value_mut() {
  if (!node_) throw PreconditionError("use of undefined Var");
  return node_->value;
}

const Tensor& Var::grad() const {
  if (!node_ || !node_->grad.defined()) throw PreconditionError("Var has no gradient");
  return node_->grad;
}

bool Var::has_grad() const { return node_ && node_->grad.defined(); }

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

void Var::zero_grad() {
  if (node_ && node_->grad.defined()) node_->grad.fill(0.0);
}

namespace {

thread_local bool g_grad_enabled = true;

void acc(const std::shared_ptr<TapeNode>& p, const Tensor& g) {
  if (p->requires_grad) p->accum_grad(g);
}

Var make_node(Tensor out, std::vector<Var> inputs, std::function<void(TapeNode&)> bw) {
  auto n = std::make_shared<TapeNode>();
  n->value = std::move(out);
  bool any = false;
  for (const auto& v : inputs)
    if (v.defined() && v.node()->requires_grad) any = true;
  if (g_grad_enabled && any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& v : inputs) n->parents.push_back(v.node());
    n->backward_fn = std::move(bw);
  }
  return Var(n);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!same_shape(a.value(), b.value()))
    throw ShapeMismatchError(std::string(op) + ": shapes " + a.value().shape_str() + " vs " +
                             b.value().shape_str());
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& root) {
  if (!root.defined() || root.value().numel() != 1)
    throw PreconditionError("backward root must be a defined scalar");
  if (!root.node()->requires_grad)
    throw PreconditionError("backward root does not require grad");

  // iterative post-order DFS over grad-requiring subgraph
  std::vector<TapeNode*> order;
  std::unordered_set<TapeNode*> visited;
  struct Frame {
    TapeNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    Frame f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      stack.back().next_parent++;
      TapeNode* p = f.node->parents[f.next_parent].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TapeNode* n = *it;
    if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return make_node(std::move(out), {a, b}, [](TapeNode& self) {
    acc(self.parents[0], self.grad);
    acc(self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
  return make_node(std::move(out), {a, b}, [](TapeNode& self) {
    acc(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor& d = self.parents[1]->ensure_grad();
      for (int64_t i = 0; i < d.numel(); ++i) d[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  return make_node(std::move(out), {a, b}, [](TapeNode& self) {
    const Tensor& va = self.parents[0]->value;
    const Tensor& vb = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor& d = self.parents[0]->ensure_grad();
      for (int64_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * vb[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& d = self.parents[1]->ensure_grad();
      for (int64_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * va[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * s;
  return make_node(std::move(out), {a}, [s](TapeNode& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& d = self.parents[0]->ensure_grad();
      for (int64_t i = 0; i < d.numel(); ++i) d[i] += self.grad[i] * s;
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + s;
  return make_node(std::move(out), {a},
                   [](TapeNode& self) { acc(self.parents[0], self.grad); });
}

Var relu(const Var& a) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  return make_node(std::move(out), {a}, [](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& d = self.parents[0]->ensure_grad();
    const Tensor& x = self.parents[0]->value;
    for (int64_t i = 0; i < d.numel(); ++i)
      if (x[i] > 0.0) d[i] += self.grad[i];
  });
}

Var gelu(const Var& a) {
  static const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    po[i] = pa[i] * 0.5 * (1.0 + std::erf(pa[i] * kInvSqrt2));
  return make_node(std::move(out), {a}, [](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& d = self.parents[0]->ensure_grad();
    const Tensor& x = self.parents[0]->value;
    for (int64_t i = 0; i < d.numel(); ++i) {
      double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      d[i] += self.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

Var absolute(const Var& a) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::fabs(pa[i]);
  return make_node(std::move(out), {a}, [](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& d = self.parents[0]->ensure_grad();
    const Tensor& x = self.parents[0]->value;
    for (int64_t i = 0; i < d.numel(); ++i) {
      if (x[i] > 0.0)
        d[i] += self.grad[i];
      else if (x[i] < 0.0)
        d[i] -= self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.ndim() != 2 || vb.ndim() != 2 || va.size(1) != vb.size(0))
    throw ShapeMismatchError("matmul: " + va.shape_str() + " x " + vb.shape_str());
  const int64_t m = va.size(0), k = va.size(1), n = vb.size(1);
  Tensor out({m, n});
  MapMat(out.data(), m, n).noalias() = CMapMat(va.data(), m, k) * CMapMat(vb.data(), k, n);
  return make_node(std::move(out), {a, b}, [m, k, n](TapeNode& self) {
    CMapMat dout(self.grad.data(), m, n);
    if (self.parents[0]->requires_grad) {
      Tensor& da = self.parents[0]->ensure_grad();
      CMapMat vb2(self.parents[1]->value.data(), k, n);
      MapMat(da.data(), m, k).noalias() += dout * vb2.transpose();
    }
    if (self.parents[1]->requires_grad) {
      Tensor& db = self.parents[1]->ensure_grad();
      CMapMat va2(self.parents[0]->value.data(), m, k);
      MapMat(db.data(), k, n).noalias() += va2.transpose() * dout;
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& vx = x.value();
  const Tensor& vw = w.value();
  if (vx.ndim() != 2 || vw.ndim() != 2 || vx.size(1) != vw.size(1))
    throw ShapeMismatchError("linear: x " + vx.shape_str() + " w " + vw.shape_str());
  const int64_t n = vx.size(0), f = vx.size(1), o = vw.size(0);
  if (b.defined() && (b.value().ndim() != 1 || b.value().size(0) != o))
    throw ShapeMismatchError("linear: bad bias shape");
  Tensor out({n, o});
  MapMat om(out.data(), n, o);
  om.noalias() = CMapMat(vx.data(), n, f) * CMapMat(vw.data(), o, f).transpose();
  if (b.defined()) {
    const double* pb = b.value().data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < o; ++j) out[i * o + j] += pb[j];
  }
  std::vector<Var> inputs = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(inputs), [n, f, o](TapeNode& self) {
    CMapMat dout(self.grad.data(), n, o);
    if (self.parents[0]->requires_grad) {
      Tensor& dx = self.parents[0]->ensure_grad();
      CMapMat vw2(self.parents[1]->value.data(), o, f);
      MapMat(dx.data(), n, f).noalias() += dout * vw2;
    }
    if (self.parents[1]->requires_grad) {
      Tensor& dw = self.parents[1]->ensure_grad();
      CMapMat vx2(self.parents[0]->value.data(), n, f);
      MapMat(dw.data(), o, f).noalias() += dout.transpose() * vx2;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor& db = self.parents[2]->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < o; ++j) db[j] += self.grad[i * o + j];
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.ndim() != 3 || vb.ndim() != 3 || va.size(0) != vb.size(0) || va.size(2) != vb.size(1))
    throw ShapeMismatchError("bmm: " + va.shape_str() + " x " + vb.shape_str());
  const int64_t bs = va.size(0), m = va.size(1), k = va.size(2), n = vb.size(2);
  Tensor out({bs, m, n});
  for (int64_t i = 0; i < bs; ++i)
    MapMat(out.data() + i * m * n, m, n).noalias() =
        CMapMat(va.data() + i * m * k, m, k) * CMapMat(vb.data() + i * k * n, k, n);
  return make_node(std::move(out), {a, b}, [bs, m, k, n](TapeNode& self) {
    for (int64_t i = 0; i < bs; ++i) {
      CMapMat dout(self.grad.data() + i * m * n, m, n);
      if (self.parents[0]->requires_grad) {
        Tensor& da = self.parents[0]->ensure_grad();
        CMapMat vb2(self.parents[1]->value.data() + i * k * n, k, n);
        MapMat(da.data() + i * m * k, m, k).noalias() += dout * vb2.transpose();
      }
      if (self.parents[1]->requires_grad) {
        Tensor& db = self.parents[1]->ensure_grad();
        CMapMat va2(self.parents[0]->value.data() + i * m * k, m, k);
        MapMat(db.data() + i * k * n, k, n).noalias() += va2.transpose() * dout;
      }
    }
  });
}

Var bmm_nt(const Var& a, const Var& b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.ndim() != 3 || vb.ndim() != 3 || va.size(0) != vb.size(0) || va.size(2) != vb.size(2))
    throw ShapeMismatchError("bmm_nt: " + va.shape_str() + " x " + vb.shape_str());
  const int64_t bs = va.size(0), m = va.size(1), k = va.size(2), n = vb.size(1);
  Tensor out({bs, m, n});
  for (int64_t i = 0; i < bs; ++i)
    MapMat(out.data() + i * m * n, m, n).noalias() =
        CMapMat(va.data() + i * m * k, m, k) * CMapMat(vb.data() + i * n * k, n, k).transpose();
  return make_node(std::move(out), {a, b}, [bs, m, k, n](TapeNode& self) {
    for (int64_t i = 0; i < bs; ++i) {
      CMapMat dout(self.grad.data() + i * m * n, m, n);
      if (self.parents[0]->requires_grad) {
        Tensor& da = self.parents[0]->ensure_grad();
        CMapMat vb2(self.parents[1]->value.data() + i * n * k, n, k);
        MapMat(da.data() + i * m * k, m, k).noalias() += dout * vb2;
      }
      if (self.parents[1]->requires_grad) {
        Tensor& db = self.parents[1]->ensure_grad();
        CMapMat va2(self.parents[0]->value.data() + i * m * k, m, k);
        MapMat(db.data() + i * n * k, n, k).noalias() += dout.transpose() * va2;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int64_t n, c, h, w, o, kh, kw, oh, ow;
  int sh, sw, ph, pw;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int sh, int sw, int ph, int pw) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeMismatchError("conv2d expects 4-d input and weight");
  if (x.size(1) != w.size(1))
    throw ShapeMismatchError("conv2d channel mismatch: x " + x.shape_str() + " w " + w.shape_str());
  ConvDims d;
  d.n = x.size(0);
  d.c = x.size(1);
  d.h = x.size(2);
  d.w = x.size(3);
  d.o = w.size(0);
  d.kh = w.size(2);
  d.kw = w.size(3);
  d.sh = sh;
  d.sw = sw;
  d.ph = ph;
  d.pw = pw;
  d.oh = (d.h + 2 * ph - d.kh) / sh + 1;
  d.ow = (d.w + 2 * pw - d.kw) / sw + 1;
  if (d.oh <= 0 || d.ow <= 0) throw ShapeMismatchError("conv2d output would be empty");
  return d;
}

// (C,H,W) image slab -> (C*kh*kw, OH*OW)
void im2col(const double* x, const ConvDims& d, double* col) {
  const int64_t plane = d.h * d.w;
  const int64_t ocols = d.oh * d.ow;
  int64_t row = 0;
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj, ++row) {
        double* out_row = col + row * ocols;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * d.sh - d.ph + ki;
          if (iy < 0 || iy >= d.h) {
            std::memset(out_row + oy * d.ow, 0, sizeof(double) * static_cast<size_t>(d.ow));
            continue;
          }
          const double* src = x + c * plane + iy * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * d.sw - d.pw + kj;
            out_row[oy * d.ow + ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// inverse scatter-add of im2col
void col2im_accum(const double* col, const ConvDims& d, double* x) {
  const int64_t plane = d.h * d.w;
  const int64_t ocols = d.oh * d.ow;
  int64_t row = 0;
  for (int64_t c = 0; c < d.c; ++c) {
    for (int64_t ki = 0; ki < d.kh; ++ki) {
      for (int64_t kj = 0; kj < d.kw; ++kj, ++row) {
        const double* src_row = col + row * ocols;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * d.sh - d.ph + ki;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = x + c * plane + iy * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * d.sw - d.pw + kj;
            if (ix >= 0 && ix < d.w) dst[ix] += src_row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int sh, int sw, int ph, int pw) {
  const Tensor& vx = x.value();
  const Tensor& vw = w.value();
  ConvDims d = conv_dims(vx, vw, sh, sw, ph, pw);
  if (b.defined() && (b.value().ndim() != 1 || b.value().size(0) != d.o))
    throw ShapeMismatchError("conv2d: bad bias shape");

  const int64_t kdim = d.c * d.kh * d.kw;
  const int64_t ocols = d.oh * d.ow;
  Tensor out({d.n, d.o, d.oh, d.ow});
  std::vector<double> col(static_cast<size_t>(kdim * ocols));
  CMapMat wm(vw.data(), d.o, kdim);
  for (int64_t i = 0; i < d.n; ++i) {
    im2col(vx.data() + i * d.c * d.h * d.w, d, col.data());
    MapMat(out.data() + i * d.o * ocols, d.o, ocols).noalias() =
        wm * CMapMat(col.data(), kdim, ocols);
  }
  if (b.defined()) {
    const double* pb = b.value().data();
    double* po = out.data();
    for (int64_t i = 0; i < d.n; ++i)
      for (int64_t c = 0; c < d.o; ++c) {
        const double bias = pb[c];
        double* plane = po + (i * d.o + c) * ocols;
        for (int64_t j = 0; j < ocols; ++j) plane[j] += bias;
      }
  }

  std::vector<Var> inputs = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_node(std::move(out), std::move(inputs), [d, kdim, ocols](TapeNode& self) {
    const Tensor& vx2 = self.parents[0]->value;
    const Tensor& vw2 = self.parents[1]->value;
    std::vector<double> col(static_cast<size_t>(kdim * ocols));
    const bool need_dx = self.parents[0]->requires_grad;
    const bool need_dw = self.parents[1]->requires_grad;
    for (int64_t i = 0; i < d.n; ++i) {
      CMapMat dout(self.grad.data() + i * d.o * ocols, d.o, ocols);
      if (need_dw) {
        im2col(vx2.data() + i * d.c * d.h * d.w, d, col.data());
        Tensor& dw = self.parents[1]->ensure_grad();
        MapMat(dw.data(), d.o, kdim).noalias() += dout * CMapMat(col.data(), kdim, ocols).transpose();
      }
      if (need_dx) {
        // reuse col as dcol buffer
        MapMat(col.data(), kdim, ocols).noalias() =
            CMapMat(vw2.data(), d.o, kdim).transpose() * dout;
        Tensor& dx = self.parents[0]->ensure_grad();
        col2im_accum(col.data(), d, dx.data() + i * d.c * d.h * d.w);
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor& db = self.parents[2]->ensure_grad();
      for (int64_t i = 0; i < d.n; ++i)
        for (int64_t c = 0; c < d.o; ++c) {
          const double* plane = self.grad.data() + (i * d.o + c) * ocols;
          double s = 0.0;
          for (int64_t j = 0; j < ocols; ++j) s += plane[j];
          db[c] += s;
        }
    }
  });
}

namespace {
struct PoolDims {
  int64_t n, c, h, w, oh, ow;
  int kh, kw, sh, sw, ph, pw;
};

PoolDims pool_dims(const Tensor& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  if (x.ndim() != 4) throw ShapeMismatchError("pool expects 4-d input");
  PoolDims d;
  d.n = x.size(0);
  d.c = x.size(1);
  d.h = x.size(2);
  d.w = x.size(3);
  d.kh = kh;
  d.kw = kw;
  d.sh = sh;
  d.sw = sw;
  d.ph = ph;
  d.pw = pw;
  d.oh = (d.h + 2 * ph - kh) / sh + 1;
  d.ow = (d.w + 2 * pw - kw) / sw + 1;
  if (d.oh <= 0 || d.ow <= 0) throw ShapeMismatchError("pool output would be empty");
  return d;
}
}  // namespace

Var maxpool2d(const Var& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  const Tensor& vx = x.value();
  PoolDims d = pool_dims(vx, kh, kw, sh, sw, ph, pw);
  Tensor out({d.n, d.c, d.oh, d.ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const double* px = vx.data();
  double* po = out.data();
  int64_t oi = 0;
  for (int64_t i = 0; i < d.n; ++i)
    for (int64_t c = 0; c < d.c; ++c) {
      const double* plane = px + (i * d.c + c) * d.h * d.w;
      for (int64_t oy = 0; oy < d.oh; ++oy)
        for (int64_t ox = 0; ox < d.ow; ++ox, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int ki = 0; ki < d.kh; ++ki) {
            const int64_t iy = oy * d.sh - d.ph + ki;
            if (iy < 0 || iy >= d.h) continue;
            for (int kj = 0; kj < d.kw; ++kj) {
              const int64_t ix = ox * d.sw - d.pw + kj;
              if (ix < 0 || ix >= d.w) continue;
              const double v = plane[iy * d.w + ix];
              if (v > best) {
                best = v;
                best_idx = (i * d.c + c) * d.h * d.w + iy * d.w + ix;
              }
            }
          }
          po[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
    }
  return make_node(std::move(out), {x}, [argmax](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& dx = self.parents[0]->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      const int64_t src = (*argmax)[static_cast<size_t>(i)];
      if (src >= 0) dx[src] += self.grad[i];
    }
  });
}

Var avgpool2d(const Var& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  const Tensor& vx = x.value();
  PoolDims d = pool_dims(vx, kh, kw, sh, sw, ph, pw);
  const double inv = 1.0 / (kh * kw);  // padded cells count toward the mean
  Tensor out({d.n, d.c, d.oh, d.ow});
  const double* px = vx.data();
  double* po = out.data();
  int64_t oi = 0;
  for (int64_t i = 0; i < d.n; ++i)
    for (int64_t c = 0; c < d.c; ++c) {
      const double* plane = px + (i * d.c + c) * d.h * d.w;
      for (int64_t oy = 0; oy < d.oh; ++oy)
        for (int64_t ox = 0; ox < d.ow; ++ox, ++oi) {
          double s = 0.0;
          for (int ki = 0; ki < d.kh; ++ki) {
            const int64_t iy = oy * d.sh - d.ph + ki;
            if (iy < 0 || iy >= d.h) continue;
            for (int kj = 0; kj < d.kw; ++kj) {
              const int64_t ix = ox * d.sw - d.pw + kj;
              if (ix >= 0 && ix < d.w) s += plane[iy * d.w + ix];
            }
          }
          po[oi] = s * inv;
        }
    }
  return make_node(std::move(out), {x}, [d, inv](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& dx = self.parents[0]->ensure_grad();
    int64_t oi = 0;
    for (int64_t i = 0; i < d.n; ++i)
      for (int64_t c = 0; c < d.c; ++c) {
        double* plane = dx.data() + (i * d.c + c) * d.h * d.w;
        for (int64_t oy = 0; oy < d.oh; ++oy)
          for (int64_t ox = 0; ox < d.ow; ++ox, ++oi) {
            const double g = self.grad[oi] * inv;
            for (int ki = 0; ki < d.kh; ++ki) {
              const int64_t iy = oy * d.sh - d.ph + ki;
              if (iy < 0 || iy >= d.h) continue;
              for (int kj = 0; kj < d.kw; ++kj) {
                const int64_t ix = ox * d.sw - d.pw + kj;
                if (ix >= 0 && ix < d.w) plane[iy * d.w + ix] += g;
              }
            }
          }
      }
  });
}

Var global_avgpool(const Var& x) {
  const Tensor& vx = x.value();
  if (vx.ndim() != 4) throw ShapeMismatchError("global_avgpool expects 4-d input");
  const int64_t n = vx.size(0), c = vx.size(1), hw = vx.size(2) * vx.size(3);
  Tensor out({n, c});
  const double inv = 1.0 / static_cast<double>(hw);
  for (int64_t i = 0; i < n * c; ++i) {
    const double* plane = vx.data() + i * hw;
    double s = 0.0;
    for (int64_t j = 0; j < hw; ++j) s += plane[j];
    out[i] = s * inv;
  }
  return make_node(std::move(out), {x}, [n, c, hw, inv](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& dx = self.parents[0]->ensure_grad();
    for (int64_t i = 0; i < n * c; ++i) {
      const double g = self.grad[i] * inv;
      double* plane = dx.data() + i * hw;
      for (int64_t j = 0; j < hw; ++j) plane[j] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Var& running_mean,
                 Var& running_var, bool training, double momentum, double eps) {
  const Tensor& vx = x.value();
  if (vx.ndim() != 4) throw ShapeMismatchError("batch_norm2d expects 4-d input");
  const int64_t n = vx.size(0), c = vx.size(1), hw = vx.size(2) * vx.size(3);
  if (gamma.value().numel() != c || beta.value().numel() != c)
    throw ShapeMismatchError("batch_norm2d parameter shape mismatch");
  const int64_t m = n * hw;

  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(c), 0.0);
  auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(c), 0.0);

  if (training) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double* plane = vx.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) s += plane[j];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double* plane = vx.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const double dxv = plane[j] - mu;
          v += dxv * dxv;
        }
      }
      const double var_b = v / static_cast<double>(m);
      (*mean)[static_cast<size_t>(ch)] = mu;
      (*invstd)[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var_b + eps);
      // running stats use the unbiased variance
      const double var_u = m > 1 ? v / static_cast<double>(m - 1) : var_b;
      running_mean.value_mut()[ch] = (1.0 - momentum) * running_mean.value()[ch] + momentum * mu;
      running_var.value_mut()[ch] = (1.0 - momentum) * running_var.value()[ch] + momentum * var_u;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      (*mean)[static_cast<size_t>(ch)] = running_mean.value()[ch];
      (*invstd)[static_cast<size_t>(ch)] = 1.0 / std::sqrt(running_var.value()[ch] + eps);
    }
  }

  Tensor out(vx.shape());
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double mu = (*mean)[static_cast<size_t>(ch)];
      const double is = (*invstd)[static_cast<size_t>(ch)];
      const double g = pg[ch], bb = pb[ch];
      const double* src = vx.data() + (i * c + ch) * hw;
      double* dst = out.data() + (i * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j) dst[j] = (src[j] - mu) * is * g + bb;
    }

  return make_node(std::move(out), {x, gamma, beta},
                   [n, c, hw, m, mean, invstd, training](TapeNode& self) {
    const Tensor& vx2 = self.parents[0]->value;
    const Tensor& vgamma = self.parents[1]->value;
    const bool need_dx = self.parents[0]->requires_grad;
    const bool need_dg = self.parents[1]->requires_grad;
    const bool need_db = self.parents[2]->requires_grad;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double mu = (*mean)[static_cast<size_t>(ch)];
      const double is = (*invstd)[static_cast<size_t>(ch)];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double* dy = self.grad.data() + (i * c + ch) * hw;
        const double* xv = vx2.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          sum_dy += dy[j];
          sum_dy_xhat += dy[j] * (xv[j] - mu) * is;
        }
      }
      if (need_dg) self.parents[1]->ensure_grad()[ch] += sum_dy_xhat;
      if (need_db) self.parents[2]->ensure_grad()[ch] += sum_dy;
      if (need_dx) {
        Tensor& dx = self.parents[0]->ensure_grad();
        const double g = vgamma[ch];
        if (training) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t i = 0; i < n; ++i) {
            const double* dy = self.grad.data() + (i * c + ch) * hw;
            const double* xv = vx2.data() + (i * c + ch) * hw;
            double* dxp = dx.data() + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
              const double xhat = (xv[j] - mu) * is;
              dxp[j] += g * is * (dy[j] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
            }
          }
        } else {
          for (int64_t i = 0; i < n; ++i) {
            const double* dy = self.grad.data() + (i * c + ch) * hw;
            double* dxp = dx.data() + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) dxp[j] += dy[j] * g * is;
          }
        }
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& vx = x.value();
  const int64_t d = vx.size(-1);
  const int64_t rows = vx.numel() / d;
  if (gamma.value().numel() != d || beta.value().numel() != d)
    throw ShapeMismatchError("layer_norm parameter shape mismatch");

  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  Tensor out(vx.shape());
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = vx.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<double>(d);
    double v = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double t = src[j] - mu;
      v += t * t;
    }
    const double is = 1.0 / std::sqrt(v / static_cast<double>(d) + eps);
    (*mean)[static_cast<size_t>(r)] = mu;
    (*invstd)[static_cast<size_t>(r)] = is;
    double* dst = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = (src[j] - mu) * is * pg[j] + pb[j];
  }

  return make_node(std::move(out), {x, gamma, beta}, [rows, d, mean, invstd](TapeNode& self) {
    const Tensor& vx2 = self.parents[0]->value;
    const Tensor& vgamma = self.parents[1]->value;
    const bool need_dx = self.parents[0]->requires_grad;
    const bool need_dg = self.parents[1]->requires_grad;
    const bool need_db = self.parents[2]->requires_grad;
    const double inv_d = 1.0 / static_cast<double>(d);
    for (int64_t r = 0; r < rows; ++r) {
      const double mu = (*mean)[static_cast<size_t>(r)];
      const double is = (*invstd)[static_cast<size_t>(r)];
      const double* dy = self.grad.data() + r * d;
      const double* xv = vx2.data() + r * d;
      double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double xhat = (xv[j] - mu) * is;
        const double dyg = dy[j] * vgamma[j];
        sum_dyg += dyg;
        sum_dyg_xhat += dyg * xhat;
        if (need_dg) self.parents[1]->ensure_grad()[j] += dy[j] * xhat;
        if (need_db) self.parents[2]->ensure_grad()[j] += dy[j];
      }
      if (need_dx) {
        Tensor& dx = self.parents[0]->ensure_grad();
        double* dxp = dx.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
          const double xhat = (xv[j] - mu) * is;
          const double dyg = dy[j] * vgamma[j];
          dxp[j] += is * (dyg - inv_d * sum_dyg - xhat * inv_d * sum_dyg_xhat);
        }
      }
    }
  });
}

Var softmax_lastdim(const Var& x) {
  const Tensor& vx = x.value();
  const int64_t d = vx.size(-1);
  const int64_t rows = vx.numel() / d;
  Tensor out(vx.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = vx.data() + r * d;
    double* dst = out.data() + r * d;
    double mx = src[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, src[j]);
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      dst[j] = std::exp(src[j] - mx);
      s += dst[j];
    }
    const double inv = 1.0 / s;
    for (int64_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  return make_node(std::move(out), {x}, [rows, d](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& dx = self.parents[0]->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* dy = self.grad.data() + r * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      double* dxp = dx.data() + r * d;
      for (int64_t j = 0; j < d; ++j) dxp[j] += y[j] * (dy[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Var concat(const std::vector<Var>& xs, int dim) {
  if (xs.empty()) throw PreconditionError("concat of zero tensors");
  const int nd = xs[0].value().ndim();
  if (dim < 0) dim += nd;
  if (dim < 0 || dim >= nd) throw ShapeMismatchError("concat dim out of range");
  std::vector<int64_t> out_shape = xs[0].value().shape();
  int64_t cat_total = 0;
  for (const auto& v : xs) {
    const Tensor& t = v.value();
    if (t.ndim() != nd) throw ShapeMismatchError("concat rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != dim && t.shape()[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)])
        throw ShapeMismatchError("concat shape mismatch");
    cat_total += t.size(dim);
  }
  out_shape[static_cast<size_t>(dim)] = cat_total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = dim + 1; i < nd; ++i) inner *= out_shape[static_cast<size_t>(i)];

  Tensor out(out_shape);
  int64_t offset = 0;
  for (const auto& v : xs) {
    const Tensor& t = v.value();
    const int64_t len = t.size(dim) * inner;
    for (int64_t r = 0; r < outer; ++r)
      std::memcpy(out.data() + r * cat_total * inner + offset, t.data() + r * len,
                  sizeof(double) * static_cast<size_t>(len));
    offset += len;
  }

  std::vector<int64_t> lens;
  for (const auto& v : xs) lens.push_back(v.value().size(dim) * inner);
  return make_node(std::move(out), xs, [outer, inner, cat_total, lens](TapeNode& self) {
    int64_t offset = 0;
    for (size_t pi = 0; pi < self.parents.size(); ++pi) {
      const int64_t len = lens[pi];
      if (self.parents[pi]->requires_grad) {
        Tensor& d = self.parents[pi]->ensure_grad();
        for (int64_t r = 0; r < outer; ++r) {
          const double* src = self.grad.data() + r * cat_total * inner + offset;
          double* dst = d.data() + r * len;
          for (int64_t j = 0; j < len; ++j) dst[j] += src[j];
        }
      }
      offset += len;
    }
  });
}

Var narrow(const Var& x, int dim, int64_t start, int64_t len) {
  const Tensor& vx = x.value();
  const int nd = vx.ndim();
  if (dim < 0) dim += nd;
  if (dim < 0 || dim >= nd) throw ShapeMismatchError("narrow dim out of range");
  const int64_t dsize = vx.size(dim);
  if (start < 0 || len <= 0 || start + len > dsize) throw ShapeMismatchError("narrow range invalid");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= vx.size(i);
  for (int i = dim + 1; i < nd; ++i) inner *= vx.size(i);

  std::vector<int64_t> out_shape = vx.shape();
  out_shape[static_cast<size_t>(dim)] = len;
  Tensor out(out_shape);
  for (int64_t r = 0; r < outer; ++r)
    std::memcpy(out.data() + r * len * inner, vx.data() + (r * dsize + start) * inner,
                sizeof(double) * static_cast<size_t>(len * inner));
  return make_node(std::move(out), {x}, [outer, inner, dsize, start, len](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& d = self.parents[0]->ensure_grad();
    for (int64_t r = 0; r < outer; ++r) {
      const double* src = self.grad.data() + r * len * inner;
      double* dst = d.data() + (r * dsize + start) * inner;
      for (int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
    }
  });
}

namespace {
// walk output linearly, gathering from permuted input offsets
void permute_copy(const Tensor& in, const std::vector<int>& order, Tensor& out) {
  const int nd = in.ndim();
  std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * in.size(i + 1);
  std::vector<int64_t> out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = in.size(order[static_cast<size_t>(i)]);
  std::vector<int64_t> src_stride(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) src_stride[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(order[static_cast<size_t>(i)])];
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  const int64_t total = in.numel();
  int64_t src = 0;
  for (int64_t o = 0; o < total; ++o) {
    out.data()[o] = in.data()[src];
    for (int i = nd - 1; i >= 0; --i) {
      idx[static_cast<size_t>(i)]++;
      src += src_stride[static_cast<size_t>(i)];
      if (idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
      src -= src_stride[static_cast<size_t>(i)] * out_shape[static_cast<size_t>(i)];
      idx[static_cast<size_t>(i)] = 0;
    }
  }
}
}  // namespace

Var permute(const Var& x, const std::vector<int>& order) {
  const Tensor& vx = x.value();
  const int nd = vx.ndim();
  if (static_cast<int>(order.size()) != nd) throw ShapeMismatchError("permute order rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int o : order) {
    if (o < 0 || o >= nd || seen[static_cast<size_t>(o)]) throw ShapeMismatchError("permute order invalid");
    seen[static_cast<size_t>(o)] = true;
  }
  std::vector<int64_t> out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = vx.size(order[static_cast<size_t>(i)]);
  Tensor out(out_shape);
  permute_copy(vx, order, out);

  // inverse permutation for backward
  std::vector<int> inv(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) inv[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;
  return make_node(std::move(out), {x}, [inv](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor tmp(self.parents[0]->value.shape());
    permute_copy(self.grad, inv, tmp);
    self.parents[0]->accum_grad(tmp);
  });
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_node(std::move(out), {x}, [](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    self.parents[0]->accum_grad(self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

Var tile_batch(const Var& x, int64_t n) {
  const Tensor& vx = x.value();
  if (n <= 0) throw PreconditionError("tile_batch requires n >= 1");
  std::vector<int64_t> out_shape;
  out_shape.push_back(n);
  for (int64_t s : vx.shape()) out_shape.push_back(s);
  Tensor out(out_shape);
  const int64_t len = vx.numel();
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * len, vx.data(), sizeof(double) * static_cast<size_t>(len));
  return make_node(std::move(out), {x}, [n, len](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& d = self.parents[0]->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const double* src = self.grad.data() + i * len;
      for (int64_t j = 0; j < len; ++j) d[j] += src[j];
    }
  });
}

Var add_channel(const Var& x, const Var& t) {
  const Tensor& vx = x.value();
  const Tensor& vt = t.value();
  if (vx.ndim() != 4 || vt.ndim() != 2 || vx.size(0) != vt.size(0) || vx.size(1) != vt.size(1))
    throw ShapeMismatchError("add_channel: x " + vx.shape_str() + " t " + vt.shape_str());
  const int64_t n = vx.size(0), c = vx.size(1), hw = vx.size(2) * vx.size(3);
  Tensor out(vx.shape());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double tv = vt[i * c + ch];
      const double* src = vx.data() + (i * c + ch) * hw;
      double* dst = out.data() + (i * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j) dst[j] = src[j] + tv;
    }
  return make_node(std::move(out), {x, t}, [n, c, hw](TapeNode& self) {
    acc(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor& d = self.parents[1]->ensure_grad();
      for (int64_t i = 0; i < n * c; ++i) {
        const double* g = self.grad.data() + i * hw;
        double s = 0.0;
        for (int64_t j = 0; j < hw; ++j) s += g[j];
        d[i] += s;
      }
    }
  });
}

Var mean_dim0(const Var& x) {
  const Tensor& vx = x.value();
  if (vx.ndim() != 2) throw ShapeMismatchError("mean_dim0 expects 2-d input");
  const int64_t n = vx.size(0), k = vx.size(1);
  Tensor out({k});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) out[j] += vx[i * k + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (int64_t j = 0; j < k; ++j) out[j] *= inv;
  return make_node(std::move(out), {x}, [n, k, inv](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& d = self.parents[0]->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < k; ++j) d[i * k + j] += self.grad[j] * inv;
  });
}

Var sum_all(const Var& x) {
  const Tensor& vx = x.value();
  double s = 0.0;
  for (int64_t i = 0; i < vx.numel(); ++i) s += vx[i];
  return make_node(Tensor::scalar(s), {x}, [](TapeNode& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& d = self.parents[0]->ensure_grad();
    const double g = self.grad[0];
    for (int64_t i = 0; i < d.numel(); ++i) d[i] += g;
  });
}

}  // namespace nf
