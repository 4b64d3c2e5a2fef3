#include "nutrifuse/nn.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

Tensor draw(const std::vector<int64_t>& shape, Init init, int64_t fan_in, Rng& rng) {
  Tensor t(shape);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      t.fill(1.0);
      break;
    case Init::he_normal: {
      if (fan_in <= 0) throw PreconditionError("he_normal init requires fan_in");
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * std;
      break;
    }
    case Init::trunc_normal_02: {
      for (int64_t i = 0; i < t.numel(); ++i) {
        double v = rng.normal() * 0.02;
        while (std::fabs(v) > 0.04) v = rng.normal() * 0.02;
        t[i] = v;
      }
      break;
    }
  }
  return t;
}

}  // namespace

Var ParamStore::param(const std::string& name, const std::vector<int64_t>& shape, Init init,
                      int64_t fan_in) {
  auto it = entries_.find(name);
  if (it != entries_.end()) return it->second.first;
  Rng rng = Rng::from_parts(seed_, fnv1a64(name));
  Var v(draw(shape, init, fan_in, rng), true);
  entries_.emplace(name, std::make_pair(v, true));
  return v;
}

Var ParamStore::buffer(const std::string& name, const std::vector<int64_t>& shape, double fill) {
  auto it = entries_.find(name);
  if (it != entries_.end()) return it->second.first;
  Var v(Tensor::full(shape, fill), false);
  entries_.emplace(name, std::make_pair(v, false));
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw PreconditionError("unknown parameter: " + name);
  return it->second.first;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& [name, entry] : entries_)
    if (entry.second) out.push_back(entry.first);
  return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, entry] : entries_)
    if (entry.second) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, entry] : entries_) entry.first.zero_grad();
}

int64_t ParamStore::parameter_count() const {
  int64_t total = 0;
  for (const auto& [name, entry] : entries_)
    if (entry.second) total += entry.first.value().numel();
  return total;
}

void ParamStore::save(std::ostream& os) const {
  const uint64_t count = entries_.size();
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, entry] : entries_) {
    const uint32_t nlen = static_cast<uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    os.write(name.data(), nlen);
    const uint8_t trainable = entry.second ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&trainable), sizeof(trainable));
    const Tensor& t = entry.first.value();
    const uint32_t ndim = static_cast<uint32_t>(t.ndim());
    os.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
    for (int64_t s : t.shape()) os.write(reinterpret_cast<const char*>(&s), sizeof(s));
    os.write(reinterpret_cast<const char*>(t.data()), sizeof(double) * static_cast<size_t>(t.numel()));
  }
  if (!os) throw IoError("failed writing parameter snapshot");
}

void ParamStore::load(std::istream& is) {
  uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!is) throw IoError("truncated parameter snapshot");
  for (uint64_t e = 0; e < count; ++e) {
    uint32_t nlen = 0;
    is.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    uint8_t trainable = 0;
    is.read(reinterpret_cast<char*>(&trainable), sizeof(trainable));
    uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
    if (!is || ndim > 8) throw IoError("corrupt parameter snapshot");
    std::vector<int64_t> shape(ndim);
    for (auto& s : shape) is.read(reinterpret_cast<char*>(&s), sizeof(s));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), sizeof(double) * static_cast<size_t>(t.numel()));
    if (!is) throw IoError("truncated parameter snapshot");
    auto it = entries_.find(name);
    if (it != entries_.end()) {
      if (!same_shape(it->second.first.value(), t))
        throw ShapeMismatchError("snapshot shape mismatch for " + name);
      it->second.first.value_mut() = std::move(t);
    } else {
      Var v(std::move(t), trainable != 0);
      entries_.emplace(name, std::make_pair(v, trainable != 0));
    }
  }
}

Conv2d Conv2d::make(ParamStore& ps, const std::string& name, int64_t in_c, int64_t out_c, int kh,
                    int kw, int sh, int sw, int ph, int pw, bool bias) {
  Conv2d c;
  c.w = ps.param(name + ".weight", {out_c, in_c, kh, kw}, Init::he_normal, in_c * kh * kw);
  if (bias) c.b = ps.param(name + ".bias", {out_c}, Init::zeros);
  c.sh = sh;
  c.sw = sw;
  c.ph = ph;
  c.pw = pw;
  return c;
}

Var Conv2d::forward(const Var& x) const { return conv2d(x, w, b, sh, sw, ph, pw); }

BatchNorm2d BatchNorm2d::make(ParamStore& ps, const std::string& name, int64_t c, double eps) {
  BatchNorm2d bn;
  bn.gamma = ps.param(name + ".weight", {c}, Init::ones);
  bn.beta = ps.param(name + ".bias", {c}, Init::zeros);
  bn.running_mean = ps.buffer(name + ".running_mean", {c}, 0.0);
  bn.running_var = ps.buffer(name + ".running_var", {c}, 1.0);
  bn.eps = eps;
  return bn;
}

Var BatchNorm2d::forward(const Var& x, bool training) const {
  return batch_norm2d(x, gamma, beta, running_mean, running_var, training, 0.1, eps);
}

Linear Linear::make(ParamStore& ps, const std::string& name, int64_t in_f, int64_t out_f,
                    bool bias) {
  Linear l;
  l.w = ps.param(name + ".weight", {out_f, in_f}, Init::he_normal, in_f);
  if (bias) l.b = ps.param(name + ".bias", {out_f}, Init::zeros);
  return l;
}

Var Linear::forward(const Var& x) const { return linear(x, w, b); }

LayerNorm LayerNorm::make(ParamStore& ps, const std::string& name, int64_t d, double eps) {
  LayerNorm ln;
  ln.gamma = ps.param(name + ".weight", {d}, Init::ones);
  ln.beta = ps.param(name + ".bias", {d}, Init::zeros);
  ln.eps = eps;
  return ln;
}

Var LayerNorm::forward(const Var& x) const { return layer_norm(x, gamma, beta, eps); }

MultiHeadSelfAttention MultiHeadSelfAttention::make(ParamStore& ps, const std::string& name,
                                                    int64_t d, int heads) {
  if (d % heads != 0) throw PreconditionError("attention dim not divisible by head count");
  MultiHeadSelfAttention a;
  a.q = Linear::make(ps, name + ".q", d, d);
  a.k = Linear::make(ps, name + ".k", d, d);
  a.v = Linear::make(ps, name + ".v", d, d);
  a.out = Linear::make(ps, name + ".out", d, d);
  a.heads = heads;
  a.dim = d;
  return a;
}

Var MultiHeadSelfAttention::forward(const Var& x) const {
  const int64_t n = x.value().size(0), t = x.value().size(1), d = x.value().size(2);
  if (d != dim) throw ShapeMismatchError("attention input dim mismatch");
  const int64_t dh = d / heads;

  auto split = [&](const Linear& l) {
    Var flat = l.forward(reshape(x, {n * t, d}));
    Var r = reshape(flat, {n, t, heads, dh});
    return reshape(permute(r, {0, 2, 1, 3}), {n * heads, t, dh});
  };
  Var qh = split(q);
  Var kh = split(k);
  Var vh = split(v);

  Var att = softmax_lastdim(scale(bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
  Var ctx = bmm(att, vh);  // (N*H, T, Dh)
  Var merged = reshape(permute(reshape(ctx, {n, heads, t, dh}), {0, 2, 1, 3}), {n * t, d});
  return reshape(out.forward(merged), {n, t, d});
}

}  // namespace nf
