#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nutrifuse/autodiff.hpp"
#include "nutrifuse/rng.hpp"

namespace nf {

enum class Init {
  zeros,
  ones,
  he_normal,       // N(0, sqrt(2 / fan_in))
  trunc_normal_02  // N(0, 0.02), resampled into [-2σ, 2σ]
};

// Named parameter registry. Every entry is initialized from an RNG seeded by
// (store seed, parameter name), so two models that share a parameter name get
// bitwise-identical initial values regardless of construction order.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  Var param(const std::string& name, const std::vector<int64_t>& shape, Init init,
            int64_t fan_in = 0);
  Var buffer(const std::string& name, const std::vector<int64_t>& shape, double fill);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  Var get(const std::string& name) const;

  std::vector<Var> trainable() const;
  std::vector<std::string> trainable_names() const;
  const std::map<std::string, std::pair<Var, bool>>& entries() const { return entries_; }

  void zero_grad();
  int64_t parameter_count() const;
  uint64_t seed() const { return seed_; }

  // flat binary snapshot of every entry (params and buffers)
  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  uint64_t seed_;
  std::map<std::string, std::pair<Var, bool>> entries_;  // name -> (var, trainable)
};

struct Conv2d {
  Var w, b;
  int sh = 1, sw = 1, ph = 0, pw = 0;

  static Conv2d make(ParamStore& ps, const std::string& name, int64_t in_c, int64_t out_c,
                     int kh, int kw, int sh, int sw, int ph, int pw, bool bias = true);
  Var forward(const Var& x) const;
};

struct BatchNorm2d {
  Var gamma, beta;
  mutable Var running_mean, running_var;
  double eps = 1e-5;

  static BatchNorm2d make(ParamStore& ps, const std::string& name, int64_t c, double eps = 1e-5);
  Var forward(const Var& x, bool training) const;
};

struct Linear {
  Var w, b;

  static Linear make(ParamStore& ps, const std::string& name, int64_t in_f, int64_t out_f,
                     bool bias = true);
  Var forward(const Var& x) const;
};

struct LayerNorm {
  Var gamma, beta;
  double eps = 1e-6;

  static LayerNorm make(ParamStore& ps, const std::string& name, int64_t d, double eps = 1e-6);
  Var forward(const Var& x) const;
};

struct MultiHeadSelfAttention {
  Linear q, k, v, out;
  int heads = 1;
  int64_t dim = 0;

  static MultiHeadSelfAttention make(ParamStore& ps, const std::string& name, int64_t d,
                                     int heads);
  Var forward(const Var& x) const;  // (N, T, D) -> (N, T, D)
};

}  // namespace nf
