#pragma once

#include <memory>

#include "nutrifuse/fusion_config.hpp"
#include "nutrifuse/nn.hpp"

namespace nf {

struct BackboneOutput {
  Var pooled;      // (N, F)
  Var aux_pooled;  // (N, F_aux) for inception in training mode, undefined otherwise
};

class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual int64_t feature_dim() const = 0;
  virtual int64_t aux_feature_dim() const { return 0; }
  virtual int64_t injection_dim() const = 0;
  virtual int input_resolution() const = 0;
  // fused: (N, injection_dim) projected ingredient features added at the
  // configured site; pass an undefined Var to bypass fusion entirely
  virtual BackboneOutput forward(const Var& images, const Var& fused, bool training) = 0;
};

std::unique_ptr<Backbone> make_backbone(const FusionConfig& cfg, ParamStore& ps);

std::unique_ptr<Backbone> make_resnet(const FusionConfig& cfg, ParamStore& ps);
std::unique_ptr<Backbone> make_inception_v3(const FusionConfig& cfg, ParamStore& ps);
std::unique_ptr<Backbone> make_vit_base16(const FusionConfig& cfg, ParamStore& ps);
std::unique_ptr<Backbone> make_tiny_cnn(const FusionConfig& cfg, ParamStore& ps);

}  // namespace nf
