#include "nutrifuse/backbones.hpp"
#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

class TinyCnn : public Backbone {
 public:
  TinyCnn(const FusionConfig& cfg, ParamStore& ps) : cfg_(cfg) {
    conv1_ = Conv2d::make(ps, "tiny.conv1", 3, 8, 3, 3, 1, 1, 1, 1, false);
    bn1_ = BatchNorm2d::make(ps, "tiny.bn1", 8);
    conv2_ = Conv2d::make(ps, "tiny.conv2", 8, 16, 3, 3, 1, 1, 1, 1, false);
    bn2_ = BatchNorm2d::make(ps, "tiny.bn2", 16);
    conv3_ = Conv2d::make(ps, "tiny.conv3", 16, 32, 3, 3, 1, 1, 1, 1, false);
    bn3_ = BatchNorm2d::make(ps, "tiny.bn3", 32);
  }

  int64_t feature_dim() const override { return 32; }
  int64_t injection_dim() const override { return cfg_.injection_site == "block1" ? 8 : 16; }
  int input_resolution() const override { return cfg_.input_resolution; }

  BackboneOutput forward(const Var& images, const Var& fused, bool training) override {
    Var h = maxpool2d(relu(bn1_.forward(conv1_.forward(images), training)), 2, 2, 2, 2, 0, 0);
    if (fused.defined() && cfg_.injection_site == "block1") h = add_channel(h, fused);
    h = maxpool2d(relu(bn2_.forward(conv2_.forward(h), training)), 2, 2, 2, 2, 0, 0);
    if (fused.defined() && cfg_.injection_site == "block2") h = add_channel(h, fused);
    h = relu(bn3_.forward(conv3_.forward(h), training));
    return {global_avgpool(h), Var()};
  }

 private:
  FusionConfig cfg_;
  Conv2d conv1_, conv2_, conv3_;
  BatchNorm2d bn1_, bn2_, bn3_;
};

}  // namespace

std::unique_ptr<Backbone> make_tiny_cnn(const FusionConfig& cfg, ParamStore& ps) {
  return std::make_unique<TinyCnn>(cfg, ps);
}

}  // namespace nf
