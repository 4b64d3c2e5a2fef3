#include "nutrifuse/backbones.hpp"
#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

struct Bottleneck {
  Conv2d conv1, conv2, conv3;
  BatchNorm2d bn1, bn2, bn3;
  Conv2d down_conv;
  BatchNorm2d down_bn;
  bool has_down = false;

  static Bottleneck make(ParamStore& ps, const std::string& name, int64_t in_c, int64_t mid_c,
                         int64_t out_c, int stride) {
    Bottleneck b;
    b.conv1 = Conv2d::make(ps, name + ".conv1", in_c, mid_c, 1, 1, 1, 1, 0, 0, false);
    b.bn1 = BatchNorm2d::make(ps, name + ".bn1", mid_c);
    b.conv2 = Conv2d::make(ps, name + ".conv2", mid_c, mid_c, 3, 3, stride, stride, 1, 1, false);
    b.bn2 = BatchNorm2d::make(ps, name + ".bn2", mid_c);
    b.conv3 = Conv2d::make(ps, name + ".conv3", mid_c, out_c, 1, 1, 1, 1, 0, 0, false);
    b.bn3 = BatchNorm2d::make(ps, name + ".bn3", out_c);
    if (stride != 1 || in_c != out_c) {
      b.has_down = true;
      b.down_conv = Conv2d::make(ps, name + ".down.conv", in_c, out_c, 1, 1, stride, stride, 0, 0, false);
      b.down_bn = BatchNorm2d::make(ps, name + ".down.bn", out_c);
    }
    return b;
  }

  Var forward(const Var& x, bool training) const {
    Var h = relu(bn1.forward(conv1.forward(x), training));
    h = relu(bn2.forward(conv2.forward(h), training));
    h = bn3.forward(conv3.forward(h), training);
    Var skip = has_down ? down_bn.forward(down_conv.forward(x), training) : x;
    return relu(add(h, skip));
  }
};

class ResNet : public Backbone {
 public:
  ResNet(const FusionConfig& cfg, ParamStore& ps, const std::vector<int>& block_counts)
      : cfg_(cfg) {
    stem_conv_ = Conv2d::make(ps, "resnet.stem.conv", 3, 64, 7, 7, 2, 2, 3, 3, false);
    stem_bn_ = BatchNorm2d::make(ps, "resnet.stem.bn", 64);
    const int64_t mids[4] = {64, 128, 256, 512};
    int64_t in_c = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const int64_t mid = mids[stage];
      const int64_t out_c = mid * 4;
      std::vector<Bottleneck> blocks;
      for (int i = 0; i < block_counts[static_cast<size_t>(stage)]; ++i) {
        const int stride = (stage > 0 && i == 0) ? 2 : 1;
        blocks.push_back(Bottleneck::make(
            ps, "resnet.layer" + std::to_string(stage + 1) + "." + std::to_string(i), in_c, mid,
            out_c, stride));
        in_c = out_c;
      }
      stages_.push_back(std::move(blocks));
    }
    if (cfg_.injection_site == "block1") inject_stage_ = 0;
    else if (cfg_.injection_site == "block2") inject_stage_ = 1;
    else if (cfg_.injection_site == "block3") inject_stage_ = 2;
    else if (cfg_.injection_site == "block4") inject_stage_ = 3;
    else throw ConfigError("bad resnet injection site: " + cfg_.injection_site);
  }

  int64_t feature_dim() const override { return 2048; }
  int64_t injection_dim() const override { return 256ll << inject_stage_; }
  int input_resolution() const override { return cfg_.input_resolution; }

  BackboneOutput forward(const Var& images, const Var& fused, bool training) override {
    Var h = relu(stem_bn_.forward(stem_conv_.forward(images), training));
    h = maxpool2d(h, 3, 3, 2, 2, 1, 1);
    for (int stage = 0; stage < 4; ++stage) {
      for (const Bottleneck& b : stages_[static_cast<size_t>(stage)]) h = b.forward(h, training);
      if (fused.defined() && stage == inject_stage_) h = add_channel(h, fused);
    }
    return {global_avgpool(h), Var()};
  }

 private:
  FusionConfig cfg_;
  Conv2d stem_conv_;
  BatchNorm2d stem_bn_;
  std::vector<std::vector<Bottleneck>> stages_;
  int inject_stage_ = 1;
};

}  // namespace

std::unique_ptr<Backbone> make_resnet(const FusionConfig& cfg, ParamStore& ps) {
  const std::vector<int> counts = cfg.backbone == BackboneKind::resnet50
                                      ? std::vector<int>{3, 4, 6, 3}
                                      : std::vector<int>{3, 4, 23, 3};
  return std::make_unique<ResNet>(cfg, ps, counts);
}

}  // namespace nf
