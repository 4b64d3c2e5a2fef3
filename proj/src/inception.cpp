#include "nutrifuse/backbones.hpp"
#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

constexpr double kBnEps = 1e-3;

struct ConvBn {
  Conv2d conv;
  BatchNorm2d bn;

  static ConvBn make(ParamStore& ps, const std::string& name, int64_t in_c, int64_t out_c, int kh,
                     int kw, int sh = 1, int sw = 1, int ph = 0, int pw = 0) {
    ConvBn c;
    c.conv = Conv2d::make(ps, name + ".conv", in_c, out_c, kh, kw, sh, sw, ph, pw, false);
    c.bn = BatchNorm2d::make(ps, name + ".bn", out_c, kBnEps);
    return c;
  }

  Var forward(const Var& x, bool training) const {
    return relu(bn.forward(conv.forward(x), training));
  }
};

struct BlockA {
  ConvBn b1x1, b5x5_1, b5x5_2, b3x3_1, b3x3_2, b3x3_3, bpool;

  static BlockA make(ParamStore& ps, const std::string& n, int64_t in_c, int64_t pool_c) {
    BlockA b;
    b.b1x1 = ConvBn::make(ps, n + ".b1x1", in_c, 64, 1, 1);
    b.b5x5_1 = ConvBn::make(ps, n + ".b5x5_1", in_c, 48, 1, 1);
    b.b5x5_2 = ConvBn::make(ps, n + ".b5x5_2", 48, 64, 5, 5, 1, 1, 2, 2);
    b.b3x3_1 = ConvBn::make(ps, n + ".b3x3_1", in_c, 64, 1, 1);
    b.b3x3_2 = ConvBn::make(ps, n + ".b3x3_2", 64, 96, 3, 3, 1, 1, 1, 1);
    b.b3x3_3 = ConvBn::make(ps, n + ".b3x3_3", 96, 96, 3, 3, 1, 1, 1, 1);
    b.bpool = ConvBn::make(ps, n + ".bpool", in_c, pool_c, 1, 1);
    return b;
  }

  Var forward(const Var& x, bool training) const {
    Var p1 = b1x1.forward(x, training);
    Var p2 = b5x5_2.forward(b5x5_1.forward(x, training), training);
    Var p3 = b3x3_3.forward(b3x3_2.forward(b3x3_1.forward(x, training), training), training);
    Var p4 = bpool.forward(avgpool2d(x, 3, 3, 1, 1, 1, 1), training);
    return concat({p1, p2, p3, p4}, 1);
  }
};

struct BlockB {
  ConvBn b3x3, bdbl_1, bdbl_2, bdbl_3;

  static BlockB make(ParamStore& ps, const std::string& n, int64_t in_c) {
    BlockB b;
    b.b3x3 = ConvBn::make(ps, n + ".b3x3", in_c, 384, 3, 3, 2, 2);
    b.bdbl_1 = ConvBn::make(ps, n + ".bdbl_1", in_c, 64, 1, 1);
    b.bdbl_2 = ConvBn::make(ps, n + ".bdbl_2", 64, 96, 3, 3, 1, 1, 1, 1);
    b.bdbl_3 = ConvBn::make(ps, n + ".bdbl_3", 96, 96, 3, 3, 2, 2);
    return b;
  }

  Var forward(const Var& x, bool training) const {
    Var p1 = b3x3.forward(x, training);
    Var p2 = bdbl_3.forward(bdbl_2.forward(bdbl_1.forward(x, training), training), training);
    Var p3 = maxpool2d(x, 3, 3, 2, 2, 0, 0);
    return concat({p1, p2, p3}, 1);
  }
};

struct BlockC {
  ConvBn b1x1, b7_1, b7_2, b7_3, bd_1, bd_2, bd_3, bd_4, bd_5, bpool;

  static BlockC make(ParamStore& ps, const std::string& n, int64_t in_c, int64_t c7) {
    BlockC b;
    b.b1x1 = ConvBn::make(ps, n + ".b1x1", in_c, 192, 1, 1);
    b.b7_1 = ConvBn::make(ps, n + ".b7_1", in_c, c7, 1, 1);
    b.b7_2 = ConvBn::make(ps, n + ".b7_2", c7, c7, 1, 7, 1, 1, 0, 3);
    b.b7_3 = ConvBn::make(ps, n + ".b7_3", c7, 192, 7, 1, 1, 1, 3, 0);
    b.bd_1 = ConvBn::make(ps, n + ".bd_1", in_c, c7, 1, 1);
    b.bd_2 = ConvBn::make(ps, n + ".bd_2", c7, c7, 7, 1, 1, 1, 3, 0);
    b.bd_3 = ConvBn::make(ps, n + ".bd_3", c7, c7, 1, 7, 1, 1, 0, 3);
    b.bd_4 = ConvBn::make(ps, n + ".bd_4", c7, c7, 7, 1, 1, 1, 3, 0);
    b.bd_5 = ConvBn::make(ps, n + ".bd_5", c7, 192, 1, 7, 1, 1, 0, 3);
    b.bpool = ConvBn::make(ps, n + ".bpool", in_c, 192, 1, 1);
    return b;
  }

  Var forward(const Var& x, bool training) const {
    Var p1 = b1x1.forward(x, training);
    Var p2 = b7_3.forward(b7_2.forward(b7_1.forward(x, training), training), training);
    Var p3 = bd_1.forward(x, training);
    p3 = bd_2.forward(p3, training);
    p3 = bd_3.forward(p3, training);
    p3 = bd_4.forward(p3, training);
    p3 = bd_5.forward(p3, training);
    Var p4 = bpool.forward(avgpool2d(x, 3, 3, 1, 1, 1, 1), training);
    return concat({p1, p2, p3, p4}, 1);
  }
};

struct BlockD {
  ConvBn b3_1, b3_2, b7_1, b7_2, b7_3, b7_4;

  static BlockD make(ParamStore& ps, const std::string& n, int64_t in_c) {
    BlockD b;
    b.b3_1 = ConvBn::make(ps, n + ".b3_1", in_c, 192, 1, 1);
    b.b3_2 = ConvBn::make(ps, n + ".b3_2", 192, 320, 3, 3, 2, 2);
    b.b7_1 = ConvBn::make(ps, n + ".b7_1", in_c, 192, 1, 1);
    b.b7_2 = ConvBn::make(ps, n + ".b7_2", 192, 192, 1, 7, 1, 1, 0, 3);
    b.b7_3 = ConvBn::make(ps, n + ".b7_3", 192, 192, 7, 1, 1, 1, 3, 0);
    b.b7_4 = ConvBn::make(ps, n + ".b7_4", 192, 192, 3, 3, 2, 2);
    return b;
  }

  Var forward(const Var& x, bool training) const {
    Var p1 = b3_2.forward(b3_1.forward(x, training), training);
    Var p2 = b7_4.forward(b7_3.forward(b7_2.forward(b7_1.forward(x, training), training), training), training);
    Var p3 = maxpool2d(x, 3, 3, 2, 2, 0, 0);
    return concat({p1, p2, p3}, 1);
  }
};

struct BlockE {
  ConvBn b1x1, b3_0, b3_a, b3_b, bd_0, bd_1, bd_a, bd_b, bpool;

  static BlockE make(ParamStore& ps, const std::string& n, int64_t in_c) {
    BlockE b;
    b.b1x1 = ConvBn::make(ps, n + ".b1x1", in_c, 320, 1, 1);
    b.b3_0 = ConvBn::make(ps, n + ".b3_0", in_c, 384, 1, 1);
    b.b3_a = ConvBn::make(ps, n + ".b3_a", 384, 384, 1, 3, 1, 1, 0, 1);
    b.b3_b = ConvBn::make(ps, n + ".b3_b", 384, 384, 3, 1, 1, 1, 1, 0);
    b.bd_0 = ConvBn::make(ps, n + ".bd_0", in_c, 448, 1, 1);
    b.bd_1 = ConvBn::make(ps, n + ".bd_1", 448, 384, 3, 3, 1, 1, 1, 1);
    b.bd_a = ConvBn::make(ps, n + ".bd_a", 384, 384, 1, 3, 1, 1, 0, 1);
    b.bd_b = ConvBn::make(ps, n + ".bd_b", 384, 384, 3, 1, 1, 1, 1, 0);
    b.bpool = ConvBn::make(ps, n + ".bpool", in_c, 192, 1, 1);
    return b;
  }

  Var forward(const Var& x, bool training) const {
    Var p1 = b1x1.forward(x, training);
    Var t = b3_0.forward(x, training);
    Var p2 = concat({b3_a.forward(t, training), b3_b.forward(t, training)}, 1);
    Var u = bd_1.forward(bd_0.forward(x, training), training);
    Var p3 = concat({bd_a.forward(u, training), bd_b.forward(u, training)}, 1);
    Var p4 = bpool.forward(avgpool2d(x, 3, 3, 1, 1, 1, 1), training);
    return concat({p1, p2, p3, p4}, 1);
  }
};

class InceptionV3 : public Backbone {
 public:
  InceptionV3(const FusionConfig& cfg, ParamStore& ps) : cfg_(cfg) {
    c1a_ = ConvBn::make(ps, "inc.c1a", 3, 32, 3, 3, 2, 2);
    c2a_ = ConvBn::make(ps, "inc.c2a", 32, 32, 3, 3);
    c2b_ = ConvBn::make(ps, "inc.c2b", 32, 64, 3, 3, 1, 1, 1, 1);
    c3b_ = ConvBn::make(ps, "inc.c3b", 64, 80, 1, 1);
    c4a_ = ConvBn::make(ps, "inc.c4a", 80, 192, 3, 3);
    m5b_ = BlockA::make(ps, "inc.m5b", 192, 32);
    m5c_ = BlockA::make(ps, "inc.m5c", 256, 64);
    m5d_ = BlockA::make(ps, "inc.m5d", 288, 64);
    m6a_ = BlockB::make(ps, "inc.m6a", 288);
    m6b_ = BlockC::make(ps, "inc.m6b", 768, 128);
    m6c_ = BlockC::make(ps, "inc.m6c", 768, 160);
    m6d_ = BlockC::make(ps, "inc.m6d", 768, 160);
    m6e_ = BlockC::make(ps, "inc.m6e", 768, 192);
    m7a_ = BlockD::make(ps, "inc.m7a", 768);
    m7b_ = BlockE::make(ps, "inc.m7b", 1280);
    m7c_ = BlockE::make(ps, "inc.m7c", 2048);
    aux0_ = ConvBn::make(ps, "inc.aux.conv0", 768, 128, 1, 1);
    aux1_ = ConvBn::make(ps, "inc.aux.conv1", 128, 768, 5, 5);
  }

  int64_t feature_dim() const override { return 2048; }
  int64_t aux_feature_dim() const override { return 768; }
  int64_t injection_dim() const override {
    if (cfg_.injection_site == "post_maxpool2") return 192;
    if (cfg_.injection_site == "post_mixed7c") return 2048;
    return 768;  // mixed6e sites
  }
  int input_resolution() const override { return cfg_.input_resolution; }

  BackboneOutput forward(const Var& images, const Var& fused, bool training) override {
    const std::string& site = cfg_.injection_site;
    Var h = c1a_.forward(images, training);
    h = c2a_.forward(h, training);
    h = c2b_.forward(h, training);
    h = maxpool2d(h, 3, 3, 2, 2, 0, 0);
    h = c3b_.forward(h, training);
    h = c4a_.forward(h, training);
    h = maxpool2d(h, 3, 3, 2, 2, 0, 0);
    if (fused.defined() && site == "post_maxpool2") h = add_channel(h, fused);
    h = m5b_.forward(h, training);
    h = m5c_.forward(h, training);
    h = m5d_.forward(h, training);
    h = m6a_.forward(h, training);
    h = m6b_.forward(h, training);
    h = m6c_.forward(h, training);
    h = m6d_.forward(h, training);
    h = m6e_.forward(h, training);

    // the auxiliary branch sees the fused features only under the _with_aux
    // site; under _no_aux the main path is fused after the aux tap
    Var aux;
    if (fused.defined() && site == "mixed6e_with_aux") h = add_channel(h, fused);
    if (training) {
      Var a = avgpool2d(h, 5, 5, 3, 3, 0, 0);
      a = aux0_.forward(a, training);
      a = aux1_.forward(a, training);  // (N, 768, 1, 1)
      aux = global_avgpool(a);
    }
    if (fused.defined() && site == "mixed6e_no_aux") h = add_channel(h, fused);

    h = m7a_.forward(h, training);
    h = m7b_.forward(h, training);
    h = m7c_.forward(h, training);
    if (fused.defined() && site == "post_mixed7c") h = add_channel(h, fused);
    return {global_avgpool(h), aux};
  }

 private:
  FusionConfig cfg_;
  ConvBn c1a_, c2a_, c2b_, c3b_, c4a_;
  BlockA m5b_, m5c_, m5d_;
  BlockB m6a_;
  BlockC m6b_, m6c_, m6d_, m6e_;
  BlockD m7a_;
  BlockE m7b_, m7c_;
  ConvBn aux0_, aux1_;
};

}  // namespace

std::unique_ptr<Backbone> make_inception_v3(const FusionConfig& cfg, ParamStore& ps) {
  return std::make_unique<InceptionV3>(cfg, ps);
}

}  // namespace nf
