#include "nutrifuse/backbones.hpp"
#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

struct EncoderBlock {
  LayerNorm ln1, ln2;
  MultiHeadSelfAttention attn;
  Linear mlp1, mlp2;

  static EncoderBlock make(ParamStore& ps, const std::string& name, int64_t d, int heads,
                           int64_t mlp_dim) {
    EncoderBlock b;
    b.ln1 = LayerNorm::make(ps, name + ".ln1", d);
    b.attn = MultiHeadSelfAttention::make(ps, name + ".attn", d, heads);
    b.ln2 = LayerNorm::make(ps, name + ".ln2", d);
    b.mlp1 = Linear::make(ps, name + ".mlp1", d, mlp_dim);
    b.mlp2 = Linear::make(ps, name + ".mlp2", mlp_dim, d);
    return b;
  }

  Var forward(const Var& x) const {
    Var h = add(x, attn.forward(ln1.forward(x)));
    const int64_t n = h.value().size(0), t = h.value().size(1), d = h.value().size(2);
    Var m = reshape(mlp2.forward(gelu(mlp1.forward(reshape(ln2.forward(h), {n * t, d})))), {n, t, d});
    return add(h, m);
  }
};

class VitBase16 : public Backbone {
 public:
  static constexpr int64_t kDim = 768;
  static constexpr int kPatch = 16;
  static constexpr int kLayers = 12;
  static constexpr int kHeads = 12;
  static constexpr int64_t kMlpDim = 3072;

  VitBase16(const FusionConfig& cfg, ParamStore& ps) : cfg_(cfg) {
    patches_per_side_ = cfg.input_resolution / kPatch;
    n_patches_ = static_cast<int64_t>(patches_per_side_) * patches_per_side_;
    patch_proj_ = Conv2d::make(ps, "vit.patch", 3, kDim, kPatch, kPatch, kPatch, kPatch, 0, 0, true);
    cls_token_ = ps.param("vit.cls_token", {kDim}, Init::trunc_normal_02);
    pos_embed_ = ps.param("vit.pos_embed", {n_patches_ + 1, kDim}, Init::trunc_normal_02);
    // learned slot for the inserted ingredient token; starts at zero so an
    // absent token and a just-initialized one are indistinguishable
    pos_embed_ingredient_ = ps.param("vit.pos_embed_ingredient", {kDim}, Init::zeros);
    for (int i = 0; i < kLayers; ++i)
      blocks_.push_back(EncoderBlock::make(ps, "vit.block" + std::to_string(i), kDim, kHeads, kMlpDim));
    final_ln_ = LayerNorm::make(ps, "vit.ln", kDim);
  }

  int64_t feature_dim() const override { return kDim; }
  int64_t injection_dim() const override { return kDim; }
  int input_resolution() const override { return cfg_.input_resolution; }

  BackboneOutput forward(const Var& images, const Var& fused, bool /*training*/) override {
    const int64_t n = images.value().size(0);
    Var p = patch_proj_.forward(images);  // (N, D, ps, ps)
    Var patches = permute(reshape(p, {n, kDim, n_patches_}), {0, 2, 1});  // (N, P, D)
    patches = add(patches, tile_batch(narrow(pos_embed_, 0, 1, n_patches_), n));

    Var cls = add(tile_batch(cls_token_, n),
                  tile_batch(reshape(narrow(pos_embed_, 0, 0, 1), {kDim}), n));  // (N, D)

    std::vector<Var> parts;
    parts.push_back(reshape(cls, {n, 1, kDim}));
    if (fused.defined()) {
      Var ing = add(fused, tile_batch(pos_embed_ingredient_, n));  // (N, D)
      parts.push_back(reshape(ing, {n, 1, kDim}));
    }
    parts.push_back(patches);
    Var x = concat(parts, 1);

    for (const EncoderBlock& b : blocks_) x = b.forward(x);
    x = final_ln_.forward(x);
    Var cls_out = reshape(narrow(x, 1, 0, 1), {n, kDim});
    return {cls_out, Var()};
  }

 private:
  FusionConfig cfg_;
  int patches_per_side_ = 14;
  int64_t n_patches_ = 196;
  Conv2d patch_proj_;
  Var cls_token_, pos_embed_, pos_embed_ingredient_;
  std::vector<EncoderBlock> blocks_;
  LayerNorm final_ln_;
};

}  // namespace

std::unique_ptr<Backbone> make_vit_base16(const FusionConfig& cfg, ParamStore& ps) {
  if (cfg.input_resolution % VitBase16::kPatch != 0)
    throw ConfigError("vit resolution must be a multiple of 16");
  return std::make_unique<VitBase16>(cfg, ps);
}

}  // namespace nf
