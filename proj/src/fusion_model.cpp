#include "nutrifuse/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "nutrifuse/errors.hpp"

namespace nf {

using json = nlohmann::json;

const char* to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::resnet50: return "resnet50";
    case BackboneKind::resnet101: return "resnet101";
    case BackboneKind::inception_v3: return "inception_v3";
    case BackboneKind::vit_base16: return "vit_base16";
    case BackboneKind::tiny_cnn: return "tiny_cnn";
  }
  throw PreconditionError("bad BackboneKind");
}

BackboneKind backbone_from_string(const std::string& s) {
  if (s == "resnet50") return BackboneKind::resnet50;
  if (s == "resnet101") return BackboneKind::resnet101;
  if (s == "inception_v3") return BackboneKind::inception_v3;
  if (s == "vit_base16") return BackboneKind::vit_base16;
  if (s == "tiny_cnn") return BackboneKind::tiny_cnn;
  throw ConfigError("unknown backbone: " + s);
}

int FusionConfig::default_resolution(BackboneKind k) {
  switch (k) {
    case BackboneKind::inception_v3: return 299;
    case BackboneKind::tiny_cnn: return 32;
    default: return 224;
  }
}

const char* FusionConfig::default_site(BackboneKind k) {
  switch (k) {
    case BackboneKind::resnet50:
    case BackboneKind::resnet101: return "block2";
    case BackboneKind::inception_v3: return "mixed6e_with_aux";
    case BackboneKind::vit_base16: return "extra_token";
    case BackboneKind::tiny_cnn: return "block2";
  }
  throw PreconditionError("bad BackboneKind");
}

FusionConfig FusionConfig::defaults(BackboneKind k, int64_t embed_dim) {
  FusionConfig cfg;
  cfg.backbone = k;
  cfg.injection_site = default_site(k);
  cfg.input_resolution = default_resolution(k);
  cfg.fuse_auxiliary = k == BackboneKind::inception_v3;
  cfg.embed_dim = embed_dim;
  return cfg;
}

void FusionConfig::validate() const {
  static const std::map<BackboneKind, std::vector<std::string>> kSites = {
      {BackboneKind::resnet50, {"block1", "block2", "block3", "block4"}},
      {BackboneKind::resnet101, {"block1", "block2", "block3", "block4"}},
      {BackboneKind::inception_v3,
       {"post_maxpool2", "mixed6e_with_aux", "mixed6e_no_aux", "post_mixed7c"}},
      {BackboneKind::vit_base16, {"extra_token"}},
      {BackboneKind::tiny_cnn, {"block1", "block2"}},
  };
  const auto& sites = kSites.at(backbone);
  if (std::find(sites.begin(), sites.end(), injection_site) == sites.end())
    throw ConfigError("injection site '" + injection_site + "' is invalid for backbone " +
                      to_string(backbone));
  const int want = default_resolution(backbone);
  if (backbone == BackboneKind::tiny_cnn) {
    if (input_resolution < 8 || input_resolution % 4 != 0)
      throw ConfigError("tiny_cnn resolution must be a positive multiple of 4");
  } else if (input_resolution != want) {
    throw ConfigError(std::string(to_string(backbone)) + " requires input resolution " +
                      std::to_string(want));
  }
  if (backbone == BackboneKind::inception_v3) {
    if (fuse_auxiliary != (injection_site == "mixed6e_with_aux"))
      throw ConfigError("fuse_auxiliary must be set exactly for the mixed6e_with_aux site");
  } else if (fuse_auxiliary) {
    throw ConfigError("fuse_auxiliary applies only to inception_v3");
  }
  if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
}

int64_t FusionConfig::injection_dim() const {
  switch (backbone) {
    case BackboneKind::resnet50:
    case BackboneKind::resnet101: {
      if (injection_site == "block1") return 256;
      if (injection_site == "block2") return 512;
      if (injection_site == "block3") return 1024;
      return 2048;
    }
    case BackboneKind::inception_v3: {
      if (injection_site == "post_maxpool2") return 192;
      if (injection_site == "post_mixed7c") return 2048;
      return 768;
    }
    case BackboneKind::vit_base16: return 768;
    case BackboneKind::tiny_cnn: return injection_site == "block1" ? 8 : 16;
  }
  throw PreconditionError("bad BackboneKind");
}

std::unique_ptr<Backbone> make_backbone(const FusionConfig& cfg, ParamStore& ps) {
  switch (cfg.backbone) {
    case BackboneKind::resnet50:
    case BackboneKind::resnet101: return make_resnet(cfg, ps);
    case BackboneKind::inception_v3: return make_inception_v3(cfg, ps);
    case BackboneKind::vit_base16: return make_vit_base16(cfg, ps);
    case BackboneKind::tiny_cnn: return make_tiny_cnn(cfg, ps);
  }
  throw PreconditionError("bad BackboneKind");
}

double NutritionPrediction::operator[](int i) const {
  switch (i) {
    case 0: return calories;
    case 1: return fat;
    case 2: return carbohydrates;
    case 3: return protein;
  }
  throw IndexError("prediction field index out of range");
}

Tensor fuse_broadcast(const Tensor& x, const Tensor& t) {
  if (x.ndim() != 3 || t.ndim() != 1 || t.size(0) != x.size(0))
    throw ShapeMismatchError("fuse_broadcast: x " + x.shape_str() + " t " + t.shape_str());
  const int64_t c = x.size(0), hw = x.size(1) * x.size(2);
  Tensor out(x.shape());
  for (int64_t ch = 0; ch < c; ++ch) {
    const double add = t[ch];
    const double* src = x.data() + ch * hw;
    double* dst = out.data() + ch * hw;
    for (int64_t j = 0; j < hw; ++j) dst[j] = src[j] + add;
  }
  return out;
}

TokenSequence fuse_token(const TokenSequence& seq, const Tensor& t) {
  if (seq.has_ingredient)
    throw DoubleFusionError("token sequence already carries an ingredient token");
  if (seq.tokens.ndim() != 2 || t.ndim() != 1 || t.size(0) != seq.dim())
    throw ShapeMismatchError("fuse_token: tokens " + seq.tokens.shape_str() + " t " +
                             t.shape_str());
  const int64_t n = seq.length(), d = seq.dim();
  TokenSequence out;
  out.has_ingredient = true;
  out.tokens = Tensor({n + 1, d});
  std::memcpy(out.tokens.data(), seq.tokens.data(), sizeof(double) * static_cast<size_t>(d));
  std::memcpy(out.tokens.data() + d, t.data(), sizeof(double) * static_cast<size_t>(d));
  std::memcpy(out.tokens.data() + 2 * d, seq.tokens.data() + d,
              sizeof(double) * static_cast<size_t>((n - 1) * d));
  return out;
}

NutritionHeads NutritionHeads::make(ParamStore& ps, const std::string& prefix, int64_t in_f) {
  NutritionHeads h;
  for (int i = 0; i < 4; ++i) {
    const std::string base = prefix + "." + NutritionVector::field_name(i);
    h.fc1[static_cast<size_t>(i)] = Linear::make(ps, base + ".fc1", in_f, kHidden);
    h.fc2[static_cast<size_t>(i)] = Linear::make(ps, base + ".fc2", kHidden, 1);
  }
  return h;
}

Var NutritionHeads::forward(const Var& pooled) const {
  std::vector<Var> outs;
  outs.reserve(4);
  for (int i = 0; i < 4; ++i) {
    Var hidden = relu(fc1[static_cast<size_t>(i)].forward(pooled));
    outs.push_back(fc2[static_cast<size_t>(i)].forward(hidden));  // (N, 1)
  }
  return concat(outs, 1);
}

LossResult compute_loss(const Var& preds, const Tensor& targets) {
  const Tensor& p = preds.value();
  if (p.ndim() != 2 || p.size(1) != 4 || targets.ndim() != 2 || targets.size(1) != 4)
    throw LengthMismatchError("loss expects (N, 4) predictions and targets");
  if (p.size(0) != targets.size(0) || p.size(0) == 0)
    throw LengthMismatchError("prediction/target batch sizes differ or are empty");
  Var per_task = mean_dim0(absolute(sub(preds, Var(targets))));
  LossResult r;
  r.per_task = per_task.value();
  r.total = sum_all(per_task);
  return r;
}

std::pair<double, std::array<double, 4>> compute_loss_values(
    const std::vector<NutritionPrediction>& preds, const std::vector<NutritionVector>& targets) {
  if (preds.size() != targets.size() || preds.empty())
    throw LengthMismatchError("prediction/target counts differ or are empty");
  std::array<double, 4> per_task{0.0, 0.0, 0.0, 0.0};
  for (size_t j = 0; j < preds.size(); ++j)
    for (int i = 0; i < 4; ++i)
      per_task[static_cast<size_t>(i)] += std::fabs(preds[j][i] - targets[j][i]);
  double total = 0.0;
  for (auto& v : per_task) {
    v /= static_cast<double>(preds.size());
    total += v;
  }
  return {total, per_task};
}

FusionModel::FusionModel(const FusionConfig& cfg, uint64_t seed, std::string encoder_id)
    : cfg_(cfg), seed_(seed), encoder_id_(std::move(encoder_id)) {
  cfg_.validate();
  ps_ = std::make_unique<ParamStore>(seed);
  build();
}

void FusionModel::build() {
  backbone_ = make_backbone(cfg_, *ps_);
  const int64_t c = cfg_.injection_dim();
  proj_w_ = ps_->param("projector.weight", {c, cfg_.embed_dim}, Init::he_normal, cfg_.embed_dim);
  proj_b_ = ps_->param("projector.bias", {c}, Init::zeros);
  heads_ = NutritionHeads::make(*ps_, "heads", backbone_->feature_dim());
  if (cfg_.backbone == BackboneKind::inception_v3)
    aux_heads_ = NutritionHeads::make(*ps_, "aux_heads", backbone_->aux_feature_dim());
  initialized_ = true;
}

Var FusionModel::forward_batch(const Var& images, const Var& ingredient_embeddings, bool training,
                               Var* aux_preds) {
  if (!initialized_) throw UninitializedModelError("model has no parameters loaded");
  const Tensor& im = images.value();
  if (im.ndim() != 4 || im.size(1) != 3)
    throw ShapeMismatchError("expected images of shape (N, 3, R, R), got " + im.shape_str());
  if (im.size(2) != cfg_.input_resolution || im.size(3) != cfg_.input_resolution)
    throw ResolutionError("image is " + std::to_string(im.size(2)) + "x" +
                          std::to_string(im.size(3)) + ", model expects " +
                          std::to_string(cfg_.input_resolution) + "x" +
                          std::to_string(cfg_.input_resolution));

  Var fused;
  if (ingredient_embeddings.defined()) {
    const Tensor& e = ingredient_embeddings.value();
    if (e.ndim() != 2 || e.size(0) != im.size(0) || e.size(1) != cfg_.embed_dim)
      throw ShapeMismatchError("ingredient embeddings must be (N, " +
                               std::to_string(cfg_.embed_dim) + "), got " + e.shape_str());
    fused = relu(linear(ingredient_embeddings, proj_w_, proj_b_));  // (N, C)
  }

  BackboneOutput out = backbone_->forward(images, fused, training);
  Var preds = heads_.forward(out.pooled);
  if (aux_preds) {
    *aux_preds = out.aux_pooled.defined() ? aux_heads_.forward(out.aux_pooled) : Var();
  }
  if (!preds.value().all_finite()) throw DivergenceError("non-finite model output");
  return preds;
}

NutritionPrediction FusionModel::predict(const Tensor& image_chw,
                                         const std::vector<std::string>& ingredients,
                                         TextEncoder& encoder, EmbeddingCache* cache) {
  if (!initialized_) throw UninitializedModelError("model has no parameters loaded");
  if (image_chw.ndim() != 3) throw ShapeMismatchError("predict expects a (3, R, R) image");
  NoGradGuard ng;
  Var images(image_chw.reshaped({1, image_chw.size(0), image_chw.size(1), image_chw.size(2)}));
  Var emb;
  if (!ingredients.empty()) {
    if (encoder.dim() != cfg_.embed_dim)
      throw ConfigMismatchError("encoder dimension " + std::to_string(encoder.dim()) +
                                " does not match model embed_dim " +
                                std::to_string(cfg_.embed_dim));
    Tensor t = aggregate_ingredients(ingredients, encoder, cache, cfg_.l2_normalize_terms);
    emb = Var(t.reshaped({1, cfg_.embed_dim}));
  }
  Var preds = forward_batch(images, emb, false);
  NutritionPrediction p;
  p.calories = preds.value()[0];
  p.fat = preds.value()[1];
  p.carbohydrates = preds.value()[2];
  p.protein = preds.value()[3];
  return p;
}

namespace {
constexpr char kCkptMagic[4] = {'N', 'F', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void FusionModel::save_checkpoint(const std::string& path) const {
  if (!initialized_) throw UninitializedModelError("cannot checkpoint an empty model");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kCkptMagic, 4);
  os.write(reinterpret_cast<const char*>(&kCkptVersion), sizeof(kCkptVersion));
  json header;
  header["backbone"] = to_string(cfg_.backbone);
  header["injection_site"] = cfg_.injection_site;
  header["input_resolution"] = cfg_.input_resolution;
  header["fuse_auxiliary"] = cfg_.fuse_auxiliary;
  header["embed_dim"] = cfg_.embed_dim;
  header["l2_normalize_terms"] = cfg_.l2_normalize_terms;
  header["encoder_id"] = encoder_id_;
  header["seed"] = seed_;
  const std::string blob = header.dump();
  const uint32_t len = static_cast<uint32_t>(blob.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(blob.data(), len);
  ps_->save(os);
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

FusionModel FusionModel::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw IoError("not a model checkpoint: " + path);
  if (version != kCkptVersion)
    throw ConfigMismatchError("unsupported checkpoint version " + std::to_string(version));
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string blob(len, '\0');
  is.read(blob.data(), len);
  if (!is) throw IoError("truncated checkpoint header: " + path);
  json header;
  try {
    header = json::parse(blob);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  FusionConfig cfg;
  cfg.backbone = backbone_from_string(header.at("backbone").get<std::string>());
  cfg.injection_site = header.at("injection_site").get<std::string>();
  cfg.input_resolution = header.at("input_resolution").get<int>();
  cfg.fuse_auxiliary = header.at("fuse_auxiliary").get<bool>();
  cfg.embed_dim = header.at("embed_dim").get<int64_t>();
  cfg.l2_normalize_terms = header.at("l2_normalize_terms").get<bool>();
  FusionModel model(cfg, header.at("seed").get<uint64_t>(),
                    header.at("encoder_id").get<std::string>());
  model.ps_->load(is);
  return model;
}

void FusionModel::verify_matches(const FusionConfig& expected) const {
  auto complain = [](const std::string& what) {
    throw ConfigMismatchError("checkpoint does not match requested configuration: " + what);
  };
  if (cfg_.backbone != expected.backbone) complain("backbone");
  if (cfg_.injection_site != expected.injection_site) complain("injection_site");
  if (cfg_.input_resolution != expected.input_resolution) complain("input_resolution");
  if (cfg_.fuse_auxiliary != expected.fuse_auxiliary) complain("fuse_auxiliary");
  if (cfg_.embed_dim != expected.embed_dim) complain("embed_dim");
  if (cfg_.l2_normalize_terms != expected.l2_normalize_terms) complain("l2_normalize_terms");
}

}  // namespace nf
