#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "nutrifuse/backbones.hpp"
#include "nutrifuse/data_model.hpp"
#include "nutrifuse/fusion_config.hpp"
#include "nutrifuse/nn.hpp"
#include "nutrifuse/text_embedding.hpp"

namespace nf {

struct NutritionPrediction {
  double calories = 0.0;
  double fat = 0.0;
  double carbohydrates = 0.0;
  double protein = 0.0;

  double operator[](int i) const;
};

// ---------------------------------------------------------------------------
// pure fusion arithmetic
// ---------------------------------------------------------------------------

// output[c,h,w] = x[c,h,w] + t[c]
Tensor fuse_broadcast(const Tensor& x, const Tensor& t);

struct TokenSequence {
  Tensor tokens;               // (T, D); class token at index 0
  bool has_ingredient = false;  // ingredient token at index 1 when set

  int64_t length() const { return tokens.size(0); }
  int64_t dim() const { return tokens.size(1); }
};

// inserts the ingredient token at index 1, leaving every other token intact
TokenSequence fuse_token(const TokenSequence& seq, const Tensor& t);

// ---------------------------------------------------------------------------
// heads and loss
// ---------------------------------------------------------------------------

struct NutritionHeads {
  static constexpr int64_t kHidden = 4096;

  std::array<Linear, 4> fc1;
  std::array<Linear, 4> fc2;

  static NutritionHeads make(ParamStore& ps, const std::string& prefix, int64_t in_f);
  Var forward(const Var& pooled) const;  // (N, F) -> (N, 4)
};

struct LossResult {
  Var total;        // scalar
  Tensor per_task;  // (4,) detached values
};

// per_task[i] = mean_j |pred[j][i] - target[j][i]|; total = sum of the four
LossResult compute_loss(const Var& preds, const Tensor& targets);
std::pair<double, std::array<double, 4>> compute_loss_values(
    const std::vector<NutritionPrediction>& preds, const std::vector<NutritionVector>& targets);

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

class FusionModel {
 public:
  FusionModel() = default;  // uninitialized shell; any forward throws
  FusionModel(const FusionConfig& cfg, uint64_t seed, std::string encoder_id);

  bool initialized() const { return initialized_; }
  const FusionConfig& config() const { return cfg_; }
  const std::string& encoder_id() const { return encoder_id_; }
  uint64_t seed() const { return seed_; }
  ParamStore& params() { return *ps_; }
  const ParamStore& params() const { return *ps_; }

  // images (N, 3, R, R); ingredient_embeddings (N, E) pre-projector, or an
  // undefined Var to bypass fusion; aux_preds receives the auxiliary-branch
  // predictions for inception in training mode
  Var forward_batch(const Var& images, const Var& ingredient_embeddings, bool training,
                    Var* aux_preds = nullptr);

  NutritionPrediction predict(const Tensor& image_chw, const std::vector<std::string>& ingredients,
                              TextEncoder& encoder, EmbeddingCache* cache = nullptr);

  void save_checkpoint(const std::string& path) const;
  static FusionModel load_checkpoint(const std::string& path);
  void verify_matches(const FusionConfig& expected) const;  // ConfigMismatchError

 private:
  FusionConfig cfg_;
  uint64_t seed_ = 0;
  std::string encoder_id_;
  std::unique_ptr<ParamStore> ps_;
  std::unique_ptr<Backbone> backbone_;
  NutritionHeads heads_;
  NutritionHeads aux_heads_;
  Var proj_w_, proj_b_;
  bool initialized_ = false;

  void build();
};

}  // namespace nf
