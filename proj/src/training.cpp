#include "nutrifuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <utility>

#include "nutrifuse/autodiff.hpp"
#include "nutrifuse/errors.hpp"
#include "nutrifuse/image.hpp"
#include "nutrifuse/rng.hpp"

namespace nf {

void OptimizerConfig::validate() const {
  if (algorithm != "rmsprop") throw ConfigError("unsupported optimizer '" + algorithm + "'");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (decay <= 0.0 || decay >= 1.0) throw ConfigError("decay must be in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

std::string init_mode_name(InitMode m) {
  return m == InitMode::random ? "random" : "pretrained";
}

InitMode init_mode_from_string(const std::string& s) {
  if (s == "random") return InitMode::random;
  if (s == "pretrained") return InitMode::pretrained;
  throw ConfigError("unknown init mode '" + s + "'");
}

void TrainConfig::validate() const {
  optimizer.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (init == InitMode::pretrained && pretrained_weights.empty())
    throw ConfigError("pretrained init requires a weights path");
  robustness.validate();
}

RmsProp::RmsProp(OptimizerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void RmsProp::step(ParamStore& ps) {
  for (const auto& [name, entry] : ps.entries()) {
    if (!entry.second) continue;
    Var p = entry.first;
    if (!p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& value = p.value_mut();
    auto [sq_it, fresh] = sq_.try_emplace(name, Tensor(value.shape()));
    if (fresh) buf_.emplace(name, Tensor(value.shape()));
    Tensor& sq = sq_it->second;
    Tensor& buf = buf_.at(name);
    const int64_t n = value.numel();
    for (int64_t i = 0; i < n; ++i) {
      sq[i] = cfg_.decay * sq[i] + (1.0 - cfg_.decay) * g[i] * g[i];
      buf[i] = cfg_.momentum * buf[i] + g[i] / (std::sqrt(sq[i]) + cfg_.epsilon);
      value[i] -= cfg_.lr * buf[i];
    }
  }
}

double report_score(const EvalReport& report) {
  double s = 0.0;
  for (const auto& f : report.per_field) s += f.relative_percent;
  return s / NutritionVector::kFields;
}

namespace {

Tensor batch_images(const SampleSource& set, const std::vector<size_t>& idx, size_t lo, size_t hi,
                    int resolution, Rng& rng) {
  const int64_t b = static_cast<int64_t>(hi - lo);
  Tensor out({b, 3, resolution, resolution});
  const int64_t per = 3LL * resolution * resolution;
  for (size_t k = lo; k < hi; ++k) {
    Image img = resize_bilinear(set.image(idx[k]), resolution, resolution);
    if (rng.bernoulli(0.5)) img = hflip(img);
    Tensor chw = image_to_tensor(img);
    std::memcpy(out.data() + static_cast<int64_t>(k - lo) * per, chw.data(),
                static_cast<size_t>(per) * sizeof(double));
  }
  return out;
}

Tensor batch_targets(const SampleSource& set, const std::vector<size_t>& idx, size_t lo,
                     size_t hi) {
  Tensor out({static_cast<int64_t>(hi - lo), NutritionVector::kFields});
  for (size_t k = lo; k < hi; ++k)
    for (int i = 0; i < NutritionVector::kFields; ++i)
      out[static_cast<int64_t>(k - lo) * NutritionVector::kFields + i] =
          set.sample(idx[k]).nutrition[i];
  return out;
}

// (B, E) aggregated embeddings, or undefined when every list is empty
Var batch_embeddings(const SampleSource& set, const std::vector<size_t>& idx, size_t lo, size_t hi,
                     const FusionConfig& fcfg, TextEncoder& encoder, EmbeddingCache* cache,
                     const IngredientVocabulary* vocab, const RobustnessConfig& rcfg, Rng& rng) {
  std::vector<std::vector<std::string>> lists;
  lists.reserve(hi - lo);
  size_t n_with = 0;
  for (size_t k = lo; k < hi; ++k) {
    std::vector<std::string> ing = set.sample(idx[k]).ingredients;
    if (vocab != nullptr && !ing.empty()) ing = apply_robustness(ing, *vocab, rcfg, rng);
    if (!ing.empty()) ++n_with;
    lists.push_back(std::move(ing));
  }
  if (n_with == 0) return Var();
  if (n_with != lists.size())
    throw PreconditionError("batch mixes ingredient-annotated and unannotated samples");
  if (encoder.dim() != fcfg.embed_dim)
    throw ConfigMismatchError("encoder dimension does not match model embed_dim");
  Tensor out({static_cast<int64_t>(lists.size()), fcfg.embed_dim});
  for (size_t k = 0; k < lists.size(); ++k) {
    Tensor e = aggregate_ingredients(lists[k], encoder, cache, fcfg.l2_normalize_terms);
    std::memcpy(out.data() + static_cast<int64_t>(k) * fcfg.embed_dim, e.data(),
                static_cast<size_t>(fcfg.embed_dim) * sizeof(double));
  }
  return Var(out);
}

}  // namespace

TrainResult train_model(const TrainConfig& tcfg, const FusionConfig& fcfg,
                        const SampleSource& train_set, const SampleSource& val_set,
                        TextEncoder& encoder, const IngredientVocabulary* vocab,
                        const std::string& out_dir, EmbeddingCache* cache) {
  tcfg.validate();
  fcfg.validate();
  if (train_set.size() == 0) throw EmptyDatasetError("empty training set");
  if (val_set.size() == 0) throw EmptyDatasetError("empty validation set");
  std::filesystem::create_directories(out_dir);

  FusionModel model;
  if (tcfg.init == InitMode::pretrained) {
    model = FusionModel::load_checkpoint(tcfg.pretrained_weights);
    model.verify_matches(fcfg);
  } else {
    model = FusionModel(fcfg, tcfg.seed, encoder.name());
  }

  RmsProp opt(tcfg.optimizer);
  TrainResult result;
  result.best_checkpoint = out_dir + "/best.ckpt";

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    Rng loader_rng = Rng::from_parts(tcfg.seed, static_cast<uint64_t>(epoch));
    Rng robust_rng = Rng::from_parts(tcfg.robustness.seed, static_cast<uint64_t>(epoch));
    shuffle_in_place(order, loader_rng);

    double epoch_loss = 0.0;
    int64_t steps = 0;
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(tcfg.batch_size)) {
      size_t hi = std::min(order.size(), lo + static_cast<size_t>(tcfg.batch_size));
      Var images(batch_images(train_set, order, lo, hi, fcfg.input_resolution, loader_rng));
      Tensor targets = batch_targets(train_set, order, lo, hi);
      Var emb = batch_embeddings(train_set, order, lo, hi, fcfg, encoder, cache, vocab,
                                 tcfg.robustness, robust_rng);

      Var aux_preds;
      Var preds = model.forward_batch(images, emb, true, &aux_preds);
      LossResult loss = compute_loss(preds, targets);
      Var total = loss.total;
      if (aux_preds.defined())
        total = add(total, scale(compute_loss(aux_preds, targets).total, 0.3));

      double loss_value = total.value().item();
      if (!std::isfinite(loss_value)) throw DivergenceError("non-finite training loss");

      model.params().zero_grad();
      backward(total);
      opt.step(model.params());

      result.step_losses.push_back(loss_value);
      epoch_loss += loss_value;
      ++steps;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(steps));

    EvalReport val = evaluate_single_image(model, val_set, encoder, cache);
    double score = report_score(val);
    result.val_scores.push_back(score);
    if (score < result.best_val_score) {
      result.best_val_score = score;
      result.best_epoch = epoch;
      model.save_checkpoint(result.best_checkpoint);
    }
  }
  return result;
}

EvalReport validate_checkpoint(const std::string& checkpoint_path, const FusionConfig& expected,
                               const SampleSource& val_set, TextEncoder& encoder,
                               EmbeddingCache* cache) {
  FusionModel model = FusionModel::load_checkpoint(checkpoint_path);
  model.verify_matches(expected);
  if (val_set.size() == 0) throw EmptyDatasetError("empty validation set");
  return evaluate_single_image(model, val_set, encoder, cache);
}

}  // namespace nf
