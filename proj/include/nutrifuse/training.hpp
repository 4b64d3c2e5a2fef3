#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "nutrifuse/evaluation.hpp"
#include "nutrifuse/fusion_model.hpp"
#include "nutrifuse/ingredient.hpp"
#include "nutrifuse/sample_source.hpp"
#include "nutrifuse/tensor.hpp"

namespace nf {

struct OptimizerConfig {
  std::string algorithm = "rmsprop";
  double lr = 1e-4;
  double momentum = 0.9;
  double decay = 0.9;  // smoothing constant of the squared-gradient average
  double epsilon = 1.0;

  void validate() const;
};

enum class InitMode { random, pretrained };

std::string init_mode_name(InitMode m);
InitMode init_mode_from_string(const std::string& s);

struct TrainConfig {
  OptimizerConfig optimizer;
  int epochs = 100;
  int batch_size = 64;
  InitMode init = InitMode::random;
  std::string pretrained_weights;  // parameter snapshot path, used when init == pretrained
  RobustnessConfig robustness;
  uint64_t seed = 0;

  void validate() const;
};

// sq = decay*sq + (1-decay)*g^2; buf = momentum*buf + g/(sqrt(sq)+eps); p -= lr*buf
class RmsProp {
 public:
  explicit RmsProp(OptimizerConfig cfg);
  void step(ParamStore& ps);

 private:
  OptimizerConfig cfg_;
  std::map<std::string, Tensor> sq_, buf_;
};

struct TrainResult {
  std::string best_checkpoint;
  int best_epoch = -1;
  double best_val_score = std::numeric_limits<double>::infinity();
  std::vector<double> step_losses;   // optimized objective at every step
  std::vector<double> epoch_losses;  // per-epoch means of the above
  std::vector<double> val_scores;    // per-epoch validation score
};

// mean over the four fields of relative_percent; the checkpoint-selection score
double report_score(const EvalReport& report);

// vocab may be null to train on ingredient lists as-is (no robustness draws)
TrainResult train_model(const TrainConfig& tcfg, const FusionConfig& fcfg,
                        const SampleSource& train_set, const SampleSource& val_set,
                        TextEncoder& encoder, const IngredientVocabulary* vocab,
                        const std::string& out_dir, EmbeddingCache* cache = nullptr);

EvalReport validate_checkpoint(const std::string& checkpoint_path, const FusionConfig& expected,
                               const SampleSource& val_set, TextEncoder& encoder,
                               EmbeddingCache* cache = nullptr);

}  // namespace nf
