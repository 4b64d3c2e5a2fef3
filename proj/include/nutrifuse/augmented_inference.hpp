#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "nutrifuse/fusion_model.hpp"
#include "nutrifuse/image.hpp"
#include "nutrifuse/ingredient.hpp"
#include "nutrifuse/text_embedding.hpp"

namespace nf {

struct Transform {
  enum class Kind { identity, rotation, horizontal_flip, random_crop, grayscale };

  Kind kind = Kind::identity;
  double degrees = 15.0;   // rotation: angle drawn uniformly in [-degrees, degrees]
  double min_area = 0.7;   // random_crop: kept area fraction lower bound

  std::string name() const;
};

struct AugmentationSpec {
  std::vector<Transform> transforms;
  uint64_t seed = 0;

  int k() const { return static_cast<int>(transforms.size()); }
  void validate() const;

  // identity, rotation(15), horizontal_flip, random_crop(0.7), grayscale
  static AugmentationSpec defaults(uint64_t seed);
};

// view index is 1-based; deterministic for fixed (spec.seed, k); output keeps
// the input dimensions so every view feeds the client at the same size
Image augment_image(const Image& image, int k, const AugmentationSpec& spec);

struct VoteConfig {
  int tau = 4;

  void validate() const;
};

struct IngredientPredictionSet {
  std::vector<std::set<std::string>> per_augmentation;
  std::map<std::string, int> counts;

  static IngredientPredictionSet from_sets(std::vector<std::set<std::string>> sets);
  void validate() const;
};

// ingredients with count >= tau; when none qualify, every ingredient attaining
// the maximum count
std::set<std::string> majority_vote(const IngredientPredictionSet& preds, const VoteConfig& cfg);

// one call per image view: (image, prompt) -> reply text
class LmmClient {
 public:
  virtual ~LmmClient() = default;
  virtual std::string describe() const = 0;
  virtual std::string query(const Image& image, const std::string& prompt) = 0;
};

// answers with a fixed ingredient list regardless of the image
class OracleLmmClient : public LmmClient {
 public:
  explicit OracleLmmClient(std::vector<std::string> ingredients);
  std::string describe() const override { return "oracle"; }
  std::string query(const Image& image, const std::string& prompt) override;

 private:
  std::vector<std::string> ingredients_;
};

// oracle corrupted by seeded per-term dropout and distractor injection
class NoisyOracleLmmClient : public LmmClient {
 public:
  NoisyOracleLmmClient(std::vector<std::string> ingredients, std::vector<std::string> distractors,
                       double false_negative_rate, double false_positive_rate, uint64_t seed);
  std::string describe() const override { return "noisy-oracle"; }
  std::string query(const Image& image, const std::string& prompt) override;

 private:
  std::vector<std::string> ingredients_;
  std::vector<std::string> distractors_;
  double fn_rate_;
  double fp_rate_;
  uint64_t seed_;
  uint64_t calls_ = 0;
};

// POSTs {prompt, PPM image bytes in base64} as JSON and returns the reply body;
// bearer token read from the named environment variable when set
class HttpLmmClient : public LmmClient {
 public:
  HttpLmmClient(std::string host, int port, std::string path,
                std::string token_env = "NUTRIFUSE_LMM_TOKEN");
  std::string describe() const override;
  std::string query(const Image& image, const std::string& prompt) override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  std::string token_env_;
};

// parses a client reply (comma/newline separated) into canonical ingredients;
// rejected terms are dropped, unmappable terms are dropped with a warning in
// non-strict mode and raise ParseError in strict mode
std::set<std::string> parse_ingredient_reply(const std::string& reply,
                                             const IngredientVocabulary& vocab, bool strict);

std::set<std::string> query_ingredients(const Image& image, LmmClient& client,
                                        const IngredientVocabulary& vocab,
                                        const std::string& prompt, bool strict = false);

struct AugmentedPrediction {
  NutritionPrediction nutrition;
  std::set<std::string> voted;
  IngredientPredictionSet votes;
  std::vector<std::string> raw_replies;
};

AugmentedPrediction predict_with_augmented_ingredients(
    const Image& image, FusionModel& model, LmmClient& client, const AugmentationSpec& spec,
    const VoteConfig& vote_cfg, const IngredientVocabulary& vocab, TextEncoder& encoder,
    const std::string& prompt, EmbeddingCache* cache = nullptr, bool strict = false);

// one JSONL audit record: raw replies, parsed sets, counts, voted set
std::string audit_line(const AugmentedPrediction& result, const std::string& image_ref, int tau);

}  // namespace nf
