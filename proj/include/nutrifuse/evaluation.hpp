#pragma once

#include <array>
#include <string>
#include <vector>

#include "nutrifuse/data_model.hpp"
#include "nutrifuse/fusion_model.hpp"
#include "nutrifuse/sample_source.hpp"
#include "nutrifuse/text_embedding.hpp"

namespace nf {

enum class Protocol { single_image, protocol1, protocol2 };

std::string protocol_name(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct FieldMetric {
  double mae = 0.0;
  double relative_percent = 0.0;
};

struct EvalReport {
  std::array<FieldMetric, NutritionVector::kFields> per_field;
  Protocol protocol = Protocol::single_image;
  int64_t n_samples = 0;
  // mean over videos of the per-video frame-selection objective (mean over
  // fields of |error|/field_mean); NaN for single-image reports
  double selection_objective = 0.0;
};

std::array<double, NutritionVector::kFields> mae_per_field(
    const std::vector<NutritionPrediction>& preds, const std::vector<NutritionVector>& targets);

// 100 * mae / field_mean
double relative_percent(double mae, double field_mean);

NutritionPrediction clamp_nonnegative(const NutritionPrediction& p);

// helpers shared by the protocols: per-sample prediction with the image
// resized to the model resolution, negatives clamped to zero
NutritionPrediction predict_sample(FusionModel& model, const SampleSource& source, size_t index,
                                   TextEncoder& encoder, EmbeddingCache* cache = nullptr);

// one prediction per sample, field means taken from the set's ground truth
EvalReport evaluate_single_image(FusionModel& model, const SampleSource& test_set,
                                 TextEncoder& encoder, EmbeddingCache* cache = nullptr);

// evaluates every frame whose index is a multiple of `stride`
EvalReport evaluate_protocol1(FusionModel& model, const SampleSource& video_test_set,
                              int64_t stride, TextEncoder& encoder,
                              EmbeddingCache* cache = nullptr);

// per video, keeps the frame minimizing the mean over fields of
// |error|/field_mean (ground-truth-guided oracle selection)
EvalReport evaluate_protocol2(FusionModel& model, const SampleSource& video_test_set,
                              TextEncoder& encoder, EmbeddingCache* cache = nullptr);

// builds a report from already-computed predictions (single-image protocol)
EvalReport report_from_predictions(const std::vector<NutritionPrediction>& preds,
                                   const std::vector<NutritionVector>& targets);

std::string render_report(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report_files(const EvalReport& report, const std::string& text_path,
                        const std::string& json_path);
EvalReport load_report(const std::string& json_path);

}  // namespace nf
