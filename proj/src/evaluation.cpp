#include "nutrifuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "nutrifuse/errors.hpp"
#include "nutrifuse/image.hpp"

namespace nf {

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::single_image: return "single_image";
    case Protocol::protocol1: return "protocol1";
    case Protocol::protocol2: return "protocol2";
  }
  throw ConfigError("unknown protocol");
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "single_image") return Protocol::single_image;
  if (s == "protocol1") return Protocol::protocol1;
  if (s == "protocol2") return Protocol::protocol2;
  throw ConfigError("unknown protocol '" + s + "'");
}

std::array<double, NutritionVector::kFields> mae_per_field(
    const std::vector<NutritionPrediction>& preds, const std::vector<NutritionVector>& targets) {
  if (preds.size() != targets.size())
    throw LengthMismatchError("prediction/target count mismatch");
  if (preds.empty()) throw LengthMismatchError("empty prediction set");
  std::array<double, NutritionVector::kFields> acc{};
  for (size_t j = 0; j < preds.size(); ++j)
    for (int i = 0; i < NutritionVector::kFields; ++i)
      acc[i] += std::abs(preds[j][i] - targets[j][i]);
  for (auto& a : acc) a /= static_cast<double>(preds.size());
  return acc;
}

double relative_percent(double mae, double field_mean) {
  if (!(field_mean > 0.0)) throw ZeroMeanError("field mean must be positive");
  return 100.0 * mae / field_mean;
}

NutritionPrediction clamp_nonnegative(const NutritionPrediction& p) {
  NutritionPrediction q;
  q.calories = std::max(0.0, p.calories);
  q.fat = std::max(0.0, p.fat);
  q.carbohydrates = std::max(0.0, p.carbohydrates);
  q.protein = std::max(0.0, p.protein);
  return q;
}

namespace {

std::array<double, NutritionVector::kFields> field_means(const std::vector<NutritionVector>& ys) {
  std::array<double, NutritionVector::kFields> m{};
  for (const auto& y : ys)
    for (int i = 0; i < NutritionVector::kFields; ++i) m[i] += y[i];
  for (auto& v : m) v /= static_cast<double>(ys.size());
  return m;
}

EvalReport assemble_report(const std::vector<NutritionPrediction>& preds,
                           const std::vector<NutritionVector>& targets,
                           const std::array<double, NutritionVector::kFields>& means,
                           Protocol protocol, double selection_objective) {
  EvalReport r;
  r.protocol = protocol;
  r.n_samples = static_cast<int64_t>(preds.size());
  r.selection_objective = selection_objective;
  auto mae = mae_per_field(preds, targets);
  for (int i = 0; i < NutritionVector::kFields; ++i) {
    r.per_field[i].mae = mae[i];
    r.per_field[i].relative_percent = relative_percent(mae[i], means[i]);
  }
  return r;
}

// mean over fields of 100 * |pred - target| / field_mean
double frame_objective(const NutritionPrediction& pred, const NutritionVector& target,
                       const std::array<double, NutritionVector::kFields>& means) {
  double s = 0.0;
  for (int i = 0; i < NutritionVector::kFields; ++i)
    s += relative_percent(std::abs(pred[i] - target[i]), means[i]);
  return s / NutritionVector::kFields;
}

struct VideoFrames {
  // indices into the source, ordered by frame_index (sample_id breaks ties)
  std::vector<size_t> frames;
};

std::map<std::string, VideoFrames> group_by_video(const SampleSource& source) {
  std::map<std::string, VideoFrames> videos;
  for (size_t i = 0; i < source.size(); ++i) {
    const Sample& s = source.sample(i);
    if (!s.video_id.has_value() || !s.frame_index.has_value())
      throw ManifestError("sample '" + s.sample_id + "' lacks video frame metadata");
    videos[*s.video_id].frames.push_back(i);
  }
  for (auto& [id, v] : videos) {
    std::sort(v.frames.begin(), v.frames.end(), [&](size_t a, size_t b) {
      const Sample& sa = source.sample(a);
      const Sample& sb = source.sample(b);
      if (*sa.frame_index != *sb.frame_index) return *sa.frame_index < *sb.frame_index;
      return sa.sample_id < sb.sample_id;
    });
  }
  return videos;
}

std::vector<NutritionVector> all_targets(const SampleSource& source) {
  std::vector<NutritionVector> ys;
  ys.reserve(source.size());
  for (size_t i = 0; i < source.size(); ++i) ys.push_back(source.sample(i).nutrition);
  return ys;
}

}  // namespace

NutritionPrediction predict_sample(FusionModel& model, const SampleSource& source, size_t index,
                                   TextEncoder& encoder, EmbeddingCache* cache) {
  Image img = resize_bilinear(source.image(index), model.config().input_resolution,
                              model.config().input_resolution);
  NutritionPrediction p =
      model.predict(image_to_tensor(img), source.sample(index).ingredients, encoder, cache);
  return clamp_nonnegative(p);
}

EvalReport evaluate_single_image(FusionModel& model, const SampleSource& test_set,
                                 TextEncoder& encoder, EmbeddingCache* cache) {
  if (test_set.size() == 0) throw EmptyDatasetError("empty evaluation set");
  std::vector<NutritionPrediction> preds;
  preds.reserve(test_set.size());
  for (size_t i = 0; i < test_set.size(); ++i)
    preds.push_back(predict_sample(model, test_set, i, encoder, cache));
  auto targets = all_targets(test_set);
  return assemble_report(preds, targets, field_means(targets), Protocol::single_image,
                         std::numeric_limits<double>::quiet_NaN());
}

EvalReport evaluate_protocol1(FusionModel& model, const SampleSource& video_test_set,
                              int64_t stride, TextEncoder& encoder, EmbeddingCache* cache) {
  if (video_test_set.size() == 0) throw EmptyDatasetError("empty evaluation set");
  if (stride < 1) throw BadStrideError("stride must be >= 1");
  auto videos = group_by_video(video_test_set);
  auto means = field_means(all_targets(video_test_set));

  std::vector<NutritionPrediction> preds;
  std::vector<NutritionVector> targets;
  double objective_sum = 0.0;
  for (const auto& [id, v] : videos) {
    double video_obj = 0.0;
    int64_t taken = 0;
    for (size_t pos = 0; pos < v.frames.size(); pos += static_cast<size_t>(stride)) {
      size_t idx = v.frames[pos];
      NutritionPrediction p = predict_sample(model, video_test_set, idx, encoder, cache);
      const NutritionVector& y = video_test_set.sample(idx).nutrition;
      preds.push_back(p);
      targets.push_back(y);
      video_obj += frame_objective(p, y, means);
      ++taken;
    }
    objective_sum += video_obj / static_cast<double>(taken);
  }
  return assemble_report(preds, targets, means, Protocol::protocol1,
                         objective_sum / static_cast<double>(videos.size()));
}

EvalReport evaluate_protocol2(FusionModel& model, const SampleSource& video_test_set,
                              TextEncoder& encoder, EmbeddingCache* cache) {
  if (video_test_set.size() == 0) throw EmptyDatasetError("empty evaluation set");
  auto videos = group_by_video(video_test_set);
  auto means = field_means(all_targets(video_test_set));

  std::vector<NutritionPrediction> preds;
  std::vector<NutritionVector> targets;
  double objective_sum = 0.0;
  for (const auto& [id, v] : videos) {
    double best_obj = std::numeric_limits<double>::infinity();
    NutritionPrediction best_pred;
    NutritionVector best_target;
    for (size_t idx : v.frames) {
      NutritionPrediction p = predict_sample(model, video_test_set, idx, encoder, cache);
      const NutritionVector& y = video_test_set.sample(idx).nutrition;
      double obj = frame_objective(p, y, means);
      if (obj < best_obj) {
        best_obj = obj;
        best_pred = p;
        best_target = y;
      }
    }
    preds.push_back(best_pred);
    targets.push_back(best_target);
    objective_sum += best_obj;
  }
  return assemble_report(preds, targets, means, Protocol::protocol2,
                         objective_sum / static_cast<double>(videos.size()));
}

EvalReport report_from_predictions(const std::vector<NutritionPrediction>& preds,
                                   const std::vector<NutritionVector>& targets) {
  std::vector<NutritionPrediction> clamped;
  clamped.reserve(preds.size());
  for (const auto& p : preds) clamped.push_back(clamp_nonnegative(p));
  return assemble_report(clamped, targets, field_means(targets), Protocol::single_image,
                         std::numeric_limits<double>::quiet_NaN());
}

std::string render_report(const EvalReport& report) {
  std::ostringstream os;
  os << "protocol: " << protocol_name(report.protocol) << "\n";
  os << "samples: " << report.n_samples << "\n";
  for (int i = 0; i < NutritionVector::kFields; ++i) {
    char cell[64];
    std::snprintf(cell, sizeof(cell), "%.2f / %.2f%%", report.per_field[i].mae,
                  report.per_field[i].relative_percent);
    char row[96];
    std::snprintf(row, sizeof(row), "%-15s %s", NutritionVector::field_name(i), cell);
    os << row << "\n";
  }
  if (!std::isnan(report.selection_objective)) {
    char line[64];
    std::snprintf(line, sizeof(line), "selection objective: %.6f%%", report.selection_objective);
    os << line << "\n";
  }
  return os.str();
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["protocol"] = protocol_name(report.protocol);
  j["n_samples"] = report.n_samples;
  if (std::isnan(report.selection_objective))
    j["selection_objective"] = nullptr;
  else
    j["selection_objective"] = report.selection_objective;
  nlohmann::json fields = nlohmann::json::object();
  for (int i = 0; i < NutritionVector::kFields; ++i) {
    fields[NutritionVector::field_name(i)] = {
        {"mae", report.per_field[i].mae},
        {"relative_percent", report.per_field[i].relative_percent}};
  }
  j["per_field"] = fields;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad report file: ") + e.what());
  }
  EvalReport r;
  try {
    r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    r.n_samples = j.at("n_samples").get<int64_t>();
    const auto& sel = j.at("selection_objective");
    r.selection_objective =
        sel.is_null() ? std::numeric_limits<double>::quiet_NaN() : sel.get<double>();
    const auto& fields = j.at("per_field");
    for (int i = 0; i < NutritionVector::kFields; ++i) {
      const auto& f = fields.at(NutritionVector::field_name(i));
      r.per_field[i].mae = f.at("mae").get<double>();
      r.per_field[i].relative_percent = f.at("relative_percent").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad report file: ") + e.what());
  }
  return r;
}

void write_report_files(const EvalReport& report, const std::string& text_path,
                        const std::string& json_path) {
  std::ofstream ot(text_path);
  if (!ot) throw IoError("cannot write " + text_path);
  ot << render_report(report);
  std::ofstream oj(json_path);
  if (!oj) throw IoError("cannot write " + json_path);
  oj << report_to_json(report) << "\n";
}

EvalReport load_report(const std::string& json_path) {
  std::ifstream is(json_path);
  if (!is) throw IoError("cannot read " + json_path);
  std::stringstream ss;
  ss << is.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace nf
