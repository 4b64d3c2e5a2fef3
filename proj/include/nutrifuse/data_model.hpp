#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nf {

struct NutritionVector {
  double calories = 0.0;       // kcal
  double fat = 0.0;            // grams
  double carbohydrates = 0.0;  // grams
  double protein = 0.0;        // grams

  static constexpr int kFields = 4;
  static const char* field_name(int i);
  double operator[](int i) const;
  double& operator[](int i);
  void validate() const;  // throws UnitError on negative or non-finite values
};

enum class SampleOrigin { official, text_search, image_search, video_frame };

const char* to_string(SampleOrigin s);
SampleOrigin sample_origin_from_string(const std::string& s);

struct Sample {
  std::string sample_id;
  std::string image_ref;  // relative to the manifest directory
  std::string category;
  std::vector<std::string> ingredients;
  NutritionVector nutrition;
  SampleOrigin source = SampleOrigin::official;
  std::optional<std::string> video_id;
  std::optional<int64_t> frame_index;

  void validate() const;
};

struct DatasetManifest {
  std::vector<Sample> samples;
  std::optional<NutritionVector> field_means;
  std::string base_dir;  // directory the manifest was loaded from, for image paths

  NutritionVector computed_means() const;
  void validate() const;  // id uniqueness, per-sample invariants, mean consistency
  std::string resolve_image(const Sample& s) const;
};

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.2;
  double test_fraction = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

struct SplitResult {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
};

struct VideoEntry {
  std::string video_id;
  int64_t frame_count = 0;
  NutritionVector nutrition;
  std::string category;                            // defaults to video_id when empty
  std::vector<std::string> ingredients;
  std::string frame_pattern = "{video}/frame_{index}.ppm";
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

// raw records may carry {"value": v, "unit": u} nutrient objects and a brand
// key; units are standardized through the mapping file, unknown units rejected
DatasetManifest ingest_manifest(const std::string& raw_path, const std::string& unit_map_path);

SplitResult split_dataset(const DatasetManifest& manifest, const SplitSpec& spec);

std::vector<Sample> extract_frames(const std::vector<VideoEntry>& videos, int64_t stride);

}  // namespace nf
