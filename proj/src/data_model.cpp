#include "nutrifuse/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <unordered_set>

#include <json.hpp>

#include "nutrifuse/errors.hpp"
#include "nutrifuse/rng.hpp"

namespace nf {

using json = nlohmann::json;

const char* NutritionVector::field_name(int i) {
  switch (i) {
    case 0: return "calories";
    case 1: return "fat";
    case 2: return "carbohydrates";
    case 3: return "protein";
  }
  throw IndexError("nutrition field index out of range");
}

double NutritionVector::operator[](int i) const {
  switch (i) {
    case 0: return calories;
    case 1: return fat;
    case 2: return carbohydrates;
    case 3: return protein;
  }
  throw IndexError("nutrition field index out of range");
}

double& NutritionVector::operator[](int i) {
  switch (i) {
    case 0: return calories;
    case 1: return fat;
    case 2: return carbohydrates;
    case 3: return protein;
  }
  throw IndexError("nutrition field index out of range");
}

void NutritionVector::validate() const {
  for (int i = 0; i < kFields; ++i) {
    const double v = (*this)[i];
    if (!std::isfinite(v) || v < 0.0)
      throw UnitError(std::string("nutrient '") + field_name(i) + "' must be finite and >= 0");
  }
}

const char* to_string(SampleOrigin s) {
  switch (s) {
    case SampleOrigin::official: return "official";
    case SampleOrigin::text_search: return "text_search";
    case SampleOrigin::image_search: return "image_search";
    case SampleOrigin::video_frame: return "video_frame";
  }
  throw PreconditionError("bad SampleOrigin");
}

SampleOrigin sample_origin_from_string(const std::string& s) {
  if (s == "official") return SampleOrigin::official;
  if (s == "text_search") return SampleOrigin::text_search;
  if (s == "image_search") return SampleOrigin::image_search;
  if (s == "video_frame") return SampleOrigin::video_frame;
  throw ManifestError("unknown sample source: " + s);
}

void Sample::validate() const {
  if (sample_id.empty()) throw MissingFieldError("sample with empty sample_id");
  if (image_ref.empty()) throw MissingFieldError(sample_id + ": empty image ref");
  if (category.empty()) throw MissingFieldError(sample_id + ": empty category");
  nutrition.validate();
  const bool is_frame = source == SampleOrigin::video_frame;
  if (is_frame != video_id.has_value())
    throw ManifestError(sample_id + ": video_id must be present iff source is video_frame");
  if (video_id.has_value() != frame_index.has_value())
    throw ManifestError(sample_id + ": frame_index must be present iff video_id is");
  if (frame_index && *frame_index < 0) throw ManifestError(sample_id + ": negative frame_index");
}

NutritionVector DatasetManifest::computed_means() const {
  if (samples.empty()) throw EmptyManifestError("cannot average an empty manifest");
  NutritionVector m;
  for (const Sample& s : samples)
    for (int i = 0; i < NutritionVector::kFields; ++i) m[i] += s.nutrition[i];
  for (int i = 0; i < NutritionVector::kFields; ++i) m[i] /= static_cast<double>(samples.size());
  return m;
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const Sample& s : samples) {
    s.validate();
    if (!seen.insert(s.sample_id).second) throw DuplicateIdError("duplicate sample_id: " + s.sample_id);
  }
  if (field_means) {
    field_means->validate();
    const NutritionVector actual = computed_means();
    for (int i = 0; i < NutritionVector::kFields; ++i) {
      const double a = actual[i], b = (*field_means)[i];
      const double tol = 1e-9 * std::max(1.0, std::fabs(a));
      if (std::fabs(a - b) > tol)
        throw ManifestError(std::string("field_means inconsistent for ") +
                            NutritionVector::field_name(i));
    }
  }
}

std::string DatasetManifest::resolve_image(const Sample& s) const {
  if (base_dir.empty()) return s.image_ref;
  return (std::filesystem::path(base_dir) / s.image_ref).string();
}

void SplitSpec::validate() const {
  if (!(train_fraction > 0.0) || !(val_fraction > 0.0) || !(test_fraction > 0.0))
    throw ConfigError("split fractions must be positive");
  const double sum = train_fraction + val_fraction + test_fraction;
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

namespace {

double require_number(const json& rec, const char* key, const std::string& where) {
  if (!rec.contains(key)) throw MissingFieldError(where + ": missing field '" + key + "'");
  const json& v = rec.at(key);
  if (!v.is_number()) throw ManifestError(where + ": field '" + key + "' must be a number");
  return v.get<double>();
}

std::string require_string(const json& rec, const char* key, const std::string& where) {
  if (!rec.contains(key)) throw MissingFieldError(where + ": missing field '" + key + "'");
  const json& v = rec.at(key);
  if (!v.is_string()) throw ManifestError(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

Sample sample_from_json(const json& rec, const std::string& where) {
  if (!rec.is_object()) throw ManifestError(where + ": record is not an object");
  Sample s;
  s.sample_id = require_string(rec, "sample_id", where);
  s.image_ref = require_string(rec, "image", where);
  s.category = require_string(rec, "category", where);
  if (!rec.contains("ingredients") || !rec.at("ingredients").is_array())
    throw MissingFieldError(where + ": missing ingredients array");
  for (const json& ing : rec.at("ingredients")) {
    if (!ing.is_string()) throw ManifestError(where + ": ingredients must be strings");
    s.ingredients.push_back(ing.get<std::string>());
  }
  s.nutrition.calories = require_number(rec, "calories", where);
  s.nutrition.fat = require_number(rec, "fat", where);
  s.nutrition.carbohydrates = require_number(rec, "carbohydrates", where);
  s.nutrition.protein = require_number(rec, "protein", where);
  s.source = sample_origin_from_string(require_string(rec, "source", where));
  if (rec.contains("video_id") && !rec.at("video_id").is_null())
    s.video_id = rec.at("video_id").get<std::string>();
  if (rec.contains("frame_index") && !rec.at("frame_index").is_null())
    s.frame_index = rec.at("frame_index").get<int64_t>();
  return s;
}

json sample_to_json(const Sample& s) {
  json rec;
  rec["sample_id"] = s.sample_id;
  rec["image"] = s.image_ref;
  rec["category"] = s.category;
  rec["ingredients"] = s.ingredients;
  rec["calories"] = s.nutrition.calories;
  rec["fat"] = s.nutrition.fat;
  rec["carbohydrates"] = s.nutrition.carbohydrates;
  rec["protein"] = s.nutrition.protein;
  rec["source"] = to_string(s.source);
  if (s.video_id) rec["video_id"] = *s.video_id;
  if (s.frame_index) rec["frame_index"] = *s.frame_index;
  return rec;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  DatasetManifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ManifestError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    m.samples.push_back(sample_from_json(rec, path + ":" + std::to_string(lineno)));
  }
  m.validate();
  if (!m.samples.empty() && !m.field_means) m.field_means = m.computed_means();
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest: " + path);
  for (const Sample& s : manifest.samples) os << sample_to_json(s).dump() << "\n";
  if (!os) throw IoError("failed writing manifest: " + path);
}

namespace {

// nutrient fields in raw records are either plain numbers (already kcal/grams)
// or {"value": v, "unit": u} pairs resolved through the unit map
double standardize_nutrient(const json& rec, const char* key, bool energy, const json& unit_map,
                            const std::string& brand, const std::string& where) {
  if (!rec.contains(key)) throw MissingFieldError(where + ": missing field '" + key + "'");
  const json& v = rec.at(key);
  if (v.is_number()) return v.get<double>();
  if (!v.is_object() || !v.contains("value") || !v.contains("unit"))
    throw ManifestError(where + ": field '" + key + "' must be a number or {value, unit}");
  const double value = v.at("value").get<double>();
  const std::string unit = v.at("unit").get<std::string>();
  const char* family = energy ? "energy" : "mass";

  auto lookup = [&](const json& table) -> std::optional<double> {
    if (table.contains(family) && table.at(family).contains(unit))
      return table.at(family).at(unit).get<double>();
    return std::nullopt;
  };
  if (!brand.empty() && unit_map.contains("brands") && unit_map.at("brands").contains(brand)) {
    if (auto f = lookup(unit_map.at("brands").at(brand))) return value * *f;
  }
  if (auto f = lookup(unit_map)) return value * *f;
  throw UnitError(where + ": unknown " + family + " unit '" + unit + "' for field '" + key + "'");
}

}  // namespace

DatasetManifest ingest_manifest(const std::string& raw_path, const std::string& unit_map_path) {
  std::ifstream um(unit_map_path);
  if (!um) throw IoError("cannot open unit map: " + unit_map_path);
  json unit_map;
  try {
    um >> unit_map;
  } catch (const json::exception& e) {
    throw ManifestError(unit_map_path + ": " + e.what());
  }

  std::ifstream is(raw_path);
  if (!is) throw IoError("cannot open raw records: " + raw_path);
  DatasetManifest m;
  m.base_dir = std::filesystem::path(raw_path).parent_path().string();
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = raw_path + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ManifestError(where + ": " + e.what());
    }
    const std::string brand =
        rec.contains("brand") && rec.at("brand").is_string() ? rec.at("brand").get<std::string>() : "";
    json flat = rec;
    flat["calories"] = standardize_nutrient(rec, "calories", true, unit_map, brand, where);
    flat["fat"] = standardize_nutrient(rec, "fat", false, unit_map, brand, where);
    flat["carbohydrates"] = standardize_nutrient(rec, "carbohydrates", false, unit_map, brand, where);
    flat["protein"] = standardize_nutrient(rec, "protein", false, unit_map, brand, where);
    flat.erase("brand");
    m.samples.push_back(sample_from_json(flat, where));
  }
  m.validate();
  if (!m.samples.empty()) m.field_means = m.computed_means();
  return m;
}

SplitResult split_dataset(const DatasetManifest& manifest, const SplitSpec& spec) {
  spec.validate();
  if (manifest.samples.empty()) throw EmptyManifestError("cannot split an empty manifest");

  // stable order inside each category by seeded hash of sample_id
  struct Keyed {
    uint64_t key;
    size_t index;
  };
  std::map<std::string, std::vector<Keyed>> by_category;
  for (size_t i = 0; i < manifest.samples.size(); ++i) {
    const Sample& s = manifest.samples[i];
    by_category[s.category].push_back({hash_combine(spec.seed, fnv1a64(s.sample_id)), i});
  }

  // 0 = train, 1 = val, 2 = test
  std::vector<int> assignment(manifest.samples.size(), 0);
  const double fractions[3] = {spec.train_fraction, spec.val_fraction, spec.test_fraction};
  for (auto& [category, members] : by_category) {
    std::sort(members.begin(), members.end(), [&](const Keyed& a, const Keyed& b) {
      if (a.key != b.key) return a.key < b.key;
      return manifest.samples[a.index].sample_id < manifest.samples[b.index].sample_id;
    });
    const int64_t n = static_cast<int64_t>(members.size());
    // largest-remainder apportionment, ties resolved train > val > test
    int64_t counts[3];
    double remainders[3];
    int64_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double exact = n * fractions[s];
      counts[s] = static_cast<int64_t>(std::floor(exact + 1e-12));
      remainders[s] = exact - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    while (assigned < n) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (remainders[s] > remainders[best] + 1e-12) best = s;
      counts[best]++;
      remainders[best] = -1.0;
      assigned++;
    }
    int64_t cursor = 0;
    for (int s = 0; s < 3; ++s)
      for (int64_t k = 0; k < counts[s]; ++k) assignment[members[static_cast<size_t>(cursor++)].index] = s;
  }

  SplitResult result;
  DatasetManifest* outs[3] = {&result.train, &result.val, &result.test};
  for (int s = 0; s < 3; ++s) outs[s]->base_dir = manifest.base_dir;
  for (size_t i = 0; i < manifest.samples.size(); ++i)
    outs[assignment[i]]->samples.push_back(manifest.samples[i]);
  for (int s = 0; s < 3; ++s)
    if (!outs[s]->samples.empty()) outs[s]->field_means = outs[s]->computed_means();
  return result;
}

std::vector<Sample> extract_frames(const std::vector<VideoEntry>& videos, int64_t stride) {
  if (stride < 1) throw BadStrideError("frame stride must be >= 1");
  std::vector<Sample> out;
  for (const VideoEntry& v : videos) {
    if (v.frame_count < 1) throw ManifestError(v.video_id + ": frame_count must be >= 1");
    v.nutrition.validate();
    for (int64_t f = 0; f < v.frame_count; f += stride) {
      Sample s;
      s.sample_id = v.video_id + "#" + std::to_string(f);
      std::string ref = v.frame_pattern;
      auto replace_all = [&ref](const std::string& from, const std::string& to) {
        for (size_t pos = ref.find(from); pos != std::string::npos; pos = ref.find(from, pos + to.size()))
          ref.replace(pos, from.size(), to);
      };
      replace_all("{video}", v.video_id);
      replace_all("{index}", std::to_string(f));
      s.image_ref = ref;
      s.category = v.category.empty() ? v.video_id : v.category;
      s.ingredients = v.ingredients;
      s.nutrition = v.nutrition;
      s.source = SampleOrigin::video_frame;
      s.video_id = v.video_id;
      s.frame_index = f;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace nf
