#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "nutrifuse/data_model.hpp"
#include "nutrifuse/errors.hpp"
#include "testutil.hpp"

using namespace nf;

namespace {

Sample make_sample(const std::string& id, const std::string& category, double cal, double fat,
                   double carb, double prot) {
  Sample s;
  s.sample_id = id;
  s.image_ref = id + ".ppm";
  s.category = category;
  s.ingredients = {"bun", "beef patty"};
  s.nutrition = {cal, fat, carb, prot};
  return s;
}

std::set<std::string> id_set(const DatasetManifest& m) {
  std::set<std::string> ids;
  for (const Sample& s : m.samples) ids.insert(s.sample_id);
  return ids;
}

}  // namespace

TEST_CASE("nutrition field access and validation") {
  NutritionVector v{250.0, 10.0, 30.0, 8.0};
  CHECK(v[0] == 250.0);
  CHECK(v[3] == 8.0);
  CHECK(std::string(NutritionVector::field_name(2)) == "carbohydrates");
  CHECK_THROWS_AS((void)v[4], IndexError);
  v.validate();
  v.fat = -1.0;
  CHECK_THROWS_AS(v.validate(), UnitError);
  v.fat = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(v.validate(), UnitError);
}

TEST_CASE("sample invariants") {
  Sample s = make_sample("a", "burger", 100, 1, 2, 3);
  s.validate();

  Sample frame = s;
  frame.source = SampleOrigin::video_frame;
  CHECK_THROWS_AS(frame.validate(), ManifestError);
  frame.video_id = "vid";
  frame.frame_index = 0;
  frame.validate();
  frame.frame_index = -1;
  CHECK_THROWS_AS(frame.validate(), ManifestError);

  Sample stray = s;
  stray.video_id = "vid";  // video_id on a non-frame sample
  CHECK_THROWS_AS(stray.validate(), ManifestError);

  Sample blank = s;
  blank.category.clear();
  CHECK_THROWS_AS(blank.validate(), MissingFieldError);
}

TEST_CASE("field means over one and two records") {
  DatasetManifest m;
  m.samples.push_back(make_sample("a", "burger", 250, 10, 30, 8));
  NutritionVector mean = m.computed_means();
  CHECK(mean.calories == 250.0);
  CHECK(mean.fat == 10.0);
  CHECK(mean.carbohydrates == 30.0);
  CHECK(mean.protein == 8.0);

  m.samples.push_back(make_sample("b", "burger", 300, 20, 10, 4));
  mean = m.computed_means();
  CHECK(mean.calories == doctest::Approx(275.0));
  CHECK(mean.fat == doctest::Approx(15.0));

  DatasetManifest two;
  two.samples.push_back(make_sample("x", "c", 100, 1, 1, 1));
  two.samples.push_back(make_sample("y", "c", 300, 1, 1, 1));
  CHECK(two.computed_means().calories == doctest::Approx(200.0));

  DatasetManifest empty;
  CHECK_THROWS_AS(empty.computed_means(), EmptyManifestError);
}

TEST_CASE("manifest validation catches duplicates and stale means") {
  DatasetManifest m;
  m.samples.push_back(make_sample("a", "burger", 100, 1, 2, 3));
  m.samples.push_back(make_sample("a", "burger", 200, 1, 2, 3));
  CHECK_THROWS_AS(m.validate(), DuplicateIdError);

  m.samples[1].sample_id = "b";
  m.validate();
  m.field_means = NutritionVector{150.0, 1.0, 2.0, 3.0};
  m.validate();
  m.field_means->calories = 151.0;
  CHECK_THROWS_AS(m.validate(), ManifestError);
}

TEST_CASE("manifest save/load round-trip") {
  DatasetManifest m;
  m.samples.push_back(make_sample("a", "burger", 250, 10, 30, 8));
  Sample frame = make_sample("v1#0", "salad", 90, 2, 12, 3);
  frame.source = SampleOrigin::video_frame;
  frame.video_id = "v1";
  frame.frame_index = 0;
  frame.ingredients = {"lettuce"};
  m.samples.push_back(frame);

  tu::TempDir td;
  const std::string path = td.file("manifest.jsonl");
  save_manifest(path, m);
  DatasetManifest back = load_manifest(path);

  REQUIRE(back.samples.size() == 2);
  CHECK(back.base_dir == std::filesystem::path(path).parent_path().string());
  REQUIRE(back.field_means.has_value());
  for (size_t i = 0; i < 2; ++i) {
    const Sample& x = m.samples[i];
    const Sample& y = back.samples[i];
    CHECK(x.sample_id == y.sample_id);
    CHECK(x.image_ref == y.image_ref);
    CHECK(x.category == y.category);
    CHECK(x.ingredients == y.ingredients);
    CHECK(x.source == y.source);
    CHECK(x.video_id == y.video_id);
    CHECK(x.frame_index == y.frame_index);
    for (int f = 0; f < 4; ++f) CHECK(x.nutrition[f] == y.nutrition[f]);
  }
  CHECK(back.resolve_image(back.samples[0]) ==
        (std::filesystem::path(back.base_dir) / "a.ppm").string());
}

TEST_CASE("loading rejects malformed manifests") {
  tu::TempDir td;
  CHECK_THROWS_AS(load_manifest(td.file("absent.jsonl")), IoError);

  const std::string bad = td.file("bad.jsonl");
  std::ofstream(bad) << "{not json}\n";
  CHECK_THROWS_AS(load_manifest(bad), ManifestError);

  const std::string missing = td.file("missing.jsonl");
  std::ofstream(missing) << R"({"sample_id":"a","image":"a.ppm","category":"c",)"
                         << R"("ingredients":[],"calories":1,"fat":1,"carbohydrates":1})"
                         << "\n";
  CHECK_THROWS_AS(load_manifest(missing), MissingFieldError);

  const std::string negative = td.file("neg.jsonl");
  std::ofstream(negative) << R"({"sample_id":"a","image":"a.ppm","category":"c",)"
                          << R"("ingredients":[],"calories":1,"fat":-2,"carbohydrates":1,)"
                          << R"("protein":1,"source":"official"})"
                          << "\n";
  CHECK_THROWS_AS(load_manifest(negative), UnitError);
}

TEST_CASE("split apportions 10 samples as 7/2/1") {
  DatasetManifest m;
  for (int i = 0; i < 10; ++i)
    m.samples.push_back(make_sample("s" + std::to_string(i), "burger", 100 + i, 1, 2, 3));
  SplitSpec spec;
  spec.seed = 7;
  SplitResult r = split_dataset(m, spec);
  CHECK(r.train.samples.size() == 7);
  CHECK(r.val.samples.size() == 2);
  CHECK(r.test.samples.size() == 1);

  std::set<std::string> all = id_set(r.train);
  for (const auto& id : id_set(r.val)) CHECK(all.insert(id).second);
  for (const auto& id : id_set(r.test)) CHECK(all.insert(id).second);
  CHECK(all == id_set(m));
}

TEST_CASE("split is deterministic in the seed and responsive to it") {
  DatasetManifest m;
  for (int i = 0; i < 30; ++i)
    m.samples.push_back(make_sample("s" + std::to_string(i), "cat" + std::to_string(i % 3),
                                    100 + i, 1, 2, 3));
  SplitSpec a;
  a.seed = 7;
  SplitSpec b = a;
  SplitResult r1 = split_dataset(m, a);
  SplitResult r2 = split_dataset(m, b);
  CHECK(id_set(r1.train) == id_set(r2.train));
  CHECK(id_set(r1.val) == id_set(r2.val));
  CHECK(id_set(r1.test) == id_set(r2.test));

  SplitSpec c;
  c.seed = 8;
  SplitResult r3 = split_dataset(m, c);
  CHECK(id_set(r1.train) != id_set(r3.train));
}

TEST_CASE("split stratifies by category") {
  DatasetManifest m;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 10; ++i)
      m.samples.push_back(
          make_sample("c" + std::to_string(c) + "_" + std::to_string(i),
                      "cat" + std::to_string(c), 100, 1, 2, 3));
  SplitSpec spec;
  spec.seed = 3;
  SplitResult r = split_dataset(m, spec);
  auto count_cat = [](const DatasetManifest& part, const std::string& cat) {
    return std::count_if(part.samples.begin(), part.samples.end(),
                         [&](const Sample& s) { return s.category == cat; });
  };
  for (int c = 0; c < 5; ++c) {
    const std::string cat = "cat" + std::to_string(c);
    CHECK(count_cat(r.train, cat) == 7);
    CHECK(count_cat(r.val, cat) == 2);
    CHECK(count_cat(r.test, cat) == 1);
  }
}

TEST_CASE("split uses largest remainders on tiny categories") {
  DatasetManifest m;
  for (int i = 0; i < 3; ++i)
    m.samples.push_back(make_sample("t" + std::to_string(i), "tiny", 100, 1, 2, 3));
  SplitSpec spec;
  SplitResult r = split_dataset(m, spec);
  // 3 * (0.7, 0.2, 0.1) = (2.1, 0.6, 0.3): floor (2,0,0), leftover goes to val
  CHECK(r.train.samples.size() == 2);
  CHECK(r.val.samples.size() == 1);
  CHECK(r.test.samples.size() == 0);
}

TEST_CASE("split rejects bad specs and empty manifests") {
  DatasetManifest m;
  m.samples.push_back(make_sample("a", "c", 100, 1, 2, 3));
  SplitSpec bad;
  bad.train_fraction = 0.5;  // sums to 0.8
  CHECK_THROWS_AS(split_dataset(m, bad), ConfigError);
  SplitSpec zero;
  zero.train_fraction = 0.9;
  zero.val_fraction = 0.1;
  zero.test_fraction = 0.0;
  CHECK_THROWS_AS(split_dataset(m, zero), ConfigError);
  DatasetManifest empty;
  SplitSpec ok;
  CHECK_THROWS_AS(split_dataset(empty, ok), EmptyManifestError);
}

TEST_CASE("extract_frames strides through each video") {
  VideoEntry v;
  v.video_id = "vid1";
  v.frame_count = 12;
  v.nutrition = {500, 20, 40, 30};
  std::vector<Sample> frames = extract_frames({v}, 5);
  REQUIRE(frames.size() == 3);
  CHECK(frames[0].frame_index == 0);
  CHECK(frames[1].frame_index == 5);
  CHECK(frames[2].frame_index == 10);
  CHECK(frames[1].sample_id == "vid1#5");
  CHECK(frames[1].image_ref == "vid1/frame_5.ppm");
  CHECK(frames[1].category == "vid1");
  CHECK(frames[1].source == SampleOrigin::video_frame);
  CHECK(frames[1].video_id == "vid1");
  CHECK(frames[1].nutrition.calories == 500.0);
  frames[0].validate();
}

TEST_CASE("extract_frames covers singleton videos and the ceil-length law") {
  VideoEntry v;
  v.video_id = "solo";
  v.frame_count = 1;
  v.nutrition = {100, 1, 2, 3};
  std::vector<Sample> frames = extract_frames({v}, 10);
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].frame_index == 0);

  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    VideoEntry e;
    e.video_id = "v" + std::to_string(trial);
    e.frame_count = 1 + static_cast<int64_t>(rng.uniform_int(40));
    e.nutrition = {100, 1, 2, 3};
    const int64_t stride = 1 + static_cast<int64_t>(rng.uniform_int(7));
    const auto out = extract_frames({e}, stride);
    const int64_t want = (e.frame_count + stride - 1) / stride;
    CHECK(static_cast<int64_t>(out.size()) == want);
  }
}

TEST_CASE("extract_frames validates stride and entries") {
  VideoEntry v;
  v.video_id = "vid";
  v.frame_count = 4;
  v.nutrition = {100, 1, 2, 3};
  CHECK_THROWS_AS(extract_frames({v}, 0), BadStrideError);
  v.frame_count = 0;
  CHECK_THROWS_AS(extract_frames({v}, 1), ManifestError);
  v.frame_count = 4;
  v.nutrition.fat = -1;
  CHECK_THROWS_AS(extract_frames({v}, 1), UnitError);
}

TEST_CASE("ingest standardizes units through the mapping file") {
  tu::TempDir td;
  const std::string unit_map = td.file("units.json");
  std::ofstream(unit_map) << R"({
    "energy": {"kcal": 1.0, "kj": 0.2390057361},
    "mass": {"g": 1.0, "mg": 0.001, "oz": 28.3495},
    "brands": {"acme": {"mass": {"serving": 12.0}}}
  })";

  const std::string raw = td.file("raw.jsonl");
  std::ofstream(raw)
      << R"({"sample_id":"a","image":"a.ppm","category":"burger","ingredients":["bun"],)"
      << R"("calories":{"value":1000,"unit":"kj"},"fat":{"value":1500,"unit":"mg"},)"
      << R"("carbohydrates":{"value":2,"unit":"oz"},"protein":12,"source":"official"})"
      << "\n"
      << R"({"sample_id":"b","image":"b.ppm","category":"burger","ingredients":[],)"
      << R"("brand":"acme","calories":240,"fat":{"value":2,"unit":"serving"},)"
      << R"("carbohydrates":{"value":3,"unit":"g"},"protein":9,"source":"text_search"})"
      << "\n";

  DatasetManifest m = ingest_manifest(raw, unit_map);
  REQUIRE(m.samples.size() == 2);
  CHECK(m.samples[0].nutrition.calories == doctest::Approx(239.0057361));
  CHECK(m.samples[0].nutrition.fat == doctest::Approx(1.5));
  CHECK(m.samples[0].nutrition.carbohydrates == doctest::Approx(56.699));
  CHECK(m.samples[0].nutrition.protein == 12.0);
  CHECK(m.samples[1].nutrition.fat == doctest::Approx(24.0));
  CHECK(m.samples[1].source == SampleOrigin::text_search);
  CHECK(m.field_means.has_value());
}

TEST_CASE("ingest rejects unknown units and bad records") {
  tu::TempDir td;
  const std::string unit_map = td.file("units.json");
  std::ofstream(unit_map) << R"({"energy": {"kcal": 1.0}, "mass": {"g": 1.0}})";

  const std::string raw = td.file("raw.jsonl");
  std::ofstream(raw)
      << R"({"sample_id":"a","image":"a.ppm","category":"c","ingredients":[],)"
      << R"("calories":{"value":1,"unit":"furlong"},"fat":1,"carbohydrates":1,)"
      << R"("protein":1,"source":"official"})"
      << "\n";
  CHECK_THROWS_AS(ingest_manifest(raw, unit_map), UnitError);

  // a brand-scoped unit must not leak to other brands
  std::ofstream(unit_map) << R"({"energy": {"kcal": 1.0}, "mass": {"g": 1.0},
    "brands": {"acme": {"mass": {"serving": 12.0}}}})";
  std::ofstream(raw)
      << R"({"sample_id":"a","image":"a.ppm","category":"c","ingredients":[],)"
      << R"("brand":"other","calories":1,"fat":{"value":1,"unit":"serving"},)"
      << R"("carbohydrates":1,"protein":1,"source":"official"})"
      << "\n";
  CHECK_THROWS_AS(ingest_manifest(raw, unit_map), UnitError);

  CHECK_THROWS_AS(ingest_manifest(td.file("absent.jsonl"), unit_map), IoError);
}
