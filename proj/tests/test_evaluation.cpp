#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nutrifuse/errors.hpp"
#include "nutrifuse/evaluation.hpp"
#include "testutil.hpp"

using namespace nf;

namespace {

FusionConfig tiny_config() {
  FusionConfig cfg = FusionConfig::defaults(BackboneKind::tiny_cnn, 4);
  cfg.input_resolution = 8;
  return cfg;
}

Sample frame_sample(const std::string& video, int64_t index, const NutritionVector& y) {
  Sample s;
  s.sample_id = video + "#" + std::to_string(index);
  s.image_ref = s.sample_id + ".ppm";
  s.category = video;
  s.nutrition = y;
  s.source = SampleOrigin::video_frame;
  s.video_id = video;
  s.frame_index = index;
  return s;
}

Sample plain_sample(const std::string& id, const NutritionVector& y) {
  Sample s;
  s.sample_id = id;
  s.image_ref = id + ".ppm";
  s.category = "dish";
  s.nutrition = y;
  return s;
}

// raises every head output far above zero so clamping never bites
void force_positive_heads(FusionModel& m, double base) {
  for (int f = 0; f < 4; ++f) {
    const std::string name =
        std::string("heads.") + NutritionVector::field_name(f) + ".fc2.bias";
    m.params().get(name).value_mut()[0] = base * (f + 1);
  }
}

}  // namespace

TEST_CASE("protocol names round-trip") {
  for (Protocol p : {Protocol::single_image, Protocol::protocol1, Protocol::protocol2})
    CHECK(protocol_from_string(protocol_name(p)) == p);
  CHECK_THROWS_AS(protocol_from_string("protocol3"), ConfigError);
}

TEST_CASE("per-field absolute error examples and properties") {
  std::vector<NutritionPrediction> preds = {{110, 10, 30, 8}, {90, 14, 27, 8}};
  std::vector<NutritionVector> targets = {{100, 10, 30, 8}, {100, 10, 30, 8}};
  auto mae = mae_per_field(preds, targets);
  CHECK(mae[0] == doctest::Approx(10.0));
  CHECK(mae[1] == doctest::Approx(2.0));
  CHECK(mae[2] == doctest::Approx(1.5));
  CHECK(mae[3] == 0.0);

  std::swap(preds[0], preds[1]);
  std::swap(targets[0], targets[1]);
  auto swapped = mae_per_field(preds, targets);
  for (int i = 0; i < 4; ++i) CHECK(mae[i] == doctest::Approx(swapped[i]).epsilon(1e-12));

  CHECK_THROWS_AS(mae_per_field({}, {}), LengthMismatchError);
  CHECK_THROWS_AS(mae_per_field(preds, {targets[0]}), LengthMismatchError);
}

TEST_CASE("relative error anchors to the dataset scale") {
  CHECK(relative_percent(118.04, 395.58) == doctest::Approx(29.84).epsilon(2e-4));
  CHECK(relative_percent(118.07, 395.58) == doctest::Approx(29.85).epsilon(2e-4));
  CHECK(relative_percent(0.0, 100.0) == 0.0);
  CHECK(relative_percent(100.0, 100.0) == doctest::Approx(100.0));
  CHECK_THROWS_AS(relative_percent(1.0, 0.0), ZeroMeanError);
  CHECK_THROWS_AS(relative_percent(1.0, -5.0), ZeroMeanError);

  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const double mae = rng.uniform(0.0, 50.0);
    const double mean = rng.uniform(1.0, 500.0);
    const double k = rng.uniform(0.1, 10.0);
    CHECK(relative_percent(k * mae, k * mean) ==
          doctest::Approx(relative_percent(mae, mean)).epsilon(1e-12));
  }
}

TEST_CASE("negative predictions clamp to zero in reports") {
  NutritionPrediction p{-50.0, 10.0, -0.5, 5.0};
  NutritionPrediction q = clamp_nonnegative(p);
  CHECK(q.calories == 0.0);
  CHECK(q.fat == 10.0);
  CHECK(q.carbohydrates == 0.0);
  CHECK(q.protein == 5.0);

  std::vector<NutritionPrediction> preds = {{-50, 10, 20, 5}};
  std::vector<NutritionVector> targets = {{50, 10, 20, 5}};
  EvalReport r = report_from_predictions(preds, targets);
  CHECK(r.per_field[0].mae == doctest::Approx(50.0));  // 100 without clamping
  CHECK(r.per_field[0].relative_percent == doctest::Approx(100.0));
  CHECK(r.per_field[1].mae == 0.0);
  CHECK(r.n_samples == 1);
  CHECK(std::isnan(r.selection_objective));
}

TEST_CASE("report rendering pins its cell format") {
  EvalReport r;
  r.protocol = Protocol::single_image;
  r.n_samples = 2;
  r.selection_objective = std::numeric_limits<double>::quiet_NaN();
  r.per_field[0] = {61.26, 15.49};
  r.per_field[1] = {0.0, 0.0};
  r.per_field[2] = {1.005, 2.5};
  r.per_field[3] = {8.0, 29.847};

  const std::string text = render_report(r);
  CHECK(text.find("protocol: single_image\n") != std::string::npos);
  CHECK(text.find("samples: 2\n") != std::string::npos);
  CHECK(text.find("calories" + std::string(7, ' ') + " 61.26 / 15.49%\n") != std::string::npos);
  CHECK(text.find("fat" + std::string(12, ' ') + " 0.00 / 0.00%\n") != std::string::npos);
  CHECK(text.find("29.85%") != std::string::npos);
  CHECK(text.find("selection objective") == std::string::npos);

  r.protocol = Protocol::protocol2;
  r.selection_objective = 12.5;
  const std::string with_obj = render_report(r);
  CHECK(with_obj.find("protocol: protocol2\n") != std::string::npos);
  CHECK(with_obj.find("selection objective: 12.500000%\n") != std::string::npos);
}

TEST_CASE("report JSON round-trips including the null objective") {
  EvalReport r;
  r.protocol = Protocol::protocol1;
  r.n_samples = 7;
  r.selection_objective = 31.25;
  for (int i = 0; i < 4; ++i) r.per_field[i] = {10.0 + i, 20.0 + i};

  EvalReport back = report_from_json(report_to_json(r));
  CHECK(back.protocol == r.protocol);
  CHECK(back.n_samples == r.n_samples);
  CHECK(back.selection_objective == r.selection_objective);
  for (int i = 0; i < 4; ++i) {
    CHECK(back.per_field[i].mae == r.per_field[i].mae);
    CHECK(back.per_field[i].relative_percent == r.per_field[i].relative_percent);
  }

  r.protocol = Protocol::single_image;
  r.selection_objective = std::numeric_limits<double>::quiet_NaN();
  EvalReport nan_back = report_from_json(report_to_json(r));
  CHECK(std::isnan(nan_back.selection_objective));

  CHECK_THROWS_AS(report_from_json("not json"), ParseError);
  CHECK_THROWS_AS(report_from_json("{\"protocol\": \"single_image\"}"), ParseError);

  tu::TempDir td;
  write_report_files(r, td.file("report.txt"), td.file("report.json"));
  EvalReport loaded = load_report(td.file("report.json"));
  CHECK(loaded.protocol == r.protocol);
  CHECK(loaded.per_field[2].mae == r.per_field[2].mae);
  CHECK_THROWS_AS(load_report(td.file("absent.json")), IoError);
}

TEST_CASE("single-image evaluation matches a manual prediction loop") {
  FusionModel model(tiny_config(), 3, "stub");
  HashStubEncoder enc(4);
  InMemorySource set;
  set.add(plain_sample("a", {200, 10, 30, 8}), tu::random_image(16, 16, 1));
  set.add(plain_sample("b", {100, 20, 10, 4}), tu::random_image(16, 16, 2));
  set.add(plain_sample("c", {300, 30, 50, 12}), tu::random_image(12, 12, 3));

  EvalReport r = evaluate_single_image(model, set, enc);
  CHECK(r.protocol == Protocol::single_image);
  CHECK(r.n_samples == 3);
  CHECK(std::isnan(r.selection_objective));

  std::vector<NutritionPrediction> preds;
  std::vector<NutritionVector> targets;
  for (size_t i = 0; i < set.size(); ++i) {
    preds.push_back(predict_sample(model, set, i, enc));
    targets.push_back(set.sample(i).nutrition);
  }
  EvalReport manual = report_from_predictions(preds, targets);
  for (int i = 0; i < 4; ++i) {
    CHECK(r.per_field[i].mae == manual.per_field[i].mae);
    CHECK(r.per_field[i].relative_percent == manual.per_field[i].relative_percent);
  }

  InMemorySource empty;
  CHECK_THROWS_AS(evaluate_single_image(model, empty, enc), EmptyDatasetError);
}

TEST_CASE("a zero ground-truth mean is reported as an error") {
  FusionModel model(tiny_config(), 3, "stub");
  HashStubEncoder enc(4);
  InMemorySource set;
  set.add(plain_sample("a", {100, 10, 30, 0}), tu::random_image(8, 8, 4));
  set.add(plain_sample("b", {200, 20, 10, 0}), tu::random_image(8, 8, 5));
  CHECK_THROWS_AS(evaluate_single_image(model, set, enc), ZeroMeanError);
}

TEST_CASE("video protocols agree with single-image on one-frame videos") {
  FusionModel model(tiny_config(), 5, "stub");
  HashStubEncoder enc(4);
  InMemorySource set;
  set.add(frame_sample("v1", 0, {200, 10, 30, 8}), tu::random_image(8, 8, 6));
  set.add(frame_sample("v2", 0, {100, 20, 10, 4}), tu::random_image(8, 8, 7));
  set.add(frame_sample("v3", 0, {300, 30, 50, 12}), tu::random_image(8, 8, 8));

  EvalReport single = evaluate_single_image(model, set, enc);
  EvalReport p1 = evaluate_protocol1(model, set, 1, enc);
  EvalReport p2 = evaluate_protocol2(model, set, enc);
  CHECK(p1.protocol == Protocol::protocol1);
  CHECK(p2.protocol == Protocol::protocol2);
  CHECK(p1.n_samples == 3);
  CHECK(p2.n_samples == 3);
  for (int i = 0; i < 4; ++i) {
    CHECK(p1.per_field[i].mae == doctest::Approx(single.per_field[i].mae).epsilon(1e-12));
    CHECK(p2.per_field[i].mae == doctest::Approx(single.per_field[i].mae).epsilon(1e-12));
  }
  CHECK(p1.selection_objective == doctest::Approx(p2.selection_objective).epsilon(1e-12));
}

TEST_CASE("frame striding walks ordered positions within each video") {
  FusionModel model(tiny_config(), 5, "stub");
  HashStubEncoder enc(4);
  const NutritionVector y{200, 10, 30, 8};
  InMemorySource set;
  // insertion order scrambled; frame indices are even on purpose
  set.add(frame_sample("v1", 4, y), tu::random_image(8, 8, 10));
  set.add(frame_sample("v1", 0, y), tu::random_image(8, 8, 11));
  set.add(frame_sample("v1", 8, y), tu::random_image(8, 8, 12));
  set.add(frame_sample("v1", 2, y), tu::random_image(8, 8, 13));
  set.add(frame_sample("v1", 6, y), tu::random_image(8, 8, 14));

  EvalReport stride2 = evaluate_protocol1(model, set, 2, enc);
  CHECK(stride2.n_samples == 3);  // sorted positions 0, 2, 4 -> indices 0, 4, 8
  EvalReport stride3 = evaluate_protocol1(model, set, 3, enc);
  CHECK(stride3.n_samples == 2);  // positions 0, 3 -> indices 0, 6
  EvalReport stride9 = evaluate_protocol1(model, set, 9, enc);
  CHECK(stride9.n_samples == 1);  // every video still contributes its first frame

  CHECK_THROWS_AS(evaluate_protocol1(model, set, 0, enc), BadStrideError);
  InMemorySource empty;
  CHECK_THROWS_AS(evaluate_protocol1(model, empty, 1, enc), EmptyDatasetError);
  CHECK_THROWS_AS(evaluate_protocol2(model, empty, enc), EmptyDatasetError);
}

TEST_CASE("video protocols require frame metadata") {
  FusionModel model(tiny_config(), 5, "stub");
  HashStubEncoder enc(4);
  InMemorySource set;
  set.add(plain_sample("a", {100, 10, 30, 8}), tu::random_image(8, 8, 15));
  CHECK_THROWS_AS(evaluate_protocol1(model, set, 1, enc), ManifestError);
  CHECK_THROWS_AS(evaluate_protocol2(model, set, enc), ManifestError);
}

TEST_CASE("frame selection finds the zero-error frame") {
  FusionModel model(tiny_config(), 7, "stub");
  force_positive_heads(model, 50.0);
  HashStubEncoder enc(4);

  InMemorySource probe;
  probe.add(frame_sample("v1", 0, {50, 100, 150, 200}), tu::random_image(8, 8, 20));
  probe.add(frame_sample("v1", 1, {50, 100, 150, 200}), tu::random_image(8, 8, 21));
  probe.add(frame_sample("v1", 2, {50, 100, 150, 200}), tu::random_image(8, 8, 22));
  NutritionPrediction middle = predict_sample(model, probe, 1, enc);
  for (int f = 0; f < 4; ++f) CHECK(middle[f] > 0.0);

  InMemorySource set;
  NutritionVector oracle_target{middle.calories, middle.fat, middle.carbohydrates,
                                middle.protein};
  set.add(frame_sample("v1", 0, {50, 100, 150, 200}), tu::random_image(8, 8, 20));
  set.add(frame_sample("v1", 1, oracle_target), tu::random_image(8, 8, 21));
  set.add(frame_sample("v1", 2, {50, 100, 150, 200}), tu::random_image(8, 8, 22));

  EvalReport p2 = evaluate_protocol2(model, set, enc);
  CHECK(p2.n_samples == 1);
  CHECK(p2.selection_objective == doctest::Approx(0.0).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) CHECK(p2.per_field[i].mae == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("oracle selection never scores worse than striding") {
  FusionModel model(tiny_config(), 9, "stub");
  HashStubEncoder enc(4);
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    InMemorySource set;
    const int n_videos = 1 + static_cast<int>(rng.uniform_int(3));
    for (int v = 0; v < n_videos; ++v) {
      const int n_frames = 1 + static_cast<int>(rng.uniform_int(4));
      NutritionVector y{rng.uniform(50, 400), rng.uniform(1, 40), rng.uniform(1, 80),
                        rng.uniform(1, 30)};
      for (int f = 0; f < n_frames; ++f)
        set.add(frame_sample("v" + std::to_string(v), f, y),
                tu::random_image(8, 8, rng.next_u64()));
    }
    EvalReport p2 = evaluate_protocol2(model, set, enc);
    for (int64_t stride : {1, 2, 3}) {
      EvalReport p1 = evaluate_protocol1(model, set, stride, enc);
      CHECK(p2.selection_objective <= p1.selection_objective + 1e-12);
    }
  }
}

TEST_CASE("video protocols are deterministic") {
  FusionModel model(tiny_config(), 11, "stub");
  HashStubEncoder enc(4);
  InMemorySource set;
  for (int f = 0; f < 4; ++f)
    set.add(frame_sample("v1", f, {200, 10, 30, 8}), tu::random_image(8, 8, 40 + f));
  for (int f = 0; f < 3; ++f)
    set.add(frame_sample("v2", f, {100, 20, 10, 4}), tu::random_image(8, 8, 50 + f));

  EvalReport a = evaluate_protocol2(model, set, enc);
  EvalReport b = evaluate_protocol2(model, set, enc);
  CHECK(a.selection_objective == b.selection_objective);
  for (int i = 0; i < 4; ++i) CHECK(a.per_field[i].mae == b.per_field[i].mae);

  EvalReport c = evaluate_protocol1(model, set, 2, enc);
  EvalReport d = evaluate_protocol1(model, set, 2, enc);
  CHECK(c.selection_objective == d.selection_objective);
  CHECK(c.n_samples == d.n_samples);
}
