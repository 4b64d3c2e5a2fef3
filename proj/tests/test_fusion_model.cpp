#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nutrifuse/errors.hpp"
#include "nutrifuse/fusion_model.hpp"
#include "testutil.hpp"

using namespace nf;

namespace {

FusionConfig tiny_config(int res = 16, int64_t embed_dim = 8) {
  FusionConfig cfg = FusionConfig::defaults(BackboneKind::tiny_cnn, embed_dim);
  cfg.input_resolution = res;
  return cfg;
}

Var batch_of_one(const Image& img) {
  Tensor t = image_to_tensor(img);
  return Var(t.reshaped({1, t.size(0), t.size(1), t.size(2)}));
}

}  // namespace

TEST_CASE("backbone names round-trip") {
  for (BackboneKind k : {BackboneKind::resnet50, BackboneKind::resnet101,
                         BackboneKind::inception_v3, BackboneKind::vit_base16,
                         BackboneKind::tiny_cnn}) {
    CHECK(backbone_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(backbone_from_string("alexnet"), ConfigError);
}

TEST_CASE("configuration defaults validate for every backbone") {
  for (BackboneKind k : {BackboneKind::resnet50, BackboneKind::resnet101,
                         BackboneKind::inception_v3, BackboneKind::vit_base16,
                         BackboneKind::tiny_cnn}) {
    FusionConfig cfg = FusionConfig::defaults(k);
    cfg.validate();
  }
  CHECK(FusionConfig::defaults(BackboneKind::inception_v3).input_resolution == 299);
  CHECK(FusionConfig::defaults(BackboneKind::inception_v3).fuse_auxiliary);
  CHECK(FusionConfig::defaults(BackboneKind::resnet50).input_resolution == 224);
  CHECK(FusionConfig::defaults(BackboneKind::vit_base16).injection_site == "extra_token");
}

TEST_CASE("configuration rejects invalid site/resolution/aux combinations") {
  FusionConfig cfg = FusionConfig::defaults(BackboneKind::resnet50);
  cfg.injection_site = "mixed6e_with_aux";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = FusionConfig::defaults(BackboneKind::resnet50);
  cfg.input_resolution = 299;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = FusionConfig::defaults(BackboneKind::inception_v3);
  cfg.input_resolution = 224;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = FusionConfig::defaults(BackboneKind::inception_v3);
  cfg.injection_site = "mixed6e_no_aux";  // fuse_auxiliary still true
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.fuse_auxiliary = false;
  cfg.validate();

  cfg = FusionConfig::defaults(BackboneKind::resnet50);
  cfg.fuse_auxiliary = true;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.input_resolution = 18;  // not a multiple of 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.input_resolution = 4;  // too small
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.input_resolution = 8;
  cfg.validate();

  cfg = tiny_config();
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("injection dimension follows the configured site") {
  FusionConfig r = FusionConfig::defaults(BackboneKind::resnet50);
  CHECK(r.injection_dim() == 512);  // block2
  r.injection_site = "block1";
  CHECK(r.injection_dim() == 256);
  r.injection_site = "block4";
  CHECK(r.injection_dim() == 2048);

  FusionConfig i = FusionConfig::defaults(BackboneKind::inception_v3);
  CHECK(i.injection_dim() == 768);
  i.injection_site = "post_maxpool2";
  CHECK(i.injection_dim() == 192);

  CHECK(FusionConfig::defaults(BackboneKind::vit_base16).injection_dim() == 768);
  FusionConfig t = tiny_config();
  CHECK(t.injection_dim() == 16);
  t.injection_site = "block1";
  CHECK(t.injection_dim() == 8);
}

TEST_CASE("channel-broadcast fusion worked examples") {
  Tensor x({2, 1, 1}, {3.0, 4.0});
  Tensor t({2}, {1.0, -5.0});
  Tensor out = fuse_broadcast(x, t);
  CHECK(out[0] == 4.0);
  CHECK(out[1] == -1.0);

  Rng rng(1);
  Tensor big = tu::random_tensor({3, 4, 5}, rng);
  Tensor zero({3});
  CHECK(bitwise_equal(fuse_broadcast(big, zero), big));
}

TEST_CASE("channel-broadcast fusion is additive and shape-strict") {
  Rng rng(2);
  Tensor x = tu::random_tensor({4, 3, 3}, rng);
  Tensor t1 = tu::random_tensor({4}, rng);
  Tensor t2 = tu::random_tensor({4}, rng);
  Tensor t12({4});
  for (int64_t i = 0; i < 4; ++i) t12[i] = t1[i] + t2[i];
  Tensor once = fuse_broadcast(x, t12);
  Tensor twice = fuse_broadcast(fuse_broadcast(x, t1), t2);
  CHECK(max_abs_diff(once, twice) < 1e-12);

  for (int64_t ch = 0; ch < 4; ++ch)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t xx = 0; xx < 3; ++xx)
        CHECK(once.at({ch, y, xx}) == doctest::Approx(x.at({ch, y, xx}) + t12[ch]));

  CHECK_THROWS_AS(fuse_broadcast(x, Tensor({3})), ShapeMismatchError);
  CHECK_THROWS_AS(fuse_broadcast(Tensor({4, 3}), t1), ShapeMismatchError);
}

TEST_CASE("token fusion inserts at slot one and refuses to repeat") {
  Rng rng(3);
  TokenSequence seq;
  seq.tokens = tu::random_tensor({5, 3}, rng);
  Tensor t = tu::random_tensor({3}, rng);

  TokenSequence out = fuse_token(seq, t);
  CHECK(out.has_ingredient);
  REQUIRE(out.length() == 6);
  REQUIRE(out.dim() == 3);
  for (int64_t d = 0; d < 3; ++d) {
    CHECK(out.tokens.at({0, d}) == seq.tokens.at({0, d}));
    CHECK(out.tokens.at({1, d}) == t[d]);
  }
  for (int64_t i = 1; i < 5; ++i)
    for (int64_t d = 0; d < 3; ++d) CHECK(out.tokens.at({i + 1, d}) == seq.tokens.at({i, d}));

  CHECK_THROWS_AS(fuse_token(out, t), DoubleFusionError);
  CHECK_THROWS_AS(fuse_token(seq, Tensor({4})), ShapeMismatchError);
}

TEST_CASE("nutrition heads use a 4096-wide hidden layer and match a manual pass") {
  CHECK(NutritionHeads::kHidden == 4096);
  ParamStore ps(5);
  NutritionHeads heads = NutritionHeads::make(ps, "heads", 6);
  CHECK(heads.fc1[0].w.value().shape() == std::vector<int64_t>{4096, 6});
  CHECK(heads.fc2[3].w.value().shape() == std::vector<int64_t>{1, 4096});

  Rng rng(6);
  Tensor x = tu::random_tensor({2, 6}, rng);
  Tensor y = heads.forward(Var(x)).value();
  REQUIRE(y.shape() == std::vector<int64_t>{2, 4});

  for (int task = 0; task < 4; ++task) {
    const Tensor& w1 = heads.fc1[static_cast<size_t>(task)].w.value();
    const Tensor& b1 = heads.fc1[static_cast<size_t>(task)].b.value();
    const Tensor& w2 = heads.fc2[static_cast<size_t>(task)].w.value();
    const Tensor& b2 = heads.fc2[static_cast<size_t>(task)].b.value();
    for (int64_t row = 0; row < 2; ++row) {
      double out = b2[0];
      for (int64_t hid = 0; hid < 4096; ++hid) {
        double acc = b1[hid];
        for (int64_t j = 0; j < 6; ++j) acc += w1.at({hid, j}) * x.at({row, j});
        out += w2.at({0, hid}) * std::max(0.0, acc);
      }
      CHECK(y.at({row, task}) == doctest::Approx(out).epsilon(1e-9));
    }
  }
}

TEST_CASE("loss is zero at the target and counts each field once") {
  Tensor preds({1, 4}, {110.0, 10.0, 30.0, 8.0});
  Tensor targets({1, 4}, {100.0, 10.0, 30.0, 8.0});
  LossResult r = compute_loss(Var(preds), targets);
  CHECK(r.total.value().item() == doctest::Approx(10.0));
  CHECK(r.per_task[0] == doctest::Approx(10.0));
  CHECK(r.per_task[1] == 0.0);
  CHECK(r.per_task[2] == 0.0);
  CHECK(r.per_task[3] == 0.0);

  LossResult zero = compute_loss(Var(targets), targets);
  CHECK(zero.total.value().item() == 0.0);
}

TEST_CASE("loss equals the sum of per-field mean absolute errors") {
  Rng rng(7);
  Tensor preds = tu::random_tensor({6, 4}, rng, 0.0, 300.0);
  Tensor targets = tu::random_tensor({6, 4}, rng, 0.0, 300.0);
  LossResult r = compute_loss(Var(preds), targets);

  double want = 0.0;
  for (int f = 0; f < 4; ++f) {
    double mae = 0.0;
    for (int64_t j = 0; j < 6; ++j) mae += std::fabs(preds.at({j, f}) - targets.at({j, f}));
    mae /= 6.0;
    CHECK(r.per_task[f] == doctest::Approx(mae).epsilon(1e-12));
    want += mae;
  }
  CHECK(r.total.value().item() == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("loss ignores batch order and scales linearly with the error") {
  Tensor preds({2, 4}, {110, 12, 33, 9, 90, 8, 27, 7});
  Tensor targets({2, 4}, {100, 10, 30, 8, 100, 10, 30, 8});
  Tensor preds_swapped({2, 4}, {90, 8, 27, 7, 110, 12, 33, 9});
  Tensor targets_swapped({2, 4}, {100, 10, 30, 8, 100, 10, 30, 8});
  const double a = compute_loss(Var(preds), targets).total.value().item();
  const double b = compute_loss(Var(preds_swapped), targets_swapped).total.value().item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));

  Tensor preds3x({2, 4});
  for (int64_t i = 0; i < 8; ++i) preds3x[i] = targets[i] + 3.0 * (preds[i] - targets[i]);
  const double tripled = compute_loss(Var(preds3x), targets).total.value().item();
  CHECK(tripled == doctest::Approx(3.0 * a).epsilon(1e-9));
}

TEST_CASE("loss validates batch agreement") {
  CHECK_THROWS_AS(compute_loss(Var(Tensor({2, 4})), Tensor({3, 4})), LengthMismatchError);
  CHECK_THROWS_AS(compute_loss(Var(Tensor({2, 3})), Tensor({2, 3})), LengthMismatchError);
  CHECK_THROWS_AS(compute_loss_values({}, {}), LengthMismatchError);
}

TEST_CASE("value-level loss agrees with the autodiff loss") {
  std::vector<NutritionPrediction> preds = {{110, 12, 33, 9}, {90, 8, 27, 7}};
  std::vector<NutritionVector> targets = {{100, 10, 30, 8}, {100, 10, 30, 8}};
  auto [total, per_task] = compute_loss_values(preds, targets);

  Tensor p({2, 4}), t({2, 4});
  for (int64_t j = 0; j < 2; ++j)
    for (int f = 0; f < 4; ++f) {
      p.at({j, f}) = preds[static_cast<size_t>(j)][f];
      t.at({j, f}) = targets[static_cast<size_t>(j)][f];
    }
  LossResult r = compute_loss(Var(p), t);
  CHECK(total == doctest::Approx(r.total.value().item()).epsilon(1e-12));
  for (int f = 0; f < 4; ++f)
    CHECK(per_task[static_cast<size_t>(f)] == doctest::Approx(r.per_task[f]).epsilon(1e-12));
}

TEST_CASE("loss gradient flows for training") {
  Rng rng(8);
  Tensor preds = tu::random_tensor({3, 4}, rng, 1.0, 5.0);
  Tensor targets = tu::random_tensor({3, 4}, rng, -5.0, -1.0);  // keeps |p-t| off the kink
  tu::gradcheck({preds}, [&](const std::vector<Var>& v) {
    return compute_loss(v[0], targets).total;
  });
}

TEST_CASE("model predictions are deterministic across fresh instances") {
  FusionConfig cfg = tiny_config();
  HashStubEncoder enc(8);
  Image img = tu::random_image(16, 16, 10);
  Tensor chw = image_to_tensor(img);
  const std::vector<std::string> ings = {"lettuce", "tomato"};

  FusionModel m1(cfg, 42, enc.name());
  FusionModel m2(cfg, 42, enc.name());
  NutritionPrediction a = m1.predict(chw, ings, enc);
  NutritionPrediction b = m2.predict(chw, ings, enc);
  for (int f = 0; f < 4; ++f) {
    CHECK(a[f] == b[f]);
    CHECK(std::isfinite(a[f]));
  }
  NutritionPrediction again = m1.predict(chw, ings, enc);
  for (int f = 0; f < 4; ++f) CHECK(a[f] == again[f]);

  FusionModel other(cfg, 43, enc.name());
  NutritionPrediction c = other.predict(chw, ings, enc);
  bool differs = false;
  for (int f = 0; f < 4; ++f) differs = differs || c[f] != a[f];
  CHECK(differs);
}

TEST_CASE("empty ingredient lists bypass fusion exactly") {
  FusionConfig cfg = tiny_config();
  HashStubEncoder enc(8);
  Image img = tu::random_image(16, 16, 11);
  Tensor chw = image_to_tensor(img);

  FusionModel m(cfg, 7, enc.name());
  NutritionPrediction no_list = m.predict(chw, {}, enc);

  // a zero embedding reaches the projector, whose relu(W*0 + 0) = 0 is then
  // broadcast-added; the result must equal skipping fusion altogether
  Var images = batch_of_one(img);
  Var zero_emb(Tensor({1, 8}));
  NoGradGuard ng;
  Var fused = m.forward_batch(images, zero_emb, false);
  Var bypass = m.forward_batch(images, Var(), false);
  CHECK(max_abs_diff(fused.value(), bypass.value()) == 0.0);
  for (int f = 0; f < 4; ++f) CHECK(bypass.value()[f] == no_list[f]);
}

TEST_CASE("fused and bypassed passes differ once the embedding is nonzero") {
  FusionConfig cfg = tiny_config();
  HashStubEncoder enc(8);
  Image img = tu::random_image(16, 16, 12);
  FusionModel m(cfg, 9, enc.name());
  Tensor chw = image_to_tensor(img);
  NutritionPrediction with = m.predict(chw, {"lettuce"}, enc);
  NutritionPrediction without = m.predict(chw, {}, enc);
  bool differs = false;
  for (int f = 0; f < 4; ++f) differs = differs || with[f] != without[f];
  CHECK(differs);
}

TEST_CASE("model enforces shapes, resolution and encoder agreement") {
  FusionConfig cfg = tiny_config();
  HashStubEncoder enc(8);
  HashStubEncoder wide(16);
  FusionModel m(cfg, 1, enc.name());

  Image wrong = tu::random_image(8, 8, 13);
  CHECK_THROWS_AS(m.predict(image_to_tensor(wrong), {}, enc), ResolutionError);

  Image img = tu::random_image(16, 16, 14);
  CHECK_THROWS_AS(m.predict(image_to_tensor(img), {"lettuce"}, wide), ConfigMismatchError);
  m.predict(image_to_tensor(img), {}, wide);  // encoder unused without ingredients

  Var images = batch_of_one(img);
  CHECK_THROWS_AS(m.forward_batch(images, Var(Tensor({1, 16})), false), ShapeMismatchError);
  CHECK_THROWS_AS(m.forward_batch(images, Var(Tensor({2, 8})), false), ShapeMismatchError);
  CHECK_THROWS_AS(m.forward_batch(Var(Tensor({1, 1, 16, 16})), Var(), false),
                  ShapeMismatchError);

  FusionModel shell;
  CHECK(!shell.initialized());
  CHECK_THROWS_AS(shell.predict(image_to_tensor(img), {}, enc), UninitializedModelError);
  CHECK_THROWS_AS(shell.save_checkpoint("/tmp/never.ckpt"), UninitializedModelError);
}

TEST_CASE("checkpoints restore the model bit for bit") {
  tu::TempDir td;
  FusionConfig cfg = tiny_config();
  HashStubEncoder enc(8);
  FusionModel m(cfg, 21, enc.name());
  Image img = tu::random_image(16, 16, 15);
  Tensor chw = image_to_tensor(img);
  NutritionPrediction before = m.predict(chw, {"bun", "cheese"}, enc);

  const std::string path = td.file("model.ckpt");
  m.save_checkpoint(path);
  FusionModel back = FusionModel::load_checkpoint(path);
  CHECK(back.initialized());
  CHECK(back.encoder_id() == enc.name());
  CHECK(back.seed() == 21);
  back.verify_matches(cfg);
  NutritionPrediction after = back.predict(chw, {"bun", "cheese"}, enc);
  for (int f = 0; f < 4; ++f) CHECK(before[f] == after[f]);

  FusionConfig other = tiny_config();
  other.injection_site = "block1";
  CHECK_THROWS_AS(back.verify_matches(other), ConfigMismatchError);
  FusionConfig wide = tiny_config(16, 16);
  CHECK_THROWS_AS(back.verify_matches(wide), ConfigMismatchError);

  CHECK_THROWS_AS(FusionModel::load_checkpoint(td.file("absent.ckpt")), IoError);
  const std::string junk = td.file("junk.ckpt");
  std::ofstream(junk) << "not a checkpoint";
  CHECK_THROWS_AS(FusionModel::load_checkpoint(junk), IoError);
}

TEST_CASE("parameter names seed their own init streams") {
  // same name and store seed => identical values, independent of creation order
  ParamStore a(3), b(3);
  Var p1 = a.param("w.one", {4, 4}, Init::he_normal, 4);
  Var p2 = a.param("w.two", {4, 4}, Init::he_normal, 4);
  Var q2 = b.param("w.two", {4, 4}, Init::he_normal, 4);
  Var q1 = b.param("w.one", {4, 4}, Init::he_normal, 4);
  CHECK(bitwise_equal(p1.value(), q1.value()));
  CHECK(bitwise_equal(p2.value(), q2.value()));
  CHECK(!bitwise_equal(p1.value(), p2.value()));

  ParamStore c(4);
  Var r1 = c.param("w.one", {4, 4}, Init::he_normal, 4);
  CHECK(!bitwise_equal(p1.value(), r1.value()));
}
