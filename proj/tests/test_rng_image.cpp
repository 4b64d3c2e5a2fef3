#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "nutrifuse/image.hpp"
#include "nutrifuse/rng.hpp"
#include "testutil.hpp"

using namespace nf;

TEST_CASE("rng streams are deterministic per seed") {
  Rng a(42), b(42), c(43);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    if (x != c.uniform()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("from_parts mixes both parts") {
  Rng a = Rng::from_parts(1, 2);
  Rng b = Rng::from_parts(1, 2);
  Rng c = Rng::from_parts(2, 1);
  Rng d = Rng::from_parts(1, 3);
  CHECK(a.next_u64() == b.next_u64());
  Rng a2 = Rng::from_parts(1, 2);
  CHECK(a2.next_u64() != c.next_u64());
  Rng a3 = Rng::from_parts(1, 2);
  CHECK(a3.next_u64() != d.next_u64());
}

TEST_CASE("uniform range and bernoulli frequency") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-2.0, 5.0);
    CHECK(x >= -2.0);
    CHECK(x < 5.0);
  }
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += rng.bernoulli(0.3) ? 1 : 0;
  CHECK(std::abs(hits / 10000.0 - 0.3) < 0.02);
}

TEST_CASE("uniform_int stays in range and covers it") {
  Rng rng(9);
  std::set<uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const uint64_t v = rng.uniform_int(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("normal draws have roughly standard moments") {
  Rng rng(11);
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle_in_place is a deterministic permutation") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng r1(5), r2(5);
  shuffle_in_place(v, r1);
  shuffle_in_place(w, r2);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
  std::vector<int> ident(50);
  std::iota(ident.begin(), ident.end(), 0);
  CHECK(v != ident);
}

TEST_CASE("fnv1a64 matches reference digests") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("ppm round-trip preserves 8-bit pixels") {
  Image img = tu::random_image(9, 7, 21);
  // snap to the 8-bit grid first so the round-trip is exact
  for (double& p : img.pix) p = std::round(p * 255.0) / 255.0;
  tu::TempDir td;
  const std::string path = td.file("img.ppm");
  save_image(path, img);
  Image back = load_image(path);
  REQUIRE(back.h == 9);
  REQUIRE(back.w == 7);
  REQUIRE(back.c == 3);
  for (size_t i = 0; i < img.pix.size(); ++i)
    CHECK(back.pix[i] == doctest::Approx(img.pix[i]).epsilon(1e-12));
}

TEST_CASE("grayscale images save as pgm and reload single-channel") {
  Image img(4, 5, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) img.at(y, x, 0) = (y * 5 + x) / 20.0;
  for (double& p : img.pix) p = std::round(p * 255.0) / 255.0;
  tu::TempDir td;
  const std::string path = td.file("img.pgm");
  save_image(path, img);
  Image back = load_image(path);
  REQUIRE(back.c == 1);
  CHECK(back.h == 4);
  CHECK(back.w == 5);
  for (size_t i = 0; i < img.pix.size(); ++i)
    CHECK(back.pix[i] == doctest::Approx(img.pix[i]).epsilon(1e-12));
}

TEST_CASE("encode_ppm emits the bytes save_image writes") {
  Image img = tu::random_image(3, 3, 5);
  tu::TempDir td;
  const std::string path = td.file("img.ppm");
  save_image(path, img);
  std::string mem = encode_ppm(img);
  FILE* f = std::fopen(path.c_str(), "rb");
  REQUIRE(f != nullptr);
  std::string disk;
  char buf[256];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) disk.append(buf, got);
  std::fclose(f);
  CHECK(mem == disk);
  CHECK(mem.substr(0, 2) == "P6");
}

TEST_CASE("missing and malformed image files throw") {
  tu::TempDir td;
  CHECK_THROWS_AS(load_image(td.file("absent.ppm")), IoError);
  const std::string bad = td.file("bad.ppm");
  FILE* f = std::fopen(bad.c_str(), "wb");
  std::fputs("P3\n1 1\n255\n0 0 0\n", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_image(bad), ParseError);
}

TEST_CASE("resize to the same size is the identity") {
  Image img = tu::random_image(8, 6, 3);
  Image same = resize_bilinear(img, 8, 6);
  REQUIRE(same.pix.size() == img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) CHECK(same.pix[i] == doctest::Approx(img.pix[i]));
}

TEST_CASE("resize of a constant image stays constant") {
  Image img = tu::solid_image(5, 7, 0.25, 0.5, 0.75);
  Image big = resize_bilinear(img, 13, 11);
  for (int y = 0; y < 13; ++y)
    for (int x = 0; x < 11; ++x) {
      CHECK(big.at(y, x, 0) == doctest::Approx(0.25));
      CHECK(big.at(y, x, 1) == doctest::Approx(0.5));
      CHECK(big.at(y, x, 2) == doctest::Approx(0.75));
    }
}

TEST_CASE("hflip is an involution that mirrors columns") {
  Image img = tu::random_image(6, 9, 8);
  Image flipped = hflip(img);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 9; ++x)
      for (int ch = 0; ch < 3; ++ch) CHECK(flipped.at(y, x, ch) == img.at(y, 8 - x, ch));
  Image twice = hflip(flipped);
  CHECK(twice.pix == img.pix);
}

TEST_CASE("rotation keeps dimensions and zero degrees is near-identity") {
  Image img = tu::random_image(10, 12, 13);
  Image rot = rotate_bilinear(img, 30.0);
  CHECK(rot.h == 10);
  CHECK(rot.w == 12);
  CHECK(rot.c == 3);
  Image zero = rotate_bilinear(img, 0.0);
  for (size_t i = 0; i < img.pix.size(); ++i)
    CHECK(zero.pix[i] == doctest::Approx(img.pix[i]).epsilon(1e-9));
}

TEST_CASE("crop extracts the requested window") {
  Image img = tu::random_image(8, 8, 17);
  Image c = crop(img, 2, 3, 4, 5);
  REQUIRE(c.h == 4);
  REQUIRE(c.w == 5);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      for (int ch = 0; ch < 3; ++ch) CHECK(c.at(y, x, ch) == img.at(y + 2, x + 3, ch));
  CHECK_THROWS_AS(crop(img, 6, 0, 4, 4), PreconditionError);
  CHECK_THROWS_AS(crop(img, 0, 0, 0, 4), PreconditionError);
}

TEST_CASE("to_gray replicates luma across channels") {
  Image img = tu::random_image(4, 4, 19);
  Image g = to_gray(img);
  REQUIRE(g.c == 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double luma =
          0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      CHECK(g.at(y, x, 0) == doctest::Approx(luma));
      CHECK(g.at(y, x, 1) == doctest::Approx(luma));
      CHECK(g.at(y, x, 2) == doctest::Approx(luma));
    }
}

TEST_CASE("ensure_rgb expands single-channel images") {
  Image gray(3, 3, 1);
  gray.at(1, 1, 0) = 0.4;
  Image rgb = ensure_rgb(gray);
  REQUIRE(rgb.c == 3);
  CHECK(rgb.at(1, 1, 0) == 0.4);
  CHECK(rgb.at(1, 1, 1) == 0.4);
  CHECK(rgb.at(1, 1, 2) == 0.4);
  Image already = tu::random_image(3, 3, 23);
  Image same = ensure_rgb(already);
  CHECK(same.pix == already.pix);
}

TEST_CASE("tensor round-trip is exact and channel-planar") {
  Image img = tu::random_image(5, 4, 29);
  Tensor t = image_to_tensor(img);
  REQUIRE(t.shape() == std::vector<int64_t>{3, 5, 4});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x)
      for (int ch = 0; ch < 3; ++ch) CHECK(t.at({ch, y, x}) == img.at(y, x, ch));
  Image back = image_from_tensor(t);
  CHECK(back.h == 5);
  CHECK(back.w == 4);
  CHECK(back.pix == img.pix);
}
