#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fixtures.hpp"

using namespace metaiqa;

namespace {

DistortionFamily with_levels(const std::string& name, std::vector<std::vector<double>> levels) {
  return {name, std::move(levels)};
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("metaiqa_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("taskgen") {

TEST_CASE("base images are deterministic and in range") {
  const auto a = gen_base_images(10, 16, 16, 7);
  const auto b = gen_base_images(10, 16, 16, 7);
  REQUIRE(a.size() == 10);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);
    CHECK(a[i].pixels.shape() == Shape{3, 16, 16});
    const auto px = a[i].pixels.data();
    CHECK(*std::min_element(px.begin(), px.end()) >= 0.0f);
    CHECK(*std::max_element(px.begin(), px.end()) <= 1.0f);
    ids.insert(a[i].id());
  }
  CHECK(ids.size() == 10);
  CHECK(gen_base_images(1, 16, 16, 8)[0].pixels != a[0].pixels);
  CHECK_THROWS_AS(gen_base_images(0, 16, 16, 7), Error);
}

TEST_CASE("identity and fixed-point cases of the operators") {
  const Tensor half({3, 8, 8}, 0.5f);
  const Tensor img = gen_base_images(1, 8, 8, 3)[0].pixels;
  CHECK(apply_distortion(img, with_levels("gaussian-noise", {{0.0}, {0.1}, {0.2}}), 0, 1) == img);
  const Tensor bright = apply_distortion(half, with_levels("brighten", {{0.1}, {0.2}, {0.3}}), 1, 1);
  for (float v : bright.data()) CHECK(v == doctest::Approx(0.7f));
  const Tensor blurred = apply_distortion(half, find_family(standard_families(), "gaussian-blur"), 4, 1);
  for (float v : blurred.data()) CHECK(v == doctest::Approx(0.5f));
  CHECK_THROWS_AS(apply_distortion(img, with_levels("sharpen", {{1}, {2}, {3}}), 0, 1), Error);
  CHECK_THROWS_AS(apply_distortion(img, standard_families()[0], 5, 1), Error);
}

TEST_CASE("every standard family degrades monotonically with severity") {
  const auto bases = gen_base_images(6, 32, 32, 11);
  for (const auto& f : standard_families()) {
    CAPTURE(f.name);
    CHECK(f.levels.size() == 5);
    for (const auto& b : bases) {
      double prev = 1.0 + 1e-12;
      for (std::size_t l = 0; l < f.levels.size(); ++l) {
        const Tensor d = apply_distortion(b.pixels, f, l, 99);
        const auto px = d.data();
        REQUIRE(*std::min_element(px.begin(), px.end()) >= 0.0f);
        REQUIRE(*std::max_element(px.begin(), px.end()) <= 1.0f);
        const double s = pseudo_mos(b.pixels, d);
        CHECK(s < prev);
        prev = s;
      }
    }
  }
}

TEST_CASE("stochastic distortions are reproducible from their seed") {
  const Tensor img = gen_base_images(1, 16, 16, 2)[0].pixels;
  for (const char* name : {"gaussian-noise", "impulse-noise", "jitter"}) {
    const auto f = find_family(standard_families(), name);
    CHECK(apply_distortion(img, f, 2, 5) == apply_distortion(img, f, 2, 5));
    CHECK(apply_distortion(img, f, 2, 5) != apply_distortion(img, f, 2, 6));
  }
}

TEST_CASE("family validation") {
  CHECK_NOTHROW(with_levels("x", {{1}, {2}, {3}}).validate());
  CHECK_THROWS_AS(with_levels("x", {{1}, {2}}).validate(), Error);
  CHECK_THROWS_AS(with_levels("x", {{1}, {3}, {2}}).validate(), Error);
  CHECK_THROWS_AS(find_family(standard_families(), "nope"), Error);
  CHECK(family_names().size() == 8);
}

TEST_CASE("pseudo-MOS") {
  const Tensor a({1, 2, 2}, 0.5f);
  CHECK(pseudo_mos(a, a) == 1.0);
  // MSE = 0.02 = tau
  Tensor b = a;
  for (auto& v : b.data()) v += static_cast<float>(std::sqrt(0.02));
  CHECK(pseudo_mos(a, b) == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
  CHECK_THROWS_AS(pseudo_mos(a, Tensor({1, 2, 3})), Error);
}

TEST_CASE("score normalisation") {
  CHECK(normalize_scores({4.5}, 0, 9) == std::vector<double>{0.5});
  CHECK(normalize_scores({1, 5}, 1, 5) == std::vector<double>{0.0, 1.0});
  CHECK_THROWS_AS(normalize_scores({9.5}, 0, 9), Error);
  CHECK_THROWS_AS(normalize_scores({1}, 2, 2), Error);
}

TEST_CASE("tasks split at base-image level") {
  const auto bases = gen_base_images(10, 8, 8, 1);
  const auto f = standard_families()[2];
  Rng r1(3), r2(3);
  const DistortionTask t = build_task(f, bases, 0.5, r1);
  CHECK(t.support.size() == 25);
  CHECK(t.query.size() == 25);
  CHECK(disjoint(t.support, t.query));
  CHECK(t.task_id == f.name);
  const DistortionTask again = build_task(f, bases, 0.5, r2);
  CHECK(again.support.ids == t.support.ids);
  CHECK(again.query.scores == t.query.scores);

  // no base image contributes to both sides
  auto base_of = [](const std::string& id) { return id.substr(0, id.rfind("-l")); };
  std::set<std::string> support_bases;
  for (const auto& id : t.support.ids) support_bases.insert(base_of(id));
  for (const auto& id : t.query.ids) CHECK(support_bases.count(base_of(id)) == 0);

  Rng r3(1);
  CHECK_THROWS_AS(build_task(f, gen_base_images(1, 8, 8, 1), 0.5, r3), Error);
}

TEST_CASE("leave-one-distortion-out split") {
  const auto bases = gen_base_images(8, 8, 8, 2);
  const auto fams = standard_families();
  const LodoSplit s = lodo_split(fams, "gaussian-blur", bases, {}, 4);
  CHECK(s.meta.size() == 7);
  for (const auto& t : s.meta.tasks) CHECK(t.task_id != "gaussian-blur");
  for (const auto& id : s.target.train.ids) CHECK(id.rfind("gaussian-blur/", 0) == 0);
  CHECK(disjoint(s.target.train, s.target.test));
  CHECK_NOTHROW(s.meta.validate());
  CHECK_NOTHROW(s.target.validate());
  CHECK_THROWS_AS(lodo_split(fams, "unknown", bases, {}, 4), Error);

  // tasks for the remaining families do not depend on which family is held out
  const LodoSplit other = lodo_split(fams, "jitter", bases, {}, 4);
  CHECK(other.meta.tasks[0].support.ids == s.meta.tasks[0].support.ids);
}

TEST_CASE("random split pools every family") {
  const auto bases = gen_base_images(10, 8, 8, 2);
  const TargetTask t = random_split(standard_families(), bases, 0.8, 0.02, 1);
  CHECK(t.train.size() == 8 * 8 * 5);
  CHECK(t.test.size() == 2 * 8 * 5);
  CHECK(disjoint(t.train, t.test));
}

TEST_CASE("crops") {
  const Tensor img = gen_base_images(1, 12, 10, 4)[0].pixels;
  Rng a(1);
  CHECK(crop_patch(img, 12, 10, a) == img);
  CHECK(crop_patch(img, 4, 4, a).shape() == Shape{3, 4, 4});
  Rng x(9), y(9);
  CHECK(crop_patch(img, 5, 3, x) == crop_patch(img, 5, 3, y));
  CHECK_THROWS_AS(crop_patch(img, 13, 4, a), Error);
}

TEST_CASE("task sets round-trip through disk") {
  const auto dir = scratch_dir("taskset");
  const auto bases = gen_base_images(2, 8, 8, 5);
  std::vector<ScoredImage> all;
  for (const auto& f : {standard_families()[0], standard_families()[3]}) {
    auto part = distort_all(f, bases, 0.02, 1);
    all.insert(all.end(), part.begin(), part.end());
  }
  export_task_set(dir, all);
  const auto loaded = import_task_set(dir);
  REQUIRE(loaded.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(loaded[i].family == all[i].family);
    CHECK(loaded[i].severity == all[i].severity);
    CHECK(loaded[i].score == doctest::Approx(all[i].score).epsilon(1e-9));
    float worst = 0.0f;
    for (std::size_t j = 0; j < all[i].pixels.numel(); ++j) {
      worst = std::max(worst, std::abs(loaded[i].pixels[j] - all[i].pixels[j]));
    }
    CHECK(worst <= 0.5f / 255.0f + 1e-6f);
  }
  // a score range other than [0,1] is normalised on load
  const auto scaled = import_task_set(dir, -1.0, 1.0);
  CHECK(scaled[0].score == doctest::Approx((all[0].score + 1.0) / 2.0));
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed task sets are rejected") {
  const auto dir = scratch_dir("bad");
  std::filesystem::create_directories(dir);
  CHECK_THROWS_AS(import_task_set(dir), Error);
  {
    std::ofstream f(dir / "scores.csv");
    f << "image,family,severity,score\nmissing.ppm,x,0,0.5\n";
  }
  CHECK_THROWS_AS(import_task_set(dir), Error);
  {
    std::ofstream f(dir / "scores.csv");
    f << "wrong,header\n";
  }
  CHECK_THROWS_AS(import_task_set(dir), Error);
  std::filesystem::remove_all(dir);
}

}
