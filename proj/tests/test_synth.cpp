#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "onavos/errors.hpp"
#include "onavos/synth.hpp"
#include "test_util.hpp"

using namespace onavos;
namespace fs = std::filesystem;

namespace {

std::pair<double, double> centroid(const BinaryMask& m) {
  double sy = 0, sx = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(y, x)) {
        sy += y;
        sx += x;
      }
  const double n = static_cast<double>(m.count());
  return {sy / n, sx / n};
}

Scenario scenario(ScenarioKind kind, std::uint64_t seed) {
  Scenario sc;
  sc.kind = kind;
  sc.seed = seed;
  return sc;
}

const ScenarioKind kAllKinds[] = {ScenarioKind::appearance_drift, ScenarioKind::distractor_entry,
                                  ScenarioKind::occlusion, ScenarioKind::static_control};

}  // namespace

TEST_CASE("scenario names round trip") {
  for (const auto k : kAllKinds) CHECK(scenario_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(scenario_kind_from_string("explosion"), ValueError);
}

TEST_CASE("sequences are deterministic, in range and well formed") {
  for (const auto k : kAllKinds) {
    const auto a = generate_sequence(scenario(k, 12));
    const auto b = generate_sequence(scenario(k, 12));
    CHECK(a.frames == b.frames);
    CHECK(a.gt_masks == b.gt_masks);
    CHECK(a.size() == 40);
    CHECK(a.frames[0].height == 96);
    CHECK(!a.gt_masks[0].empty());
    double lo = 1, hi = 0;
    for (const auto& f : a.frames) {
      const auto [mn, mx] = std::minmax_element(f.data.begin(), f.data.end());
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(generate_sequence(scenario(k, 13)).frames[0] != a.frames[0]);
  }
}

TEST_CASE("occlusion hides the target for at least three frames") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto seq = generate_sequence(scenario(ScenarioKind::occlusion, seed));
    int longest = 0, run = 0;
    for (const auto& m : seq.gt_masks) {
      run = m.empty() ? run + 1 : 0;
      longest = std::max(longest, run);
    }
    CHECK(longest >= 3);
    CHECK(!seq.gt_masks.back().empty());
  }
}

TEST_CASE("distractors enter farther than d from the target") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto sc = scenario(ScenarioKind::distractor_entry, seed);
    const auto seq = generate_sequence(sc);
    REQUIRE(seq.distractor_entry_frame.has_value());
    const int t = *seq.distractor_entry_frame;
    CHECK(t > 0);
    CHECK(seq.distractor_masks[t - 1].empty());
    REQUIRE(!seq.distractor_masks[t].empty());
    const auto [ty, tx] = centroid(seq.gt_masks[t]);
    const auto [dy, dx] = centroid(seq.distractor_masks[t]);
    CHECK(std::hypot(ty - dy, tx - dx) > sc.d_rel * std::hypot(96.0, 96.0));
    for (std::size_t f = 0; f < seq.size(); ++f) CHECK(seq.gt_masks[f].intersect(seq.distractor_masks[f]).empty());
  }
}

TEST_CASE("objectness images") {
  CHECK(generate_objectness_dataset(3, 1).size() == 1);
  const auto a = generate_objectness_dataset(4, 30);
  const auto b = generate_objectness_dataset(4, 30);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    const double frac = static_cast<double>(a[i].mask.count()) / static_cast<double>(a[i].mask.size());
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.6);
  }
}

TEST_CASE("augmentation") {
  const auto seq = generate_sequence(scenario(ScenarioKind::static_control, 2));
  const auto& img = seq.frames[0];
  const auto& mask = seq.gt_masks[0];

  const auto same = augment(img, mask, AugmentParams{});
  CHECK(same.image == img);
  CHECK(same.mask == mask);

  AugmentParams flip;
  flip.flip = true;
  const auto once = augment(img, mask, flip);
  CHECK(once.mask != mask);
  const auto twice = augment(once.image, once.mask, flip);
  CHECK(twice.image == img);
  CHECK(twice.mask == mask);

  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto p = sample_augment(rng);
    CHECK(p.scale >= 0.7);
    CHECK(p.scale <= 1.3);
    CHECK(p.gamma >= 0.7);
    CHECK(p.gamma <= 1.4);
    const auto out = augment(img, mask, p);
    CHECK(*std::max_element(out.mask.bits().begin(), out.mask.bits().end()) <= 1);
    const auto [mn, mx] = std::minmax_element(out.image.data.begin(), out.image.data.end());
    CHECK(*mn >= 0.0);
    CHECK(*mx <= 1.0);
  }
  CHECK(augment(img, mask, 77).mask == augment(img, mask, 77).mask);
}

TEST_CASE("zoom keeps a centred disc aligned with its analytic warp") {
  Image img(64, 64, 0.2);
  BinaryMask disc(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (std::hypot(y + 0.5 - 32, x + 0.5 - 32) <= 12) {
        disc.set(y, x);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = 0.9;
      }
  AugmentParams p;
  p.scale = 1.25;
  const auto out = augment(img, disc, p);
  BinaryMask expected(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const int sy = static_cast<int>(std::floor(zoom_source(y, 64, 1.25) + 0.5));
      const int sx = static_cast<int>(std::floor(zoom_source(x, 64, 1.25) + 0.5));
      expected.set(y, x, sy >= 0 && sy < 64 && sx >= 0 && sx < 64 && disc(sy, sx));
    }
  CHECK(iou(out.mask, expected) == 1.0);
  // Image and mask stay aligned: interior mask pixels sit on the bright disc.
  const auto inner = erode(out.mask, 3);
  CHECK(inner.count() > 400);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (inner(y, x)) CHECK(out.image.at(0, y, x) == doctest::Approx(0.9));
}

TEST_CASE("export and reload") {
  const auto dir = fs::temp_directory_path() / "onavos_test_export";
  fs::remove_all(dir);
  auto seq = generate_sequence(scenario(ScenarioKind::distractor_entry, 5));
  seq.frames.resize(6);
  seq.gt_masks.resize(6);
  seq.distractor_masks.resize(6);
  export_sequence(dir, seq);
  const auto back = load_sequence(dir / seq.name);
  CHECK(back.name == seq.name);
  CHECK(back.frames == seq.frames);
  CHECK(back.gt_masks == seq.gt_masks);
  CHECK(load_sequences(dir).size() == 1);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_sequences(dir), IoError);
}
