#include <functional>

#include "doctest.h"
#include "onavos/config.hpp"
#include "onavos/errors.hpp"

using namespace onavos;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValueError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults match the reference hyperparameters") {
  const ExperimentConfig c;
  CHECK(c.adapt.alpha == 0.97);
  CHECK(c.adapt.beta == 0.05);
  CHECK(c.adapt.n_online == 15);
  CHECK(c.adapt.n_curr == 3);
  CHECK(c.adapt.online_lr == 1e-5);
  CHECK(c.adapt.oneshot_steps == 50);
  CHECK(c.adapt.oneshot_lr == 3e-6);
  CHECK(c.adapt.erosion_size == 15);
  CHECK(c.adapt.hardest_fraction == 0.25);
  CHECK(c.adapt.distance_threshold(480, 854) == doctest::Approx(220.0).epsilon(1e-9));
  CHECK(c.objectness.epochs == 10);
  CHECK(c.domain.epochs == 10);
  CHECK(c.data.eval_sequences == 20);
  CHECK(c.data.height == 96);
  CHECK(c.data.frames == 40);
  CHECK(c.arch.init == WeightInit::gaussian);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("text round trip") {
  ExperimentConfig c;
  c.seed = 123456789012345ULL;
  c.adapt.alpha = 0.8;
  c.adapt.online_lr = 1.0 / 3.0 * 1e-4;
  c.arch.widths = {8, 12, 16, 20};
  c.arch.dilations = {2, 3, 5};
  c.arch.init = WeightInit::he;
  c.data.eval_scenarios = {ScenarioKind::occlusion, ScenarioKind::distractor_entry};
  c.stages.pretrain_objectness = false;
  c.objectness.hardest_fraction = 1.0;
  c.output_dir = "runs/x";
  c.set("variant.hot.adapt.online_lr", "1e-3");
  c.set("variant.hot.adapt.alpha", "0.9");
  c.set("variant.cold.adapt.n_curr", "0");

  const auto text = c.to_text();
  const auto back = ExperimentConfig::parse(text);
  CHECK(back == c);
  CHECK(back.to_text() == text);
  CHECK(back.adapt.online_lr == c.adapt.online_lr);
  REQUIRE(back.variants.size() == 2);
  CHECK(back.variants[0].first == "hot");
  CHECK(back.variants[0].second.size() == 2);

  for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("parse accepts comments and blank lines") {
  const auto c = ExperimentConfig::parse("# toy\n\nseed = 7   # trailing\n  adapt.alpha=0.5\n");
  CHECK(c.seed == 7);
  CHECK(c.adapt.alpha == 0.5);
}

TEST_CASE("unknown keys and malformed values name the key") {
  ExperimentConfig c;
  CHECK(error_of([&] { c.set("adapt.alhpa", "0.5"); }).find("adapt.alhpa") != std::string::npos);
  CHECK(error_of([&] { c.set("adapt.n_curr", "three"); }).find("adapt.n_curr") != std::string::npos);
  CHECK(error_of([&] { c.set("stages.tta", "maybe"); }).find("stages.tta") != std::string::npos);
  CHECK(error_of([&] { c.set("data.eval_scenarios", "drift"); }).find("drift") != std::string::npos);
  CHECK(error_of([&] { c.set("variant.x.nope", "1"); }).find("nope") != std::string::npos);
  CHECK(!error_of([] { ExperimentConfig::parse("seed 7\n"); }).empty());
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.txt"), IoError);
}

TEST_CASE("validation") {
  ExperimentConfig c;
  c.stages.one_shot = false;
  const auto msg = error_of([&] { c.validate(); });
  CHECK(msg.find("one_shot") != std::string::npos);

  ExperimentConfig d;
  d.adapt.alpha = 1.0;
  CHECK_THROWS_AS(d.validate(), ValueError);
  ExperimentConfig e;
  e.adapt.erosion_size = 4;
  CHECK_THROWS_AS(e.validate(), ValueError);
  ExperimentConfig f;
  f.adapt.n_curr = 16;
  CHECK_THROWS_AS(f.validate(), ValueError);
  ExperimentConfig g;
  g.data.source = "directory";
  CHECK_THROWS_AS(g.validate(), ValueError);
}

TEST_CASE("fingerprint ignores variants and the output directory") {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.output_dir = "elsewhere";
  b.set("variant.v.seed", "9");
  CHECK(a.fingerprint() == b.fingerprint());
  b.adapt.beta = 0.1;
  CHECK(a.fingerprint() != b.fingerprint());
  CHECK(a.fingerprint().size() == 16);
  CHECK(hex64(fnv1a("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a("a")) == "af63dc4c8601ec8c");
}

TEST_CASE("shipped configs load and validate") {
  const auto reference = ExperimentConfig::load(std::string(ONAVOS_SOURCE_DIR) + "/configs/reference.cfg");
  CHECK(reference == ExperimentConfig{});
  const auto toy = ExperimentConfig::load(std::string(ONAVOS_SOURCE_DIR) + "/configs/toy.cfg");
  CHECK_NOTHROW(toy.validate());
  CHECK(toy.data.eval_sequences == 20);
}
