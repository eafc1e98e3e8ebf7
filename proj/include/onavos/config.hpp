#pragma once

// Experiment configuration in a flat, line-oriented `key = value` format:
//
//   # comment
//   seed = 7
//   arch.widths = 16,24,32,48
//   adapt.alpha = 0.97
//   stages.online_adapt = true
//   variant.aggressive.adapt.online_lr = 1e-4
//
// Doubles are written with 17 significant digits so parse(to_text(c)) == c.
// Keys under `variant.<name>.` are named deltas used by the ablation runner.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "onavos/engine.hpp"
#include "onavos/segnet.hpp"
#include "onavos/synth.hpp"

namespace onavos {

struct DataConfig {
  /// "synthetic" generates the splits from the seed; "directory" loads them
  /// from train_dir / eval_dir (PPM/PGM layout).
  std::string source = "synthetic";
  std::string train_dir;
  std::string eval_dir;
  int height = 96;
  int width = 96;
  int frames = 40;
  int train_sequences = 10;
  int eval_sequences = 20;
  std::vector<ScenarioKind> train_scenarios{ScenarioKind::appearance_drift, ScenarioKind::distractor_entry,
                                            ScenarioKind::occlusion, ScenarioKind::static_control};
  std::vector<ScenarioKind> eval_scenarios{ScenarioKind::appearance_drift};
  int objectness_images = 200;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct StageConfig {
  bool pretrain_objectness = true;
  bool pretrain_domain = true;
  bool one_shot = true;
  bool online_adapt = true;
  bool tta = false;  // average posteriors over augmented variants for the output masks

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  ArchConfig arch;
  AdaptationConfig adapt;
  TrainConfig objectness{10, 1e-3, 0.25, true};
  TrainConfig domain{10, 1e-3, 0.25, true};
  DataConfig data;
  StageConfig stages;
  int boundary_tolerance = -1;  // < 0: ceil(1% of the diagonal)
  std::string output_dir = "runs/default";
  /// Named deltas in file order: name -> [(key, value)].
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> variants;

  /// Throws ValueError on inconsistent settings (including stage order).
  void validate() const;

  /// Sets one dotted key from its textual value; throws ValueError naming
  /// the key for unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);

  /// Canonical text form; every key is written.
  std::string to_text() const;

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Hex FNV-1a of to_text() without the variant section and output dir.
  std::string fingerprint() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&);
};

/// Every key ExperimentConfig::set accepts, in canonical order.
std::vector<std::string> config_keys();

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace onavos
