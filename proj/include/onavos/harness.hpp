#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "onavos/config.hpp"
#include "onavos/engine.hpp"
#include "onavos/metrics.hpp"

namespace onavos {

struct Dataset {
  std::vector<LabeledImage> objectness;
  std::vector<VideoSequence> train;
  std::vector<VideoSequence> eval;  // sorted by name
};

/// Synthetic splits are derived from the master seed; directory splits are
/// loaded. The objectness set is only built when that stage is enabled.
Dataset build_dataset(const ExperimentConfig& cfg);

/// Scenario for eval/train sequence `index`: kinds assigned round-robin,
/// seeds split from the master seed.
Scenario eval_scenario(const ExperimentConfig& cfg, int index);
Scenario train_scenario(const ExperimentConfig& cfg, int index);

/// Writes train/, eval/ (sequence layout), objectness/ (images/, masks/) and
/// config.txt under `root`. Refuses a non-empty root unless `force`.
void write_dataset(const ExperimentConfig& cfg, const std::filesystem::path& root, bool force);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Exceptions are
/// rethrown on the calling thread (lowest index first).
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

/// Hex keys identifying the inputs of each cached stage.
std::string pretrain_key(const ExperimentConfig& cfg);
std::string oneshot_key(const ExperimentConfig& cfg);

/// Segmenter decorator that replaces every posterior query with a
/// test-time-augmented average; call i uses seed split(i) of `rng`.
class TtaSegmenter : public Segmenter {
 public:
  TtaSegmenter(Segmenter& inner, int variants, Rng rng) : inner_(inner), variants_(variants), rng_(rng) {}
  ProbabilityMap posteriors(const Image& frame) override;
  ad::Tensor posterior_tensor(const Image& frame) override;
  bool train_step(const Image& frame, const LabelMap& labels, double loss_scale, double lr) override {
    return inner_.train_step(frame, labels, loss_scale, lr);
  }

 private:
  Segmenter& inner_;
  int variants_;
  Rng rng_;
  std::uint64_t calls_ = 0;
};

/// Builds networks stage by stage and memoizes them, so ablation variants
/// that differ only in later stages share the earlier work. With a
/// checkpoint directory, stage outputs are written there and reused when
/// their key file matches.
class Pipeline {
 public:
  Pipeline(const Dataset& data, int jobs, std::ostream* log = nullptr,
           std::optional<std::filesystem::path> checkpoint_dir = std::nullopt);

  /// Network after the enabled pretraining stages.
  const NetworkState& pretrained(const ExperimentConfig& cfg);
  /// Per eval sequence: the one-shot fine-tuned network (or a copy of the
  /// pretrained one when the stage is off).
  const std::vector<NetworkState>& one_shot(const ExperimentConfig& cfg);

  struct Output {
    std::vector<SequenceResult> results;      // eval order
    std::vector<NetworkState> final_networks;  // after online adaptation
  };
  /// Runs every eval sequence through the online adaptation loop (or the un-adapted
  /// baseline when stages.online_adapt is off).
  Output run(const ExperimentConfig& cfg, bool record_trace = false);

  /// Pretraining losses of the last computed stages (empty when loaded).
  const std::map<std::string, EpochLosses>& losses() const { return losses_; }

 private:
  const Dataset& data_;
  int jobs_;
  std::ostream* log_;
  std::optional<std::filesystem::path> ckpt_;
  std::map<std::string, NetworkState> pretrained_;
  std::map<std::string, std::vector<NetworkState>> oneshot_;
  std::map<std::string, EpochLosses> losses_;
};

MetricsReport score(const ExperimentConfig& cfg, const Dataset& data, const std::vector<SequenceResult>& results);

/// cmd_run: stages in order, checkpoints after each stage, masks under
/// out/masks/<sequence>/NNNNN.pgm, out/report.csv, out/frames.csv.
MetricsReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out, int jobs,
                             std::ostream* log = nullptr);

// --- ablations -------------------------------------------------------------

struct Variant {
  std::string name;
  std::string label;
  std::function<void(ExperimentConfig&)> apply;
};

/// no_adaptation, full_adaptation, only_negatives, only_positives,
/// no_first_frame.
const std::vector<Variant>& builtin_variants();

/// Resolves names against config-defined variants first, then built-ins;
/// throws ValueError for unknown names. `names` == nullopt selects every
/// built-in followed by every config-defined variant.
std::vector<Variant> resolve_variants(const ExperimentConfig& cfg, const std::optional<std::vector<std::string>>& names);

struct AblationRow {
  std::string name;
  std::string label;
  MetricsReport report;
};

/// Base row first, then one row per variant, all on the same data and seed.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<Variant>& variants,
                                      Pipeline& pipeline, const Dataset& data);

void print_ablation(std::ostream& os, const std::vector<AblationRow>& rows);
void write_ablation_csv(std::ostream& os, const ExperimentConfig& cfg, const std::vector<AblationRow>& rows);

// --- eval over directories -------------------------------------------------

/// Scores <pred>/<sequence>/NNNNN.pgm against <gt>/<sequence>/masks/NNNNN.pgm
/// for every predicted frame.
MetricsReport evaluate_directories(const std::filesystem::path& pred, const std::filesystem::path& gt, int tol);

}  // namespace onavos
