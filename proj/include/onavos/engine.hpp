#pragma once

// Online adaptive segmentation of a video: one-shot fine-tuning on the
// annotated first frame, then per-frame self-supervised updates from
// confident positives and far-away negatives, interleaved with rehearsal of
// the first frame.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "onavos/image.hpp"
#include "onavos/mask.hpp"
#include "onavos/optim.hpp"
#include "onavos/rng.hpp"
#include "onavos/segnet.hpp"
#include "onavos/synth.hpp"

namespace onavos {


struct AdaptationConfig {
  double alpha = 0.97;
  double beta = 0.05;
  double d_rel = 220.0 / kReferenceDiagonal;
  int n_online = 15;
  int n_curr = 3;
  double online_lr = 1e-5;
  int oneshot_steps = 50;
  double oneshot_lr = 3e-6;
  int erosion_size = 15;
  double hardest_fraction = 0.25;

  // Ablation switches: which selected examples enter the online loss.
  bool use_positives = true;
  bool use_negatives = true;
  /// Average posteriors over augmented variants before selecting targets.
  bool tta_targets = false;
  int tta_variants = 10;

  void validate() const;
  /// d in pixels for a frame of the given size.
  double distance_threshold(int height, int width) const;
};

/// What the engine needs from a segmentation model. NetworkSegmenter is the
/// real implementation; tests substitute scripted stubs.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual ProbabilityMap posteriors(const Image& frame) = 0;
  /// One optimizer step on `labels` (full frame resolution). Returns false
  /// when the labels carry no usable signal and no step was taken.
  virtual bool train_step(const Image& frame, const LabelMap& labels, double loss_scale, double lr) = 0;
  /// Full two-channel posteriors; used by test-time augmentation.
  virtual ad::Tensor posterior_tensor(const Image& frame);
};

/// Segmenter backed by a NetworkState it mutates in place.
class NetworkSegmenter : public Segmenter {
 public:
  NetworkSegmenter(NetworkState& net, double hardest_fraction) : net_(net), hardest_fraction_(hardest_fraction) {}

  ProbabilityMap posteriors(const Image& frame) override;
  bool train_step(const Image& frame, const LabelMap& labels, double loss_scale, double lr) override;
  ad::Tensor posterior_tensor(const Image& frame) override;

  /// Loss of the most recent train_step.
  double last_loss() const { return last_loss_; }
  NetworkState& net() { return net_; }

 private:
  NetworkState& net_;
  double hardest_fraction_;
  double last_loss_ = 0.0;
};

/// Loss value and gradients for one (frame, labels) pair; labels are
/// resampled to the logits grid. Returns nullopt when nothing is labelled
/// there.
struct StepResult {
  double loss = 0.0;
};
std::optional<StepResult> sgd_step(NetworkState& net, const Image& frame, const LabelMap& labels,
                                   const LossConfig& loss, double lr);

struct Targets {
  BinaryMask eroded;  // eroded last mask
  BinaryMask negatives;
  BinaryMask positives;
  LabelMap labels;
};

/// erode -> distance transform -> negatives (dt > d) -> positives
/// (p > alpha minus negatives); everything else dont_care. The use_positives
/// / use_negatives switches only affect `labels`.
Targets build_targets(const ProbabilityMap& post, const BinaryMask& lastmask, const AdaptationConfig& cfg);

/// True for the 1-based online step indices that train on the current frame:
/// n_curr of the n_online steps, evenly spread (i*n_curr/n_online crosses an
/// integer). With 15/3 these are steps 5, 10 and 15.
bool is_current_frame_step(int step, int n_online, int n_curr);

/// cfg.oneshot_steps steps at cfg.oneshot_lr on the first frame, with fresh
/// augmentations drawn from `rng` for every step.
void one_shot_finetune(Segmenter& model, const Image& frame1, const BinaryMask& gt1,
                       const AdaptationConfig& cfg, Rng& rng);
NetworkState one_shot_finetune(const NetworkState& net, const Image& frame1, const BinaryMask& gt1,
                               const AdaptationConfig& cfg, Rng& rng);

struct AdaptOutcome {
  int steps = 0;          // optimizer steps actually taken
  int current_steps = 0;  // of which on the current frame
  bool skipped = false;   // labels carried no signal; nothing was done
};

/// n_online interleaved steps at cfg.online_lr: current-frame steps on the
/// unaugmented frame with loss scale beta, first-frame steps on augmented
/// (frame1, gt1) with loss scale 1.
AdaptOutcome adapt_on_frame(Segmenter& model, const Image& frame, const Image& frame1, const BinaryMask& gt1,
                            const LabelMap& labels, const AdaptationConfig& cfg, Rng& rng);

struct FrameTrace {
  BinaryMask eroded;
  BinaryMask positives;
  BinaryMask negatives;
  BinaryMask lastmask;
  bool lost = false;
};

struct SequenceResult {
  std::string name;
  std::vector<BinaryMask> masks;     // frames 2..T
  std::vector<double> ious;          // against ground truth, frames 2..T
  std::vector<int> update_counter;   // optimizer steps applied while processing each of frames 2..T
  std::vector<int> lost_frames;      // 0-based frame indices
  int skipped_frames = 0;            // frames with no labelled pixels
  std::vector<FrameTrace> trace;     // filled when requested

  friend bool operator==(const SequenceResult&, const SequenceResult&) = default;
};

struct RunOptions {
  bool adapt = true;
  bool record_trace = false;
};

/// Processes frames 2..T of `seq` (frame 1 is the annotated one). With
/// adapt=false this is the un-adapted baseline: one forward pass and a plain
/// 0.5 threshold per frame.
SequenceResult run_sequence(Segmenter& model, const VideoSequence& seq, const AdaptationConfig& cfg,
                            const RunOptions& opts, Rng rng);

/// Averages posteriors over n variants: variant 0 is the frame itself, the
/// rest are random flip/zoom/gamma augmentations whose posteriors are warped
/// back to the original geometry. Pixels a zoomed-in variant does not cover
/// are averaged over the remaining variants.
ad::Tensor tta_forward(Segmenter& model, const Image& frame, int n, std::uint64_t seed);

// --- pretraining -----------------------------------------------------------

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  double hardest_fraction = 0.25;
  bool augment = true;
};

/// Mean training loss per epoch.
using EpochLosses = std::vector<double>;

/// Batch-size-1 Adam over the dataset, reshuffled every epoch.
EpochLosses pretrain_objectness(NetworkState& net, const std::vector<LabeledImage>& data, const TrainConfig& cfg,
                                Rng rng);

/// Same over every annotated frame of the training sequences.
EpochLosses pretrain_domain(NetworkState& net, const std::vector<VideoSequence>& sequences,
                            const TrainConfig& cfg, Rng rng);

/// Mean training-set loss (no updates) with the given hardest fraction.
double dataset_loss(const NetworkState& net, const std::vector<LabeledImage>& data, double hardest_fraction);

}  // namespace onavos
