#pragma once

// Deterministic synthetic stand-ins for the objectness and video datasets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "onavos/image.hpp"
#include "onavos/mask.hpp"
#include "onavos/rng.hpp"

namespace onavos {

/// Diagonal of an 854x480 frame, sqrt(854^2 + 480^2). Distance thresholds
/// given in pixels at that size scale with the diagonal.
inline constexpr double kReferenceDiagonal = 979.6509582499269;

enum class ScenarioKind { appearance_drift, distractor_entry, occlusion, static_control };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& s);

struct Scenario {
  ScenarioKind kind = ScenarioKind::appearance_drift;
  int frames = 40;
  int height = 96;
  int width = 96;
  std::uint64_t seed = 0;
  /// Relative distance threshold (fraction of the image diagonal) the
  /// distractor must exceed at entry.
  double d_rel = 220.0 / kReferenceDiagonal;

  void validate() const;
};

struct VideoSequence {
  std::string name;
  std::vector<Image> frames;
  std::vector<BinaryMask> gt_masks;
  /// Pixels of look-alike objects that are not the target (distractor_entry
  /// and appearance_drift; empty masks otherwise). Exported under
  /// distractors/ when any frame has some.
  std::vector<BinaryMask> distractor_masks;
  /// Frame index where the first look-alike appears, if any.
  std::optional<int> distractor_entry_frame;

  std::size_t size() const { return frames.size(); }
  void validate() const;
};

VideoSequence generate_sequence(const Scenario& sc);

struct LabeledImage {
  Image image;
  BinaryMask mask;
};

/// Images with several shapes of assorted classes, all mapped to foreground.
/// Foreground fraction of every image lies in [0.05, 0.6].
std::vector<LabeledImage> generate_objectness_dataset(std::uint64_t seed, int count, int height = 96,
                                                      int width = 96);

// --- augmentation ----------------------------------------------------------

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  double gamma = 1.0;
};

/// flip ~ Bernoulli(0.5), scale ~ U[0.7, 1.3], gamma log-uniform in [0.7, 1.4].
AugmentParams sample_augment(Rng& rng);

/// Zooms by `scale` about the image centre (image bilinear, mask nearest
/// neighbour; out-of-image pixels become grey / background), then flips
/// horizontally, then applies pixel^gamma.
LabeledImage augment(const Image& image, const BinaryMask& mask, const AugmentParams& p);
Image augment_image(const Image& image, const AugmentParams& p);
LabeledImage augment(const Image& image, const BinaryMask& mask, std::uint64_t seed);

/// Source coordinate read by output coordinate `o` under a zoom by `scale`
/// about the centre of an axis of length `n` (half-pixel centres).
double zoom_source(double o, int n, double scale);

// --- directory layout ------------------------------------------------------
//
//   <root>/<sequence>/frames/00000.ppm ...
//   <root>/<sequence>/masks/00000.pgm ...

void export_sequence(const std::filesystem::path& root, const VideoSequence& seq);
VideoSequence load_sequence(const std::filesystem::path& dir);
/// Every sequence directory under root, sorted by name.
std::vector<VideoSequence> load_sequences(const std::filesystem::path& root);

}  // namespace onavos
