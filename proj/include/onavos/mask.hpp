#pragma once

// Binary mask algebra used for target selection and scoring.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace onavos {

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, bool fill = false);
  BinaryMask(int height, int width, std::vector<std::uint8_t> bits);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool operator()(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v = true) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool at(std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool same_dims(const BinaryMask& o) const { return height_ == o.height_ && width_ == o.width_; }

  /// Set difference: this AND NOT other.
  BinaryMask minus(const BinaryMask& other) const;
  BinaryMask intersect(const BinaryMask& other) const;

  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;  // 0 or 1, row-major
};

/// Per-pixel Euclidean distance to the nearest foreground pixel of a mask;
/// +infinity everywhere when the mask is empty.
struct DistanceMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Foreground probability per pixel (channel 1 of the network posteriors).
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

enum class Label : std::uint8_t { negative = 0, positive = 1, dont_care = 2 };

/// Ternary training target. Positive and negative sets are disjoint by
/// construction since each pixel carries exactly one label.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, Label fill = Label::dont_care);

  /// positive where mask is set, negative elsewhere.
  static LabelMap from_mask(const BinaryMask& mask);
  /// positive/negative from the two masks (positives win on overlap, which
  /// the selection rules never produce), dont_care elsewhere.
  static LabelMap from_masks(const BinaryMask& positives, const BinaryMask& negatives);

  int height() const { return height_; }
  int width() const { return width_; }
  Label operator()(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  Label at(std::size_t i) const { return labels_[i]; }
  void set(int y, int x, Label l) { labels_[static_cast<std::size_t>(y) * width_ + x] = l; }

  std::size_t count(Label l) const;
  std::size_t labeled() const { return labels_.size() - count(Label::dont_care); }

  /// Nearest-neighbour resampling with half-pixel centers: target pixel i
  /// reads source pixel floor((i + 0.5) * src / dst).
  LabelMap downsample(int height, int width) const;

  const std::vector<Label>& labels() const { return labels_; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<Label> labels_;
};

/// Foreground iff the whole size x size window centred on the pixel is
/// foreground; pixels outside the image count as background. `size` must be
/// odd and positive.
BinaryMask erode(const BinaryMask& mask, int size);

/// Exact Euclidean distance transform (separable lower-envelope method).
DistanceMap distance_transform(const BinaryMask& mask);

/// Pixels with distance strictly greater than d.
BinaryMask select_negatives(const DistanceMap& dt, double d);

/// (probability > alpha) minus negatives. alpha must lie in (0, 1).
BinaryMask select_positives(const ProbabilityMap& post, double alpha, const BinaryMask& negatives);

/// (probability > 0.5) minus negatives.
BinaryMask threshold_minus_negatives(const ProbabilityMap& post, const BinaryMask& negatives);

/// |a ∩ b| / |a ∪ b|, 1.0 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

}  // namespace onavos
