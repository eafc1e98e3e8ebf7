#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "onavos/mask.hpp"

namespace onavos {

struct JStats {
  double mean = 0.0;
  double recall = 0.0;  // fraction of frames with IoU > 0.5
  double decay = 0.0;   // mean of first ceil(T/4) frames minus mean of last ceil(T/4)
};

JStats j_stats(std::span<const double> per_frame_ious);

/// Foreground pixels with at least one background 4-neighbour; the image
/// border counts as background.
BinaryMask boundary(const BinaryMask& mask);

/// Contour F-measure: boundary precision/recall with a Chebyshev matching
/// tolerance of `tol` pixels. 1 when both masks are empty, 0 when exactly one
/// is.
double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tol);

/// ceil(1% of the image diagonal).
int default_boundary_tolerance(int height, int width);

struct SequenceMetrics {
  std::string name;
  double j_mean = 0, j_recall = 0, j_decay = 0, f_mean = 0;
  int frames = 0;
};

struct MetricsReport {
  std::vector<SequenceMetrics> sequences;  // sorted by name
  double j_mean = 0, j_recall = 0, j_decay = 0, f_mean = 0;
  std::string config_fingerprint;
  std::uint64_t seed = 0;

  void write_csv(std::ostream& os) const;
  void print_table(std::ostream& os) const;
};

struct PredictedSequence {
  std::string name;
  std::vector<BinaryMask> masks;     // predicted masks for the scored frames
  std::vector<BinaryMask> gt_masks;  // ground truth for the same frames
};

/// Scores every sequence; throws ShapeError naming the sequence when
/// prediction and ground truth lengths or sizes disagree. `tol` < 0 picks
/// default_boundary_tolerance.
MetricsReport evaluate_run(std::vector<PredictedSequence> runs, int tol = -1);

}  // namespace onavos
