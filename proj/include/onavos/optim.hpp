#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "onavos/autodiff.hpp"
#include "onavos/mask.hpp"
#include "onavos/segnet.hpp"

namespace onavos {

struct LossConfig {
  double hardest_fraction = 0.25;
  double loss_scale = 1.0;

  void validate() const;
};

/// Per-pixel cross-entropy of the two-class softmax of `logits` [1,2,h,w]
/// against `labels`; dont_care pixels report 0.
std::vector<double> per_pixel_cross_entropy(const ad::Tensor& logits, const LabelMap& labels);

/// Indices of the k largest values among `candidates`, ties broken by the
/// smaller index first.
std::vector<std::size_t> hardest_indices(std::span<const double> values,
                                         std::span<const std::size_t> candidates, std::size_t k);

/// ceil(fraction * n), clamped to [1, n]; rounding noise in the product
/// does not push k up by one.
std::size_t hardest_count(double fraction, std::size_t n);

/// loss_scale * mean of the ceil(hardest_fraction * |labeled|) largest
/// per-pixel cross-entropies over non-dont_care pixels. Only the selected
/// pixels receive gradient. Throws ValueError if every pixel is dont_care.
ad::Tensor bootstrapped_ce(ad::Tape* tape, const ad::Tensor& logits, const LabelMap& labels,
                           const LossConfig& cfg);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter; `grads` follows
/// net.params order. Increments net.step_count.
void adam_step(NetworkState& net, std::span<const std::vector<double>> grads, double lr,
               const AdamConfig& cfg = {});

}  // namespace onavos
