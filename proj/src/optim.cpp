#include "onavos/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "onavos/errors.hpp"

namespace onavos {

void LossConfig::validate() const {
  if (!(hardest_fraction > 0.0 && hardest_fraction <= 1.0)) {
    throw ValueError("hardest_fraction must lie in (0, 1], got " + std::to_string(hardest_fraction));
  }
  if (!(loss_scale > 0.0)) throw ValueError("loss_scale must be > 0, got " + std::to_string(loss_scale));
}

namespace {

void check_logits(const ad::Tensor& logits, const LabelMap& labels) {
  if (logits.rank() != 4 || logits.dim(0) != 1 || logits.dim(1) != 2) {
    throw ShapeError("bootstrapped_ce: logits must be [1,2,h,w], got " + ad::shape_str(logits.shape()));
  }
  if (logits.dim(2) != static_cast<std::size_t>(labels.height()) ||
      logits.dim(3) != static_cast<std::size_t>(labels.width())) {
    throw ShapeError("bootstrapped_ce: logits " + ad::shape_str(logits.shape()) + " vs labels " +
                     std::to_string(labels.height()) + "x" + std::to_string(labels.width()));
  }
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

std::vector<double> per_pixel_cross_entropy(const ad::Tensor& logits, const LabelMap& labels) {
  check_logits(logits, labels);
  const std::size_t hw = logits.dim(2) * logits.dim(3);
  const double* x0 = logits.values().data();
  const double* x1 = x0 + hw;
  std::vector<double> ce(hw, 0.0);
  for (std::size_t i = 0; i < hw; ++i) {
    switch (labels.at(i)) {
      case Label::positive: ce[i] = softplus(x0[i] - x1[i]); break;
      case Label::negative: ce[i] = softplus(x1[i] - x0[i]); break;
      case Label::dont_care: break;
    }
  }
  return ce;
}

std::vector<std::size_t> hardest_indices(std::span<const double> values,
                                         std::span<const std::size_t> candidates, std::size_t k) {
  std::vector<std::size_t> order(candidates.begin(), candidates.end());
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

ad::Tensor bootstrapped_ce(ad::Tape* tape, const ad::Tensor& logits, const LabelMap& labels,
                           const LossConfig& cfg) {
  cfg.validate();
  const auto ce = per_pixel_cross_entropy(logits, labels);
  std::vector<std::size_t> labeled;
  labeled.reserve(ce.size());
  for (std::size_t i = 0; i < ce.size(); ++i) {
    if (labels.at(i) != Label::dont_care) labeled.push_back(i);
  }
  if (labeled.empty()) throw ValueError("bootstrapped_ce: no training signal (every pixel is dont_care)");

  auto selected = hardest_indices(ce, labeled, hardest_count(cfg.hardest_fraction, labeled.size()));
  // Sum in index order so the result does not depend on the selection order.
  std::sort(selected.begin(), selected.end());
  double total = 0.0;
  for (const auto i : selected) total += ce[i];
  const double weight = cfg.loss_scale / static_cast<double>(selected.size());

  ad::Tensor loss = ad::Tensor::scalar(weight * total);
  ad::check_finite(*loss.node(), "bootstrapped_ce");
  if (ad::should_record(tape, {&logits})) {
    tape->record(loss.node(), [selected = std::move(selected), weight, labels, in = logits.node(),
                               out = loss.node().get()] {
      auto& g = ad::accumulate_grad(*in);
      const std::size_t hw = in->value.size() / 2;
      const double go = out->grad[0] * weight;
      for (const auto i : selected) {
        const double x0 = in->value[i], x1 = in->value[hw + i];
        const double p1 = 1.0 / (1.0 + std::exp(x0 - x1));
        const double p0 = 1.0 - p1;
        const double t1 = labels.at(i) == Label::positive ? 1.0 : 0.0;
        g[i] += go * (p0 - (1.0 - t1));
        g[hw + i] += go * (p1 - t1);
      }
    });
  }
  return loss;
}

std::size_t hardest_count(double fraction, std::size_t n) {
  if (n == 0) return 0;
  // 0.1 * 30 is 3.0000000000000004 in binary; such noise must not round up.
  const double exact = fraction * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9 * exact));
  return std::clamp<std::size_t>(k, 1, n);
}

void adam_step(NetworkState& net, std::span<const std::vector<double>> grads, double lr, const AdamConfig& cfg) {
  if (grads.size() != net.params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(net.params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != net.params[i].value.size()) {
      throw ShapeError("adam_step: gradient for " + net.params[i].name + " has " +
                       std::to_string(grads[i].size()) + " values, parameter has " +
                       std::to_string(net.params[i].value.size()));
    }
  }
  ++net.step_count;
  const double t = static_cast<double>(net.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = net.params[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      p.adam_m[j] = cfg.beta1 * p.adam_m[j] + (1.0 - cfg.beta1) * g[j];
      p.adam_v[j] = cfg.beta2 * p.adam_v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = p.adam_m[j] / c1;
      const double vhat = p.adam_v[j] / c2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace onavos
