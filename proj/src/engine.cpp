#include "onavos/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "onavos/errors.hpp"

namespace onavos {

void AdaptationConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValueError("adapt.alpha must lie in (0, 1)");
  if (!(beta > 0.0)) throw ValueError("adapt.beta must be > 0");
  if (!(d_rel >= 0.0)) throw ValueError("adapt.d_rel must be >= 0");
  if (n_online < 0 || n_curr < 0 || n_curr > n_online) {
    throw ValueError("adapt: need 0 <= n_curr <= n_online (n_curr=" + std::to_string(n_curr) +
                     ", n_online=" + std::to_string(n_online) + ")");
  }
  if (!(online_lr >= 0.0) || !(oneshot_lr >= 0.0)) throw ValueError("adapt: learning rates must be >= 0");
  if (oneshot_steps < 0) throw ValueError("adapt.oneshot_steps must be >= 0");
  if (erosion_size < 1 || erosion_size % 2 == 0) throw ValueError("adapt.erosion_size must be odd and >= 1");
  if (!(hardest_fraction > 0.0 && hardest_fraction <= 1.0)) throw ValueError("hardest_fraction must lie in (0, 1]");
  if (tta_variants < 1) throw ValueError("adapt.tta_variants must be >= 1");
}

double AdaptationConfig::distance_threshold(int height, int width) const {
  return d_rel * std::hypot(static_cast<double>(height), static_cast<double>(width));
}

ad::Tensor Segmenter::posterior_tensor(const Image& frame) {
  const auto fg = posteriors(frame);
  const std::size_t hw = fg.values.size();
  std::vector<double> v(2 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    v[i] = 1.0 - fg.values[i];
    v[hw + i] = fg.values[i];
  }
  return ad::Tensor({1, 2, static_cast<std::size_t>(fg.height), static_cast<std::size_t>(fg.width)}, std::move(v));
}

std::optional<StepResult> sgd_step(NetworkState& net, const Image& frame, const LabelMap& labels,
                                   const LossConfig& loss_cfg, double lr) {
  if (labels.height() != frame.height || labels.width() != frame.width) {
    throw ShapeError("training labels " + std::to_string(labels.height()) + "x" + std::to_string(labels.width()) +
                     " do not match frame " + std::to_string(frame.height) + "x" + std::to_string(frame.width));
  }
  ad::Tape tape;
  auto pass = forward(net, image_to_input(frame), &tape, /*with_posteriors=*/false);
  const auto low = labels.downsample(static_cast<int>(pass.logits.dim(2)), static_cast<int>(pass.logits.dim(3)));
  if (low.labeled() == 0) return std::nullopt;
  const auto loss = bootstrapped_ce(&tape, pass.logits, low, loss_cfg);
  ad::backward(tape, loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(pass.leaves.size());
  for (const auto& leaf : pass.leaves) grads.push_back(leaf.grad());
  adam_step(net, grads, lr);
  return StepResult{loss.item()};
}

ProbabilityMap NetworkSegmenter::posteriors(const Image& frame) {
  return foreground_probability(predict_posteriors(net_, frame));
}

ad::Tensor NetworkSegmenter::posterior_tensor(const Image& frame) { return predict_posteriors(net_, frame); }

bool NetworkSegmenter::train_step(const Image& frame, const LabelMap& labels, double loss_scale, double lr) {
  const auto r = sgd_step(net_, frame, labels, LossConfig{hardest_fraction_, loss_scale}, lr);
  if (!r) return false;
  last_loss_ = r->loss;
  return true;
}

Targets build_targets(const ProbabilityMap& post, const BinaryMask& lastmask, const AdaptationConfig& cfg) {
  if (post.height != lastmask.height() || post.width != lastmask.width()) {
    throw ShapeError("build_targets: posteriors " + std::to_string(post.height) + "x" + std::to_string(post.width) +
                     " vs mask " + std::to_string(lastmask.height()) + "x" + std::to_string(lastmask.width()));
  }
  Targets t;
  t.eroded = erode(lastmask, cfg.erosion_size);
  const auto dt = distance_transform(t.eroded);
  t.negatives = select_negatives(dt, cfg.distance_threshold(post.height, post.width));
  t.positives = select_positives(post, cfg.alpha, t.negatives);
  const BinaryMask none(post.height, post.width);
  t.labels = LabelMap::from_masks(cfg.use_positives ? t.positives : none, cfg.use_negatives ? t.negatives : none);
  return t;
}

bool is_current_frame_step(int step, int n_online, int n_curr) {
  if (n_online <= 0) return false;
  const long a = static_cast<long>(step) * n_curr / n_online;
  const long b = static_cast<long>(step - 1) * n_curr / n_online;
  return a > b;
}

namespace {

void check_frame_mask(const Image& frame, const BinaryMask& mask, const char* op) {
  if (frame.height != mask.height() || frame.width != mask.width()) {
    throw ShapeError(std::string(op) + ": frame " + std::to_string(frame.height) + "x" + std::to_string(frame.width) +
                     " vs ground truth " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
}

// One augmented supervised step on the annotated first frame.
bool first_frame_step(Segmenter& model, const Image& frame1, const BinaryMask& gt1, double lr, Rng& rng) {
  const auto params = sample_augment(rng);
  const auto sample = augment(frame1, gt1, params);
  return model.train_step(sample.image, LabelMap::from_mask(sample.mask), 1.0, lr);
}

}  // namespace

void one_shot_finetune(Segmenter& model, const Image& frame1, const BinaryMask& gt1, const AdaptationConfig& cfg,
                       Rng& rng) {
  check_frame_mask(frame1, gt1, "one_shot_finetune");
  for (int s = 0; s < cfg.oneshot_steps; ++s) first_frame_step(model, frame1, gt1, cfg.oneshot_lr, rng);
}

NetworkState one_shot_finetune(const NetworkState& net, const Image& frame1, const BinaryMask& gt1,
                               const AdaptationConfig& cfg, Rng& rng) {
  NetworkState out = net;
  NetworkSegmenter model(out, cfg.hardest_fraction);
  one_shot_finetune(model, frame1, gt1, cfg, rng);
  return out;
}

AdaptOutcome adapt_on_frame(Segmenter& model, const Image& frame, const Image& frame1, const BinaryMask& gt1,
                            const LabelMap& labels, const AdaptationConfig& cfg, Rng& rng) {
  AdaptOutcome out;
  if (labels.labeled() == 0) {
    out.skipped = true;
    return out;
  }
  for (int i = 1; i <= cfg.n_online; ++i) {
    if (is_current_frame_step(i, cfg.n_online, cfg.n_curr)) {
      if (model.train_step(frame, labels, cfg.beta, cfg.online_lr)) {
        ++out.steps;
        ++out.current_steps;
      }
    } else if (first_frame_step(model, frame1, gt1, cfg.online_lr, rng)) {
      ++out.steps;
    }
  }
  return out;
}

SequenceResult run_sequence(Segmenter& model, const VideoSequence& seq, const AdaptationConfig& cfg,
                            const RunOptions& opts, Rng rng) {
  cfg.validate();
  seq.validate();
  if (seq.size() < 2) throw ValueError("run_sequence: " + seq.name + " needs at least 2 frames");
  const Image& frame1 = seq.frames[0];
  const BinaryMask& gt1 = seq.gt_masks[0];
  check_frame_mask(frame1, gt1, "run_sequence");

  SequenceResult result;
  result.name = seq.name;
  const int h = frame1.height, w = frame1.width;
  const BinaryMask no_negatives(h, w);
  BinaryMask lastmask = gt1;

  auto forward_fg = [&](const Image& frame, int t) {
    if (cfg.tta_targets) {
      return foreground_probability(tta_forward(model, frame, cfg.tta_variants, rng.split("tta").split(t).key()));
    }
    return model.posteriors(frame);
  };

  for (std::size_t t = 1; t < seq.size(); ++t) {
    const Image& frame = seq.frames[t];
    int updates = 0;
    FrameTrace tr;
    if (!opts.adapt) {
      lastmask = threshold_minus_negatives(model.posteriors(frame), no_negatives);
    } else {
      const auto post = forward_fg(frame, static_cast<int>(t));
      auto targets = build_targets(post, lastmask, cfg);
      tr.lost = targets.eroded.empty();
      if (tr.lost) {
        // Object assumed lost: no updates, and the raw prediction becomes
        // the next reference so it can be re-detected.
        result.lost_frames.push_back(static_cast<int>(t));
        lastmask = threshold_minus_negatives(post, no_negatives);
        targets.negatives = no_negatives;
        targets.positives = BinaryMask(h, w);
      } else {
        Rng step_rng = rng.split("online").split(static_cast<std::uint64_t>(t));
        const auto outcome = adapt_on_frame(model, frame, frame1, gt1, targets.labels, cfg, step_rng);
        if (outcome.skipped) ++result.skipped_frames;
        updates = outcome.steps;
        const auto post2 = updates > 0 ? model.posteriors(frame) : post;
        lastmask = threshold_minus_negatives(post2, targets.negatives);
      }
      if (opts.record_trace) {
        tr.eroded = std::move(targets.eroded);
        tr.positives = std::move(targets.positives);
        tr.negatives = std::move(targets.negatives);
      }
    }
    if (opts.record_trace) {
      tr.lastmask = lastmask;
      result.trace.push_back(std::move(tr));
    }
    result.masks.push_back(lastmask);
    result.ious.push_back(iou(lastmask, seq.gt_masks[t]));
    result.update_counter.push_back(updates);
  }
  return result;
}

// ---------------------------------------------------------------------------

ad::Tensor tta_forward(Segmenter& model, const Image& frame, int n, std::uint64_t seed) {
  if (n < 1) throw ValueError("tta_forward: need at least one variant");
  const int h = frame.height, w = frame.width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  ad::Tensor base = model.posterior_tensor(frame);
  if (n == 1) return base;

  std::vector<double> acc(base.values().begin(), base.values().end());
  std::vector<double> weight(hw, 1.0);
  Rng rng(seed);
  for (int v = 1; v < n; ++v) {
    const auto p = sample_augment(rng);
    const auto post = model.posterior_tensor(augment_image(frame, p));
    const double* pv = post.values().data();
    for (int y = 0; y < h; ++y) {
      // Where original pixel (y, x) landed in the augmented frame.
      const double ay = zoom_source(y, h, 1.0 / p.scale);
      if (ay < -0.5 || ay > h - 0.5) continue;
      const double cy = std::clamp(ay, 0.0, h - 1.0);
      const int y0 = static_cast<int>(cy);
      const int y1 = std::min(y0 + 1, h - 1);
      const double ty = cy - y0;
      for (int x = 0; x < w; ++x) {
        double ax = zoom_source(x, w, 1.0 / p.scale);
        if (ax < -0.5 || ax > w - 0.5) continue;
        if (p.flip) ax = (w - 1) - ax;
        const double cx = std::clamp(ax, 0.0, w - 1.0);
        const int x0 = static_cast<int>(cx);
        const int x1 = std::min(x0 + 1, w - 1);
        const double tx = cx - x0;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        for (int c = 0; c < 2; ++c) {
          const double* plane = pv + c * hw;
          const double top = plane[y0 * w + x0] * (1 - tx) + plane[y0 * w + x1] * tx;
          const double bot = plane[y1 * w + x0] * (1 - tx) + plane[y1 * w + x1] * tx;
          acc[c * hw + i] += top * (1 - ty) + bot * ty;
        }
        weight[i] += 1.0;
      }
    }
  }
  for (std::size_t i = 0; i < hw; ++i) {
    acc[i] /= weight[i];
    acc[hw + i] /= weight[i];
  }
  return ad::Tensor(base.shape(), std::move(acc));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

template <typename GetSample>
EpochLosses train_epochs(NetworkState& net, std::size_t count, const TrainConfig& cfg, Rng rng, GetSample get) {
  if (count == 0) throw ValueError("pretraining dataset is empty");
  EpochLosses losses;
  const LossConfig loss_cfg{cfg.hardest_fraction, 1.0};
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng epoch_rng = rng.split(static_cast<std::uint64_t>(e));
    Rng order_rng = epoch_rng.split("order");
    Rng aug_rng = epoch_rng.split("augment");
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto idx : shuffled(count, order_rng)) {
      const auto& [image, mask] = get(idx);
      std::optional<StepResult> r;
      if (cfg.augment) {
        const auto s = augment(image, mask, sample_augment(aug_rng));
        r = sgd_step(net, s.image, LabelMap::from_mask(s.mask), loss_cfg, cfg.lr);
      } else {
        r = sgd_step(net, image, LabelMap::from_mask(mask), loss_cfg, cfg.lr);
      }
      if (r) {
        total += r->loss;
        ++steps;
      }
    }
    losses.push_back(steps ? total / static_cast<double>(steps) : 0.0);
  }
  return losses;
}

}  // namespace

EpochLosses pretrain_objectness(NetworkState& net, const std::vector<LabeledImage>& data, const TrainConfig& cfg,
                                Rng rng) {
  return train_epochs(net, data.size(), cfg, rng, [&](std::size_t i) {
    return std::pair<const Image&, const BinaryMask&>(data[i].image, data[i].mask);
  });
}

EpochLosses pretrain_domain(NetworkState& net, const std::vector<VideoSequence>& sequences, const TrainConfig& cfg,
                            Rng rng) {
  std::vector<std::pair<std::size_t, std::size_t>> frames;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    sequences[s].validate();
    for (std::size_t t = 0; t < sequences[s].size(); ++t) frames.emplace_back(s, t);
  }
  return train_epochs(net, frames.size(), cfg, rng, [&](std::size_t i) {
    const auto [s, t] = frames[i];
    return std::pair<const Image&, const BinaryMask&>(sequences[s].frames[t], sequences[s].gt_masks[t]);
  });
}

double dataset_loss(const NetworkState& net, const std::vector<LabeledImage>& data, double hardest_fraction) {
  if (data.empty()) throw ValueError("dataset_loss: empty dataset");
  double total = 0.0;
  for (const auto& s : data) {
    const auto pass = forward(net, image_to_input(s.image), nullptr, false);
    const auto labels = LabelMap::from_mask(s.mask).downsample(static_cast<int>(pass.logits.dim(2)),
                                                                static_cast<int>(pass.logits.dim(3)));
    total += bootstrapped_ce(nullptr, pass.logits, labels, LossConfig{hardest_fraction, 1.0}).item();
  }
  return total / static_cast<double>(data.size());
}

}  // namespace onavos
