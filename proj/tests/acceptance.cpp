// Acceptance suite: one PASS/FAIL line per criterion, numbers alongside.
//
//   acceptance [--only N[,M...]] [--jobs J] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "onavos/config.hpp"
#include "onavos/errors.hpp"
#include "onavos/harness.hpp"
#include "onavos/metrics.hpp"
#include "onavos/optim.hpp"
#include "test_util.hpp"

using namespace onavos;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_jobs = 1;
fs::path g_work;

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ExperimentConfig toy_profile() { return ExperimentConfig::load(fs::path(ONAVOS_SOURCE_DIR) / "configs" / "toy.cfg"); }

double mean_miou(const std::vector<SequenceResult>& results) {
  double total = 0;
  for (const auto& r : results) total += std::accumulate(r.ious.begin(), r.ious.end(), 0.0) / r.ious.size();
  return 100.0 * total / static_cast<double>(results.size());
}

// --- 1: gradients ------------------------------------------------------------

Outcome gradients() {
  using testutil::gradient_check;
  using testutil::probe;
  using testutil::random_tensor;
  Rng rng(101);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& op, double err) { worst[op] = std::max(worst[op], err); };
  // Inputs near a relu kink make central differences meaningless; keep
  // them at least 1e-3 away from zero.
  auto off_kink = [](ad::Tensor& t) {
    for (double& v : t.mutable_values())
      if (std::abs(v) < 1e-3) v = v < 0 ? -0.5 : 0.5;
  };

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 1 + rng.below(3), k = 1 + rng.below(3), h = 3 + rng.below(6), w = 3 + rng.below(6);
    const std::size_t ks = 1 + 2 * rng.below(2);
    const int stride = 1 + static_cast<int>(rng.below(2)), dil = 1 + static_cast<int>(rng.below(2));
    std::vector<ad::Tensor> conv{random_tensor(rng, {1, c, h, w}), random_tensor(rng, {k, c, ks, ks}),
                                 random_tensor(rng, {k})};
    note("conv2d", gradient_check(
                       [&](ad::Tape* t) { return probe(t, ad::conv2d(t, conv[0], conv[1], conv[2], stride, dil), 1); },
                       conv));

    const int factor = 1 + static_cast<int>(rng.below(4));
    std::vector<ad::Tensor> up{random_tensor(rng, {1, c, 1 + rng.below(4), 1 + rng.below(4)})};
    note("bilinear_upsample",
         gradient_check([&](ad::Tape* t) { return probe(t, ad::bilinear_upsample(t, up[0], factor), 2); }, up));

    std::vector<ad::Tensor> x{random_tensor(rng, {2, h, w}, -2, 2)};
    off_kink(x[0]);
    note("relu", gradient_check([&](ad::Tape* t) { return probe(t, ad::relu(t, x[0]), 3); }, x));
    note("sigmoid", gradient_check([&](ad::Tape* t) { return probe(t, ad::sigmoid(t, x[0]), 4); }, x));
    const double s = rng.uniform(-3, 3);
    note("scale", gradient_check([&](ad::Tape* t) { return probe(t, ad::scale(t, x[0], s), 5); }, x));
    std::vector<ad::Tensor> ab{random_tensor(rng, {2, h, w}), random_tensor(rng, {1, w})};
    note("add", gradient_check([&](ad::Tape* t) { return probe(t, ad::add(t, ab[0], ab[1]), 6); }, ab));
    note("sum", gradient_check([&](ad::Tape* t) { return probe(t, ad::scale(t, ad::sum(t, x[0]), 0.1), 8); }, x));
    std::vector<ad::Tensor> sm{random_tensor(rng, {1, 2, h, w}, -3, 3)};
    note("softmax2", gradient_check([&](ad::Tape* t) { return probe(t, ad::softmax2(t, sm[0]), 7); }, sm));

    LabelMap labels(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < h * w; ++i)
      labels.set(static_cast<int>(i / w), static_cast<int>(i % w), static_cast<Label>(rng.below(3)));
    labels.set(0, 0, Label::positive);
    const LossConfig lc{rng.uniform(0.2, 1.0), rng.uniform(0.5, 2.0)};
    note("bootstrapped_ce", gradient_check([&](ad::Tape* t) { return bootstrapped_ce(t, sm[0], labels, lc); }, sm));
  }

  // Whole network: loss gradient for every parameter.
  auto network_error = [&](const ArchConfig& arch, std::uint64_t seed) {
    auto net = init_network(arch, seed);
    Rng r(seed + 1);
    for (double& v : net.param("head.weight").value) v = r.uniform(-0.5, 0.5);
    for (double& v : net.param("head.bias").value) v = r.uniform(-0.5, 0.5);
    // Zero biases put dead channels exactly on a relu kink; move them off.
    for (auto& p : net.params)
      if (p.name.ends_with(".bias") && p.name != "head.bias")
        for (double& v : p.value) v = r.uniform(-0.2, 0.2);
    Image img(16, 16);
    for (double& v : img.data) v = r.uniform();
    const auto input = image_to_input(img);
    LabelMap labels(2, 2);
    for (int i = 0; i < 4; ++i) labels.set(i / 2, i % 2, static_cast<Label>(r.below(2)));
    const LossConfig lc{1.0, 1.0};
    ad::Tape tape;
    const auto pass = forward(net, input, &tape, false);
    ad::backward(tape, bootstrapped_ce(&tape, pass.logits, labels, lc));
    auto loss = [&] { return bootstrapped_ce(nullptr, forward(net, input, nullptr, false).logits, labels, lc).item(); };
    double err = 0;
    for (std::size_t k = 0; k < net.params.size(); ++k) {
      auto& vals = net.params[k].value;
      std::vector<double> numeric(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double old = vals[i];
        vals[i] = old + 1e-5;
        const double fp = loss();
        vals[i] = old - 1e-5;
        const double fm = loss();
        vals[i] = old;
        numeric[i] = (fp - fm) / 2e-5;
      }
      err = std::max(err, testutil::relative_error(pass.leaves[k].grad(), numeric));
    }
    return err;
  };
  for (int trial = 0; trial < 20; ++trial) {
    ArchConfig arch;
    arch.widths.clear();
    for (int i = 0; i < 4; ++i) arch.widths.push_back(2 + static_cast<int>(rng.below(4)));
    arch.dilations.assign(1 + rng.below(2), 0);
    for (int& d : arch.dilations) d = 1 + static_cast<int>(rng.below(3));
    arch.use_residual_block = rng.bernoulli(0.5);
    arch.init = WeightInit::he;
    note("network (small)", network_error(arch, 200 + trial));
  }
  ArchConfig full;
  full.init = WeightInit::he;
  note("network (default arch)", network_error(full, 300));

  bool ok = true;
  std::string detail;
  for (const auto& [op, err] : worst) {
    ok = ok && err < 1e-4;
    detail += (detail.empty() ? "" : ", ") + op + " " + fmt("%.1e", err);
  }
  return {ok, "max relative error: " + detail};
}

// --- 2: morphology -----------------------------------------------------------

Outcome morphology() {
  Rng rng(202);
  int erode_mismatch = 0;
  double edt_err = 0;
  bool inf_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = testutil::random_mask(rng, 64, 64, trial < 50 ? 0.9 : 0.01 + 0.004 * (trial - 50));
    const int size = 1 + 2 * static_cast<int>(rng.below(8));
    const int r = size / 2;
    const auto e = erode(m, size);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        bool all = true;
        for (int dy = -r; dy <= r && all; ++dy)
          for (int dx = -r; dx <= r && all; ++dx) {
            const int yy = y + dy, xx = x + dx;
            all = yy >= 0 && yy < 64 && xx >= 0 && xx < 64 && m(yy, xx);
          }
        erode_mismatch += e(y, x) != all;
      }
    }
    std::vector<std::pair<int, int>> fg;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (m(y, x)) fg.emplace_back(y, x);
    const auto dt = distance_transform(m);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        double best = kInfinity;
        for (const auto& [v, u] : fg) best = std::min(best, std::hypot(double(y - v), double(x - u)));
        if (std::isinf(best)) {
          inf_ok = inf_ok && std::isinf(dt(y, x));
        } else {
          edt_err = std::max(edt_err, std::abs(dt(y, x) - best));
        }
      }
    }
  }
  return {erode_mismatch == 0 && edt_err <= 1e-9 && inf_ok,
          "100 masks 64x64: erode mismatches " + std::to_string(erode_mismatch) + ", max EDT error " +
              fmt("%.1e", edt_err)};
}

// --- 3: bootstrapped CE ------------------------------------------------------

Outcome bootstrapping() {
  Rng rng(303);
  double mean_err = 0, topk_err = 0;
  int index_mismatch = 0, dont_care_leaks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 1 + static_cast<int>(rng.below(8)), w = 1 + static_cast<int>(rng.below(8));
    LabelMap labels(h, w);
    for (int i = 0; i < h * w; ++i) labels.set(i / w, i % w, static_cast<Label>(rng.below(3)));
    labels.set(static_cast<int>(rng.below(h)), static_cast<int>(rng.below(w)), Label::negative);
    ad::Tensor logits = testutil::random_tensor(rng, {1, 2, std::size_t(h), std::size_t(w)}, -5, 5);
    // Coarse logits make exact ties common.
    if (trial % 3 == 0)
      for (double& v : logits.mutable_values()) v = std::round(v);

    std::vector<std::pair<double, std::size_t>> pool;
    double total = 0;
    for (int i = 0; i < h * w; ++i) {
      if (labels.at(i) == Label::dont_care) continue;
      const double l0 = logits.values()[i], l1 = logits.values()[h * w + i];
      const double m = std::max(l0, l1);
      const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
      const double ce = lse - (labels.at(i) == Label::positive ? l1 : l0);
      pool.emplace_back(ce, static_cast<std::size_t>(i));
      total += ce;
    }
    mean_err = std::max(mean_err, std::abs(bootstrapped_ce(nullptr, logits, labels, {1.0, 1.0}).item() -
                                           total / static_cast<double>(pool.size())));

    const double frac = rng.uniform(0.01, 1.0);
    const auto k = static_cast<std::size_t>(std::ceil(frac * pool.size() - 1e-9 * frac * pool.size()));
    auto sorted = pool;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    sorted.resize(std::max<std::size_t>(k, 1));
    std::vector<std::size_t> oracle;
    double top = 0;
    for (const auto& [ce, i] : sorted) {
      oracle.push_back(i);
      top += ce;
    }
    std::vector<double> values = per_pixel_cross_entropy(logits, labels);
    std::vector<std::size_t> candidates;
    for (const auto& p : pool) candidates.push_back(p.second);
    // The two CE formulas may differ in the last bit, which reorders exact
    // ties; compare the selected losses rather than the indices.
    auto picked = hardest_indices(values, candidates, oracle.size());
    std::vector<double> got, want;
    for (const auto i : picked) got.push_back(values[i]);
    for (const auto& [ce, i] : sorted) want.push_back(ce);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    for (std::size_t i = 0; i < want.size(); ++i)
      if (got.size() != want.size() || std::abs(got[i] - want[i]) > 1e-12) {
        ++index_mismatch;
        break;
      }

    ad::Tape tape;
    const auto loss = bootstrapped_ce(&tape, logits, labels, {frac, 1.0});
    topk_err = std::max(topk_err, std::abs(loss.item() - top / static_cast<double>(oracle.size())));
    ad::backward(tape, loss);
    const auto g = logits.grad();
    for (int i = 0; i < h * w; ++i) {
      if (labels.at(i) == Label::dont_care && (g[i] != 0.0 || g[h * w + i] != 0.0)) ++dont_care_leaks;
    }
    logits.zero_grad();
  }
  return {mean_err <= 1e-12 && topk_err <= 1e-12 && index_mismatch == 0 && dont_care_leaks == 0,
          "1000 sets: |full - mean CE| " + fmt("%.1e", mean_err) + ", |top-k - oracle| " + fmt("%.1e", topk_err) +
              ", selection mismatches " + std::to_string(index_mismatch) + ", dont_care gradients " +
              std::to_string(dont_care_leaks)};
}

// --- 4: adaptation loop fidelity ---------------------------------------------

// Posteriors scripted per frame (frames carry their index in the grey level);
// every training call raises all posteriors by 0.004 so re-forwarding after
// updates is observable.
class ScriptedModel : public Segmenter {
 public:
  std::map<int, std::vector<double>> base;
  int h = 0, w = 0, train_calls = 0;
  std::vector<std::pair<int, LabelMap>> current_labels;  // (frame, labels) of current-frame steps

  static int index_of(const Image& img) { return static_cast<int>(std::lround(img.data[0] * 100.0)) - 1; }

  ProbabilityMap posteriors(const Image& frame) override {
    auto v = base.at(index_of(frame));
    for (double& p : v) p = std::min(1.0, p + 0.004 * train_calls);
    return {h, w, v};
  }
  bool train_step(const Image& frame, const LabelMap& labels, double scale, double) override {
    ++train_calls;
    if (scale != 1.0) current_labels.emplace_back(index_of(frame), labels);
    return true;
  }
};

struct RefFrame {
  BinaryMask positives, negatives, lastmask;
  bool lost = false;
};

// The adaptation loop written out step by step with brute-force geometry.
std::vector<RefFrame> reference_algorithm(ScriptedModel& net, const VideoSequence& seq, const AdaptationConfig& cfg,
                                          std::vector<LabelMap>& current_labels) {
  const int h = seq.frames[0].height, w = seq.frames[0].width;
  const double d = cfg.d_rel * std::hypot(double(h), double(w));
  const int r = cfg.erosion_size / 2;
  std::vector<RefFrame> out;
  BinaryMask lastmask = seq.gt_masks[0];
  for (std::size_t t = 1; t < seq.size(); ++t) {
    RefFrame f;
    f.positives = BinaryMask(h, w);
    f.negatives = BinaryMask(h, w);
    // lastmask <- erosion(lastmask)
    BinaryMask eroded(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bool all = true;
        for (int dy = -r; dy <= r && all; ++dy)
          for (int dx = -r; dx <= r && all; ++dx)
            all = y + dy >= 0 && y + dy < h && x + dx >= 0 && x + dx < w && lastmask(y + dy, x + dx);
        eroded.set(y, x, all);
      }
    // posteriors <- N(frame t)
    auto post = net.posteriors(seq.frames[t]);
    if (eroded.count() == 0) {
      f.lost = true;
      for (int i = 0; i < h * w; ++i) f.lastmask = BinaryMask(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) f.lastmask.set(y, x, post(y, x) > 0.5);
    } else {
      // negatives <- dtransform > d
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double best = kInfinity;
          for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u)
              if (eroded(v, u)) best = std::min(best, std::hypot(double(y - v), double(x - u)));
          f.negatives.set(y, x, best > d);
        }
      // positives <- (posteriors > alpha) \ negatives
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) f.positives.set(y, x, post(y, x) > cfg.alpha && !f.negatives(y, x));
      LabelMap labels(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (f.positives(y, x)) labels.set(y, x, Label::positive);
          if (f.negatives(y, x)) labels.set(y, x, Label::negative);
        }
      // interleaved: n_curr steps on frame t, the rest on frame 1
      for (int i = 1; i <= cfg.n_online; ++i) {
        const bool current = (i * cfg.n_curr) / cfg.n_online != ((i - 1) * cfg.n_curr) / cfg.n_online;
        if (current) current_labels.push_back(labels);
        ++net.train_calls;
      }
      post = net.posteriors(seq.frames[t]);
      // lastmask <- (posteriors > 0.5) \ negatives
      f.lastmask = BinaryMask(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) f.lastmask.set(y, x, post(y, x) > 0.5 && !f.negatives(y, x));
    }
    lastmask = f.lastmask;
    out.push_back(f);
  }
  return out;
}

Outcome algorithm_fidelity() {
  const int h = 24, w = 24;
  auto blob = [&](double cy, double cx, double rad, double peak, std::vector<double>& v) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dd = std::hypot(y - cy, x - cx);
        if (dd < rad) v[y * w + x] = std::max(v[y * w + x], peak * (1.0 - 0.3 * dd / rad));
      }
  };
  auto make = [&](bool with_loss) {
    ScriptedModel m;
    m.h = h;
    m.w = w;
    for (int t = 0; t < 3; ++t) m.base[t] = std::vector<double>(h * w, 0.05);
    blob(8, 8, 6, 0.97, m.base[1]);
    blob(20, 20, 3, 0.9, m.base[1]);  // far false positive: a hard negative
    blob(9, 10, 6, 0.95, m.base[2]);
    blob(14, 15, 2.5, 0.7, m.base[2]);  // near, mid-confidence: dont_care
    if (with_loss) m.base[1] = std::vector<double>(h * w, 0.05), blob(8, 8, 1.2, 0.99, m.base[1]);
    return m;
  };
  VideoSequence seq;
  seq.name = "micro";
  for (int t = 0; t < 3; ++t) {
    seq.frames.emplace_back(h, w, 0.01 * (t + 1));
    seq.distractor_masks.emplace_back(h, w);
    BinaryMask gt(h, w);
    if (t == 0)
      for (int y = 3; y < 13; ++y)
        for (int x = 3; x < 13; ++x) gt.set(y, x);
    seq.gt_masks.push_back(gt);
  }
  AdaptationConfig cfg;
  cfg.erosion_size = 3;
  cfg.d_rel = 6.0 / std::hypot(double(h), double(w));
  cfg.alpha = 0.8;
  cfg.n_online = 5;
  cfg.n_curr = 2;

  int frames = 0, mismatches = 0;
  for (const bool with_loss : {false, true}) {
    auto engine_model = make(with_loss);
    auto ref_model = make(with_loss);
    const auto res = run_sequence(engine_model, seq, cfg, {true, true}, Rng(4));
    std::vector<LabelMap> ref_labels;
    const auto ref = reference_algorithm(ref_model, seq, cfg, ref_labels);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ++frames;
      const auto& tr = res.trace[i];
      if (tr.lost != ref[i].lost || tr.lastmask.bits() != ref[i].lastmask.bits() || res.masks[i] != ref[i].lastmask)
        ++mismatches;
      // A lost frame selects nothing.
      const BinaryMask none(h, w);
      const auto& pos = ref[i].lost ? none : ref[i].positives;
      const auto& neg = ref[i].lost ? none : ref[i].negatives;
      if (tr.positives.bits() != pos.bits() || tr.negatives.bits() != neg.bits()) ++mismatches;
    }
    if (engine_model.current_labels.size() != ref_labels.size()) ++mismatches;
    for (std::size_t i = 0; i < std::min(ref_labels.size(), engine_model.current_labels.size()); ++i)
      if (!(engine_model.current_labels[i].second == ref_labels[i])) ++mismatches;
    if (engine_model.train_calls != ref_model.train_calls) ++mismatches;
  }
  return {mismatches == 0 && frames == 4, std::to_string(frames) + " scripted frames (one lost), " +
                                              std::to_string(mismatches) + " mask/label mismatches"};
}

// --- 5-8: benchmark runs ------------------------------------------------------

struct Bench {
  ExperimentConfig cfg;
  Dataset data;
  std::unique_ptr<Pipeline> pipeline;
};

Bench& drift_bench() {
  static Bench b = [] {
    Bench x;
    x.cfg = toy_profile();
    x.data = build_dataset(x.cfg);
    x.pipeline = std::make_unique<Pipeline>(x.data, g_jobs, &std::cerr, g_work / "checkpoints");
    return x;
  }();
  return b;
}

Outcome ablation_ordering() {
  auto& b = drift_bench();
  const auto variants = resolve_variants(b.cfg, std::vector<std::string>{"no_adaptation", "full_adaptation",
                                                                         "no_first_frame"});
  std::map<std::string, double> m;
  for (const auto& v : variants) {
    auto c = b.cfg;
    v.apply(c);
    m[v.name] = mean_miou(b.pipeline->run(c).results);
  }
  const double none = m["no_adaptation"], full = m["full_adaptation"], nff = m["no_first_frame"];
  return {full >= none + 2.0 && nff <= none - 2.0,
          std::to_string(b.data.eval.size()) + " drift sequences: full " + fmt("%.2f", full) + ", none " +
              fmt("%.2f", none) + ", no first frame " + fmt("%.2f", nff) + " (need full >= none + 2, nff <= none - 2)"};
}

Outcome distractor_suppression() {
  auto cfg = toy_profile();
  cfg.data.eval_scenarios = {ScenarioKind::distractor_entry};
  cfg.data.eval_sequences = 10;
  const auto data = build_dataset(cfg);
  Pipeline p(data, g_jobs, &std::cerr, g_work / "checkpoints");
  auto off = cfg;
  off.stages.online_adapt = false;
  const auto base = p.run(off).results;
  const auto adapted = p.run(cfg).results;
  long fp_base = 0, fp_adapted = 0;
  for (std::size_t i = 0; i < data.eval.size(); ++i) {
    for (std::size_t t = 1; t < data.eval[i].size(); ++t) {
      const auto& d = data.eval[i].distractor_masks[t];
      fp_base += static_cast<long>(base[i].masks[t - 1].intersect(d).count());
      fp_adapted += static_cast<long>(adapted[i].masks[t - 1].intersect(d).count());
    }
  }
  const double ratio = fp_base == 0 ? (fp_adapted == 0 ? 0.0 : kInfinity) : double(fp_adapted) / double(fp_base);
  return {fp_base > 0 && ratio <= 0.5, std::to_string(data.eval.size()) + " distractor sequences: FP pixels on distractors " +
                                           std::to_string(fp_adapted) + " adapted vs " + std::to_string(fp_base) +
                                           " baseline (ratio " + fmt("%.3f", ratio) + ", need <= 0.5)"};
}

Outcome lost_object() {
  auto cfg = toy_profile();
  cfg.data.eval_scenarios = {ScenarioKind::occlusion};
  cfg.data.eval_sequences = 10;
  const auto data = build_dataset(cfg);
  Pipeline p(data, g_jobs, &std::cerr, g_work / "checkpoints");
  const auto out = p.run(cfg, true);
  int lost_frames = 0, violations = 0, resumed = 0, with_loss = 0;
  for (const auto& r : out.results) {
    int last_lost = -1;
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
      if (r.trace[t].eroded.empty()) {
        ++lost_frames;
        last_lost = static_cast<int>(t);
        if (r.update_counter[t] != 0) ++violations;
      }
    }
    if (last_lost < 0) continue;
    ++with_loss;
    for (std::size_t t = last_lost + 1; t < r.trace.size(); ++t) {
      if (r.update_counter[t] > 0) {
        ++resumed;
        break;
      }
    }
  }
  return {with_loss > 0 && violations == 0 && resumed == with_loss,
          std::to_string(lost_frames) + " lost frames in " + std::to_string(with_loss) + "/" +
              std::to_string(out.results.size()) + " occlusion sequences, " + std::to_string(violations) +
              " with updates; adaptation resumed in " + std::to_string(resumed)};
}

Outcome objectness_ablation() {
  auto& b = drift_bench();
  auto one_shot_only = b.cfg;
  one_shot_only.stages.online_adapt = false;
  const double full = mean_miou(b.pipeline->run(one_shot_only).results);
  auto no_obj = one_shot_only;
  no_obj.stages.pretrain_objectness = false;
  const auto data = build_dataset(no_obj);
  Pipeline p(data, g_jobs, &std::cerr, g_work / "checkpoints");
  const double without = mean_miou(p.run(no_obj).results);
  return {without <= full - 2.0, "one-shot only: full pretraining " + fmt("%.2f", full) +
                                     ", without objectness " + fmt("%.2f", without) + " (need a drop >= 2)"};
}

// --- 9: determinism ------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

Outcome determinism() {
  auto cfg = toy_profile();
  // Same stages and settings, smaller data so two cold runs stay cheap.
  cfg.data.eval_sequences = 2;
  cfg.data.train_sequences = 2;
  cfg.data.objectness_images = 20;
  cfg.data.frames = 10;
  const auto a = g_work / "determinism_a", b = g_work / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run_experiment(cfg, a, 1);
  run_experiment(cfg, b, std::max(2, g_jobs));
  const auto ta = read_tree(a), tb = read_tree(b);
  int csv = 0, ckpt = 0, differing = 0;
  for (const auto& [name, bytes] : ta) {
    csv += name.ends_with(".csv");
    ckpt += name.ends_with(".onav");
    const auto it = tb.find(name);
    if (it == tb.end() || it->second != bytes) ++differing;
  }
  const bool ok = ta.size() == tb.size() && differing == 0 && csv >= 2 && ckpt >= 4;
  return {ok, std::to_string(csv) + " CSV reports and " + std::to_string(ckpt) + " checkpoints compared (1 vs " +
                  std::to_string(std::max(2, g_jobs)) + " threads), " + std::to_string(differing) + " differ"};
}

// --- 10: metrics ---------------------------------------------------------------

BinaryMask rect(int h, int w, int y0, int x0, int y1, int x1) {
  BinaryMask m(h, w);
  for (int y = std::max(0, y0); y < std::min(h, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(w, x1); ++x) m.set(y, x);
  return m;
}

// Boundary F by exhaustive pixel matching.
double oracle_f(const BinaryMask& p, const BinaryMask& g, int tol) {
  auto edge = [](const BinaryMask& m) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x) {
        if (!m(y, x)) continue;
        bool inner = true;
        for (const auto& [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
          const int yy = y + dy, xx = x + dx;
          inner = inner && yy >= 0 && yy < m.height() && xx >= 0 && xx < m.width() && m(yy, xx);
        }
        if (!inner) pts.emplace_back(y, x);
      }
    return pts;
  };
  const auto a = edge(p), b = edge(g);
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  auto frac = [tol](const auto& from, const auto& to) {
    double n = 0;
    for (const auto& q : from)
      for (const auto& s : to)
        if (std::abs(q.first - s.first) <= tol && std::abs(q.second - s.second) <= tol) {
          ++n;
          break;
        }
    return n / from.size();
  };
  const double pr = frac(a, b), rc = frac(b, a);
  return pr + rc == 0 ? 0.0 : 2 * pr * rc / (pr + rc);
}

Outcome metrics_suite() {
  int failures = 0;
  auto close = [&](double got, double want) {
    if (std::abs(got - want) > 1e-12) ++failures;
  };
  // j_stats table
  auto s = j_stats(std::vector<double>(8, 0.8));
  close(s.mean, 0.8);
  close(s.recall, 1.0);
  close(s.decay, 0.0);
  close(j_stats(std::vector<double>(8, 0.4)).recall, 0.0);
  close(j_stats(std::vector<double>{0.9, 0.8, 0.7, 0.6}).decay, 0.3);
  // boundary_f table
  const auto sq = rect(20, 20, 5, 5, 15, 15), shifted = rect(20, 20, 5, 6, 15, 16);
  close(boundary_f(sq, sq, 0), 1.0);
  close(boundary_f(BinaryMask(20, 20), sq, 1), 0.0);
  close(boundary_f(sq, shifted, 1), 1.0);
  close(boundary_f(sq, shifted, 0), oracle_f(sq, shifted, 0));
  const int table_failures = failures;

  // 20 mixed pairs: empty/full/identical/shifted/nested/disjoint/random.
  Rng rng(1010);
  std::vector<std::pair<BinaryMask, BinaryMask>> pairs = {
      {BinaryMask(16, 16), BinaryMask(16, 16)},
      {BinaryMask(16, 16), rect(16, 16, 2, 2, 6, 6)},
      {rect(16, 16, 2, 2, 6, 6), BinaryMask(16, 16)},
      {BinaryMask(16, 16, true), BinaryMask(16, 16, true)},
      {BinaryMask(16, 16, true), rect(16, 16, 4, 4, 12, 12)},
      {rect(16, 16, 3, 3, 9, 9), rect(16, 16, 3, 3, 9, 9)},
      {rect(16, 16, 3, 3, 9, 9), rect(16, 16, 4, 4, 10, 10)},
      {rect(16, 16, 3, 3, 9, 9), rect(16, 16, 6, 6, 12, 12)},
      {rect(16, 16, 0, 0, 4, 4), rect(16, 16, 12, 12, 16, 16)},
      {rect(16, 16, 2, 2, 14, 14), rect(16, 16, 5, 5, 9, 9)},
      {rect(16, 16, 7, 0, 8, 16), rect(16, 16, 0, 7, 16, 8)},
      {rect(16, 16, 5, 5, 6, 6), rect(16, 16, 5, 5, 6, 6)},
      {rect(16, 16, 5, 5, 6, 6), rect(16, 16, 6, 6, 7, 7)},
  };
  while (pairs.size() < 20) pairs.emplace_back(testutil::random_mask(rng, 16, 16, 0.5), testutil::random_mask(rng, 16, 16, 0.4));
  for (const auto& [p, g] : pairs) {
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      inter += p.at(i) && g.at(i);
      uni += p.at(i) || g.at(i);
    }
    close(iou(p, g), uni == 0 ? 1.0 : inter / uni);
    for (const int tol : {0, 1, 2}) {
      close(boundary_f(p, g, tol), oracle_f(p, g, tol));
      close(boundary_f(p, g, tol), boundary_f(g, p, tol));
    }
  }
  return {failures == 0, "example tables " + std::to_string(table_failures) + " failures; " +
                             std::to_string(pairs.size()) + " mask pairs, " + std::to_string(failures - table_failures) +
                             " failures"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  g_jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  g_work = fs::current_path() / "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--jobs" && i + 1 < argc) {
      g_jobs = std::max(1, std::stoi(argv[++i]));
    } else if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only N[,M...]] [--jobs J] [--work DIR]\n";
      return 2;
    }
  }
  // Start cold so every stage is computed by this binary.
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"morphology oracles", morphology},
      {"bootstrapped cross-entropy", bootstrapping},
      {"online adaptation loop fidelity", algorithm_fidelity},
      {"ablation ordering on the drift benchmark", ablation_ordering},
      {"distractor suppression", distractor_suppression},
      {"lost-object heuristic", lost_object},
      {"objectness pretraining ablation", objectness_ablation},
      {"determinism", determinism},
      {"metrics", metrics_suite},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
