#include "onavos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "onavos/errors.hpp"

namespace onavos {

JStats j_stats(std::span<const double> ious) {
  if (ious.empty()) throw ValueError("j_stats: empty IoU list");
  const std::size_t n = ious.size();
  JStats s;
  double total = 0.0;
  std::size_t hits = 0;
  for (const double v : ious) {
    total += v;
    hits += v > 0.5;
  }
  s.mean = total / static_cast<double>(n);
  s.recall = static_cast<double>(hits) / static_cast<double>(n);
  const std::size_t q = (n + 3) / 4;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    first += ious[i];
    last += ious[n - q + i];
  }
  s.decay = (first - last) / static_cast<double>(q);
  return s;
}

BinaryMask boundary(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || !mask(y - 1, x) || !mask(y + 1, x) ||
                        !mask(y, x - 1) || !mask(y, x + 1);
      if (edge) out.set(y, x, true);
    }
  }
  return out;
}

int default_boundary_tolerance(int height, int width) {
  return static_cast<int>(std::ceil(0.01 * std::hypot(static_cast<double>(height), static_cast<double>(width))));
}

namespace {

// Chebyshev dilation by `tol` via separable running windows.
BinaryMask dilate_square(const BinaryMask& m, int tol) {
  if (tol <= 0) return m;
  const int h = m.height(), w = m.width();
  std::vector<std::uint8_t> rows(m.size(), 0), out(m.size(), 0);
  for (int y = 0; y < h; ++y) {
    int last = -1000000;
    std::vector<int> near(w, 1000000);
    for (int x = 0; x < w; ++x) {
      if (m(y, x)) last = x;
      near[x] = x - last;
    }
    last = 1000000;
    for (int x = w - 1; x >= 0; --x) {
      if (m(y, x)) last = x;
      near[x] = std::min(near[x], last - x);
      rows[static_cast<std::size_t>(y) * w + x] = near[x] <= tol;
    }
  }
  for (int x = 0; x < w; ++x) {
    int last = -1000000;
    std::vector<int> near(h, 1000000);
    for (int y = 0; y < h; ++y) {
      if (rows[static_cast<std::size_t>(y) * w + x]) last = y;
      near[y] = y - last;
    }
    last = 1000000;
    for (int y = h - 1; y >= 0; --y) {
      if (rows[static_cast<std::size_t>(y) * w + x]) last = y;
      near[y] = std::min(near[y], last - y);
      out[static_cast<std::size_t>(y) * w + x] = near[y] <= tol;
    }
  }
  return BinaryMask(h, w, std::move(out));
}

}  // namespace

double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tol) {
  if (!pred.same_dims(gt)) {
    throw ShapeError("boundary_f: dimension mismatch " + std::to_string(pred.height()) + "x" +
                     std::to_string(pred.width()) + " vs " + std::to_string(gt.height()) + "x" +
                     std::to_string(gt.width()));
  }
  if (tol < 0) throw ValueError("boundary_f: tolerance must be >= 0");
  const auto bp = boundary(pred);
  const auto bg = boundary(gt);
  const std::size_t np = bp.count(), ng = bg.count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision = static_cast<double>(bp.intersect(dilate_square(bg, tol)).count()) / np;
  const double recall = static_cast<double>(bg.intersect(dilate_square(bp, tol)).count()) / ng;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricsReport evaluate_run(std::vector<PredictedSequence> runs, int tol) {
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  MetricsReport report;
  for (const auto& r : runs) {
    if (r.masks.size() != r.gt_masks.size()) {
      throw ShapeError("sequence " + r.name + ": " + std::to_string(r.masks.size()) + " predicted masks vs " +
                       std::to_string(r.gt_masks.size()) + " ground-truth masks");
    }
    if (r.masks.empty()) throw ShapeError("sequence " + r.name + ": nothing to score");
    std::vector<double> ious;
    double f = 0.0;
    for (std::size_t t = 0; t < r.masks.size(); ++t) {
      if (!r.masks[t].same_dims(r.gt_masks[t])) {
        throw ShapeError("sequence " + r.name + ": frame " + std::to_string(t) + " size mismatch");
      }
      ious.push_back(iou(r.masks[t], r.gt_masks[t]));
      const int t_tol = tol < 0 ? default_boundary_tolerance(r.gt_masks[t].height(), r.gt_masks[t].width()) : tol;
      f += boundary_f(r.masks[t], r.gt_masks[t], t_tol);
    }
    const auto j = j_stats(ious);
    report.sequences.push_back({r.name, j.mean, j.recall, j.decay, f / static_cast<double>(r.masks.size()),
                                static_cast<int>(r.masks.size())});
  }
  if (!report.sequences.empty()) {
    const double n = static_cast<double>(report.sequences.size());
    for (const auto& s : report.sequences) {
      report.j_mean += s.j_mean;
      report.j_recall += s.j_recall;
      report.j_decay += s.j_decay;
      report.f_mean += s.f_mean;
    }
    report.j_mean /= n;
    report.j_recall /= n;
    report.j_decay /= n;
    report.f_mean /= n;
  }
  return report;
}

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void MetricsReport::write_csv(std::ostream& os) const {
  os << "# config_fingerprint=" << config_fingerprint << "\n";
  os << "# seed=" << seed << "\n";
  os << "sequence,frames,J_mean,J_recall,J_decay,F_mean\n";
  for (const auto& s : sequences) {
    os << s.name << ',' << s.frames << ',' << fmt6(s.j_mean) << ',' << fmt6(s.j_recall) << ',' << fmt6(s.j_decay)
       << ',' << fmt6(s.f_mean) << '\n';
  }
  os << "mean," << sequences.size() << ',' << fmt6(j_mean) << ',' << fmt6(j_recall) << ',' << fmt6(j_decay) << ','
     << fmt6(f_mean) << '\n';
}

void MetricsReport::print_table(std::ostream& os) const {
  std::size_t wname = 8;
  for (const auto& s : sequences) wname = std::max(wname, s.name.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %7s  %8s  %7s  %7s\n", static_cast<int>(wname), "sequence", "J mean",
                "J recall", "J decay", "F mean");
  os << buf;
  auto row = [&](const std::string& name, double jm, double jr, double jd, double fm) {
    std::snprintf(buf, sizeof buf, "%-*s  %7.2f  %8.2f  %7.2f  %7.2f\n", static_cast<int>(wname), name.c_str(),
                  100 * jm, 100 * jr, 100 * jd, 100 * fm);
    os << buf;
  };
  for (const auto& s : sequences) row(s.name, s.j_mean, s.j_recall, s.j_decay, s.f_mean);
  os << std::string(wname + 43, '-') << '\n';
  row("mean", j_mean, j_recall, j_decay, f_mean);
}

}  // namespace onavos
