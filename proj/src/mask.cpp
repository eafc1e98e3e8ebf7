#include "onavos/mask.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "onavos/errors.hpp"

namespace onavos {

namespace {

void require_same_dims(int ha, int wa, int hb, int wb, const char* op) {
  if (ha != hb || wa != wb) {
    throw ShapeError(std::string(op) + ": dimension mismatch " + std::to_string(ha) + "x" +
                     std::to_string(wa) + " vs " + std::to_string(hb) + "x" + std::to_string(wb));
  }
}

void require_positive_dims(int h, int w) {
  if (h <= 0 || w <= 0) {
    throw ShapeError("mask dimensions must be positive, got " + std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

BinaryMask::BinaryMask(int height, int width, bool fill)
    : height_(height), width_(width) {
  require_positive_dims(height, width);
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  require_positive_dims(height, width);
  if (bits_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("mask " + std::to_string(height) + "x" + std::to_string(width) + " given " +
                     std::to_string(bits_.size()) + " bits");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::minus(const BinaryMask& other) const {
  require_same_dims(height_, width_, other.height_, other.width_, "mask difference");
  BinaryMask out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] & (other.bits_[i] ^ 1);
  return out;
}

BinaryMask BinaryMask::intersect(const BinaryMask& other) const {
  require_same_dims(height_, width_, other.height_, other.width_, "mask intersection");
  BinaryMask out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] & other.bits_[i];
  return out;
}

LabelMap::LabelMap(int height, int width, Label fill) : height_(height), width_(width) {
  require_positive_dims(height, width);
  labels_.assign(static_cast<std::size_t>(height) * width, fill);
}

LabelMap LabelMap::from_mask(const BinaryMask& mask) {
  LabelMap out(mask.height(), mask.width(), Label::negative);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.at(i)) out.labels_[i] = Label::positive;
  }
  return out;
}

LabelMap LabelMap::from_masks(const BinaryMask& positives, const BinaryMask& negatives) {
  require_same_dims(positives.height(), positives.width(), negatives.height(), negatives.width(),
                    "label map");
  LabelMap out(positives.height(), positives.width(), Label::dont_care);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    if (positives.at(i)) {
      out.labels_[i] = Label::positive;
    } else if (negatives.at(i)) {
      out.labels_[i] = Label::negative;
    }
  }
  return out;
}

std::size_t LabelMap::count(Label l) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), l));
}

LabelMap LabelMap::downsample(int height, int width) const {
  LabelMap out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = static_cast<int>((static_cast<long>(2 * y + 1) * height_) / (2L * height));
    for (int x = 0; x < width; ++x) {
      const int sx = static_cast<int>((static_cast<long>(2 * x + 1) * width_) / (2L * width));
      out.set(y, x, (*this)(sy, sx));
    }
  }
  return out;
}

// Square erosion is separable: a pixel survives iff every pixel in its row
// window survives the column window. Each 1-D pass tracks the distance to the
// last background pixel seen from either side.
BinaryMask erode(const BinaryMask& mask, int size) {
  if (size < 1 || size % 2 == 0) {
    throw ValueError("erode: structuring element size must be odd and >= 1, got " + std::to_string(size));
  }
  if (size == 1) return mask;
  const int h = mask.height(), w = mask.width(), r = size / 2;

  // run[i]: number of consecutive foreground pixels ending at i (forward) or
  // starting at i (backward) along the pass direction.
  auto pass = [r](const std::vector<std::uint8_t>& in, int lines, int len, bool along_rows) {
    std::vector<std::uint8_t> out(in.size(), 0);
    std::vector<int> fwd(len), bwd(len);
    for (int l = 0; l < lines; ++l) {
      auto idx = [&](int i) {
        return along_rows ? static_cast<std::size_t>(l) * len + i : static_cast<std::size_t>(i) * lines + l;
      };
      int run = 0;
      for (int i = 0; i < len; ++i) {
        run = in[idx(i)] ? run + 1 : 0;
        fwd[i] = run;
      }
      run = 0;
      for (int i = len - 1; i >= 0; --i) {
        run = in[idx(i)] ? run + 1 : 0;
        bwd[i] = run;
      }
      for (int i = 0; i < len; ++i) {
        out[idx(i)] = (fwd[i] > r && bwd[i] > r) ? 1 : 0;
      }
    }
    return out;
  };

  auto rows = pass(mask.bits(), h, w, true);
  auto both = pass(rows, w, h, false);
  return BinaryMask(h, w, std::move(both));
}

namespace {

// Squared distance lower envelope of parabolas (Felzenszwalb & Huttenlocher).
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInfinity;
  z[1] = kInfinity;
  auto meet = [f](int q, int p) {
    return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double s = meet(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = meet(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInfinity;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

DistanceMap distance_transform(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  DistanceMap out{h, w, std::vector<double>(static_cast<std::size_t>(h) * w, kInfinity)};
  if (mask.empty()) return out;

  // Stand-in for "no foreground in this column": larger than any real squared
  // distance yet small enough that all sums stay exact integers.
  const double far = 2.0 * (static_cast<double>(h) * h + static_cast<double>(w) * w) + 1.0;
  const int n = std::max(h, w);
  std::vector<double> f(n), d(n);
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  std::vector<double> sq(static_cast<std::size_t>(h) * w);

  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = mask(y, x) ? 0.0 : far;
    edt_1d(f.data(), d.data(), h, v, z);
    for (int y = 0; y < h; ++y) sq[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  for (int y = 0; y < h; ++y) {
    double* row = sq.data() + static_cast<std::size_t>(y) * w;
    std::copy(row, row + w, f.begin());
    edt_1d(f.data(), d.data(), w, v, z);
    for (int x = 0; x < w; ++x) {
      out.values[static_cast<std::size_t>(y) * w + x] = d[x] >= far ? kInfinity : std::sqrt(d[x]);
    }
  }
  return out;
}

BinaryMask select_negatives(const DistanceMap& dt, double d) {
  if (!(d >= 0.0)) throw ValueError("select_negatives: distance threshold must be >= 0, got " + std::to_string(d));
  BinaryMask out(dt.height, dt.width);
  for (std::size_t i = 0; i < dt.values.size(); ++i) out.set(i, dt.values[i] > d);
  return out;
}

BinaryMask select_positives(const ProbabilityMap& post, double alpha, const BinaryMask& negatives) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValueError("select_positives: alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  require_same_dims(post.height, post.width, negatives.height(), negatives.width(), "select_positives");
  BinaryMask out(post.height, post.width);
  for (std::size_t i = 0; i < post.values.size(); ++i) {
    out.set(i, post.values[i] > alpha && !negatives.at(i));
  }
  return out;
}

BinaryMask threshold_minus_negatives(const ProbabilityMap& post, const BinaryMask& negatives) {
  require_same_dims(post.height, post.width, negatives.height(), negatives.width(),
                    "threshold_minus_negatives");
  BinaryMask out(post.height, post.width);
  for (std::size_t i = 0; i < post.values.size(); ++i) {
    out.set(i, post.values[i] > 0.5 && !negatives.at(i));
  }
  return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.height(), a.width(), b.height(), b.width(), "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a.at(i) && b.at(i);
    uni += a.at(i) || b.at(i);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace onavos
