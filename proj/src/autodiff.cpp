#include "onavos/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "onavos/errors.hpp"

namespace onavos::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach_copy(bool requires_grad) const {
  return Tensor(node_->shape, node_->value, requires_grad);
}

void Tape::record(std::shared_ptr<TensorNode> output, BackwardFn backward) {
  output->requires_grad = true;
  entries_.push_back({std::move(output), std::move(backward)});
}

bool Tape::produced(const TensorNode* node) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [node](const Entry& e) { return e.output.get() == node; });
}

std::vector<double>& accumulate_grad(TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

bool should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

void check_finite(const TensorNode& node, const char* op) {
  for (const double v : node.value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

void backward(Tape& tape, const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!tape.produced(loss.node().get())) {
    throw ValueError("backward: loss was not recorded on this tape");
  }
  accumulate_grad(*loss.node())[0] += 1.0;
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // does not reach the loss
    it->backward();
  }
  // Intermediate buffers are owned by the tape; releasing it frees them.
  tape.clear();
}

namespace {

std::shared_ptr<TensorNode> make_node(Shape shape) {
  auto node = std::make_shared<TensorNode>();
  node->value.assign(numel(shape), 0.0);
  node->shape = std::move(shape);
  return node;
}

Tensor wrap(std::shared_ptr<TensorNode> node) { return Tensor(std::move(node)); }

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, k, kh, kw, oh, ow;
  std::size_t stride, dilation;
  long pad_top, pad_left;
};

std::size_t out_extent(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

long same_pad_before(std::size_t in, std::size_t out, std::size_t stride, std::size_t k,
                     std::size_t dilation) {
  const long needed = static_cast<long>((out - 1) * stride + dilation * (k - 1) + 1) - static_cast<long>(in);
  return std::max(needed, 0L) / 2;
}

// Rows: (c, ky, kx); columns: output pixels in row-major order.
void im2col(const double* in, const ConvGeometry& g, double* col) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* plane = in + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * npix;
        const long dy = static_cast<long>(ky * g.dilation) - g.pad_top;
        const long dx = static_cast<long>(kx * g.dilation) - g.pad_left;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride) + dy;
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = plane + iy * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride) + dx;
            dst[ox] = (ix >= 0 && ix < static_cast<long>(g.w)) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* in_grad) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    double* plane = in_grad + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * npix;
        const long dy = static_cast<long>(ky * g.dilation) - g.pad_top;
        const long dx = static_cast<long>(kx * g.dilation) - g.pad_left;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride) + dy;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + iy * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride) + dx;
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int dilation) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride < 1 || dilation < 1) {
    throw ValueError("conv2d: stride and dilation must be >= 1 (stride=" + std::to_string(stride) +
                     ", dilation=" + std::to_string(dilation) + ")");
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.k = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  if (kernel.dim(1) != g.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels but input " + shape_str(input.shape()) + " has " +
                     std::to_string(g.c));
  }
  if (bias.dim(0) != g.k) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.dim(0)) + " entries for " +
                     std::to_string(g.k) + " output channels");
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw ShapeError("conv2d: kernel spatial size must be odd, got " + std::to_string(g.kh) + "x" +
                     std::to_string(g.kw));
  }
  g.stride = static_cast<std::size_t>(stride);
  g.dilation = static_cast<std::size_t>(dilation);
  g.oh = out_extent(g.h, g.stride);
  g.ow = out_extent(g.w, g.stride);
  g.pad_top = same_pad_before(g.h, g.oh, g.stride, g.kh, g.dilation);
  g.pad_left = same_pad_before(g.w, g.ow, g.stride, g.kw, g.dilation);

  const std::size_t rows = g.c * g.kh * g.kw;
  const std::size_t npix = g.oh * g.ow;
  const bool record = should_record(tape, {&input, &kernel, &bias});

  auto out = make_node({g.n, g.k, g.oh, g.ow});
  auto cols = std::make_shared<std::vector<double>>(g.n * rows * npix);
  const double* wv = kernel.values().data();
  const double* bv = bias.values().data();
  for (std::size_t b = 0; b < g.n; ++b) {
    double* col = cols->data() + b * rows * npix;
    im2col(input.values().data() + b * g.c * g.h * g.w, g, col);
    for (std::size_t k = 0; k < g.k; ++k) {
      double* o = out->value.data() + (b * g.k + k) * npix;
      std::fill(o, o + npix, bv[k]);
      const double* wk = wv + k * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wr = wk[r];
        const double* cr = col + r * npix;
        for (std::size_t p = 0; p < npix; ++p) o[p] += wr * cr[p];
      }
    }
  }
  check_finite(*out, "conv2d");

  if (record) {
    tape->record(out, [g, rows, npix, cols, in = input.node(), ker = kernel.node(), bs = bias.node(),
                       o = out.get()] {
      const double* go = o->grad.data();
      if (bs->requires_grad) {
        auto& gb = accumulate_grad(*bs);
        for (std::size_t b = 0; b < g.n; ++b) {
          for (std::size_t k = 0; k < g.k; ++k) {
            const double* gk = go + (b * g.k + k) * npix;
            double s = 0.0;
            for (std::size_t p = 0; p < npix; ++p) s += gk[p];
            gb[k] += s;
          }
        }
      }
      if (ker->requires_grad) {
        auto& gw = accumulate_grad(*ker);
        std::vector<double> col_t(rows * npix);
        for (std::size_t b = 0; b < g.n; ++b) {
          const double* col = cols->data() + b * rows * npix;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t p = 0; p < npix; ++p) col_t[p * rows + r] = col[r * npix + p];
          }
          for (std::size_t k = 0; k < g.k; ++k) {
            double* gwk = gw.data() + k * rows;
            const double* gk = go + (b * g.k + k) * npix;
            for (std::size_t p = 0; p < npix; ++p) {
              const double gp = gk[p];
              const double* ct = col_t.data() + p * rows;
              for (std::size_t r = 0; r < rows; ++r) gwk[r] += gp * ct[r];
            }
          }
        }
      }
      if (in->requires_grad) {
        auto& gi = accumulate_grad(*in);
        std::vector<double> dcol(rows * npix);
        for (std::size_t b = 0; b < g.n; ++b) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          for (std::size_t k = 0; k < g.k; ++k) {
            const double* wk = ker->value.data() + k * rows;
            const double* gk = go + (b * g.k + k) * npix;
            for (std::size_t r = 0; r < rows; ++r) {
              const double wr = wk[r];
              double* dr = dcol.data() + r * npix;
              for (std::size_t p = 0; p < npix; ++p) dr[p] += wr * gk[p];
            }
          }
          col2im_add(dcol.data(), g, gi.data() + b * g.c * g.h * g.w);
        }
      }
    });
  }
  return wrap(out);
}

// ---------------------------------------------------------------------------
// bilinear_upsample

namespace {

struct Lerp {
  std::size_t i0, i1;
  double t;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t out, int factor) {
  std::vector<Lerp> table(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    table[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return table;
}

}  // namespace

Tensor bilinear_upsample(Tape* tape, const Tensor& input, int factor) {
  require_rank(input, 4, "bilinear_upsample", "input");
  if (factor < 1) throw ValueError("bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  auto ty = lerp_table(h, oh, factor);
  auto tx = lerp_table(w, ow, factor);
  auto out = make_node({n, c, oh, ow});
  const double* iv = input.values().data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = iv + plane * h * w;
    double* dst = out->value.data() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const auto& ly = ty[y];
      for (std::size_t x = 0; x < ow; ++x) {
        const auto& lx = tx[x];
        const double top = src[ly.i0 * w + lx.i0] * (1.0 - lx.t) + src[ly.i0 * w + lx.i1] * lx.t;
        const double bot = src[ly.i1 * w + lx.i0] * (1.0 - lx.t) + src[ly.i1 * w + lx.i1] * lx.t;
        dst[y * ow + x] = top * (1.0 - ly.t) + bot * ly.t;
      }
    }
  }
  check_finite(*out, "bilinear_upsample");
  if (should_record(tape, {&input})) {
    tape->record(out, [ty = std::move(ty), tx = std::move(tx), n, c, h, w, oh, ow,
                       in = input.node(), o = out.get()] {
      auto& gi = accumulate_grad(*in);
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        double* dsrc = gi.data() + plane * h * w;
        const double* g = o->grad.data() + plane * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto& ly = ty[y];
          for (std::size_t x = 0; x < ow; ++x) {
            const auto& lx = tx[x];
            const double gv = g[y * ow + x];
            const double gt = gv * (1.0 - ly.t), gb = gv * ly.t;
            dsrc[ly.i0 * w + lx.i0] += gt * (1.0 - lx.t);
            dsrc[ly.i0 * w + lx.i1] += gt * lx.t;
            dsrc[ly.i1 * w + lx.i0] += gb * (1.0 - lx.t);
            dsrc[ly.i1 * w + lx.i1] += gb * lx.t;
          }
        }
      }
    });
  }
  return wrap(out);
}

// ---------------------------------------------------------------------------
// pointwise

Tensor relu(Tape* tape, const Tensor& x) {
  auto out = make_node(x.shape());
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  check_finite(*out, "relu");
  if (should_record(tape, {&x})) {
    tape->record(out, [in = x.node(), o = out.get()] {
      auto& gi = accumulate_grad(*in);
      // Subgradient at exactly zero is taken as 0.
      for (std::size_t i = 0; i < gi.size(); ++i) {
        if (in->value[i] > 0.0) gi[i] += o->grad[i];
      }
    });
  }
  return wrap(out);
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  auto out = make_node(x.shape());
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  check_finite(*out, "sigmoid");
  if (should_record(tape, {&x})) {
    tape->record(out, [in = x.node(), o = out.get()] {
      auto& gi = accumulate_grad(*in);
      for (std::size_t i = 0; i < gi.size(); ++i) {
        const double s = o->value[i];
        gi[i] += o->grad[i] * s * (1.0 - s);
      }
    });
  }
  return wrap(out);
}

Tensor scale(Tape* tape, const Tensor& x, double factor) {
  auto out = make_node(x.shape());
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = factor * xv[i];
  check_finite(*out, "scale");
  if (should_record(tape, {&x})) {
    tape->record(out, [in = x.node(), o = out.get(), factor] {
      auto& gi = accumulate_grad(*in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += factor * o->grad[i];
    });
  }
  return wrap(out);
}

namespace {

// Maps each output element of a broadcast to the flat offset in one operand.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i + offset] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  std::vector<std::size_t> index(numel(out));
  std::vector<std::size_t> coord(rank, 0);
  for (std::size_t flat = 0; flat < index.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < rank; ++d) off += coord[d] * strides[d];
    index[flat] = off;
    for (std::size_t d = rank; d-- > 0;) {
      if (++coord[d] < out[d]) break;
      coord[d] = 0;
    }
  }
  return index;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t rank = std::max(sa.size(), sb.size());
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + sa.size() >= rank ? sa[i + sa.size() - rank] : 1;
    const std::size_t db = i + sb.size() >= rank ? sb[i + sb.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("add: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                       " are not broadcast-compatible at axis " + std::to_string(i));
    }
    out_shape[i] = std::max(da, db);
  }
  auto out = make_node(out_shape);
  if (sa == sb) {
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.values()[i] + b.values()[i];
    check_finite(*out, "add");
    if (should_record(tape, {&a, &b})) {
      tape->record(out, [na = a.node(), nb = b.node(), o = out.get()] {
        for (auto* n : {na.get(), nb.get()}) {
          if (!n->requires_grad) continue;
          auto& g = accumulate_grad(*n);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
        }
      });
    }
    return wrap(out);
  }
  auto ia = broadcast_index(out_shape, sa);
  auto ib = broadcast_index(out_shape, sb);
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = a.values()[ia[i]] + b.values()[ib[i]];
  }
  check_finite(*out, "add");
  if (should_record(tape, {&a, &b})) {
    tape->record(out, [na = a.node(), nb = b.node(), ia = std::move(ia), ib = std::move(ib),
                       o = out.get()] {
      if (na->requires_grad) {
        auto& g = accumulate_grad(*na);
        for (std::size_t i = 0; i < ia.size(); ++i) g[ia[i]] += o->grad[i];
      }
      if (nb->requires_grad) {
        auto& g = accumulate_grad(*nb);
        for (std::size_t i = 0; i < ib.size(); ++i) g[ib[i]] += o->grad[i];
      }
    });
  }
  return wrap(out);
}

Tensor sum(Tape* tape, const Tensor& x) {
  auto out = make_node({});
  double s = 0.0;
  for (const double v : x.values()) s += v;
  out->value[0] = s;
  check_finite(*out, "sum");
  if (should_record(tape, {&x})) {
    tape->record(out, [in = x.node(), o = out.get()] {
      auto& g = accumulate_grad(*in);
      const double go = o->grad[0];
      for (auto& v : g) v += go;
    });
  }
  return wrap(out);
}

Tensor softmax2(Tape* tape, const Tensor& logits) {
  require_rank(logits, 4, "softmax2", "logits");
  if (logits.dim(1) != 2) {
    throw ShapeError("softmax2: expected 2 channels, got " + std::to_string(logits.dim(1)) +
                     " in shape " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0);
  const std::size_t hw = logits.dim(2) * logits.dim(3);
  auto out = make_node(logits.shape());
  const double* x = logits.values().data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* x0 = x + b * 2 * hw;
    const double* x1 = x0 + hw;
    double* p0 = out->value.data() + b * 2 * hw;
    double* p1 = p0 + hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const double m = std::max(x0[i], x1[i]);
      const double e0 = std::exp(x0[i] - m);
      const double e1 = std::exp(x1[i] - m);
      const double s = e0 + e1;
      p0[i] = e0 / s;
      p1[i] = e1 / s;
    }
  }
  check_finite(*out, "softmax2");
  if (should_record(tape, {&logits})) {
    tape->record(out, [n, hw, in = logits.node(), o = out.get()] {
      auto& gi = accumulate_grad(*in);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t base = b * 2 * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double p0 = o->value[base + i], p1 = o->value[base + hw + i];
          const double g0 = o->grad[base + i], g1 = o->grad[base + hw + i];
          const double dot = g0 * p0 + g1 * p1;
          gi[base + i] += p0 * (g0 - dot);
          gi[base + hw + i] += p1 * (g1 - dot);
        }
      }
    });
  }
  return wrap(out);
}

}  // namespace onavos::ad
