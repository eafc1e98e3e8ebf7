#pragma once

// Minimal reverse-mode differentiation over dense float-64 tensors.
//
// A Tensor is a shared handle to a node holding shape, values and (lazily) a
// gradient buffer. Ops take an optional Tape; when a tape is given and any
// input requires a gradient, the op appends a backward closure to it. Tape
// order is execution order, so walking it in reverse visits every op after
// all of its consumers.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace onavos::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;

  /// Accumulated gradient; all zeros if nothing flowed into this tensor.
  std::vector<double> grad() const;
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy without gradient or tape history.
  Tensor detach_copy(bool requires_grad = false) const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of executed differentiable ops.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  /// Appends an op. `backward` reads output->grad and accumulates into the
  /// inputs' grad buffers (use `accumulate_grad`).
  void record(std::shared_ptr<TensorNode> output, BackwardFn backward);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  bool produced(const TensorNode* node) const;

 private:
  friend void backward(Tape& tape, const Tensor& loss);
  struct Entry {
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

/// Returns the grad buffer of `node`, allocating zeros on first use.
std::vector<double>& accumulate_grad(TensorNode& node);

/// True when an op on these inputs should be recorded.
bool should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs);

/// Throws NumericError if any value is NaN or Inf.
void check_finite(const TensorNode& node, const char* op);

/// Seeds d(loss)/d(loss) = 1, runs the tape in reverse and clears it.
/// Gradients are summed into every requires_grad tensor that was used.
void backward(Tape& tape, const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. `tape` may be null for inference.

/// Cross-correlation with zero "same" padding: H' = ceil(H / stride). For
/// stride 1 the output has the input's spatial size. Kernel sizes must be odd.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride = 1, int dilation = 1);

/// Bilinear upsampling with half-pixel centers (align_corners = false):
/// output pixel y samples input coordinate (y + 0.5) / factor - 0.5, clamped
/// to the valid range.
Tensor bilinear_upsample(Tape* tape, const Tensor& input, int factor);

Tensor relu(Tape* tape, const Tensor& x);
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor scale(Tape* tape, const Tensor& x, double factor);
/// Elementwise sum with numpy-style broadcasting.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sum(Tape* tape, const Tensor& x);

/// Softmax across the channel axis of an [N, 2, H, W] tensor.
Tensor softmax2(Tape* tape, const Tensor& logits);

}  // namespace onavos::ad
