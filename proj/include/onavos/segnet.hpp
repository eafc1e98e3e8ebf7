#pragma once

// Compact fully-convolutional two-class segmentation network.
//
// Layout (default widths 16/24/32/48, dilations 2 and 4):
//
//   enc1  3x3 stride 2   3 -> w0      H/2
//   enc2  3x3 stride 2  w0 -> w1      H/4
//   enc3  3x3 stride 2  w1 -> w2      H/8
//   ctxN  3x3 dilation dN             one per dilation rate, width w3
//   res   two 3x3 convs at the last dilation, identity skip (optional)
//   head  1x1 -> 2 logits, softmax, bilinear x8 back to H x W
//
// Every conv except the head is followed by ReLU.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "onavos/autodiff.hpp"
#include "onavos/image.hpp"
#include "onavos/mask.hpp"

namespace onavos {

/// gaussian: every weight ~ N(0, 0.01^2). he: hidden conv weights ~
/// N(0, 2/fan_in), head still N(0, 0.01^2).
enum class WeightInit : std::uint8_t { gaussian = 0, he = 1 };

std::string to_string(WeightInit init);
WeightInit weight_init_from_string(const std::string& s);

struct ArchConfig {
  std::vector<int> widths{16, 24, 32, 48};
  std::vector<int> dilations{2, 4};
  bool use_residual_block = true;
  WeightInit init = WeightInit::gaussian;

  /// Throws ValueError unless there are exactly four widths (three stride-2
  /// stages plus the dilated context width) and at least one dilation.
  void validate() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

inline constexpr int kDownsampleFactor = 8;

struct Parameter {
  std::string name;
  ad::Shape shape;
  std::vector<double> value;
  std::vector<double> adam_m;
  std::vector<double> adam_v;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Parameters, Adam moments and step counter: everything a checkpoint holds.
struct NetworkState {
  ArchConfig arch;
  std::vector<Parameter> params;
  std::uint64_t step_count = 0;
  std::uint64_t rng_seed = 0;

  std::size_t parameter_count() const;
  const Parameter& param(const std::string& name) const;
  Parameter& param(const std::string& name);

  friend bool operator==(const NetworkState&, const NetworkState&) = default;
};

/// Weights per arch.init (Gaussian(0, 0.01) by default), zero biases, zero
/// moments. Each parameter draws from its own stream split off `seed` by name.
NetworkState init_network(const ArchConfig& arch, std::uint64_t seed);

/// Re-draws head.weight/head.bias and zeroes their moments; everything else
/// is kept.
NetworkState replace_output_head(const NetworkState& net, std::uint64_t seed);

bool is_head_parameter(const std::string& name);

struct ForwardPass {
  ad::Tensor logits;      // [1, 2, H/8, W/8]
  ad::Tensor posteriors;  // [1, 2, H, W]; undefined when not requested
  /// Parameter leaves in NetworkState::params order; they carry gradients
  /// after ad::backward when the pass was taped.
  std::vector<ad::Tensor> leaves;
  /// Activation shapes after each stride-2 stage.
  std::vector<ad::Shape> stage_shapes;
};

/// Runs the network on a [1, 3, H, W] tensor. H and W must be multiples of
/// 8. With a tape the parameters are recorded as gradient leaves.
ForwardPass forward(const NetworkState& net, const ad::Tensor& input, ad::Tape* tape,
                    bool with_posteriors = true);

/// Image -> centred network input tensor (values - 0.5).
ad::Tensor image_to_input(const Image& image);

/// Reflect-pads to the next multiple of 8, runs the network and crops the
/// posteriors back to the image size.
ad::Tensor predict_posteriors(const NetworkState& net, const Image& image);

ProbabilityMap foreground_probability(const ad::Tensor& posteriors);

// Checkpoint file layout (all integers u64 little-endian unless noted,
// floats IEEE-754 binary64 little-endian):
//
//   "ONAV"                      4 bytes
//   format version              u32 (currently 1)
//   parameter count             u64
//   per parameter:  name length, name bytes, rank, dims..., values...
//   per parameter:  adam_m values, adam_v values (same order and sizes)
//   step_count                  u64
//   rng_seed                    u64
//   architecture:   width count, widths..., dilation count, dilations...,
//                   residual flag (u8), weight init (u8)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const NetworkState& net);
NetworkState read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const NetworkState& net);
NetworkState load_checkpoint(const std::filesystem::path& path);

}  // namespace onavos
