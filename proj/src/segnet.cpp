#include "onavos/segnet.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "onavos/errors.hpp"
#include "onavos/rng.hpp"

namespace onavos {

void ArchConfig::validate() const {
  if (widths.size() != 4) {
    throw ValueError("arch: expected 4 widths (three stride-2 stages + context), got " +
                     std::to_string(widths.size()));
  }
  if (dilations.empty()) throw ValueError("arch: at least one dilation rate is required");
  for (const int w : widths) {
    if (w < 1) throw ValueError("arch: widths must be positive");
  }
  for (const int d : dilations) {
    if (d < 1) throw ValueError("arch: dilation rates must be >= 1");
  }
}

std::size_t NetworkState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

const Parameter& NetworkState::param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw ValueError("no parameter named " + name);
}

Parameter& NetworkState::param(const std::string& name) {
  return const_cast<Parameter&>(std::as_const(*this).param(name));
}

bool is_head_parameter(const std::string& name) { return name.rfind("head.", 0) == 0; }

std::string to_string(WeightInit init) { return init == WeightInit::he ? "he" : "gaussian"; }

WeightInit weight_init_from_string(const std::string& s) {
  if (s == "gaussian") return WeightInit::gaussian;
  if (s == "he") return WeightInit::he;
  throw ValueError("unknown weight init '" + s + "' (expected gaussian or he)");
}

namespace {

struct ConvSpec {
  std::string name;
  int in, out, ksize, stride, dilation;
};

std::vector<ConvSpec> layer_specs(const ArchConfig& arch) {
  arch.validate();
  const auto& w = arch.widths;
  std::vector<ConvSpec> specs = {
      {"enc1", 3, w[0], 3, 2, 1},
      {"enc2", w[0], w[1], 3, 2, 1},
      {"enc3", w[1], w[2], 3, 2, 1},
  };
  int in = w[2];
  for (std::size_t i = 0; i < arch.dilations.size(); ++i) {
    specs.push_back({"ctx" + std::to_string(i + 1), in, w[3], 3, 1, arch.dilations[i]});
    in = w[3];
  }
  if (arch.use_residual_block) {
    const int d = arch.dilations.back();
    specs.push_back({"res1", w[3], w[3], 3, 1, d});
    specs.push_back({"res2", w[3], w[3], 3, 1, d});
  }
  specs.push_back({"head", w[3], 2, 1, 1, 1});
  return specs;
}

Parameter make_param(std::string name, ad::Shape shape, Rng rng, double stddev) {
  Parameter p;
  p.name = std::move(name);
  const auto n = ad::numel(shape);
  p.shape = std::move(shape);
  p.value.assign(n, 0.0);
  if (stddev > 0.0) {
    for (auto& v : p.value) v = stddev * rng.normal();
  }
  p.adam_m.assign(n, 0.0);
  p.adam_v.assign(n, 0.0);
  return p;
}

void init_conv(std::vector<Parameter>& out, const ConvSpec& s, const Rng& root, WeightInit init) {
  const std::string wname = s.name + ".weight";
  const std::string bname = s.name + ".bias";
  double stddev = 0.01;
  if (init == WeightInit::he && !is_head_parameter(wname)) {
    stddev = std::sqrt(2.0 / static_cast<double>(s.in * s.ksize * s.ksize));
  }
  out.push_back(make_param(wname,
                           {static_cast<std::size_t>(s.out), static_cast<std::size_t>(s.in),
                            static_cast<std::size_t>(s.ksize), static_cast<std::size_t>(s.ksize)},
                           root.split(wname), stddev));
  out.push_back(make_param(bname, {static_cast<std::size_t>(s.out)}, root.split(bname), 0.0));
}

}  // namespace

NetworkState init_network(const ArchConfig& arch, std::uint64_t seed) {
  NetworkState net;
  net.arch = arch;
  net.rng_seed = seed;
  const Rng root(seed);
  for (const auto& spec : layer_specs(arch)) init_conv(net.params, spec, root, arch.init);
  return net;
}

NetworkState replace_output_head(const NetworkState& net, std::uint64_t seed) {
  NetworkState out = net;
  const Rng root = Rng(seed).split("head-replacement");
  const auto specs = layer_specs(net.arch);
  std::vector<Parameter> fresh;
  init_conv(fresh, specs.back(), root, net.arch.init);
  for (auto& f : fresh) out.param(f.name) = std::move(f);
  return out;
}

ForwardPass forward(const NetworkState& net, const ad::Tensor& input, ad::Tape* tape,
                    bool with_posteriors) {
  if (input.rank() != 4 || input.dim(0) != 1 || input.dim(1) != 3) {
    throw ShapeError("forward: expected input [1,3,H,W], got " + ad::shape_str(input.shape()));
  }
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h % kDownsampleFactor != 0 || w % kDownsampleFactor != 0) {
    throw ShapeError("forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by 8; pad it first (predict_posteriors does)");
  }

  ForwardPass pass;
  const bool taped = tape != nullptr;
  pass.leaves.reserve(net.params.size());
  for (const auto& p : net.params) pass.leaves.emplace_back(p.shape, p.value, taped);

  const auto specs = layer_specs(net.arch);
  if (specs.size() * 2 != net.params.size()) {
    throw ShapeError("forward: network holds " + std::to_string(net.params.size()) +
                     " parameters, architecture expects " + std::to_string(specs.size() * 2));
  }
  auto conv = [&](std::size_t layer, const ad::Tensor& x) {
    const auto& s = specs[layer];
    return ad::conv2d(tape, x, pass.leaves[2 * layer], pass.leaves[2 * layer + 1], s.stride, s.dilation);
  };

  ad::Tensor x = input;
  std::size_t layer = 0;
  for (; layer < 3; ++layer) {
    x = ad::relu(tape, conv(layer, x));
    pass.stage_shapes.push_back(x.shape());
  }
  for (std::size_t i = 0; i < net.arch.dilations.size(); ++i, ++layer) x = ad::relu(tape, conv(layer, x));
  if (net.arch.use_residual_block) {
    const auto branch = conv(layer + 1, ad::relu(tape, conv(layer, x)));
    x = ad::relu(tape, ad::add(tape, x, branch));
    layer += 2;
  }
  pass.logits = conv(layer, x);
  if (with_posteriors) {
    pass.posteriors = ad::bilinear_upsample(tape, ad::softmax2(tape, pass.logits), kDownsampleFactor);
  }
  return pass;
}

ad::Tensor image_to_input(const Image& image) {
  std::vector<double> v(image.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = image.data[i] - 0.5;
  return ad::Tensor({1, 3, static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width)},
                    std::move(v));
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

ad::Tensor predict_posteriors(const NetworkState& net, const Image& image) {
  const int h = image.height, w = image.width;
  const int ph = (h + kDownsampleFactor - 1) / kDownsampleFactor * kDownsampleFactor;
  const int pw = (w + kDownsampleFactor - 1) / kDownsampleFactor * kDownsampleFactor;
  if (ph == h && pw == w) return forward(net, image_to_input(image), nullptr).posteriors;

  Image padded(ph, pw);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) padded.at(c, y, x) = image.at(c, reflect(y, h), reflect(x, w));
    }
  }
  const auto full = forward(net, image_to_input(padded), nullptr).posteriors;
  std::vector<double> cropped(static_cast<std::size_t>(2) * h * w);
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        cropped[(static_cast<std::size_t>(c) * h + y) * w + x] =
            full.values()[(static_cast<std::size_t>(c) * ph + y) * pw + x];
      }
    }
  }
  return ad::Tensor({1, 2, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(cropped));
}

ProbabilityMap foreground_probability(const ad::Tensor& posteriors) {
  if (posteriors.rank() != 4 || posteriors.dim(0) != 1 || posteriors.dim(1) != 2) {
    throw ShapeError("foreground_probability: expected [1,2,H,W], got " + ad::shape_str(posteriors.shape()));
  }
  ProbabilityMap out;
  out.height = static_cast<int>(posteriors.dim(2));
  out.width = static_cast<int>(posteriors.dim(3));
  const std::size_t hw = posteriors.dim(2) * posteriors.dim(3);
  out.values.assign(posteriors.values().begin() + hw, posteriors.values().begin() + 2 * hw);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  for (const double d : v) put_u64(os, std::bit_cast<std::uint64_t>(d));
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::vector<double> get_doubles(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  for (auto& d : v) d = std::bit_cast<double>(get_u64(is));
  return v;
}

constexpr std::uint64_t kMaxCount = 1u << 28;

std::uint64_t get_count(std::istream& is, const char* what) {
  const auto n = get_u64(is);
  if (n > kMaxCount) throw IoError(std::string("checkpoint: implausible ") + what + " " + std::to_string(n));
  return n;
}

}  // namespace

void write_checkpoint(std::ostream& os, const NetworkState& net) {
  os.write("ONAV", 4);
  put_u32(os, kCheckpointVersion);
  put_u64(os, net.params.size());
  for (const auto& p : net.params) {
    put_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u64(os, p.shape.size());
    for (const auto d : p.shape) put_u64(os, d);
    put_doubles(os, p.value);
  }
  for (const auto& p : net.params) {
    put_doubles(os, p.adam_m);
    put_doubles(os, p.adam_v);
  }
  put_u64(os, net.step_count);
  put_u64(os, net.rng_seed);
  put_u64(os, net.arch.widths.size());
  for (const int w : net.arch.widths) put_u64(os, static_cast<std::uint64_t>(w));
  put_u64(os, net.arch.dilations.size());
  for (const int d : net.arch.dilations) put_u64(os, static_cast<std::uint64_t>(d));
  const char flags[2] = {static_cast<char>(net.arch.use_residual_block ? 1 : 0),
                         static_cast<char>(net.arch.init)};
  os.write(flags, 2);
  if (!os) throw IoError("checkpoint write failed");
}

NetworkState read_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "ONAV") throw IoError("not an ONAV checkpoint (bad magic)");
  const auto version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  NetworkState net;
  const auto count = get_count(is, "parameter count");
  net.params.resize(count);
  for (auto& p : net.params) {
    const auto len = get_count(is, "name length");
    p.name.resize(len);
    is.read(p.name.data(), static_cast<std::streamsize>(len));
    const auto rank = get_count(is, "rank");
    p.shape.resize(rank);
    for (auto& d : p.shape) d = get_count(is, "dimension");
    p.value = get_doubles(is, ad::numel(p.shape));
  }
  for (auto& p : net.params) {
    p.adam_m = get_doubles(is, p.value.size());
    p.adam_v = get_doubles(is, p.value.size());
  }
  net.step_count = get_u64(is);
  net.rng_seed = get_u64(is);
  net.arch.widths.resize(get_count(is, "width count"));
  for (auto& w : net.arch.widths) w = static_cast<int>(get_count(is, "width"));
  net.arch.dilations.resize(get_count(is, "dilation count"));
  for (auto& d : net.arch.dilations) d = static_cast<int>(get_count(is, "dilation"));
  char flags[2] = {0, 0};
  is.read(flags, 2);
  if (!is) throw IoError("checkpoint truncated");
  net.arch.use_residual_block = flags[0] != 0;
  if (flags[1] != 0 && flags[1] != 1) throw IoError("checkpoint: unknown weight init tag");
  net.arch.init = static_cast<WeightInit>(flags[1]);

  // Shapes must match what the architecture would build.
  const auto reference = init_network(net.arch, 0);
  if (reference.params.size() != net.params.size()) throw IoError("checkpoint does not match its architecture");
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    if (reference.params[i].name != net.params[i].name || reference.params[i].shape != net.params[i].shape) {
      throw IoError("checkpoint parameter " + net.params[i].name + " does not match its architecture");
    }
  }
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkState& net) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, net);
}

NetworkState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace onavos
