#include "onavos/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "onavos/errors.hpp"

namespace onavos {

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::appearance_drift: return "appearance_drift";
    case ScenarioKind::distractor_entry: return "distractor_entry";
    case ScenarioKind::occlusion: return "occlusion";
    case ScenarioKind::static_control: return "static_control";
  }
  return "?";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
  for (auto k : {ScenarioKind::appearance_drift, ScenarioKind::distractor_entry, ScenarioKind::occlusion,
                 ScenarioKind::static_control}) {
    if (to_string(k) == s) return k;
  }
  throw ValueError("unknown scenario kind '" + s + "'");
}

void Scenario::validate() const {
  if (frames < 2) throw ValueError("scenario needs at least 2 frames, got " + std::to_string(frames));
  if (height < 32 || width < 32) {
    throw ValueError("scenario resolution must be at least 32x32, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
}

void VideoSequence::validate() const {
  if (frames.size() != gt_masks.size()) {
    throw ShapeError("sequence " + name + ": " + std::to_string(frames.size()) + " frames but " +
                     std::to_string(gt_masks.size()) + " masks");
  }
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].height != frames[0].height || frames[t].width != frames[0].width ||
        gt_masks[t].height() != frames[0].height || gt_masks[t].width() != frames[0].width) {
      throw ShapeError("sequence " + name + ": frame " + std::to_string(t) + " has inconsistent dimensions");
    }
  }
}

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{0, 0, 0};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

enum class ShapeClass { ellipse, rectangle, triangle, blob };
enum class Pattern { flat, stripes, checker };

struct Appearance {
  double hue = 0, sat = 0.8, val = 0.8;
  Pattern pattern = Pattern::flat;
  double period = 6.0;
  double orientation = 0.0;
  double contrast = 0.4;
};

struct Shape {
  ShapeClass cls = ShapeClass::ellipse;
  double cx = 0, cy = 0;
  double rx = 10, ry = 10;
  double angle = 0;
  double lobe_phase = 0;

  // Local coordinates (u along the shape's major axis).
  void local(double x, double y, double& u, double& v) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    u = dx * c + dy * s;
    v = -dx * s + dy * c;
  }

  bool contains(double x, double y) const {
    double u, v;
    local(x, y, u, v);
    const double nu = u / rx, nv = v / ry;
    switch (cls) {
      case ShapeClass::ellipse: return nu * nu + nv * nv <= 1.0;
      case ShapeClass::rectangle: return std::fabs(nu) <= 0.85 && std::fabs(nv) <= 0.85;
      case ShapeClass::triangle: return nv >= -0.7 && nv <= 1.0 - 2.0 * std::fabs(nu) * 0.95 && nv <= 1.0;
      case ShapeClass::blob: {
        const double r = std::sqrt(nu * nu + nv * nv);
        const double phi = std::atan2(nv, nu);
        return r <= 0.85 + 0.2 * std::sin(3.0 * phi + lobe_phase);
      }
    }
    return false;
  }
};

Rgb shade(const Appearance& a, const Shape& s, double x, double y) {
  const Rgb base = hsv_to_rgb(a.hue, a.sat, a.val);
  if (a.pattern == Pattern::flat) return base;
  double u, v;
  s.local(x, y, u, v);
  const double co = std::cos(a.orientation), so = std::sin(a.orientation);
  const double p = u * co + v * so;
  bool dark;
  if (a.pattern == Pattern::stripes) {
    dark = std::sin(2.0 * M_PI * p / a.period) > 0.0;
  } else {
    const double q = -u * so + v * co;
    dark = (std::sin(2.0 * M_PI * p / a.period) > 0.0) != (std::sin(2.0 * M_PI * q / a.period) > 0.0);
  }
  if (!dark) return base;
  return {base[0] * (1.0 - a.contrast), base[1] * (1.0 - a.contrast), base[2] * (1.0 - a.contrast)};
}

// Low-frequency coloured texture plus fixed fine-grained noise.
struct Background {
  Rgb base;
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;
  std::vector<double> grain;  // 3 * h * w
  int height, width;

  Background(Rng rng, int h, int w) : height(h), width(w) {
    base = hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.15, 0.4), rng.uniform(0.35, 0.65));
    for (auto& ch : waves) {
      for (int i = 0; i < 3; ++i) {
        ch.push_back({rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), rng.uniform(0, 2 * M_PI),
                      rng.uniform(0.02, 0.07)});
      }
    }
    grain.resize(static_cast<std::size_t>(3) * h * w);
    for (auto& g : grain) g = rng.uniform(-0.03, 0.03);
  }

  double value(int c, int y, int x) const {
    double v = base[c];
    for (const auto& wv : waves[c]) v += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
    return v + grain[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  void paint(Image& img) const {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) img.at(c, y, x) = value(c, y, x);
      }
    }
  }
};

void paint_shape(Image& img, const Shape& s, const Appearance& a, BinaryMask* mask) {
  const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - 1.3 * std::max(s.rx, s.ry))));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(s.cx + 1.3 * std::max(s.rx, s.ry))));
  const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - 1.3 * std::max(s.rx, s.ry))));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(s.cy + 1.3 * std::max(s.rx, s.ry))));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!s.contains(x, y)) continue;
      const Rgb c = shade(a, s, x, y);
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[ch];
      if (mask) mask->set(y, x, true);
    }
  }
}

void clear_shape(BinaryMask& mask, const Shape& s) {
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (s.contains(x, y)) mask.set(y, x, false);
    }
  }
}

void finish(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
  img.quantize();
}

Shape random_clutter(Rng& rng, int h, int w) {
  Shape s;
  s.cls = static_cast<ShapeClass>(rng.below(4));
  s.rx = rng.uniform(5, 10);
  s.ry = s.rx * rng.uniform(0.6, 1.0);
  s.cx = rng.uniform(8, w - 8);
  s.cy = rng.uniform(8, h - 8);
  s.angle = rng.uniform(0, M_PI);
  s.lobe_phase = rng.uniform(0, 2 * M_PI);
  return s;
}

Appearance clutter_look(Rng& rng) {
  Appearance a;
  a.hue = rng.uniform(0, 360);
  a.sat = rng.uniform(0.3, 0.7);
  a.val = rng.uniform(0.3, 0.8);
  a.pattern = Pattern::flat;
  return a;
}

Appearance target_look(Rng& rng) {
  Appearance a;
  a.hue = rng.uniform(0, 360);
  a.sat = rng.uniform(0.7, 0.95);
  a.val = rng.uniform(0.75, 0.95);
  a.pattern = rng.bernoulli(0.5) ? Pattern::stripes : Pattern::checker;
  a.period = rng.uniform(5, 8);
  a.orientation = rng.uniform(0, M_PI);
  a.contrast = rng.uniform(0.35, 0.55);
  return a;
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

VideoSequence generate_sequence(const Scenario& sc) {
  sc.validate();
  const int h = sc.height, w = sc.width, n = sc.frames;
  Rng rng = Rng(sc.seed).split(to_string(sc.kind));
  Rng scene_rng = rng.split("scene");
  const Background bg(rng.split("background"), h, w);

  const double unit = std::min(h, w) / 96.0;  // sizes are authored for 96x96
  std::vector<std::pair<Shape, Appearance>> clutter;
  const int n_clutter = 2 + static_cast<int>(scene_rng.below(3));
  for (int i = 0; i < n_clutter; ++i) {
    Shape s = random_clutter(scene_rng, h, w);
    s.rx *= unit;
    s.ry *= unit;
    clutter.emplace_back(s, clutter_look(scene_rng));
  }

  Rng tgt_rng = rng.split("target");
  Appearance look0 = target_look(tgt_rng);
  Shape shape0;
  shape0.cls = tgt_rng.bernoulli(0.5) ? ShapeClass::ellipse : ShapeClass::blob;
  shape0.rx = tgt_rng.uniform(11, 15) * unit;
  shape0.ry = shape0.rx * tgt_rng.uniform(0.75, 1.0);
  shape0.angle = tgt_rng.uniform(0, M_PI);
  shape0.lobe_phase = tgt_rng.uniform(0, 2 * M_PI);

  // Smooth trajectory: centre + sinusoidal excursion, kept inside margins.
  const double margin = 1.2 * shape0.rx + 2;
  double cx0 = tgt_rng.uniform(margin + 8 * unit, w - margin - 8 * unit);
  double cy0 = tgt_rng.uniform(margin + 8 * unit, h - margin - 8 * unit);
  double ax = tgt_rng.uniform(4, 12) * unit, ay = tgt_rng.uniform(4, 12) * unit;
  const double wx = tgt_rng.uniform(0.05, 0.12), wy = tgt_rng.uniform(0.05, 0.12);
  const double px = tgt_rng.uniform(0, 2 * M_PI), py = tgt_rng.uniform(0, 2 * M_PI);
  const double spin = tgt_rng.uniform(-0.02, 0.02);

  // Scenario-specific parameters.
  double hue_drift = 0, aspect_end = 1.0, size_end = 1.0, sat_end = look0.sat;
  // Objects that enter the scene far from the target (drift scenario).
  struct Newcomer {
    Shape shape;
    Appearance look;
    int entry;
    double start_cy;
  };
  std::vector<Newcomer> newcomers;
  Shape companion;
  Appearance companion_look;
  bool has_companion = false;
  if (sc.kind == ScenarioKind::appearance_drift) {
    hue_drift = tgt_rng.uniform(50, 90) * (tgt_rng.bernoulli(0.5) ? 1 : -1);
    aspect_end = tgt_rng.uniform(1.2, 1.5);
    size_end = tgt_rng.uniform(0.85, 1.15);
    sat_end = tgt_rng.uniform(0.5, 0.65);
    // The target keeps to one side and moves mostly vertically; look-alikes
    // of its first-frame appearance enter on the far side.
    shape0.rx = tgt_rng.uniform(10, 13) * unit;
    shape0.ry = shape0.rx * tgt_rng.uniform(0.75, 1.0);
    const bool right = tgt_rng.bernoulli(0.5);
    const double m = 1.2 * shape0.rx + 2;
    cx0 = tgt_rng.uniform(m, std::max(m, 0.2 * w));
    ax = tgt_rng.uniform(2, 4) * unit;
    ay = tgt_rng.uniform(6, 14) * unit;
    Rng nc_rng = tgt_rng.split("newcomers");
    for (int k = 0; k < 2; ++k) {
      Newcomer nc;
      nc.shape.cls = static_cast<ShapeClass>(nc_rng.below(4));
      nc.shape.rx = nc_rng.uniform(5, 7) * unit;
      nc.shape.ry = nc.shape.rx * nc_rng.uniform(0.75, 1.0);
      nc.shape.cx = nc_rng.uniform(0.86 * w, 0.92 * w);
      nc.shape.cy = k == 0 ? nc_rng.uniform(0.2 * h, 0.4 * h) : nc_rng.uniform(0.6 * h, 0.8 * h);
      nc.shape.angle = nc_rng.uniform(0, M_PI);
      nc.shape.lobe_phase = nc_rng.uniform(0, 2 * M_PI);
      nc.look = look0;
      nc.look.hue = look0.hue + nc_rng.uniform(-25, 25);
      nc.look.orientation = nc_rng.uniform(0, M_PI);
      nc.entry = k == 0 ? static_cast<int>(nc_rng.uniform(n / 5.0, 2 * n / 5.0))
                        : static_cast<int>(nc_rng.uniform(n / 2.0, 3 * n / 4.0));
      // Slides in from the nearer horizontal edge.
      nc.start_cy = k == 0 ? -nc.shape.ry : h + nc.shape.ry;
      newcomers.push_back(nc);
    }
    // A flat object next to the target's path in the colour the target
    // drifts towards: background in frame 1, easily absorbed later by
    // self-training.
    companion.cls = static_cast<ShapeClass>(nc_rng.below(4));
    companion.rx = nc_rng.uniform(6, 8) * unit;
    companion.ry = companion.rx * nc_rng.uniform(0.75, 1.0);
    const double reach = 1.3 * shape0.rx * size_end * std::sqrt(aspect_end) + ax;
    companion.cx = cx0 + reach + 3 * unit + 1.1 * companion.rx;
    companion.cy = cy0;
    companion.angle = nc_rng.uniform(0, M_PI);
    companion.lobe_phase = nc_rng.uniform(0, 2 * M_PI);
    companion_look = look0;
    companion_look.pattern = Pattern::flat;
    companion_look.hue = look0.hue + hue_drift;
    companion_look.sat = sat_end;
    has_companion = true;
    if (right) {
      cx0 = w - cx0;
      companion.cx = w - companion.cx;
      for (auto& nc : newcomers) nc.shape.cx = w - nc.shape.cx;
    }
  }
  double ex = 0, ey = 0;
  int entry = -1;
  if (sc.kind == ScenarioKind::distractor_entry) {
    // Small target in the left part of the frame; the look-alike enters from
    // the right edge and parks there.
    shape0.rx = tgt_rng.uniform(9, 11) * unit;
    shape0.ry = shape0.rx * tgt_rng.uniform(0.8, 1.0);
    cx0 = tgt_rng.uniform(1.2 * shape0.rx + 2, 0.2 * w);
    entry = static_cast<int>(tgt_rng.uniform(n / 3.0, n / 2.0));
    ey = tgt_rng.uniform(margin, h - margin);
    ex = w + 0.5 * shape0.rx;
  }
  int occ_begin = -1, occ_end = -1;
  if (sc.kind == ScenarioKind::occlusion) {
    occ_begin = static_cast<int>(tgt_rng.uniform(n / 3.0, n / 2.0));
    occ_end = std::min(n - 2, occ_begin + 5);  // hidden on [occ_begin, occ_end)
  }
  const bool still = sc.kind == ScenarioKind::static_control;

  auto target_at = [&](int t) {
    const double u = n > 1 ? static_cast<double>(t) / (n - 1) : 0.0;
    Shape s = shape0;
    if (still) {
      s.cx = cx0 + 2.0 * unit * std::sin(0.1 * t);
      s.cy = cy0 + 2.0 * unit * std::cos(0.1 * t);
    } else {
      const double axx = sc.kind == ScenarioKind::distractor_entry ? 3.0 * unit : ax;
      s.cx = cx0 + axx * std::sin(wx * t + px);
      s.cy = cy0 + ay * std::sin(wy * t + py);
    }
    const double edge = 1.2 * std::max(shape0.rx, shape0.ry) + 2;
    s.cx = std::clamp(s.cx, edge, w - edge);
    s.cy = std::clamp(s.cy, edge, h - edge);
    const double size = lerp(1.0, size_end, u);
    const double aspect = lerp(1.0, aspect_end, u);
    s.rx = shape0.rx * size * std::sqrt(aspect);
    s.ry = shape0.ry * size / std::sqrt(aspect);
    s.angle = shape0.angle + spin * t;
    Appearance a = look0;
    a.hue = look0.hue + hue_drift * u;
    a.sat = lerp(look0.sat, sat_end, u);
    return std::make_pair(s, a);
  };

  VideoSequence seq;
  char name[64];
  std::snprintf(name, sizeof name, "%s_%06llu", to_string(sc.kind).c_str(),
                static_cast<unsigned long long>(sc.seed));
  seq.name = name;
  Rng noise = rng.split("frame-noise");
  for (int t = 0; t < n; ++t) {
    Image img(h, w);
    bg.paint(img);
    for (const auto& [s, a] : clutter) paint_shape(img, s, a, nullptr);

    if (has_companion) paint_shape(img, companion, companion_look, nullptr);
    BinaryMask gt(h, w);
    BinaryMask distractor(h, w);
    auto [ts, ta] = target_at(t);
    paint_shape(img, ts, ta, &gt);

    for (const auto& nc : newcomers) {
      if (t < nc.entry) continue;
      Shape d = nc.shape;
      const double k = static_cast<double>(t - nc.entry);
      const double step = 2.0 * unit * k;
      d.cy = nc.start_cy < nc.shape.cy ? std::min(nc.start_cy + step, nc.shape.cy)
                                       : std::max(nc.start_cy - step, nc.shape.cy);
      paint_shape(img, d, nc.look, &distractor);
    }
    if (!newcomers.empty()) gt = gt.minus(distractor);
    if (entry >= 0 && t >= entry) {
      Shape d = shape0;
      const double k = static_cast<double>(t - entry);
      d.cx = std::max(ex - 1.5 * unit * k, w - 1.2 * shape0.rx - 2);
      d.cy = ey;
      d.angle = shape0.angle + 0.5;
      paint_shape(img, d, look0, &distractor);
      // The look-alike is drawn on top of the target.
      gt = gt.minus(distractor);
    }
    if (occ_begin >= 0 && t >= occ_begin && t < occ_end) {
      // A shadowed background-textured panel covers the target completely.
      const double r = 1.3 * std::max(ts.rx, ts.ry) + 3;
      for (int y = std::max(0, static_cast<int>(ts.cy - r)); y <= std::min(h - 1, static_cast<int>(ts.cy + r)); ++y) {
        for (int x = std::max(0, static_cast<int>(ts.cx - r)); x <= std::min(w - 1, static_cast<int>(ts.cx + r)); ++x) {
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = 0.9 * bg.value(c, y, x);
          gt.set(y, x, false);
        }
      }
    }
    Rng frame_noise = noise.split(static_cast<std::uint64_t>(t));
    for (auto& v : img.data) v += frame_noise.uniform(-0.01, 0.01);
    finish(img);
    seq.frames.push_back(std::move(img));
    seq.gt_masks.push_back(std::move(gt));
    seq.distractor_masks.push_back(std::move(distractor));
  }
  if (entry >= 0) seq.distractor_entry_frame = entry;
  if (!newcomers.empty()) {
    int first = n;
    for (const auto& nc : newcomers) first = std::min(first, nc.entry);
    seq.distractor_entry_frame = first;
  }
  return seq;
}

std::vector<LabeledImage> generate_objectness_dataset(std::uint64_t seed, int count, int height, int width) {
  if (count < 1) throw ValueError("objectness dataset needs count >= 1");
  std::vector<LabeledImage> out;
  const Rng root = Rng(seed).split("objectness");
  const double unit = std::min(height, width) / 96.0;
  for (int i = 0; i < count; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const Background bg(rng.split("background"), height, width);
    for (int attempt = 0;; ++attempt) {
      Image img(height, width);
      bg.paint(img);
      BinaryMask mask(height, width);
      const int shapes = 1 + static_cast<int>(rng.below(4));
      for (int k = 0; k < shapes; ++k) {
        Shape s;
        s.cls = static_cast<ShapeClass>(rng.below(4));
        s.rx = rng.uniform(8, 22) * unit;
        s.ry = s.rx * rng.uniform(0.5, 1.0);
        s.cx = rng.uniform(0, width);
        s.cy = rng.uniform(0, height);
        s.angle = rng.uniform(0, M_PI);
        s.lobe_phase = rng.uniform(0, 2 * M_PI);
        Appearance a = rng.bernoulli(0.5) ? target_look(rng) : clutter_look(rng);
        a.sat = std::max(a.sat, 0.5);
        // Later shapes occlude earlier ones; the union stays foreground.
        clear_shape(mask, s);
        paint_shape(img, s, a, &mask);
      }
      const double frac = static_cast<double>(mask.count()) / static_cast<double>(mask.size());
      if (frac >= 0.05 && frac <= 0.6) {
        Rng noise = rng.split("noise");
        for (auto& v : img.data) v += noise.uniform(-0.01, 0.01);
        finish(img);
        out.push_back({std::move(img), std::move(mask)});
        break;
      }
      if (attempt > 1000) throw Error("objectness generator failed to meet the foreground fraction bounds");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

AugmentParams sample_augment(Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.scale = rng.uniform(0.7, 1.3);
  p.gamma = std::exp(rng.uniform(std::log(0.7), std::log(1.4)));
  return p;
}

double zoom_source(double o, int n, double scale) {
  return (o + 0.5 - 0.5 * n) / scale + 0.5 * n - 0.5;
}

namespace {

double sample_bilinear(const Image& img, int c, double sy, double sx) {
  if (sy < -0.5 || sy > img.height - 0.5 || sx < -0.5 || sx > img.width - 0.5) return 0.5;
  sy = std::clamp(sy, 0.0, img.height - 1.0);
  sx = std::clamp(sx, 0.0, img.width - 1.0);
  const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double ty = sy - y0, tx = sx - x0;
  const double top = img.at(c, y0, x0) * (1 - tx) + img.at(c, y0, x1) * tx;
  const double bot = img.at(c, y1, x0) * (1 - tx) + img.at(c, y1, x1) * tx;
  return top * (1 - ty) + bot * ty;
}

}  // namespace

Image augment_image(const Image& image, const AugmentParams& p) {
  const int h = image.height, w = image.width;
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const double sy = zoom_source(y, h, p.scale);
    for (int x = 0; x < w; ++x) {
      const int xo = p.flip ? w - 1 - x : x;
      const double sx = zoom_source(x, w, p.scale);
      for (int c = 0; c < 3; ++c) {
        const double v = sample_bilinear(image, c, sy, sx);
        out.at(c, y, xo) = p.gamma == 1.0 ? v : std::pow(std::clamp(v, 0.0, 1.0), p.gamma);
      }
    }
  }
  return out;
}

LabeledImage augment(const Image& image, const BinaryMask& mask, const AugmentParams& p) {
  if (image.height != mask.height() || image.width != mask.width()) {
    throw ShapeError("augment: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " vs mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
  const int h = image.height, w = image.width;
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y) {
    const long sy = std::lround(std::floor(zoom_source(y, h, p.scale) + 0.5));
    for (int x = 0; x < w; ++x) {
      const long sx = std::lround(std::floor(zoom_source(x, w, p.scale) + 0.5));
      const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
      m.set(y, p.flip ? w - 1 - x : x, inside && mask(static_cast<int>(sy), static_cast<int>(sx)));
    }
  }
  return {augment_image(image, p), std::move(m)};
}

LabeledImage augment(const Image& image, const BinaryMask& mask, std::uint64_t seed) {
  Rng rng(seed);
  return augment(image, mask, sample_augment(rng));
}

// ---------------------------------------------------------------------------

namespace {

std::string frame_name(std::size_t t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.%s", t, ext);
  return buf;
}

}  // namespace

void export_sequence(const std::filesystem::path& root, const VideoSequence& seq) {
  seq.validate();
  namespace fs = std::filesystem;
  const fs::path dir = root / seq.name;
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    write_ppm(dir / "frames" / frame_name(t, "ppm"), seq.frames[t]);
    write_pgm(dir / "masks" / frame_name(t, "pgm"), seq.gt_masks[t]);
  }
  const bool has_distractors = std::any_of(seq.distractor_masks.begin(), seq.distractor_masks.end(),
                                           [](const BinaryMask& m) { return !m.empty(); });
  if (has_distractors) {
    fs::create_directories(dir / "distractors", ec);
    if (ec) throw IoError("cannot create " + (dir / "distractors").string());
    for (std::size_t t = 0; t < seq.distractor_masks.size(); ++t) {
      write_pgm(dir / "distractors" / frame_name(t, "pgm"), seq.distractor_masks[t]);
    }
  }
}

VideoSequence load_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  VideoSequence seq;
  seq.name = dir.filename().string();
  if (!fs::is_directory(dir / "frames")) throw IoError(dir.string() + ": missing frames/ directory");
  std::vector<fs::path> frames;
  for (const auto& e : fs::directory_iterator(dir / "frames")) {
    if (e.path().extension() == ".ppm") frames.push_back(e.path());
  }
  std::sort(frames.begin(), frames.end());
  for (const auto& f : frames) {
    seq.frames.push_back(read_ppm(f));
    const auto stem = f.stem().string() + ".pgm";
    const fs::path m = dir / "masks" / stem;
    if (fs::exists(m)) {
      seq.gt_masks.push_back(read_pgm(m));
    } else {
      // Only frame 1 is required; unannotated frames count as empty.
      if (seq.gt_masks.empty()) throw IoError(dir.string() + ": missing ground truth for the first frame");
      seq.gt_masks.emplace_back(seq.frames.back().height, seq.frames.back().width);
    }
    const fs::path d = dir / "distractors" / stem;
    if (fs::exists(d)) {
      seq.distractor_masks.push_back(read_pgm(d));
    } else {
      seq.distractor_masks.emplace_back(seq.frames.back().height, seq.frames.back().width);
    }
  }
  if (seq.frames.empty()) throw IoError(dir.string() + ": no frames");
  for (std::size_t t = 0; t < seq.distractor_masks.size(); ++t) {
    if (!seq.distractor_masks[t].empty()) {
      seq.distractor_entry_frame = static_cast<int>(t);
      break;
    }
  }
  seq.validate();
  return seq;
}

std::vector<VideoSequence> load_sequences(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<VideoSequence> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

}  // namespace onavos
