#include "onavos/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "onavos/errors.hpp"

namespace onavos {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValueError(key + ": expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValueError(key + ": expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValueError(key + ": expected true or false, got '" + s + "'");
}

std::string fmt_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(parse_int<int>(key, item));
  return out;
}

std::string fmt_kinds(const std::vector<ScenarioKind>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + to_string(v[i]);
  return out;
}

std::vector<ScenarioKind> parse_kinds(const std::string& key, const std::string& s) {
  std::vector<ScenarioKind> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(scenario_kind_from_string(item));
    } catch (const Error&) {
      throw ValueError(key + ": unknown scenario '" + item + "'");
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define DOUBLE_FIELD(name, member)                                                           \
  Field {                                                                                    \
    name, [](const ExperimentConfig& c) { return fmt_double(c.member); },                    \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(name, v); } \
  }
#define INT_FIELD(name, member)                                                                            \
  Field {                                                                                                  \
    name, [](const ExperimentConfig& c) { return std::to_string(c.member); },                              \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_int<decltype(c.member)>(name, v); } \
  }
#define BOOL_FIELD(name, member)                                                            \
  Field {                                                                                   \
    name, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); }   \
  }
#define STRING_FIELD(name, member)                                                  \
  Field {                                                                           \
    name, [](const ExperimentConfig& c) { return c.member; },                       \
        [](ExperimentConfig& c, const std::string& v) { c.member = v; }             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD("seed", seed),
      STRING_FIELD("output_dir", output_dir),

      Field{"arch.widths", [](const ExperimentConfig& c) { return fmt_ints(c.arch.widths); },
            [](ExperimentConfig& c, const std::string& v) { c.arch.widths = parse_ints("arch.widths", v); }},
      Field{"arch.dilations", [](const ExperimentConfig& c) { return fmt_ints(c.arch.dilations); },
            [](ExperimentConfig& c, const std::string& v) { c.arch.dilations = parse_ints("arch.dilations", v); }},
      BOOL_FIELD("arch.use_residual_block", arch.use_residual_block),
      Field{"arch.init", [](const ExperimentConfig& c) { return to_string(c.arch.init); },
            [](ExperimentConfig& c, const std::string& v) { c.arch.init = weight_init_from_string(v); }},

      DOUBLE_FIELD("adapt.alpha", adapt.alpha),
      DOUBLE_FIELD("adapt.beta", adapt.beta),
      DOUBLE_FIELD("adapt.d_rel", adapt.d_rel),
      INT_FIELD("adapt.n_online", adapt.n_online),
      INT_FIELD("adapt.n_curr", adapt.n_curr),
      DOUBLE_FIELD("adapt.online_lr", adapt.online_lr),
      INT_FIELD("adapt.oneshot_steps", adapt.oneshot_steps),
      DOUBLE_FIELD("adapt.oneshot_lr", adapt.oneshot_lr),
      INT_FIELD("adapt.erosion_size", adapt.erosion_size),
      DOUBLE_FIELD("adapt.hardest_fraction", adapt.hardest_fraction),
      BOOL_FIELD("adapt.use_positives", adapt.use_positives),
      BOOL_FIELD("adapt.use_negatives", adapt.use_negatives),
      BOOL_FIELD("adapt.tta_targets", adapt.tta_targets),
      INT_FIELD("adapt.tta_variants", adapt.tta_variants),

      INT_FIELD("pretrain.objectness.epochs", objectness.epochs),
      DOUBLE_FIELD("pretrain.objectness.lr", objectness.lr),
      DOUBLE_FIELD("pretrain.objectness.hardest_fraction", objectness.hardest_fraction),
      BOOL_FIELD("pretrain.objectness.augment", objectness.augment),
      INT_FIELD("pretrain.domain.epochs", domain.epochs),
      DOUBLE_FIELD("pretrain.domain.lr", domain.lr),
      DOUBLE_FIELD("pretrain.domain.hardest_fraction", domain.hardest_fraction),
      BOOL_FIELD("pretrain.domain.augment", domain.augment),

      STRING_FIELD("data.source", data.source),
      STRING_FIELD("data.train_dir", data.train_dir),
      STRING_FIELD("data.eval_dir", data.eval_dir),
      INT_FIELD("data.height", data.height),
      INT_FIELD("data.width", data.width),
      INT_FIELD("data.frames", data.frames),
      INT_FIELD("data.train_sequences", data.train_sequences),
      INT_FIELD("data.eval_sequences", data.eval_sequences),
      Field{"data.train_scenarios", [](const ExperimentConfig& c) { return fmt_kinds(c.data.train_scenarios); },
            [](ExperimentConfig& c, const std::string& v) {
              c.data.train_scenarios = parse_kinds("data.train_scenarios", v);
            }},
      Field{"data.eval_scenarios", [](const ExperimentConfig& c) { return fmt_kinds(c.data.eval_scenarios); },
            [](ExperimentConfig& c, const std::string& v) {
              c.data.eval_scenarios = parse_kinds("data.eval_scenarios", v);
            }},
      INT_FIELD("data.objectness_images", data.objectness_images),

      BOOL_FIELD("stages.pretrain_objectness", stages.pretrain_objectness),
      BOOL_FIELD("stages.pretrain_domain", stages.pretrain_domain),
      BOOL_FIELD("stages.one_shot", stages.one_shot),
      BOOL_FIELD("stages.online_adapt", stages.online_adapt),
      BOOL_FIELD("stages.tta", stages.tta),

      INT_FIELD("metrics.boundary_tolerance", boundary_tolerance),
  };
  return table;
}

#undef DOUBLE_FIELD
#undef INT_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  static const std::string prefix = "variant.";
  if (key.rfind(prefix, 0) == 0) {
    const auto rest = key.substr(prefix.size());
    const auto dot = rest.find('.');
    if (dot == std::string::npos || dot == 0) throw ValueError(key + ": expected variant.<name>.<key>");
    const auto name = rest.substr(0, dot);
    const auto sub = rest.substr(dot + 1);
    if (!find_field(sub) || sub == "output_dir") throw ValueError(key + ": unknown config key '" + sub + "'");
    auto it = std::find_if(variants.begin(), variants.end(), [&](const auto& v) { return v.first == name; });
    if (it == variants.end()) {
      variants.push_back({name, {}});
      it = variants.end() - 1;
    }
    it->second.emplace_back(sub, value);
    return;
  }
  const Field* f = find_field(key);
  if (!f) throw ValueError("unknown config key '" + key + "'");
  f->set(*this, value);
}

void ExperimentConfig::validate() const {
  arch.validate();
  adapt.validate();
  for (const auto* t : {&objectness, &domain}) {
    if (t->epochs < 0) throw ValueError("pretrain epochs must be >= 0");
    if (!(t->hardest_fraction > 0.0 && t->hardest_fraction <= 1.0)) {
      throw ValueError("pretrain hardest_fraction must lie in (0, 1]");
    }
  }
  if (data.source != "synthetic" && data.source != "directory") {
    throw ValueError("data.source must be 'synthetic' or 'directory', got '" + data.source + "'");
  }
  if (data.source == "directory" && data.eval_dir.empty()) throw ValueError("data.eval_dir is required for directory data");
  if (data.source == "synthetic") {
    if (data.height < 32 || data.width < 32) throw ValueError("data: frame dimensions must be >= 32");
    if (data.frames < 2) throw ValueError("data.frames must be >= 2");
    if (data.eval_sequences < 1) throw ValueError("data.eval_sequences must be >= 1");
    if (data.eval_scenarios.empty()) throw ValueError("data.eval_scenarios must not be empty");
    if (stages.pretrain_domain && (data.train_sequences < 1 || data.train_scenarios.empty())) {
      throw ValueError("stages.pretrain_domain needs data.train_sequences >= 1 and a train scenario");
    }
  }
  if (stages.pretrain_objectness && data.objectness_images < 1) {
    throw ValueError("stages.pretrain_objectness needs data.objectness_images >= 1");
  }
  if (stages.online_adapt && !stages.one_shot) {
    throw ValueError(
        "stages.online_adapt requires stages.one_shot: online adaptation starts from the network fine-tuned on "
        "the first frame (stage order: pretrain_objectness -> pretrain_domain -> one_shot -> online_adapt)");
  }
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  for (const auto& [name, deltas] : variants) {
    for (const auto& [k, v] : deltas) out += "variant." + name + "." + k + " = " + v + "\n";
  }
  return out;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValueError("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ValueError& e) {
      throw ValueError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::fingerprint() const {
  ExperimentConfig c = *this;
  c.variants.clear();
  c.output_dir.clear();
  return hex64(fnv1a(c.to_text()));
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return a.to_text() == b.to_text(); }

}  // namespace onavos
