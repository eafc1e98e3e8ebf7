#include "onavos/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "onavos/errors.hpp"

namespace onavos {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalSeedOffset = 0;
constexpr std::uint64_t kTrainSeedOffset = 50000;

std::uint64_t sequence_seed(std::uint64_t master, std::uint64_t offset, int index) {
  return master * 100000 + offset + static_cast<std::uint64_t>(index);
}

void log_line(std::ostream* log, const std::string& s) {
  static std::mutex mu;
  if (!log) return;
  std::lock_guard<std::mutex> lock(mu);
  *log << s << std::endl;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
  if (!f) throw IoError("write failed: " + p.string());
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

std::string frame_file(std::size_t t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.%s", t, ext);
  return buf;
}

}  // namespace

Scenario eval_scenario(const ExperimentConfig& cfg, int index) {
  Scenario sc;
  sc.kind = cfg.data.eval_scenarios[static_cast<std::size_t>(index) % cfg.data.eval_scenarios.size()];
  sc.frames = cfg.data.frames;
  sc.height = cfg.data.height;
  sc.width = cfg.data.width;
  sc.seed = sequence_seed(cfg.seed, kEvalSeedOffset, index);
  sc.d_rel = cfg.adapt.d_rel;
  return sc;
}

Scenario train_scenario(const ExperimentConfig& cfg, int index) {
  Scenario sc = eval_scenario(cfg, index);
  sc.kind = cfg.data.train_scenarios[static_cast<std::size_t>(index) % cfg.data.train_scenarios.size()];
  sc.seed = sequence_seed(cfg.seed, kTrainSeedOffset, index);
  return sc;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset d;
  const Rng master(cfg.seed);
  if (cfg.stages.pretrain_objectness) {
    d.objectness = generate_objectness_dataset(master.split("objectness-data").key(), cfg.data.objectness_images,
                                               cfg.data.height, cfg.data.width);
  }
  if (cfg.data.source == "directory") {
    if (cfg.stages.pretrain_domain) {
      if (cfg.data.train_dir.empty()) throw ValueError("stages.pretrain_domain needs data.train_dir");
      d.train = load_sequences(cfg.data.train_dir);
    }
    d.eval = load_sequences(cfg.data.eval_dir);
    if (d.eval.empty()) throw IoError("no sequences under " + cfg.data.eval_dir);
  } else {
    if (cfg.stages.pretrain_domain) {
      for (int i = 0; i < cfg.data.train_sequences; ++i) d.train.push_back(generate_sequence(train_scenario(cfg, i)));
    }
    for (int i = 0; i < cfg.data.eval_sequences; ++i) d.eval.push_back(generate_sequence(eval_scenario(cfg, i)));
  }
  std::sort(d.eval.begin(), d.eval.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return d;
}

void write_dataset(const ExperimentConfig& cfg, const fs::path& root, bool force) {
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw IoError(root.string() + " already exists and is not empty (use --force to overwrite)");
    for (const char* sub : {"train", "eval", "objectness"}) fs::remove_all(root / sub);
  }
  ExperimentConfig gen = cfg;
  gen.stages.pretrain_objectness = cfg.data.objectness_images > 0;
  gen.stages.pretrain_domain = cfg.data.train_sequences > 0;
  gen.data.source = "synthetic";
  const auto data = build_dataset(gen);
  make_dirs(root / "train");
  make_dirs(root / "eval");
  for (const auto& s : data.train) export_sequence(root / "train", s);
  for (const auto& s : data.eval) export_sequence(root / "eval", s);
  if (!data.objectness.empty()) {
    make_dirs(root / "objectness" / "images");
    make_dirs(root / "objectness" / "masks");
    for (std::size_t i = 0; i < data.objectness.size(); ++i) {
      write_ppm(root / "objectness" / "images" / frame_file(i, "ppm"), data.objectness[i].image);
      write_pgm(root / "objectness" / "masks" / frame_file(i, "pgm"), data.objectness[i].mask);
    }
  }
  write_file(root / "config.txt", cfg.to_text());
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  jobs = std::clamp(jobs, 1, n);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --- stage keys --------------------------------------------------------------

namespace {

std::string keyed(const ExperimentConfig& cfg, std::initializer_list<const char*> prefixes) {
  // Collect the canonical lines whose key starts with one of the prefixes.
  std::istringstream is(cfg.to_text());
  std::string line, out;
  while (std::getline(is, line)) {
    for (const char* p : prefixes) {
      if (line.rfind(p, 0) == 0) {
        out += line + "\n";
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::string pretrain_key(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  // Disabled stages do not depend on their own settings.
  if (!c.stages.pretrain_objectness) c.objectness = ExperimentConfig{}.objectness, c.data.objectness_images = 0;
  if (!c.stages.pretrain_domain) {
    c.domain = ExperimentConfig{}.domain;
    c.data.train_sequences = 0;
    c.data.train_dir.clear();
  }
  return hex64(fnv1a(keyed(c, {"seed ", "arch.", "pretrain.", "stages.pretrain_", "data.source", "data.train",
                               "data.height", "data.width", "data.frames", "data.objectness"})));
}

std::string oneshot_key(const ExperimentConfig& cfg) {
  const std::string own = cfg.stages.one_shot
                              ? keyed(cfg, {"stages.one_shot", "adapt.oneshot_", "adapt.hardest_fraction"})
                              : std::string("stages.one_shot = false\n");
  return hex64(fnv1a(pretrain_key(cfg) + own + keyed(cfg, {"data."})));
}

// --- test-time augmentation decorator -------------------------------------------

ad::Tensor TtaSegmenter::posterior_tensor(const Image& frame) {
  return tta_forward(inner_, frame, variants_, rng_.split(calls_++).key());
}

ProbabilityMap TtaSegmenter::posteriors(const Image& frame) { return foreground_probability(posterior_tensor(frame)); }

// --- pipeline ----------------------------------------------------------------

Pipeline::Pipeline(const Dataset& data, int jobs, std::ostream* log, std::optional<fs::path> checkpoint_dir)
    : data_(data), jobs_(std::max(jobs, 1)), log_(log), ckpt_(std::move(checkpoint_dir)) {}

namespace {

// Returns the cached checkpoint when its key file matches.
std::optional<NetworkState> load_cached(const std::optional<fs::path>& dir, const std::string& stage,
                                        const std::string& key) {
  if (!dir) return std::nullopt;
  const fs::path ck = *dir / (stage + ".onav");
  const fs::path kf = *dir / (stage + ".key");
  if (!fs::exists(ck) || !fs::exists(kf) || read_file(kf) != key + "\n") return std::nullopt;
  return load_checkpoint(ck);
}

void store(const std::optional<fs::path>& dir, const std::string& stage, const std::string& key,
           const NetworkState& net) {
  if (!dir) return;
  make_dirs((*dir / stage).parent_path());
  save_checkpoint(*dir / (stage + ".onav"), net);
  write_file(*dir / (stage + ".key"), key + "\n");
}

}  // namespace

const NetworkState& Pipeline::pretrained(const ExperimentConfig& cfg) {
  const auto key = pretrain_key(cfg);
  if (auto it = pretrained_.find(key); it != pretrained_.end()) return it->second;

  const Rng master(cfg.seed);
  NetworkState net = init_network(cfg.arch, master.split("init").key());

  // Stage keys chain so a stage is reused only with identical predecessors.
  ExperimentConfig obj_only = cfg;
  obj_only.stages.pretrain_domain = false;
  const auto obj_key = pretrain_key(obj_only);
  if (cfg.stages.pretrain_objectness) {
    if (auto cached = load_cached(ckpt_, "objectness", obj_key)) {
      log_line(log_, "pretrain_objectness: reusing checkpoint");
      net = std::move(*cached);
    } else {
      log_line(log_, "pretrain_objectness: " + std::to_string(data_.objectness.size()) + " images x " +
                         std::to_string(cfg.objectness.epochs) + " epochs");
      const auto losses = pretrain_objectness(net, data_.objectness, cfg.objectness, master.split("pretrain-objectness"));
      losses_["objectness"] = losses;
      for (std::size_t e = 0; e < losses.size(); ++e) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "  epoch %zu loss %.5f", e + 1, losses[e]);
        log_line(log_, buf);
      }
      store(ckpt_, "objectness", obj_key, net);
    }
  }
  if (cfg.stages.pretrain_domain) {
    if (auto cached = load_cached(ckpt_, "domain", key)) {
      log_line(log_, "pretrain_domain: reusing checkpoint");
      net = std::move(*cached);
    } else {
      log_line(log_, "pretrain_domain: " + std::to_string(data_.train.size()) + " sequences x " +
                         std::to_string(cfg.domain.epochs) + " epochs");
      const auto losses = pretrain_domain(net, data_.train, cfg.domain, master.split("pretrain-domain"));
      losses_["domain"] = losses;
      for (std::size_t e = 0; e < losses.size(); ++e) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "  epoch %zu loss %.5f", e + 1, losses[e]);
        log_line(log_, buf);
      }
      store(ckpt_, "domain", key, net);
    }
  }
  return pretrained_.emplace(key, std::move(net)).first->second;
}

const std::vector<NetworkState>& Pipeline::one_shot(const ExperimentConfig& cfg) {
  const auto key = oneshot_key(cfg);
  if (auto it = oneshot_.find(key); it != oneshot_.end()) return it->second;
  const NetworkState& base = pretrained(cfg);
  const Rng master(cfg.seed);
  const auto& eval = data_.eval;
  std::vector<NetworkState> nets(eval.size(), base);
  if (cfg.stages.one_shot) {
    log_line(log_, "one_shot: " + std::to_string(eval.size()) + " sequences x " +
                       std::to_string(cfg.adapt.oneshot_steps) + " steps");
    parallel_for(static_cast<int>(eval.size()), jobs_, [&](int i) {
      const auto& seq = eval[static_cast<std::size_t>(i)];
      const std::string stage = "oneshot/" + seq.name;
      if (auto cached = load_cached(ckpt_, stage, key)) {
        nets[static_cast<std::size_t>(i)] = std::move(*cached);
        return;
      }
      Rng rng = master.split("oneshot").split(seq.name);
      nets[static_cast<std::size_t>(i)] = one_shot_finetune(base, seq.frames[0], seq.gt_masks[0], cfg.adapt, rng);
      store(ckpt_, stage, key, nets[static_cast<std::size_t>(i)]);
    });
  }
  return oneshot_.emplace(key, std::move(nets)).first->second;
}

Pipeline::Output Pipeline::run(const ExperimentConfig& cfg, bool record_trace) {
  cfg.validate();
  const auto& start = one_shot(cfg);
  const Rng master(cfg.seed);
  const auto& eval = data_.eval;
  Output out;
  out.results.resize(eval.size());
  out.final_networks = start;
  log_line(log_, std::string(cfg.stages.online_adapt ? "online_adapt" : "evaluate (no adaptation)") + ": " +
                     std::to_string(eval.size()) + " sequences");
  parallel_for(static_cast<int>(eval.size()), jobs_, [&](int i) {
    const auto& seq = eval[static_cast<std::size_t>(i)];
    NetworkState& net = out.final_networks[static_cast<std::size_t>(i)];
    NetworkSegmenter model(net, cfg.adapt.hardest_fraction);
    RunOptions opts;
    opts.adapt = cfg.stages.online_adapt;
    opts.record_trace = record_trace;
    const Rng rng = master.split("online").split(seq.name);
    if (cfg.stages.tta) {
      TtaSegmenter tta(model, cfg.adapt.tta_variants, master.split("tta").split(seq.name));
      out.results[static_cast<std::size_t>(i)] = run_sequence(tta, seq, cfg.adapt, opts, rng);
    } else {
      out.results[static_cast<std::size_t>(i)] = run_sequence(model, seq, cfg.adapt, opts, rng);
    }
    const auto& r = out.results[static_cast<std::size_t>(i)];
    double m = 0.0;
    for (const double v : r.ious) m += v;
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %s  mIoU %.4f  lost %zu", seq.name.c_str(), m / static_cast<double>(r.ious.size()),
                  r.lost_frames.size());
    log_line(log_, buf);
  });
  return out;
}

MetricsReport score(const ExperimentConfig& cfg, const Dataset& data, const std::vector<SequenceResult>& results) {
  if (results.size() != data.eval.size()) throw ShapeError("score: results do not match the evaluation split");
  std::vector<PredictedSequence> preds;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& seq = data.eval[i];
    if (results[i].name != seq.name) throw ShapeError("score: result " + results[i].name + " vs sequence " + seq.name);
    preds.push_back({seq.name, results[i].masks, {seq.gt_masks.begin() + 1, seq.gt_masks.end()}});
  }
  auto report = evaluate_run(std::move(preds), cfg.boundary_tolerance);
  report.config_fingerprint = cfg.fingerprint();
  report.seed = cfg.seed;
  return report;
}

MetricsReport run_experiment(const ExperimentConfig& cfg, const fs::path& out, int jobs, std::ostream* log) {
  cfg.validate();
  make_dirs(out);
  write_file(out / "config.txt", cfg.to_text());
  const auto data = build_dataset(cfg);
  Pipeline pipeline(data, jobs, log, out / "checkpoints");
  const auto result = pipeline.run(cfg);

  const std::string online_key = oneshot_key(cfg) + (cfg.stages.online_adapt ? "+online" : "");
  for (std::size_t i = 0; i < data.eval.size(); ++i) {
    const auto& r = result.results[i];
    const fs::path dir = out / "masks" / r.name;
    fs::remove_all(dir);
    make_dirs(dir);
    for (std::size_t t = 0; t < r.masks.size(); ++t) write_pgm(dir / frame_file(t + 1, "pgm"), r.masks[t]);
    if (cfg.stages.online_adapt) store(out / "checkpoints", "online/" + r.name, online_key, result.final_networks[i]);
  }

  std::ostringstream frames;
  frames << "sequence,frame,iou,updates,lost\n";
  for (const auto& r : result.results) {
    for (std::size_t t = 0; t < r.ious.size(); ++t) {
      const int frame = static_cast<int>(t + 1);
      const bool lost = std::find(r.lost_frames.begin(), r.lost_frames.end(), frame) != r.lost_frames.end();
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%d,%d\n", r.name.c_str(), frame, r.ious[t], r.update_counter[t],
                    lost ? 1 : 0);
      frames << buf;
    }
  }
  write_file(out / "frames.csv", frames.str());

  auto report = score(cfg, data, result.results);
  std::ostringstream csv;
  report.write_csv(csv);
  write_file(out / "report.csv", csv.str());
  return report;
}

// --- ablations -------------------------------------------------------------

const std::vector<Variant>& builtin_variants() {
  static const std::vector<Variant> v = {
      {"no_adaptation", "No adaptation", [](ExperimentConfig& c) { c.stages.online_adapt = false; }},
      {"full_adaptation", "Full adaptation",
       [](ExperimentConfig& c) {
         c.stages.one_shot = true;
         c.stages.online_adapt = true;
       }},
      {"only_negatives", "Only negatives",
       [](ExperimentConfig& c) {
         c.stages.one_shot = true;
         c.stages.online_adapt = true;
         c.adapt.use_positives = false;
         c.adapt.use_negatives = true;
       }},
      {"only_positives", "Only positives",
       [](ExperimentConfig& c) {
         c.stages.one_shot = true;
         c.stages.online_adapt = true;
         c.adapt.use_positives = true;
         c.adapt.use_negatives = false;
       }},
      {"no_first_frame", "No first frame during online adaptation",
       [](ExperimentConfig& c) {
         c.stages.one_shot = true;
         c.stages.online_adapt = true;
         c.adapt.n_curr = c.adapt.n_online;
       }},
  };
  return v;
}

std::vector<Variant> resolve_variants(const ExperimentConfig& cfg, const std::optional<std::vector<std::string>>& names) {
  auto from_config = [&](const std::string& name) -> std::optional<Variant> {
    for (const auto& [vname, deltas] : cfg.variants) {
      if (vname != name) continue;
      auto d = deltas;
      return Variant{vname, vname, [d](ExperimentConfig& c) {
                       for (const auto& [k, v] : d) c.set(k, v);
                     }};
    }
    return std::nullopt;
  };
  std::vector<Variant> out;
  if (!names) {
    out = builtin_variants();
    for (const auto& [vname, _] : cfg.variants) {
      std::erase_if(out, [&](const Variant& v) { return v.name == vname; });
      out.push_back(*from_config(vname));
    }
    return out;
  }
  for (const auto& n : *names) {
    if (auto v = from_config(n)) {
      out.push_back(*v);
      continue;
    }
    const auto& b = builtin_variants();
    const auto it = std::find_if(b.begin(), b.end(), [&](const Variant& v) { return v.name == n; });
    if (it == b.end()) {
      std::string known;
      for (const auto& v : b) known += " " + v.name;
      for (const auto& [vname, _] : cfg.variants) known += " " + vname;
      throw ValueError("unknown ablation variant '" + n + "' (known:" + known + ")");
    }
    out.push_back(*it);
  }
  return out;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<Variant>& variants,
                                      Pipeline& pipeline, const Dataset& data) {
  std::vector<AblationRow> rows;
  auto run_one = [&](const std::string& name, const std::string& label, const ExperimentConfig& c) {
    c.validate();
    const auto out = pipeline.run(c);
    rows.push_back({name, label, score(c, data, out.results)});
  };
  run_one("base", "Base configuration", cfg);
  for (const auto& v : variants) {
    ExperimentConfig c = cfg;
    v.apply(c);
    c.variants.clear();
    run_one(v.name, v.label, c);
  }
  return rows;
}

void print_ablation(std::ostream& os, const std::vector<AblationRow>& rows) {
  std::size_t wn = 7, wl = 5;
  for (const auto& r : rows) {
    wn = std::max(wn, r.name.size());
    wl = std::max(wl, r.label.size());
  }
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s  %-*s  %7s  %8s  %7s  %7s\n", static_cast<int>(wn), "variant",
                static_cast<int>(wl), "label", "J mean", "J recall", "J decay", "F mean");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %-*s  %7.2f  %8.2f  %7.2f  %7.2f\n", static_cast<int>(wn), r.name.c_str(),
                  static_cast<int>(wl), r.label.c_str(), 100 * r.report.j_mean, 100 * r.report.j_recall,
                  100 * r.report.j_decay, 100 * r.report.f_mean);
    os << buf;
  }
}

void write_ablation_csv(std::ostream& os, const ExperimentConfig& cfg, const std::vector<AblationRow>& rows) {
  os << "# config_fingerprint=" << cfg.fingerprint() << "\n# seed=" << cfg.seed << "\n";
  os << "variant,label,J_mean,J_recall,J_decay,F_mean\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f\n", r.name.c_str(), r.label.c_str(), r.report.j_mean,
                  r.report.j_recall, r.report.j_decay, r.report.f_mean);
    os << buf;
  }
}

// --- eval --------------------------------------------------------------------

MetricsReport evaluate_directories(const fs::path& pred, const fs::path& gt, int tol) {
  if (!fs::is_directory(pred)) throw IoError("prediction directory not found: " + pred.string());
  if (!fs::is_directory(gt)) throw IoError("ground-truth directory not found: " + gt.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(pred)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<PredictedSequence> runs;
  for (const auto& d : dirs) {
    PredictedSequence ps;
    ps.name = d.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(d)) {
      if (e.path().extension() == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const fs::path g = gt / ps.name / "masks" / f.filename();
      if (!fs::exists(g)) throw IoError("sequence " + ps.name + ": no ground truth " + g.string());
      ps.masks.push_back(read_pgm(f));
      ps.gt_masks.push_back(read_pgm(g));
    }
    runs.push_back(std::move(ps));
  }
  if (runs.empty()) throw IoError("no predicted sequences under " + pred.string());
  return evaluate_run(std::move(runs), tol);
}

}  // namespace onavos
