// onavos: command-line driver for generation, runs, ablations, evaluation
// and checkpoint inspection.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "onavos/config.hpp"
#include "onavos/errors.hpp"
#include "onavos/harness.hpp"

namespace fs = std::filesystem;
using namespace onavos;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Configuration problems detected before any work starts.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  int jobs = 1;
};

ExperimentConfig resolve_config(const Common& c) {
  try {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    cfg.validate();
    return cfg;
  } catch (const ValueError& e) {
    throw UsageError(e.what());
  }
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
}

int cmd_generate(const Common& c) {
  const auto cfg = resolve_config(c);
  write_dataset(cfg, cfg.output_dir, c.force);
  std::cout << "wrote dataset to " << cfg.output_dir << "\n";
  return 0;
}

int cmd_run(const Common& c) {
  const auto cfg = resolve_config(c);
  const auto report = run_experiment(cfg, cfg.output_dir, c.jobs, &std::cerr);
  report.print_table(std::cout);
  std::cout << "report: " << (fs::path(cfg.output_dir) / "report.csv").string() << "\n";
  return 0;
}

int cmd_ablate(const Common& c, const std::optional<std::string>& variant_list) {
  const auto cfg = resolve_config(c);
  std::vector<Variant> variants;
  try {
    std::optional<std::vector<std::string>> names;
    if (variant_list) {
      names.emplace();
      std::stringstream ss(*variant_list);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) names->push_back(item);
      }
    }
    variants = resolve_variants(cfg, names);
    for (const auto& v : variants) {
      ExperimentConfig probe = cfg;
      v.apply(probe);
      probe.validate();
    }
  } catch (const ValueError& e) {
    throw UsageError(e.what());
  }
  const auto data = build_dataset(cfg);
  fs::create_directories(cfg.output_dir);
  Pipeline pipeline(data, c.jobs, &std::cerr, fs::path(cfg.output_dir) / "checkpoints");
  const auto rows = run_ablation(cfg, variants, pipeline, data);
  print_ablation(std::cout, rows);
  std::ostringstream csv;
  write_ablation_csv(csv, cfg, rows);
  write_text(fs::path(cfg.output_dir) / "ablation.csv", csv.str());
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, int tol, const std::string& csv_path) {
  const auto report = evaluate_directories(pred, gt, tol);
  report.print_table(std::cout);
  if (!csv_path.empty()) {
    std::ostringstream csv;
    report.write_csv(csv);
    write_text(csv_path, csv.str());
  }
  return 0;
}

int cmd_inspect(const std::string& path) {
  const auto net = load_checkpoint(path);
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  std::cout << "checkpoint: " << path << "\n"
            << "arch.widths = " << join(net.arch.widths) << "\n"
            << "arch.dilations = " << join(net.arch.dilations) << "\n"
            << "arch.use_residual_block = " << (net.arch.use_residual_block ? "true" : "false") << "\n"
            << "step_count = " << net.step_count << "\n"
            << "rng_seed = " << net.rng_seed << "\n"
            << "parameters = " << net.parameter_count() << "\n";
  for (const auto& p : net.params) {
    double l2 = 0.0;
    for (const double v : p.value) l2 += v * v;
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %-14s %-16s l2 %.6e", p.name.c_str(), ad::shape_str(p.shape).c_str(),
                  std::sqrt(l2));
    std::cout << buf << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online adaptive video object segmentation at desk scale"};
  app.require_subcommand(1);

  Common common;
  std::uint64_t seed_value = 0;
  auto add_common = [&](CLI::App* sub, bool with_jobs, bool with_force) {
    sub->add_option("--config", common.config, "experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_value, "master seed (overrides the config)");
    sub->add_option("--out", common.out, "output directory (overrides output_dir)");
    if (with_force) sub->add_flag("--force", common.force, "overwrite an existing output directory");
    if (with_jobs) sub->add_option("--jobs", common.jobs, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("generate", "materialize the synthetic train/eval splits");
  add_common(gen, false, true);
  auto* run = app.add_subcommand("run", "run the enabled pipeline stages and score the eval split");
  add_common(run, true, false);
  auto* abl = app.add_subcommand("ablate", "compare named config variants on the same data and seed");
  add_common(abl, true, false);
  std::string variant_list;
  auto* variants_opt = abl->add_option("--variants", variant_list,
                                       "comma-separated variant names (default: all built-in and config variants)");

  auto* ev = app.add_subcommand("eval", "score predicted mask directories against ground truth");
  std::string pred_dir, gt_dir, csv_path;
  int tol = -1;
  ev->add_option("--pred", pred_dir, "predictions: <dir>/<sequence>/NNNNN.pgm")->required();
  ev->add_option("--gt", gt_dir, "ground truth: <dir>/<sequence>/masks/NNNNN.pgm")->required();
  ev->add_option("--tol", tol, "boundary tolerance in pixels (default: 1% of the diagonal)");
  ev->add_option("--csv", csv_path, "also write the report as CSV");

  auto* insp = app.add_subcommand("inspect-checkpoint", "print the contents of a checkpoint");
  std::string ckpt_path;
  insp->add_option("path", ckpt_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  for (auto* sub : {gen, run, abl}) {
    if (sub->parsed() && sub->count("--seed") > 0) common.seed = seed_value;
  }

  try {
    if (gen->parsed()) return cmd_generate(common);
    if (run->parsed()) return cmd_run(common);
    if (abl->parsed()) {
      return cmd_ablate(common, variants_opt->count() ? std::optional<std::string>(variant_list) : std::nullopt);
    }
    if (ev->parsed()) return cmd_eval(pred_dir, gt_dir, tol, csv_path);
    if (insp->parsed()) return cmd_inspect(ckpt_path);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
