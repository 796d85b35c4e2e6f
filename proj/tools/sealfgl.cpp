// sealfgl command-line harness: run, partition, diagnose, gradcheck.
//
// Exit codes: 0 ok, 1 validation/oracle failure, 2 usage/config error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sealfgl/checkpoint.hpp"
#include "sealfgl/config.hpp"
#include "sealfgl/diagnostics.hpp"
#include "sealfgl/federation.hpp"
#include "sealfgl/gradcheck.hpp"
#include "sealfgl/io.hpp"

#ifndef SEALFGL_BUILD_ID
#define SEALFGL_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using namespace sealfgl;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = Config::load(path);
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;
};

int cmd_run(const RunArgs& a) {
  Config cfg = load_config(a.config, a.overrides);
  if (a.jobs) cfg.apply_override("train.jobs=" + std::to_string(*a.jobs));
  if (a.out) cfg.apply_override("run.out=\"" + *a.out + "\"");
  RunPlan plan = build_run_plan(cfg);
  fs::create_directories(plan.out_dir / "checkpoints");

  nlohmann::ordered_json manifest;
  manifest["config_file"] = a.config;
  manifest["config"] = cfg.values();
  manifest["overrides"] = cfg.overrides();
  manifest["build"] = SEALFGL_BUILD_ID;
  manifest["seeds"] = plan.seeds;
  manifest["out_dir"] = plan.out_dir.string();
  manifest["started_at"] = utc_timestamp();
  open_out(plan.out_dir / "manifest.json") << manifest.dump(2) << '\n';

  std::ofstream metrics = open_out(plan.out_dir / "metrics.csv");
  write_metrics_header(metrics);
  std::optional<std::ofstream> steps;
  if (plan.step_log) {
    steps.emplace(open_out(plan.out_dir / "steps.csv"));
    write_steps_header(*steps);
  }
  std::vector<ExperimentReport> reports;
  for (std::uint64_t seed : plan.seeds) {
    plan.experiment.seed = seed;
    ExperimentReport rep = run_experiment(plan.experiment);
    write_metrics_rows(metrics, rep);
    if (steps) write_steps_rows(*steps, rep);
    for (std::size_t i = 0; i < rep.final_models.size(); ++i) {
      save_checkpoint(plan.out_dir / "checkpoints" /
                          ("seed" + std::to_string(seed) + "_client" + std::to_string(i) + ".ckpt"),
                      rep.final_models[i]);
    }
    std::cout << algorithm_name(rep.algo) << " seed " << seed << ": avg test acc " << rep.summary.avg_test_acc
              << ", avg gain " << rep.summary.avg_gain << ", improved " << rep.summary.improved << "/"
              << rep.summary.clients << '\n';
    rep.final_models.clear();
    rep.best_models.clear();
    rep.steps.clear();
    reports.push_back(std::move(rep));
  }
  open_out(plan.out_dir / "report.json") << experiment_json(reports).dump(2) << '\n';
  return kOk;
}

struct PartitionArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_partition(const PartitionArgs& a) {
  Config cfg = load_config(a.config, a.overrides);
  RunPlan plan = build_run_plan(cfg);
  plan.experiment.seed = a.seed.value_or(plan.seeds.front());
  const auto [server, clients] = setup_clients(plan.experiment);
  std::ofstream os = open_out(a.out);
  write_partition_csv(os, clients, plan.experiment.datasets);
  for (const auto& c : clients) {
    std::vector<std::size_t> hist(plan.experiment.datasets[c.dataset].num_classes, 0);
    for (std::size_t g : c.shard) ++hist[static_cast<std::size_t>(plan.experiment.datasets[c.dataset].graphs[g].label)];
    std::cout << "client " << c.id << ":";
    for (std::size_t h : hist) std::cout << ' ' << h;
    std::cout << '\n';
  }
  return kOk;
}

struct DiagnoseArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string what;
  std::string out = ".";
  std::optional<std::size_t> client;
  std::optional<std::uint64_t> seed;
  std::size_t round = 0;
  std::size_t resolution = 21;
  double half_width = 1.0;
  double tau = kDefaultRankTau;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  if (a.what != "spectrum" && a.what != "landscape") {
    std::cerr << "error: --what must be spectrum or landscape\n";
    return kUsage;
  }
  Config cfg = load_config(a.config, a.overrides);
  RunPlan plan = build_run_plan(cfg);
  plan.experiment.seed = a.seed.value_or(plan.seeds.front());
  const ModelParams model = load_checkpoint(a.checkpoint);

  const Dataset* ds = &plan.experiment.datasets.front();
  std::vector<std::size_t> indices(ds->graphs.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  if (a.client) {
    const auto [server, clients] = setup_clients(plan.experiment);
    if (*a.client >= clients.size()) throw ConfigError("--client", "no client " + std::to_string(*a.client));
    ds = &plan.experiment.datasets[clients[*a.client].dataset];
    indices = clients[*a.client].split.test;
  }
  check_checkpoint_shape(model, model_shape(plan.experiment, ds->num_classes));
  const BatchedGraph data = batch_graphs(*ds, indices);
  fs::create_directories(a.out);
  if (a.what == "spectrum") {
    SpectrumReport s = representation_spectrum(model, data, a.tau);
    s.client = a.client.value_or(0);
    s.round = a.round;
    std::ofstream os = open_out(fs::path(a.out) / "spectrum.csv");
    write_spectrum_header(os);
    write_spectrum_rows(os, s);
    std::ofstream reps = open_out(fs::path(a.out) / "representations.csv");
    write_representations_csv(reps, s, data.labels);
    std::cout << "effective rank " << s.effective_rank << " of " << s.singular_values.size() << '\n';
  } else {
    const LandscapeSlice s = loss_landscape_slice(model, data, a.half_width, a.resolution, plan.experiment.seed);
    std::ofstream os = open_out(fs::path(a.out) / "landscape.csv");
    write_landscape_csv(os, s);
    std::cout << "center loss " << s.center_loss << ", flatness " << flatness_score(s) << '\n';
  }
  return kOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t configurations = 20;
  std::string corrupt;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  GradcheckOptions opt;
  opt.seed = a.seed;
  opt.configurations = a.configurations;
  if (!a.corrupt.empty()) {
    opt.corrupt = ad::primitive_from_name(a.corrupt);
    if (!opt.corrupt) {
      std::cerr << "error: unknown primitive '" << a.corrupt << "'\n";
      return kUsage;
    }
  }
  const auto start = std::chrono::steady_clock::now();
  const GradcheckResult r = run_gradcheck(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& e : r.entries) {
    std::cout << (e.passed() ? "ok   " : "FAIL ") << std::left << std::setw(24) << e.name << " worst rel err "
              << std::scientific << std::setprecision(3) << e.worst_error << " over " << std::defaultfloat << e.checks
              << " checks\n";
  }
  std::cout << "gradcheck " << (r.ok() ? "passed" : "FAILED") << " in " << std::fixed << std::setprecision(2) << secs
            << " s\n";
  return r.ok() ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated graph learning simulator with sharpness-aware local training"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment from a config file");
  run_cmd->add_option("--config,-c", run.config, "Config file")->required();
  run_cmd->add_option("--set", run.overrides, "Override key=value (repeatable)");
  run_cmd->add_option("--jobs,-j", run.jobs, "Maximum concurrently training clients");
  run_cmd->add_option("--out,-o", run.out, "Output directory (overrides run.out)");

  PartitionArgs part;
  auto* part_cmd = app.add_subcommand("partition", "Write the client shard listing as CSV");
  part_cmd->add_option("--config,-c", part.config, "Config file")->required();
  part_cmd->add_option("--set", part.overrides, "Override key=value (repeatable)");
  part_cmd->add_option("--out,-o", part.out, "Output CSV")->required();
  part_cmd->add_option("--seed", part.seed, "Seed (default: first of run.seeds)");

  DiagnoseArgs diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "Representation spectrum or loss landscape of a checkpoint");
  diag_cmd->add_option("--config,-c", diag.config, "Config file")->required();
  diag_cmd->add_option("--set", diag.overrides, "Override key=value (repeatable)");
  diag_cmd->add_option("--checkpoint", diag.checkpoint, "Checkpoint file")->required();
  diag_cmd->add_option("--what", diag.what, "spectrum or landscape")->required();
  diag_cmd->add_option("--out,-o", diag.out, "Output directory");
  diag_cmd->add_option("--client", diag.client, "Use this client's test split instead of the whole dataset");
  diag_cmd->add_option("--seed", diag.seed, "Partition seed (default: first of run.seeds)");
  diag_cmd->add_option("--round", diag.round, "Round number written to spectrum.csv");
  diag_cmd->add_option("--resolution", diag.resolution, "Landscape grid points per axis (odd)");
  diag_cmd->add_option("--half-width", diag.half_width, "Landscape grid half width");
  diag_cmd->add_option("--tau", diag.tau, "Relative effective-rank threshold");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every reverse rule");
  gc_cmd->add_option("--seed", gc.seed, "Seed");
  gc_cmd->add_option("--configs", gc.configurations, "Random configurations");
  gc_cmd->add_option("--corrupt-rule", gc.corrupt, "Negative control: perturb one primitive's reverse rule")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*part_cmd) return cmd_partition(part);
    if (*diag_cmd) return cmd_diagnose(diag);
    if (*gc_cmd) return cmd_gradcheck(gc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
