// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "desk_benchmark.hpp"
#include "oracles.hpp"
#include "sealfgl/federation.hpp"
#include "sealfgl/gradcheck.hpp"
#include "sealfgl/io.hpp"
#include "sealfgl/seal_opt.hpp"
#include "sealfgl/synthetic.hpp"

using namespace sealfgl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string("env -u SEALFGL_DATA_DIR '") + SEALFGL_CLI + "' " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return -1;
  std::array<char, 4096> buf{};
  std::string out;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) out.append(buf.data(), n);
  const int status = pclose(p);
  if (output) *output = out;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> flatten(const ModelParams& m) {
  std::vector<std::vector<double>> out;
  for (const Tensor* t : tensor_list(m)) out.emplace_back(t->data().begin(), t->data().end());
  return out;
}

Dataset labelled(std::size_t per_class, std::size_t classes) {
  Dataset ds;
  ds.name = "labels";
  ds.num_classes = classes;
  ds.feature_dim = 1;
  for (std::size_t k = 0; k < classes; ++k) ds.label_values.push_back(static_cast<long long>(k));
  for (std::size_t i = 0; i < per_class * classes; ++i)
    ds.graphs.push_back(make_graph(1, std::vector<Edge>{}, Tensor(1, 1, 1.0), static_cast<int>(i % classes)));
  return ds;
}

// ---------------------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  std::string out;
  const int code = run_cli("gradcheck --seed 0 --configs 20", &out);
  const double secs = seconds_since(t0);
  const GradcheckResult r = run_gradcheck({});
  double worst = 0.0;
  bool counts = true;
  for (const auto& e : r.entries) {
    worst = std::max(worst, e.worst_error);
    counts = counts && e.checks >= 20;
  }
  const bool ok = code == 0 && r.ok() && counts && worst < 1e-5 && secs < 60.0 && r.entries.size() >= 11;
  report(ok, "gradient correctness",
         std::to_string(r.entries.size()) + " entries x 20 configurations, worst rel err " + fmt(worst) + ", cli exit " +
             std::to_string(code) + ", " + fmt(secs) + " s");
}

void perturbation_saturation() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> log_rho(-6.0, 2.0);
  double worst_seal = 0.0, worst_plain = 0.0;
  bool zero_ok = true;
  for (int draw = 0; draw < 100; ++draw) {
    Rng init(static_cast<std::uint64_t>(draw));
    const std::size_t layers = 1 + static_cast<std::size_t>(draw % 3);
    ModelParams w{init_backbone({3 + static_cast<std::size_t>(draw % 4), 8, layers, 2}, init), init_head(8, 2, init)};
    for (Tensor* t : tensor_list(w)) *t = oracle::random_tensor(t->rows(), t->cols(), rng, -2.0, 2.0);
    ModelParams g = zeros_like(w);
    for (Tensor* t : tensor_list(g)) *t = oracle::random_tensor(t->rows(), t->cols(), rng, -3.0, 3.0);
    const double rho = std::pow(10.0, log_rho(rng));
    const double scale = std::max(rho, 1.0);
    SamConfig seal;
    seal.rho = rho;
    SamConfig plain = seal;
    plain.adaptive = false;
    worst_seal = std::max(worst_seal, std::abs(constraint_value(w, compute_perturbation(w, g, seal), seal) - rho) / scale);
    const double n = global_norm(compute_perturbation(w, g, plain));
    worst_plain = std::max(worst_plain, std::abs(n * n - rho) / scale);
    for (const SamConfig& c : {seal, plain}) zero_ok = zero_ok && global_norm(compute_perturbation(w, zeros_like(w), c)) == 0.0;
  }
  report(worst_seal <= 1e-10 && worst_plain <= 1e-10 && zero_ok, "perturbation saturation",
         "100 draws, worst |c - rho|/max(rho,1): adaptive " + fmt(worst_seal) + ", plain " + fmt(worst_plain) +
             ", zero gradient gives zero: " + (zero_ok ? "yes" : "no"));
}

void scale_invariance() {
  SyntheticSpec spec;
  spec.num_graphs = 64;
  const Dataset ds = make_synthetic_dataset(spec, 11);
  Rng rng(11);
  const ModelParams m{init_backbone({ds.feature_dim, 8, 2, 2}, rng), init_head(8, 2, rng)};
  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const BatchedGraph b = batch_graphs(ds, idx);
  ModelParams s = m;
  s.backbone.neighbor[0] *= 100.0;
  s.backbone.self[0] *= 100.0;
  s.backbone.neighbor[1] *= 0.01;
  s.backbone.self[1] *= 0.01;
  const double loss_diff = std::abs(evaluate_loss(m, b) - evaluate_loss(s, b));
  SamConfig seal;
  seal.gamma = 0.0;
  seal.rho = 0.01;
  SamConfig plain = seal;
  plain.adaptive = false;
  const Objective obj = graph_objective(b, seal.alpha, seal.zscore_eps);
  auto rel = [](double a, double c) { return std::abs(a - c) / std::max(std::abs(a), std::abs(c)); };
  const double adaptive_rel = rel(sharpness_proxy(m, seal, obj), sharpness_proxy(s, seal, obj));
  const double plain_rel = rel(sharpness_proxy(m, plain, obj), sharpness_proxy(s, plain, obj));
  report(loss_diff <= 1e-9 && adaptive_rel <= 1e-6 && plain_rel > 1e-3, "scale invariance",
         "c=100: base loss diff " + fmt(loss_diff) + ", adaptive proxy rel diff " + fmt(adaptive_rel) +
             ", plain proxy rel diff " + fmt(plain_rel));
}

void theorem_oracle() {
  std::mt19937_64 rng(41);
  double worst = 0.0;
  for (std::size_t layers : {1u, 2u, 3u}) {
    for (std::size_t d : {2u, 4u, 8u}) {
      const std::size_t dv = 3;
      std::vector<Tensor> weights;
      std::size_t in = dv;
      for (std::size_t l = 0; l < layers; ++l) {
        weights.push_back(oracle::random_tensor(d, in, rng));
        in = d;
      }
      std::vector<Graph> gs;
      for (std::size_t i = 0; i < 10; ++i) gs.push_back(oracle::random_graph(2 + i % 5, dv, 0, rng));
      const Tensor sigma = covariance_linear_gnn(make_linear_probe(weights, gs));
      std::vector<std::vector<double>> outputs;
      for (const Graph& g : gs) outputs.push_back(oracle::linear_sum_gnn(g, weights));
      const auto ref = oracle::sample_covariance(outputs);
      double diff = 0.0, norm = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          diff += (sigma(i, j) - ref[i][j]) * (sigma(i, j) - ref[i][j]);
          norm += ref[i][j] * ref[i][j];
        }
      worst = std::max(worst, std::sqrt(diff / norm));
    }
  }
  report(worst < 1e-10, "covariance oracle", "L in {1,2,3}, d in {2,4,8}, worst relative Frobenius error " + fmt(worst));
}

void aggregation_exactness() {
  Rng rng(4);
  const BackboneParams b = init_backbone({5, 4, 3, 2}, rng);
  std::vector<UploadPayload> same;
  for (std::size_t i = 0; i < 6; ++i) same.push_back({i, 3 + i, b});
  const BackboneParams agg = aggregate_backbones(same);
  bool idempotent = true;
  for (std::size_t l = 0; l < b.layers(); ++l) idempotent = idempotent && agg.neighbor[l] == b.neighbor[l] && agg.self[l] == b.self[l];

  UploadPayload p0, p1;
  p0.num_samples = 1;
  p0.backbone.neighbor = {Tensor(1, 1, 0.0)};
  p0.backbone.self = {Tensor(1, 1, 0.0)};
  p1 = p0;
  p1.client_id = 1;
  p1.num_samples = 3;
  p1.backbone.neighbor = {Tensor(1, 1, 4.0)};
  p1.backbone.self = {Tensor(1, 1, 4.0)};
  const std::vector<UploadPayload> pair{p0, p1};
  const bool arithmetic = aggregate_backbones(pair).neighbor[0][0] == 3.0;

  const std::vector<std::size_t> sizes{3, 7, 11, 1, 19, 5, 23, 2, 13, 17};
  const auto w = aggregation_weights(sizes);
  double sum = 0.0;
  for (double x : w) sum += x;
  const bool weights = std::abs(sum - 1.0) <= 1e-15;

  // Audit every payload a real round would upload, after local training changed the heads.
  bench::DeskOptions o;
  o.rounds = 1;
  ExperimentConfig e = bench::desk_config(o, 0, Algorithm::Seal, o.alpha);
  auto [server, clients] = setup_clients(e);
  (void)run_round(server, clients, e.datasets, e.fed);
  bool audit = true;
  for (const auto& c : clients) {
    const std::string bytes = payload_bytes({c.id, c.num_train(), c.model.backbone});
    std::ostringstream head_value;
    head_value.precision(17);
    head_value << c.model.head.weight[0];
    audit = audit && bytes.find("head") == std::string::npos && bytes.find(head_value.str()) == std::string::npos;
  }
  report(idempotent && arithmetic && weights && audit, "aggregation exactness",
         std::string("idempotence ") + (idempotent ? "ok" : "broken") + ", (1,3) x (0,4) -> 3 " +
             (arithmetic ? "ok" : "broken") + ", weight sum error " + fmt(std::abs(sum - 1.0)) + ", head-free payloads " +
             (audit ? "ok" : "broken"));
}

void partition_statistics() {
  const Dataset ds = labelled(300, 3);
  bool conserved = true;
  for (double beta : {0.01, 1.0, 100.0}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Shards s = partition_dirichlet(ds, 10, beta, seed);
      std::vector<std::size_t> per_class(3, 0), seen(ds.graphs.size(), 0);
      for (const auto& shard : s)
        for (std::size_t i : shard) {
          ++per_class[static_cast<std::size_t>(ds.graphs[i].label)];
          ++seen[i];
        }
      conserved = conserved && per_class == std::vector<std::size_t>{300, 300, 300} &&
                  std::all_of(seen.begin(), seen.end(), [](std::size_t v) { return v == 1; });
    }
  }
  auto mean_max_fraction = [&](double beta) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      for (const auto& shard : partition_dirichlet(ds, 10, beta, seed)) {
        std::vector<std::size_t> h(3, 0);
        for (std::size_t i : shard) ++h[static_cast<std::size_t>(ds.graphs[i].label)];
        acc += static_cast<double>(*std::max_element(h.begin(), h.end())) / static_cast<double>(shard.size());
        ++n;
      }
    }
    return acc / static_cast<double>(n);
  };
  const double skewed = mean_max_fraction(0.01), mixed = mean_max_fraction(100.0);
  report(conserved && skewed > mixed, "partition statistics",
         std::string("class mass conserved: ") + (conserved ? "yes" : "no") + ", mean max-class fraction beta=0.01 " +
             fmt(skewed) + " vs beta=100 " + fmt(mixed));
}

void reduction_identity() {
  const bench::DeskOptions o;
  ExperimentConfig seal = bench::desk_config(o, 0, Algorithm::Seal, 0.0);
  seal.fed.sam.rho = 0.0;
  seal.keep_steps = true;
  ExperimentConfig avg = bench::desk_config(o, 0, Algorithm::FedAvg, 0.0);
  avg.keep_steps = true;
  ExperimentReport a = run_algorithm(seal);
  const ExperimentReport b = run_algorithm(avg);
  a.algo = b.algo;
  std::ostringstream sa, sb;
  write_metrics_rows(sa, a);
  write_steps_rows(sa, a);
  write_metrics_rows(sb, b);
  write_steps_rows(sb, b);
  bool models = a.final_models.size() == b.final_models.size();
  for (std::size_t i = 0; models && i < a.final_models.size(); ++i)
    models = flatten(a.final_models[i]) == flatten(b.final_models[i]);
  const bool same = sa.str() == sb.str() && models && a.rounds.size() == 30;
  report(same, "reduction identity",
         std::to_string(a.rounds.size()) + " rounds, " + std::to_string(a.steps.size()) + " local steps; trajectories " +
             (sa.str() == sb.str() ? "identical" : "differ") + ", final models " + (models ? "identical" : "differ"));
}

void concurrency_determinism() {
  const fs::path dir = fs::temp_directory_path() / "sealfgl_acceptance_jobs";
  fs::remove_all(dir);
  const std::string cfg = std::string("'") + SEALFGL_CONFIGS + "/desk.toml'";
  const auto t0 = Clock::now();
  const int c1 = run_cli("run --config " + cfg + " --jobs 1 --out '" + (dir / "j1").string() + "'");
  const int c8 = run_cli("run --config " + cfg + " --jobs 8 --out '" + (dir / "j8").string() + "'");
  const std::string r1 = slurp(dir / "j1" / "report.json"), r8 = slurp(dir / "j8" / "report.json");
  const bool ok = c1 == 0 && c8 == 0 && !r1.empty() && r1 == r8;
  report(ok, "determinism under concurrency",
         "desk config, --jobs 1 vs --jobs 8: exit " + std::to_string(c1) + "/" + std::to_string(c8) + ", report.json " +
             (r1 == r8 ? "byte-identical" : "differs") + " (" + std::to_string(r1.size()) + " bytes), " +
             fmt(seconds_since(t0)) + " s");
}

void desk_benchmark() {
  const bench::DeskOptions o;
  std::vector<bench::DeskSeedResult> results;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    results.push_back(bench::run_desk_seed(o, seed));
    const auto& r = results.back();
    std::cout << "  seed " << seed << ": seal acc " << r.seal_acc << ", fedavg acc " << r.fedavg_acc << ", gain "
              << r.seal_gain << ", median rank " << r.rank_repdec << " vs " << r.rank_no_repdec << " without decorrelation"
              << ", flatness " << r.flat_seal << " vs " << r.flat_fedavg << " fedavg" << std::endl;
  }
  const double secs = seconds_since(t0);
  std::size_t rank_wins = 0, flat_wins = 0;
  double seal_acc = 0.0, fedavg_acc = 0.0, gain = 0.0;
  for (const auto& r : results) {
    rank_wins += r.rank_repdec >= r.rank_no_repdec;
    flat_wins += r.flat_seal <= r.flat_fedavg;
    seal_acc += r.seal_acc / 5.0;
    fedavg_acc += r.fedavg_acc / 5.0;
    gain += r.seal_gain / 5.0;
  }
  report(rank_wins >= 4 && secs < 600.0, "collapse mitigation",
         "median effective rank with decorrelation >= without in " + std::to_string(rank_wins) + "/5 seeds, " +
             fmt(secs) + " s for the whole benchmark");
  report(seal_acc >= fedavg_acc && gain > 0.0 && flat_wins >= 3 && secs < 1200.0, "optimizer direction",
         "mean test acc seal " + fmt(seal_acc) + " vs fedavg " + fmt(fedavg_acc) + ", mean gain vs local " + fmt(gain) +
             ", flatter than fedavg in " + std::to_string(flat_wins) + "/5 seeds, " + fmt(secs) + " s");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void()>>> checks{
      {"gradient correctness", gradient_correctness},
      {"perturbation saturation", perturbation_saturation},
      {"scale invariance", scale_invariance},
      {"covariance oracle", theorem_oracle},
      {"aggregation exactness", aggregation_exactness},
      {"partition statistics", partition_statistics},
      {"reduction identity", reduction_identity},
      {"determinism under concurrency", concurrency_determinism},
      {"desk benchmark", desk_benchmark},
  };
  for (const auto& [name, check] : checks) {
    try {
      check();
    } catch (const std::exception& e) {
      report(false, name, std::string("threw: ") + e.what());
    }
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failures ? 1 : 0;
}
