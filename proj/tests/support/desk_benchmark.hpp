#ifndef SEALFGL_TESTS_DESK_BENCHMARK_HPP
#define SEALFGL_TESTS_DESK_BENCHMARK_HPP

// Desk-scale synthetic benchmark: 10 label-skewed clients, 2 classes, hidden
// width 16, 30 rounds. Mirrors configs/desk.toml.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "sealfgl/diagnostics.hpp"
#include "sealfgl/federation.hpp"
#include "sealfgl/synthetic.hpp"

namespace sealfgl::bench {

struct DeskOptions {
  SyntheticSpec data{.name = "motifs", .num_graphs = 2000, .num_classes = 2};
  std::size_t min_client_graphs = 100;
  std::size_t rounds = 30;
  std::size_t hidden = 16;
  std::size_t layers = 3;
  double beta = 0.01;
  double rho = 0.005;
  double alpha = 0.001;
  std::size_t landscape_resolution = 11;
  double landscape_half_width = 0.5;
  std::size_t batch_size = 16;
  std::size_t jobs = 1;
};

inline ExperimentConfig desk_config(const DeskOptions& o, std::uint64_t seed, Algorithm algo, double alpha) {
  ExperimentConfig e;
  e.datasets.push_back(make_synthetic_dataset(o.data, seed));
  ensure_features(e.datasets.back());
  e.partition = PartitionMode::Dirichlet;
  e.num_clients = 10;
  e.beta = o.beta;
  e.min_client_graphs = o.min_client_graphs;
  e.rounds = o.rounds;
  e.hidden_dim = o.hidden;
  e.layers = o.layers;
  e.seed = seed;
  e.fed.algo = algo;
  e.fed.jobs = o.jobs;
  e.fed.batch_size = o.batch_size;
  e.fed.sam.rho = o.rho;
  e.fed.sam.alpha = alpha;
  return e;
}

/// Median over clients of the effective rank of test-set representations.
inline double median_test_rank(const ExperimentConfig& e, const std::vector<ModelParams>& models) {
  const auto [server, clients] = setup_clients(e);
  std::vector<double> ranks;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const BatchedGraph test = batch_graphs(e.datasets[clients[i].dataset], clients[i].split.test);
    ranks.push_back(static_cast<double>(representation_spectrum(models[i], test).effective_rank));
  }
  std::sort(ranks.begin(), ranks.end());
  const std::size_t n = ranks.size();
  return n % 2 ? ranks[n / 2] : 0.5 * (ranks[n / 2 - 1] + ranks[n / 2]);
}

/// Mean over clients of the flatness score on each client's training split.
inline double mean_flatness(const ExperimentConfig& e, const std::vector<ModelParams>& models, const DeskOptions& o) {
  const auto [server, clients] = setup_clients(e);
  double sum = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const BatchedGraph train = batch_graphs(e.datasets[clients[i].dataset], clients[i].split.train);
    const LandscapeSlice s =
        loss_landscape_slice(models[i], train, o.landscape_half_width, o.landscape_resolution, e.seed);
    sum += flatness_score(s);
  }
  return sum / static_cast<double>(clients.size());
}

struct DeskSeedResult {
  std::uint64_t seed = 0;
  double seal_acc = 0.0;
  double fedavg_acc = 0.0;
  double no_repdec_acc = 0.0;
  double seal_gain = 0.0;
  double rank_repdec = 0.0;
  double rank_no_repdec = 0.0;
  double flat_seal = 0.0;
  double flat_fedavg = 0.0;
};

inline DeskSeedResult run_desk_seed(const DeskOptions& o, std::uint64_t seed) {
  DeskSeedResult r;
  r.seed = seed;
  ExperimentConfig seal = desk_config(o, seed, Algorithm::Seal, o.alpha);
  const ExperimentReport seal_rep = run_experiment(seal);
  ExperimentConfig no_repdec = desk_config(o, seed, Algorithm::Seal, 0.0);
  no_repdec.baseline = false;
  const ExperimentReport no_repdec_rep = run_algorithm(no_repdec);
  ExperimentConfig fedavg = desk_config(o, seed, Algorithm::FedAvg, 0.0);
  fedavg.baseline = false;
  const ExperimentReport fedavg_rep = run_algorithm(fedavg);

  r.seal_acc = seal_rep.summary.avg_test_acc;
  r.seal_gain = seal_rep.summary.avg_gain;
  r.fedavg_acc = client_metrics(test_accuracies(fedavg_rep), test_accuracies(fedavg_rep)).avg_test_acc;
  r.no_repdec_acc = client_metrics(test_accuracies(no_repdec_rep), test_accuracies(no_repdec_rep)).avg_test_acc;
  r.rank_repdec = median_test_rank(seal, seal_rep.final_models);
  r.rank_no_repdec = median_test_rank(no_repdec, no_repdec_rep.final_models);
  r.flat_seal = mean_flatness(seal, seal_rep.final_models, o);
  r.flat_fedavg = mean_flatness(fedavg, fedavg_rep.final_models, o);
  return r;
}

}  // namespace sealfgl::bench

#endif  // SEALFGL_TESTS_DESK_BENCHMARK_HPP
