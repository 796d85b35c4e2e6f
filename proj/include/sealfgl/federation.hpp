#ifndef SEALFGL_FEDERATION_HPP
#define SEALFGL_FEDERATION_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sealfgl/diagnostics.hpp"
#include "sealfgl/gnn.hpp"
#include "sealfgl/graph.hpp"
#include "sealfgl/rng.hpp"
#include "sealfgl/seal_opt.hpp"

namespace sealfgl {

using Shards = std::vector<std::vector<std::size_t>>;

class PartitionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Partitioners

/// Per class, a seeded shuffle dealt round-robin; the dealing position carries
/// over between classes so shard sizes stay within one of each other.
inline Shards partition_iid(const Dataset& ds, std::size_t num_clients, std::uint64_t seed) {
  if (num_clients < 1) throw PartitionError("partition_iid: need at least one client");
  Rng rng = make_rng(seed, stream::partition);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) by_class[static_cast<std::size_t>(ds.graphs[i].label)].push_back(i);
  Shards shards(num_clients);
  std::size_t next = 0;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& members = by_class[k];
    if (members.size() < num_clients) {
      throw PartitionError("partition_iid: class " + std::to_string(k) + " has " + std::to_string(members.size()) +
                           " graphs for " + std::to_string(num_clients) + " clients");
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) {
      shards[next].push_back(i);
      next = (next + 1) % num_clients;
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

/// Draws p ~ Dirichlet(beta * 1_N) in log space so tiny concentrations do not underflow.
inline std::vector<double> sample_dirichlet(std::size_t n, double beta, Rng& rng) {
  // Gamma(beta) = Gamma(beta + 1) * U^(1/beta)
  std::gamma_distribution<double> gamma(beta + 1.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> logs(n);
  for (auto& l : logs) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    l = std::log(gamma(rng)) + std::log(u) / beta;
  }
  const double mx = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) sum += p[i] = std::exp(logs[i] - mx);
  for (auto& v : p) v /= sum;
  return p;
}

/// Label-skewed partition: for each class a Dirichlet(beta) draw over clients
/// and a multinomial assignment of that class's graphs. Clients below
/// `min_size` are then filled one graph at a time, each taken at random from
/// the currently largest client.
inline Shards partition_dirichlet(const Dataset& ds, std::size_t num_clients, double beta, std::uint64_t seed,
                                  std::size_t min_size = 1) {
  if (!(beta > 0.0)) throw PartitionError("partition_dirichlet: beta must be > 0");
  if (num_clients < 1) throw PartitionError("partition_dirichlet: need at least one client");
  if (ds.graphs.size() < num_clients * min_size) {
    throw PartitionError("partition_dirichlet: " + std::to_string(ds.graphs.size()) + " graphs cannot give " +
                         std::to_string(num_clients) + " clients " + std::to_string(min_size) + " each");
  }
  Rng rng = make_rng(seed, stream::partition);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) by_class[static_cast<std::size_t>(ds.graphs[i].label)].push_back(i);
  Shards shards(num_clients);
  for (auto& members : by_class) {
    const auto p = sample_dirichlet(num_clients, beta, rng);
    std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
    for (std::size_t i : members) shards[pick(rng)].push_back(i);
  }
  for (;;) {
    std::size_t needy = num_clients;
    for (std::size_t c = 0; c < num_clients; ++c) {
      if (shards[c].size() < min_size) {
        needy = c;
        break;
      }
    }
    if (needy == num_clients) break;
    std::size_t largest = 0;
    for (std::size_t c = 1; c < num_clients; ++c)
      if (shards[c].size() > shards[largest].size()) largest = c;
    auto& src = shards[largest];
    const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, src.size() - 1)(rng);
    shards[needy].push_back(src[pos]);
    src.erase(src.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

/// One client per dataset. Node features are zero-padded to the widest dataset
/// so the shared backbone sees one input dimension; class counts stay per dataset.
inline std::vector<Dataset> assign_cross_dataset(std::vector<Dataset> datasets) {
  if (datasets.size() < 2) throw PartitionError("assign_cross_dataset: need at least 2 datasets");
  std::size_t dim = 0;
  for (const auto& d : datasets) dim = std::max(dim, d.feature_dim);
  for (auto& d : datasets) pad_features(d, dim);
  return datasets;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Everything a client sends to the server. Classifier heads are private and
/// have no slot here.
struct UploadPayload {
  std::size_t client_id = 0;
  std::size_t num_samples = 0;
  BackboneParams backbone;
};

/// Serialized payload as it would go over a wire: "name rows cols v..." per tensor.
inline std::string payload_bytes(const UploadPayload& p) {
  std::ostringstream os;
  os.precision(17);
  os << "client " << p.client_id << " samples " << p.num_samples << '\n';
  for_each_backbone_tensor(p.backbone, [&](const std::string& name, const Tensor& t) {
    os << name << ' ' << t.rows() << ' ' << t.cols();
    for (double v : t.data()) os << ' ' << v;
    os << '\n';
  });
  return os.str();
}

/// M_i / M in the given order.
inline std::vector<double> aggregation_weights(std::span<const std::size_t> sizes) {
  const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  if (total <= 0.0) throw std::invalid_argument("aggregation_weights: total sample count is zero");
  std::vector<double> w(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) w[i] = static_cast<double>(sizes[i]) / total;
  return w;
}

/// Sample-weighted average of backbones, folded in ascending client-id order
/// as a running mean so identical inputs return bit-identical outputs.
inline BackboneParams aggregate_backbones(std::span<const UploadPayload> payloads) {
  if (payloads.empty()) throw std::invalid_argument("aggregate_backbones: no payloads");
  std::vector<const UploadPayload*> order;
  for (const auto& p : payloads) order.push_back(&p);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });
  std::size_t total = 0;
  for (auto* p : order) {
    if (!p->backbone.same_shape(order.front()->backbone)) {
      throw std::invalid_argument("aggregate_backbones: shape mismatch from client " + std::to_string(p->client_id));
    }
    total += p->num_samples;
  }
  if (total == 0) throw std::invalid_argument("aggregate_backbones: total sample count is zero");

  BackboneParams acc = order.front()->backbone;
  double seen = static_cast<double>(order.front()->num_samples);
  for (std::size_t k = 1; k < order.size(); ++k) {
    const double m = static_cast<double>(order[k]->num_samples);
    if (m == 0.0) continue;
    const double w = m / (seen + m);
    seen += m;
    auto step = [w](Tensor& a, const Tensor& x) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += w * (x[i] - a[i]);
    };
    for (std::size_t l = 0; l < acc.layers(); ++l) {
      step(acc.neighbor[l], order[k]->backbone.neighbor[l]);
      step(acc.self[l], order[k]->backbone.self[l]);
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Experiment configuration

enum class Algorithm { LocalTrain, FedAvg, FedProx, SealB, Seal };
enum class PartitionMode { Iid, Dirichlet, CrossDataset };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::LocalTrain: return "local_train";
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedProx: return "fedprox";
    case Algorithm::SealB: return "seal_b";
    case Algorithm::Seal: return "seal";
  }
  return "unknown";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view s) {
  for (auto a : {Algorithm::LocalTrain, Algorithm::FedAvg, Algorithm::FedProx, Algorithm::SealB, Algorithm::Seal})
    if (algorithm_name(a) == s) return a;
  return std::nullopt;
}

inline std::string partition_mode_name(PartitionMode m) {
  switch (m) {
    case PartitionMode::Iid: return "iid";
    case PartitionMode::Dirichlet: return "dirichlet";
    case PartitionMode::CrossDataset: return "cross_dataset";
  }
  return "unknown";
}

inline std::optional<PartitionMode> parse_partition_mode(std::string_view s) {
  for (auto m : {PartitionMode::Iid, PartitionMode::Dirichlet, PartitionMode::CrossDataset})
    if (partition_mode_name(m) == s) return m;
  return std::nullopt;
}

struct FederationSettings {
  Algorithm algo = Algorithm::Seal;
  SamConfig sam;          // rho/alpha/adaptive are overridden per algorithm, see effective_sam
  double prox_mu = 0.01;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  std::size_t jobs = 1;
};

/// Optimizer settings actually used by `algo`: baselines run with rho = alpha = 0.
inline SamConfig effective_sam(const FederationSettings& s) {
  SamConfig c = s.sam;
  switch (s.algo) {
    case Algorithm::LocalTrain:
    case Algorithm::FedAvg:
    case Algorithm::FedProx:
      c.rho = 0.0;
      c.alpha = 0.0;
      break;
    case Algorithm::SealB: c.adaptive = false; break;
    case Algorithm::Seal: c.adaptive = true; break;
  }
  return c;
}

inline bool communicates(Algorithm a) { return a != Algorithm::LocalTrain; }

// ---------------------------------------------------------------------------
// Client / server state

struct ClientState {
  std::size_t id = 0;
  std::size_t dataset = 0;            // index into the experiment's dataset list
  std::vector<std::size_t> shard;     // graph indices into that dataset
  Split split;                        // subsets of `shard`
  ModelParams model;
  OptimizerState opt;
  std::uint64_t seed = 0;
  bool penalty_skip_logged = false;

  std::size_t num_train() const noexcept { return split.train.size(); }
};

struct ServerState {
  BackboneParams global;
  std::size_t round = 0;
};

struct ClientRoundMetrics {
  std::size_t client = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  double eps_norm = 0.0;
  double penalty = 0.0;
  std::size_t steps = 0;
};

struct RoundMetrics {
  std::size_t round = 0;
  std::vector<ClientRoundMetrics> clients;
};

struct StepRecord {
  std::size_t round = 0;
  std::size_t client = 0;
  std::size_t epoch = 0;
  StepLog log;
};

/// Runs f(i) for i in [0, n) on at most `jobs` threads. The first exception by
/// index is rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Trains one client for `local_epochs` epochs of seeded mini-batches.
inline std::vector<StepRecord> train_client(ClientState& c, const Dataset& ds, const FederationSettings& s,
                                            std::size_t round, const BackboneParams* prox_anchor) {
  const SamConfig cfg = effective_sam(s);
  const ProximalTerm prox{s.algo == Algorithm::FedProx ? prox_anchor : nullptr, s.prox_mu};
  std::vector<StepRecord> records;
  std::vector<std::size_t> order = c.split.train;
  for (std::size_t e = 0; e < s.local_epochs; ++e) {
    Rng rng = make_rng(c.seed, stream::batch, round, e);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += s.batch_size) {
      const std::size_t end = std::min(order.size(), start + s.batch_size);
      const BatchedGraph batch =
          batch_graphs(ds, std::span<const std::size_t>(order.data() + start, end - start));
      const StepLog log = local_step(c.model, c.opt, cfg, graph_objective(batch, cfg.alpha, cfg.zscore_eps, prox));
      if (log.penalty_skipped && !c.penalty_skip_logged) {
        c.penalty_skip_logged = true;
        std::clog << "client " << c.id << ": decorrelation penalty skipped on a batch with fewer than 2 graphs\n";
      }
      records.push_back({round, c.id, e, log});
    }
  }
  return records;
}

/// One communication round: broadcast, local training, backbone aggregation,
/// evaluation of every client on its val/test split.
inline RoundMetrics run_round(ServerState& server, std::vector<ClientState>& clients,
                              std::span<const Dataset> datasets, const FederationSettings& s,
                              std::vector<StepRecord>* step_log = nullptr) {
  const bool comm = communicates(s.algo);
  if (comm) {
    for (auto& c : clients) c.model.backbone = server.global;
  }
  const BackboneParams anchor = server.global;
  std::vector<std::vector<StepRecord>> records(clients.size());
  parallel_for(clients.size(), s.jobs, [&](std::size_t i) {
    records[i] = train_client(clients[i], datasets[clients[i].dataset], s, server.round, &anchor);
  });

  if (comm) {
    std::vector<UploadPayload> payloads;
    payloads.reserve(clients.size());
    for (const auto& c : clients) payloads.push_back({c.id, c.num_train(), c.model.backbone});
    server.global = aggregate_backbones(payloads);
    for (auto& c : clients) c.model.backbone = server.global;
  }

  RoundMetrics rm;
  rm.round = server.round;
  rm.clients.resize(clients.size());
  parallel_for(clients.size(), s.jobs, [&](std::size_t i) {
    const ClientState& c = clients[i];
    const Dataset& ds = datasets[c.dataset];
    ClientRoundMetrics& m = rm.clients[i];
    m.client = c.id;
    m.steps = records[i].size();
    if (records[i].empty()) {
      m.train_loss = evaluate_loss(c.model, batch_graphs(ds, c.split.train));
    } else {
      for (const auto& r : records[i]) {
        m.train_loss += r.log.clean_loss;
        m.eps_norm += r.log.eps_norm;
        m.penalty += r.log.penalty;
      }
      const auto n = static_cast<double>(records[i].size());
      m.train_loss /= n;
      m.eps_norm /= n;
      m.penalty /= n;
    }
    m.val_acc = accuracy(c.model, batch_graphs(ds, c.split.val));
    m.test_acc = accuracy(c.model, batch_graphs(ds, c.split.test));
  });

  if (step_log) {
    for (auto& r : records) step_log->insert(step_log->end(), r.begin(), r.end());
  }
  ++server.round;
  return rm;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  std::vector<Dataset> datasets;  // one for iid/dirichlet, >= 2 for cross_dataset
  PartitionMode partition = PartitionMode::Dirichlet;
  std::size_t num_clients = 10;
  double beta = 0.01;
  std::size_t min_client_graphs = 10;
  SplitRatios ratios;
  FederationSettings fed;
  std::size_t rounds = 200;
  std::size_t hidden_dim = 64;
  std::size_t layers = 3;
  std::uint64_t seed = 0;
  bool baseline = true;    // also run local_train to report gains
  bool keep_steps = false;
};

/// Deterministic client construction: partition, local splits, initialization.
/// Every client starts from the same backbone; heads are seeded per client.
inline std::pair<ServerState, std::vector<ClientState>> setup_clients(const ExperimentConfig& cfg) {
  if (cfg.datasets.empty()) throw std::invalid_argument("experiment: no datasets");
  Shards shards;
  std::vector<std::size_t> owner;
  if (cfg.partition == PartitionMode::CrossDataset) {
    for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
      shards.emplace_back(cfg.datasets[d].graphs.size());
      std::iota(shards.back().begin(), shards.back().end(), std::size_t{0});
      owner.push_back(d);
    }
  } else {
    if (cfg.datasets.size() != 1) throw std::invalid_argument("experiment: iid/dirichlet partitions take one dataset");
    if (cfg.num_clients < 1) throw std::invalid_argument("experiment: need at least one client");
    shards = cfg.partition == PartitionMode::Iid
                 ? partition_iid(cfg.datasets[0], cfg.num_clients, cfg.seed)
                 : partition_dirichlet(cfg.datasets[0], cfg.num_clients, cfg.beta, cfg.seed, cfg.min_client_graphs);
    owner.assign(shards.size(), 0);
  }
  const std::size_t dim = cfg.datasets[0].feature_dim;
  for (const auto& d : cfg.datasets) {
    if (d.feature_dim != dim) throw std::invalid_argument("experiment: datasets disagree on feature_dim");
  }
  Rng init = make_rng(cfg.seed, stream::init);
  ServerState server;
  server.global = init_backbone({dim, cfg.hidden_dim, cfg.layers, 0}, init);
  std::vector<ClientState> clients(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    ClientState& c = clients[i];
    c.id = i;
    c.dataset = owner[i];
    c.shard = shards[i];
    c.seed = derive_seed(cfg.seed, "client", i);
    try {
      c.split = split_indices(c.shard, cfg.ratios, derive_seed(cfg.seed, stream::split, i));
    } catch (const SplitError& e) {
      throw SplitError("client " + std::to_string(i) + ": " + e.what());
    }
    Rng head_rng = make_rng(cfg.seed, stream::init, i + 1);
    c.model.backbone = server.global;
    c.model.head = init_head(cfg.hidden_dim, cfg.datasets[owner[i]].num_classes, head_rng);
    c.opt = OptimizerState::for_model(c.model);
  }
  return {std::move(server), std::move(clients)};
}

struct ClientResult {
  std::size_t client = 0;
  std::string dataset;
  std::size_t num_train = 0;
  std::size_t best_round = 0;
  double best_val_acc = -1.0;
  double test_acc = 0.0;        // at the best validation round
  double final_test_acc = 0.0;
  double local_test_acc = 0.0;  // local-train baseline at its best validation round
};

struct ExperimentReport {
  Algorithm algo = Algorithm::Seal;
  std::uint64_t seed = 0;
  std::vector<ClientResult> clients;
  ClientMetrics summary;
  std::vector<RoundMetrics> rounds;
  std::vector<StepRecord> steps;
  std::vector<ModelParams> final_models;
  std::vector<ModelParams> best_models;  // snapshot at each client's best validation round
};

/// Runs one algorithm for cfg.rounds rounds without the baseline comparison.
inline ExperimentReport run_algorithm(const ExperimentConfig& cfg) {
  cfg.fed.sam.validate();
  auto [server, clients] = setup_clients(cfg);
  ExperimentReport rep;
  rep.algo = cfg.fed.algo;
  rep.seed = cfg.seed;
  rep.clients.resize(clients.size());
  rep.best_models.resize(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    rep.clients[i].client = i;
    rep.clients[i].dataset = cfg.datasets[clients[i].dataset].name;
    rep.clients[i].num_train = clients[i].num_train();
    rep.best_models[i] = clients[i].model;
  }
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    RoundMetrics rm = run_round(server, clients, cfg.datasets, cfg.fed, cfg.keep_steps ? &rep.steps : nullptr);
    for (std::size_t i = 0; i < clients.size(); ++i) {
      const auto& m = rm.clients[i];
      auto& r = rep.clients[i];
      if (m.val_acc >= r.best_val_acc) {
        r.best_val_acc = m.val_acc;
        r.best_round = rm.round;
        r.test_acc = m.test_acc;
        rep.best_models[i] = clients[i].model;
      }
      r.final_test_acc = m.test_acc;
    }
    rep.rounds.push_back(std::move(rm));
  }
  for (const auto& c : clients) rep.final_models.push_back(c.model);
  return rep;
}

inline std::vector<double> test_accuracies(const ExperimentReport& r) {
  std::vector<double> out;
  for (const auto& c : r.clients) out.push_back(c.test_acc);
  return out;
}

/// Runs cfg.fed.algo and, when cfg.baseline is set, the local-train baseline
/// with the same seed (T * E local epochs, no communication) for gains.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentReport rep = run_algorithm(cfg);
  std::vector<double> local;
  if (cfg.fed.algo == Algorithm::LocalTrain) {
    local = test_accuracies(rep);
  } else if (cfg.baseline) {
    ExperimentConfig base = cfg;
    base.fed.algo = Algorithm::LocalTrain;
    base.keep_steps = false;
    local = test_accuracies(run_algorithm(base));
  }
  if (!local.empty()) {
    for (std::size_t i = 0; i < rep.clients.size(); ++i) rep.clients[i].local_test_acc = local[i];
    rep.summary = client_metrics(test_accuracies(rep), local);
  } else {
    const auto accs = test_accuracies(rep);
    rep.summary = client_metrics(accs, accs);
  }
  return rep;
}

}  // namespace sealfgl

#endif  // SEALFGL_FEDERATION_HPP
