#ifndef SEALFGL_SYNTHETIC_HPP
#define SEALFGL_SYNTHETIC_HPP

// Seeded synthetic graph-classification datasets.
//
// Each graph grows as a random tree with extra chords. Nodes carry one of
// `node_types` types (one-hot features). Classes differ in two weak signals:
// a shifted type distribution and how strongly new nodes attach to earlier
// nodes of the same type (homophily). Neither signal alone separates the
// classes for small graphs, so accuracy improves with more training data.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sealfgl/graph.hpp"
#include "sealfgl/rng.hpp"

namespace sealfgl {

struct SyntheticSpec {
  std::string name = "synthetic";
  std::size_t num_graphs = 1000;
  std::size_t num_classes = 2;
  std::size_t min_nodes = 8;
  std::size_t max_nodes = 20;
  std::size_t node_types = 4;
  std::size_t extra_edges = 3;
  double type_shift = 0.15;      // how far class type distributions drift apart
  double homophily_gap = 0.35;   // attachment preference difference between classes
  bool balanced = true;          // round-robin labels instead of uniform draws
};

inline Dataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw std::invalid_argument("synthetic: need at least 2 classes");
  if (spec.node_types < 2) throw std::invalid_argument("synthetic: need at least 2 node types");
  if (spec.min_nodes < 2 || spec.max_nodes < spec.min_nodes) throw std::invalid_argument("synthetic: bad node range");
  Rng rng = make_rng(seed, stream::synthetic, fnv1a(spec.name));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> size_dist(spec.min_nodes, spec.max_nodes);
  std::uniform_int_distribution<std::size_t> class_dist(0, spec.num_classes - 1);

  // Class-conditional type weights and homophily levels.
  std::vector<std::vector<double>> type_weights(spec.num_classes, std::vector<double>(spec.node_types, 1.0));
  std::vector<double> homophily(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const double frac = static_cast<double>(c) / static_cast<double>(spec.num_classes - 1);
    for (std::size_t t = 0; t < spec.node_types; ++t) {
      const double pos = static_cast<double>(t) / static_cast<double>(spec.node_types - 1) - 0.5;
      type_weights[c][t] = 1.0 + spec.type_shift * (2.0 * frac - 1.0) * pos * 2.0;
    }
    homophily[c] = 0.5 - spec.homophily_gap / 2.0 + spec.homophily_gap * frac;
  }

  Dataset ds;
  ds.name = spec.name;
  ds.num_classes = spec.num_classes;
  ds.feature_dim = spec.node_types;
  for (std::size_t c = 0; c < spec.num_classes; ++c) ds.label_values.push_back(static_cast<long long>(c));
  ds.graphs.reserve(spec.num_graphs);
  for (std::size_t gi = 0; gi < spec.num_graphs; ++gi) {
    const std::size_t c = spec.balanced ? gi % spec.num_classes : class_dist(rng);
    const std::size_t n = size_dist(rng);
    std::discrete_distribution<std::size_t> type_dist(type_weights[c].begin(), type_weights[c].end());
    std::vector<std::size_t> type(n);
    for (auto& t : type) t = type_dist(rng);
    std::vector<Edge> edges;
    for (std::size_t v = 1; v < n; ++v) {
      std::vector<std::size_t> same;
      for (std::size_t u = 0; u < v; ++u)
        if (type[u] == type[v]) same.push_back(u);
      std::size_t parent;
      if (!same.empty() && unif(rng) < homophily[c]) {
        parent = same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)];
      } else {
        parent = std::uniform_int_distribution<std::size_t>(0, v - 1)(rng);
      }
      edges.emplace_back(parent, v);
    }
    std::uniform_int_distribution<std::size_t> node_dist(0, n - 1);
    for (std::size_t k = 0; k < spec.extra_edges; ++k) edges.emplace_back(node_dist(rng), node_dist(rng));
    Tensor feats(n, spec.node_types);
    for (std::size_t v = 0; v < n; ++v) feats(v, type[v]) = 1.0;
    ds.graphs.push_back(make_graph(n, edges, std::move(feats), static_cast<int>(c)));
  }
  // Shuffle so class order carries no information about position.
  std::shuffle(ds.graphs.begin(), ds.graphs.end(), rng);
  return ds;
}

}  // namespace sealfgl

#endif  // SEALFGL_SYNTHETIC_HPP
