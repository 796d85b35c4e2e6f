#ifndef SEALFGL_GRAPH_HPP
#define SEALFGL_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sealfgl/rng.hpp"
#include "sealfgl/tensor.hpp"

namespace sealfgl {

using Edge = std::pair<std::size_t, std::size_t>;

/// Undirected attributed graph. Each undirected edge is stored once as (min, max).
struct Graph {
  std::size_t node_count = 0;
  std::vector<Edge> edges;
  Tensor features;  // node_count x feature_dim
  int label = 0;

  std::size_t feature_dim() const noexcept { return features.cols(); }

  std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> deg(node_count, 0);
    for (auto [u, v] : edges) {
      ++deg[u];
      ++deg[v];
    }
    return deg;
  }
};

/// Canonicalizes and validates an edge list: endpoints ordered, duplicates and
/// self-loops dropped, every endpoint checked against node_count.
inline std::vector<Edge> canonical_edges(std::size_t node_count, std::span<const Edge> raw) {
  std::vector<Edge> out;
  out.reserve(raw.size());
  for (auto [u, v] : raw) {
    if (u >= node_count || v >= node_count) {
      throw std::out_of_range("edge (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                              std::to_string(node_count) + " nodes");
    }
    if (u == v) continue;
    out.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline Graph make_graph(std::size_t node_count, std::span<const Edge> edges, Tensor features, int label) {
  if (features.rows() != node_count && !(features.empty() && features.cols() == 0)) {
    throw std::invalid_argument("make_graph: features have " + std::to_string(features.rows()) + " rows for " +
                                std::to_string(node_count) + " nodes");
  }
  if (features.rows() != node_count) features = Tensor(node_count, 0);
  return Graph{node_count, canonical_edges(node_count, edges), std::move(features), label};
}

struct Dataset {
  std::string name;
  std::vector<Graph> graphs;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  // Original label value for each dense class index (ascending).
  std::vector<long long> label_values;

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& g : graphs) ++counts[static_cast<std::size_t>(g.label)];
    return counts;
  }

  void validate() const {
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      const auto& g = graphs[i];
      if (g.label < 0 || static_cast<std::size_t>(g.label) >= num_classes) {
        throw std::invalid_argument(name + ": graph " + std::to_string(i) + " label " + std::to_string(g.label) +
                                    " outside [0, " + std::to_string(num_classes) + ")");
      }
      if (g.features.rows() != g.node_count || g.feature_dim() != feature_dim) {
        throw std::invalid_argument(name + ": graph " + std::to_string(i) + " features " +
                                    g.features.shape_string() + " inconsistent with feature_dim " +
                                    std::to_string(feature_dim));
      }
    }
  }
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

class SplitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Seeded shuffle of `indices` into train/val/test. val and test get
/// floor(ratio * n); the remainder goes to train. Either of them being empty
/// is an error.
inline Split split_indices(std::span<const std::size_t> indices, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw SplitError("split: ratios must be positive and sum to 1");
  }
  const std::size_t n = indices.size();
  if (n < 3) throw SplitError("split: need at least 3 graphs, got " + std::to_string(n));
  // The 1e-9 slack keeps products like 0.1 * 30 from flooring to 2.
  const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * static_cast<double>(n) + 1e-9));
  if (n_val == 0 || n_test == 0) {
    throw SplitError("split: val/test empty for " + std::to_string(n) + " graphs");
  }
  std::vector<std::size_t> order(indices.begin(), indices.end());
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = n - n_val - n_test;
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

inline Split split_dataset(const Dataset& ds, SplitRatios ratios, std::uint64_t seed) {
  std::vector<std::size_t> all(ds.graphs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return split_indices(all, ratios, seed);
}

/// Row v is the one-hot of min(degree(v), cap) over cap + 1 buckets.
inline Tensor degree_features(const Graph& g, std::size_t cap) {
  if (cap == 0) throw std::invalid_argument("degree_features: cap must be >= 1");
  Tensor f(g.node_count, cap + 1);
  const auto deg = g.degrees();
  for (std::size_t v = 0; v < g.node_count; ++v) f(v, std::min(deg[v], cap)) = 1.0;
  return f;
}

/// Nearest-rank 95th percentile of node degrees across the dataset, at least 1.
inline std::size_t auto_degree_cap(const Dataset& ds) {
  std::vector<std::size_t> all;
  for (const auto& g : ds.graphs) {
    auto d = g.degrees();
    all.insert(all.end(), d.begin(), d.end());
  }
  if (all.empty()) return 1;
  std::sort(all.begin(), all.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(all.size())));
  return std::max<std::size_t>(1, all[std::max<std::size_t>(rank, 1) - 1]);
}

/// Replaces missing node features with degree one-hots. `cap` of 0 selects auto_degree_cap.
inline void ensure_features(Dataset& ds, std::size_t cap = 0) {
  if (ds.feature_dim > 0) return;
  if (cap == 0) cap = auto_degree_cap(ds);
  for (auto& g : ds.graphs) g.features = degree_features(g, cap);
  ds.feature_dim = cap + 1;
}

/// Zero-pads node features on the right to `dim` columns.
inline void pad_features(Dataset& ds, std::size_t dim) {
  if (dim < ds.feature_dim) {
    throw std::invalid_argument("pad_features: cannot shrink " + ds.name + " from " + std::to_string(ds.feature_dim));
  }
  if (dim == ds.feature_dim) return;
  for (auto& g : ds.graphs) {
    Tensor f(g.node_count, dim);
    for (std::size_t v = 0; v < g.node_count; ++v)
      for (std::size_t j = 0; j < g.feature_dim(); ++j) f(v, j) = g.features(v, j);
    g.features = std::move(f);
  }
  ds.feature_dim = dim;
}

/// Disjoint union of graphs with a node -> graph membership vector.
struct BatchedGraph {
  Tensor features;
  std::vector<Edge> edges;
  std::vector<std::size_t> membership;
  std::vector<int> labels;
  std::size_t num_graphs = 0;
  // Both directions of every edge, as (source row, destination segment) pairs.
  std::vector<std::size_t> message_src;
  std::vector<std::size_t> message_dst;

  std::size_t num_nodes() const noexcept { return features.rows(); }
};

inline BatchedGraph batch_graphs(std::span<const Graph* const> graphs) {
  if (graphs.empty()) throw std::invalid_argument("batch_graphs: empty graph list");
  const std::size_t dim = graphs.front()->feature_dim();
  std::size_t total = 0;
  std::size_t total_edges = 0;
  for (const Graph* g : graphs) {
    if (g->feature_dim() != dim) {
      throw std::invalid_argument("batch_graphs: feature_dim mismatch " + std::to_string(g->feature_dim()) +
                                  " vs " + std::to_string(dim));
    }
    total += g->node_count;
    total_edges += g->edges.size();
  }
  BatchedGraph b;
  b.features = Tensor(total, dim);
  b.edges.reserve(total_edges);
  b.membership.reserve(total);
  b.labels.reserve(graphs.size());
  b.message_src.reserve(2 * total_edges);
  b.message_dst.reserve(2 * total_edges);
  std::size_t offset = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    for (std::size_t v = 0; v < g.node_count; ++v) {
      std::copy(g.features.row(v).begin(), g.features.row(v).end(), b.features.row(offset + v).begin());
      b.membership.push_back(gi);
    }
    for (auto [u, v] : g.edges) {
      b.edges.emplace_back(u + offset, v + offset);
      b.message_src.push_back(u + offset);
      b.message_dst.push_back(v + offset);
      b.message_src.push_back(v + offset);
      b.message_dst.push_back(u + offset);
    }
    b.labels.push_back(g.label);
    offset += g.node_count;
  }
  b.num_graphs = graphs.size();
  return b;
}

inline BatchedGraph batch_graphs(std::span<const Graph> graphs) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return batch_graphs(std::span<const Graph* const>(ptrs));
}

inline BatchedGraph batch_graphs(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(indices.size());
  for (std::size_t i : indices) ptrs.push_back(&ds.graphs.at(i));
  return batch_graphs(std::span<const Graph* const>(ptrs));
}

}  // namespace sealfgl

#endif  // SEALFGL_GRAPH_HPP
