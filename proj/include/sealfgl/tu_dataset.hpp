#ifndef SEALFGL_TU_DATASET_HPP
#define SEALFGL_TU_DATASET_HPP

// Reader and writer for the TUDataset sparse text layout:
//
//   {name}_A.txt                one "i, j" node pair per line (1-based)
//   {name}_graph_indicator.txt  graph id of node i on line i (1-based)
//   {name}_graph_labels.txt     one integer label per graph
//   {name}_node_labels.txt      optional, one integer per node (one-hot encoded)
//   {name}_node_attributes.txt  optional, comma-separated reals per node (used as-is)
//
// Tokens may be separated by commas and/or whitespace.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sealfgl/graph.hpp"

namespace sealfgl {

class TuFormatError : public std::runtime_error {
 public:
  TuFormatError(const std::filesystem::path& file, std::size_t line, const std::string& what)
      : std::runtime_error(file.filename().string() + (line ? ":" + std::to_string(line) : std::string()) + ": " +
                           what),
        file_(file),
        line_(line) {}

  const std::filesystem::path& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::filesystem::path file_;
  std::size_t line_;
};

namespace tu_detail {

struct Line {
  std::size_t number;
  std::vector<std::string_view> tokens;
};

inline std::vector<std::string_view> tokenize(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (i < s.size()) {
    while (i < s.size() && is_sep(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_sep(s[j])) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

class TextFile {
 public:
  explicit TextFile(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) throw TuFormatError(path_, 0, "cannot open required file");
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      raw_.push_back(line);
      numbers_.push_back(number);
    }
    for (std::size_t i = 0; i < raw_.size(); ++i) {
      auto toks = tokenize(raw_[i]);
      if (!toks.empty()) lines_.push_back({numbers_[i], std::move(toks)});
    }
  }

  const std::filesystem::path& path() const noexcept { return path_; }
  const std::vector<Line>& lines() const noexcept { return lines_; }

  long long integer(const Line& l, std::size_t k) const {
    if (k >= l.tokens.size()) throw TuFormatError(path_, l.number, "expected at least " + std::to_string(k + 1) + " tokens");
    const auto tok = l.tokens[k];
    long long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      throw TuFormatError(path_, l.number, "expected integer, got '" + std::string(tok) + "'");
    }
    return v;
  }

  double real(const Line& l, std::size_t k) const {
    const std::string tok(l.tokens.at(k));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw TuFormatError(path_, l.number, "expected real number, got '" + tok + "'");
    return v;
  }

 private:
  std::filesystem::path path_;
  std::vector<std::string> raw_;  // owns the storage behind the token views
  std::vector<std::size_t> numbers_;
  std::vector<Line> lines_;
};

inline std::filesystem::path file_for(const std::filesystem::path& dir, const std::string& name, const char* suffix) {
  return dir / (name + "_" + suffix + ".txt");
}

}  // namespace tu_detail

/// Parses a TUDataset directory. Node indices become 0-based, graph labels are
/// remapped to dense [0, K) in ascending order of the original values. Without
/// node labels or attributes the dataset has feature_dim 0; see ensure_features.
inline Dataset parse_tu_dataset(const std::filesystem::path& directory, const std::string& name) {
  using namespace tu_detail;
  const TextFile indicator(file_for(directory, name, "graph_indicator"));
  const TextFile graph_labels(file_for(directory, name, "graph_labels"));
  const TextFile adjacency(file_for(directory, name, "A"));

  const std::size_t num_graphs = graph_labels.lines().size();
  const std::size_t num_nodes = indicator.lines().size();

  std::vector<long long> raw_labels;
  raw_labels.reserve(num_graphs);
  for (const auto& l : graph_labels.lines()) raw_labels.push_back(graph_labels.integer(l, 0));
  std::vector<long long> label_values = raw_labels;
  std::sort(label_values.begin(), label_values.end());
  label_values.erase(std::unique(label_values.begin(), label_values.end()), label_values.end());

  // node -> (graph, local index)
  std::vector<std::size_t> node_graph(num_nodes);
  std::vector<std::size_t> node_local(num_nodes);
  std::vector<std::size_t> graph_sizes(num_graphs, 0);
  for (std::size_t v = 0; v < num_nodes; ++v) {
    const auto& l = indicator.lines()[v];
    const long long gid = indicator.integer(l, 0);
    if (gid < 1 || static_cast<std::size_t>(gid) > num_graphs) {
      throw TuFormatError(indicator.path(), l.number,
                          "node " + std::to_string(v + 1) + " assigned to no graph (graph id " + std::to_string(gid) +
                              ", " + std::to_string(num_graphs) + " graphs labeled)");
    }
    node_graph[v] = static_cast<std::size_t>(gid - 1);
    node_local[v] = graph_sizes[node_graph[v]]++;
  }
  for (std::size_t g = 0; g < num_graphs; ++g) {
    if (graph_sizes[g] == 0) {
      throw TuFormatError(indicator.path(), 0, "graph " + std::to_string(g + 1) + " has no nodes");
    }
  }

  std::vector<std::vector<Edge>> raw_edges(num_graphs);
  for (const auto& l : adjacency.lines()) {
    const long long a = adjacency.integer(l, 0);
    const long long b = adjacency.integer(l, 1);
    for (long long x : {a, b}) {
      if (x < 1 || static_cast<std::size_t>(x) > num_nodes) {
        throw TuFormatError(adjacency.path(), l.number,
                            "edge references unknown node " + std::to_string(x) + " (dataset has " +
                                std::to_string(num_nodes) + " nodes)");
      }
    }
    const auto u = static_cast<std::size_t>(a - 1);
    const auto v = static_cast<std::size_t>(b - 1);
    if (node_graph[u] != node_graph[v]) {
      throw TuFormatError(adjacency.path(), l.number, "edge crosses graphs " + std::to_string(node_graph[u] + 1) +
                                                          " and " + std::to_string(node_graph[v] + 1));
    }
    raw_edges[node_graph[u]].emplace_back(node_local[u], node_local[v]);
  }

  // Node features: real attributes first, then one-hot node labels.
  std::vector<std::vector<double>> node_feats(num_nodes);
  std::size_t attr_dim = 0;
  const auto attr_path = file_for(directory, name, "node_attributes");
  if (std::filesystem::exists(attr_path)) {
    const TextFile attrs(attr_path);
    if (attrs.lines().size() != num_nodes) {
      throw TuFormatError(attr_path, 0, std::to_string(attrs.lines().size()) + " attribute rows for " +
                                            std::to_string(num_nodes) + " nodes");
    }
    for (std::size_t v = 0; v < num_nodes; ++v) {
      const auto& l = attrs.lines()[v];
      if (v == 0) attr_dim = l.tokens.size();
      if (l.tokens.size() != attr_dim) {
        throw TuFormatError(attr_path, l.number, "expected " + std::to_string(attr_dim) + " attributes, got " +
                                                     std::to_string(l.tokens.size()));
      }
      for (std::size_t k = 0; k < attr_dim; ++k) node_feats[v].push_back(attrs.real(l, k));
    }
  }
  std::size_t label_dim = 0;
  const auto nl_path = file_for(directory, name, "node_labels");
  if (std::filesystem::exists(nl_path)) {
    const TextFile nls(nl_path);
    if (nls.lines().size() != num_nodes) {
      throw TuFormatError(nl_path, 0, std::to_string(nls.lines().size()) + " node labels for " +
                                          std::to_string(num_nodes) + " nodes");
    }
    std::vector<long long> raw(num_nodes);
    for (std::size_t v = 0; v < num_nodes; ++v) raw[v] = nls.integer(nls.lines()[v], 0);
    std::vector<long long> values = raw;
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    label_dim = values.size();
    for (std::size_t v = 0; v < num_nodes; ++v) {
      const auto idx = static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), raw[v]) - values.begin());
      for (std::size_t k = 0; k < label_dim; ++k) node_feats[v].push_back(k == idx ? 1.0 : 0.0);
    }
  }
  const std::size_t dim = attr_dim + label_dim;

  Dataset ds;
  ds.name = name;
  ds.num_classes = label_values.size();
  ds.feature_dim = dim;
  ds.label_values = label_values;
  ds.graphs.resize(num_graphs);
  std::vector<Tensor> feats;
  feats.reserve(num_graphs);
  for (std::size_t g = 0; g < num_graphs; ++g) feats.emplace_back(graph_sizes[g], dim);
  for (std::size_t v = 0; v < num_nodes; ++v) {
    for (std::size_t k = 0; k < dim; ++k) feats[node_graph[v]](node_local[v], k) = node_feats[v][k];
  }
  for (std::size_t g = 0; g < num_graphs; ++g) {
    const auto label = static_cast<int>(std::lower_bound(label_values.begin(), label_values.end(), raw_labels[g]) -
                                        label_values.begin());
    ds.graphs[g] = make_graph(graph_sizes[g], raw_edges[g], std::move(feats[g]), label);
  }
  return ds;
}

/// Writes `ds` in TUDataset layout. Features go to node_attributes (full
/// precision); labels are written as their original values when known.
inline void write_tu_dataset(const Dataset& ds, const std::filesystem::path& directory, const std::string& name) {
  using tu_detail::file_for;
  std::filesystem::create_directories(directory);
  std::ofstream a(file_for(directory, name, "A"));
  std::ofstream ind(file_for(directory, name, "graph_indicator"));
  std::ofstream gl(file_for(directory, name, "graph_labels"));
  std::optional<std::ofstream> attrs;
  if (ds.feature_dim > 0) attrs.emplace(file_for(directory, name, "node_attributes"));
  if (!a || !ind || !gl || (attrs && !*attrs)) {
    throw std::runtime_error("write_tu_dataset: cannot write into " + directory.string());
  }
  char buf[32];
  std::size_t offset = 1;
  for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
    const Graph& g = ds.graphs[gi];
    for (auto [u, v] : g.edges) {
      a << (u + offset) << ", " << (v + offset) << '\n';
      a << (v + offset) << ", " << (u + offset) << '\n';
    }
    for (std::size_t v = 0; v < g.node_count; ++v) {
      ind << (gi + 1) << '\n';
      if (!attrs) continue;
      for (std::size_t k = 0; k < g.feature_dim(); ++k) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), g.features(v, k));
        if (k) *attrs << ", ";
        attrs->write(buf, end - buf);
      }
      *attrs << '\n';
    }
    const auto dense = static_cast<std::size_t>(g.label);
    gl << (dense < ds.label_values.size() ? ds.label_values[dense] : static_cast<long long>(g.label)) << '\n';
    offset += g.node_count;
  }
}

}  // namespace sealfgl

#endif  // SEALFGL_TU_DATASET_HPP
