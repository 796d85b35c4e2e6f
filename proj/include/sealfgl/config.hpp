#ifndef SEALFGL_CONFIG_HPP
#define SEALFGL_CONFIG_HPP

// Experiment configuration: a flat, typed key/value document in a TOML subset.
//
//   # comment
//   [section]            keys below get the "section." prefix
//   key = "string"       strings are double-quoted
//   key = 0.005          numbers
//   key = true           booleans
//   key = ["a", "b"]     single-line arrays (stored comma-joined)
//
// Overrides use the same dotted keys: --set seal.rho=0.001

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sealfgl/federation.hpp"
#include "sealfgl/graph.hpp"
#include "sealfgl/synthetic.hpp"
#include "sealfgl/tu_dataset.hpp"

namespace sealfgl {

/// Environment variable naming the default data directory.
inline constexpr const char* kDataDirEnv = "SEALFGL_DATA_DIR";

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline std::string strip_comment(std::string_view line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

inline std::string unquote(const std::string& v, const std::string& key) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  if (!v.empty() && v.front() == '"') throw ConfigError(key, "unterminated string");
  return v;
}

/// Normalizes a raw TOML value into the stored string form.
inline std::string normalize_value(const std::string& raw, const std::string& key) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError(key, "missing value");
  if (v.front() == '[') {
    if (v.back() != ']') throw ConfigError(key, "unterminated array");
    std::string out;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      if (!out.empty()) out += ',';
      out += unquote(item, key);
    }
    return out;
  }
  return unquote(v, key);
}

}  // namespace config_detail

class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>") {
    using namespace config_detail;
    Config c;
    std::string prefix;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      const std::string s = trim(strip_comment(line));
      if (s.empty()) continue;
      const std::string where = source + ":" + std::to_string(number);
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError("", where + ": malformed section header");
        prefix = trim(std::string_view(s).substr(1, s.size() - 2));
        if (!prefix.empty()) prefix += '.';
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("", where + ": expected key = value");
      const std::string key = prefix + trim(std::string_view(s).substr(0, eq));
      c.values_[key] = normalize_value(s.substr(eq + 1), key);
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.filename().string());
  }

  /// Applies "key=value". The override is recorded for the run manifest.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + assignment + "' is not key=value");
    const std::string key = config_detail::trim(assignment.substr(0, eq));
    values_[key] = config_detail::normalize_value(assignment.substr(eq + 1), key);
    overrides_.push_back(key + "=" + values_[key]);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  const std::vector<std::string>& overrides() const noexcept { return overrides_; }

  std::string get_string(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    if (fallback) return *fallback;
    throw ConfigError(key, "missing required key");
  }

  double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError(key, "missing required key");
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key, "expected a number, got '" + it->second + "'");
  }

  std::uint64_t get_uint(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError(key, "missing required key");
    }
    return parse_uint(key, it->second);
  }

  bool get_bool(const std::string& key, std::optional<bool> fallback = std::nullopt) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError(key, "missing required key");
    }
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError(key, "expected true or false, got '" + it->second + "'");
  }

  std::vector<std::string> get_list(const std::string& key, std::optional<std::vector<std::string>> fallback = std::nullopt) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      if (fallback) return *fallback;
      throw ConfigError(key, "missing required key");
    }
    std::vector<std::string> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!(item = config_detail::trim(item)).empty()) out.push_back(item);
    return out;
  }

  std::vector<std::uint64_t> get_uint_list(const std::string& key, std::vector<std::uint64_t> fallback) const {
    if (!has(key)) {
      touched_.insert(key);
      return fallback;
    }
    std::vector<std::uint64_t> out;
    for (const auto& s : get_list(key)) out.push_back(parse_uint(key, s));
    return out;
  }

  /// Keys present in the document that no getter has read.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!touched_.count(k)) out.push_back(k);
    return out;
  }

  std::string to_toml() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = \"" << v << "\"\n";
    return os.str();
  }

 private:
  static std::uint64_t parse_uint(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> overrides_;
  mutable std::set<std::string> touched_;
};

// ---------------------------------------------------------------------------
// Config -> experiment

struct RunPlan {
  ExperimentConfig experiment;  // seed filled per run
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir;
  bool step_log = false;
};

inline std::filesystem::path resolve_data_dir(const Config& cfg) {
  const char* env = std::getenv(kDataDirEnv);
  std::filesystem::path dir;
  if (cfg.has("data.dir")) {
    dir = cfg.get_string("data.dir");
    if (dir.is_relative() && env && *env) dir = std::filesystem::path(env) / dir;
  } else if (env && *env) {
    dir = env;
  } else {
    throw ConfigError("data.dir", std::string("missing (set it or ") + kDataDirEnv + ")");
  }
  if (!std::filesystem::is_directory(dir)) throw ConfigError("data.dir", "directory '" + dir.string() + "' does not exist");
  return dir;
}

inline SyntheticSpec synthetic_spec(const Config& cfg, const std::string& name) {
  SyntheticSpec s;
  s.name = name;
  s.num_graphs = cfg.get_uint("data.synthetic.graphs", s.num_graphs);
  s.num_classes = cfg.get_uint("data.synthetic.classes", s.num_classes);
  s.min_nodes = cfg.get_uint("data.synthetic.min_nodes", s.min_nodes);
  s.max_nodes = cfg.get_uint("data.synthetic.max_nodes", s.max_nodes);
  s.node_types = cfg.get_uint("data.synthetic.node_types", s.node_types);
  s.extra_edges = cfg.get_uint("data.synthetic.extra_edges", s.extra_edges);
  s.type_shift = cfg.get_double("data.synthetic.type_shift", s.type_shift);
  s.homophily_gap = cfg.get_double("data.synthetic.homophily_gap", s.homophily_gap);
  return s;
}

/// Loads (or synthesizes) every dataset named in data.names, featurized.
inline std::vector<Dataset> load_datasets(const Config& cfg) {
  const std::string source = cfg.get_string("data.source", std::string("tu"));
  const auto names = cfg.get_list("data.names");
  if (names.empty()) throw ConfigError("data.names", "at least one dataset required");
  const std::size_t cap = cfg.get_uint("data.degree_cap", 0);
  std::vector<Dataset> out;
  if (source == "tu") {
    const auto dir = resolve_data_dir(cfg);
    for (const auto& n : names) {
      std::filesystem::path d = std::filesystem::is_directory(dir / n) ? dir / n : dir;
      try {
        out.push_back(parse_tu_dataset(d, n));
      } catch (const TuFormatError& e) {
        throw ConfigError("data.names", "dataset '" + n + "': " + e.what());
      }
    }
  } else if (source == "synthetic") {
    const std::uint64_t data_seed = cfg.get_uint("data.synthetic.seed", 0);
    for (const auto& n : names) out.push_back(make_synthetic_dataset(synthetic_spec(cfg, n), data_seed));
  } else {
    throw ConfigError("data.source", "expected 'tu' or 'synthetic', got '" + source + "'");
  }
  for (auto& d : out) {
    ensure_features(d, cap);
    d.validate();
  }
  return out;
}

inline RunPlan build_run_plan(const Config& cfg) {
  RunPlan plan;
  ExperimentConfig& e = plan.experiment;
  const std::string mode = cfg.get_string("partition.mode", std::string("dirichlet"));
  const auto pm = parse_partition_mode(mode);
  if (!pm) throw ConfigError("partition.mode", "expected iid, dirichlet or cross_dataset, got '" + mode + "'");
  e.partition = *pm;
  e.num_clients = cfg.get_uint("partition.clients", 10);
  e.beta = cfg.get_double("partition.beta", 0.01);
  e.min_client_graphs = cfg.get_uint("partition.min_client_graphs", 10);
  if (e.partition != PartitionMode::CrossDataset && e.num_clients < 1) {
    throw ConfigError("partition.clients", "must be >= 1");
  }
  if (!(e.beta > 0.0)) throw ConfigError("partition.beta", "must be > 0");

  e.ratios.train = cfg.get_double("split.train", 0.8);
  e.ratios.val = cfg.get_double("split.val", 0.1);
  e.ratios.test = cfg.get_double("split.test", 0.1);

  const std::string algo = cfg.get_string("train.algo", std::string("seal"));
  const auto a = parse_algorithm(algo);
  if (!a) throw ConfigError("train.algo", "unknown algorithm '" + algo + "'");
  e.fed.algo = *a;
  e.rounds = cfg.get_uint("train.rounds", 200);
  e.fed.local_epochs = cfg.get_uint("train.local_epochs", 1);
  e.fed.batch_size = cfg.get_uint("train.batch_size", e.partition == PartitionMode::CrossDataset ? 32 : 64);
  if (e.fed.batch_size == 0) throw ConfigError("train.batch_size", "must be >= 1");
  e.fed.jobs = cfg.get_uint("train.jobs", 1);
  e.fed.sam.lr = cfg.get_double("train.lr", 0.003);
  e.fed.sam.momentum = cfg.get_double("train.momentum", 0.99);
  e.fed.sam.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
  e.fed.sam.rho = cfg.get_double("seal.rho", 0.005);
  e.fed.sam.gamma = cfg.get_double("seal.gamma", 0.1);
  e.fed.sam.alpha = cfg.get_double("seal.alpha", 0.01);
  e.fed.sam.zscore_eps = cfg.get_double("seal.zscore_eps", 1e-5);
  e.fed.prox_mu = cfg.get_double("fedprox.mu", 0.01);
  e.hidden_dim = cfg.get_uint("model.hidden", e.partition == PartitionMode::CrossDataset ? 32 : 64);
  e.layers = cfg.get_uint("model.layers", 3);
  if (e.hidden_dim == 0) throw ConfigError("model.hidden", "must be >= 1");
  if (e.layers == 0) throw ConfigError("model.layers", "must be >= 1");
  try {
    e.fed.sam.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError("seal", err.what());
  }
  e.baseline = cfg.get_bool("run.baseline", true);
  plan.step_log = cfg.get_bool("run.step_log", false);
  e.keep_steps = plan.step_log;
  plan.seeds = cfg.get_uint_list("run.seeds", {0});
  if (plan.seeds.empty()) throw ConfigError("run.seeds", "at least one seed required");
  plan.out_dir = cfg.get_string("run.out", std::string("out"));

  e.datasets = load_datasets(cfg);
  if (e.partition == PartitionMode::CrossDataset) {
    if (e.datasets.size() < 2) throw ConfigError("data.names", "cross_dataset needs at least 2 datasets");
    e.datasets = assign_cross_dataset(std::move(e.datasets));
    e.num_clients = e.datasets.size();
  } else if (e.datasets.size() != 1) {
    throw ConfigError("data.names", partition_mode_name(e.partition) + " partition takes exactly one dataset");
  }

  const auto unused = cfg.unused_keys();
  if (!unused.empty()) throw ConfigError(unused.front(), "unknown key");
  return plan;
}

/// Model shape implied by a run plan for client `client`.
inline ModelShape model_shape(const ExperimentConfig& e, std::size_t num_classes) {
  return {e.datasets.at(0).feature_dim, e.hidden_dim, e.layers, num_classes};
}

}  // namespace sealfgl

#endif  // SEALFGL_CONFIG_HPP
