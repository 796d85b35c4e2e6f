#ifndef SEALFGL_IO_HPP
#define SEALFGL_IO_HPP

// CSV and JSON writers for experiment outputs. Every CSV starts with a header
// row; numbers use shortest round-trip formatting so reruns are byte-identical.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sealfgl/diagnostics.hpp"
#include "sealfgl/federation.hpp"

namespace sealfgl {

inline std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline void write_metrics_header(std::ostream& os) {
  os << "round,client,algo,train_loss,val_acc,test_acc,eps_norm,penalty,seed\n";
}

inline void write_metrics_rows(std::ostream& os, const ExperimentReport& r) {
  const std::string algo = algorithm_name(r.algo);
  for (const auto& rm : r.rounds) {
    for (const auto& c : rm.clients) {
      os << rm.round << ',' << c.client << ',' << algo << ',' << fmt_double(c.train_loss) << ','
         << fmt_double(c.val_acc) << ',' << fmt_double(c.test_acc) << ',' << fmt_double(c.eps_norm) << ','
         << fmt_double(c.penalty) << ',' << r.seed << '\n';
    }
  }
}

inline void write_steps_header(std::ostream& os) {
  os << "round,client,epoch,clean_loss,perturbed_loss,penalty,eps_norm,seed\n";
}

inline void write_steps_rows(std::ostream& os, const ExperimentReport& r) {
  for (const auto& s : r.steps) {
    os << s.round << ',' << s.client << ',' << s.epoch << ',' << fmt_double(s.log.clean_loss) << ','
       << fmt_double(s.log.perturbed_loss) << ',' << fmt_double(s.log.penalty) << ',' << fmt_double(s.log.eps_norm)
       << ',' << r.seed << '\n';
  }
}

inline nlohmann::ordered_json report_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["algo"] = algorithm_name(r.algo);
  j["seed"] = r.seed;
  j["rounds"] = r.rounds.size();
  auto& clients = j["clients"] = nlohmann::ordered_json::array();
  for (const auto& c : r.clients) {
    clients.push_back({{"client", c.client},
                       {"dataset", c.dataset},
                       {"num_train", c.num_train},
                       {"best_round", c.best_round},
                       {"best_val_acc", c.best_val_acc},
                       {"test_acc", c.test_acc},
                       {"final_test_acc", c.final_test_acc},
                       {"local_test_acc", c.local_test_acc}});
  }
  j["avg_test_acc"] = r.summary.avg_test_acc;
  j["avg_gain"] = r.summary.avg_gain;
  j["improved_clients"] = r.summary.improved;
  j["num_clients"] = r.summary.clients;
  j["improved_ratio"] = r.summary.improved_ratio;
  return j;
}

/// Per-seed reports plus the mean and population std of the headline columns across seeds.
inline nlohmann::ordered_json experiment_json(std::span<const ExperimentReport> reports) {
  nlohmann::ordered_json j;
  j["format"] = "sealfgl-report";
  j["version"] = 1;
  auto& runs = j["runs"] = nlohmann::ordered_json::array();
  double mean_acc = 0.0, mean_gain = 0.0, mean_ratio = 0.0;
  for (const auto& r : reports) {
    runs.push_back(report_json(r));
    mean_acc += r.summary.avg_test_acc;
    mean_gain += r.summary.avg_gain;
    mean_ratio += r.summary.improved_ratio;
  }
  const double n = reports.empty() ? 1.0 : static_cast<double>(reports.size());
  mean_acc /= n;
  mean_gain /= n;
  mean_ratio /= n;
  double var = 0.0;
  for (const auto& r : reports) var += (r.summary.avg_test_acc - mean_acc) * (r.summary.avg_test_acc - mean_acc);
  j["summary"] = {{"seeds", reports.size()},
                  {"avg_test_acc", mean_acc},
                  {"avg_test_acc_std", std::sqrt(var / n)},
                  {"avg_gain", mean_gain},
                  {"improved_ratio", mean_ratio}};
  return j;
}

inline void write_spectrum_header(std::ostream& os) { os << "round,client,k,sigma_k\n"; }

inline void write_spectrum_rows(std::ostream& os, const SpectrumReport& s) {
  for (std::size_t k = 0; k < s.singular_values.size(); ++k) {
    os << s.round << ',' << s.client << ',' << k << ',' << fmt_double(s.singular_values[k]) << '\n';
  }
}

/// Unit-normalized graph representations, one row per graph, with its label.
inline void write_representations_csv(std::ostream& os, const SpectrumReport& s, std::span<const int> labels) {
  os << "graph,label";
  for (std::size_t j = 0; j < s.unit_representations.cols(); ++j) os << ",z" << j;
  os << '\n';
  for (std::size_t i = 0; i < s.unit_representations.rows(); ++i) {
    os << i << ',' << labels[i];
    for (double v : s.unit_representations.row(i)) os << ',' << fmt_double(v);
    os << '\n';
  }
}

inline void write_landscape_csv(std::ostream& os, const LandscapeSlice& s) {
  os << "a,b,loss\n";
  for (std::size_t i = 0; i < s.coords.size(); ++i)
    for (std::size_t j = 0; j < s.coords.size(); ++j)
      os << fmt_double(s.coords[i]) << ',' << fmt_double(s.coords[j]) << ',' << fmt_double(s.loss(i, j)) << '\n';
}

inline void write_partition_csv(std::ostream& os, const std::vector<ClientState>& clients,
                                std::span<const Dataset> datasets) {
  os << "client,dataset,graph,class,subset\n";
  for (const auto& c : clients) {
    const Dataset& ds = datasets[c.dataset];
    auto emit = [&](const std::vector<std::size_t>& idx, const char* subset) {
      for (std::size_t g : idx) {
        os << c.id << ',' << ds.name << ',' << g << ',' << ds.graphs[g].label << ',' << subset << '\n';
      }
    };
    emit(c.split.train, "train");
    emit(c.split.val, "val");
    emit(c.split.test, "test");
  }
}

}  // namespace sealfgl

#endif  // SEALFGL_IO_HPP
