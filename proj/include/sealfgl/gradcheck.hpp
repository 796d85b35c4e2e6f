#ifndef SEALFGL_GRADCHECK_HPP
#define SEALFGL_GRADCHECK_HPP

// Finite-difference oracle battery for the reverse-mode engine.
//
// Each check records a scalar function of some input tensors, compares the
// reverse-mode gradient of every input against central differences, and
// reports ||g_ad - g_fd|| / max(1e-8, ||g_fd||) per input tensor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sealfgl/autodiff.hpp"
#include "sealfgl/gnn.hpp"
#include "sealfgl/graph.hpp"
#include "sealfgl/rng.hpp"
#include "sealfgl/seal_opt.hpp"

namespace sealfgl {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t configurations = 20;
  double step = 1e-6;
  double tolerance = 1e-5;
  std::optional<ad::Primitive> corrupt;  // negative control only
};

struct GradcheckEntry {
  std::string name;
  double worst_error = 0.0;
  std::size_t checks = 0;
  double tol = 1e-5;

  bool passed() const { return worst_error < tol; }
};

struct GradcheckResult {
  std::vector<GradcheckEntry> entries;
  bool ok() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
  }
};

using TapeFunction = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

inline double relative_error(const Tensor& ad_grad, const Tensor& fd_grad) {
  return frobenius_norm(ad_grad - fd_grad) / std::max(1e-8, frobenius_norm(fd_grad));
}

/// Worst relative error over the inputs of `f`.
inline double check_tape_function(const TapeFunction& f, const std::vector<Tensor>& inputs, double h,
                                  std::optional<ad::Primitive> corrupt = std::nullopt) {
  ad::Tape tape;
  tape.corrupt_reverse_rule(corrupt);
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  const ad::Gradients g = tape.backward(f(tape, vars));

  auto value_at = [&](const std::vector<Tensor>& xs) {
    ad::Tape t;
    std::vector<ad::Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    return t.value(f(t, vs)).item();
  };
  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor fd(inputs[k].rows(), inputs[k].cols());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const double up = value_at(probe);
      probe[k][i] = x0 - h;
      const double down = value_at(probe);
      probe[k][i] = x0;
      fd[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(g[vars[k]], fd));
  }
  return worst;
}

/// Worst relative error over every model tensor of the full local objective.
inline double check_model_objective(const ModelParams& model, const BatchedGraph& batch, double alpha, double eps,
                                    ProximalTerm prox, double h, std::optional<ad::Primitive> corrupt = std::nullopt) {
  // Reverse pass on a tape that may carry the negative-control corruption.
  ModelParams grad;
  {
    ad::Tape tape;
    tape.corrupt_reverse_rule(corrupt);
    const ModelVars vars = bind(tape, model);
    const LossVars lv = forward_loss(tape, vars, batch);
    ad::Var total = lv.loss;
    if (alpha > 0.0) {
      const PenaltyVar p = repdec_penalty(tape, lv.representations, alpha, eps);
      if (!p.skipped) total = tape.add(total, p.value);
    }
    if (prox.anchor && prox.mu > 0.0) {
      for (std::size_t l = 0; l < model.backbone.layers(); ++l) {
        for (bool self : {false, true}) {
          const ad::Var w = self ? vars.self[l] : vars.neighbor[l];
          const Tensor& a = self ? prox.anchor->self[l] : prox.anchor->neighbor[l];
          total = tape.add(total, tape.scale(tape.frobenius_sq(tape.add(w, tape.constant(a * -1.0))), 0.5 * prox.mu));
        }
      }
    }
    grad = collect_gradients(tape.backward(total), vars, model);
  }
  auto value_at = [&](const ModelParams& m) { return evaluate_objective(m, batch, alpha, eps, prox).total(); };
  double worst = 0.0;
  ModelParams probe = model;
  const auto probe_list = tensor_list(probe);
  const auto grad_list = tensor_list(grad);
  for (std::size_t t = 0; t < probe_list.size(); ++t) {
    Tensor& p = *probe_list[t];
    Tensor fd(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x0 = p[i];
      p[i] = x0 + h;
      const double up = value_at(probe);
      p[i] = x0 - h;
      const double down = value_at(probe);
      p[i] = x0;
      fd[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(*grad_list[t], fd));
  }
  return worst;
}

namespace gradcheck_detail {

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

/// Random graph with `n` nodes; node 0 is left isolated when `isolate` is set.
inline Graph random_graph(std::size_t n, std::size_t dim, int label, bool isolate, Rng& rng) {
  std::vector<Edge> edges;
  std::uniform_int_distribution<std::size_t> pick(isolate ? 1 : 0, n - 1);
  const std::size_t start = isolate ? 2 : 1;
  for (std::size_t v = start; v < n; ++v) {
    edges.emplace_back(std::uniform_int_distribution<std::size_t>(start - 1, v - 1)(rng), v);
  }
  for (std::size_t k = 0; k < n / 2; ++k) edges.emplace_back(pick(rng), pick(rng));
  return make_graph(n, edges, random_tensor(n, dim, rng), label);
}

inline TapeFunction squared_after(std::function<ad::Var(ad::Tape&, ad::Var)> op, Tensor offset) {
  return [op = std::move(op), offset = std::move(offset)](ad::Tape& t, std::span<const ad::Var> in) {
    return t.frobenius_sq(t.add(op(t, in[0]), t.constant(offset)));
  };
}

}  // namespace gradcheck_detail

/// Runs the primitive checks and `configurations` random full-model checks.
inline GradcheckResult run_gradcheck(const GradcheckOptions& opt) {
  using namespace gradcheck_detail;
  using ad::Tape;
  using ad::Var;
  std::map<std::string, GradcheckEntry> entries;
  auto record = [&](const std::string& name, double err) {
    auto& e = entries[name];
    e.name = name;
    e.tol = opt.tolerance;
    e.worst_error = std::max(e.worst_error, std::isfinite(err) ? err : INFINITY);
    ++e.checks;
  };

  for (std::size_t cfg = 0; cfg < opt.configurations; ++cfg) {
    Rng rng = make_rng(opt.seed, "gradcheck", cfg);
    std::uniform_int_distribution<std::size_t> small(2, 5);
    const std::size_t m = small(rng) + 1;
    const std::size_t n = small(rng);
    const std::size_t k = small(rng);
    const double h = opt.step;

    record("matmul", check_tape_function(
                         [off = random_tensor(m, k, rng)](Tape& t, std::span<const Var> in) {
                           return t.frobenius_sq(t.add(t.matmul(in[0], in[1]), t.constant(off)));
                         },
                         {random_tensor(m, n, rng), random_tensor(n, k, rng)}, h, opt.corrupt));

    record("add", check_tape_function(
                      [](Tape& t, std::span<const Var> in) {
                        return t.add(t.frobenius_sq(t.add(in[0], in[1])), t.frobenius_sq(t.add(in[0], in[2])));
                      },
                      {random_tensor(m, n, rng), random_tensor(m, n, rng), random_tensor(1, n, rng)}, h, opt.corrupt));

    // Inputs kept away from the kink so central differences stay valid.
    Tensor relu_in = random_tensor(m, n, rng);
    for (double& v : relu_in.data()) v = (v >= 0.0 ? 0.1 : -0.1) + v;
    record("relu", check_tape_function(squared_after([](Tape& t, Var x) { return t.relu(x); }, random_tensor(m, n, rng)),
                                       {relu_in}, h, opt.corrupt));

    const double c = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    record("scale", check_tape_function(squared_after([c](Tape& t, Var x) { return t.scale(x, c); }, random_tensor(m, n, rng)),
                                        {random_tensor(m, n, rng)}, h, opt.corrupt));

    {
      std::vector<std::size_t> rows, segs;
      std::uniform_int_distribution<std::size_t> row_pick(0, m - 1), seg_pick(0, k - 1);
      for (std::size_t p = 0; p < 2 * m; ++p) {
        rows.push_back(row_pick(rng));
        segs.push_back(seg_pick(rng));
      }
      const std::size_t segments = k + 1;  // the last segment stays empty
      record("segment_mean",
             check_tape_function(squared_after([rows, segs, segments](Tape& t, Var x) { return t.segment_mean(x, rows, segs, segments); },
                                               random_tensor(segments, n, rng)),
                                 {random_tensor(m, n, rng)}, h, opt.corrupt));
    }

    record("zscore_cols",
           check_tape_function(squared_after([](Tape& t, Var x) { return t.zscore_cols(x, 1e-5); }, random_tensor(m, n, rng)),
                               {random_tensor(m, n, rng)}, h, opt.corrupt));

    record("covariance_cols",
           check_tape_function(squared_after([](Tape& t, Var x) { return t.covariance_cols(x); }, random_tensor(n, n, rng)),
                               {random_tensor(m, n, rng)}, h, opt.corrupt));

    record("frobenius_sq", check_tape_function([](Tape& t, std::span<const Var> in) { return t.frobenius_sq(in[0]); },
                                               {random_tensor(m, n, rng)}, h, opt.corrupt));

    {
      std::vector<int> labels(m);
      std::uniform_int_distribution<int> lab(0, static_cast<int>(k) - 1);
      for (auto& y : labels) y = lab(rng);
      record("softmax_cross_entropy",
             check_tape_function([labels](Tape& t, std::span<const Var> in) { return t.softmax_cross_entropy(in[0], labels); },
                                 {random_tensor(m, k, rng, 2.0)}, h, opt.corrupt));
    }

    record("repdec_chain",
           check_tape_function(
               [alpha = std::uniform_real_distribution<double>(0.01, 1.0)(rng)](Tape& t, std::span<const Var> in) {
                 return repdec_penalty(t, in[0], alpha, 1e-5).value;
               },
               {random_tensor(m + 2, n, rng)}, h, opt.corrupt));

    // Full model: backbone + head + decorrelation penalty (+ proximal term on odd configs).
    {
      const std::size_t layers = 1 + cfg % 3;
      const std::size_t dv = small(rng);
      const std::size_t d = small(rng) + 1;
      const std::size_t classes = 2 + cfg % 2;
      std::vector<Graph> graphs;
      for (std::size_t gi = 0; gi < 5; ++gi) {
        graphs.push_back(random_graph(3 + small(rng), dv, static_cast<int>(gi % classes), gi == 0, rng));
      }
      Rng init = make_rng(opt.seed, "gradcheck-init", cfg);
      ModelParams model;
      model.backbone = init_backbone({dv, d, layers, classes}, init);
      model.head = init_head(d, classes, init);
      for (double& v : model.head.bias.data()) v = std::normal_distribution<double>(0.0, 0.1)(rng);
      const BatchedGraph batch = batch_graphs(std::span<const Graph>(graphs));
      BackboneParams anchor = init_backbone({dv, d, layers, classes}, init);
      const ProximalTerm prox{cfg % 2 ? &anchor : nullptr, 0.1};
      const double alpha = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
      record("full_model_repdec", check_model_objective(model, batch, alpha, 1e-5, prox, h, opt.corrupt));
    }
  }

  GradcheckResult r;
  for (auto& [name, e] : entries) r.entries.push_back(e);
  return r;
}

}  // namespace sealfgl

#endif  // SEALFGL_GRADCHECK_HPP
