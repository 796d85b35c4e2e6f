#ifndef SEALFGL_SEAL_OPT_HPP
#define SEALFGL_SEAL_OPT_HPP

// Sharpness-aware local optimizer with representation decorrelation.
//
// Radius convention: the perturbation satisfies ||A^{-1} eps||_2^2 <= rho, so
// rho is a *squared* radius and eps scales with sqrt(rho). Most SAM code uses
// ||eps|| <= rho instead; do not mix the two when porting hyperparameters.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "sealfgl/autodiff.hpp"
#include "sealfgl/gnn.hpp"
#include "sealfgl/graph.hpp"

namespace sealfgl {

struct SamConfig {
  double rho = 0.005;
  double gamma = 0.1;
  bool adaptive = true;  // false selects the plain (identity-operator) variant
  double weight_decay = 1e-4;
  double alpha = 0.01;
  double lr = 0.003;
  double momentum = 0.99;
  double zscore_eps = 1e-5;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SamConfig: " + m); };
    if (!(rho >= 0.0)) fail("rho must be >= 0");
    if (!(gamma >= 0.0)) fail("gamma must be >= 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(alpha >= 0.0)) fail("alpha must be >= 0");
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
    if (!(zscore_eps >= 0.0)) fail("zscore_eps must be >= 0");
  }
};

/// Momentum buffers, one per model tensor.
struct OptimizerState {
  ModelParams velocity;

  static OptimizerState for_model(const ModelParams& m) { return {zeros_like(m)}; }
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Representation decorrelation

struct PenaltyVar {
  ad::Var value;
  bool skipped = false;  // fewer than two representations
};

/// (alpha / d^2) * ||C||_F^2 where C is the covariance of the column-wise
/// z-scored representations, i.e. their correlation matrix.
inline PenaltyVar repdec_penalty(ad::Tape& tape, ad::Var reps, double alpha, double eps) {
  const Tensor& h = tape.value(reps);
  if (h.rows() < 2) return {tape.constant(Tensor::scalar(0.0)), true};
  const double d = static_cast<double>(h.cols());
  const ad::Var corr = tape.covariance_cols(tape.zscore_cols(reps, eps));
  return {tape.scale(tape.frobenius_sq(corr), alpha / (d * d)), false};
}

// ---------------------------------------------------------------------------
// Local objective

struct ObjectiveValue {
  double data_loss = 0.0;
  double penalty = 0.0;
  double proximal = 0.0;
  bool penalty_skipped = false;
  ModelParams gradient;

  double total() const { return data_loss + penalty + proximal; }
};

/// Loss and gradient at a parameter point. Tests inject closed-form probes here.
using Objective = std::function<ObjectiveValue(const ModelParams&)>;

struct ProximalTerm {
  const BackboneParams* anchor = nullptr;
  double mu = 0.0;
};

/// Cross-entropy on `batch` plus the decorrelation penalty and, optionally,
/// (mu/2) ||backbone - anchor||^2.
inline ObjectiveValue evaluate_objective(const ModelParams& m, const BatchedGraph& batch, double alpha, double eps,
                                         ProximalTerm prox = {}) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, m);
  const LossVars lv = forward_loss(tape, vars, batch);
  ad::Var total = lv.loss;
  ObjectiveValue out;
  out.data_loss = tape.value(lv.loss).item();
  if (alpha > 0.0) {
    const PenaltyVar pen = repdec_penalty(tape, lv.representations, alpha, eps);
    out.penalty_skipped = pen.skipped;
    if (!pen.skipped) {
      out.penalty = tape.value(pen.value).item();
      total = tape.add(total, pen.value);
    }
  }
  if (prox.anchor && prox.mu > 0.0) {
    if (!prox.anchor->same_shape(m.backbone)) throw std::invalid_argument("proximal anchor shape mismatch");
    std::optional<ad::Var> acc;
    for (std::size_t l = 0; l < m.backbone.layers(); ++l) {
      for (bool self : {false, true}) {
        const ad::Var w = self ? vars.self[l] : vars.neighbor[l];
        const Tensor& a = self ? prox.anchor->self[l] : prox.anchor->neighbor[l];
        const ad::Var sq = tape.frobenius_sq(tape.add(w, tape.constant(a * -1.0)));
        acc = acc ? tape.add(*acc, sq) : sq;
      }
    }
    const ad::Var term = tape.scale(*acc, 0.5 * prox.mu);
    out.proximal = tape.value(term).item();
    total = tape.add(total, term);
  }
  const ad::Gradients g = tape.backward(total);
  out.gradient = collect_gradients(g, vars, m);
  return out;
}

inline Objective graph_objective(const BatchedGraph& batch, double alpha, double eps, ProximalTerm prox = {}) {
  return [&batch, alpha, eps, prox](const ModelParams& m) { return evaluate_objective(m, batch, alpha, eps, prox); };
}

// ---------------------------------------------------------------------------
// Perturbation

/// Ascent perturbation maximizing the first-order loss model on the
/// constraint set ||A^{-1} eps||^2 <= rho, normalized over all tensors jointly.
///
/// adaptive:  A = |w| + gamma (elementwise, treated as a constant),
///            eps = sqrt(rho) * A^2 g / ||A g||
/// plain:     eps = sqrt(rho) * g / ||g||
///
/// A zero denominator yields eps = 0.
inline ModelParams compute_perturbation(const ModelParams& params, const ModelParams& grads, const SamConfig& cfg) {
  check_same_structure(params, grads, "compute_perturbation");
  ModelParams eps = zeros_like(params);
  const auto w = tensor_list(params);
  const auto g = tensor_list(grads);
  const auto e = tensor_list(eps);
  double norm_sq = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t) {
    for (std::size_t i = 0; i < w[t]->size(); ++i) {
      const double a = cfg.adaptive ? std::abs((*w[t])[i]) + cfg.gamma : 1.0;
      const double ag = a * (*g[t])[i];
      norm_sq += ag * ag;
    }
  }
  const double norm = std::sqrt(norm_sq);
  if (norm == 0.0 || cfg.rho == 0.0) return eps;
  const double factor = std::sqrt(cfg.rho) / norm;
  for (std::size_t t = 0; t < w.size(); ++t) {
    for (std::size_t i = 0; i < w[t]->size(); ++i) {
      const double a = cfg.adaptive ? std::abs((*w[t])[i]) + cfg.gamma : 1.0;
      (*e[t])[i] = factor * a * a * (*g[t])[i];
    }
  }
  return eps;
}

/// Global L2 norm over every tensor.
inline double global_norm(const ModelParams& m) {
  double s = 0.0;
  for (const Tensor* t : tensor_list(m)) s += frobenius_sq(*t);
  return std::sqrt(s);
}

/// ||A^{-1} eps||^2 with the same operator compute_perturbation uses.
inline double constraint_value(const ModelParams& params, const ModelParams& eps, const SamConfig& cfg) {
  const auto w = tensor_list(params);
  const auto e = tensor_list(eps);
  double s = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t) {
    for (std::size_t i = 0; i < w[t]->size(); ++i) {
      const double a = cfg.adaptive ? std::abs((*w[t])[i]) + cfg.gamma : 1.0;
      const double x = (*e[t])[i] / a;
      s += x * x;
    }
  }
  return s;
}

inline ModelParams add_scaled(const ModelParams& a, const ModelParams& b, double c = 1.0) {
  ModelParams out = a;
  const auto o = tensor_list(out);
  const auto bl = tensor_list(b);
  for (std::size_t t = 0; t < o.size(); ++t)
    for (std::size_t i = 0; i < o[t]->size(); ++i) (*o[t])[i] += c * (*bl[t])[i];
  return out;
}

// ---------------------------------------------------------------------------
// Descent

struct StepLog {
  double clean_loss = 0.0;
  double perturbed_loss = 0.0;
  double penalty = 0.0;
  double proximal = 0.0;
  double eps_norm = 0.0;
  bool penalty_skipped = false;
};

/// One sharpness-aware step:
///   g   = grad at w
///   eps = compute_perturbation(w, g)
///   g~  = grad at w + eps
///   v  <- momentum * v + (g~ + weight_decay * w)
///   w  <- w - lr * v
inline StepLog local_step(ModelParams& model, OptimizerState& state, const SamConfig& cfg, const Objective& objective) {
  const ObjectiveValue clean = objective(model);
  if (!std::isfinite(clean.total())) {
    throw NonFiniteLossError("local_step: non-finite loss " + std::to_string(clean.total()) + " (data " +
                             std::to_string(clean.data_loss) + ", penalty " + std::to_string(clean.penalty) + ")");
  }
  StepLog log;
  log.clean_loss = clean.data_loss;
  log.perturbed_loss = clean.data_loss;
  log.penalty = clean.penalty;
  log.proximal = clean.proximal;
  log.penalty_skipped = clean.penalty_skipped;

  const ModelParams* descent_grad = &clean.gradient;
  ObjectiveValue perturbed;
  const ModelParams eps = compute_perturbation(model, clean.gradient, cfg);
  log.eps_norm = global_norm(eps);
  if (log.eps_norm > 0.0) {
    perturbed = objective(add_scaled(model, eps));
    if (!std::isfinite(perturbed.total())) {
      throw NonFiniteLossError("local_step: non-finite perturbed loss " + std::to_string(perturbed.total()));
    }
    log.perturbed_loss = perturbed.data_loss;
    descent_grad = &perturbed.gradient;
  }

  const auto w = tensor_list(model);
  const auto v = tensor_list(state.velocity);
  const auto g = tensor_list(*descent_grad);
  if (v.size() != w.size()) throw std::invalid_argument("local_step: optimizer state does not match model");
  for (std::size_t t = 0; t < w.size(); ++t) {
    for (std::size_t i = 0; i < w[t]->size(); ++i) {
      double& wi = (*w[t])[i];
      double& vi = (*v[t])[i];
      vi = cfg.momentum * vi + ((*g[t])[i] + cfg.weight_decay * wi);
      wi -= cfg.lr * vi;
    }
  }
  return log;
}

/// First-order sharpness surrogate: objective(w + eps) - objective(w). Does not modify `model`.
inline double sharpness_proxy(const ModelParams& model, const SamConfig& cfg, const Objective& objective) {
  const ObjectiveValue clean = objective(model);
  const ModelParams eps = compute_perturbation(model, clean.gradient, cfg);
  if (global_norm(eps) == 0.0) return 0.0;
  return objective(add_scaled(model, eps)).total() - clean.total();
}

}  // namespace sealfgl

#endif  // SEALFGL_SEAL_OPT_HPP
