#ifndef SEALFGL_DIAGNOSTICS_HPP
#define SEALFGL_DIAGNOSTICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sealfgl/gnn.hpp"
#include "sealfgl/graph.hpp"
#include "sealfgl/rng.hpp"
#include "sealfgl/seal_opt.hpp"
#include "sealfgl/tensor.hpp"

namespace sealfgl {

// ---------------------------------------------------------------------------
// Linear algebra helpers

/// Biased (1/M) covariance of the rows of `x`.
inline Tensor covariance_rows(const Tensor& x) {
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  if (m == 0) throw std::invalid_argument("covariance_rows: no samples");
  // Shift by the first row so identical rows center to exact zeros.
  Tensor centered(m, d);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += centered(i, j) = x(i, j) - x(0, j);
  for (double& v : mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) -= mean[j];
  return matmul_tn(centered, centered) * (1.0 / static_cast<double>(m));
}

struct EigenResult {
  std::vector<double> values;  // descending
  Tensor vectors;              // column k pairs with values[k]
  std::size_t sweeps = 0;
};

/// Cyclic Jacobi eigensolver for symmetric matrices. Stops once the
/// off-diagonal Frobenius norm falls below tol * ||S||_F or after max_sweeps.
inline EigenResult symmetric_eigen(Tensor s, double tol = 1e-12, std::size_t max_sweeps = 100) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw std::invalid_argument("symmetric_eigen: matrix not square " + s.shape_string());
  Tensor v = Tensor::identity(n);
  const double scale = frobenius_norm(s);
  EigenResult r;
  for (; r.sweeps < max_sweeps; ++r.sweeps) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * s(p, q) * s(p, q);
    if (std::sqrt(off) <= tol * scale || scale == 0.0) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = s(p, q);
        if (apq == 0.0) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p);
          const double skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k);
          const double sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s(a, a) > s(b, b); });
  r.values.resize(n);
  r.vectors = Tensor(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    r.values[k] = s(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) r.vectors(i, k) = v(i, order[k]);
  }
  return r;
}

/// Singular values of a symmetric PSD matrix, descending. Round-off negatives become their magnitude.
inline std::vector<double> psd_singular_values(const Tensor& s) {
  auto vals = symmetric_eigen(s).values;
  for (double& v : vals) v = std::abs(v);
  std::sort(vals.begin(), vals.end(), std::greater<>());
  return vals;
}

/// #{ sigma_k >= tau * sigma_max }, or 0 when every sigma is zero.
inline std::size_t effective_rank(std::span<const double> sigmas, double tau) {
  if (sigmas.empty()) return 0;
  const double mx = *std::max_element(sigmas.begin(), sigmas.end());
  if (mx <= 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(sigmas.begin(), sigmas.end(), [&](double s) { return s >= tau * mx; }));
}

// ---------------------------------------------------------------------------
// Representation spectrum

inline constexpr double kDefaultRankTau = 1e-3;

struct SpectrumReport {
  std::vector<double> singular_values;
  std::size_t effective_rank = 0;
  double tau = kDefaultRankTau;
  std::size_t client = 0;
  std::size_t round = 0;
  Tensor unit_representations;  // rows scaled to unit L2 norm, zero rows kept
};

inline SpectrumReport spectrum_of(const Tensor& reps, double tau = kDefaultRankTau) {
  if (reps.rows() < 2) throw std::invalid_argument("representation_spectrum: need at least 2 graphs");
  SpectrumReport r;
  r.tau = tau;
  r.singular_values = psd_singular_values(covariance_rows(reps));
  r.effective_rank = effective_rank(r.singular_values, tau);
  r.unit_representations = reps;
  for (std::size_t i = 0; i < reps.rows(); ++i) {
    auto row = r.unit_representations.row(i);
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& v : row) v /= n;
  }
  return r;
}

inline SpectrumReport representation_spectrum(const ModelParams& model, const BatchedGraph& graphs,
                                              double tau = kDefaultRankTau) {
  return spectrum_of(evaluate(model, graphs).representations, tau);
}

// ---------------------------------------------------------------------------
// Activation-free sum-aggregation probe
//
// Update rule h_v^{l+1} = W^l sum_{u in N(v)} h_u^l with sum readout, so a
// graph's representation is Pi x^L where Pi = W^{L-1} ... W^0 and x^L is the
// node-summed L-fold neighbor-sum of the input features. Weights use the
// column-vector convention: W^l is [d_{l+1} x d_l].

/// x^L for one graph: 1^T A^L X as a length-d_v vector.
inline std::vector<double> aggregated_features(const Graph& g, std::size_t layers) {
  Tensor h = g.features;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor next(h.rows(), h.cols());
    for (auto [u, v] : g.edges) {
      for (std::size_t j = 0; j < h.cols(); ++j) {
        next(v, j) += h(u, j);
        next(u, j) += h(v, j);
      }
    }
    h = std::move(next);
  }
  std::vector<double> x(h.cols(), 0.0);
  for (std::size_t v = 0; v < h.rows(); ++v)
    for (std::size_t j = 0; j < h.cols(); ++j) x[j] += h(v, j);
  return x;
}

struct LinearGnnProbe {
  std::vector<Tensor> weights;  // W^0 .. W^{L-1}
  Tensor aggregated;            // M x d_v, row j = x^L_j
  std::vector<double> mean;     // column mean of `aggregated`
};

inline LinearGnnProbe make_linear_probe(std::vector<Tensor> weights, std::span<const Graph> graphs) {
  if (weights.empty()) throw std::invalid_argument("make_linear_probe: need at least one layer");
  if (graphs.empty()) throw std::invalid_argument("make_linear_probe: no graphs");
  for (std::size_t l = 1; l < weights.size(); ++l) {
    if (weights[l].cols() != weights[l - 1].rows()) {
      throw std::invalid_argument("make_linear_probe: W" + std::to_string(l) + " " + weights[l].shape_string() +
                                  " does not chain with W" + std::to_string(l - 1) + " " +
                                  weights[l - 1].shape_string());
    }
  }
  const std::size_t dv = weights.front().cols();
  LinearGnnProbe p;
  p.aggregated = Tensor(graphs.size(), dv);
  p.mean.assign(dv, 0.0);
  for (std::size_t j = 0; j < graphs.size(); ++j) {
    if (graphs[j].feature_dim() != dv) {
      throw std::invalid_argument("make_linear_probe: graph feature dim " + std::to_string(graphs[j].feature_dim()) +
                                  " != W0 input dim " + std::to_string(dv));
    }
    const auto x = aggregated_features(graphs[j], weights.size());
    for (std::size_t k = 0; k < dv; ++k) {
      p.aggregated(j, k) = x[k];
      p.mean[k] += x[k];
    }
  }
  for (double& v : p.mean) v /= static_cast<double>(graphs.size());
  p.weights = std::move(weights);
  return p;
}

/// Pi = W^{L-1} ... W^0.
inline Tensor weight_product(const LinearGnnProbe& probe) {
  Tensor pi = probe.weights.front();
  for (std::size_t l = 1; l < probe.weights.size(); ++l) pi = matmul(probe.weights[l], pi);
  return pi;
}

/// Sigma = Pi ( (1/M) sum_j (x_j - xbar)(x_j - xbar)^T ) Pi^T.
inline Tensor covariance_linear_gnn(const LinearGnnProbe& probe) {
  const std::size_t m = probe.aggregated.rows();
  const std::size_t dv = probe.aggregated.cols();
  if (probe.mean.size() != dv) throw std::invalid_argument("covariance_linear_gnn: mean/feature size mismatch");
  Tensor inner(dv, dv);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t a = 0; a < dv; ++a) {
      const double da = probe.aggregated(j, a) - probe.mean[a];
      for (std::size_t b = 0; b < dv; ++b) inner(a, b) += da * (probe.aggregated(j, b) - probe.mean[b]);
    }
  }
  inner *= 1.0 / static_cast<double>(m);
  const Tensor pi = weight_product(probe);
  return matmul_nt(matmul(pi, inner), pi);
}

// ---------------------------------------------------------------------------
// Loss landscape slices

struct LandscapeSlice {
  ModelParams direction_a;
  ModelParams direction_b;
  std::vector<double> coords;  // shared by both axes, coords[center] == 0
  Tensor loss;                 // loss(i, j) at w + coords[i] * a + coords[j] * b
  double center_loss = 0.0;

  std::size_t center() const noexcept { return coords.size() / 2; }
};

/// Gaussian direction with each tensor block rescaled to the norm of the matching model tensor.
inline ModelParams filter_normalized_direction(const ModelParams& model, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ModelParams d = zeros_like(model);
  const auto w = tensor_list(model);
  const auto dl = tensor_list(d);
  for (std::size_t t = 0; t < w.size(); ++t) {
    for (double& v : dl[t]->data()) v = normal(rng);
    const double dn = frobenius_norm(*dl[t]);
    const double wn = frobenius_norm(*w[t]);
    *dl[t] *= dn > 0.0 ? wn / dn : 0.0;
  }
  return d;
}

inline LandscapeSlice loss_landscape_slice(const ModelParams& model, const ModelParams& dir_a, const ModelParams& dir_b,
                                           const BatchedGraph& data, double half_width, std::size_t resolution) {
  if (resolution % 2 == 0) throw std::invalid_argument("loss_landscape_slice: resolution must be odd");
  check_same_structure(model, dir_a, "loss_landscape_slice");
  check_same_structure(model, dir_b, "loss_landscape_slice");
  LandscapeSlice s;
  s.direction_a = dir_a;
  s.direction_b = dir_b;
  s.coords.resize(resolution);
  const std::size_t c = resolution / 2;
  const double step = resolution > 1 ? half_width / static_cast<double>(c) : 0.0;
  for (std::size_t i = 0; i < resolution; ++i) {
    s.coords[i] = (static_cast<double>(i) - static_cast<double>(c)) * step;
  }
  s.center_loss = evaluate_loss(model, data);
  s.loss = Tensor(resolution, resolution);
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      if (i == c && j == c) {
        s.loss(i, j) = s.center_loss;
        continue;
      }
      const ModelParams p = add_scaled(add_scaled(model, dir_a, s.coords[i]), dir_b, s.coords[j]);
      s.loss(i, j) = evaluate_loss(p, data);
    }
  }
  return s;
}

inline LandscapeSlice loss_landscape_slice(const ModelParams& model, const BatchedGraph& data, double half_width,
                                           std::size_t resolution, std::uint64_t seed) {
  Rng rng = make_rng(seed, stream::directions);
  const ModelParams a = filter_normalized_direction(model, rng);
  const ModelParams b = filter_normalized_direction(model, rng);
  return loss_landscape_slice(model, a, b, data, half_width, resolution);
}

/// Mean grid loss minus the center loss; smaller means flatter.
inline double flatness_score(const LandscapeSlice& s) {
  double sum = 0.0;
  for (double v : s.loss.data()) sum += v - s.center_loss;
  return sum / static_cast<double>(s.loss.size());
}

// ---------------------------------------------------------------------------
// Client-level metrics

struct ClientMetrics {
  double avg_test_acc = 0.0;
  double avg_gain = 0.0;
  double improved_ratio = 0.0;
  std::size_t improved = 0;
  std::size_t clients = 0;
};

/// Mean accuracy, mean gain over the local-train baseline, and the fraction of
/// clients whose accuracy strictly exceeds their baseline.
inline ClientMetrics client_metrics(std::span<const double> accs, std::span<const double> local_accs) {
  if (accs.size() != local_accs.size()) {
    throw std::invalid_argument("client_metrics: " + std::to_string(accs.size()) + " clients vs " +
                                std::to_string(local_accs.size()) + " baseline clients");
  }
  if (accs.empty()) throw std::invalid_argument("client_metrics: no clients");
  ClientMetrics m;
  m.clients = accs.size();
  for (std::size_t i = 0; i < accs.size(); ++i) {
    m.avg_test_acc += accs[i];
    m.avg_gain += accs[i] - local_accs[i];
    if (accs[i] > local_accs[i]) ++m.improved;
  }
  const auto n = static_cast<double>(accs.size());
  m.avg_test_acc /= n;
  m.avg_gain /= n;
  m.improved_ratio = static_cast<double>(m.improved) / n;
  return m;
}

}  // namespace sealfgl

#endif  // SEALFGL_DIAGNOSTICS_HPP
