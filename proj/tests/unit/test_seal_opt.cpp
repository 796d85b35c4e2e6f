#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <utility>

#include "oracles.hpp"
#include "sealfgl/seal_opt.hpp"
#include "sealfgl/synthetic.hpp"

using namespace sealfgl;

namespace {

// A parameter set holding one free vector in head.V plus a zero 1x1 bias.
ModelParams vector_params(std::vector<double> v) {
  ModelParams m;
  const std::size_t n = v.size();
  m.head.weight = Tensor(1, n, std::move(v));
  m.head.bias = Tensor(1, 1);
  return m;
}

SamConfig plain(double rho) {
  SamConfig c;
  c.adaptive = false;
  c.rho = rho;
  return c;
}

Objective half_squared_norm() {
  return [](const ModelParams& m) {
    ObjectiveValue o;
    o.data_loss = 0.5 * global_norm(m) * global_norm(m);
    o.gradient = m;
    return o;
  };
}

std::vector<std::vector<double>> flatten(const ModelParams& m) {
  std::vector<std::vector<double>> out;
  for (const Tensor* t : tensor_list(m)) out.emplace_back(t->data().begin(), t->data().end());
  return out;
}

struct Fixture {
  Dataset ds;
  ModelParams model;
};

Fixture small_problem(std::uint64_t seed, std::size_t layers = 2) {
  SyntheticSpec spec;
  spec.num_graphs = 64;
  Fixture f{make_synthetic_dataset(spec, seed), {}};
  Rng rng(seed);
  f.model = {init_backbone({f.ds.feature_dim, 8, layers, 2}, rng), init_head(8, 2, rng)};
  return f;
}

BatchedGraph batch_range(const Dataset& ds, std::size_t from, std::size_t n) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back((from + i) % ds.graphs.size());
  return batch_graphs(ds, idx);
}

ModelParams rescaled(ModelParams m, double c) {
  m.backbone.neighbor[0] *= c;
  m.backbone.self[0] *= c;
  m.backbone.neighbor[1] *= 1.0 / c;
  m.backbone.self[1] *= 1.0 / c;
  return m;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

}  // namespace

TEST(Perturbation, PlainVariantExample) {
  const ModelParams w = vector_params({0.0, 0.0});
  const ModelParams g = vector_params({3.0, 4.0});
  const ModelParams eps = compute_perturbation(w, g, plain(0.25));
  EXPECT_NEAR(eps.head.weight[0], 0.3, 1e-15);
  EXPECT_NEAR(eps.head.weight[1], 0.4, 1e-15);
  EXPECT_NEAR(global_norm(eps) * global_norm(eps), 0.25, 1e-15);
}

TEST(Perturbation, AdaptiveVariantExample) {
  SamConfig cfg;
  cfg.rho = 1.0;
  cfg.gamma = 0.1;
  const ModelParams w = vector_params({1.0, -2.0});
  const ModelParams g = vector_params({1.0, 1.0});
  const ModelParams eps = compute_perturbation(w, g, cfg);
  EXPECT_NEAR(eps.head.weight[0], 1.21 / std::sqrt(5.62), 1e-15);
  EXPECT_NEAR(eps.head.weight[1], 4.41 / std::sqrt(5.62), 1e-15);
  EXPECT_NEAR(eps.head.weight[0], 0.510408, 1e-6);
  EXPECT_NEAR(eps.head.weight[1], 1.860246, 1e-6);
  EXPECT_NEAR(constraint_value(w, eps, cfg), 1.0, 1e-12);
}

TEST(Perturbation, ZeroGradientGivesZero) {
  std::mt19937_64 rng(1);
  const Fixture f = small_problem(1);
  for (bool adaptive : {true, false}) {
    SamConfig cfg;
    cfg.adaptive = adaptive;
    EXPECT_EQ(global_norm(compute_perturbation(f.model, zeros_like(f.model), cfg)), 0.0);
  }
}

TEST(Perturbation, SaturatesConstraintOverRandomDraws) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> log_rho(-6.0, 2.0);
  for (int draw = 0; draw < 100; ++draw) {
    const Fixture f = small_problem(static_cast<std::uint64_t>(draw), 1 + draw % 3);
    ModelParams g = zeros_like(f.model);
    for (Tensor* t : tensor_list(g)) *t = oracle::random_tensor(t->rows(), t->cols(), rng, -3.0, 3.0);
    const double rho = std::pow(10.0, log_rho(rng));
    SamConfig seal;
    seal.rho = rho;
    const double tol = 1e-10 * std::max(rho, 1.0);
    EXPECT_NEAR(constraint_value(f.model, compute_perturbation(f.model, g, seal), seal), rho, tol) << draw;
    const ModelParams e = compute_perturbation(f.model, g, plain(rho));
    EXPECT_NEAR(global_norm(e) * global_norm(e), rho, tol) << draw;
  }
}

TEST(LocalStep, ZeroRadiusIsPlainSgdStep) {
  const Fixture f = small_problem(3);
  const BatchedGraph b = batch_range(f.ds, 0, 16);
  SamConfig cfg;
  cfg.rho = 0.0;
  cfg.alpha = 0.0;
  cfg.momentum = 0.0;
  cfg.lr = 0.05;
  cfg.weight_decay = 1e-3;
  const Objective obj = graph_objective(b, 0.0, cfg.zscore_eps);
  const ModelParams g = obj(f.model).gradient;
  ModelParams m = f.model;
  OptimizerState st = OptimizerState::for_model(m);
  const StepLog log = local_step(m, st, cfg, obj);
  EXPECT_EQ(log.eps_norm, 0.0);
  const auto w0 = tensor_list(f.model);
  const auto w1 = tensor_list(std::as_const(m));
  const auto gl = tensor_list(g);
  for (std::size_t t = 0; t < w0.size(); ++t)
    for (std::size_t i = 0; i < w0[t]->size(); ++i)
      EXPECT_DOUBLE_EQ((*w1[t])[i], (*w0[t])[i] - cfg.lr * ((*gl[t])[i] + cfg.weight_decay * (*w0[t])[i]));
}

TEST(LocalStep, QuadraticProbe) {
  SamConfig cfg = plain(0.01);
  cfg.weight_decay = 0.0;
  cfg.momentum = 0.0;
  cfg.lr = 0.1;
  ModelParams m = vector_params({1.0, 0.0});
  OptimizerState st = OptimizerState::for_model(m);
  const StepLog log = local_step(m, st, cfg, half_squared_norm());
  EXPECT_NEAR(log.eps_norm, 0.1, 1e-15);
  EXPECT_NEAR(m.head.weight[0], 0.89, 1e-15);
  EXPECT_EQ(m.head.weight[1], 0.0);
  EXPECT_EQ(m.head.bias[0], 0.0);
}

TEST(LocalStep, PerturbedLossRisesOnMostSteps) {
  Fixture f = small_problem(5);
  SamConfig cfg;
  cfg.alpha = 0.0;
  OptimizerState st = OptimizerState::for_model(f.model);
  int ascents = 0;
  for (std::size_t step = 0; step < 200; ++step) {
    const BatchedGraph b = batch_range(f.ds, step * 16, 16);
    const StepLog log = local_step(f.model, st, cfg, graph_objective(b, 0.0, cfg.zscore_eps));
    if (log.perturbed_loss >= log.clean_loss) ++ascents;
  }
  EXPECT_GE(ascents, 190);
}

TEST(LocalStep, ZeroRadiusZeroPenaltyMatchesReferenceSgd) {
  Fixture f = small_problem(6);
  SamConfig cfg;
  cfg.rho = 0.0;
  cfg.alpha = 0.0;
  cfg.lr = 0.01;
  cfg.momentum = 0.9;
  cfg.weight_decay = 1e-4;
  oracle::ReferenceSgd ref{cfg.lr, cfg.momentum, cfg.weight_decay, {}};
  std::vector<std::vector<double>> w = flatten(f.model);
  OptimizerState st = OptimizerState::for_model(f.model);
  for (std::size_t step = 0; step < 50; ++step) {
    const BatchedGraph b = batch_range(f.ds, step * 8, 8);
    const Objective obj = graph_objective(b, 0.0, cfg.zscore_eps);
    ref.step(w, flatten(obj(f.model).gradient));
    (void)local_step(f.model, st, cfg, obj);
    ASSERT_EQ(flatten(f.model), w) << "step " << step;
  }
}

TEST(RepDec, PerfectlyCorrelatedColumnsGiveAlpha) {
  ad::Tape t;
  const PenaltyVar p = repdec_penalty(t, t.leaf(Tensor::from_rows({{1, 2}, {2, 4}, {4, 8}, {-1, -2}})), 0.3, 0.0);
  EXPECT_FALSE(p.skipped);
  EXPECT_NEAR(t.value(p.value).item(), 0.3, 1e-14);
}

TEST(RepDec, DecorrelatedColumnsGiveHalfAlpha) {
  ad::Tape t;
  const PenaltyVar p = repdec_penalty(t, t.leaf(Tensor::from_rows({{1, 1}, {-1, 1}, {1, -1}, {-1, -1}})), 0.3, 0.0);
  EXPECT_NEAR(t.value(p.value).item(), 0.15, 1e-15);
}

TEST(RepDec, ConstantColumnStaysFinite) {
  ad::Tape t;
  const ad::Var reps = t.leaf(Tensor::from_rows({{1, 5}, {2, 5}, {3, 5}}));
  const PenaltyVar p = repdec_penalty(t, reps, 1.0, 1e-5);
  const double v = t.value(p.value).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 0.25, 1e-4);
  const ad::Gradients g = t.backward(p.value);
  EXPECT_TRUE(all_finite(g[reps]));
}

TEST(RepDec, SingleRepresentationIsSkipped) {
  ad::Tape t;
  const PenaltyVar p = repdec_penalty(t, t.leaf(Tensor::from_rows({{1, 2, 3}})), 1.0, 1e-5);
  EXPECT_TRUE(p.skipped);
  EXPECT_EQ(t.value(p.value).item(), 0.0);
}

TEST(RepDec, FloorIsAlphaOverDim) {
  std::mt19937_64 rng(9);
  for (int draw = 0; draw < 50; ++draw) {
    const std::size_t m = 2 + static_cast<std::size_t>(draw % 9), d = 1 + static_cast<std::size_t>(draw % 7);
    const Tensor reps = oracle::random_tensor(m, d, rng, -5.0, 5.0);
    ad::Tape t;
    const double exact = t.value(repdec_penalty(t, t.leaf(reps), 0.2, 0.0).value).item();
    EXPECT_GE(exact, 0.2 / static_cast<double>(d) * (1.0 - 1e-12)) << draw;
  }
}

TEST(RepDec, FloorHoldsWithEpsWhenColumnsAreCorrelated) {
  ad::Tape t;
  const Tensor reps = Tensor::from_rows({{1, 2}, {2, 4.5}, {3, 5.5}, {5, 9}});
  const double v = t.value(repdec_penalty(t, t.leaf(reps), 1.0, 1e-5).value).item();
  EXPECT_GE(v, 0.5);
}

TEST(Sharpness, ZeroRadiusIsZero) {
  const Fixture f = small_problem(7);
  const BatchedGraph b = batch_range(f.ds, 0, 16);
  SamConfig cfg;
  cfg.rho = 0.0;
  EXPECT_EQ(sharpness_proxy(f.model, cfg, graph_objective(b, cfg.alpha, cfg.zscore_eps)), 0.0);
}

TEST(Sharpness, ConvexProbeIsPositive) {
  std::mt19937_64 rng(8);
  for (bool adaptive : {true, false}) {
    for (int draw = 0; draw < 20; ++draw) {
      const Tensor w = oracle::random_tensor(1, 4, rng);
      SamConfig cfg;
      cfg.adaptive = adaptive;
      cfg.rho = 0.01;
      EXPECT_GT(sharpness_proxy(vector_params({w[0], w[1], w[2], w[3]}), cfg, half_squared_norm()), 0.0);
    }
  }
}

TEST(Sharpness, DoesNotMutateModel) {
  const Fixture f = small_problem(10);
  const BatchedGraph b = batch_range(f.ds, 0, 16);
  const ModelParams before = f.model;
  (void)sharpness_proxy(f.model, SamConfig{}, graph_objective(b, 0.01, 1e-5));
  EXPECT_EQ(flatten(before), flatten(f.model));
}

TEST(Sharpness, AdaptiveProxyIsRescalingInvariant) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const Fixture f = small_problem(seed);
    const BatchedGraph b = batch_range(f.ds, 0, 32);
    SamConfig cfg;
    cfg.gamma = 0.0;
    cfg.rho = 0.01;
    const Objective obj = graph_objective(b, 0.01, cfg.zscore_eps);
    const double base = sharpness_proxy(f.model, cfg, obj);
    for (double c : {0.1, 10.0, 100.0}) {
      const double scaled = sharpness_proxy(rescaled(f.model, c), cfg, obj);
      EXPECT_LE(rel_diff(base, scaled), 1e-6) << "seed " << seed << " c " << c << ": " << base << " vs " << scaled;
    }
  }
}

TEST(Sharpness, PlainProxyDependsOnRescaling) {
  const Fixture f = small_problem(11);
  const BatchedGraph b = batch_range(f.ds, 0, 32);
  SamConfig cfg = plain(0.01);
  const Objective obj = graph_objective(b, 0.01, cfg.zscore_eps);
  const double base = sharpness_proxy(f.model, cfg, obj);
  const double scaled = sharpness_proxy(rescaled(f.model, 100.0), cfg, obj);
  EXPECT_GT(rel_diff(base, scaled), 1e-3) << base << " vs " << scaled;
}
