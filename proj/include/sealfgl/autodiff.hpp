#ifndef SEALFGL_AUTODIFF_HPP
#define SEALFGL_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sealfgl/tensor.hpp"

namespace sealfgl::ad {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class Primitive {
  Leaf,
  Matmul,
  Add,
  Relu,
  Scale,
  SegmentMean,
  ZscoreCols,
  CovarianceCols,
  FrobeniusSq,
  SoftmaxCrossEntropy,
};

inline std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Leaf: return "leaf";
    case Primitive::Matmul: return "matmul";
    case Primitive::Add: return "add";
    case Primitive::Relu: return "relu";
    case Primitive::Scale: return "scale";
    case Primitive::SegmentMean: return "segment_mean";
    case Primitive::ZscoreCols: return "zscore_cols";
    case Primitive::CovarianceCols: return "covariance_cols";
    case Primitive::FrobeniusSq: return "frobenius_sq";
    case Primitive::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

inline std::optional<Primitive> primitive_from_name(std::string_view name) {
  for (auto p : {Primitive::Matmul, Primitive::Add, Primitive::Relu, Primitive::Scale, Primitive::SegmentMean,
                 Primitive::ZscoreCols, Primitive::CovarianceCols, Primitive::FrobeniusSq,
                 Primitive::SoftmaxCrossEntropy}) {
    if (primitive_name(p) == name) return p;
  }
  return std::nullopt;
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Gradients of one scalar output with respect to every recorded value.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  const Tensor& operator[](Var v) const {
    if (v.id >= grads_.size()) throw TapeError("Gradients: unknown var id " + std::to_string(v.id));
    return grads_[v.id];
  }

 private:
  std::vector<Tensor> grads_;
};

/// Records primitive applications in topological order and runs one reverse pass.
///
/// Values are immutable once recorded. Leaves created with `leaf` receive
/// gradients; `constant` values do not, and subgraphs depending only on
/// constants skip their reverse rules entirely.
class Tape {
 public:
  Var leaf(Tensor value) { return push(std::move(value), true, Primitive::Leaf, {}); }
  Var constant(Tensor value) { return push(std::move(value), false, Primitive::Leaf, {}); }

  const Tensor& value(Var v) const { return node(v).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Test-only negative control: perturbs the reverse rule of one primitive.
  void corrupt_reverse_rule(std::optional<Primitive> p) { corrupt_ = p; }

  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw ShapeError("matmul: shape mismatch " + av.shape_string() + " x " + bv.shape_string());
    }
    Var out = push(sealfgl::matmul(av, bv), any_grad({a, b}), Primitive::Matmul, {a, b});
    set_reverse(out, [a, b](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.accumulate(a, matmul_nt(g, t.value(b)));
      if (t.needs(b)) t.accumulate(b, matmul_tn(t.value(a), g));
    });
    return out;
  }

  /// Elementwise sum; `b` may be a 1 x cols row broadcast over the rows of `a`.
  Var add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const bool broadcast = bv.rows() == 1 && av.rows() != 1 && bv.cols() == av.cols();
    if (!av.same_shape(bv) && !broadcast) {
      throw ShapeError("add: shape mismatch " + av.shape_string() + " + " + bv.shape_string());
    }
    Tensor out = av;
    if (broadcast) {
      for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
    } else {
      out += bv;
    }
    Var o = push(std::move(out), any_grad({a, b}), Primitive::Add, {a, b});
    set_reverse(o, [a, b, broadcast](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.accumulate(a, g);
      if (!t.needs(b)) return;
      if (!broadcast) {
        t.accumulate(b, g);
        return;
      }
      Tensor gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      t.accumulate(b, gb);
    });
    return o;
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    Var o = push(std::move(out), any_grad({a}), Primitive::Relu, {a});
    set_reverse(o, [a](Tape& t, const Tensor& g) {
      if (!t.needs(a)) return;
      const Tensor& x = t.value(a);
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
      t.accumulate(a, ga);
    });
    return o;
  }

  Var scale(Var a, double c) {
    Var o = push(value(a) * c, any_grad({a}), Primitive::Scale, {a});
    set_reverse(o, [a, c](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.accumulate(a, g * c);
    });
    return o;
  }

  /// out[s] = mean of rows(a)[rows[k]] over all pairs k with segments[k] == s.
  /// Segments with no contributing pair yield a zero row.
  Var segment_mean(Var a, std::vector<std::size_t> rows, std::vector<std::size_t> segments,
                   std::size_t num_segments) {
    const Tensor& av = value(a);
    if (rows.size() != segments.size()) {
      throw ShapeError("segment_mean: " + std::to_string(rows.size()) + " source rows vs " +
                       std::to_string(segments.size()) + " segment ids");
    }
    std::vector<double> counts(num_segments, 0.0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] >= av.rows() || segments[k] >= num_segments) {
        throw ShapeError("segment_mean: pair " + std::to_string(k) + " out of range for input " +
                         av.shape_string() + " and " + std::to_string(num_segments) + " segments");
      }
      counts[segments[k]] += 1.0;
    }
    Tensor out(num_segments, av.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto src = av.row(rows[k]);
      auto dst = out.row(segments[k]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
    for (std::size_t s = 0; s < num_segments; ++s) {
      if (counts[s] == 0.0) continue;
      for (double& v : out.row(s)) v /= counts[s];
    }
    Var o = push(std::move(out), any_grad({a}), Primitive::SegmentMean, {a});
    set_reverse(o, [a, rows = std::move(rows), segments = std::move(segments),
                    counts = std::move(counts)](Tape& t, const Tensor& g) {
      if (!t.needs(a)) return;
      const Tensor& x = t.value(a);
      Tensor ga(x.rows(), x.cols());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto src = g.row(segments[k]);
        auto dst = ga.row(rows[k]);
        const double inv = 1.0 / counts[segments[k]];
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j] * inv;
      }
      t.accumulate(a, ga);
    });
    return o;
  }

  /// Identity-row overload: row i of `a` belongs to segment membership[i].
  Var segment_mean(Var a, std::span<const std::size_t> membership, std::size_t num_segments) {
    std::vector<std::size_t> rows(membership.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return segment_mean(a, std::move(rows), {membership.begin(), membership.end()}, num_segments);
  }

  /// Per-column (x - mean) / sqrt(var + eps) with the biased (1/M) variance.
  Var zscore_cols(Var a, double eps) {
    const Tensor& x = value(a);
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    if (m == 0) throw ShapeError("zscore_cols: empty input " + x.shape_string());
    std::vector<double> inv_std(n);
    Tensor z(m, n);
    for (std::size_t j = 0; j < n; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += x(i, j);
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
      var /= static_cast<double>(m);
      const double denom = std::sqrt(var + eps);
      inv_std[j] = denom > 0.0 ? 1.0 / denom : 0.0;
      for (std::size_t i = 0; i < m; ++i) z(i, j) = (x(i, j) - mean) * inv_std[j];
    }
    Var o = push(std::move(z), any_grad({a}), Primitive::ZscoreCols, {a});
    set_reverse(o, [a, o, inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
      if (!t.needs(a)) return;
      const Tensor& zv = t.value(o);
      const std::size_t rows = zv.rows();
      const double inv_m = 1.0 / static_cast<double>(rows);
      Tensor ga(rows, zv.cols());
      for (std::size_t j = 0; j < zv.cols(); ++j) {
        double mean_g = 0.0;
        double mean_gz = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          mean_g += g(i, j);
          mean_gz += g(i, j) * zv(i, j);
        }
        mean_g *= inv_m;
        mean_gz *= inv_m;
        for (std::size_t i = 0; i < rows; ++i) ga(i, j) = inv_std[j] * (g(i, j) - mean_g - zv(i, j) * mean_gz);
      }
      t.accumulate(a, ga);
    });
    return o;
  }

  /// (1/M) A^T A for an M-row input; the caller is responsible for centering.
  Var covariance_cols(Var a) {
    const Tensor& x = value(a);
    if (x.rows() == 0) throw ShapeError("covariance_cols: empty input " + x.shape_string());
    const double inv_m = 1.0 / static_cast<double>(x.rows());
    Var o = push(matmul_tn(x, x) * inv_m, any_grad({a}), Primitive::CovarianceCols, {a});
    set_reverse(o, [a, inv_m](Tape& t, const Tensor& g) {
      if (!t.needs(a)) return;
      Tensor sym = g + transpose(g);
      t.accumulate(a, sealfgl::matmul(t.value(a), sym) * inv_m);
    });
    return o;
  }

  Var frobenius_sq(Var a) {
    Var o = push(Tensor::scalar(sealfgl::frobenius_sq(value(a))), any_grad({a}), Primitive::FrobeniusSq, {a});
    set_reverse(o, [a](Tape& t, const Tensor& g) {
      if (t.needs(a)) t.accumulate(a, t.value(a) * (2.0 * g.item()));
    });
    return o;
  }

  /// Mean over rows of -log softmax(logits)[label].
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const Tensor& z = value(logits);
    if (labels.size() != z.rows() || z.rows() == 0) {
      throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                       z.shape_string());
    }
    Tensor probs(z.rows(), z.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
        throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " out of range for " +
                         std::to_string(z.cols()) + " classes");
      }
      const auto row = z.row(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double sum = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        probs(i, j) = std::exp(row[j] - mx);
        sum += probs(i, j);
      }
      for (std::size_t j = 0; j < row.size(); ++j) probs(i, j) /= sum;
      loss += -(row[static_cast<std::size_t>(y)] - mx - std::log(sum));
    }
    const double inv_m = 1.0 / static_cast<double>(z.rows());
    Var o = push(Tensor::scalar(loss * inv_m), any_grad({logits}), Primitive::SoftmaxCrossEntropy, {logits});
    set_reverse(o, [logits, inv_m, probs = std::move(probs),
                    labels = std::vector<int>(labels.begin(), labels.end())](Tape& t, const Tensor& g) {
      if (!t.needs(logits)) return;
      Tensor gl = probs;
      for (std::size_t i = 0; i < gl.rows(); ++i) gl(i, static_cast<std::size_t>(labels[i])) -= 1.0;
      gl *= inv_m * g.item();
      t.accumulate(logits, gl);
    });
    return o;
  }

  /// Reverse pass from a scalar output. The tape is consumed afterwards.
  Gradients backward(Var output) {
    if (consumed_) throw TapeError("backward: tape already consumed by a previous reverse pass");
    const Tensor& out = value(output);
    if (out.rows() != 1 || out.cols() != 1) {
      throw TapeError("backward: output must be scalar, got " + out.shape_string());
    }
    consumed_ = true;
    grads_.assign(nodes_.size(), Tensor{});
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i] = Tensor(nodes_[i].value.rows(), nodes_[i].value.cols());
    grads_[output.id] = Tensor::scalar(1.0);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.reverse) continue;
      reverse_owner_ = n.primitive;
      n.reverse(*this, grads_[i]);
    }
    return Gradients(std::move(grads_));
  }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Primitive primitive = Primitive::Leaf;
    std::vector<std::size_t> inputs;
    std::function<void(Tape&, const Tensor&)> reverse;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw TapeError("Tape: unknown var id " + std::to_string(v.id));
    return nodes_[v.id];
  }

  bool any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (node(v).requires_grad) return true;
    return false;
  }

  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  Var push(Tensor value, bool requires_grad, Primitive p, std::initializer_list<Var> inputs) {
    if (consumed_) throw TapeError("Tape: recording on a consumed tape");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.primitive = p;
    for (Var v : inputs) n.inputs.push_back(v.id);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  template <class F>
  void set_reverse(Var v, F&& f) {
    if (nodes_[v.id].requires_grad) nodes_[v.id].reverse = std::forward<F>(f);
  }

  void accumulate(Var v, Tensor g) {
    if (corrupt_ && *corrupt_ == reverse_owner_) g *= 1.01;
    grads_[v.id] += g;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool consumed_ = false;
  Primitive reverse_owner_ = Primitive::Leaf;
  std::optional<Primitive> corrupt_;
};

}  // namespace sealfgl::ad

#endif  // SEALFGL_AUTODIFF_HPP
