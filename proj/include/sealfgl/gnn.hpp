#ifndef SEALFGL_GNN_HPP
#define SEALFGL_GNN_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sealfgl/autodiff.hpp"
#include "sealfgl/graph.hpp"
#include "sealfgl/rng.hpp"
#include "sealfgl/tensor.hpp"

namespace sealfgl {

/// Mean-aggregation message passing stack:
///   h^{l+1} = ReLU( neighbor_mean(h^l) W_l + h^l B_l )
/// `neighbor` holds W_l, `self` holds B_l; both are [d_l x d_{l+1}].
struct BackboneParams {
  std::vector<Tensor> neighbor;
  std::vector<Tensor> self;

  std::size_t layers() const noexcept { return neighbor.size(); }
  std::size_t input_dim() const { return neighbor.at(0).rows(); }
  std::size_t output_dim() const { return neighbor.at(layers() - 1).cols(); }

  bool same_shape(const BackboneParams& o) const {
    if (layers() != o.layers()) return false;
    for (std::size_t l = 0; l < layers(); ++l)
      if (!neighbor[l].same_shape(o.neighbor[l]) || !self[l].same_shape(o.self[l])) return false;
    return true;
  }
};

/// Private per-client linear classifier: logits = h_G V + b.
struct HeadParams {
  Tensor weight;  // d x K
  Tensor bias;    // 1 x K
};

struct ModelParams {
  BackboneParams backbone;
  HeadParams head;
};

// Canonical tensor order: backbone.W0, backbone.B0, ..., head.V, head.b.

inline std::string backbone_tensor_name(std::size_t layer, bool self) {
  return std::string("backbone.") + (self ? "B" : "W") + std::to_string(layer);
}

template <class Backbone, class F>
void for_each_backbone_tensor(Backbone& bb, F&& f) {
  for (std::size_t l = 0; l < bb.neighbor.size(); ++l) {
    f(backbone_tensor_name(l, false), bb.neighbor[l]);
    f(backbone_tensor_name(l, true), bb.self[l]);
  }
}

template <class Model, class F>
void for_each_tensor(Model& m, F&& f) {
  for_each_backbone_tensor(m.backbone, f);
  f(std::string("head.V"), m.head.weight);
  f(std::string("head.b"), m.head.bias);
}

/// Zero-filled parameters with the same shapes as `m`.
inline ModelParams zeros_like(const ModelParams& m) {
  ModelParams z = m;
  for_each_tensor(z, [](const std::string&, Tensor& t) { t = Tensor(t.rows(), t.cols()); });
  return z;
}

inline std::vector<Tensor*> tensor_list(ModelParams& m) {
  std::vector<Tensor*> out;
  for_each_tensor(m, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

inline std::vector<const Tensor*> tensor_list(const ModelParams& m) {
  std::vector<const Tensor*> out;
  for_each_tensor(m, [&](const std::string&, const Tensor& t) { out.push_back(&t); });
  return out;
}

inline void check_same_structure(const ModelParams& a, const ModelParams& b, const char* where) {
  const auto la = tensor_list(a);
  const auto lb = tensor_list(b);
  bool ok = la.size() == lb.size();
  for (std::size_t i = 0; ok && i < la.size(); ++i) ok = la[i]->same_shape(*lb[i]);
  if (!ok) throw std::invalid_argument(std::string(where) + ": parameter structure mismatch");
}

struct ModelShape {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 64;
  std::size_t layers = 3;
  std::size_t num_classes = 2;
};

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-s, s);
  Tensor t(fan_in, fan_out);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline BackboneParams init_backbone(const ModelShape& shape, Rng& rng) {
  if (shape.layers == 0) throw std::invalid_argument("init_backbone: at least one layer required");
  if (shape.input_dim == 0 || shape.hidden_dim == 0) throw std::invalid_argument("init_backbone: zero dimension");
  BackboneParams bb;
  std::size_t in = shape.input_dim;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    bb.neighbor.push_back(glorot_uniform(in, shape.hidden_dim, rng));
    bb.self.push_back(glorot_uniform(in, shape.hidden_dim, rng));
    in = shape.hidden_dim;
  }
  return bb;
}

inline HeadParams init_head(std::size_t hidden_dim, std::size_t num_classes, Rng& rng) {
  return HeadParams{glorot_uniform(hidden_dim, num_classes, rng), Tensor(1, num_classes)};
}

/// Tape handles for every model tensor, in canonical order.
struct ModelVars {
  std::vector<ad::Var> neighbor;
  std::vector<ad::Var> self;
  ad::Var head_weight;
  ad::Var head_bias;

  std::vector<ad::Var> list() const {
    std::vector<ad::Var> out;
    for (std::size_t l = 0; l < neighbor.size(); ++l) {
      out.push_back(neighbor[l]);
      out.push_back(self[l]);
    }
    out.push_back(head_weight);
    out.push_back(head_bias);
    return out;
  }
};

/// Records the model on `tape`; with `trainable` false the values are constants.
inline ModelVars bind(ad::Tape& tape, const ModelParams& m, bool trainable = true) {
  auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  ModelVars v;
  for (std::size_t l = 0; l < m.backbone.layers(); ++l) {
    v.neighbor.push_back(put(m.backbone.neighbor[l]));
    v.self.push_back(put(m.backbone.self[l]));
  }
  v.head_weight = put(m.head.weight);
  v.head_bias = put(m.head.bias);
  return v;
}

/// Collects gradients for `vars` into a ModelParams-shaped container.
inline ModelParams collect_gradients(const ad::Gradients& g, const ModelVars& vars, const ModelParams& like) {
  ModelParams out = like;
  const auto handles = vars.list();
  auto dst = tensor_list(out);
  for (std::size_t i = 0; i < handles.size(); ++i) *dst[i] = g[handles[i]];
  return out;
}

/// Node representations after all message passing layers. Isolated nodes get a
/// zero neighbor mean.
inline ad::Var forward_backbone(ad::Tape& tape, const ModelVars& vars, const BatchedGraph& batch) {
  if (vars.neighbor.empty()) throw std::invalid_argument("forward_backbone: empty backbone");
  const std::size_t d0 = tape.value(vars.neighbor[0]).rows();
  if (batch.features.cols() != d0) {
    throw ad::ShapeError("forward_backbone: batch feature dim " + std::to_string(batch.features.cols()) +
                         " != backbone input dim " + std::to_string(d0));
  }
  ad::Var h = tape.constant(batch.features);
  for (std::size_t l = 0; l < vars.neighbor.size(); ++l) {
    ad::Var agg = tape.segment_mean(h, batch.message_src, batch.message_dst, batch.num_nodes());
    ad::Var pre = tape.add(tape.matmul(agg, vars.neighbor[l]), tape.matmul(h, vars.self[l]));
    h = tape.relu(pre);
  }
  return h;
}

/// Per-graph mean of node rows.
inline ad::Var readout(ad::Tape& tape, ad::Var node_reps, const BatchedGraph& batch) {
  std::vector<std::size_t> sizes(batch.num_graphs, 0);
  for (std::size_t g : batch.membership) ++sizes[g];
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    if (sizes[g] == 0) throw std::invalid_argument("readout: graph " + std::to_string(g) + " has no nodes");
  }
  return tape.segment_mean(node_reps, batch.membership, batch.num_graphs);
}

inline ad::Var head_logits(ad::Tape& tape, const ModelVars& vars, ad::Var graph_reps) {
  return tape.add(tape.matmul(graph_reps, vars.head_weight), vars.head_bias);
}

struct LossVars {
  ad::Var loss;
  ad::Var representations;
  ad::Var logits;
};

inline LossVars forward_loss(ad::Tape& tape, const ModelVars& vars, const BatchedGraph& batch) {
  const ad::Var reps = readout(tape, forward_backbone(tape, vars, batch), batch);
  const ad::Var logits = head_logits(tape, vars, reps);
  return {tape.softmax_cross_entropy(logits, batch.labels), reps, logits};
}

/// Graph representations and logits without recording gradients.
struct Evaluation {
  Tensor representations;
  Tensor logits;
};

inline Evaluation evaluate(const ModelParams& m, const BatchedGraph& batch) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, m, false);
  const ad::Var reps = readout(tape, forward_backbone(tape, vars, batch), batch);
  const ad::Var logits = head_logits(tape, vars, reps);
  return {tape.value(reps), tape.value(logits)};
}

/// Mean cross-entropy of `m` on `batch`.
inline double evaluate_loss(const ModelParams& m, const BatchedGraph& batch) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, m, false);
  return tape.value(forward_loss(tape, vars, batch).loss).item();
}

/// Argmax over logits; ties go to the lowest class index.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows(), 0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<int> predict(const ModelParams& m, const BatchedGraph& batch) {
  return argmax_rows(evaluate(m, batch).logits);
}

inline double accuracy(const ModelParams& m, const BatchedGraph& batch) {
  const auto pred = predict(m, batch);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace sealfgl

#endif  // SEALFGL_GNN_HPP
