#ifndef SEALFGL_CHECKPOINT_HPP
#define SEALFGL_CHECKPOINT_HPP

// Model checkpoint, text format version 1:
//
//   sealfgl-checkpoint 1
//   <tensor-count>
//   <name> <rows> <cols>
//   <rows*cols values, row-major, shortest round-trip decimal>
//   ...
//
// Tensor names follow the canonical order backbone.W0, backbone.B0, ...,
// head.V, head.b. Values round-trip bit-exactly.

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sealfgl/gnn.hpp"

namespace sealfgl {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_checkpoint(std::ostream& os, const ModelParams& m) {
  os << "sealfgl-checkpoint " << kCheckpointVersion << '\n';
  os << tensor_list(m).size() << '\n';
  char buf[32];
  for_each_tensor(m, [&](const std::string& name, const Tensor& t) {
    os << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), t[i]);
      if (i) os << ' ';
      os.write(buf, end - buf);
    }
    os << '\n';
  });
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& m) {
  std::ofstream os(path);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  write_checkpoint(os, m);
}

inline ModelParams read_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "sealfgl-checkpoint") throw CheckpointError("not a sealfgl checkpoint");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::size_t count = 0;
  if (!(is >> count) || count < 4 || count % 2 != 0) throw CheckpointError("bad tensor count");
  const std::size_t layers = (count - 2) / 2;
  ModelParams m;
  m.backbone.neighbor.resize(layers);
  m.backbone.self.resize(layers);
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols)) throw CheckpointError("truncated tensor header at index " + std::to_string(k));
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::string tok;
      if (!(is >> tok)) throw CheckpointError("truncated values for " + name);
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), t[i]);
      if (ec != std::errc() || p != tok.data() + tok.size()) throw CheckpointError("bad value '" + tok + "' in " + name);
    }
    std::string expected;
    if (k < 2 * layers) {
      expected = backbone_tensor_name(k / 2, k % 2 == 1);
      (k % 2 ? m.backbone.self : m.backbone.neighbor)[k / 2] = std::move(t);
    } else if (k == 2 * layers) {
      expected = "head.V";
      m.head.weight = std::move(t);
    } else {
      expected = "head.b";
      m.head.bias = std::move(t);
    }
    if (name != expected) throw CheckpointError("expected tensor " + expected + ", found " + name);
  }
  return m;
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

/// Throws CheckpointError naming the first tensor whose shape disagrees with `shape`.
inline void check_checkpoint_shape(const ModelParams& m, const ModelShape& shape) {
  if (m.backbone.layers() != shape.layers) {
    throw CheckpointError("checkpoint has " + std::to_string(m.backbone.layers()) + " layers, config expects " +
                          std::to_string(shape.layers));
  }
  std::size_t in = shape.input_dim;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    for (bool self : {false, true}) {
      const Tensor& t = self ? m.backbone.self[l] : m.backbone.neighbor[l];
      if (t.rows() != in || t.cols() != shape.hidden_dim) {
        throw CheckpointError(backbone_tensor_name(l, self) + " is " + t.shape_string() + ", config expects [" +
                              std::to_string(in) + " x " + std::to_string(shape.hidden_dim) + "]");
      }
    }
    in = shape.hidden_dim;
  }
  if (m.head.weight.rows() != shape.hidden_dim || m.head.weight.cols() != shape.num_classes ||
      m.head.bias.rows() != 1 || m.head.bias.cols() != shape.num_classes) {
    throw CheckpointError("head shape " + m.head.weight.shape_string() + " incompatible with config");
  }
}

}  // namespace sealfgl

#endif  // SEALFGL_CHECKPOINT_HPP
