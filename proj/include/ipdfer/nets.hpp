#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ipdfer/digest.hpp"
#include "ipdfer/graph.hpp"
#include "ipdfer/rng.hpp"
#include "ipdfer/tensor.hpp"

namespace ipdfer {

/// Base for parameterized networks: owns named parameters in registration
/// order (stable addresses) and provides digesting over the raw values.
class Net {
 public:
  explicit Net(std::string name) : name_(std::move(name)) {}
  virtual ~Net() = default;
  Net(const Net&) = delete;
  Net& operator=(const Net&) = delete;

  const std::string& name() const { return name_; }

  virtual std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  void zero_grad();
  void set_trainable(bool trainable);
  bool trainable() const;
  std::int64_t parameter_count() const;

  /// SHA-256 over the raw double bytes of all parameters, framed by name.
  Digest digest() const;

  /// Gaussian fan-in init for weights, zeros for biases, identity for norms.
  void init(Rng& rng);

 protected:
  Parameter& make_param(const std::string& local, std::vector<int> dims);
  std::vector<std::unique_ptr<Parameter>> own_;
  std::string name_;
};

struct ArchConfig {
  int feature_dim = 64;
  std::array<int, 3> widths = {16, 32, 64};
  int height = 32;
  int width = 32;
  int channels = 1;
  int k_expressions = 4;
  int k_pose = 5;

  bool operator==(const ArchConfig&) const = default;
};

/// Strided conv stack -> global average pool -> affine to the feature space.
class ConvEncoder : public Net {
 public:
  ConvEncoder(std::string name, const ArchConfig& arch);
  NodeId forward(Graph& g, NodeId images) const;
  /// Convenience forward on plain tensors (no gradient bookkeeping kept).
  Tensor forward(const Tensor& images) const;
  int feature_dim() const { return arch_.feature_dim; }

 private:
  ArchConfig arch_;
  Parameter *c1w_, *c1b_, *c2w_, *c2b_, *c3w_, *c3b_, *fcw_, *fcb_;
};

/// Affine from feature space to a spatial block, then transposed-conv blocks
/// with instance normalization and a terminal sigmoid.
class Decoder : public Net {
 public:
  Decoder(std::string name, const ArchConfig& arch);
  NodeId forward(Graph& g, NodeId features) const;
  Tensor forward(const Tensor& features) const;

 private:
  ArchConfig arch_;
  int h0_, w0_;
  Parameter *fcw_, *fcb_;
  Parameter *d1w_, *d1b_, *n1g_, *n1b_;
  Parameter *d2w_, *d2b_, *n2g_, *n2b_;
  Parameter *d3w_, *d3b_;
};

/// Single affine map from feature space to class logits.
class LinearHead : public Net {
 public:
  LinearHead(std::string name, int in_dim, int out_dim);
  NodeId forward(Graph& g, NodeId features) const;
  Tensor forward(const Tensor& features) const;
  int out_dim() const { return out_dim_; }

 private:
  int in_dim_, out_dim_;
  Parameter *w_, *b_;
};

/// Encoder trunk plus a K-way expression head over images.
class Discriminator : public Net {
 public:
  Discriminator(std::string name, const ArchConfig& arch);
  std::vector<Parameter*> parameters() override;
  NodeId forward(Graph& g, NodeId images) const;  // logits (N,K)
  Tensor forward(const Tensor& images) const;

 private:
  ConvEncoder trunk_;
  LinearHead head_;
};

enum class Mode { baseline, id_only, ipd };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

/// The networks of one run. Which members exist depends on the mode:
///   baseline: e_exp, c_exp
///   id_only:  + e_id (frozen), g_dec, d
///   ipd:      + e_pose, c_p
class ModelBundle {
 public:
  ModelBundle(Mode mode, const ArchConfig& arch, std::uint64_t seed);

  Mode mode;
  ArchConfig arch;
  std::unique_ptr<ConvEncoder> e_id, e_pose, e_exp;
  std::unique_ptr<Decoder> g_dec;
  std::unique_ptr<Discriminator> d;
  std::unique_ptr<LinearHead> c_p, c_exp;

  /// All nets present in this mode, in canonical order.
  std::vector<Net*> nets();
  std::vector<const Net*> nets() const;
  Net* net_by_name(const std::string& name);

  Digest identity_encoder_digest() const;
};

// Feature composition: plain IEEE sums. The three-feature variant sorts the
// addends per component so every argument permutation is bit-identical.
Tensor compose(const Tensor& f_id, const Tensor& f_pose);
Tensor compose(const Tensor& f_id, const Tensor& f_pose, const Tensor& f_exp);

// Value-level forward helpers (deterministic evaluation-mode passes).
Tensor encode(const ConvEncoder& enc, const Tensor& images);
Tensor decode(const Decoder& dec, const Tensor& features);
/// Returns (logits, softmax distribution).
std::pair<Tensor, Tensor> discriminate(const Discriminator& d, const Tensor& images);
Tensor classify(const LinearHead& head, const Tensor& features);

}  // namespace ipdfer
