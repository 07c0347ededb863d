#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ipdfer/graph.hpp"
#include "ipdfer/nets.hpp"

namespace ipdfer::loss {

/// Weights of the composite generator objective.
struct LossWeights {
  double lambda1 = 0.001;  // fake-neutral adversarial term
  double lambda2 = 0.001;  // fake-expressional adversarial term
  double lambda3 = 1.0;    // identity consistency
  double lambda4 = 10.0;   // reconstruction
  double beta1 = 0.5;      // feature orthogonality
  double beta2 = 1.0;      // pose confusion
  void validate() const;
};

/// Per-term scalar values of one training iteration; optional entries are
/// absent in ablated modes. Serialized as one key=value line per step.
struct LossReport {
  long step = -1;
  int epoch = -1;
  double lr = 0.0;
  std::optional<double> recon, id, cos, confusion, exp_cls, pose_cls, c;
  std::optional<double> d_real, neu_fake, exp_fake, g_prime, g_total;

  std::string to_line() const;
};

// ---- graph-building loss terms (each returns a scalar node) ----

/// L1(x_fake_ipe, x) + 1[y_e == c] * L1(x_fake_ip, x), batch mean. The
/// indicator contributes a zero term (not a dropped sample) for non-neutral
/// labels, so the batch size stays constant.
NodeId reconstruction(Graph& g, NodeId x_fake_ipe, NodeId x_fake_ip, NodeId x,
                      const std::vector<int>& y_e, int neutral_class);

/// Mean absolute feature distance between N(fake) and N(x) for both fakes;
/// N is the frozen identity network, so gradients reach only the fakes.
NodeId identity_consistency(Graph& g, const ConvEncoder& n, NodeId x_fake_ipe, NodeId x_fake_ip, NodeId x);

/// mean |cos(f_id, f_exp)|; in [0,1], zero iff orthogonal (eps-guarded).
NodeId cosine_orthogonality(Graph& g, NodeId f_id, NodeId f_exp);

/// Cross entropy of softmax(C_p(f_exp)) against the uniform distribution;
/// minimized (= log K_P) exactly at uniform output.
NodeId pose_confusion(Graph& g, const LinearHead& c_p, NodeId f_exp);

/// -log softmax_label(logits), batch mean. Serves the classifier losses, the
/// discriminator real loss, and both fake-image adversarial losses.
NodeId cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels);

// ---- composite assembly ----

struct GeneratorTerms {
  double neu_fake = 0.0;
  double exp_fake = 0.0;
  double id = 0.0;
  double recon = 0.0;
  double c = 0.0;
  double cos = 0.0;
  double confusion = 0.0;
};

/// (g_prime, g_total) with
///   g_prime = l1*neu_fake + l2*exp_fake + l3*id + l4*recon
///   g_total = g_prime + c + b1*cos + b2*confusion.
/// Any non-finite term raises TrainError naming the term.
std::pair<double, double> assemble_generator_loss(const GeneratorTerms& t, const LossWeights& w);

// ---- plain-value conveniences (thin wrappers over the graph ops) ----

double reconstruction_value(const Tensor& x_fake_ipe, const Tensor& x_fake_ip, const Tensor& x,
                            const std::vector<int>& y_e, int neutral_class);
double cosine_orthogonality_value(const Tensor& f_id, const Tensor& f_exp);
double pose_confusion_value(const Tensor& logits);
double cross_entropy_value(const Tensor& logits, const std::vector<int>& labels);

}  // namespace ipdfer::loss
