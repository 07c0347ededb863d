#include "ipdfer/losses.hpp"

#include <cmath>
#include <sstream>

#include "ipdfer/errors.hpp"

namespace ipdfer::loss {

void LossWeights::validate() const {
  for (double v : {lambda1, lambda2, lambda3, lambda4, beta1, beta2})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
}

std::string LossReport::to_line() const {
  std::ostringstream os;
  os.precision(10);
  os << "step=" << step << " epoch=" << epoch << " lr=" << lr;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) os << " " << key << "=" << *v;
  };
  put("recon", recon);
  put("id", id);
  put("cos", cos);
  put("confusion", confusion);
  put("exp_cls", exp_cls);
  put("pose_cls", pose_cls);
  put("c", c);
  put("d_real", d_real);
  put("neu_fake", neu_fake);
  put("exp_fake", exp_fake);
  put("g_prime", g_prime);
  put("g_total", g_total);
  return os.str();
}

NodeId reconstruction(Graph& g, NodeId x_fake_ipe, NodeId x_fake_ip, NodeId x,
                      const std::vector<int>& y_e, int neutral_class) {
  const Tensor& vx = g.value(x);
  check_same_shape(g.value(x_fake_ipe), vx, "reconstruction");
  check_same_shape(g.value(x_fake_ip), vx, "reconstruction");
  if (static_cast<int>(y_e.size()) != vx.dim(0))
    throw std::invalid_argument("reconstruction: label count does not match batch");
  NodeId full = g.mean(g.l1_per_sample(x_fake_ipe, x));
  std::vector<double> mask(y_e.size());
  for (std::size_t i = 0; i < y_e.size(); ++i) mask[i] = (y_e[i] == neutral_class) ? 1.0 : 0.0;
  NodeId neutral = g.masked_mean(g.l1_per_sample(x_fake_ip, x), std::move(mask));
  return g.add(full, neutral);
}

NodeId identity_consistency(Graph& g, const ConvEncoder& n, NodeId x_fake_ipe, NodeId x_fake_ip, NodeId x) {
  NodeId f_real = n.forward(g, x);
  NodeId f_ipe = n.forward(g, x_fake_ipe);
  NodeId f_ip = n.forward(g, x_fake_ip);
  NodeId a = g.mean(g.l1_per_sample(f_ipe, f_real));
  NodeId b = g.mean(g.l1_per_sample(f_ip, f_real));
  return g.add(a, b);
}

NodeId cosine_orthogonality(Graph& g, NodeId f_id, NodeId f_exp) {
  return g.abs_cosine_mean(f_id, f_exp);
}

NodeId pose_confusion(Graph& g, const LinearHead& c_p, NodeId f_exp) {
  return g.uniform_cross_entropy(c_p.forward(g, f_exp));
}

NodeId cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels) {
  return g.softmax_cross_entropy(logits, labels);
}

std::pair<double, double> assemble_generator_loss(const GeneratorTerms& t, const LossWeights& w) {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) throw TrainError(std::string("non-finite loss term: ") + name);
  };
  check(t.neu_fake, "neu_fake");
  check(t.exp_fake, "exp_fake");
  check(t.id, "id");
  check(t.recon, "recon");
  check(t.c, "c");
  check(t.cos, "cos");
  check(t.confusion, "confusion");
  const double g_prime = w.lambda1 * t.neu_fake + w.lambda2 * t.exp_fake + w.lambda3 * t.id + w.lambda4 * t.recon;
  const double g_total = g_prime + t.c + w.beta1 * t.cos + w.beta2 * t.confusion;
  return {g_prime, g_total};
}

double reconstruction_value(const Tensor& x_fake_ipe, const Tensor& x_fake_ip, const Tensor& x,
                            const std::vector<int>& y_e, int neutral_class) {
  Graph g;
  return g.value(reconstruction(g, g.input(x_fake_ipe), g.input(x_fake_ip), g.input(x), y_e, neutral_class)).item();
}

double cosine_orthogonality_value(const Tensor& f_id, const Tensor& f_exp) {
  Graph g;
  return g.value(g.abs_cosine_mean(g.input(f_id), g.input(f_exp))).item();
}

double pose_confusion_value(const Tensor& logits) {
  Graph g;
  return g.value(g.uniform_cross_entropy(g.input(logits))).item();
}

double cross_entropy_value(const Tensor& logits, const std::vector<int>& labels) {
  Graph g;
  return g.value(g.softmax_cross_entropy(g.input(logits), labels)).item();
}

}  // namespace ipdfer::loss
