#include "ipdfer/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "ipdfer/errors.hpp"

namespace ipdfer {

std::vector<Parameter*> Net::parameters() {
  std::vector<Parameter*> out;
  out.reserve(own_.size());
  for (auto& p : own_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> Net::parameters() const {
  std::vector<const Parameter*> out;
  auto mut = const_cast<Net*>(this)->parameters();
  out.assign(mut.begin(), mut.end());
  return out;
}

void Net::zero_grad() {
  for (Parameter* p : parameters()) {
    if (p->grad.size() != p->value.size()) p->grad = Tensor(p->value.dims());
    p->grad.fill(0.0);
  }
}

void Net::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->trainable = trainable;
}

bool Net::trainable() const {
  for (const Parameter* p : parameters())
    if (p->trainable) return true;
  return false;
}

std::int64_t Net::parameter_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

Digest Net::digest() const {
  Sha256 h;
  for (const Parameter* p : parameters()) {
    h.update(p->name.data(), p->name.size());
    h.update_u64(static_cast<std::uint64_t>(p->value.size()));
    h.update(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return const_cast<Sha256&>(h).finish();
}

Parameter& Net::make_param(const std::string& local, std::vector<int> dims) {
  auto p = std::make_unique<Parameter>();
  p->name = name_ + "." + local;
  p->value = Tensor(std::move(dims));
  p->grad = Tensor(p->value.dims());
  own_.push_back(std::move(p));
  return *own_.back();
}

namespace {

// Fan-in of the output unit: everything but the leading dimension for conv
// and linear weights; transposed-conv weights are (Cin, Cout, k, k) so the
// input channel count is the leading dimension instead.
std::int64_t fan_in_for(const Parameter& p, bool transposed) {
  const auto& d = p.value.dims();
  if (d.size() == 4) {
    return transposed ? static_cast<std::int64_t>(d[0]) * d[2] * d[3]
                      : static_cast<std::int64_t>(d[1]) * d[2] * d[3];
  }
  if (d.size() == 2) return d[1];
  return 1;
}

void init_weight(Parameter& p, Rng& rng, bool transposed) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in_for(p, transposed)));
  for (std::int64_t i = 0; i < p.value.size(); ++i) p.value[i] = std * rng.gaussian();
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void Net::init(Rng& rng) {
  for (Parameter* p : parameters()) {
    if (ends_with(p->name, ".w")) {
      init_weight(*p, rng, ends_with(p->name, "deconv1.w") || ends_with(p->name, "deconv2.w") || ends_with(p->name, "deconv3.w"));
    } else if (ends_with(p->name, ".gamma")) {
      p->value.fill(1.0);
    } else {
      p->value.fill(0.0);  // biases, beta
    }
  }
}

ConvEncoder::ConvEncoder(std::string name, const ArchConfig& arch) : Net(std::move(name)), arch_(arch) {
  const auto [c1, c2, c3] = arch.widths;
  c1w_ = &make_param("conv1.w", {c1, arch.channels, 3, 3});
  c1b_ = &make_param("conv1.b", {c1});
  c2w_ = &make_param("conv2.w", {c2, c1, 3, 3});
  c2b_ = &make_param("conv2.b", {c2});
  c3w_ = &make_param("conv3.w", {c3, c2, 3, 3});
  c3b_ = &make_param("conv3.b", {c3});
  fcw_ = &make_param("fc.w", {arch.feature_dim, c3});
  fcb_ = &make_param("fc.b", {arch.feature_dim});
}

NodeId ConvEncoder::forward(Graph& g, NodeId images) const {
  const Tensor& v = g.value(images);
  if (v.rank() != 4 || v.dim(1) != arch_.channels || v.dim(2) != arch_.height || v.dim(3) != arch_.width)
    throw std::invalid_argument(name_ + ": input shape " + v.shape_str() + " does not match model input");
  NodeId h = g.leaky_relu(g.conv2d(images, g.param(*c1w_), g.param(*c1b_), 2, 1), 0.2);
  h = g.leaky_relu(g.conv2d(h, g.param(*c2w_), g.param(*c2b_), 2, 1), 0.2);
  h = g.leaky_relu(g.conv2d(h, g.param(*c3w_), g.param(*c3b_), 2, 1), 0.2);
  h = g.global_avg_pool(h);
  return g.linear(h, g.param(*fcw_), g.param(*fcb_));
}

Tensor ConvEncoder::forward(const Tensor& images) const {
  Graph g;
  return g.value(forward(g, g.input(images)));
}

Decoder::Decoder(std::string name, const ArchConfig& arch) : Net(std::move(name)), arch_(arch) {
  if (arch.height % 8 != 0 || arch.width % 8 != 0)
    throw ConfigError("decoder: image height and width must be divisible by 8");
  h0_ = arch.height / 8;
  w0_ = arch.width / 8;
  const auto [c1, c2, c3] = arch.widths;
  fcw_ = &make_param("fc.w", {c3 * h0_ * w0_, arch.feature_dim});
  fcb_ = &make_param("fc.b", {c3 * h0_ * w0_});
  d1w_ = &make_param("deconv1.w", {c3, c2, 4, 4});
  d1b_ = &make_param("deconv1.b", {c2});
  n1g_ = &make_param("norm1.gamma", {c2});
  n1b_ = &make_param("norm1.beta", {c2});
  d2w_ = &make_param("deconv2.w", {c2, c1, 4, 4});
  d2b_ = &make_param("deconv2.b", {c1});
  n2g_ = &make_param("norm2.gamma", {c1});
  n2b_ = &make_param("norm2.beta", {c1});
  d3w_ = &make_param("deconv3.w", {c1, arch.channels, 4, 4});
  d3b_ = &make_param("deconv3.b", {arch.channels});
}

NodeId Decoder::forward(Graph& g, NodeId features) const {
  const Tensor& v = g.value(features);
  if (v.rank() != 2 || v.dim(1) != arch_.feature_dim)
    throw std::invalid_argument(name_ + ": feature shape " + v.shape_str() + " does not match feature_dim");
  const int n = v.dim(0);
  const auto [c1, c2, c3] = arch_.widths;
  NodeId h = g.linear(features, g.param(*fcw_), g.param(*fcb_));
  h = g.reshape(h, {n, c3, h0_, w0_});
  h = g.conv_transpose2d(h, g.param(*d1w_), g.param(*d1b_), 2, 1);
  h = g.relu(g.instance_norm(h, g.param(*n1g_), g.param(*n1b_)));
  h = g.conv_transpose2d(h, g.param(*d2w_), g.param(*d2b_), 2, 1);
  h = g.relu(g.instance_norm(h, g.param(*n2g_), g.param(*n2b_)));
  h = g.conv_transpose2d(h, g.param(*d3w_), g.param(*d3b_), 2, 1);
  return g.sigmoid(h);
}

Tensor Decoder::forward(const Tensor& features) const {
  Graph g;
  return g.value(forward(g, g.input(features)));
}

LinearHead::LinearHead(std::string name, int in_dim, int out_dim)
    : Net(std::move(name)), in_dim_(in_dim), out_dim_(out_dim) {
  w_ = &make_param("w", {out_dim, in_dim});
  b_ = &make_param("b", {out_dim});
}

NodeId LinearHead::forward(Graph& g, NodeId features) const {
  const Tensor& v = g.value(features);
  if (v.rank() != 2 || v.dim(1) != in_dim_)
    throw std::invalid_argument(name_ + ": feature shape " + v.shape_str() + " does not match input dim");
  return g.linear(features, g.param(*w_), g.param(*b_));
}

Tensor LinearHead::forward(const Tensor& features) const {
  Graph g;
  return g.value(forward(g, g.input(features)));
}

Discriminator::Discriminator(std::string name, const ArchConfig& arch)
    : Net(std::move(name)), trunk_(name + ".trunk", arch), head_(name + ".head", arch.feature_dim, arch.k_expressions) {}

std::vector<Parameter*> Discriminator::parameters() {
  std::vector<Parameter*> out = trunk_.parameters();
  for (Parameter* p : head_.parameters()) out.push_back(p);
  return out;
}

NodeId Discriminator::forward(Graph& g, NodeId images) const {
  return head_.forward(g, trunk_.forward(g, images));
}

Tensor Discriminator::forward(const Tensor& images) const {
  Graph g;
  return g.value(forward(g, g.input(images)));
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::id_only: return "id-only";
    case Mode::ipd: return "ipd";
  }
  return "?";
}

Mode mode_from_name(const std::string& s) {
  if (s == "baseline") return Mode::baseline;
  if (s == "id-only" || s == "id_only") return Mode::id_only;
  if (s == "ipd") return Mode::ipd;
  throw ConfigError("unknown mode '" + s + "' (expected baseline|id-only|ipd)");
}

ModelBundle::ModelBundle(Mode m, const ArchConfig& a, std::uint64_t seed) : mode(m), arch(a) {
  auto seeded = [&](Net& net) {
    const Digest dg = Sha256::of(net.name().data(), net.name().size());
    std::uint64_t h = 0;
    for (int i = 0; i < 8; ++i) h = (h << 8) | dg[static_cast<std::size_t>(i)];
    Rng rng(Rng::mix(seed, h));
    net.init(rng);
  };
  e_exp = std::make_unique<ConvEncoder>("e_exp", arch);
  seeded(*e_exp);
  c_exp = std::make_unique<LinearHead>("c_exp", arch.feature_dim, arch.k_expressions);
  seeded(*c_exp);
  if (mode != Mode::baseline) {
    e_id = std::make_unique<ConvEncoder>("e_id", arch);
    seeded(*e_id);
    g_dec = std::make_unique<Decoder>("g_dec", arch);
    seeded(*g_dec);
    d = std::make_unique<Discriminator>("d", arch);
    seeded(*d);
  }
  if (mode == Mode::ipd) {
    e_pose = std::make_unique<ConvEncoder>("e_pose", arch);
    seeded(*e_pose);
    c_p = std::make_unique<LinearHead>("c_p", arch.feature_dim, arch.k_pose);
    seeded(*c_p);
  }
}

std::vector<Net*> ModelBundle::nets() {
  std::vector<Net*> out;
  for (Net* n : std::initializer_list<Net*>{e_id.get(), e_pose.get(), e_exp.get(), g_dec.get(), d.get(), c_p.get(), c_exp.get()})
    if (n) out.push_back(n);
  return out;
}

std::vector<const Net*> ModelBundle::nets() const {
  std::vector<const Net*> out;
  auto mut = const_cast<ModelBundle*>(this)->nets();
  out.assign(mut.begin(), mut.end());
  return out;
}

Net* ModelBundle::net_by_name(const std::string& name) {
  for (Net* n : nets())
    if (n->name() == name) return n;
  return nullptr;
}

Digest ModelBundle::identity_encoder_digest() const {
  if (!e_id) throw std::logic_error("bundle has no identity encoder");
  return e_id->digest();
}

Tensor compose(const Tensor& f_id, const Tensor& f_pose) {
  check_same_shape(f_id, f_pose, "compose");
  Tensor out = f_id;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += f_pose[i];
  return out;
}

Tensor compose(const Tensor& f_id, const Tensor& f_pose, const Tensor& f_exp) {
  check_same_shape(f_id, f_pose, "compose");
  check_same_shape(f_id, f_exp, "compose");
  Graph g;
  return g.value(g.add3_commutative(g.input(f_id), g.input(f_pose), g.input(f_exp)));
}

Tensor encode(const ConvEncoder& enc, const Tensor& images) { return enc.forward(images); }

Tensor decode(const Decoder& dec, const Tensor& features) { return dec.forward(features); }

std::pair<Tensor, Tensor> discriminate(const Discriminator& d, const Tensor& images) {
  Tensor logits = d.forward(images);
  return {logits, softmax_rows(logits)};
}

Tensor classify(const LinearHead& head, const Tensor& features) { return head.forward(features); }

}  // namespace ipdfer
