#include "ipdfer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "ipdfer/errors.hpp"

namespace ipdfer::train {

namespace {

constexpr std::uint64_t kShuffleStream = 0x50FF1eull;
constexpr std::uint64_t kPretrainStream = 0x93e7a11ull;

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw TrainError(std::string("non-finite loss in ") + what + ": " + std::to_string(v));
}

std::string ckpt_path(const std::string& dir, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%03d.ipck", epoch);
  return dir + "/" + buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (lr_decay_every < 1) throw ConfigError("train: lr_decay_every must be >= 1");
  if (!(lr_decay > 0.0)) throw ConfigError("train: lr_decay must be > 0");
  weights.validate();
}

Trainer::Trainer(ModelBundle& bundle, const data::Dataset& dataset, TrainConfig cfg)
    : bundle_(bundle), ds_(dataset), cfg_(cfg) {
  cfg_.validate();
  if (bundle.mode != cfg_.mode) throw ConfigError("train: bundle mode does not match config mode");
  const auto& sh = ds_.config.shape;
  if (sh.height != bundle.arch.height || sh.width != bundle.arch.width || sh.channels != bundle.arch.channels)
    throw ConfigError("train: dataset shape does not match model input shape");
  if (ds_.config.k_expressions != bundle.arch.k_expressions)
    throw ConfigError("train: dataset expression count does not match model");
  if (bundle.e_id && bundle.e_id->trainable())
    throw ConfigError("train: identity encoder must be pretrained and frozen first");
  train_idx_ = ds_.train_indices(cfg_.fold);
  if (train_idx_.empty()) throw ConfigError("train: empty training split");

  std::vector<Parameter*> c_set;
  if (bundle.mode == Mode::ipd) {
    for (Parameter* p : bundle.e_pose->parameters()) c_set.push_back(p);
    for (Parameter* p : bundle.c_p->parameters()) c_set.push_back(p);
  }
  for (Parameter* p : bundle.e_exp->parameters()) c_set.push_back(p);
  for (Parameter* p : bundle.c_exp->parameters()) c_set.push_back(p);
  opt_c_ = std::make_unique<Adam>("classifiers", std::move(c_set));

  if (bundle.mode != Mode::baseline) {
    opt_d_ = std::make_unique<Adam>("discriminator", bundle.d->parameters());
    std::vector<Parameter*> g_set;
    if (bundle.mode == Mode::ipd)
      for (Parameter* p : bundle.e_pose->parameters()) g_set.push_back(p);
    for (Parameter* p : bundle.e_exp->parameters()) g_set.push_back(p);
    for (Parameter* p : bundle.g_dec->parameters()) g_set.push_back(p);
    opt_g_ = std::make_unique<Adam>("generator", std::move(g_set));
  }
  current_lr_ = learning_rate_for_epoch(0);
}

double Trainer::learning_rate_for_epoch(int epoch) const {
  return cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(epoch / cfg_.lr_decay_every));
}

std::vector<std::vector<int>> Trainer::epoch_batches(int epoch) const {
  std::vector<int> order = train_idx_;
  Rng rng(Rng::mix(Rng::mix(kShuffleStream, cfg_.seed), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg_.batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg_.batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch Trainer::make_batch(const std::vector<int>& indices) const {
  Batch b;
  b.images = data::stack_images(ds_, indices);
  b.y_e.reserve(indices.size());
  b.y_p.reserve(indices.size());
  b.identity.reserve(indices.size());
  for (int i : indices) {
    const auto& s = ds_.samples[static_cast<std::size_t>(i)];
    b.y_e.push_back(s.y_e);
    b.y_p.push_back(s.y_p);
    b.identity.push_back(s.factors.identity_id);
  }
  return b;
}

loss::LossReport Trainer::step_classifiers(const Batch& b) {
  loss::LossReport rep;
  opt_c_->zero_grad();
  Graph g;
  NodeId x = g.input(b.images);
  NodeId f_exp = bundle_.e_exp->forward(g, x);
  NodeId l_exp = loss::cross_entropy(g, bundle_.c_exp->forward(g, f_exp), b.y_e);

  std::vector<NodeId> terms{l_exp};
  std::vector<double> weights{1.0};
  if (bundle_.mode == Mode::ipd) {
    NodeId f_pose = bundle_.e_pose->forward(g, x);
    NodeId l_pose = loss::cross_entropy(g, bundle_.c_p->forward(g, f_pose), b.y_p);
    terms.push_back(l_pose);
    weights.push_back(1.0);
    rep.pose_cls = g.value(l_pose).item();
  }
  if (bundle_.mode != Mode::baseline) {
    NodeId f_id = bundle_.e_id->forward(g, x);
    NodeId l_cos = loss::cosine_orthogonality(g, f_id, f_exp);
    terms.push_back(l_cos);
    weights.push_back(cfg_.weights.beta1);
    rep.cos = g.value(l_cos).item();
  }
  NodeId total = g.weighted_sum(terms, weights);
  check_finite(g.value(total).item(), "classifier step");
  g.backward(total);
  opt_c_->step(current_lr_);

  rep.exp_cls = g.value(l_exp).item();
  rep.c = *rep.exp_cls + rep.pose_cls.value_or(0.0);
  return rep;
}

loss::LossReport Trainer::step_discriminator(const Batch& b) {
  loss::LossReport rep;
  opt_d_->zero_grad();
  Graph g;
  NodeId logits = bundle_.d->forward(g, g.input(b.images));
  NodeId l = loss::cross_entropy(g, logits, b.y_e);
  check_finite(g.value(l).item(), "discriminator step");
  g.backward(l);
  opt_d_->step(current_lr_);
  rep.d_real = g.value(l).item();
  return rep;
}

loss::LossReport Trainer::step_generator(const Batch& b) {
  loss::LossReport rep;
  opt_g_->zero_grad();
  Graph g;
  const int n = b.images.dim(0);
  NodeId x = g.input(b.images);
  NodeId f_id = bundle_.e_id->forward(g, x);
  NodeId f_exp = bundle_.e_exp->forward(g, x);

  NodeId f_ip, f_ipe;
  if (bundle_.mode == Mode::ipd) {
    NodeId f_pose = bundle_.e_pose->forward(g, x);
    f_ip = g.add(f_id, f_pose);
    f_ipe = g.add3_commutative(f_id, f_pose, f_exp);
  } else {
    f_ip = f_id;
    f_ipe = g.add(f_id, f_exp);
  }
  NodeId x_ip = bundle_.g_dec->forward(g, f_ip);
  NodeId x_ipe = bundle_.g_dec->forward(g, f_ipe);

  NodeId l_recon = loss::reconstruction(g, x_ipe, x_ip, x, b.y_e, 0);
  NodeId l_id = loss::identity_consistency(g, *bundle_.e_id, x_ipe, x_ip, x);
  NodeId l_neu = loss::cross_entropy(g, bundle_.d->forward(g, x_ip), std::vector<int>(static_cast<std::size_t>(n), 0));
  NodeId l_expf = loss::cross_entropy(g, bundle_.d->forward(g, x_ipe), b.y_e);

  std::vector<NodeId> terms{l_neu, l_expf, l_id, l_recon};
  std::vector<double> weights{cfg_.weights.lambda1, cfg_.weights.lambda2, cfg_.weights.lambda3, cfg_.weights.lambda4};
  if (bundle_.mode == Mode::ipd) {
    NodeId l_conf = loss::pose_confusion(g, *bundle_.c_p, f_exp);
    terms.push_back(l_conf);
    weights.push_back(cfg_.weights.beta2);
    rep.confusion = g.value(l_conf).item();
  }
  NodeId total = g.weighted_sum(terms, weights);
  check_finite(g.value(total).item(), "generator step");
  g.backward(total);
  opt_g_->step(current_lr_);

  rep.recon = g.value(l_recon).item();
  rep.id = g.value(l_id).item();
  rep.neu_fake = g.value(l_neu).item();
  rep.exp_fake = g.value(l_expf).item();
  return rep;
}

loss::LossReport Trainer::iterate(const Batch& b) {
  loss::LossReport rep = step_classifiers(b);
  if (bundle_.mode != Mode::baseline) {
    loss::LossReport rd = step_discriminator(b);
    rep.d_real = rd.d_real;
    loss::LossReport rg = step_generator(b);
    rep.recon = rg.recon;
    rep.id = rg.id;
    rep.confusion = rg.confusion;
    rep.neu_fake = rg.neu_fake;
    rep.exp_fake = rg.exp_fake;

    loss::GeneratorTerms t;
    t.neu_fake = *rg.neu_fake;
    t.exp_fake = *rg.exp_fake;
    t.id = *rg.id;
    t.recon = *rg.recon;
    t.c = *rep.c;
    t.cos = rep.cos.value_or(0.0);
    t.confusion = rg.confusion.value_or(0.0);
    auto [g_prime, g_total] = loss::assemble_generator_loss(t, cfg_.weights);
    rep.g_prime = g_prime;
    rep.g_total = g_total;
  }
  return rep;
}

std::vector<Adam*> Trainer::active_opts() {
  std::vector<Adam*> opts{opt_c_.get()};
  if (opt_d_) opts.push_back(opt_d_.get());
  if (opt_g_) opts.push_back(opt_g_.get());
  return opts;
}

void Trainer::run(const std::function<void(const loss::LossReport&)>& on_step) {
  std::ofstream metrics;
  if (!cfg_.out_dir.empty()) {
    std::filesystem::create_directories(cfg_.out_dir);
    metrics.open(cfg_.out_dir + "/metrics.log", std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metrics log in " + cfg_.out_dir);
  }
  for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
    current_lr_ = learning_rate_for_epoch(epoch);
    for (const auto& idx : epoch_batches(epoch)) {
      loss::LossReport rep = iterate(make_batch(idx));
      rep.step = global_step_++;
      rep.epoch = epoch;
      rep.lr = current_lr_;
      if (metrics.is_open()) metrics << rep.to_line() << "\n";
      if (on_step) on_step(rep);
    }
    if (metrics.is_open()) metrics.flush();
    if (!cfg_.out_dir.empty()) {
      CheckpointMeta meta;
      meta.seed = cfg_.seed;
      meta.epoch = static_cast<std::uint32_t>(epoch + 1);
      meta.global_step = static_cast<std::uint64_t>(global_step_);
      write_checkpoint(ckpt_path(cfg_.out_dir, epoch + 1), bundle_, active_opts(), meta);
    }
  }
}

void Trainer::resume_from(const std::string& checkpoint_path) {
  CheckpointData data = read_checkpoint(checkpoint_path);
  if (data.meta.kind != CheckpointKind::bundle) throw ConfigError("resume: not a training checkpoint");
  if (data.meta.mode != cfg_.mode) throw ConfigError("resume: checkpoint mode does not match config");
  if (data.meta.seed != cfg_.seed) throw ConfigError("resume: checkpoint seed does not match config");
  if (static_cast<int>(data.meta.epoch) > cfg_.epochs) throw ConfigError("resume: checkpoint is past the epoch budget");
  apply_to_bundle(data, bundle_);
  for (Adam* opt : active_opts()) apply_to_optimizer(data, *opt);
  start_epoch_ = static_cast<int>(data.meta.epoch);
  global_step_ = static_cast<long>(data.meta.global_step);
}

PretrainResult pretrain_identity_encoder(ConvEncoder& e_id, const data::Dataset& ds, const PretrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) throw ConfigError("pretrain: bad optimizer config");
  const std::vector<int> train_idx = ds.train_indices(cfg.fold);
  std::set<int> id_set;
  for (int i : train_idx) id_set.insert(ds.samples[static_cast<std::size_t>(i)].factors.identity_id);
  if (id_set.size() < 2) throw ConfigError("pretrain: need at least 2 training identities");
  std::vector<int> ids(id_set.begin(), id_set.end());
  auto label_of = [&](int identity) {
    return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), identity) - ids.begin());
  };

  e_id.set_trainable(true);
  LinearHead head("id_head", e_id.feature_dim(), static_cast<int>(ids.size()));
  {
    Rng rng(Rng::mix(kPretrainStream, cfg.seed));
    head.init(rng);
  }
  std::vector<Parameter*> params = e_id.parameters();
  for (Parameter* p : head.parameters()) params.push_back(p);
  Adam opt("id_pretrain", std::move(params));

  const std::int64_t pix = static_cast<std::int64_t>(ds.config.shape.channels) * ds.config.shape.height * ds.config.shape.width;
  auto batch_of = [&](const std::vector<int>& indices) {
    Tensor images({static_cast<int>(indices.size()), ds.config.shape.channels, ds.config.shape.height, ds.config.shape.width});
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& s = ds.samples[static_cast<std::size_t>(indices[i])];
      std::copy(s.image.data(), s.image.data() + pix, images.data() + static_cast<std::int64_t>(i) * pix);
      labels.push_back(label_of(s.factors.identity_id));
    }
    return std::make_pair(std::move(images), std::move(labels));
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng rng(Rng::mix(Rng::mix(kPretrainStream, cfg.seed), static_cast<std::uint64_t>(epoch) + 1));
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
      auto [images, labels] = batch_of({order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end)});
      opt.zero_grad();
      Graph g;
      NodeId logits = head.forward(g, e_id.forward(g, g.input(images)));
      NodeId l = loss::cross_entropy(g, logits, labels);
      check_finite(g.value(l).item(), "identity pretraining");
      g.backward(l);
      opt.step(cfg.lr);
    }
  }

  // Final training accuracy with the temporary head still attached.
  int correct = 0;
  auto [images, labels] = batch_of(train_idx);
  Tensor logits = head.forward(encode(e_id, images));
  for (int r = 0; r < logits.dim(0); ++r) {
    int best = 0;
    for (int c = 1; c < logits.dim(1); ++c)
      if (logits.at2(r, c) > logits.at2(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }

  e_id.set_trainable(false);
  quantize_parameters(e_id);
  PretrainResult res;
  res.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_idx.size());
  res.digest = e_id.digest();
  return res;
}

}  // namespace ipdfer::train
