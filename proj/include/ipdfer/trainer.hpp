#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ipdfer/adam.hpp"
#include "ipdfer/checkpoint.hpp"
#include "ipdfer/factorgen.hpp"
#include "ipdfer/losses.hpp"
#include "ipdfer/nets.hpp"

namespace ipdfer::train {

struct TrainConfig {
  Mode mode = Mode::ipd;
  int batch_size = 32;
  int epochs = 30;
  double lr = 5e-3;
  double lr_decay = 0.1;
  int lr_decay_every = 10;
  loss::LossWeights weights;
  std::uint64_t seed = 1;
  int fold = 0;
  std::string out_dir;  // when non-empty, checkpoints and metrics.log go here

  void validate() const;
};

struct Batch {
  Tensor images;  // (N,C,H,W)
  std::vector<int> y_e, y_p, identity;
};

/// Alternating optimization: per batch, (1) classifiers, (2) discriminator,
/// (3) generator, each phase updating exactly its own parameter set. The
/// identity encoder is frozen throughout.
class Trainer {
 public:
  Trainer(ModelBundle& bundle, const data::Dataset& dataset, TrainConfig cfg);

  loss::LossReport step_classifiers(const Batch& b);
  loss::LossReport step_discriminator(const Batch& b);
  loss::LossReport step_generator(const Batch& b);
  /// All phases applicable to the mode, on the same batch; merged report.
  loss::LossReport iterate(const Batch& b);

  /// Full run from the current start epoch to cfg.epochs, with per-epoch
  /// learning-rate decay and a checkpoint at every epoch boundary.
  void run(const std::function<void(const loss::LossReport&)>& on_step = {});

  /// Continue from an epoch checkpoint (same config required).
  void resume_from(const std::string& checkpoint_path);

  double learning_rate_for_epoch(int epoch) const;
  std::vector<std::vector<int>> epoch_batches(int epoch) const;
  Batch make_batch(const std::vector<int>& indices) const;

  Adam* classifier_opt() { return opt_c_.get(); }
  Adam* discriminator_opt() { return opt_d_.get(); }
  Adam* generator_opt() { return opt_g_.get(); }
  int start_epoch() const { return start_epoch_; }
  long global_step() const { return global_step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  std::vector<Adam*> active_opts();

  ModelBundle& bundle_;
  const data::Dataset& ds_;
  TrainConfig cfg_;
  std::vector<int> train_idx_;
  std::unique_ptr<Adam> opt_c_, opt_d_, opt_g_;
  int start_epoch_ = 0;
  long global_step_ = 0;
  double current_lr_ = 0.0;
};

struct PretrainConfig {
  int epochs = 60;
  double lr = 5e-3;
  int batch_size = 32;
  std::uint64_t seed = 1;
  int fold = 0;
};

struct PretrainResult {
  double train_accuracy = 0.0;
  Digest digest{};
};

/// Trains the identity encoder with a temporary identity head (cross entropy
/// over identity labels, training identities only, across all poses and
/// expressions), then discards the head and freezes the encoder. The frozen
/// values are float32-rounded so the recorded digest matches checkpoints.
PretrainResult pretrain_identity_encoder(ConvEncoder& e_id, const data::Dataset& ds, const PretrainConfig& cfg);

}  // namespace ipdfer::train
