#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ipdfer/graph.hpp"
#include "ipdfer/tensor.hpp"

namespace ipdfer::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over an explicit parameter set. Frozen parameters are never accepted,
/// so optimizer state exists only for what this phase updates.
class Adam {
 public:
  using Config = AdamConfig;

  struct Slot {
    Tensor m, v;
  };

  Adam(std::string name, std::vector<Parameter*> params, Config cfg = Config());

  /// One update from the gradients currently stored in the parameters.
  void step(double lr);
  void zero_grad();

  const std::string& name() const { return name_; }
  const std::vector<Parameter*>& params() const { return params_; }
  const Slot& slot(std::size_t i) const { return slots_[i]; }
  Slot& slot(std::size_t i) { return slots_[i]; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const Config& config() const { return cfg_; }

 private:
  std::string name_;
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  Config cfg_;
  std::int64_t t_ = 0;
};

}  // namespace ipdfer::train
