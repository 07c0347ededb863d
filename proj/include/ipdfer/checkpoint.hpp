#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "ipdfer/adam.hpp"
#include "ipdfer/digest.hpp"
#include "ipdfer/nets.hpp"

namespace ipdfer::train {

enum class CheckpointKind : std::uint32_t { bundle = 0, identity_encoder = 1 };

struct CheckpointMeta {
  CheckpointKind kind = CheckpointKind::bundle;
  Mode mode = Mode::ipd;
  ArchConfig arch;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;        // completed epochs
  std::uint64_t global_step = 0;  // completed iterations
  Digest e_id_digest{};           // zeros when no identity encoder present
  double pretrain_accuracy = 0.0;
};

struct CheckpointData {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
  struct OptState {
    std::string name;
    std::int64_t t = 0;
    std::vector<std::tuple<std::string, Tensor, Tensor>> slots;  // (param, m, v)
  };
  std::vector<OptState> opt_states;
};

/// Rounds every element through float32. Saving applies this to the live
/// parameters and optimizer state so that a resumed run and the continued
/// in-memory run evolve from bit-identical values.
void quantize_f32(Tensor& t);
void quantize_parameters(Net& net);

/// Writes a full-bundle checkpoint. Quantizes bundle parameters and the given
/// optimizer states in place before writing.
void write_checkpoint(const std::string& path, ModelBundle& bundle, const std::vector<Adam*>& opts,
                      CheckpointMeta meta);

/// Writes an identity-encoder-only checkpoint (kind = identity_encoder);
/// quantizes the encoder parameters in place.
void write_identity_checkpoint(const std::string& path, ConvEncoder& e_id, CheckpointMeta meta);

CheckpointData read_checkpoint(const std::string& path);

/// Strictly fills all bundle parameters from a bundle checkpoint (name and
/// shape matched), freezes the identity encoder, and verifies its digest.
void apply_to_bundle(const CheckpointData& data, ModelBundle& bundle);

/// Restores one optimizer's moments and step count by name.
void apply_to_optimizer(const CheckpointData& data, Adam& opt);

/// Reconstructs a bundle directly from a bundle checkpoint.
std::unique_ptr<ModelBundle> bundle_from_checkpoint(const CheckpointData& data);

/// Copies a pretrained identity encoder into bundle.e_id, freezes it, and
/// verifies the stored digest.
void apply_identity_encoder(const CheckpointData& data, ModelBundle& bundle);

}  // namespace ipdfer::train
