#pragma once

// Checkpoint file layout:
//
//   PROTOSOLO-CHECKPOINT
//   version = 1
//   config.<key> = <value>        (ModelConfig echo)
//   meta.<key> = <value>          (training metadata)
//   array <name> <d0>x<d1>x...    (one line per array, in payload order)
//   end-header
//   <payload: every array flattened, IEEE-754 float64 little-endian>
//
// The payload length must match the declared shapes exactly.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "protosolo/losses.hpp"
#include "protosolo/model.hpp"

namespace protosolo {

inline constexpr int checkpoint_version = 1;

struct TrainingMetadata {
    std::uint64_t seed = 0;
    std::size_t warm_epochs = 0;
    std::size_t joint_epochs = 0;
    std::size_t fc_epochs = 0;
    bool projected = false;
    LossBreakdown final_losses;
};

struct NamedArray {
    std::string name;
    Tensor value;
};

struct Checkpoint {
    ModelConfig config;
    TrainingMetadata meta;
    std::vector<NamedArray> arrays;
};

Checkpoint make_checkpoint(const Model& model, const TrainingMetadata& meta);
/// Rebuilds a model; every parameter must be present with the configured shape.
Model model_from_checkpoint(const Checkpoint& checkpoint);
/// Copies arrays into an existing model, rejecting any whose name or shape disagrees.
void load_into(const Checkpoint& checkpoint, Model& model);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `key = value` text of a model configuration (keys without prefix).
std::string model_config_text(const ModelConfig& config, std::string_view prefix = "");

} // namespace protosolo
