#pragma once

#include <filesystem>
#include <string>

#include "qcomp/training/training.hpp"

namespace qcomp::training {

inline constexpr int kCheckpointVersion = 1;

/// {"epoch":..,"loss_total":..,...} with map50_val only when present.
std::string metrics_json(const EpochMetrics& m);

/// Writes parameters, optimizer moments, the epoch counter, the metrics log and
/// the run-config hash. Doubles are written round-trip exact.
void save_checkpoint(const TrainState& state, const std::string& config_hash, const std::filesystem::path& path);

/// Restores into a freshly initialized `model` of the same configuration.
/// Throws CheckpointError on a hash, name, shape or version mismatch.
TrainState load_checkpoint(const std::filesystem::path& path, decoder::Model model, const std::string& config_hash);

}  // namespace qcomp::training
