#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qcomp/competition/competition.hpp"
#include "qcomp/decoder/decoder.hpp"
#include "qcomp/scene/scene.hpp"
#include "qcomp/training/training.hpp"

namespace qcomp::cli {

struct DataConfig {
  std::size_t train_scenes = 64;
  std::size_t val_scenes = 16;
  std::uint64_t seed = 0;  // scene seeds derive from this, independent of the run seed
  std::string dir = "data";
};

/// Everything one run depends on. `train.seed` also seeds model initialization.
struct RunConfig {
  scene::SceneConfig scene;
  DataConfig data;
  decoder::DecoderConfig decoder;
  competition::CompetitionConfig competition;
  training::TrainConfig train;
};

/// Flat `key = value` lines; `#` starts a comment. Keys absent from the text
/// keep their defaults. `train.mode` (baseline|competitor) presets the three
/// toggles, and explicit `toggles.*` keys override it regardless of order.
/// Throws ConfigError naming the key (and line) for unknown keys, duplicates,
/// unparsable values and failed validation.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Checks every section; throws ConfigError naming the first offending key.
void validate(const RunConfig& cfg);

/// Every key in a fixed order, values formatted round-trip exact. Parsing the
/// result gives back an equal configuration.
std::string to_text(const RunConfig& cfg);

/// FNV-1a (64 bit) over to_text without paths and `train.epochs`: extending a
/// run or moving its directories keeps the hash. 16 lowercase hex digits.
std::string config_hash(const RunConfig& cfg);

/// Same, restricted to the `scene.*` and `data.*` keys that determine the dataset.
std::string data_hash(const RunConfig& cfg);

std::string fnv1a_hex(const std::string& bytes);

std::vector<std::string> config_keys();

}  // namespace qcomp::cli
