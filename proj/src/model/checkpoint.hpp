#pragma once

#include <functional>
#include <string>

#include <json.hpp>

#include "model/model.hpp"

namespace vton::model {

// JSON (de)serialization of the model configuration; shared by checkpoints
// and run configs. Readers are fail-closed: unknown or missing keys throw
// ConfigError.
nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json conditioning_to_json(const ConditioningSpec& s);
ConditioningSpec conditioning_from_json(const nlohmann::json& j);

// Checkpoint directory layout: manifest.json (format version, phase, config,
// conditioning spec, seed, per-group parameter inventory) plus one flat
// array container per parameter group. Writes are atomic: everything goes to
// a temp directory that is renamed over the target.
//
// `extra` (optional) is invoked with the temp directory path before the
// rename so callers can bundle additional state (e.g. optimizer moments)
// into the same atomic commit.
void save_checkpoint(const TryOnDenoiser& m, const std::string& dir, const std::string& phase,
                     const std::function<void(const std::string& tmp_dir)>& extra = nullptr);

struct LoadedCheckpoint {
    TryOnDenoiser model;
    std::string phase;
};

// Rebuilds the model from the manifest and restores every parameter group,
// validating the stored inventory (names and shapes, in order) against the
// freshly built model. Mismatches throw IoError.
LoadedCheckpoint load_checkpoint(const std::string& dir);

// Content hash over every regular file in the checkpoint directory, stable
// across identical saves; recorded in sampler run metadata.
uint64_t checkpoint_hash(const std::string& dir);

}  // namespace vton::model
