#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clipnet/backbone.hpp"
#include "clipnet/sequence.hpp"
#include "clipnet/train.hpp"

namespace clipnet {

// Merged run settings; every field has a default so an empty config is valid.
struct RunConfig {
    BackboneConfig backbone;
    SequenceConfig sequence;  // input_dim is derived from the backbone
    TrainConfig train;
    std::string frames_root;
    std::string annotations_root;
    std::string precision = "f32";  // f32 | f64 (f64 for eval/predict only)
    bool determinism = true;
    bool freeze_backbone = false;

    void validate() const;
};

// Dotted keys accepted by config files and --key overrides.
const std::vector<std::string>& config_keys();

// Applies one `key = value` assignment; unknown keys and malformed values
// raise ConfigError.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat `key = value` lines; '#' starts a comment; later lines win.
void apply_config_file(RunConfig& cfg, const std::string& path);

// Digest over the shape-determining settings; stored in checkpoints so a
// mismatched architecture is rejected at load time.
std::uint64_t model_config_digest(const RunConfig& cfg);

}  // namespace clipnet
