#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "clipnet/data.hpp"
#include "clipnet/errors.hpp"
#include "clipnet/model.hpp"
#include "clipnet/optimizer.hpp"

namespace clipnet {

struct TrainConfig {
    float learning_rate = 1e-4f;
    float momentum = 0.9f;
    int clips_per_batch = 4;
    int checkpoint_every = 1000;
    int max_iterations = 5000;
    std::uint64_t seed = 1;
    float grad_clip = 0.0f;  // 0 disables

    void validate() const {
        if (learning_rate < 0) throw ConfigError("train: learning rate must be non-negative");
        if (momentum < 0 || momentum >= 1)
            throw ConfigError("train: momentum must be in [0,1)");
        if (clips_per_batch < 1) throw ConfigError("train: clips per batch must be positive");
        if (checkpoint_every < 1) throw ConfigError("train: checkpoint interval must be positive");
        if (max_iterations < 1) throw ConfigError("train: max iterations must be positive");
        if (grad_clip < 0) throw ConfigError("train: gradient clip must be non-negative");
    }
};

// One optimization step's worth of clips, flattened to frame rows.
struct BatchAssembly {
    TensorF frames;  // [clips*8, 3, S, S]
    std::vector<int> labels;
    std::vector<std::uint8_t> mask;
    std::vector<std::string> video_ids;
};

BatchAssembly assemble_batch(const Dataset& ds, std::mt19937_64& rng, int clips_per_batch,
                             int image_size);

// Forward, masked cross-entropy, backward, SGD update. Returns the
// pre-update loss; a non-finite loss aborts with iteration and video ids.
float train_step(Model<float>& model, const BatchAssembly& batch, SgdOptimizer<float>& opt,
                 int iteration);

struct TrainLogEntry {
    int iteration = 0;
    float loss = 0.0f;
    double time_ms = 0.0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    std::vector<std::string> checkpoint_paths;
};

// Writes `iter=<n> loss=<val> time_ms=<val>` per iteration to `log`, and a
// checkpoint at every multiple of checkpoint_every plus at termination.
// Deterministic mode assembles batches synchronously; otherwise one
// prefetch task runs ahead of the step.
TrainResult train_loop(Model<float>& model, const Dataset& ds, const TrainConfig& cfg,
                       bool determinism, std::uint64_t config_digest,
                       const std::string& checkpoint_dir, std::ostream& log);

}  // namespace clipnet
