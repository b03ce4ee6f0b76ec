#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clipnet/errors.hpp"
#include "clipnet/model.hpp"
#include "clipnet/optimizer.hpp"
#include "clipnet/tensor.hpp"

namespace clipnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

// On-disk snapshot: parameters, optimizer momentum buffers (prefixed
// "opt.momentum."), sampler RNG state, and a digest of the model shape
// configuration. Entry order is preserved so save/load/save is
// byte-identical.
struct Checkpoint {
    std::uint32_t format_version = kCheckpointVersion;
    std::uint64_t iteration = 0;
    std::uint64_t config_digest = 0;
    std::string rng_state;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// `source_name -> target_name` per line; blank lines and '#' comments allowed.
struct NameMapping {
    std::string source, target;
};
std::vector<NameMapping> parse_name_map(const std::string& path);

template <typename T>
Checkpoint snapshot_model(Model<T>& model, const SgdOptimizer<T>* opt, std::uint64_t iteration,
                          std::uint64_t config_digest, const std::string& rng_state) {
    Checkpoint ckpt;
    ckpt.iteration = iteration;
    ckpt.config_digest = config_digest;
    ckpt.rng_state = rng_state;
    ParamList<T> params = model.params();
    for (const auto& e : params) {
        CheckpointEntry entry;
        entry.name = e.name;
        entry.shape = e.value->shape();
        entry.values.resize(e.value->size());
        for (std::size_t i = 0; i < entry.values.size(); ++i)
            entry.values[i] = static_cast<float>((*e.value)[i]);
        ckpt.entries.push_back(std::move(entry));
    }
    if (opt) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            if (!params[k].trainable || k >= opt->velocity.size()) continue;
            const Tensor<T>& v = opt->velocity[k];
            CheckpointEntry entry;
            entry.name = "opt.momentum." + params[k].name;
            entry.shape = v.empty() ? params[k].value->shape() : v.shape();
            entry.values.assign(Tensor<T>(entry.shape).size(), 0.0f);
            for (std::size_t i = 0; i < v.size(); ++i)
                entry.values[i] = static_cast<float>(v[i]);
            ckpt.entries.push_back(std::move(entry));
        }
    }
    return ckpt;
}

template <typename T>
void restore_model(const Checkpoint& ckpt, Model<T>& model, SgdOptimizer<T>* opt,
                   std::uint64_t expected_digest) {
    if (ckpt.config_digest != expected_digest)
        throw DataError("checkpoint config digest " + std::to_string(ckpt.config_digest) +
                        " does not match model digest " + std::to_string(expected_digest));
    ParamList<T> params = model.params();
    for (const auto& e : params) {
        const CheckpointEntry* src = ckpt.find(e.name);
        if (!src) throw DataError("checkpoint is missing parameter " + e.name);
        if (src->shape != e.value->shape())
            throw DataError("checkpoint parameter " + e.name + " has shape " +
                            Tensor<float>::shape_string(src->shape) + ", model expects " +
                            e.value->shape_string());
        for (std::size_t i = 0; i < src->values.size(); ++i)
            (*e.value)[i] = static_cast<T>(src->values[i]);
    }
    if (opt) {
        opt->init(params);
        for (std::size_t k = 0; k < params.size(); ++k) {
            if (!params[k].trainable) continue;
            const CheckpointEntry* src = ckpt.find("opt.momentum." + params[k].name);
            if (!src) continue;
            if (src->shape != params[k].value->shape())
                throw DataError("checkpoint momentum for " + params[k].name +
                                " has shape " + Tensor<float>::shape_string(src->shape));
            for (std::size_t i = 0; i < src->values.size(); ++i)
                opt->velocity[k][i] = static_cast<T>(src->values[i]);
        }
    }
}

// Copies mapped entries into matching model parameters; everything not named
// in the manifest keeps its current value.
template <typename T>
int import_weights(const Checkpoint& ckpt, Model<T>& model,
                   const std::vector<NameMapping>& mappings) {
    ParamList<T> params = model.params();
    int imported = 0;
    for (const auto& m : mappings) {
        const CheckpointEntry* src = ckpt.find(m.source);
        if (!src) throw DataError("import: source entry " + m.source + " not in checkpoint");
        ParamEntry<T>* dst = nullptr;
        for (auto& e : params)
            if (e.name == m.target) { dst = &e; break; }
        if (!dst) throw DataError("import: target parameter " + m.target + " not in model");
        if (src->shape != dst->value->shape())
            throw DataError("import: " + m.source + " shape " +
                            Tensor<float>::shape_string(src->shape) + " does not match " +
                            m.target + " shape " + dst->value->shape_string());
        for (std::size_t i = 0; i < src->values.size(); ++i)
            (*dst->value)[i] = static_cast<T>(src->values[i]);
        ++imported;
    }
    return imported;
}

}  // namespace clipnet
