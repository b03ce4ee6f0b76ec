#include "clipnet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "clipnet/checkpoint.hpp"
#include "clipnet/layers.hpp"

namespace fs = std::filesystem;

namespace clipnet {

BatchAssembly assemble_batch(const Dataset& ds, std::mt19937_64& rng, int clips_per_batch,
                             int image_size) {
    BatchAssembly batch;
    const int m = clips_per_batch * kClipLen;
    batch.frames = TensorF({m, 3, image_size, image_size});
    batch.labels.resize(static_cast<std::size_t>(m));
    batch.mask.resize(static_cast<std::size_t>(m));
    const std::size_t frame_len = static_cast<std::size_t>(3) * image_size * image_size;
    for (int c = 0; c < clips_per_batch; ++c) {
        Clip clip = sample_training_clip(ds, rng, image_size);
        std::memcpy(batch.frames.data() + static_cast<std::size_t>(c) * kClipLen * frame_len,
                    clip.frames.data(), static_cast<std::size_t>(kClipLen) * frame_len *
                                            sizeof(float));
        for (int p = 0; p < kClipLen; ++p) {
            batch.labels[static_cast<std::size_t>(c * kClipLen + p)] =
                clip.labels[static_cast<std::size_t>(p)];
            batch.mask[static_cast<std::size_t>(c * kClipLen + p)] =
                clip.mask[static_cast<std::size_t>(p)];
        }
        batch.video_ids.push_back(clip.video_id);
    }
    return batch;
}

float train_step(Model<float>& model, const BatchAssembly& batch, SgdOptimizer<float>& opt,
                 int iteration) {
    model.zero_grads();
    ModelCache<float> cache;
    TensorF logits = model.forward_frames(batch.frames, kClipLen, Mode::train, &cache);
    CeResult<float> ce = softmax_cross_entropy(logits, batch.labels, batch.mask);
    if (!std::isfinite(ce.loss)) {
        std::string ids;
        for (const auto& id : batch.video_ids) {
            if (!ids.empty()) ids += ",";
            ids += id;
        }
        throw NumericError("iteration " + std::to_string(iteration) +
                           ": non-finite loss on videos " + ids);
    }
    model.backward_from_logits(ce.grad, cache);
    opt.step(model.params());
    return ce.loss;
}

namespace {

std::string checkpoint_name(int iteration) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06d.ckpt", iteration);
    return buf;
}

std::string rng_state_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

TrainResult train_loop(Model<float>& model, const Dataset& ds, const TrainConfig& cfg,
                       bool determinism, std::uint64_t config_digest,
                       const std::string& checkpoint_dir, std::ostream& log) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(checkpoint_dir, ec);
    {
        const fs::path probe = fs::path(checkpoint_dir) / ".write_probe";
        std::ofstream p(probe, std::ios::trunc);
        if (!p) throw DataError("checkpoint directory " + checkpoint_dir + " is not writable");
        p.close();
        fs::remove(probe, ec);
    }

    const int image_size = model.backbone_config().input_size;
    std::mt19937_64 rng(cfg.seed);
    SgdOptimizer<float> opt;
    opt.lr = cfg.learning_rate;
    opt.momentum = cfg.momentum;
    opt.grad_clip = cfg.grad_clip;
    opt.init(model.params());

    TrainResult result;
    auto save = [&](int iteration) {
        Checkpoint ckpt = snapshot_model(model, &opt, static_cast<std::uint64_t>(iteration),
                                         config_digest, rng_state_string(rng));
        const std::string path =
            (fs::path(checkpoint_dir) / checkpoint_name(iteration)).string();
        save_checkpoint(path, ckpt);
        result.checkpoint_paths.push_back(path);
    };

    std::future<BatchAssembly> prefetch;
    if (!determinism)
        prefetch = std::async(std::launch::async, [&] {
            return assemble_batch(ds, rng, cfg.clips_per_batch, image_size);
        });
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        BatchAssembly batch = determinism
                                  ? assemble_batch(ds, rng, cfg.clips_per_batch, image_size)
                                  : prefetch.get();
        const bool last = it == cfg.max_iterations;
        if (!determinism && !last)
            prefetch = std::async(std::launch::async, [&] {
                return assemble_batch(ds, rng, cfg.clips_per_batch, image_size);
            });
        const auto t0 = std::chrono::steady_clock::now();
        const float loss = train_step(model, batch, opt, it);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        char line[96];
        std::snprintf(line, sizeof(line), "iter=%d loss=%.6f time_ms=%.3f", it,
                      static_cast<double>(loss), ms);
        log << line << '\n';
        result.log.push_back({it, loss, ms});
        if (it % cfg.checkpoint_every == 0 || last) save(it);
    }
    return result;
}

}  // namespace clipnet
