#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "clipnet/image.hpp"
#include "clipnet/tensor.hpp"

namespace clipnet {

inline constexpr int kClipLen = 8;
inline constexpr int kNumClasses = 7;
inline constexpr const char* kClassNames[kNumClasses] = {
    "Neutral", "Anger", "Disgust", "Fear", "Happiness", "Sadness", "Surprise"};
inline constexpr const char* kClassHeader =
    "Neutral,Anger,Disgust,Fear,Happiness,Sadness,Surprise";

inline constexpr float kNormMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kNormStd[3] = {0.229f, 0.224f, 0.225f};

struct VideoRecord {
    std::string video_id;
    std::vector<std::string> frame_paths;  // empty string = image missing
    std::vector<int> labels;               // -1 = unannotated
    std::vector<std::uint8_t> valid;       // label >= 0 and image present

    int length() const { return static_cast<int>(labels.size()); }
};

struct Dataset {
    std::vector<VideoRecord> videos;
};

struct Clip {
    std::string video_id;
    int start_index = 0;
    TensorF frames;  // [8,3,S,S]
    std::array<int, kClipLen> labels{};
    std::array<std::uint8_t, kClipLen> mask{};
};

// Layout: frames_root/<video_id>/<index>.png, annotations_root/<video_id>.txt
// (header line naming the classes, then one integer per frame). Videos with
// malformed annotations or images beyond the declared frame count are
// rejected; each rejection or oddity is reported through `issues`.
Dataset load_dataset(const std::string& frames_root, const std::string& annotations_root,
                     std::vector<std::string>* issues = nullptr);

// Builds records from the frame files alone (no labels); for prediction runs.
Dataset scan_frames_only(const std::string& frames_root,
                         std::vector<std::string>* issues = nullptr);

// Labels only, no image paths; for scoring externally produced predictions.
Dataset load_annotations(const std::string& annotations_root,
                         std::vector<std::string>* issues = nullptr);

// [0,255] RGB to a standardized [3,S,S] tensor.
TensorF normalize_frame(const Image& img, int expected_size);

std::vector<int> valid_window_starts(const VideoRecord& v);

// Uniform over videos owning at least one all-valid 8-frame window, then
// uniform over that video's window starts.
Clip sample_training_clip(const Dataset& ds, std::mt19937_64& rng, int image_size);

enum class EvalMaskRule {
    valid_only,  // mask = annotated and image present
    present,     // mask = image present (prediction without labels)
};

// Non-overlapping windows covering the whole video; the last window is
// zero-padded. Images are decoded wherever they exist so clip context does
// not depend on annotation gaps.
std::vector<Clip> make_eval_clips(const VideoRecord& v, int image_size,
                                  EvalMaskRule rule = EvalMaskRule::valid_only);

struct SynthSpec {
    int num_videos = 4;
    int frames_per_video = 64;
    int image_size = 32;
    std::uint64_t class_pattern_seed = 7;
};

// Class-conditional block patterns plus per-pixel noise, written in the
// exact layout load_dataset reads. Deterministic per spec values.
void generate_synth(const SynthSpec& spec, const std::string& out_root);

// Label layout the generator uses; exposed so tests can recompute it.
int synth_label(const SynthSpec& spec, int video_index, int frame_index);

// Exact bounded draw used by the sampler (rejection sampling, no modulo bias).
std::uint64_t uniform_u64(std::mt19937_64& rng, std::uint64_t n);

}  // namespace clipnet
