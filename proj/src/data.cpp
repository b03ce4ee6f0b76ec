#include "clipnet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "clipnet/errors.hpp"

namespace fs = std::filesystem;

namespace clipnet {

namespace {

void report(std::vector<std::string>* issues, std::string msg) {
    if (issues) issues->push_back(std::move(msg));
}

bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isdigit(c) != 0; });
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Indexed image paths for one video directory; nullopt-like -1 on failure.
// Returns the highest index seen, or -1 when the directory has no frames.
int scan_video_frames(const fs::path& dir, std::map<int, std::string>& out,
                      std::vector<std::string>* issues) {
    int max_index = -1;
    if (!fs::is_directory(dir)) return max_index;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const fs::path& p = entry.path();
        if (p.extension() != ".png") {
            report(issues, "ignoring non-png file " + p.string());
            continue;
        }
        const std::string stem = p.stem().string();
        if (!all_digits(stem)) {
            report(issues, "ignoring non-numeric frame name " + p.string());
            continue;
        }
        out[std::stoi(stem)] = p.string();
        max_index = std::max(max_index, std::stoi(stem));
    }
    return max_index;
}

void copy_frame_into(TensorF& clip_frames, int pos, const TensorF& frame) {
    const std::size_t n = frame.size();
    std::memcpy(clip_frames.data() + static_cast<std::size_t>(pos) * n, frame.data(),
                n * sizeof(float));
}

bool parse_annotation_file(const fs::path& file, const std::string& id,
                           std::vector<int>& labels, std::vector<std::string>* issues) {
    std::ifstream is(file);
    if (!is) {
        report(issues, "video " + id + ": cannot open " + file.string() + "; skipped");
        return false;
    }
    std::string header;
    std::getline(is, header);
    if (trim(header) != kClassHeader) {
        report(issues, "video " + id + ": header does not name the 7 classes; skipped");
        return false;
    }
    std::string line;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        char* end = nullptr;
        const long v = std::strtol(t.c_str(), &end, 10);
        if (end == t.c_str() || *end != '\0') {
            report(issues, "video " + id + ": malformed label '" + t + "'; skipped");
            return false;
        }
        if (v < -1 || v >= kNumClasses) {
            report(issues,
                   "video " + id + ": label " + std::to_string(v) + " out of range; skipped");
            return false;
        }
        labels.push_back(static_cast<int>(v));
    }
    return true;
}

std::vector<fs::path> annotation_files(const std::string& annotations_root,
                                       std::vector<std::string>* issues) {
    if (!fs::is_directory(annotations_root))
        throw DataError("annotations root " + annotations_root + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(annotations_root)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            files.push_back(entry.path());
        else
            report(issues, "ignoring " + entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        report(issues, "annotations directory " + annotations_root + " has no .txt files");
    return files;
}

}  // namespace

Dataset load_dataset(const std::string& frames_root, const std::string& annotations_root,
                     std::vector<std::string>* issues) {
    if (!fs::is_directory(frames_root))
        throw DataError("frames root " + frames_root + " is not a directory");

    Dataset ds;
    for (const auto& file : annotation_files(annotations_root, issues)) {
        const std::string id = file.stem().string();
        std::vector<int> labels;
        if (!parse_annotation_file(file, id, labels, issues)) continue;

        std::map<int, std::string> frame_files;
        const int max_index =
            scan_video_frames(fs::path(frames_root) / id, frame_files, issues);
        if (max_index >= static_cast<int>(labels.size())) {
            report(issues, "video " + id + ": frame index " + std::to_string(max_index) +
                               " exceeds " + std::to_string(labels.size()) +
                               " annotated frames; skipped");
            continue;
        }
        if (frame_files.empty())
            report(issues, "video " + id + ": no frame images found");

        VideoRecord rec;
        rec.video_id = id;
        rec.labels = std::move(labels);
        rec.frame_paths.assign(rec.labels.size(), std::string());
        for (const auto& [idx, path] : frame_files) rec.frame_paths[idx] = path;
        rec.valid.resize(rec.labels.size());
        for (std::size_t i = 0; i < rec.labels.size(); ++i)
            rec.valid[i] = rec.labels[i] >= 0 && !rec.frame_paths[i].empty();
        ds.videos.push_back(std::move(rec));
    }
    std::sort(ds.videos.begin(), ds.videos.end(),
              [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
    return ds;
}

Dataset load_annotations(const std::string& annotations_root, std::vector<std::string>* issues) {
    Dataset ds;
    for (const auto& file : annotation_files(annotations_root, issues)) {
        const std::string id = file.stem().string();
        std::vector<int> labels;
        if (!parse_annotation_file(file, id, labels, issues)) continue;
        VideoRecord rec;
        rec.video_id = id;
        rec.labels = std::move(labels);
        rec.frame_paths.assign(rec.labels.size(), std::string());
        rec.valid.assign(rec.labels.size(), 0);
        ds.videos.push_back(std::move(rec));
    }
    std::sort(ds.videos.begin(), ds.videos.end(),
              [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
    return ds;
}

Dataset scan_frames_only(const std::string& frames_root, std::vector<std::string>* issues) {
    if (!fs::is_directory(frames_root))
        throw DataError("frames root " + frames_root + " is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(frames_root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());

    Dataset ds;
    for (const auto& dir : dirs) {
        std::map<int, std::string> frame_files;
        const int max_index = scan_video_frames(dir, frame_files, issues);
        if (max_index < 0) {
            report(issues, "video " + dir.filename().string() + ": no frames; skipped");
            continue;
        }
        VideoRecord rec;
        rec.video_id = dir.filename().string();
        rec.labels.assign(static_cast<std::size_t>(max_index) + 1, -1);
        rec.frame_paths.assign(rec.labels.size(), std::string());
        for (const auto& [idx, path] : frame_files) rec.frame_paths[idx] = path;
        rec.valid.assign(rec.labels.size(), 0);
        ds.videos.push_back(std::move(rec));
    }
    return ds;
}

TensorF normalize_frame(const Image& img, int expected_size) {
    if (img.width != expected_size || img.height != expected_size)
        throw DataError("frame is " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", expected " +
                        std::to_string(expected_size) + "x" + std::to_string(expected_size));
    if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw DataError("frame buffer is not packed RGB");
    const int s = expected_size;
    TensorF t({3, s, s});
    for (int c = 0; c < 3; ++c) {
        const float mean = kNormMean[c], inv_std = 1.0f / kNormStd[c];
        float* dst = t.data() + static_cast<std::size_t>(c) * s * s;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                dst[y * s + x] =
                    (static_cast<float>(img.rgb[img.index(y, x) + c]) / 255.0f - mean) * inv_std;
    }
    return t;
}

std::vector<int> valid_window_starts(const VideoRecord& v) {
    std::vector<int> starts;
    const int len = v.length();
    int run = 0;
    for (int i = 0; i < len; ++i) {
        run = v.valid[i] ? run + 1 : 0;
        if (run >= kClipLen) starts.push_back(i - kClipLen + 1);
    }
    return starts;
}

std::uint64_t uniform_u64(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) throw DataError("uniform draw over empty range");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
        const std::uint64_t x = rng();
        if (x >= threshold) return (x - threshold) % n;
    }
}

Clip sample_training_clip(const Dataset& ds, std::mt19937_64& rng, int image_size) {
    std::vector<const VideoRecord*> eligible;
    std::vector<std::vector<int>> starts;
    for (const auto& v : ds.videos) {
        std::vector<int> s = valid_window_starts(v);
        if (!s.empty()) {
            eligible.push_back(&v);
            starts.push_back(std::move(s));
        }
    }
    if (eligible.empty())
        throw DataError("no video has " + std::to_string(kClipLen) +
                        " consecutive valid frames");
    const std::size_t vi = uniform_u64(rng, eligible.size());
    const std::vector<int>& vs = starts[vi];
    const int start = vs[uniform_u64(rng, vs.size())];
    const VideoRecord& v = *eligible[vi];

    Clip clip;
    clip.video_id = v.video_id;
    clip.start_index = start;
    clip.frames = TensorF({kClipLen, 3, image_size, image_size});
    for (int p = 0; p < kClipLen; ++p) {
        const int i = start + p;
        copy_frame_into(clip.frames, p, normalize_frame(read_png_rgb(v.frame_paths[i]), image_size));
        clip.labels[static_cast<std::size_t>(p)] = v.labels[i];
        clip.mask[static_cast<std::size_t>(p)] = 1;
    }
    return clip;
}

std::vector<Clip> make_eval_clips(const VideoRecord& v, int image_size, EvalMaskRule rule) {
    const int len = v.length();
    const int count = (len + kClipLen - 1) / kClipLen;
    std::vector<Clip> clips;
    clips.reserve(static_cast<std::size_t>(count));
    for (int w = 0; w < count; ++w) {
        Clip clip;
        clip.video_id = v.video_id;
        clip.start_index = w * kClipLen;
        clip.frames = TensorF({kClipLen, 3, image_size, image_size});
        for (int p = 0; p < kClipLen; ++p) {
            const int i = clip.start_index + p;
            if (i >= len) {
                clip.labels[static_cast<std::size_t>(p)] = -1;
                clip.mask[static_cast<std::size_t>(p)] = 0;
                continue;
            }
            const bool has_image = !v.frame_paths[i].empty();
            if (has_image)
                copy_frame_into(clip.frames, p,
                                normalize_frame(read_png_rgb(v.frame_paths[i]), image_size));
            clip.labels[static_cast<std::size_t>(p)] = v.labels[i];
            clip.mask[static_cast<std::size_t>(p)] =
                rule == EvalMaskRule::valid_only ? v.valid[i] : (has_image ? 1 : 0);
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

namespace {

int synth_run_length(const SynthSpec& spec) {
    if (spec.frames_per_video >= 16) return 16;
    if (spec.frames_per_video >= kClipLen) return kClipLen;
    return spec.frames_per_video;
}

}  // namespace

int synth_label(const SynthSpec& spec, int video_index, int frame_index) {
    const int run_len = synth_run_length(spec);
    const int runs_per_video = (spec.frames_per_video + run_len - 1) / run_len;
    return (video_index * runs_per_video + frame_index / run_len) % kNumClasses;
}

void generate_synth(const SynthSpec& spec, const std::string& out_root) {
    if (spec.num_videos < 1 || spec.frames_per_video < 1)
        throw ConfigError("synth: need at least one video and one frame");
    if (spec.image_size < 4) throw ConfigError("synth: image size must be at least 4");
    const int run_len = synth_run_length(spec);
    const int runs_per_video = (spec.frames_per_video + run_len - 1) / run_len;
    if (spec.num_videos * runs_per_video < kNumClasses)
        throw ConfigError("synth: " + std::to_string(spec.num_videos * runs_per_video) +
                          " label runs cannot cover all " + std::to_string(kNumClasses) +
                          " classes");

    const fs::path frames_dir = fs::path(out_root) / "frames";
    const fs::path ann_dir = fs::path(out_root) / "annotations";
    std::error_code ec;
    fs::create_directories(frames_dir, ec);
    fs::create_directories(ann_dir, ec);
    if (!fs::is_directory(frames_dir) || !fs::is_directory(ann_dir))
        throw DataError("synth: cannot create output directories under " + out_root);

    const int s = spec.image_size;
    const int cells = (s + 3) / 4;

    // One +-1 block pattern per class, fixed by the pattern seed.
    std::vector<std::vector<float>> templates(kNumClasses);
    for (int k = 0; k < kNumClasses; ++k) {
        std::mt19937_64 trng(spec.class_pattern_seed * 1000003ULL +
                             static_cast<std::uint64_t>(k));
        templates[k].resize(static_cast<std::size_t>(cells) * cells);
        for (auto& t : templates[k]) t = (trng() & 1) ? 1.0f : -1.0f;
    }

    for (int vi = 0; vi < spec.num_videos; ++vi) {
        char vid[16];
        std::snprintf(vid, sizeof(vid), "v%03d", vi);
        const fs::path vdir = frames_dir / vid;
        fs::create_directories(vdir, ec);

        std::ofstream ann(ann_dir / (std::string(vid) + ".txt"), std::ios::trunc);
        if (!ann) throw DataError("synth: cannot write annotations for " + std::string(vid));
        ann << kClassHeader << "\n";

        std::mt19937_64 nrng(spec.class_pattern_seed ^
                             (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(vi + 1)));
        Image img;
        img.width = s;
        img.height = s;
        img.rgb.resize(static_cast<std::size_t>(s) * s * 3);
        for (int fi = 0; fi < spec.frames_per_video; ++fi) {
            const int k = synth_label(spec, vi, fi);
            ann << k << "\n";
            const std::vector<float>& tpl = templates[static_cast<std::size_t>(k)];
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const float t = tpl[static_cast<std::size_t>(y / 4) * cells + x / 4];
                    const double u = static_cast<double>(nrng() >> 11) *
                                     (1.0 / 9007199254740992.0);  // [0,1)
                    const double val = 0.5 + 0.22 * t + (u * 0.12 - 0.06);
                    const double clamped = std::min(1.0, std::max(0.0, val));
                    const auto byte = static_cast<unsigned char>(std::lround(clamped * 255.0));
                    const std::size_t base = img.index(y, x);
                    img.rgb[base] = img.rgb[base + 1] = img.rgb[base + 2] = byte;
                }
            }
            char name[16];
            std::snprintf(name, sizeof(name), "%06d.png", fi);
            write_png_rgb((vdir / name).string(), img);
        }
    }
}

}  // namespace clipnet
