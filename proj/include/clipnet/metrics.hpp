#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "clipnet/data.hpp"
#include "clipnet/errors.hpp"
#include "clipnet/model.hpp"
#include "clipnet/sequence.hpp"

namespace clipnet {

// Row = true class, column = predicted class.
struct ConfusionMatrix {
    std::array<std::int64_t, kNumClasses * kNumClasses> counts{};

    std::int64_t& at(int true_label, int predicted) {
        return counts[static_cast<std::size_t>(true_label) * kNumClasses +
                      static_cast<std::size_t>(predicted)];
    }
    std::int64_t at(int true_label, int predicted) const {
        return counts[static_cast<std::size_t>(true_label) * kNumClasses +
                      static_cast<std::size_t>(predicted)];
    }

    void accumulate(int true_label, int predicted, bool mask) {
        if (!mask) return;
        if (true_label < 0 || true_label >= kNumClasses || predicted < 0 ||
            predicted >= kNumClasses)
            throw DataError("confusion matrix: class pair (" + std::to_string(true_label) +
                            "," + std::to_string(predicted) + ") out of range");
        ++at(true_label, predicted);
    }

    void merge(const ConfusionMatrix& other) {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }

    std::int64_t total() const {
        std::int64_t t = 0;
        for (std::int64_t c : counts) t += c;
        return t;
    }
};

double accuracy(const ConfusionMatrix& cm);

struct F1Result {
    std::array<double, kNumClasses> per_class{};
    double macro = 0.0;
};

F1Result f1_scores(const ConfusionMatrix& cm);

double final_metric(double acc, double macro_f1);

struct MetricsReport {
    double acc = 0.0;
    std::array<double, kNumClasses> f1_per_class{};
    double macro_f1 = 0.0;
    double s = 0.0;
    std::int64_t frames_evaluated = 0;
};

MetricsReport report_from(const ConfusionMatrix& cm);
std::string format_report(const MetricsReport& report);

// Highest final metric wins; ties go to the lowest iteration number.
std::int64_t select_best_checkpoint(
    const std::vector<std::pair<std::int64_t, MetricsReport>>& reports);

// Joins `<video_id> <frame_index> <predicted_class>` lines against the
// annotations; rows where either side is unlabeled are skipped.
ConfusionMatrix score_predictions(const std::string& predictions_path,
                                  const Dataset& annotations);

struct VideoPredictions {
    std::string video_id;
    std::vector<int> predicted;  // one per frame position; -1 = excluded
};

template <typename T>
VideoPredictions evaluate_video(Model<T>& model, const VideoRecord& video, int image_size,
                                EvalMaskRule rule, ConfusionMatrix* cm) {
    VideoPredictions out;
    out.video_id = video.video_id;
    out.predicted.assign(static_cast<std::size_t>(video.length()), -1);
    for (const Clip& clip : make_eval_clips(video, image_size, rule)) {
        Tensor<T> x = clip.frames.template cast<T>();
        Tensor<T> logits = model.forward_frames(x, kClipLen, Mode::eval);
        const std::vector<int> pred = predict(logits);
        for (int p = 0; p < kClipLen; ++p) {
            if (!clip.mask[static_cast<std::size_t>(p)]) continue;
            const int i = clip.start_index + p;
            out.predicted[static_cast<std::size_t>(i)] = pred[static_cast<std::size_t>(p)];
            if (cm && clip.labels[static_cast<std::size_t>(p)] >= 0)
                cm->accumulate(clip.labels[static_cast<std::size_t>(p)],
                               pred[static_cast<std::size_t>(p)], true);
        }
    }
    return out;
}

template <typename T>
struct DatasetEval {
    std::vector<VideoPredictions> videos;
    ConfusionMatrix cm;
};

// Eval-mode forward is read-only on the model, so videos may be striped
// across threads; results merge in video order either way.
template <typename T>
DatasetEval<T> evaluate_dataset(Model<T>& model, const Dataset& ds, int image_size,
                                EvalMaskRule rule, int threads = 1) {
    DatasetEval<T> result;
    const std::size_t n = ds.videos.size();
    result.videos.resize(n);
    if (threads < 2 || n < 2) {
        for (std::size_t i = 0; i < n; ++i)
            result.videos[i] = evaluate_video(model, ds.videos[i], image_size, rule, &result.cm);
        return result;
    }
    const int workers = std::min<int>(threads, static_cast<int>(n));
    std::vector<ConfusionMatrix> cms(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = static_cast<std::size_t>(w); i < n;
                 i += static_cast<std::size_t>(workers))
                result.videos[i] = evaluate_video(model, ds.videos[i], image_size, rule,
                                                  &cms[static_cast<std::size_t>(w)]);
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& cm : cms) result.cm.merge(cm);
    return result;
}

}  // namespace clipnet
