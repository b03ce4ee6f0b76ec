#include "clipnet/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace clipnet {

double accuracy(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw DataError("accuracy: no frames were evaluated");
    std::int64_t correct = 0;
    for (int k = 0; k < kNumClasses; ++k) correct += cm.at(k, k);
    return static_cast<double>(correct) / static_cast<double>(total);
}

F1Result f1_scores(const ConfusionMatrix& cm) {
    F1Result res;
    double sum = 0.0;
    for (int k = 0; k < kNumClasses; ++k) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < kNumClasses; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        const std::int64_t diag = cm.at(k, k);
        const double precision = col > 0 ? static_cast<double>(diag) / col : 0.0;
        const double recall = row > 0 ? static_cast<double>(diag) / row : 0.0;
        const double f1 =
            (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        res.per_class[static_cast<std::size_t>(k)] = f1;
        sum += f1;
    }
    res.macro = sum / kNumClasses;
    return res;
}

double final_metric(double acc, double macro_f1) { return 0.33 * acc + 0.67 * macro_f1; }

MetricsReport report_from(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.frames_evaluated = cm.total();
    r.acc = accuracy(cm);
    const F1Result f1 = f1_scores(cm);
    r.f1_per_class = f1.per_class;
    r.macro_f1 = f1.macro;
    r.s = final_metric(r.acc, r.macro_f1);
    return r;
}

std::string format_report(const MetricsReport& report) {
    char buf[64];
    std::string out;
    out += "frames_evaluated: " + std::to_string(report.frames_evaluated) + "\n";
    std::snprintf(buf, sizeof(buf), "accuracy: %.4f\n", report.acc);
    out += buf;
    out += "f1_per_class:";
    for (double f : report.f1_per_class) {
        std::snprintf(buf, sizeof(buf), " %.4f", f);
        out += buf;
    }
    out += "\n";
    std::snprintf(buf, sizeof(buf), "macro_f1: %.4f\n", report.macro_f1);
    out += buf;
    std::snprintf(buf, sizeof(buf), "final_metric: %.4f\n", report.s);
    out += buf;
    return out;
}

std::int64_t select_best_checkpoint(
    const std::vector<std::pair<std::int64_t, MetricsReport>>& reports) {
    if (reports.empty()) throw DataError("checkpoint selection: no reports");
    std::int64_t best_id = reports.front().first;
    double best_s = reports.front().second.s;
    for (std::size_t i = 1; i < reports.size(); ++i) {
        const auto& [id, rep] = reports[i];
        if (rep.s > best_s || (rep.s == best_s && id < best_id)) {
            best_id = id;
            best_s = rep.s;
        }
    }
    return best_id;
}

ConfusionMatrix score_predictions(const std::string& predictions_path,
                                  const Dataset& annotations) {
    std::ifstream is(predictions_path);
    if (!is) throw DataError("predictions: cannot open " + predictions_path);

    std::map<std::string, const VideoRecord*> by_id;
    for (const auto& v : annotations.videos) by_id[v.video_id] = &v;

    ConfusionMatrix cm;
    std::map<std::pair<std::string, int>, bool> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string video_id;
        int frame_index = 0, predicted = 0;
        std::string extra;
        if (!(ls >> video_id >> frame_index >> predicted) || (ls >> extra))
            throw DataError("predictions line " + std::to_string(lineno) +
                            ": expected '<video_id> <frame_index> <predicted_class>'");
        const auto it = by_id.find(video_id);
        if (it == by_id.end())
            throw DataError("predictions line " + std::to_string(lineno) + ": unknown video " +
                            video_id);
        const VideoRecord& v = *it->second;
        if (frame_index < 0 || frame_index >= v.length())
            throw DataError("predictions line " + std::to_string(lineno) + ": frame " +
                            std::to_string(frame_index) + " outside video " + video_id);
        if (predicted < -1 || predicted >= kNumClasses)
            throw DataError("predictions line " + std::to_string(lineno) + ": class " +
                            std::to_string(predicted) + " out of range");
        if (!seen.emplace(std::make_pair(video_id, frame_index), true).second)
            throw DataError("predictions line " + std::to_string(lineno) +
                            ": duplicate entry for " + video_id + " frame " +
                            std::to_string(frame_index));
        const int truth = v.labels[static_cast<std::size_t>(frame_index)];
        if (predicted >= 0 && truth >= 0) cm.accumulate(truth, predicted, true);
    }
    return cm;
}

}  // namespace clipnet
