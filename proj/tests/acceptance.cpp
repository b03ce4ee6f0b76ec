// Acceptance gate: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails or overruns its time budget.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clipnet/attention.hpp"
#include "clipnet/checkpoint.hpp"
#include "clipnet/cli.hpp"
#include "clipnet/data.hpp"
#include "clipnet/image.hpp"
#include "clipnet/metrics.hpp"
#include "clipnet/model.hpp"
#include "clipnet/train.hpp"

#include "diffop_registry.hpp"
#include "helpers.hpp"
#include "oracle_suite.hpp"
#include "oracles.hpp"

namespace {

using clipnet::TensorD;
using clipnet::TensorF;
using testutil::TempDir;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error(msg);
}

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("clipnet");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& s : full) argv.push_back(s.c_str());
    std::ostringstream out;
    std::ostringstream err;
    CliResult res;
    res.code = clipnet::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    res.out = out.str();
    res.err = err.str();
    return res;
}

double report_field(const std::string& report, const std::string& name) {
    const std::string tag = name + ": ";
    const auto pos = report.find(tag);
    require(pos != std::string::npos, "eval report is missing field " + name);
    return std::stod(report.substr(pos + tag.size()));
}

std::string tiny_config_text(const std::string& frames, const std::string& annotations) {
    return "backbone.stage_blocks = 1,1,1,1\n"
           "backbone.base_width = 4\n"
           "backbone.input_size = 32\n"
           "cbam.reduction_ratio = 2\n"
           "cbam.spatial_kernel = 3\n"
           "sequence.hidden_size = 8\n"
           "sequence.head_hidden = 0\n"
           "data.frames_root = " + frames + "\n"
           "data.annotations_root = " + annotations + "\n";
}

// 1. Reference values of the combined score.
std::string criterion_metric_goldens() {
    const struct {
        double acc, macro_f1, want;
    } rows[] = {{0.640, 0.333, 0.434}, {0.647, 0.281, 0.402}};
    std::ostringstream detail;
    for (const auto& r : rows) {
        const double s = clipnet::final_metric(r.acc, r.macro_f1);
        require(std::abs(s - r.want) <= 0.0005,
                "final_metric(" + num(r.acc) + "," + num(r.macro_f1) + ")=" + num(s) +
                    ", expected " + num(r.want) + " within 0.0005");
        detail << "s(" << r.acc << "," << r.macro_f1 << ")=" << num(s) << " ";
    }
    return detail.str() + "both within 0.0005";
}

// 2. Central finite differences over every differentiable op and the
// composed blocks, 20 seeds each in double precision.
std::string criterion_gradients() {
    const auto outcomes = gradsuite::run_grad_suite(20);
    double worst_ratio = 0.0;
    std::string worst;
    for (const auto& o : outcomes) {
        if (!o.pass())
            throw std::runtime_error(o.name + " gradient error " + num(o.worst) +
                                     " exceeds tolerance " + num(o.tolerance));
        if (o.tolerance > 0 && o.worst / o.tolerance > worst_ratio) {
            worst_ratio = o.worst / o.tolerance;
            worst = o.name + " err " + num(o.worst) + " (tol " + num(o.tolerance) + ")";
        }
    }
    return std::to_string(outcomes.size()) + " ops x 20 seeds, worst " + worst;
}

// 3. Brute-force reference implementations, 20 random instances each.
std::string criterion_oracles() {
    const auto outcomes = oraclesuite::run_oracle_suite(20);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& o : outcomes) {
        if (!o.pass())
            throw std::runtime_error(o.name + " diverges from its reference by " + num(o.worst) +
                                     " (limit 1e-10)");
        if (o.worst >= worst) {
            worst = o.worst;
            worst_name = o.name;
        }
    }
    return std::to_string(outcomes.size()) + " references x 20 instances, worst diff " +
           num(worst) + " (" + worst_name + ")";
}

// 4. A narrow model must overfit the synthetic corpus: at least 95% frame
// accuracy and a 0.95 combined score from an evaluated checkpoint.
std::string criterion_overfit() {
    TempDir tmp("accept_overfit");
    const std::string ds_root = tmp.sub("ds");
    clipnet::generate_synth(clipnet::SynthSpec{}, ds_root);

    const std::string cfg_path = tmp.str() + "/run.cfg";
    testutil::write_text(cfg_path,
                         tiny_config_text(ds_root + "/frames", ds_root + "/annotations") +
                             "train.learning_rate = 0.01\n"
                             "train.momentum = 0.9\n"
                             "train.grad_clip = 1.0\n"
                             "train.clips_per_batch = 4\n"
                             "train.checkpoint_every = 500\n"
                             "train.max_iterations = 2000\n"
                             "train.seed = 11\n");

    const std::string ckpt_dir = tmp.sub("ckpts");
    const CliResult tr = run_cli({"train", "--config", cfg_path, "--checkpoint-dir", ckpt_dir});
    require(tr.code == 0, "train exited " + std::to_string(tr.code) + ": " + tr.err);

    double best_acc = 0.0;
    double best_s = 0.0;
    int best_iter = 0;
    for (const int iter : {2000, 1500, 1000, 500}) {
        char name[48];
        std::snprintf(name, sizeof(name), "/checkpoint_%06d.ckpt", iter);
        const CliResult ev =
            run_cli({"eval", "--config", cfg_path, "--checkpoint", ckpt_dir + name});
        require(ev.code == 0, "eval exited " + std::to_string(ev.code) + ": " + ev.err);
        const double acc = report_field(ev.out, "accuracy");
        const double s = report_field(ev.out, "final_metric");
        if (acc >= 0.95 && s >= 0.95)
            return "train accuracy " + num(acc) + ", final_metric " + num(s) + " at iteration " +
                   std::to_string(iter) + " of 2000";
        if (s > best_s) {
            best_s = s;
            best_acc = acc;
            best_iter = iter;
        }
    }
    throw std::runtime_error("no checkpoint reached 0.95: best accuracy " + num(best_acc) +
                             ", final_metric " + num(best_s) + " at iteration " +
                             std::to_string(best_iter));
}

// 5. Evaluation windows tile every video length exactly once with padding
// masked out, and the training sampler draws uniformly.
std::string criterion_protocol() {
    TempDir tmp("accept_protocol");
    clipnet::Image img;
    img.width = 8;
    img.height = 8;
    img.rgb.assign(8 * 8 * 3, 100);
    const std::string png = tmp.str() + "/frame.png";
    clipnet::write_png_rgb(png, img);

    for (int len = 1; len <= 100; ++len) {
        clipnet::VideoRecord v;
        v.video_id = "p" + std::to_string(len);
        v.frame_paths.assign(static_cast<std::size_t>(len), png);
        v.labels.resize(static_cast<std::size_t>(len));
        v.valid.resize(static_cast<std::size_t>(len));
        int valid_count = 0;
        for (int i = 0; i < len; ++i) {
            v.labels[static_cast<std::size_t>(i)] = (i % 9 == 3) ? -1 : i % 7;
            v.valid[static_cast<std::size_t>(i)] = v.labels[static_cast<std::size_t>(i)] >= 0;
            valid_count += v.valid[static_cast<std::size_t>(i)] ? 1 : 0;
        }

        const auto clips = clipnet::make_eval_clips(v, 8);
        require(static_cast<int>(clips.size()) == (len + 7) / 8,
                "length " + std::to_string(len) + ": got " + std::to_string(clips.size()) +
                    " clips, expected " + std::to_string((len + 7) / 8));
        std::vector<int> seen(static_cast<std::size_t>(len), 0);
        int masked_total = 0;
        for (const auto& c : clips) {
            for (int k = 0; k < clipnet::kClipLen; ++k) {
                const int fi = c.start_index + k;
                if (fi < len) {
                    seen[static_cast<std::size_t>(fi)] += 1;
                    require(c.labels[static_cast<std::size_t>(k)] ==
                                v.labels[static_cast<std::size_t>(fi)],
                            "length " + std::to_string(len) + ": label mismatch at frame " +
                                std::to_string(fi));
                    if (c.mask[static_cast<std::size_t>(k)]) ++masked_total;
                } else {
                    require(c.mask[static_cast<std::size_t>(k)] == 0,
                            "length " + std::to_string(len) + ": padded slot is unmasked");
                    require(c.labels[static_cast<std::size_t>(k)] == -1,
                            "length " + std::to_string(len) + ": padded slot carries a label");
                }
            }
        }
        for (int i = 0; i < len; ++i)
            require(seen[static_cast<std::size_t>(i)] == 1,
                    "length " + std::to_string(len) + ": frame " + std::to_string(i) +
                        " covered " + std::to_string(seen[static_cast<std::size_t>(i)]) +
                        " times");
        require(masked_total == valid_count,
                "length " + std::to_string(len) + ": masked " + std::to_string(masked_total) +
                    " frames, expected " + std::to_string(valid_count));
    }

    auto make_video = [&](const std::string& id, int frames) {
        clipnet::VideoRecord v;
        v.video_id = id;
        v.frame_paths.assign(static_cast<std::size_t>(frames), png);
        v.labels.assign(static_cast<std::size_t>(frames), 2);
        v.valid.assign(static_cast<std::size_t>(frames), 1);
        return v;
    };

    // videos are drawn uniformly even when their window counts differ
    double p_videos = 0.0;
    {
        clipnet::Dataset ds;
        ds.videos.push_back(make_video("a", 12));
        ds.videos.push_back(make_video("b", 8));
        std::mt19937_64 rng(404);
        std::vector<long> counts(2, 0);
        for (int i = 0; i < 10000; ++i) {
            const clipnet::Clip c = clipnet::sample_training_clip(ds, rng, 8);
            counts[c.video_id == "a" ? 0 : 1] += 1;
        }
        p_videos = oracle::chi_square_p(counts, 5000.0);
        require(p_videos > 0.01, "video draw chi-square p=" + num(p_videos));
    }

    // window starts within a video are drawn uniformly
    double p_starts = 0.0;
    {
        clipnet::Dataset ds;
        ds.videos.push_back(make_video("c", 12));  // starts 0..4
        std::mt19937_64 rng(405);
        std::vector<long> counts(5, 0);
        for (int i = 0; i < 10000; ++i) {
            const clipnet::Clip c = clipnet::sample_training_clip(ds, rng, 8);
            require(c.start_index >= 0 && c.start_index < 5,
                    "start " + std::to_string(c.start_index) + " out of range");
            counts[static_cast<std::size_t>(c.start_index)] += 1;
        }
        p_starts = oracle::chi_square_p(counts, 2000.0);
        require(p_starts > 0.01, "window start chi-square p=" + num(p_starts));
    }

    return "lengths 1..100 tile exactly; sampler p=" + num(p_videos) + " over videos, p=" +
           num(p_starts) + " over starts";
}

// 6. Same seed, same losses and checkpoint bytes; reload reproduces the
// forward pass bit for bit.
std::string criterion_determinism() {
    TempDir tmp("accept_determinism");
    const std::string ds_root = tmp.sub("ds");
    clipnet::generate_synth(clipnet::SynthSpec{}, ds_root);
    const clipnet::Dataset ds =
        clipnet::load_dataset(ds_root + "/frames", ds_root + "/annotations");

    clipnet::BackboneConfig bcfg;
    bcfg.stage_blocks = {1, 1, 1, 1};
    bcfg.base_width = 4;
    bcfg.input_size = 32;
    bcfg.cbam_reduction = 2;
    bcfg.cbam_spatial_kernel = 3;
    clipnet::SequenceConfig scfg;
    scfg.hidden_size = 8;
    scfg.head_hidden = 0;
    clipnet::TrainConfig tcfg;
    tcfg.learning_rate = 1e-3f;
    tcfg.momentum = 0.9f;
    tcfg.clips_per_batch = 2;
    tcfg.checkpoint_every = 25;
    tcfg.max_iterations = 25;
    tcfg.seed = 5;
    tcfg.grad_clip = 1.0f;
    const std::uint64_t digest = 0xACCE55ULL;

    clipnet::Model<float> m1 = clipnet::Model<float>::build(bcfg, scfg, 9);
    std::ostringstream log1;
    const auto r1 = clipnet::train_loop(m1, ds, tcfg, true, digest, tmp.sub("run1"), log1);

    clipnet::Model<float> m2 = clipnet::Model<float>::build(bcfg, scfg, 9);
    std::ostringstream log2;
    const auto r2 = clipnet::train_loop(m2, ds, tcfg, true, digest, tmp.sub("run2"), log2);

    require(r1.log.size() == 25 && r2.log.size() == 25, "expected 25 log entries per run");
    for (std::size_t i = 0; i < r1.log.size(); ++i)
        require(r1.log[i].loss == r2.log[i].loss,
                "loss diverged at iteration " + std::to_string(i + 1));

    const auto strip_timing = [](const std::string& text) {
        std::istringstream is(text);
        std::string line;
        std::string out;
        while (std::getline(is, line)) {
            out += line.substr(0, line.find(" time_ms"));
            out += '\n';
        }
        return out;
    };
    require(strip_timing(log1.str()) == strip_timing(log2.str()),
            "log text diverged between identical runs");

    const std::string ck1 = tmp.sub("run1") + "/checkpoint_000025.ckpt";
    const std::string ck2 = tmp.sub("run2") + "/checkpoint_000025.ckpt";
    require(testutil::read_file(ck1) == testutil::read_file(ck2),
            "checkpoint bytes differ between identical runs");

    const clipnet::Checkpoint ckpt = clipnet::load_checkpoint(ck1);
    const std::string round = tmp.str() + "/roundtrip.ckpt";
    clipnet::save_checkpoint(round, ckpt);
    require(testutil::read_file(ck1) == testutil::read_file(round),
            "checkpoint load/save round trip changed the bytes");

    clipnet::Model<float> reloaded = clipnet::Model<float>::build(bcfg, scfg, 777);
    clipnet::restore_model<float>(ckpt, reloaded, nullptr, digest);
    const TensorF x = clipnet::make_eval_clips(ds.videos[0], 32)[0].frames;
    const TensorF y1 = m1.forward_frames(x, clipnet::kClipLen, clipnet::Mode::eval);
    const TensorF y2 = reloaded.forward_frames(x, clipnet::kClipLen, clipnet::Mode::eval);
    require(y1.size() == y2.size(), "reloaded model logit shape differs");
    for (std::size_t i = 0; i < y1.size(); ++i)
        require(y1[i] == y2[i], "reloaded forward differs at logit " + std::to_string(i));

    return "25-step loss logs bit-identical; checkpoints byte-identical; reload forward "
           "bit-exact";
}

// 7. Attention gates preserve shape, stay strictly inside (0,1), and with
// all-zero parameters scale the input by exactly one quarter.
std::string criterion_attention() {
    const std::vector<std::vector<int>> shapes = {
        {1, 8, 1, 1}, {2, 8, 3, 5}, {3, 8, 4, 4}, {1, 8, 9, 2}};
    std::mt19937_64 rng(31);
    int instances = 0;
    for (int trial = 0; trial < 20; ++trial) {
        for (const auto& shape : shapes) {
            auto p = clipnet::CbamParams<double>::zeros(8, 2, 3);
            p.init(rng);
            const TensorD f = gradsuite::uniform(shape, rng, -2.0, 2.0);
            clipnet::CbamCache<double> cache;
            const TensorD y = clipnet::cbam(f, p, &cache);
            require(y.shape() == f.shape(),
                    "output shape " + y.shape_string() + " differs from input " +
                        f.shape_string());
            for (std::size_t i = 0; i < cache.mc.size(); ++i)
                require(cache.mc[i] > 0.0 && cache.mc[i] < 1.0,
                        "channel gate left (0,1): " + num(cache.mc[i]));
            for (std::size_t i = 0; i < cache.ms.size(); ++i)
                require(cache.ms[i] > 0.0 && cache.ms[i] < 1.0,
                        "spatial gate left (0,1): " + num(cache.ms[i]));
            ++instances;
        }
    }

    auto zero = clipnet::CbamParams<double>::zeros(8, 2, 3);
    const TensorD f = gradsuite::uniform({2, 8, 5, 4}, rng, -2.0, 2.0);
    const TensorD y = clipnet::cbam(f, zero);
    for (std::size_t i = 0; i < f.size(); ++i)
        require(y[i] == 0.25 * f[i], "zero-parameter gates are not exactly 0.25x");

    return std::to_string(instances) +
           " random instances preserve shape with gates in (0,1); zero parameters scale by "
           "exactly 0.25";
}

}  // namespace

int main() {
    using clock = std::chrono::steady_clock;
    struct Criterion {
        int id;
        double budget_s;
        std::string (*run)();
    };
    const Criterion criteria[] = {
        {1, 1.0, criterion_metric_goldens},  {2, 300.0, criterion_gradients},
        {3, 120.0, criterion_oracles},       {4, 600.0, criterion_overfit},
        {5, 60.0, criterion_protocol},       {6, 120.0, criterion_determinism},
        {7, 60.0, criterion_attention},
    };

    bool all_pass = true;
    for (const auto& c : criteria) {
        const auto t0 = clock::now();
        bool pass = true;
        std::string detail;
        try {
            detail = c.run();
        } catch (const std::exception& e) {
            pass = false;
            detail = e.what();
        }
        const double secs = std::chrono::duration<double>(clock::now() - t0).count();
        if (pass && secs > c.budget_s) {
            pass = false;
            detail += " [exceeded " + num(c.budget_s) + "s budget]";
        }
        std::printf("criterion %d: %s (%.1fs) %s\n", c.id, pass ? "PASS" : "FAIL", secs,
                    detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && pass;
    }
    return all_pass ? 0 : 1;
}
