#include "clipnet/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "clipnet/checkpoint.hpp"
#include "clipnet/config.hpp"
#include "clipnet/data.hpp"
#include "clipnet/metrics.hpp"
#include "clipnet/train.hpp"

namespace fs = std::filesystem;

namespace clipnet {

namespace {

struct CommonOpts {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "flat key = value config file");
    for (const std::string& key : config_keys())
        cmd->add_option("--" + key, opts.overrides[key])
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
            ->group("Config overrides");
}

RunConfig build_config(const CLI::App* cmd, const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) apply_config_file(cfg, opts.config_path);
    for (const std::string& key : config_keys())
        if (cmd->count("--" + key) > 0) apply_kv(cfg, key, opts.overrides.at(key));
    return cfg;
}

void print_issues(const std::vector<std::string>& issues, std::ostream& err) {
    for (const auto& s : issues) err << "note: " << s << "\n";
}

void require_data_paths(const RunConfig& cfg, bool need_annotations) {
    if (cfg.frames_root.empty())
        throw ConfigError("data.frames_root is not set (config key or --data.frames_root)");
    if (need_annotations && cfg.annotations_root.empty())
        throw ConfigError(
            "data.annotations_root is not set (config key or --data.annotations_root)");
}

// Mirrors every training log line into <dir>/train.log.
class TeeLog {
public:
    TeeLog(std::ostream& primary, const std::string& dir) : primary_(primary) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        file_.open(fs::path(dir) / "train.log", std::ios::app);
    }
    std::ostream& stream() { return buffer_; }
    void flush() {
        const std::string text = buffer_.str();
        primary_ << text;
        if (file_) file_ << text;
        buffer_.str(std::string());
    }

private:
    std::ostream& primary_;
    std::ostringstream buffer_;
    std::ofstream file_;
};

template <typename T>
Model<T> build_restored_model(const RunConfig& cfg, const std::string& ckpt_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Model<T> model = Model<T>::build(cfg.backbone, cfg.sequence, 0);
    restore_model<T>(ckpt, model, nullptr, model_config_digest(cfg));
    return model;
}

template <typename T>
int run_eval_typed(const RunConfig& cfg, const std::string& ckpt_path, std::ostream& out,
                   std::ostream& err) {
    std::vector<std::string> issues;
    Dataset ds = load_dataset(cfg.frames_root, cfg.annotations_root, &issues);
    print_issues(issues, err);
    Model<T> model = build_restored_model<T>(cfg, ckpt_path);
    DatasetEval<T> ev =
        evaluate_dataset(model, ds, cfg.backbone.input_size, EvalMaskRule::valid_only);
    out << format_report(report_from(ev.cm));
    return 0;
}

template <typename T>
int run_predict_typed(const RunConfig& cfg, const std::string& ckpt_path,
                      const std::string& out_path, std::ostream& err) {
    std::vector<std::string> issues;
    Dataset ds = scan_frames_only(cfg.frames_root, &issues);
    print_issues(issues, err);
    Model<T> model = build_restored_model<T>(cfg, ckpt_path);
    DatasetEval<T> ev =
        evaluate_dataset(model, ds, cfg.backbone.input_size, EvalMaskRule::present);
    std::ofstream os(out_path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + out_path + " for writing");
    for (const VideoPredictions& v : ev.videos)
        for (std::size_t i = 0; i < v.predicted.size(); ++i)
            os << v.video_id << ' ' << i << ' ' << v.predicted[i] << '\n';
    if (!os) throw DataError("short write to " + out_path);
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"frame-feature + clip-recurrence expression recognition pipeline"};
    app.name("clipnet");
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    SynthSpec synth_spec;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output dataset root")->required();
    synth->add_option("--videos", synth_spec.num_videos, "number of videos");
    synth->add_option("--frames", synth_spec.frames_per_video, "frames per video");
    synth->add_option("--size", synth_spec.image_size, "square image size");
    synth->add_option("--seed", synth_spec.class_pattern_seed, "pattern seed");

    // train
    auto* train = app.add_subcommand("train", "train from a labeled corpus");
    CommonOpts train_opts;
    add_config_options(train, train_opts);
    std::string train_frames, train_annotations, checkpoint_dir, init_from, name_map;
    double train_lr = 0.0;
    std::uint64_t train_seed = 0;
    int train_iterations = 0;
    train->add_option("--frames", train_frames, "frames root (overrides config)");
    train->add_option("--annotations", train_annotations, "annotations root (overrides config)");
    train->add_option("--checkpoint-dir", checkpoint_dir, "checkpoint output directory")
        ->required();
    train->add_option("--init-from", init_from, "checkpoint to initialize parameters from");
    train->add_option("--name-map", name_map,
                      "'source -> target' manifest for partial weight import");
    train->add_option("--lr", train_lr, "shorthand for --train.learning_rate");
    train->add_option("--seed", train_seed, "shorthand for --train.seed");
    train->add_option("--iterations", train_iterations, "shorthand for --train.max_iterations");

    // eval
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a labeled corpus");
    CommonOpts eval_opts;
    add_config_options(eval, eval_opts);
    std::string eval_ckpt, eval_frames, eval_annotations;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--frames", eval_frames, "frames root (overrides config)");
    eval->add_option("--annotations", eval_annotations, "annotations root (overrides config)");

    // predict
    auto* predict = app.add_subcommand("predict", "write per-frame predictions for raw frames");
    CommonOpts predict_opts;
    add_config_options(predict, predict_opts);
    std::string predict_ckpt, predict_frames, predict_out;
    predict->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required();
    predict->add_option("--frames", predict_frames, "frames root (overrides config)");
    predict->add_option("--out", predict_out, "predictions output file")->required();

    // metrics
    auto* metrics = app.add_subcommand("metrics", "score a predictions file against annotations");
    std::string metrics_predictions, metrics_annotations;
    metrics->add_option("--predictions", metrics_predictions, "predictions file")->required();
    metrics->add_option("--annotations", metrics_annotations, "annotations root")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            generate_synth(synth_spec, synth_out);
            out << "wrote " << synth_spec.num_videos << " videos x "
                << synth_spec.frames_per_video << " frames to " << synth_out << "\n";
            return 0;
        }
        if (train->parsed()) {
            RunConfig cfg = build_config(train, train_opts);
            if (!train_frames.empty()) cfg.frames_root = train_frames;
            if (!train_annotations.empty()) cfg.annotations_root = train_annotations;
            if (train->count("--lr")) cfg.train.learning_rate = static_cast<float>(train_lr);
            if (train->count("--seed")) cfg.train.seed = train_seed;
            if (train->count("--iterations")) cfg.train.max_iterations = train_iterations;
            cfg.validate();
            if (cfg.precision != "f32")
                throw ConfigError("training runs in f32; precision " + cfg.precision +
                                  " is only for eval/predict");
            require_data_paths(cfg, true);

            std::vector<std::string> issues;
            Dataset ds = load_dataset(cfg.frames_root, cfg.annotations_root, &issues);
            print_issues(issues, err);

            Model<float> model = Model<float>::build(cfg.backbone, cfg.sequence, cfg.train.seed);
            model.freeze_backbone = cfg.freeze_backbone;
            const std::uint64_t digest = model_config_digest(cfg);
            if (!init_from.empty()) {
                Checkpoint ckpt = load_checkpoint(init_from);
                if (!name_map.empty()) {
                    const int n = import_weights(ckpt, model, parse_name_map(name_map));
                    err << "imported " << n << " tensors from " << init_from << "\n";
                } else {
                    restore_model<float>(ckpt, model, nullptr, digest);
                }
            } else if (!name_map.empty()) {
                throw ConfigError("--name-map requires --init-from");
            }

            TeeLog tee(out, checkpoint_dir);
            TrainResult res = train_loop(model, ds, cfg.train, cfg.determinism, digest,
                                         checkpoint_dir, tee.stream());
            tee.flush();
            err << "wrote " << res.checkpoint_paths.size() << " checkpoints to "
                << checkpoint_dir << "\n";
            return 0;
        }
        if (eval->parsed()) {
            RunConfig cfg = build_config(eval, eval_opts);
            if (!eval_frames.empty()) cfg.frames_root = eval_frames;
            if (!eval_annotations.empty()) cfg.annotations_root = eval_annotations;
            cfg.validate();
            require_data_paths(cfg, true);
            if (cfg.precision == "f64") return run_eval_typed<double>(cfg, eval_ckpt, out, err);
            return run_eval_typed<float>(cfg, eval_ckpt, out, err);
        }
        if (predict->parsed()) {
            RunConfig cfg = build_config(predict, predict_opts);
            if (!predict_frames.empty()) cfg.frames_root = predict_frames;
            cfg.validate();
            require_data_paths(cfg, false);
            if (cfg.precision == "f64")
                return run_predict_typed<double>(cfg, predict_ckpt, predict_out, err);
            return run_predict_typed<float>(cfg, predict_ckpt, predict_out, err);
        }
        if (metrics->parsed()) {
            std::vector<std::string> issues;
            Dataset ann = load_annotations(metrics_annotations, &issues);
            print_issues(issues, err);
            ConfusionMatrix cm = score_predictions(metrics_predictions, ann);
            out << format_report(report_from(cm));
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace clipnet
