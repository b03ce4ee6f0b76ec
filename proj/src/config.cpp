#include "clipnet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace clipnet {

namespace {

long long parse_int(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const long long v = std::strtoll(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError(key + ": '" + value + "' is not an integer");
    return v;
}

double parse_real(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw ConfigError(key + ": '" + value + "' is not a number");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError(key + ": '" + value + "' is not a boolean");
}

std::array<int, 4> parse_stage_blocks(const std::string& key, const std::string& value) {
    std::array<int, 4> out{};
    std::stringstream ss(value);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 4) throw ConfigError(key + ": expected exactly 4 comma-separated counts");
        out[static_cast<std::size_t>(i++)] = static_cast<int>(parse_int(key, item));
    }
    if (i != 4) throw ConfigError(key + ": expected exactly 4 comma-separated counts");
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "backbone.stage_blocks", "backbone.base_width",    "backbone.input_channels",
        "backbone.input_size",   "backbone.use_cbam",      "backbone.freeze",
        "cbam.reduction_ratio",  "cbam.spatial_kernel",    "sequence.hidden_size",
        "sequence.head_hidden",  "train.learning_rate",    "train.momentum",
        "train.clips_per_batch", "train.checkpoint_every", "train.max_iterations",
        "train.seed",            "train.grad_clip",        "data.frames_root",
        "data.annotations_root", "precision",              "determinism",
    };
    return keys;
}

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "backbone.stage_blocks") {
        cfg.backbone.stage_blocks = parse_stage_blocks(key, value);
    } else if (key == "backbone.base_width") {
        cfg.backbone.base_width = static_cast<int>(parse_int(key, value));
    } else if (key == "backbone.input_channels") {
        cfg.backbone.input_channels = static_cast<int>(parse_int(key, value));
    } else if (key == "backbone.input_size") {
        cfg.backbone.input_size = static_cast<int>(parse_int(key, value));
    } else if (key == "backbone.use_cbam") {
        cfg.backbone.use_cbam = parse_bool(key, value);
    } else if (key == "backbone.freeze") {
        cfg.freeze_backbone = parse_bool(key, value);
    } else if (key == "cbam.reduction_ratio") {
        cfg.backbone.cbam_reduction = static_cast<int>(parse_int(key, value));
    } else if (key == "cbam.spatial_kernel") {
        cfg.backbone.cbam_spatial_kernel = static_cast<int>(parse_int(key, value));
    } else if (key == "sequence.hidden_size") {
        cfg.sequence.hidden_size = static_cast<int>(parse_int(key, value));
    } else if (key == "sequence.head_hidden") {
        cfg.sequence.head_hidden = static_cast<int>(parse_int(key, value));
    } else if (key == "train.learning_rate") {
        cfg.train.learning_rate = static_cast<float>(parse_real(key, value));
    } else if (key == "train.momentum") {
        cfg.train.momentum = static_cast<float>(parse_real(key, value));
    } else if (key == "train.clips_per_batch") {
        cfg.train.clips_per_batch = static_cast<int>(parse_int(key, value));
    } else if (key == "train.checkpoint_every") {
        cfg.train.checkpoint_every = static_cast<int>(parse_int(key, value));
    } else if (key == "train.max_iterations") {
        cfg.train.max_iterations = static_cast<int>(parse_int(key, value));
    } else if (key == "train.seed") {
        cfg.train.seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "train.grad_clip") {
        cfg.train.grad_clip = static_cast<float>(parse_real(key, value));
    } else if (key == "data.frames_root") {
        cfg.frames_root = value;
    } else if (key == "data.annotations_root") {
        cfg.annotations_root = value;
    } else if (key == "precision") {
        if (value != "f32" && value != "f64")
            throw ConfigError("precision: '" + value + "' is not f32 or f64");
        cfg.precision = value;
    } else if (key == "determinism") {
        cfg.determinism = parse_bool(key, value);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        apply_kv(cfg, key, value);
    }
}

void RunConfig::validate() const {
    backbone.validate();
    train.validate();
    if (sequence.hidden_size < 1) throw ConfigError("sequence: hidden size must be positive");
    if (sequence.head_hidden < 0)
        throw ConfigError("sequence: head hidden must be non-negative");
}

std::uint64_t model_config_digest(const RunConfig& cfg) {
    std::string canon = "stage_blocks=";
    for (int i = 0; i < 4; ++i) {
        if (i) canon += ',';
        canon += std::to_string(cfg.backbone.stage_blocks[static_cast<std::size_t>(i)]);
    }
    canon += ";base_width=" + std::to_string(cfg.backbone.base_width);
    canon += ";input_channels=" + std::to_string(cfg.backbone.input_channels);
    canon += ";input_size=" + std::to_string(cfg.backbone.input_size);
    canon += ";use_cbam=" + std::to_string(cfg.backbone.use_cbam ? 1 : 0);
    canon += ";reduction=" + std::to_string(cfg.backbone.cbam_reduction);
    canon += ";spatial_kernel=" + std::to_string(cfg.backbone.cbam_spatial_kernel);
    canon += ";hidden_size=" + std::to_string(cfg.sequence.hidden_size);
    canon += ";head_hidden=" + std::to_string(cfg.sequence.head_hidden);
    canon += ";num_classes=" + std::to_string(cfg.sequence.num_classes);

    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace clipnet
