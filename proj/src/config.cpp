#include "dim/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dim {

std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::GlobalDim: return "global_dim";
        case RunMode::LocalDim: return "local_dim";
        case RunMode::TfDim: return "tf_dim";
        case RunMode::EstimatorBench: return "estimator_bench";
        case RunMode::Baseline: return "baseline";
    }
    return "?";
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

struct Parser {
    ExperimentConfig& cfg;
    int line = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(msg, line);
    }

    double as_double(const std::string& v) const {
        double out = 0.0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size()) {
            fail("expected a number, got '" + v + "'");
        }
        return out;
    }

    std::uint64_t as_uint(const std::string& v) const {
        std::uint64_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size()) {
            fail("expected a non-negative integer, got '" + v + "'");
        }
        return out;
    }

    bool as_bool(const std::string& v) const {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail("expected true/false, got '" + v + "'");
    }

    std::vector<std::size_t> as_size_list(const std::string& v) const {
        std::vector<std::size_t> out;
        std::istringstream is(v);
        std::string cell;
        while (std::getline(is, cell, ',')) {
            cell = trim(cell);
            if (!cell.empty()) out.push_back(as_uint(cell));
        }
        if (out.empty()) fail("expected a comma-separated size list, got '" + v + "'");
        return out;
    }

    void ensure_shift() const {
        if (!cfg.dataset.domain_shift) cfg.dataset.domain_shift.emplace();
    }

    void set(const std::string& key, const std::string& val) {
        if (key == "mode") {
            if (val == "global_dim") cfg.mode = RunMode::GlobalDim;
            else if (val == "local_dim") cfg.mode = RunMode::LocalDim;
            else if (val == "tf_dim") cfg.mode = RunMode::TfDim;
            else if (val == "estimator_bench") cfg.mode = RunMode::EstimatorBench;
            else if (val == "baseline") cfg.mode = RunMode::Baseline;
            else fail("unknown mode '" + val + "'");
        } else if (key == "output_dir") cfg.output_dir = val;
        else if (key == "seed") cfg.seed = as_uint(val);
        else if (key == "dataset.path") cfg.dataset_path = val;
        else if (key == "dataset.num_identities") cfg.dataset.num_identities = as_uint(val);
        else if (key == "dataset.samples_per_identity")
            cfg.dataset.samples_per_identity = as_uint(val);
        else if (key == "dataset.num_cameras") cfg.dataset.num_cameras = as_uint(val);
        else if (key == "dataset.input_dim") cfg.dataset.input_dim = as_uint(val);
        else if (key == "dataset.cluster_spread") cfg.dataset.cluster_spread = as_double(val);
        else if (key == "dataset.camera_offset_scale")
            cfg.dataset.camera_offset_scale = as_double(val);
        else if (key == "dataset.seed") cfg.dataset.seed = as_uint(val);
        else if (key == "dataset.shift.rotation_angle") {
            ensure_shift();
            cfg.dataset.domain_shift->rotation_angle_deg = as_double(val);
        } else if (key == "dataset.shift.mean_shift") {
            ensure_shift();
            cfg.dataset.domain_shift->mean_shift = as_double(val);
        } else if (key == "dataset.shift.spread_scale") {
            ensure_shift();
            cfg.dataset.domain_shift->spread_scale = as_double(val);
        } else if (key == "train.epochs") cfg.epochs = as_uint(val);
        else if (key == "train.base_lr") cfg.base_lr = as_double(val);
        else if (key == "train.decay_factor") cfg.decay_factor = as_double(val);
        else if (key == "train.decay_epoch") cfg.decay_epoch = as_uint(val);
        else if (key == "train.batch_size") cfg.batch_size = as_uint(val);
        else if (key == "objective.alpha") cfg.objective.alpha = as_double(val);
        else if (key == "objective.beta") cfg.objective.beta = as_double(val);
        else if (key == "objective.lambda") cfg.objective.lambda = as_double(val);
        else if (key == "objective.sampling") {
            if (val == "random") cfg.objective.sampling = Sampling::Random;
            else if (val == "labeled") cfg.objective.sampling = Sampling::Labeled;
            else fail("unknown sampling '" + val + "'");
        } else if (key == "objective.adversarial_discriminator")
            cfg.objective.adversarial_discriminator = as_bool(val);
        else if (key == "model.arch") {
            if (val == "global") cfg.arch = Arch::Global;
            else if (val == "part") cfg.arch = Arch::Part;
            else fail("unknown arch '" + val + "'");
            cfg.arch_set = true;
        } else if (key == "model.pair_input") {
            if (val == "summary") cfg.objective.pair_input = PairInput::Summary;
            else if (val == "embedding") cfg.objective.pair_input = PairInput::Embedding;
            else fail("unknown pair_input '" + val + "'");
        } else if (key == "model.backbone_hidden") cfg.backbone_hidden = as_size_list(val);
        else if (key == "model.d_u") cfg.d_u = as_uint(val);
        else if (key == "model.d_z") cfg.d_z = as_uint(val);
        else if (key == "model.num_parts") cfg.num_parts = as_uint(val);
        else if (key == "model.map_positions") cfg.map_positions = as_uint(val);
        else if (key == "model.map_channels") cfg.map_channels = as_uint(val);
        else if (key == "model.dropout_rate") cfg.dropout_rate = as_double(val);
        else if (key == "model.leaky_slope") cfg.leaky_slope = as_double(val);
        else if (key == "model.disc_h1") cfg.disc_h1 = as_uint(val);
        else if (key == "model.disc_h2") cfg.disc_h2 = as_uint(val);
        else if (key == "model.disc_h3") cfg.disc_h3 = as_uint(val);
        else if (key == "model.share_discriminators")
            cfg.share_discriminators = as_bool(val);
        else if (key == "tf.source_checkpoint") cfg.tf_source_checkpoint = val;
        else if (key == "bench.scenario") {
            if (val != "discrete" && val != "gaussian" && val != "both") {
                fail("unknown bench scenario '" + val + "'");
            }
            cfg.bench_scenario = val;
        } else if (key == "bench.steps") cfg.bench_steps = as_uint(val);
        else if (key == "bench.batch") cfg.bench_batch = as_uint(val);
        else if (key == "bench.lr") cfg.bench_lr = as_double(val);
        else if (key == "bench.seeds") cfg.bench_seeds = as_uint(val);
        else fail("unknown key '" + key + "'");
    }
};

}  // namespace

ExperimentConfig ExperimentConfig::parse_text(const std::string& text,
                                              const std::string& path) {
    ExperimentConfig cfg;
    Parser parser{cfg};
    std::istringstream in(text);
    std::string raw;
    bool saw_mode = false, saw_out = false;
    while (std::getline(in, raw)) {
        ++parser.line;
        const auto hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ": expected 'key = value', got '" + line + "'",
                              parser.line);
        }
        const auto key = trim(line.substr(0, eq));
        const auto val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) {
            throw ConfigError(path + ": empty key or value", parser.line);
        }
        try {
            parser.set(key, val);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(e.line) + ": " + e.what(),
                              e.line);
        }
        if (key == "mode") saw_mode = true;
        if (key == "output_dir") saw_out = true;
    }
    if (!saw_mode) throw ConfigError(path + ": missing required key 'mode'");
    if (!saw_out && cfg.mode != RunMode::EstimatorBench) {
        // estimator_bench may print only; everything else writes artifacts
        throw ConfigError(path + ": missing required key 'output_dir'");
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
}

void ExperimentConfig::validate() const {
    objective.validate();
    if (mode == RunMode::TfDim && tf_source_checkpoint.empty()) {
        throw ConfigError("tf_dim mode requires tf.source_checkpoint");
    }
    if (epochs > 0 && decay_epoch >= epochs) {
        throw ConfigError("train.decay_epoch must be < train.epochs");
    }
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (!dataset_path) dataset.validate();
}

double ExperimentConfig::resolved_base_lr() const {
    if (base_lr) return *base_lr;
    switch (mode) {
        case RunMode::LocalDim: return 0.02;
        case RunMode::TfDim: return 0.00005;
        case RunMode::Baseline: return resolved_arch() == Arch::Part ? 0.02 : 0.3;
        default: return 0.3;
    }
}

Arch ExperimentConfig::resolved_arch() const {
    switch (mode) {
        case RunMode::GlobalDim: return Arch::Global;
        case RunMode::LocalDim: return Arch::Part;
        case RunMode::Baseline: return arch_set ? arch : Arch::Global;
        default: return arch;  // tf_dim takes it from the source checkpoint
    }
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.base_lr = resolved_base_lr();
    tc.decay_factor = decay_factor;
    tc.decay_epoch = decay_epoch;
    tc.batch_size = batch_size;
    tc.objective = objective;
    if (mode == RunMode::Baseline) {
        // the no-infomax reduction of the matching full model
        tc.objective.beta = 0.0;
        tc.objective.lambda = 0.0;
    }
    tc.share_discriminators = share_discriminators;
    tc.seed = seed;
    return tc;
}

GlobalEncoderConfig ExperimentConfig::global_encoder_config(
    std::size_t d_in, std::size_t num_classes) const {
    GlobalEncoderConfig g;
    g.d_in = d_in;
    g.backbone_hidden = backbone_hidden;
    g.d_u = d_u;
    g.d_z = d_z;
    g.num_classes = num_classes;
    g.dropout_rate = dropout_rate;
    g.leaky_slope = leaky_slope;
    return g;
}

PartEncoderConfig ExperimentConfig::part_encoder_config(std::size_t d_in,
                                                        std::size_t num_classes) const {
    PartEncoderConfig p;
    p.d_in = d_in;
    p.backbone_hidden = backbone_hidden;
    p.map_positions = map_positions;
    p.map_channels = map_channels;
    p.num_parts = num_parts;
    p.d_z = d_z;
    p.num_classes = num_classes;
    p.dropout_rate = dropout_rate;
    p.leaky_slope = leaky_slope;
    return p;
}

DiscriminatorConfig ExperimentConfig::discriminator_config() const {
    DiscriminatorConfig dc;
    const std::size_t summary_dim =
        resolved_arch() == Arch::Global ? d_u : map_channels;
    const std::size_t side =
        objective.pair_input == PairInput::Summary ? summary_dim : d_z;
    dc.input_dim = side + d_z;
    dc.h1 = disc_h1;
    dc.h2 = disc_h2;
    dc.h3 = disc_h3;
    return dc;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::resolved_kv() const {
    std::vector<std::pair<std::string, std::string>> kv;
    auto put = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
    put("mode", run_mode_name(mode));
    put("output_dir", output_dir);
    put("seed", std::to_string(seed));
    if (dataset_path) {
        put("dataset.path", *dataset_path);
    } else {
        put("dataset.num_identities", std::to_string(dataset.num_identities));
        put("dataset.samples_per_identity", std::to_string(dataset.samples_per_identity));
        put("dataset.num_cameras", std::to_string(dataset.num_cameras));
        put("dataset.input_dim", std::to_string(dataset.input_dim));
        put("dataset.cluster_spread", fmt_double(dataset.cluster_spread));
        put("dataset.camera_offset_scale", fmt_double(dataset.camera_offset_scale));
        put("dataset.seed", std::to_string(dataset.seed));
        if (dataset.domain_shift) {
            put("dataset.shift.rotation_angle",
                fmt_double(dataset.domain_shift->rotation_angle_deg));
            put("dataset.shift.mean_shift", fmt_double(dataset.domain_shift->mean_shift));
            put("dataset.shift.spread_scale",
                fmt_double(dataset.domain_shift->spread_scale));
        }
    }
    put("train.epochs", std::to_string(epochs));
    put("train.base_lr", fmt_double(resolved_base_lr()));
    put("train.decay_factor", fmt_double(decay_factor));
    put("train.decay_epoch", std::to_string(decay_epoch));
    put("train.batch_size", std::to_string(batch_size));
    put("objective.alpha", fmt_double(objective.alpha));
    put("objective.beta", fmt_double(objective.beta));
    put("objective.lambda", fmt_double(objective.lambda));
    put("objective.sampling",
        objective.sampling == Sampling::Random ? "random" : "labeled");
    put("objective.adversarial_discriminator",
        objective.adversarial_discriminator ? "true" : "false");
    put("model.arch", resolved_arch() == Arch::Global ? "global" : "part");
    put("model.pair_input",
        objective.pair_input == PairInput::Summary ? "summary" : "embedding");
    {
        std::string hidden;
        for (std::size_t i = 0; i < backbone_hidden.size(); ++i) {
            if (i) hidden += ',';
            hidden += std::to_string(backbone_hidden[i]);
        }
        put("model.backbone_hidden", hidden);
    }
    put("model.d_u", std::to_string(d_u));
    put("model.d_z", std::to_string(d_z));
    put("model.num_parts", std::to_string(num_parts));
    put("model.map_positions", std::to_string(map_positions));
    put("model.map_channels", std::to_string(map_channels));
    put("model.dropout_rate", fmt_double(dropout_rate));
    put("model.leaky_slope", fmt_double(leaky_slope));
    put("model.disc_h1", std::to_string(disc_h1));
    put("model.disc_h2", std::to_string(disc_h2));
    put("model.disc_h3", std::to_string(disc_h3));
    put("model.share_discriminators", share_discriminators ? "true" : "false");
    if (mode == RunMode::TfDim) put("tf.source_checkpoint", tf_source_checkpoint);
    if (mode == RunMode::EstimatorBench) {
        put("bench.scenario", bench_scenario);
        put("bench.steps", std::to_string(bench_steps));
        put("bench.batch", std::to_string(bench_batch));
        put("bench.lr", fmt_double(bench_lr));
        put("bench.seeds", std::to_string(bench_seeds));
    }
    return kv;
}

}  // namespace dim
