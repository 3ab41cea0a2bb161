#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dim/dataset.hpp"
#include "dim/objectives.hpp"
#include "dim/training.hpp"

namespace dim {

enum class RunMode { GlobalDim, LocalDim, TfDim, EstimatorBench, Baseline };

std::string run_mode_name(RunMode m);

// Flat `key = value` configuration with dotted sections and '#' comments.
// Unknown keys are rejected with the offending line number. Every field has
// a default except mode and output_dir.
struct ExperimentConfig {
    RunMode mode = RunMode::Baseline;
    std::string output_dir;
    std::uint64_t seed = 1;

    // dataset source: a file path wins over a synthetic spec
    std::optional<std::string> dataset_path;
    DatasetSpec dataset;

    // training; base_lr falls back to a per-mode default when unset
    std::size_t epochs = 60;
    std::optional<double> base_lr;
    double decay_factor = 10.0;
    std::size_t decay_epoch = 40;
    std::size_t batch_size = 32;

    ObjectiveConfig objective;

    // model dims (d_in and num_classes come from the dataset)
    Arch arch = Arch::Global;  // explicit only for baseline mode
    bool arch_set = false;
    std::vector<std::size_t> backbone_hidden = {32};
    std::size_t d_u = 32;
    std::size_t d_z = 64;
    std::size_t num_parts = 6;
    std::size_t map_positions = 12;
    std::size_t map_channels = 16;
    double dropout_rate = 0.5;
    double leaky_slope = 0.01;
    std::size_t disc_h1 = 128;
    std::size_t disc_h2 = 128;
    std::size_t disc_h3 = 64;
    bool share_discriminators = true;

    std::string tf_source_checkpoint;

    // estimator bench
    std::string bench_scenario = "both";  // discrete | gaussian | both
    std::size_t bench_steps = 2000;
    std::size_t bench_batch = 256;
    double bench_lr = 0.5;
    std::size_t bench_seeds = 3;

    static ExperimentConfig parse_file(const std::string& path);
    static ExperimentConfig parse_text(const std::string& text, const std::string& path);

    void validate() const;

    double resolved_base_lr() const;
    Arch resolved_arch() const;
    TrainConfig train_config() const;
    GlobalEncoderConfig global_encoder_config(std::size_t d_in,
                                              std::size_t num_classes) const;
    PartEncoderConfig part_encoder_config(std::size_t d_in,
                                          std::size_t num_classes) const;
    DiscriminatorConfig discriminator_config() const;

    // The fully resolved key/value view echoed into reports, sufficient to
    // reproduce the run.
    std::vector<std::pair<std::string, std::string>> resolved_kv() const;
};

}  // namespace dim
