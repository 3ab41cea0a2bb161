#pragma once

#include <string>
#include <vector>

#include "dim/config.hpp"
#include "dim/eval.hpp"
#include "dim/training.hpp"

namespace dim {

struct BenchRow {
    std::string scenario;
    double rho = 0.0;  // 0 for the discrete scenario
    std::uint64_t seed = 0;
    double estimate = 0.0;
    double oracle = 0.0;
    bool diverged = false;
};

struct RunResult {
    TrainHistory history;
    EvalResult metrics;
    double eval_jsd = 0.0;       // bound estimate on the eval split, final model
    double jsd_pre = 0.0;        // transfer mode only: before finetuning
    double jsd_post = 0.0;       // and after
    std::string dataset_hash;
    double dataset_difficulty = 0.0;
    std::string checkpoint_path;  // empty for estimator_bench
    std::vector<BenchRow> bench;  // estimator_bench mode only
    double wall_time_s = 0.0;
};

Dataset resolve_dataset(const ExperimentConfig& cfg);

// Executes the configured mode and writes metrics.csv, result.json, and
// final.ckpt (bench runs write bench.csv in place of the other artifacts)
// into cfg.output_dir.
RunResult run_experiment(const ExperimentConfig& cfg);
RunResult run_experiment_on(const ExperimentConfig& cfg, const Dataset& ds);

// Re-runs the experiment once per value of beta or lambda with the same
// seed and dataset; artifacts land in per-value subdirectories and one
// summary row per value goes to <output_dir>/sweep.csv.
std::vector<RunResult> sweep_experiment(const ExperimentConfig& cfg,
                                        const std::string& param,
                                        const std::vector<double>& values);

// Eval-mode embeddings for every sample in the dataset, one CSV row per
// sample: index, split, identity, camera, embedding values. Part-model
// checkpoints export the concatenated part embedding.
void export_embeddings(const std::string& ckpt_path, const std::string& dataset_path,
                       const std::string& out_csv);

// Serialized forms shared by the CLI and tests.
std::string history_csv(const TrainHistory& history);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dim
