#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dim/experiment.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

dim::ExperimentConfig load_config(const CommonOpts& opts) {
    auto cfg = dim::ExperimentConfig::parse_file(opts.config_path);
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    if (opts.seed) cfg.seed = *opts.seed;
    return cfg;
}

void add_common(CLI::App* sub, CommonOpts& opts, bool config_required = true) {
    auto* c = sub->add_option("--config", opts.config_path, "experiment config file");
    if (config_required) c->required();
    sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", opts.seed, "seed override");
    sub->add_flag("--quiet", opts.quiet, "suppress progress output");
}

int cmd_synth(const CommonOpts& opts) {
    auto cfg = load_config(opts);
    auto ds = dim::synth_dataset(cfg.dataset);
    std::filesystem::create_directories(cfg.output_dir);
    const auto path = cfg.output_dir + "/dataset.csv";
    dim::save_dataset(ds, path);
    if (!opts.quiet) {
        std::cout << "wrote " << path << "  (" << ds.train.size() << " train, "
                  << ds.query.size() << " query, " << ds.gallery.size()
                  << " gallery; difficulty " << ds.difficulty << ", hash " << ds.hash
                  << ")\n";
    }
    return 0;
}

int cmd_run(const CommonOpts& opts) {
    auto cfg = load_config(opts);
    auto result = dim::run_experiment(cfg);
    if (!opts.quiet) {
        if (cfg.mode == dim::RunMode::EstimatorBench) {
            for (const auto& r : result.bench) {
                std::cout << r.scenario << " rho=" << r.rho << " seed=" << r.seed
                          << " estimate=" << r.estimate << " oracle=" << r.oracle
                          << (r.diverged ? "  DIVERGED" : "") << "\n";
            }
        } else {
            std::cout << "rank1=" << result.metrics.rank_k.at(1)
                      << " rank5=" << result.metrics.rank_k.at(5)
                      << " rank10=" << result.metrics.rank_k.at(10)
                      << " mAP=" << result.metrics.mAP
                      << " eval_jsd=" << result.eval_jsd << "\n";
        }
        std::cout << "artifacts in " << cfg.output_dir << "\n";
    }
    return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& param,
              const std::vector<double>& values) {
    auto cfg = load_config(opts);
    auto results = dim::sweep_experiment(cfg, param, values);
    if (!opts.quiet) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::cout << param << "=" << values[i]
                      << " rank1=" << results[i].metrics.rank_k.at(1)
                      << " mAP=" << results[i].metrics.mAP << "\n";
        }
        std::cout << "table in " << cfg.output_dir << "/sweep.csv\n";
    }
    return 0;
}

int cmd_export(const std::string& ckpt, const std::string& data, const std::string& out,
               bool quiet) {
    dim::export_embeddings(ckpt, data, out);
    if (!quiet) std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool quiet) {
    const double tol = 1e-4;
    const auto check = dim::check_objective_gradients(seed);
    if (!quiet) {
        std::cout << "global objective: max relative error " << check.global_error << "\n";
        std::cout << "local objective:  max relative error " << check.local_error << "\n";
    }
    const bool ok = check.global_error <= tol && check.local_error <= tol;
    std::cout << (ok ? "gradcheck OK" : "gradcheck FAILED") << " (tolerance " << tol
              << ")\n";
    return ok ? 0 : 1;
}

int cmd_bench(const CommonOpts& opts) {
    dim::ExperimentConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = load_config(opts);
    } else {
        cfg.mode = dim::RunMode::EstimatorBench;
        if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
        if (opts.seed) cfg.seed = *opts.seed;
    }
    cfg.mode = dim::RunMode::EstimatorBench;
    if (cfg.output_dir.empty()) cfg.output_dir = "bench_out";
    auto result = dim::run_experiment(cfg);
    if (!opts.quiet) {
        for (const auto& r : result.bench) {
            std::cout << r.scenario << " rho=" << r.rho << " seed=" << r.seed
                      << " estimate=" << r.estimate << " oracle=" << r.oracle
                      << " gap=" << std::abs(r.estimate - r.oracle)
                      << (r.diverged ? "  DIVERGED" : "") << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"info-max representation learning toolkit"};
    app.require_subcommand(1);

    CommonOpts synth_opts, run_opts, sweep_opts, bench_opts;
    std::string sweep_param;
    std::vector<double> sweep_values;
    std::string export_ckpt, export_data, export_out;
    bool export_quiet = false;
    std::uint64_t gradcheck_seed = 3;
    bool gradcheck_quiet = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset file");
    add_common(synth, synth_opts);

    auto* run = app.add_subcommand("run", "run the experiment described by a config");
    add_common(run, run_opts);

    auto* sweep = app.add_subcommand("sweep", "re-run an experiment over beta or lambda");
    add_common(sweep, sweep_opts);
    sweep->add_option("--param", sweep_param, "beta or lambda")->required();
    sweep->add_option("--values", sweep_values, "values to sweep")->required();

    auto* exp = app.add_subcommand("export", "export eval-mode embeddings to CSV");
    exp->add_option("--ckpt", export_ckpt, "checkpoint file")->required();
    exp->add_option("--data", export_data, "dataset file")->required();
    exp->add_option("--out", export_out, "output CSV path")->required();
    exp->add_flag("--quiet", export_quiet, "suppress progress output");

    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference check of both full objectives");
    gc->add_option("--seed", gradcheck_seed, "seed");
    gc->add_flag("--quiet", gradcheck_quiet, "suppress per-objective output");

    auto* bench = app.add_subcommand("bench-estimator",
                                     "bound-estimator convergence benchmark");
    add_common(bench, bench_opts, /*config_required=*/false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_opts);
        if (run->parsed()) return cmd_run(run_opts);
        if (sweep->parsed()) return cmd_sweep(sweep_opts, sweep_param, sweep_values);
        if (exp->parsed()) return cmd_export(export_ckpt, export_data, export_out,
                                             export_quiet);
        if (gc->parsed()) return cmd_gradcheck(gradcheck_seed, gradcheck_quiet);
        if (bench->parsed()) return cmd_bench(bench_opts);
    } catch (const dim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dim::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
