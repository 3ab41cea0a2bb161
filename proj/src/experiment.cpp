#include "dim/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace dim {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

Dataset resolve_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset_path) return load_dataset(*cfg.dataset_path);
    return synth_dataset(cfg.dataset);
}

std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,ce_loss,dim_loss,jsd_estimate,lr\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch);
        out += ',';
        out += fmt_double(r.ce_loss);
        out += ',';
        out += fmt_double(r.dim_loss);
        out += ',';
        out += fmt_double(r.jsd_estimate);
        out += ',';
        out += fmt_double(r.lr);
        out += '\n';
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << text;
    if (!f) throw IoError("failed writing " + path);
}

namespace {

RetrievalSet retrieval_set(Checkpoint& ckpt, const std::vector<Sample>& samples) {
    RetrievalSet rs;
    std::vector<std::vector<double>> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        rows.push_back(s.features);
        rs.ids.push_back(s.identity);
        rs.cams.push_back(s.camera);
    }
    rs.embeddings = ckpt.embed(rows);
    return rs;
}

UnlabeledSet eval_split_features(const Dataset& ds) {
    UnlabeledSet set;
    set.features.reserve(ds.query.size() + ds.gallery.size());
    for (const auto& s : ds.query) set.features.push_back(s.features);
    for (const auto& s : ds.gallery) set.features.push_back(s.features);
    return set;
}

ordered_json eval_json(const EvalResult& m) {
    ordered_json j;
    for (const auto& [k, v] : m.rank_k) j["rank" + std::to_string(k)] = v;
    j["mAP"] = m.mAP;
    j["num_queries"] = m.num_queries;
    j["num_skipped"] = m.num_skipped;
    return j;
}

std::vector<BenchRow> run_bench(const ExperimentConfig& cfg) {
    std::vector<BenchRow> rows;
    BenchConfig bench;
    bench.steps = cfg.bench_steps;
    bench.batch = cfg.bench_batch;
    bench.lr = cfg.bench_lr;

    if (cfg.bench_scenario == "discrete" || cfg.bench_scenario == "both") {
        DiscreteJoint joint{{{0.4, 0.1}, {0.1, 0.4}}};
        const double oracle = jsd_discrete_oracle(joint);
        auto sampler = make_discrete_sampler(joint);
        for (std::uint64_t s = 0; s < cfg.bench_seeds; ++s) {
            bench.seed = cfg.seed + s;
            auto rep = estimate_convergence(sampler, oracle, bench);
            rows.push_back({"discrete_2x2", 0.0, bench.seed, rep.final_estimate,
                            rep.oracle, rep.diverged});
        }
    }
    if (cfg.bench_scenario == "gaussian" || cfg.bench_scenario == "both") {
        for (double rho : {0.0, 0.3, 0.6, 0.9}) {
            auto sampler = make_gaussian_sampler(rho);
            for (std::uint64_t s = 0; s < cfg.bench_seeds; ++s) {
                bench.seed = cfg.seed + s;
                auto rep = estimate_convergence(sampler, gaussian_mi_oracle(rho), bench);
                rows.push_back({"gaussian", rho, bench.seed, rep.final_estimate,
                                rep.oracle, rep.diverged});
            }
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = "scenario,rho,seed,estimate,oracle,diverged\n";
    for (const auto& r : rows) {
        out += r.scenario + ',' + fmt_double(r.rho) + ',' + std::to_string(r.seed) + ',' +
               fmt_double(r.estimate) + ',' + fmt_double(r.oracle) + ',' +
               (r.diverged ? "1" : "0") + '\n';
    }
    return out;
}

}  // namespace

RunResult run_experiment_on(const ExperimentConfig& cfg, const Dataset& ds) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(cfg.output_dir);

    RunResult result;
    result.dataset_hash = ds.hash;
    result.dataset_difficulty = ds.difficulty;

    const auto train_cfg = cfg.train_config();
    Checkpoint final_ckpt;

    if (cfg.mode == RunMode::EstimatorBench) {
        result.bench = run_bench(cfg);
        write_text_file(cfg.output_dir + "/bench.csv", bench_csv(result.bench));
    } else if (cfg.mode == RunMode::TfDim) {
        auto source = load_checkpoint(cfg.tf_source_checkpoint);
        auto target_train = UnlabeledSet::from(ds.train);
        auto target_eval = eval_split_features(ds);
        auto tr = tf_dim(source, target_train, target_eval, train_cfg);
        result.history = std::move(tr.history);
        result.jsd_pre = tr.jsd_target_pre;
        result.jsd_post = tr.jsd_target_post;
        final_ckpt = std::move(tr.checkpoint);
    } else if (cfg.resolved_arch() == Arch::Global) {
        auto enc_cfg = cfg.global_encoder_config(ds.input_dim(), ds.spec.num_identities);
        auto tr = train_global_dim(ds, enc_cfg, cfg.discriminator_config(), train_cfg);
        result.history = std::move(tr.history);
        final_ckpt = std::move(tr.checkpoint);
    } else {
        auto enc_cfg = cfg.part_encoder_config(ds.input_dim(), ds.spec.num_identities);
        auto tr = train_local_dim(ds, enc_cfg, cfg.discriminator_config(), train_cfg);
        result.history = std::move(tr.history);
        final_ckpt = std::move(tr.checkpoint);
    }

    if (cfg.mode != RunMode::EstimatorBench) {
        result.metrics = cmc_map(retrieval_set(final_ckpt, ds.query),
                                 retrieval_set(final_ckpt, ds.gallery));
        result.eval_jsd = eval_jsd(final_ckpt, eval_split_features(ds));
        result.checkpoint_path = cfg.output_dir + "/final.ckpt";
        save_checkpoint(final_ckpt, result.checkpoint_path);
        write_text_file(cfg.output_dir + "/metrics.csv", history_csv(result.history));
    }

    const auto t1 = std::chrono::steady_clock::now();
    result.wall_time_s = std::chrono::duration<double>(t1 - t0).count();

    ordered_json report;
    report["mode"] = run_mode_name(cfg.mode);
    report["seed"] = cfg.seed;
    report["dataset_hash"] = result.dataset_hash;
    report["dataset_difficulty"] = result.dataset_difficulty;
    ordered_json cfg_echo;
    for (const auto& [k, v] : cfg.resolved_kv()) cfg_echo[k] = v;
    report["config"] = cfg_echo;
    if (cfg.mode == RunMode::EstimatorBench) {
        ordered_json rows = ordered_json::array();
        for (const auto& r : result.bench) {
            rows.push_back({{"scenario", r.scenario},
                            {"rho", r.rho},
                            {"seed", r.seed},
                            {"estimate", r.estimate},
                            {"oracle", r.oracle},
                            {"diverged", r.diverged}});
        }
        report["bench"] = rows;
    } else {
        report["metrics"] = eval_json(result.metrics);
        report["eval_jsd_estimate"] = result.eval_jsd;
        if (cfg.mode == RunMode::TfDim) {
            report["jsd_target_pre"] = result.jsd_pre;
            report["jsd_target_post"] = result.jsd_post;
        }
        report["epochs_run"] = result.history.size();
        report["final_checkpoint"] = "final.ckpt";
    }
    report["wall_time_s"] = result.wall_time_s;
    write_text_file(cfg.output_dir + "/result.json", report.dump(2) + "\n");
    return result;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    return run_experiment_on(cfg, resolve_dataset(cfg));
}

std::vector<RunResult> sweep_experiment(const ExperimentConfig& cfg,
                                        const std::string& param,
                                        const std::vector<double>& values) {
    if (param != "beta" && param != "lambda") {
        throw ConfigError("sweep: param must be 'beta' or 'lambda', got '" + param + "'");
    }
    if (values.empty()) throw ConfigError("sweep: empty value list");
    cfg.validate();
    auto ds = resolve_dataset(cfg);
    fs::create_directories(cfg.output_dir);

    std::vector<RunResult> results;
    std::string csv = "param,value,rank1,mAP,dataset_hash\n";
    for (double v : values) {
        ExperimentConfig run_cfg = cfg;
        if (param == "beta") run_cfg.objective.beta = v;
        else run_cfg.objective.lambda = v;
        run_cfg.output_dir = cfg.output_dir + "/sweep_" + param + "_" + fmt_double(v);
        auto r = run_experiment_on(run_cfg, ds);
        csv += param + ',' + fmt_double(v) + ',' + fmt_double(r.metrics.rank_k.at(1)) +
               ',' + fmt_double(r.metrics.mAP) + ',' + r.dataset_hash + '\n';
        results.push_back(std::move(r));
    }
    write_text_file(cfg.output_dir + "/sweep.csv", csv);
    return results;
}

void export_embeddings(const std::string& ckpt_path, const std::string& dataset_path,
                       const std::string& out_csv) {
    auto ckpt = load_checkpoint(ckpt_path);
    auto ds = load_dataset(dataset_path);

    std::string out = "index,split,identity,camera,embedding...\n";
    std::size_t index = 0;
    auto dump_split = [&](const std::vector<Sample>& samples, const char* split) {
        if (samples.empty()) return;
        std::vector<std::vector<double>> rows;
        rows.reserve(samples.size());
        for (const auto& s : samples) rows.push_back(s.features);
        auto emb = ckpt.embed(rows);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            out += std::to_string(index++);
            out += ',';
            out += split;
            out += ',' + std::to_string(samples[i].identity) + ',' +
                   std::to_string(samples[i].camera);
            for (double v : emb[i]) out += ',' + fmt_double(v);
            out += '\n';
        }
    };
    dump_split(ds.train, "train");
    dump_split(ds.query, "query");
    dump_split(ds.gallery, "gallery");
    write_text_file(out_csv, out);
}

}  // namespace dim
