// Acceptance suite: every release criterion with its tolerance pinned in
// code, one PASS/FAIL line each. Returns the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "dim/experiment.hpp"

using namespace dim;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass,
            const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion,
                name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

fs::path work_dir() {
    auto dir = fs::temp_directory_path() / "dim_acceptance";
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// ---- criterion 1: discrete estimator convergence ---------------------------

void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    DiscreteJoint joint{{{0.4, 0.1}, {0.1, 0.4}}};
    const double oracle = jsd_discrete_oracle(joint);
    BenchConfig cfg;
    cfg.steps = 2000;
    cfg.batch = 256;
    cfg.seed = 1;
    auto rep = estimate_convergence(make_discrete_sampler(joint), oracle, cfg);
    const double secs = seconds_since(t0);
    const bool pass = !rep.diverged && rep.gap() <= 0.02 && secs < 60.0;
    report(1, "discrete estimator convergence", pass,
           "estimate " + fmt(rep.final_estimate) + " vs oracle " + fmt(oracle) +
               ", gap " + fmt(rep.gap()) + " <= 0.02, " + fmt(secs) + "s < 60s");
}

// ---- criterion 2: gaussian monotonicity -------------------------------------

void criterion_2() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> rhos = {0.0, 0.3, 0.6, 0.9};
    bool ordered_all = true;
    double rho0_worst = 0.0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        std::vector<double> estimates;
        for (double rho : rhos) {
            BenchConfig cfg;
            cfg.steps = 1800;
            cfg.batch = 256;
            cfg.seed = seed;
            auto rep = estimate_convergence(make_gaussian_sampler(rho),
                                            gaussian_mi_oracle(rho), cfg);
            estimates.push_back(rep.final_estimate);
        }
        rho0_worst = std::max(rho0_worst, estimates[0]);
        const bool ordered = estimates[0] < estimates[1] &&
                             estimates[1] < estimates[2] && estimates[2] < estimates[3];
        ordered_all = ordered_all && ordered;
        detail += "seed " + std::to_string(seed) + ": " + fmt(estimates[0]) + " < " +
                  fmt(estimates[1]) + " < " + fmt(estimates[2]) + " < " +
                  fmt(estimates[3]) + (ordered ? "; " : " NOT ORDERED; ");
    }
    // the exact-MI reference must itself be strictly increasing over the grid
    bool oracle_ordered = true;
    for (std::size_t i = 1; i < rhos.size(); ++i) {
        oracle_ordered =
            oracle_ordered && gaussian_mi_oracle(rhos[i - 1]) < gaussian_mi_oracle(rhos[i]);
    }
    const double secs = seconds_since(t0);
    const bool pass = ordered_all && oracle_ordered && rho0_worst <= 0.02 && secs < 180.0;
    report(2, "gaussian estimator monotonicity", pass,
           detail + "rho0 <= 0.02: " + fmt(rho0_worst) + ", " + fmt(secs) + "s < 180s");
}

// ---- criterion 3: bound and algebraic identity ------------------------------

void criterion_3() {
    Rng rng(33);
    double worst_jsd_excess = -1e300, worst_loss_deficit = -1e300, worst_identity = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        DiscriminatorConfig dc{6, 8, 8, 4};
        auto d = DimDiscriminator::init(dc, rng);
        const std::size_t n = 2 + rng.uniform_int(7);
        auto u = randn({n, 3}, rng, 2.0);
        auto z = randn({n, 3}, rng, 2.0);
        auto pairs = pair_shifted(u, z, 1 + rng.uniform_int(n - 1));
        const double alpha = 0.25 + rng.uniform() * 1.5;
        const double loss = dim_loss(d, pairs, alpha)->value();
        const double jsd = jsd_estimate(d, pairs);
        worst_jsd_excess = std::max(worst_jsd_excess, jsd - std::numbers::ln2);
        worst_loss_deficit = std::max(worst_loss_deficit, -loss);
        worst_identity = std::max(
            worst_identity,
            std::abs(loss - alpha * (2.0 * std::numbers::ln2 - 2.0 * jsd)));
    }
    const bool pass = worst_jsd_excess <= 1e-9 && worst_loss_deficit <= 1e-9 &&
                      worst_identity <= 1e-12;
    report(3, "bound and loss identity over 10^4 random models", pass,
           "max(jsd - ln2) " + fmt(worst_jsd_excess) + " <= 1e-9, max(-loss) " +
               fmt(worst_loss_deficit) + " <= 1e-9, identity " + fmt(worst_identity) +
               " <= 1e-12");
}

// ---- criterion 4: gradients -------------------------------------------------

void criterion_4() {
    const auto t0 = std::chrono::steady_clock::now();
    auto check = check_objective_gradients(3, 200, 1e-5);
    const double secs = seconds_since(t0);
    const bool pass =
        check.global_error <= 1e-4 && check.local_error <= 1e-4 && secs < 30.0;
    report(4, "full-objective gradient check", pass,
           "global " + fmt(check.global_error) + ", local " + fmt(check.local_error) +
               " <= 1e-4, " + fmt(secs) + "s < 30s");
}

// ---- criterion 5: global directional claim ----------------------------------

ExperimentConfig benchmark_config(RunMode mode, std::uint64_t seed,
                                  const std::string& out) {
    ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.output_dir = out;
    cfg.seed = seed;
    cfg.dataset.num_identities = 50;
    cfg.dataset.samples_per_identity = 8;
    cfg.dataset.num_cameras = 2;
    cfg.dataset.input_dim = 32;
    cfg.dataset.cluster_spread = 0.5;
    cfg.dataset.camera_offset_scale = 0.3;
    cfg.dataset.seed = 1;
    return cfg;
}

void criterion_5() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = work_dir();
    auto ds = synth_dataset(benchmark_config(RunMode::Baseline, 1, "").dataset);

    double base_rank1 = 0, dim_rank1 = 0, base_jsd = 0, dim_jsd = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto base_cfg = benchmark_config(RunMode::Baseline, seed,
                                         (dir / ("c5_base_" + std::to_string(seed))).string());
        auto dim_cfg = benchmark_config(RunMode::GlobalDim, seed,
                                        (dir / ("c5_dim_" + std::to_string(seed))).string());
        dim_cfg.objective.beta = 0.02;
        auto base = run_experiment_on(base_cfg, ds);
        auto dim_run = run_experiment_on(dim_cfg, ds);
        base_rank1 += base.metrics.rank_k.at(1) / 5.0;
        dim_rank1 += dim_run.metrics.rank_k.at(1) / 5.0;
        base_jsd += base.eval_jsd / 5.0;
        dim_jsd += dim_run.eval_jsd / 5.0;
    }
    const double secs = seconds_since(t0);
    const bool pass =
        dim_rank1 >= base_rank1 - 0.005 && dim_jsd > base_jsd && secs < 600.0;
    report(5, "global info-max directional claim", pass,
           "rank1 " + fmt(dim_rank1) + " vs baseline " + fmt(base_rank1) +
               " (- 0.5pt allowed), eval jsd " + fmt(dim_jsd) + " > " + fmt(base_jsd) +
               ", " + fmt(secs) + "s < 600s");
}

// ---- criterion 6: local structure -------------------------------------------

void criterion_6() {
    const auto dir = work_dir();
    auto ds = synth_dataset(benchmark_config(RunMode::Baseline, 1, "").dataset);

    // (a) shared vs per-part discriminators differ by exactly (M-1)|D|
    ExperimentConfig lc = benchmark_config(RunMode::LocalDim, 1, (dir / "c6_a").string());
    lc.epochs = 1;
    lc.decay_epoch = 0;
    auto enc_cfg = lc.part_encoder_config(ds.input_dim(), ds.spec.num_identities);
    auto disc_cfg = lc.discriminator_config();
    auto tc = lc.train_config();
    tc.share_discriminators = true;
    auto shared = train_local_dim(ds, enc_cfg, disc_cfg, tc);
    tc.share_discriminators = false;
    auto solo = train_local_dim(ds, enc_cfg, disc_cfg, tc);
    std::size_t shared_total = shared.checkpoint.part_enc->param_count();
    for (auto& d : shared.checkpoint.discs) shared_total += d.param_count();
    std::size_t solo_total = solo.checkpoint.part_enc->param_count();
    for (auto& d : solo.checkpoint.discs) solo_total += d.param_count();
    const std::size_t d_size = shared.checkpoint.discs[0].param_count();
    const bool count_ok =
        solo_total - shared_total == (enc_cfg.num_parts - 1) * d_size;

    // (b) lambda = 0 bit-matches the part-encoder baseline run
    auto l0 = benchmark_config(RunMode::LocalDim, 7, (dir / "c6_l0").string());
    l0.epochs = 8;
    l0.decay_epoch = 6;
    l0.objective.lambda = 0.0;
    l0.objective.beta = 0.0;  // unused by the local objective; aligns the snapshot
    auto bl = benchmark_config(RunMode::Baseline, 7, (dir / "c6_bl").string());
    bl.arch = Arch::Part;
    bl.arch_set = true;
    bl.epochs = 8;
    bl.decay_epoch = 6;
    auto r_l0 = run_experiment_on(l0, ds);
    auto r_bl = run_experiment_on(bl, ds);
    const bool bitmatch = read_file(dir / "c6_l0" / "metrics.csv") ==
                              read_file(dir / "c6_bl" / "metrics.csv") &&
                          read_file(dir / "c6_l0" / "final.ckpt") ==
                              read_file(dir / "c6_bl" / "final.ckpt");

    // (c) constant feature map + tied heads: per-part losses equal to 1e-12
    PartEncoderConfig pc;
    pc.d_in = 8;
    pc.backbone_hidden = {};
    pc.map_positions = 12;
    pc.map_channels = 4;
    pc.num_parts = 6;
    pc.d_z = 6;
    pc.num_classes = 5;
    auto enc = PartEncoder::init(pc, std::uint64_t{41});
    auto& lin = enc.backbone[0];
    const std::size_t pc_cols = pc.map_positions * pc.map_channels;
    for (std::size_t in = 0; in < pc.d_in; ++in) {
        for (std::size_t p = 1; p < pc.map_positions; ++p) {
            for (std::size_t c = 0; c < pc.map_channels; ++c) {
                lin.weight->data[in * pc_cols + p * pc.map_channels + c] =
                    lin.weight->data[in * pc_cols + c];
            }
        }
    }
    for (std::size_t m = 1; m < enc.heads.size(); ++m) {
        enc.heads[m].fc1.weight->data = enc.heads[0].fc1.weight->data;
        enc.heads[m].fc1.bias->data = enc.heads[0].fc1.bias->data;
        enc.heads[m].fc2.weight->data = enc.heads[0].fc2.weight->data;
        enc.heads[m].fc2.bias->data = enc.heads[0].fc2.bias->data;
    }
    auto disc = DimDiscriminator::init({pc.map_channels + pc.d_z, 16, 16, 8},
                                       std::uint64_t{42});
    Rng data_rng(43), fwd(44);
    auto x = randn({6, pc.d_in}, data_rng);
    auto out = enc.encode(x, Mode::Eval, fwd);
    double lo = 1e300, hi = -1e300;
    for (std::size_t m = 0; m < pc.num_parts; ++m) {
        const double v =
            dim_loss(disc, pair_shifted(out.u, out.z[m], 2), 1.0)->value();
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const bool symmetric = hi - lo <= 1e-12;

    report(6, "local structure", count_ok && bitmatch && symmetric,
           std::string("param-count delta ") + (count_ok ? "exact" : "WRONG") +
               ", lambda=0 bit-match " + (bitmatch ? "yes" : "NO") +
               ", per-part loss spread " + fmt(hi - lo) + " <= 1e-12");
}

// ---- criterion 7: transfer directional claim --------------------------------

void criterion_7() {
    const auto t0 = std::chrono::steady_clock::now();

    DatasetSpec source_spec = benchmark_config(RunMode::Baseline, 1, "").dataset;
    source_spec.seed = 11;
    DatasetSpec target_spec = source_spec;
    target_spec.seed = 12;
    target_spec.domain_shift = DomainShift{30.0, 0.5, 1.2};
    auto source_ds = synth_dataset(source_spec);
    auto target_ds = synth_dataset(target_spec);
    auto target_train = UnlabeledSet::from(target_ds.train);
    UnlabeledSet target_eval;
    for (const auto& s : target_ds.query) target_eval.features.push_back(s.features);
    for (const auto& s : target_ds.gallery) target_eval.features.push_back(s.features);

    auto target_metrics = [&](Checkpoint& ck) {
        RetrievalSet q, g;
        for (const auto& s : target_ds.query) {
            q.ids.push_back(s.identity);
            q.cams.push_back(s.camera);
        }
        for (const auto& s : target_ds.gallery) {
            g.ids.push_back(s.identity);
            g.cams.push_back(s.camera);
        }
        std::vector<std::vector<double>> qr, gr;
        for (const auto& s : target_ds.query) qr.push_back(s.features);
        for (const auto& s : target_ds.gallery) gr.push_back(s.features);
        q.embeddings = ck.embed(qr);
        g.embeddings = ck.embed(gr);
        return cmc_map(q, g);
    };

    double dt_rank1 = 0, tf_rank1 = 0;
    int jsd_up = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        // step 1: supervised part-based training on the labeled source
        ExperimentConfig sc = benchmark_config(RunMode::LocalDim, seed, "");
        PartEncoderConfig pec =
            sc.part_encoder_config(source_ds.input_dim(), source_ds.spec.num_identities);
        TrainConfig stc = sc.train_config();
        stc.base_lr = 0.02;
        auto source = train_local_dim(source_ds, pec, sc.discriminator_config(), stc);

        // direct transfer: the source encoder evaluated on the target as-is
        auto dt = target_metrics(source.checkpoint);
        dt_rank1 += dt.rank_k.at(1) / 5.0;

        // steps 2 and 3: re-initialized discriminator, label-free finetuning
        TrainConfig ftc = stc;
        ftc.base_lr = 0.00005;
        ftc.seed = seed + 100;
        auto tf = tf_dim(source.checkpoint, target_train, target_eval, ftc);
        auto tfm = target_metrics(tf.checkpoint);
        tf_rank1 += tfm.rank_k.at(1) / 5.0;
        if (tf.jsd_target_post > tf.jsd_target_pre) ++jsd_up;
    }
    const double secs = seconds_since(t0);
    const bool pass = tf_rank1 >= dt_rank1 - 0.005 && jsd_up >= 4 && secs < 600.0;
    report(7, "transfer directional claim", pass,
           "target rank1 " + fmt(tf_rank1) + " vs direct " + fmt(dt_rank1) +
               " (- 0.5pt allowed), jsd rose in " + std::to_string(jsd_up) +
               "/5 seeds (need >= 4), " + fmt(secs) + "s < 600s");
}

// ---- criterion 8: metric correctness ----------------------------------------

struct BruteResult {
    double rank1, mAP;
    std::size_t evaluated, skipped;
};

BruteResult brute_cmc_map(const RetrievalSet& query, const RetrievalSet& gallery) {
    auto norm = [](std::vector<double> v) {
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n > 0)
            for (double& x : v) x /= n;
        return v;
    };
    double r1 = 0, map_sum = 0;
    std::size_t evaluated = 0, skipped = 0;
    for (std::size_t qi = 0; qi < query.size(); ++qi) {
        const auto qe = norm(query.embeddings[qi]);
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
            if (gallery.ids[gi] == query.ids[qi] && gallery.cams[gi] == query.cams[qi])
                continue;
            const auto ge = norm(gallery.embeddings[gi]);
            double d = 0;
            for (std::size_t k = 0; k < qe.size(); ++k)
                d += (qe[k] - ge[k]) * (qe[k] - ge[k]);
            std::pair<double, std::size_t> item{std::sqrt(d), gi};
            auto it = ranked.begin();
            while (it != ranked.end() && it->first <= item.first) ++it;
            ranked.insert(it, item);
        }
        std::size_t relevant = 0;
        for (const auto& [d, gi] : ranked)
            if (gallery.ids[gi] == query.ids[qi]) ++relevant;
        if (relevant == 0) {
            ++skipped;
            continue;
        }
        ++evaluated;
        std::size_t hits = 0, first = ranked.size();
        double ap = 0;
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            if (gallery.ids[ranked[r].second] == query.ids[qi]) {
                ++hits;
                ap += double(hits) / double(r + 1);
                if (first == ranked.size()) first = r;
            }
        }
        map_sum += ap / double(relevant);
        if (first < 1) r1 += 1;
    }
    if (evaluated == 0) return {0, 0, 0, skipped};
    return {r1 / evaluated, map_sum / evaluated, evaluated, skipped};
}

void criterion_8() {
    // hand case: perfect single query
    RetrievalSet q{{{1.0, 0.0}}, {0}, {0}};
    RetrievalSet g{{{1.0, 0.1}, {0.0, 1.0}}, {0, 1}, {1, 0}};
    auto perfect = cmc_map(q, g);
    const bool hand1 = perfect.rank_k.at(1) == 1.0 && perfect.mAP == 1.0;

    // hand case: relevant at ranks 1 and 3, AP = 5/6
    RetrievalSet g2{{{1.0, 0.0}, {0.9, 0.5}, {0.5, 0.9}}, {0, 1, 0}, {1, 1, 1}};
    const bool hand2 = std::abs(cmc_map(q, g2).mAP - 5.0 / 6.0) < 1e-12;

    // 100 random instances against the independent implementation
    Rng rng(55);
    bool all_exact = true;
    for (int t = 0; t < 100 && all_exact; ++t) {
        RetrievalSet rq, rg;
        const std::size_t nq = 1 + rng.uniform_int(6);
        const std::size_t ng = 2 + rng.uniform_int(19);
        for (std::size_t i = 0; i < nq; ++i) {
            rq.embeddings.push_back({rng.normal(), rng.normal(), rng.normal()});
            rq.ids.push_back(static_cast<int>(rng.uniform_int(5)));
            rq.cams.push_back(static_cast<int>(rng.uniform_int(3)));
        }
        for (std::size_t i = 0; i < ng; ++i) {
            rg.embeddings.push_back({rng.normal(), rng.normal(), rng.normal()});
            rg.ids.push_back(static_cast<int>(rng.uniform_int(5)));
            rg.cams.push_back(static_cast<int>(rng.uniform_int(3)));
        }
        auto lib = cmc_map(rq, rg);
        auto oracle = brute_cmc_map(rq, rg);
        all_exact = lib.num_queries == oracle.evaluated &&
                    lib.num_skipped == oracle.skipped && lib.mAP == oracle.mAP &&
                    lib.rank_k.at(1) == oracle.rank1;
    }
    report(8, "retrieval metric correctness", hand1 && hand2 && all_exact,
           std::string("hand cases ") + (hand1 && hand2 ? "exact" : "WRONG") +
               ", 100 random instances " + (all_exact ? "exact" : "MISMATCH"));
}

// ---- criterion 9: determinism and persistence --------------------------------

void criterion_9() {
    const auto dir = work_dir();
    auto cfg_a = benchmark_config(RunMode::GlobalDim, 3, (dir / "c9_a").string());
    cfg_a.epochs = 6;
    cfg_a.decay_epoch = 4;
    auto cfg_b = cfg_a;
    cfg_b.output_dir = (dir / "c9_b").string();
    auto ds = resolve_dataset(cfg_a);
    run_experiment_on(cfg_a, ds);
    run_experiment_on(cfg_b, ds);
    const bool metrics_same = read_file(dir / "c9_a" / "metrics.csv") ==
                              read_file(dir / "c9_b" / "metrics.csv");
    const bool ckpt_same =
        read_file(dir / "c9_a" / "final.ckpt") == read_file(dir / "c9_b" / "final.ckpt");

    // save -> load -> save byte identity
    auto loaded = load_checkpoint((dir / "c9_a" / "final.ckpt").string());
    save_checkpoint(loaded, (dir / "c9_roundtrip.ckpt").string());
    const bool roundtrip = read_file(dir / "c9_a" / "final.ckpt") ==
                           read_file(dir / "c9_roundtrip.ckpt");

    // resume from a mid-run checkpoint matches uninterrupted training bitwise
    auto enc_cfg = cfg_a.global_encoder_config(ds.input_dim(), ds.spec.num_identities);
    auto disc_cfg = cfg_a.discriminator_config();
    auto tc = cfg_a.train_config();
    auto full = train_global_dim(ds, enc_cfg, disc_cfg, tc);
    auto tc_half = tc;
    tc_half.stop_epoch = 3;
    auto half = train_global_dim(ds, enc_cfg, disc_cfg, tc_half);
    save_checkpoint(half.checkpoint, (dir / "c9_half.ckpt").string());
    auto mid = load_checkpoint((dir / "c9_half.ckpt").string());
    auto rest = train_global_dim(ds, enc_cfg, disc_cfg, tc, &mid);
    bool resume_ok =
        checkpoint_param_hash(rest.checkpoint) == checkpoint_param_hash(full.checkpoint);
    TrainHistory stitched = half.history;
    stitched.insert(stitched.end(), rest.history.begin(), rest.history.end());
    resume_ok = resume_ok && history_csv(stitched) == history_csv(full.history);

    report(9, "determinism and persistence", metrics_same && ckpt_same && roundtrip &&
                                                 resume_ok,
           std::string("rerun metrics ") + (metrics_same ? "identical" : "DIFFER") +
               ", rerun checkpoint " + (ckpt_same ? "identical" : "DIFFER") +
               ", save/load/save " + (roundtrip ? "identical" : "DIFFER") + ", resume " +
               (resume_ok ? "bitwise" : "DIVERGED"));
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        criterion_1();
        criterion_2();
        criterion_3();
        criterion_4();
        criterion_5();
        criterion_6();
        criterion_7();
        criterion_8();
        criterion_9();
    } catch (const std::exception& e) {
        std::printf("[FAIL] acceptance aborted: %s\n", e.what());
        return 99;
    }
    std::printf("acceptance: %d/9 criteria passed in %.1fs\n", 9 - g_failures,
                seconds_since(t0));
    return g_failures;
}
