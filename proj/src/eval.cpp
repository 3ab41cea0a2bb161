#include "dim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dim/objectives.hpp"

namespace dim {

namespace {

std::vector<std::vector<double>> l2_normalize(const std::vector<std::vector<double>>& rows) {
    auto out = rows;
    for (auto& r : out) {
        double n2 = 0.0;
        for (double v : r) n2 += v * v;
        if (n2 > 0.0) {
            const double inv = 1.0 / std::sqrt(n2);
            for (auto& v : r) v *= inv;
        }
    }
    return out;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

EvalResult cmc_map(const RetrievalSet& query, const RetrievalSet& gallery) {
    if (gallery.size() == 0) throw ShapeError("cmc_map: empty gallery");
    if (query.size() == 0) throw ShapeError("cmc_map: empty query set");
    if (query.embeddings[0].size() != gallery.embeddings[0].size()) {
        throw ShapeError("cmc_map: embedding dims disagree: " +
                         std::to_string(query.embeddings[0].size()) + " vs " +
                         std::to_string(gallery.embeddings[0].size()));
    }
    const auto q_emb = l2_normalize(query.embeddings);
    const auto g_emb = l2_normalize(gallery.embeddings);

    const std::vector<int> ks = {1, 5, 10};
    std::map<int, double> hits;
    for (int k : ks) hits[k] = 0.0;
    double ap_sum = 0.0;
    std::size_t evaluated = 0, skipped = 0;

    std::vector<std::size_t> order(gallery.size());
    for (std::size_t q = 0; q < query.size(); ++q) {
        // rank the gallery minus the same-id same-camera entries
        order.clear();
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            if (gallery.ids[g] == query.ids[q] && gallery.cams[g] == query.cams[q]) continue;
            order.push_back(g);
        }
        std::vector<double> dist(gallery.size(), 0.0);
        for (auto g : order) dist[g] = sq_dist(q_emb[q], g_emb[g]);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

        std::size_t relevant = 0;
        for (auto g : order)
            if (gallery.ids[g] == query.ids[q]) ++relevant;
        if (relevant == 0) {
            ++skipped;
            continue;
        }
        ++evaluated;

        std::size_t first_hit = order.size();
        std::size_t seen_relevant = 0;
        double ap = 0.0;
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            if (gallery.ids[order[rank]] == query.ids[q]) {
                ++seen_relevant;
                ap += static_cast<double>(seen_relevant) / static_cast<double>(rank + 1);
                if (first_hit == order.size()) first_hit = rank;
            }
        }
        ap /= static_cast<double>(relevant);
        ap_sum += ap;
        for (int k : ks) {
            if (first_hit < static_cast<std::size_t>(k)) hits[k] += 1.0;
        }
    }

    EvalResult res;
    res.num_queries = evaluated;
    res.num_skipped = skipped;
    if (evaluated > 0) {
        res.mAP = ap_sum / static_cast<double>(evaluated);
        for (int k : ks) res.rank_k[k] = hits[k] / static_cast<double>(evaluated);
    } else {
        for (int k : ks) res.rank_k[k] = 0.0;
    }
    return res;
}

void DiscreteJoint::validate() const {
    if (p.empty() || p[0].empty()) throw DomainError("discrete joint: empty matrix");
    const std::size_t cols = p[0].size();
    double total = 0.0;
    for (const auto& row : p) {
        if (row.size() != cols) throw DomainError("discrete joint: ragged matrix");
        for (double v : row) {
            if (!(v >= 0.0)) throw DomainError("discrete joint: negative entry");
            total += v;
        }
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw DomainError("discrete joint: entries sum to " + std::to_string(total) +
                          ", expected 1");
    }
}

std::vector<double> DiscreteJoint::marginal_x() const {
    std::vector<double> m(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
        for (double v : p[i]) m[i] += v;
    return m;
}

std::vector<double> DiscreteJoint::marginal_z() const {
    std::vector<double> m(p[0].size(), 0.0);
    for (const auto& row : p)
        for (std::size_t j = 0; j < row.size(); ++j) m[j] += row[j];
    return m;
}

double jsd_discrete_oracle(const DiscreteJoint& joint) {
    joint.validate();
    const auto px = joint.marginal_x();
    const auto pz = joint.marginal_z();
    double jsd = 0.0;
    for (std::size_t i = 0; i < joint.p.size(); ++i) {
        for (std::size_t j = 0; j < joint.p[i].size(); ++j) {
            const double pj = joint.p[i][j];       // joint
            const double pq = px[i] * pz[j];       // product of marginals
            const double m = 0.5 * (pj + pq);
            if (pj > 0.0) jsd += 0.5 * pj * std::log(pj / m);
            if (pq > 0.0) jsd += 0.5 * pq * std::log(pq / m);
        }
    }
    return std::max(0.0, jsd);
}

double gaussian_mi_oracle(double rho) {
    if (!(std::abs(rho) < 1.0)) {
        throw DomainError("gaussian_mi_oracle: |rho| must be < 1, got " +
                          std::to_string(rho));
    }
    return -0.5 * std::log(1.0 - rho * rho);
}

double gradient_check(const std::vector<TensorPtr>& params,
                      const std::function<TensorPtr()>& loss_fn, double eps,
                      std::size_t samples, Rng& rng) {
    if (!(eps > 0.0)) throw DomainError("gradient_check: eps must be positive");

    auto loss_a = loss_fn();
    auto loss_b = loss_fn();
    if (loss_a->value() != loss_b->value()) {
        throw NumericError("gradient_check: loss is not deterministic under the frozen "
                           "generator");
    }
    for (const auto& p : params) p->grad.reset();  // stale gradients are not ours
    backward(loss_a);

    // snapshot analytic gradients (absent means zero contribution)
    std::vector<std::vector<double>> analytic(params.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        analytic[i] = params[i]->grad ? *params[i]->grad
                                      : std::vector<double>(params[i]->numel(), 0.0);
        total += params[i]->numel();
    }
    if (total == 0) return 0.0;

    double max_rel = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t flat = rng.uniform_int(total);
        std::size_t pi = 0, off = flat;
        while (off >= params[pi]->numel()) {
            off -= params[pi]->numel();
            ++pi;
        }
        auto& slot = params[pi]->data[off];
        const double saved = slot;
        slot = saved + eps;
        const double fp = loss_fn()->value();
        slot = saved - eps;
        const double fm = loss_fn()->value();
        slot = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double ana = analytic[pi][off];
        const double denom = std::max({std::abs(ana), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(numeric - ana) / denom);
    }
    return max_rel;
}

ObjectiveGradientCheck check_objective_gradients(std::uint64_t seed, std::size_t samples,
                                                 double eps) {
    const double weight = 0.5;
    ObjectiveGradientCheck result{};
    Rng data_rng(seed);

    GlobalEncoderConfig gc;
    gc.d_in = 6;
    gc.backbone_hidden = {8};
    gc.d_u = 8;
    gc.d_z = 10;
    gc.num_classes = 5;
    auto genc = GlobalEncoder::init(gc, seed + 100);
    auto gdisc = DimDiscriminator::init({gc.d_u + gc.d_z, 16, 16, 8}, seed + 200);
    auto gx = randn({4, gc.d_in}, data_rng);
    const std::vector<int> labels = {0, 1, 2, 3};
    auto gparams = genc.parameters();
    {
        auto dp = gdisc.parameters();
        gparams.insert(gparams.end(), dp.begin(), dp.end());
    }
    auto global_loss = [&]() {
        Rng frozen(seed + 300);
        auto out = genc.encode(gx, Mode::Train, frozen);
        auto ce = cross_entropy(out.logits, labels);
        auto dl = dim_loss(gdisc, pair_shifted(out.u, out.z, 1), 1.0);
        return global_objective(ce, dl, weight);
    };
    Rng gpick(seed + 400);
    result.global_error = gradient_check(gparams, global_loss, eps, samples, gpick);

    PartEncoderConfig pc;
    pc.d_in = 6;
    pc.backbone_hidden = {8};
    pc.map_positions = 6;
    pc.map_channels = 5;
    pc.num_parts = 3;
    pc.d_z = 7;
    pc.num_classes = 5;
    auto penc = PartEncoder::init(pc, seed + 500);
    auto pdisc = DimDiscriminator::init({pc.map_channels + pc.d_z, 16, 16, 8}, seed + 600);
    auto px = randn({4, pc.d_in}, data_rng);
    auto pparams = penc.parameters();
    {
        auto dp = pdisc.parameters();
        pparams.insert(pparams.end(), dp.begin(), dp.end());
    }
    auto local_loss = [&]() {
        Rng frozen(seed + 700);
        auto out = penc.encode(px, Mode::Train, frozen);
        auto pce = part_cross_entropy(out.logits, labels);
        std::vector<TensorPtr> dims;
        dims.reserve(out.z.size());
        for (std::size_t m = 0; m < out.z.size(); ++m) {
            dims.push_back(dim_loss(pdisc, pair_shifted(out.u, out.z[m], 1), 1.0));
        }
        return local_objective(pce, dims, weight);
    };
    Rng ppick(seed + 800);
    result.local_error = gradient_check(pparams, local_loss, eps, samples, ppick);
    return result;
}

JointSampler make_discrete_sampler(const DiscreteJoint& joint) {
    joint.validate();
    // flatten to a cumulative table of (x state, z state) cells
    std::vector<double> cum;
    std::vector<std::pair<double, double>> states;
    double acc = 0.0;
    for (std::size_t i = 0; i < joint.p.size(); ++i) {
        for (std::size_t j = 0; j < joint.p[i].size(); ++j) {
            acc += joint.p[i][j];
            cum.push_back(acc);
            states.emplace_back(static_cast<double>(i), static_cast<double>(j));
        }
    }
    return [cum, states](Rng& rng, std::size_t n, std::vector<double>& x,
                         std::vector<double>& z) {
        x.resize(n);
        z.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double u = rng.uniform();
            const auto it = std::lower_bound(cum.begin(), cum.end(), u);
            const std::size_t cell = std::min<std::size_t>(it - cum.begin(), cum.size() - 1);
            x[k] = states[cell].first;
            z[k] = states[cell].second;
        }
    };
}

JointSampler make_gaussian_sampler(double rho) {
    if (!(std::abs(rho) < 1.0)) {
        throw DomainError("gaussian sampler: |rho| must be < 1, got " + std::to_string(rho));
    }
    const double tail = std::sqrt(1.0 - rho * rho);
    return [rho, tail](Rng& rng, std::size_t n, std::vector<double>& x,
                       std::vector<double>& z) {
        x.resize(n);
        z.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            x[k] = rng.normal();
            z[k] = rho * x[k] + tail * rng.normal();
        }
    };
}

double ConvergenceReport::gap() const { return std::abs(final_estimate - oracle); }

ConvergenceReport estimate_convergence(const JointSampler& sampler, double oracle,
                                       const BenchConfig& cfg) {
    if (cfg.batch < 2) throw ConfigError("bench: batch must be >= 2");
    Rng rng(cfg.seed);
    Rng eval_rng = rng.split();

    auto disc = DimDiscriminator::init(cfg.disc, rng);
    auto disc_params = disc.parameters();

    std::vector<double> ex, ez;
    sampler(eval_rng, cfg.eval_pairs, ex, ez);
    auto eval_x = tensor(std::move(ex), {cfg.eval_pairs, 1});
    auto eval_z = tensor(std::move(ez), {cfg.eval_pairs, 1});
    auto eval_estimate = [&]() {
        return jsd_estimate(disc, pair_shifted(eval_x, eval_z, 1));
    };

    ConvergenceReport report;
    report.oracle = oracle;
    std::vector<double> bx, bz;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        sampler(rng, cfg.batch, bx, bz);
        auto x = tensor(bx, {cfg.batch, 1});
        auto z = tensor(bz, {cfg.batch, 1});
        auto pairs = pair_random(x, z, rng);
        auto loss = dim_loss(disc, pairs, 1.0);
        backward(loss);
        sgd_step(with_grads(disc_params), cfg.lr);
        if (cfg.record_every > 0 && (step + 1) % cfg.record_every == 0) {
            const double est = eval_estimate();
            report.trace.emplace_back(step + 1, est);
            if (est > std::numbers::ln2 + 0.01) report.diverged = true;
        }
    }
    report.final_estimate = eval_estimate();
    if (report.final_estimate > std::numbers::ln2 + 0.01) report.diverged = true;
    return report;
}

}  // namespace dim
