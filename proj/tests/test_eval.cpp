#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numbers>

#include "dim/eval.hpp"
#include "dim/objectives.hpp"
#include "doctest.h"

using namespace dim;

namespace {

// Brute-force CMC/AP oracle, written directly from the definitions and
// independent of the library path: naive normalization, true (not squared)
// distances, insertion sort, direct precision sums.
struct BruteResult {
    double rank1, rank5, rank10, mAP;
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
    double r1 = 0, r5 = 0, r10 = 0, map_sum = 0;
    std::size_t evaluated = 0, skipped = 0;
    for (std::size_t q = 0; q < query.size(); ++q) {
        const auto qe = norm(query.embeddings[q]);
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            if (gallery.ids[g] == query.ids[q] && gallery.cams[g] == query.cams[q]) {
                continue;
            }
            const auto ge = norm(gallery.embeddings[g]);
            double d = 0;
            for (std::size_t k = 0; k < qe.size(); ++k) {
                d += (qe[k] - ge[k]) * (qe[k] - ge[k]);
            }
            // insertion keeps earlier gallery indices first on exact ties
            std::pair<double, std::size_t> item{std::sqrt(d), g};
            auto it = ranked.begin();
            while (it != ranked.end() && it->first <= item.first) ++it;
            ranked.insert(it, item);
        }
        std::size_t relevant = 0;
        for (const auto& [d, g] : ranked)
            if (gallery.ids[g] == query.ids[q]) ++relevant;
        if (relevant == 0) {
            ++skipped;
            continue;
        }
        ++evaluated;
        std::size_t hits = 0, first = ranked.size();
        double ap = 0;
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            if (gallery.ids[ranked[r].second] == query.ids[q]) {
                ++hits;
                ap += double(hits) / double(r + 1);
                if (first == ranked.size()) first = r;
            }
        }
        map_sum += ap / double(relevant);
        if (first < 1) r1 += 1;
        if (first < 5) r5 += 1;
        if (first < 10) r10 += 1;
    }
    if (evaluated == 0) return {0, 0, 0, 0, 0, skipped};
    return {r1 / evaluated, r5 / evaluated,      r10 / evaluated,
            map_sum / evaluated, evaluated, skipped};
}

RetrievalSet random_set(Rng& rng, std::size_t n, std::size_t ids, std::size_t cams,
                        std::size_t dim) {
    RetrievalSet s;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> e(dim);
        for (auto& v : e) v = rng.normal();
        s.embeddings.push_back(std::move(e));
        s.ids.push_back(static_cast<int>(rng.uniform_int(ids)));
        s.cams.push_back(static_cast<int>(rng.uniform_int(cams)));
    }
    return s;
}

}  // namespace

TEST_CASE("cmc_map hand cases") {
    // single query whose only relevant item ranks first
    RetrievalSet q{{{1.0, 0.0}}, {0}, {0}};
    RetrievalSet g{{{1.0, 0.1}, {0.0, 1.0}}, {0, 1}, {1, 0}};
    auto res = cmc_map(q, g);
    CHECK(res.rank_k.at(1) == 1.0);
    CHECK(res.mAP == 1.0);
    CHECK(res.num_queries == 1);

    // relevant items at ranks 1 and 3: AP = (1/1 + 2/3)/2 = 5/6
    RetrievalSet g2{{{1.0, 0.0}, {0.9, 0.5}, {0.5, 0.9}}, {0, 1, 0}, {1, 1, 1}};
    auto res2 = cmc_map(q, g2);
    CHECK(res2.mAP == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(res2.rank_k.at(1) == 1.0);
}

TEST_CASE("cmc_map exclusion and skip tally") {
    // the only same-identity entry shares the camera, so it is excluded
    RetrievalSet q{{{1.0, 0.0}, {0.0, 1.0}}, {0, 1}, {0, 0}};
    RetrievalSet g{{{1.0, 0.0}, {0.0, 1.0}}, {0, 1}, {0, 1}};
    auto res = cmc_map(q, g);
    CHECK(res.num_skipped == 1);  // query 0: its match is same-id same-cam
    CHECK(res.num_queries == 1);
    CHECK(res.rank_k.at(1) == 1.0);

    CHECK_THROWS_AS(cmc_map(q, RetrievalSet{}), ShapeError);
}

TEST_CASE("cmc_map is invariant under gallery permutation") {
    Rng rng(3);
    auto q = random_set(rng, 6, 4, 2, 5);
    auto g = random_set(rng, 15, 4, 2, 5);
    auto base = cmc_map(q, g);

    RetrievalSet shuffled;
    std::vector<std::size_t> perm(g.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    }
    for (auto p : perm) {
        shuffled.embeddings.push_back(g.embeddings[p]);
        shuffled.ids.push_back(g.ids[p]);
        shuffled.cams.push_back(g.cams[p]);
    }
    auto permuted = cmc_map(q, shuffled);
    CHECK(base.mAP == doctest::Approx(permuted.mAP).epsilon(1e-12));
    CHECK(base.rank_k.at(1) == permuted.rank_k.at(1));
    CHECK(base.rank_k.at(5) == permuted.rank_k.at(5));
}

TEST_CASE("rank at gallery size is one for every evaluated query") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        auto q = random_set(rng, 5, 3, 2, 4);
        auto g = random_set(rng, 1 + rng.uniform_int(9), 3, 2, 4);  // <= 10 items
        auto res = cmc_map(q, g);
        if (res.num_queries > 0) CHECK(res.rank_k.at(10) == 1.0);
    }
}

TEST_CASE("cmc_map agrees exactly with the brute-force oracle") {
    Rng rng(7);
    for (int t = 0; t < 100; ++t) {
        auto q = random_set(rng, 1 + rng.uniform_int(6), 5, 3, 3);
        auto g = random_set(rng, 2 + rng.uniform_int(19), 5, 3, 3);
        auto lib = cmc_map(q, g);
        auto oracle = brute_cmc_map(q, g);
        CHECK(lib.num_queries == oracle.evaluated);
        CHECK(lib.num_skipped == oracle.skipped);
        CHECK(lib.mAP == oracle.mAP);
        CHECK(lib.rank_k.at(1) == oracle.rank1);
        CHECK(lib.rank_k.at(5) == oracle.rank5);
        CHECK(lib.rank_k.at(10) == oracle.rank10);
    }
}

TEST_CASE("discrete divergence oracle") {
    DiscreteJoint independent{{{0.24, 0.36}, {0.16, 0.24}}};  // rank-1 joint
    CHECK(jsd_discrete_oracle(independent) == doctest::Approx(0.0).epsilon(1e-12));

    DiscreteJoint frozen{{{0.4, 0.1}, {0.1, 0.4}}};
    CHECK(jsd_discrete_oracle(frozen) ==
          doctest::Approx(0.050671836985565864).epsilon(1e-12));

    // bijection joints approach ln 2 as the state count (marginal entropy) grows
    auto bijection = [](std::size_t n) {
        std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) p[i][i] = 1.0 / static_cast<double>(n);
        return jsd_discrete_oracle(DiscreteJoint{p});
    };
    CHECK(bijection(8) < bijection(64));
    CHECK(bijection(64) > 0.6);
    CHECK(bijection(64) <= std::numbers::ln2);

    Rng rng(9);
    for (int t = 0; t < 50; ++t) {
        std::vector<std::vector<double>> p(3, std::vector<double>(3));
        double total = 0;
        for (auto& row : p)
            for (auto& x : row) {
                x = rng.uniform() + 1e-3;
                total += x;
            }
        for (auto& row : p)
            for (auto& x : row) x /= total;
        // renormalize to kill the rounding residue before validation
        double t2 = 0;
        for (auto& row : p)
            for (auto& x : row) t2 += x;
        p[2][2] += 1.0 - t2;
        const double jsd = jsd_discrete_oracle(DiscreteJoint{p});
        CHECK(jsd >= 0.0);
        CHECK(jsd <= std::numbers::ln2);
    }

    CHECK_THROWS_AS(jsd_discrete_oracle(DiscreteJoint{{{0.5, 0.2}}}), DomainError);
    CHECK_THROWS_AS(jsd_discrete_oracle(DiscreteJoint{{{1.5, -0.5}}}), DomainError);
}

TEST_CASE("gaussian MI oracle vs 2-D quadrature") {
    CHECK(gaussian_mi_oracle(0.0) == 0.0);
    CHECK_THROWS_AS(gaussian_mi_oracle(1.0), DomainError);
    CHECK_THROWS_AS(gaussian_mi_oracle(-1.0), DomainError);
    CHECK(gaussian_mi_oracle(0.9) ==
          doctest::Approx(-0.5 * std::log(0.19)).epsilon(1e-15));

    // Simpson quadrature of the defining double integral
    auto quad_mi = [](double rho) {
        const double lim = 8.0;
        const int n = 400;  // intervals per axis (even)
        const double h = 2 * lim / n;
        const double c = 1.0 - rho * rho;
        auto integrand = [&](double x, double z) {
            const double log_joint =
                -std::log(2 * std::numbers::pi * std::sqrt(c)) -
                (x * x - 2 * rho * x * z + z * z) / (2 * c);
            const double log_px = -0.5 * std::log(2 * std::numbers::pi) - x * x / 2;
            const double log_pz = -0.5 * std::log(2 * std::numbers::pi) - z * z / 2;
            return std::exp(log_joint) * (log_joint - log_px - log_pz);
        };
        auto w = [&](int i) { return i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0); };
        double total = 0;
        for (int i = 0; i <= n; ++i) {
            for (int j = 0; j <= n; ++j) {
                total += w(i) * w(j) * integrand(-lim + i * h, -lim + j * h);
            }
        }
        return total * h * h / 9.0;
    };
    for (double rho : {0.3, 0.6, 0.9}) {
        CHECK(std::abs(quad_mi(rho) - gaussian_mi_oracle(rho)) <= 1e-4);
    }

    // true MI ordering backs the monotonicity criterion
    CHECK(gaussian_mi_oracle(0.0) < gaussian_mi_oracle(0.3));
    CHECK(gaussian_mi_oracle(0.3) < gaussian_mi_oracle(0.6));
    CHECK(gaussian_mi_oracle(0.6) < gaussian_mi_oracle(0.9));
}

TEST_CASE("gradient_check degenerate cases") {
    auto p = tensor({1.0, 2.0, 3.0}, {3}, true);
    auto linear = [&]() { return reduce_sum(p); };
    Rng rng(11);
    CHECK(gradient_check({p}, linear, 1e-5, 10, rng) <= 1e-10);

    auto constant = [&]() { return scalar(4.0); };
    CHECK(gradient_check({p}, constant, 1e-5, 10, rng) == 0.0);

    int calls = 0;
    auto flaky = [&]() { return scalar(static_cast<double>(calls++)); };
    CHECK_THROWS_AS(gradient_check({p}, flaky, 1e-5, 10, rng), NumericError);

    CHECK_THROWS_AS(gradient_check({p}, linear, 0.0, 10, rng), DomainError);
}

TEST_CASE("full objective gradients stay within tolerance") {
    auto check = check_objective_gradients();
    CHECK(check.global_error <= 1e-4);
    CHECK(check.local_error <= 1e-4);
}

TEST_CASE("estimator converges on the discrete joint") {
    DiscreteJoint joint{{{0.4, 0.1}, {0.1, 0.4}}};
    BenchConfig cfg;
    cfg.steps = 700;
    cfg.batch = 128;
    cfg.eval_pairs = 8192;
    cfg.seed = 2;
    auto rep = estimate_convergence(make_discrete_sampler(joint),
                                    jsd_discrete_oracle(joint), cfg);
    CHECK_FALSE(rep.diverged);
    CHECK(rep.gap() <= 0.02);
    CHECK(rep.final_estimate <= std::numbers::ln2 + 0.01);
}

TEST_CASE("estimator stays near zero for an independent joint") {
    DiscreteJoint independent{{{0.24, 0.36}, {0.16, 0.24}}};
    BenchConfig cfg;
    cfg.steps = 500;
    cfg.batch = 128;
    cfg.eval_pairs = 8192;
    cfg.seed = 3;
    auto rep = estimate_convergence(make_discrete_sampler(independent), 0.0, cfg);
    CHECK(rep.final_estimate <= 0.02);
}

TEST_CASE("doubling the step budget never worsens the gap beyond noise") {
    DiscreteJoint joint{{{0.4, 0.1}, {0.1, 0.4}}};
    const double oracle = jsd_discrete_oracle(joint);
    for (std::uint64_t seed : {4, 5, 6}) {
        BenchConfig small;
        small.steps = 400;
        small.batch = 128;
        small.eval_pairs = 8192;
        small.seed = seed;
        BenchConfig big = small;
        big.steps = 800;
        auto gap_small =
            estimate_convergence(make_discrete_sampler(joint), oracle, small).gap();
        auto gap_big =
            estimate_convergence(make_discrete_sampler(joint), oracle, big).gap();
        CHECK(gap_big <= gap_small + 0.01);
    }
}

TEST_CASE("trained estimates approach the oracle from below") {
    DiscreteJoint joint{{{0.4, 0.1}, {0.1, 0.4}}};
    const double oracle = jsd_discrete_oracle(joint);
    BenchConfig cfg;
    cfg.steps = 1000;
    cfg.batch = 256;
    cfg.eval_pairs = 16384;
    cfg.seed = 8;
    auto rep = estimate_convergence(make_discrete_sampler(joint), oracle, cfg);
    CHECK(rep.final_estimate <= oracle + 0.01);
}
