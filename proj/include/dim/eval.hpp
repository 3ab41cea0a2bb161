#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dim/nn.hpp"
#include "dim/tensor.hpp"

namespace dim {

struct EvalResult {
    std::map<int, double> rank_k;  // k in {1, 5, 10}
    double mAP = 0.0;
    std::size_t num_queries = 0;  // queries with at least one relevant entry
    std::size_t num_skipped = 0;  // queries excluded for having none
};

// Embeddings with identity and camera labels for one side of retrieval.
struct RetrievalSet {
    std::vector<std::vector<double>> embeddings;
    std::vector<int> ids;
    std::vector<int> cams;

    std::size_t size() const { return embeddings.size(); }
};

// Single-query protocol, no re-ranking: embeddings are L2-normalized, the
// gallery is ranked by ascending Euclidean distance with ties broken by
// gallery index, entries sharing both identity and camera with the query
// are excluded, and AP is the mean of precision at each relevant rank.
// Queries with no relevant entry are skipped and tallied.
EvalResult cmc_map(const RetrievalSet& query, const RetrievalSet& gallery);

// Exactly representable joint distribution over (X states x Z states).
struct DiscreteJoint {
    std::vector<std::vector<double>> p;

    void validate() const;  // entries >= 0, total within 1e-12 of 1
    std::vector<double> marginal_x() const;
    std::vector<double> marginal_z() const;
};

// Exact Jensen-Shannon divergence in nats between the joint and the product
// of its marginals, by direct summation. Always in [0, ln 2].
double jsd_discrete_oracle(const DiscreteJoint& joint);

// Exact mutual information of a standard bivariate Gaussian pair with
// correlation rho: -0.5 * ln(1 - rho^2) nats. |rho| must be < 1.
double gaussian_mi_oracle(double rho);

// Central finite differences against tape gradients on `samples` randomly
// chosen parameter entries. loss_fn must be deterministic under the frozen
// generator (checked by evaluating twice); train-mode batchnorm statistics
// may drift without affecting the comparison. Returns the max relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
double gradient_check(const std::vector<TensorPtr>& params,
                      const std::function<TensorPtr()>& loss_fn, double eps,
                      std::size_t samples, Rng& rng);

struct ObjectiveGradientCheck {
    double global_error;
    double local_error;
};

// Finite-difference validation of the two full training objectives
// (classification plus weighted info-max terms) on a 4-row batch, sampling
// `samples` parameters of each model. The info-max weight is 0.5 so the
// discriminator path stays well above the difference-quotient noise floor.
ObjectiveGradientCheck check_objective_gradients(std::uint64_t seed = 3,
                                                 std::size_t samples = 200,
                                                 double eps = 1e-5);

// Draws n joint samples into columns x and z (one value per pair side).
using JointSampler = std::function<void(Rng&, std::size_t, std::vector<double>&,
                                        std::vector<double>&)>;

JointSampler make_discrete_sampler(const DiscreteJoint& joint);
// z = rho * x + sqrt(1 - rho^2) * noise, both sides standard normal.
JointSampler make_gaussian_sampler(double rho);

struct BenchConfig {
    std::size_t steps = 2000;
    std::size_t batch = 256;
    double lr = 0.5;
    DiscriminatorConfig disc{2, 64, 64, 32};  // deliberately small, converges fast
    std::size_t eval_pairs = 16384;
    std::size_t record_every = 500;
    std::uint64_t seed = 1;
};

struct ConvergenceReport {
    double final_estimate = 0.0;
    double oracle = 0.0;
    bool diverged = false;  // any recorded estimate above ln 2 + 0.01
    std::vector<std::pair<std::size_t, double>> trace;

    double gap() const;
};

// Trains a fresh discriminator on raw (x, z) pairs from a known joint (the
// encoder is bypassed), tracking the bound estimate on a held-out set.
ConvergenceReport estimate_convergence(const JointSampler& sampler, double oracle,
                                       const BenchConfig& cfg);

}  // namespace dim
