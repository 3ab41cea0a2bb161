#pragma once

#include <vector>

#include "dim/nn.hpp"
#include "dim/tensor.hpp"

namespace dim {

enum class Sampling { Random, Labeled };

// Which encoder output represents the input side of a pair: the backbone
// summary u (default) or the embedding z itself (the degenerate pairing,
// kept available as a switch).
enum class PairInput { Summary, Embedding };

struct ObjectiveConfig {
    double alpha = 1.0;    // fixed bound scale
    double beta = 0.02;    // info-max weight in the global objective
    double lambda = 0.01;  // info-max weight in the local objective
    Sampling sampling = Sampling::Random;
    PairInput pair_input = PairInput::Summary;
    // Off: encoder and discriminator jointly tighten the bound. On: the
    // encoder's gradients through the pair are reversed (GAN-style reading).
    bool adversarial_discriminator = false;

    void validate() const;
};

// Aligned positive pairs (joint samples) and negative pairs (product
// samples). Row i of neg_u never comes from batch index i.
struct PairBatch {
    TensorPtr pos_u, pos_z;
    TensorPtr neg_u, neg_z;
};

// Mean over the batch of -log softmax(logits)[label], natural log.
TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int>& labels);

// Sum over branches of the per-branch mean cross-entropy.
TensorPtr part_cross_entropy(const std::vector<TensorPtr>& logits_list,
                             const std::vector<int>& labels);

// Negatives pair z[i] with u[(i+s) mod N] for one uniformly drawn shift
// s in {1..N-1}: a guaranteed index mismatch; same-identity collisions are
// accepted. N >= 2 required.
PairBatch pair_random(const TensorPtr& u, const TensorPtr& z, Rng& rng);

// The deterministic core of pair_random, reusable across parts that must
// share one batch disruption.
std::size_t draw_shift(std::size_t n, Rng& rng);
PairBatch pair_shifted(const TensorPtr& u, const TensorPtr& z, std::size_t shift);

// Negatives resample each u-index uniformly among rows whose label differs
// from z's row label. Requires at least two distinct labels.
PairBatch pair_labeled(const TensorPtr& u, const TensorPtr& z,
                       const std::vector<int>& labels, Rng& rng);

// The deterministic core of pair_labeled given precomputed negative indices.
std::vector<std::size_t> labeled_neg_indices(const std::vector<int>& labels, Rng& rng);
PairBatch pair_from_indices(const TensorPtr& u, const TensorPtr& z,
                            const std::vector<std::size_t>& neg_idx);

// Scores are clamped to [kScoreClamp, 1-kScoreClamp] before the logs.
inline constexpr double kScoreClamp = 1e-7;

// -alpha * ( mean log D(pos) + mean log(1 - D(neg)) ). Non-negative for
// alpha > 0. Gradients flow to the discriminator and, through the pair
// tensors, to the encoder.
TensorPtr dim_loss(const DimDiscriminator& d, const PairBatch& pairs, double alpha,
                   bool adversarial = false);

// 0.5 * ( mean log D(pos) + mean log(1 - D(neg)) ) + ln 2: zero for an
// uninformative discriminator, ln 2 in the perfect-separation limit.
// Evaluation only; no gradients are kept.
double jsd_estimate(const DimDiscriminator& d, const PairBatch& pairs);

// ce + beta * dim
TensorPtr global_objective(const TensorPtr& ce, const TensorPtr& dim_term, double beta);

// pce + lambda * sum_m dim[m]
TensorPtr local_objective(const TensorPtr& pce, const std::vector<TensorPtr>& dim_terms,
                          double lambda);

}  // namespace dim
