#include "dim/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dim {

void ObjectiveConfig::validate() const {
    if (!(alpha > 0.0) && alpha != 0.0) {
        throw ConfigError("objective: alpha must be non-negative");
    }
    if (beta < 0.0) throw ConfigError("objective: beta must be non-negative");
    if (lambda < 0.0) throw ConfigError("objective: lambda must be non-negative");
}

TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int>& labels) {
    if (logits->shape.size() != 2) {
        throw ShapeError("cross_entropy: expects [NxK] logits, got " +
                         shape_str(logits->shape));
    }
    const std::size_t n = logits->shape[0], k = logits->shape[1];
    if (n == 0) throw ShapeError("cross_entropy: empty batch");
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(n));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw DomainError("cross_entropy: label " + std::to_string(y) +
                              " out of range for " + std::to_string(k) + " classes");
        }
    }
    // softmax probabilities, kept for the backward rule
    std::vector<double> probs(n * k);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits->data.data() + i * k;
        double hi = row[0];
        for (std::size_t j = 1; j < k; ++j) hi = std::max(hi, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            probs[i * k + j] = std::exp(row[j] - hi);
            sum += probs[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
        const double lse = hi + std::log(sum);
        loss += lse - row[labels[i]];
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");

    auto out = std::make_shared<Tensor>(std::vector<double>{loss}, Shape{},
                                        logits->requires_grad);
    out->op = "cross_entropy";
    if (out->requires_grad) {
        out->parents = {logits};
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [logits, wp, probs = std::move(probs), labels, n, k]() {
            const double g = (*wp.lock()->grad)[0];
            std::vector<double> gx(n * k);
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    const double onehot =
                        (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                    gx[i * k + j] = g * (probs[i * k + j] - onehot) * inv_n;
                }
            logits->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr part_cross_entropy(const std::vector<TensorPtr>& logits_list,
                             const std::vector<int>& labels) {
    if (logits_list.empty()) throw ShapeError("part_cross_entropy: no branches");
    auto total = cross_entropy(logits_list[0], labels);
    for (std::size_t m = 1; m < logits_list.size(); ++m) {
        total = add(total, cross_entropy(logits_list[m], labels));
    }
    return total;
}

std::size_t draw_shift(std::size_t n, Rng& rng) {
    if (n < 2) {
        throw DomainError("pair sampling: cannot form negative pairs from batch of " +
                          std::to_string(n));
    }
    return 1 + static_cast<std::size_t>(rng.uniform_int(n - 1));
}

PairBatch pair_shifted(const TensorPtr& u, const TensorPtr& z, std::size_t shift) {
    const std::size_t n = u->shape.at(0);
    if (z->shape.at(0) != n) {
        throw ShapeError("pair sampling: batch sizes disagree: " + shape_str(u->shape) +
                         " vs " + shape_str(z->shape));
    }
    if (n < 2 || shift == 0 || shift >= n) {
        throw DomainError("pair sampling: invalid shift " + std::to_string(shift) +
                          " for batch of " + std::to_string(n));
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = (i + shift) % n;
    return {u, z, gather_rows(u, idx), z};
}

PairBatch pair_random(const TensorPtr& u, const TensorPtr& z, Rng& rng) {
    return pair_shifted(u, z, draw_shift(u->shape.at(0), rng));
}

std::vector<std::size_t> labeled_neg_indices(const std::vector<int>& labels, Rng& rng) {
    const std::size_t n = labels.size();
    if (n < 2) {
        throw DomainError("pair sampling: cannot form negative pairs from batch of " +
                          std::to_string(n));
    }
    bool mixed = false;
    for (std::size_t i = 1; i < n && !mixed; ++i) mixed = labels[i] != labels[0];
    if (!mixed) {
        throw DomainError("pair sampling: no valid negatives, all labels identical");
    }
    std::vector<std::size_t> neg(n);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i) {
        candidates.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (labels[j] != labels[i]) candidates.push_back(j);
        neg[i] = candidates[rng.uniform_int(candidates.size())];
    }
    return neg;
}

PairBatch pair_from_indices(const TensorPtr& u, const TensorPtr& z,
                            const std::vector<std::size_t>& neg_idx) {
    if (neg_idx.size() != u->shape.at(0) || u->shape.at(0) != z->shape.at(0)) {
        throw ShapeError("pair sampling: index list does not match batch");
    }
    return {u, z, gather_rows(u, neg_idx), z};
}

PairBatch pair_labeled(const TensorPtr& u, const TensorPtr& z,
                       const std::vector<int>& labels, Rng& rng) {
    if (labels.size() != u->shape.at(0)) {
        throw ShapeError("pair sampling: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(u->shape.at(0)));
    }
    return pair_from_indices(u, z, labeled_neg_indices(labels, rng));
}

namespace {

void check_score_range(const TensorPtr& s) {
    for (double v : s->data) {
        if (!(v > 0.0 && v < 1.0)) {
            throw NumericError("dim_loss: discriminator score " + std::to_string(v) +
                               " outside (0,1) after clamping");
        }
    }
}

}  // namespace

TensorPtr dim_loss(const DimDiscriminator& d, const PairBatch& pairs, double alpha,
                   bool adversarial) {
    auto pos_u = pairs.pos_u, pos_z = pairs.pos_z;
    auto neg_u = pairs.neg_u, neg_z = pairs.neg_z;
    if (adversarial) {
        pos_u = grad_reverse(pos_u);
        pos_z = grad_reverse(pos_z);
        neg_u = grad_reverse(neg_u);
        neg_z = grad_reverse(neg_z);
    }
    auto sp = clamp(d.score(pos_u, pos_z), kScoreClamp, 1.0 - kScoreClamp);
    auto sn = clamp(d.score(neg_u, neg_z), kScoreClamp, 1.0 - kScoreClamp);
    check_score_range(sp);
    check_score_range(sn);
    auto pos_term = reduce_mean(log(sp));
    auto neg_term = reduce_mean(log(affine(sn, -1.0, 1.0)));
    return affine(add(pos_term, neg_term), -alpha, 0.0);
}

double jsd_estimate(const DimDiscriminator& d, const PairBatch& pairs) {
    auto sp = clamp(d.score(pairs.pos_u, pairs.pos_z), kScoreClamp, 1.0 - kScoreClamp);
    auto sn = clamp(d.score(pairs.neg_u, pairs.neg_z), kScoreClamp, 1.0 - kScoreClamp);
    check_score_range(sp);
    check_score_range(sn);
    double a = 0.0, b = 0.0;
    for (double v : sp->data) a += std::log(v);
    for (double v : sn->data) b += std::log(1.0 - v);
    a /= static_cast<double>(sp->numel());
    b /= static_cast<double>(sn->numel());
    return 0.5 * (a + b) + std::numbers::ln2;
}

TensorPtr global_objective(const TensorPtr& ce, const TensorPtr& dim_term, double beta) {
    return add(ce, affine(dim_term, beta, 0.0));
}

TensorPtr local_objective(const TensorPtr& pce, const std::vector<TensorPtr>& dim_terms,
                          double lambda) {
    if (dim_terms.empty()) {
        throw ShapeError("local_objective: empty per-part loss list");
    }
    auto total = dim_terms[0];
    for (std::size_t m = 1; m < dim_terms.size(); ++m) total = add(total, dim_terms[m]);
    return add(pce, affine(total, lambda, 0.0));
}

}  // namespace dim
