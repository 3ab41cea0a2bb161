#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dim/error.hpp"
#include "dim/rng.hpp"

namespace dim {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);  // empty product = 1 (scalar)
std::string shape_str(const Shape& shape);

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major 64-bit tensor and reverse-mode graph node in one. Nodes
// created by operations hold their inputs in `parents` plus a local backward
// rule; creation order is topological, so the chain of recorded operations
// is the tape. Leaves have no parents. `grad` stays absent until a backward
// pass reaches the node — a detached leaf keeps no gradient rather than a
// silent zero fill.
struct Tensor : std::enable_shared_from_this<Tensor> {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;
    const char* op = "leaf";

    Tensor(std::vector<double> d, Shape s, bool rg);
    Tensor(const Tensor&) = delete;
    Tensor& operator=(const Tensor&) = delete;

    std::size_t numel() const { return data.size(); }
    // Scalar value; throws unless numel() == 1.
    double value() const;

    void accum_grad(const std::vector<double>& g);
};

TensorPtr tensor(std::vector<double> data, Shape shape, bool requires_grad = false);
TensorPtr scalar(double v, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double v, bool requires_grad = false);
// Entries iid normal(0, std). Deterministic given the generator state.
TensorPtr randn(Shape shape, Rng& rng, double std_dev = 1.0, bool requires_grad = false);
// Stacks equal-length rows into an [N x d] tensor.
TensorPtr from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

// Runs one reverse pass from a scalar loss. Gradients of every reachable
// requires_grad node are reset first, so repeated calls from the same graph
// state produce identical results. A constant loss (requires_grad false) is
// a no-op. Non-scalar loss throws.
void backward(const TensorPtr& loss);

// ---- differentiable operations ------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
// Elementwise a*x + b.
TensorPtr affine(const TensorPtr& x, double a, double b);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
// [N x F] + [F], broadcast over rows.
TensorPtr add_bias(const TensorPtr& x, const TensorPtr& b);

TensorPtr relu(const TensorPtr& x);
TensorPtr leaky_relu(const TensorPtr& x, double negative_slope = 0.01);
TensorPtr sigmoid(const TensorPtr& x);
TensorPtr log(const TensorPtr& x);  // requires strictly positive entries
TensorPtr exp(const TensorPtr& x);
// Pass-through gradient strictly inside [lo, hi], zero at and beyond the bounds.
TensorPtr clamp(const TensorPtr& x, double lo, double hi);
// Identity forward, negated gradient.
TensorPtr grad_reverse(const TensorPtr& x);

enum class ElementwiseKind { Relu, LeakyRelu, Sigmoid, Log, Exp };
TensorPtr elementwise(ElementwiseKind kind, const TensorPtr& x);

TensorPtr concat(const TensorPtr& a, const TensorPtr& b, std::size_t axis);
// Rows of x selected by index; backward scatter-adds.
TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::size_t>& idx);
// [N x P x C] -> [N x len x C], positions [start, start+len).
TensorPtr slice_positions(const TensorPtr& x, std::size_t start, std::size_t len);

// Mean over one axis (result drops that axis) or over all entries (scalar).
TensorPtr reduce_mean(const TensorPtr& x, std::optional<std::size_t> axis = std::nullopt);
TensorPtr reduce_sum(const TensorPtr& x);
TensorPtr reshape(const TensorPtr& x, Shape new_shape);

enum class Mode { Train, Eval };

// Train mode zeroes entries with probability `rate` and rescales survivors
// by 1/(1-rate); eval mode is the identity. rate must be in [0, 1).
TensorPtr dropout(const TensorPtr& x, double rate, Mode mode, Rng& rng);

struct BatchNormState {
    TensorPtr gamma;
    TensorPtr beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormState init(std::size_t features);
};

// Per-feature normalization of [N x F]. Train mode uses batch statistics
// (N >= 2 required) and folds them into the running estimates with
// running <- (1-momentum)*running + momentum*batch; eval mode uses the
// running estimates and accepts any batch size.
TensorPtr batchnorm(const TensorPtr& x, BatchNormState& state, Mode mode);

// ---- optimizer ------------------------------------------------------------

struct SgdState {
    double base_lr = 0.3;
    double decay_factor = 10.0;
    std::size_t decay_epoch = 40;
    std::size_t current_epoch = 0;

    double effective_lr() const {
        return current_epoch < decay_epoch ? base_lr : base_lr / decay_factor;
    }
};

// p <- p - lr * grad for every parameter. All parameters must carry a
// gradient of matching shape. Plain SGD: no momentum, no weight decay.
void sgd_step(const std::vector<TensorPtr>& params, double lr);
void sgd_step(const std::vector<TensorPtr>& params, const SgdState& state);

// Parameters that received a gradient in the last backward pass.
std::vector<TensorPtr> with_grads(const std::vector<TensorPtr>& params);

}  // namespace dim
