#include "dim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dim {

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<double> d, Shape s, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (data.size() != numel_of(shape)) {
        throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ShapeError("value: tensor " + shape_str(shape) + " is not scalar");
    }
    return data[0];
}

void Tensor::accum_grad(const std::vector<double>& g) {
    if (!requires_grad) return;
    if (g.size() != data.size()) {
        throw ShapeError("accum_grad: gradient size mismatch");
    }
    if (!grad) grad.emplace(data.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
}

namespace {

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + ": non-finite value produced");
        }
    }
}

TensorPtr make_node(std::vector<double> data, Shape shape,
                    std::vector<TensorPtr> parents, const char* op) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    auto out = std::make_shared<Tensor>(std::move(data), std::move(shape), rg);
    check_finite(out->data, op);
    out->op = op;
    if (rg) out->parents = std::move(parents);
    return out;
}

const std::vector<double>& out_grad(const std::weak_ptr<Tensor>& wp) {
    auto sp = wp.lock();
    return *sp->grad;
}

}  // namespace

TensorPtr tensor(std::vector<double> data, Shape shape, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(data), std::move(shape), requires_grad);
}

TensorPtr scalar(double v, bool requires_grad) {
    return tensor({v}, {}, requires_grad);
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(numel_of(shape), 0.0);
    return tensor(std::move(d), std::move(shape), requires_grad);
}

TensorPtr full(Shape shape, double v, bool requires_grad) {
    std::vector<double> d(numel_of(shape), v);
    return tensor(std::move(d), std::move(shape), requires_grad);
}

TensorPtr randn(Shape shape, Rng& rng, double std_dev, bool requires_grad) {
    std::vector<double> d(numel_of(shape));
    for (auto& x : d) x = rng.normal() * std_dev;
    return tensor(std::move(d), std::move(shape), requires_grad);
}

TensorPtr from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    if (rows.empty()) return zeros({0, 0}, requires_grad);
    const std::size_t d = rows[0].size();
    std::vector<double> flat;
    flat.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (r.size() != d) throw ShapeError("from_rows: ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return tensor(std::move(flat), {rows.size(), d}, requires_grad);
}

void backward(const TensorPtr& loss) {
    if (loss->numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    if (!loss->requires_grad) return;  // constant loss, no leaves

    std::vector<TensorPtr> topo;
    std::unordered_set<const Tensor*> visited;
    std::function<void(const TensorPtr&)> visit = [&](const TensorPtr& t) {
        if (!visited.insert(t.get()).second) return;
        for (const auto& p : t->parents) visit(p);
        topo.push_back(t);
    };
    visit(loss);

    for (const auto& t : topo) {
        if (t->requires_grad) t->grad.emplace(t->numel(), 0.0);
    }
    (*loss->grad)[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// ---- arithmetic -----------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw ShapeError("add: shapes disagree: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    std::vector<double> d(a->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] + b->data[i];
    auto out = make_node(std::move(d), a->shape, {a, b}, "add");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [a, b, wp]() {
            const auto& g = out_grad(wp);
            a->accum_grad(g);
            b->accum_grad(g);
        };
    }
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw ShapeError("sub: shapes disagree: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    std::vector<double> d(a->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] - b->data[i];
    auto out = make_node(std::move(d), a->shape, {a, b}, "sub");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [a, b, wp]() {
            const auto& g = out_grad(wp);
            a->accum_grad(g);
            if (b->requires_grad) {
                std::vector<double> gb(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
                b->accum_grad(gb);
            }
        };
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw ShapeError("mul: shapes disagree: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    std::vector<double> d(a->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * b->data[i];
    auto out = make_node(std::move(d), a->shape, {a, b}, "mul");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [a, b, wp]() {
            const auto& g = out_grad(wp);
            if (a->requires_grad) {
                std::vector<double> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * b->data[i];
                a->accum_grad(ga);
            }
            if (b->requires_grad) {
                std::vector<double> gb(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * a->data[i];
                b->accum_grad(gb);
            }
        };
    }
    return out;
}

TensorPtr affine(const TensorPtr& x, double a, double b) {
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a * x->data[i] + b;
    auto out = make_node(std::move(d), x->shape, {x}, "affine");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, a, wp]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = a * g[i];
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2) {
        throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a->shape) +
                         " and " + shape_str(b->shape));
    }
    const std::size_t m = a->shape[0], k = a->shape[1];
    const std::size_t k2 = b->shape[0], n = b->shape[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
    }
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a->data.data() + i * k;
        double* crow = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = arow[p];
            if (aip == 0.0) continue;
            const double* brow = b->data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    auto out = make_node(std::move(c), {m, n}, {a, b}, "matmul");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [a, b, wp, m, k, n]() {
            const auto& g = out_grad(wp);
            if (a->requires_grad) {
                // dA = dC * B^T
                std::vector<double> ga(m * k, 0.0);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g.data() + i * n;
                    double* garow = ga.data() + i * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = b->data.data() + p * n;
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                        garow[p] = s;
                    }
                }
                a->accum_grad(ga);
            }
            if (b->requires_grad) {
                // dB = A^T * dC
                std::vector<double> gb(k * n, 0.0);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = a->data.data() + i * k;
                    const double* grow = g.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = arow[p];
                        if (aip == 0.0) continue;
                        double* gbrow = gb.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                    }
                }
                b->accum_grad(gb);
            }
        };
    }
    return out;
}

TensorPtr add_bias(const TensorPtr& x, const TensorPtr& b) {
    if (x->shape.size() != 2 || b->shape.size() != 1 || x->shape[1] != b->shape[0]) {
        throw ShapeError("add_bias: expects [NxF] + [F], got " + shape_str(x->shape) +
                         " and " + shape_str(b->shape));
    }
    const std::size_t n = x->shape[0], f = x->shape[1];
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) d[i * f + j] = x->data[i * f + j] + b->data[j];
    auto out = make_node(std::move(d), x->shape, {x, b}, "add_bias");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, b, wp, n, f]() {
            const auto& g = out_grad(wp);
            x->accum_grad(g);
            if (b->requires_grad) {
                std::vector<double> gb(f, 0.0);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < f; ++j) gb[j] += g[i * f + j];
                b->accum_grad(gb);
            }
        };
    }
    return out;
}

// ---- elementwise nonlinearities -------------------------------------------

namespace {

TensorPtr unary(const TensorPtr& x, const char* op, double (*fwd)(double),
                double (*dfdx)(double /*x*/, double /*y*/)) {
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = fwd(x->data[i]);
    auto out = make_node(std::move(d), x->shape, {x}, op);
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp, dfdx]() {
            auto sp = wp.lock();
            const auto& g = *sp->grad;
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] = g[i] * dfdx(x->data[i], sp->data[i]);
            x->accum_grad(gx);
        };
    }
    return out;
}

double sigmoid_scalar(double v) {
    if (v >= 0.0) {
        const double e = std::exp(-v);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

TensorPtr relu(const TensorPtr& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

TensorPtr leaky_relu(const TensorPtr& x, double negative_slope) {
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = x->data[i];
        d[i] = v > 0.0 ? v : negative_slope * v;
    }
    auto out = make_node(std::move(d), x->shape, {x}, "leaky_relu");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp, negative_slope]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] = g[i] * (x->data[i] > 0.0 ? 1.0 : negative_slope);
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr sigmoid(const TensorPtr& x) {
    return unary(
        x, "sigmoid", [](double v) { return sigmoid_scalar(v); },
        [](double, double y) { return y * (1.0 - y); });
}

TensorPtr log(const TensorPtr& x) {
    for (double v : x->data) {
        if (!(v > 0.0)) {
            throw DomainError("log: non-positive entry " + std::to_string(v));
        }
    }
    return unary(
        x, "log", [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

TensorPtr exp(const TensorPtr& x) {
    return unary(
        x, "exp", [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

TensorPtr clamp(const TensorPtr& x, double lo, double hi) {
    if (!(lo < hi)) throw DomainError("clamp: lo must be < hi");
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::clamp(x->data[i], lo, hi);
    auto out = make_node(std::move(d), x->shape, {x}, "clamp");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp, lo, hi]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = x->data[i];
                gx[i] = (v > lo && v < hi) ? g[i] : 0.0;
            }
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr grad_reverse(const TensorPtr& x) {
    auto out = make_node(x->data, x->shape, {x}, "grad_reverse");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = -g[i];
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr elementwise(ElementwiseKind kind, const TensorPtr& x) {
    switch (kind) {
        case ElementwiseKind::Relu: return relu(x);
        case ElementwiseKind::LeakyRelu: return leaky_relu(x);
        case ElementwiseKind::Sigmoid: return sigmoid(x);
        case ElementwiseKind::Log: return log(x);
        case ElementwiseKind::Exp: return exp(x);
    }
    throw DomainError("elementwise: unknown kind");
}

// ---- structural ops --------------------------------------------------------

TensorPtr concat(const TensorPtr& a, const TensorPtr& b, std::size_t axis) {
    if (a->shape.size() != b->shape.size()) {
        throw ShapeError("concat: rank mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    if (axis >= a->shape.size()) throw ShapeError("concat: axis out of range");
    for (std::size_t i = 0; i < a->shape.size(); ++i) {
        if (i != axis && a->shape[i] != b->shape[i]) {
            throw ShapeError("concat: incompatible shapes " + shape_str(a->shape) +
                             " and " + shape_str(b->shape) + " on axis " +
                             std::to_string(axis));
        }
    }
    Shape out_shape = a->shape;
    out_shape[axis] = a->shape[axis] + b->shape[axis];

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a->shape[i];
    for (std::size_t i = axis + 1; i < a->shape.size(); ++i) inner *= a->shape[i];
    const std::size_t wa = a->shape[axis] * inner, wb = b->shape[axis] * inner;

    std::vector<double> d(numel_of(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a->data.data() + o * wa, wa, d.data() + o * (wa + wb));
        std::copy_n(b->data.data() + o * wb, wb, d.data() + o * (wa + wb) + wa);
    }
    auto out = make_node(std::move(d), std::move(out_shape), {a, b}, "concat");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [a, b, wp, outer, wa, wb]() {
            const auto& g = out_grad(wp);
            if (a->requires_grad) {
                std::vector<double> ga(a->numel());
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(g.data() + o * (wa + wb), wa, ga.data() + o * wa);
                a->accum_grad(ga);
            }
            if (b->requires_grad) {
                std::vector<double> gb(b->numel());
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(g.data() + o * (wa + wb) + wa, wb, gb.data() + o * wb);
                b->accum_grad(gb);
            }
        };
    }
    return out;
}

TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::size_t>& idx) {
    if (x->shape.size() != 2) {
        throw ShapeError("gather_rows: expects rank-2 input, got " + shape_str(x->shape));
    }
    const std::size_t n = x->shape[0], f = x->shape[1];
    for (auto i : idx) {
        if (i >= n) throw ShapeError("gather_rows: index " + std::to_string(i) +
                                     " out of range for " + shape_str(x->shape));
    }
    std::vector<double> d(idx.size() * f);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(x->data.data() + idx[r] * f, f, d.data() + r * f);
    auto out = make_node(std::move(d), {idx.size(), f}, {x}, "gather_rows");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp, idx, f]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(x->numel(), 0.0);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < f; ++j) gx[idx[r] * f + j] += g[r * f + j];
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr slice_positions(const TensorPtr& x, std::size_t start, std::size_t len) {
    if (x->shape.size() != 3) {
        throw ShapeError("slice_positions: expects rank-3 input, got " + shape_str(x->shape));
    }
    const std::size_t n = x->shape[0], p = x->shape[1], c = x->shape[2];
    if (len == 0 || start + len > p) {
        throw ShapeError("slice_positions: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x->shape));
    }
    std::vector<double> d(n * len * c);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x->data.data() + (i * p + start) * c, len * c, d.data() + i * len * c);
    auto out = make_node(std::move(d), {n, len, c}, {x}, "slice_positions");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp, start, len, n, p, c]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(x->numel(), 0.0);
            for (std::size_t i = 0; i < n; ++i)
                std::copy_n(g.data() + i * len * c, len * c,
                            gx.data() + (i * p + start) * c);
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr reduce_mean(const TensorPtr& x, std::optional<std::size_t> axis) {
    if (!axis) {
        if (x->numel() == 0) throw ShapeError("reduce_mean: empty tensor");
        double s = 0.0;
        for (double v : x->data) s += v;
        const double inv = 1.0 / static_cast<double>(x->numel());
        auto out = make_node({s * inv}, {}, {x}, "reduce_mean");
        if (out->requires_grad) {
            std::weak_ptr<Tensor> wp = out;
            out->backward_fn = [x, wp, inv]() {
                const double g = out_grad(wp)[0];
                std::vector<double> gx(x->numel(), g * inv);
                x->accum_grad(gx);
            };
        }
        return out;
    }
    const std::size_t ax = *axis;
    if (ax >= x->shape.size()) {
        throw ShapeError("reduce_mean: axis " + std::to_string(ax) + " out of range for " +
                         shape_str(x->shape));
    }
    const std::size_t len = x->shape[ax];
    if (len == 0) throw ShapeError("reduce_mean: empty reduction axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= x->shape[i];
    for (std::size_t i = ax + 1; i < x->shape.size(); ++i) inner *= x->shape[i];
    Shape out_shape;
    for (std::size_t i = 0; i < x->shape.size(); ++i)
        if (i != ax) out_shape.push_back(x->shape[i]);

    const double inv = 1.0 / static_cast<double>(len);
    std::vector<double> d(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < len; ++a)
            for (std::size_t i = 0; i < inner; ++i)
                d[o * inner + i] += x->data[(o * len + a) * inner + i];
    for (auto& v : d) v *= inv;

    auto out = make_node(std::move(d), std::move(out_shape), {x}, "reduce_mean");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp, outer, len, inner, inv]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(x->numel());
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t a = 0; a < len; ++a)
                    for (std::size_t i = 0; i < inner; ++i)
                        gx[(o * len + a) * inner + i] = g[o * inner + i] * inv;
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr reduce_sum(const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    auto out = make_node({s}, {}, {x}, "reduce_sum");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp]() {
            const double g = out_grad(wp)[0];
            std::vector<double> gx(x->numel(), g);
            x->accum_grad(gx);
        };
    }
    return out;
}

TensorPtr reshape(const TensorPtr& x, Shape new_shape) {
    if (numel_of(new_shape) != x->numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " +
                         shape_str(new_shape));
    }
    auto out = make_node(x->data, std::move(new_shape), {x}, "reshape");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp]() { x->accum_grad(out_grad(wp)); };
    }
    return out;
}

// ---- regularizers ----------------------------------------------------------

TensorPtr dropout(const TensorPtr& x, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw DomainError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::Eval || rate == 0.0) {
        auto out = make_node(x->data, x->shape, {x}, "dropout");
        if (out->requires_grad) {
            std::weak_ptr<Tensor> wp = out;
            out->backward_fn = [x, wp]() { x->accum_grad(out_grad(wp)); };
        }
        return out;
    }
    const double inv_keep = 1.0 / (1.0 - rate);
    std::vector<double> mask(x->numel());
    std::vector<double> d(x->numel());
    for (std::size_t i = 0; i < d.size(); ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : inv_keep;
        d[i] = x->data[i] * mask[i];
    }
    auto out = make_node(std::move(d), x->shape, {x}, "dropout");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, wp, mask = std::move(mask)]() {
            const auto& g = out_grad(wp);
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * mask[i];
            x->accum_grad(gx);
        };
    }
    return out;
}

BatchNormState BatchNormState::init(std::size_t features) {
    BatchNormState st;
    st.gamma = full({features}, 1.0, true);
    st.beta = zeros({features}, true);
    st.running_mean.assign(features, 0.0);
    st.running_var.assign(features, 1.0);
    return st;
}

TensorPtr batchnorm(const TensorPtr& x, BatchNormState& state, Mode mode) {
    if (x->shape.size() != 2) {
        throw ShapeError("batchnorm: expects [NxF] input, got " + shape_str(x->shape));
    }
    const std::size_t n = x->shape[0], f = x->shape[1];
    if (state.gamma->shape != Shape{f}) {
        throw ShapeError("batchnorm: state sized for " + shape_str(state.gamma->shape) +
                         ", input has " + std::to_string(f) + " features");
    }
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    const bool use_batch_stats = (mode == Mode::Train);
    if (use_batch_stats) {
        if (n < 2) {
            throw NumericError("batchnorm: train mode needs batch size >= 2, got " +
                               std::to_string(n));
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) mean[j] += x->data[i * f + j];
        for (auto& v : mean) v *= inv_n;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) {
                const double c = x->data[i * f + j] - mean[j];
                var[j] += c * c;
            }
        for (auto& v : var) v *= inv_n;
        for (std::size_t j = 0; j < f; ++j) {
            state.running_mean[j] =
                (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
            state.running_var[j] =
                (1.0 - state.momentum) * state.running_var[j] + state.momentum * var[j];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<double> invstd(f);
    for (std::size_t j = 0; j < f; ++j) invstd[j] = 1.0 / std::sqrt(var[j] + state.eps);

    std::vector<double> xhat(x->numel()), d(x->numel());
    const auto& gamma = state.gamma;
    const auto& beta = state.beta;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            const std::size_t k = i * f + j;
            xhat[k] = (x->data[k] - mean[j]) * invstd[j];
            d[k] = xhat[k] * gamma->data[j] + beta->data[j];
        }
    auto out = make_node(std::move(d), x->shape, {x, gamma, beta}, "batchnorm");
    if (out->requires_grad) {
        std::weak_ptr<Tensor> wp = out;
        out->backward_fn = [x, gamma, beta, wp, xhat = std::move(xhat),
                            invstd = std::move(invstd), n, f, use_batch_stats]() {
            const auto& g = out_grad(wp);
            std::vector<double> sum_dy(f, 0.0), sum_dy_xhat(f, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < f; ++j) {
                    const std::size_t k = i * f + j;
                    sum_dy[j] += g[k];
                    sum_dy_xhat[j] += g[k] * xhat[k];
                }
            if (beta->requires_grad) beta->accum_grad(sum_dy);
            if (gamma->requires_grad) gamma->accum_grad(sum_dy_xhat);
            if (x->requires_grad) {
                std::vector<double> gx(x->numel());
                if (use_batch_stats) {
                    // dx = gamma*invstd/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
                    const double nn = static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < f; ++j) {
                            const std::size_t k = i * f + j;
                            gx[k] = gamma->data[j] * invstd[j] / nn *
                                    (nn * g[k] - sum_dy[j] - xhat[k] * sum_dy_xhat[j]);
                        }
                } else {
                    // Running statistics are constants here.
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < f; ++j) {
                            const std::size_t k = i * f + j;
                            gx[k] = gamma->data[j] * invstd[j] * g[k];
                        }
                }
                x->accum_grad(gx);
            }
        };
    }
    return out;
}

// ---- optimizer -------------------------------------------------------------

void sgd_step(const std::vector<TensorPtr>& params, double lr) {
    for (const auto& p : params) {
        if (!p->grad) {
            throw NumericError("sgd_step: parameter has no gradient");
        }
        if (p->grad->size() != p->data.size()) {
            throw ShapeError("sgd_step: gradient shape mismatch for " + shape_str(p->shape));
        }
    }
    for (const auto& p : params) {
        const auto& g = *p->grad;
        for (std::size_t i = 0; i < g.size(); ++i) p->data[i] -= lr * g[i];
    }
}

void sgd_step(const std::vector<TensorPtr>& params, const SgdState& state) {
    sgd_step(params, state.effective_lr());
}

std::vector<TensorPtr> with_grads(const std::vector<TensorPtr>& params) {
    std::vector<TensorPtr> out;
    for (const auto& p : params)
        if (p->grad) out.push_back(p);
    return out;
}

}  // namespace dim
