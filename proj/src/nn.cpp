#include "dim/nn.hpp"

#include <cmath>

namespace dim {

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) {
        throw ConfigError("linear: layer dims must be positive, got " +
                          std::to_string(in) + " -> " + std::to_string(out));
    }
    Linear l;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    l.weight = randn({in, out}, rng, std_dev, true);
    l.bias = zeros({out}, true);
    return l;
}

TensorPtr Linear::forward(const TensorPtr& x) const {
    return add_bias(matmul(x, weight), bias);
}

std::size_t Linear::param_count() const {
    return weight->numel() + bias->numel();
}

ClassifierHead ClassifierHead::init(std::size_t in, std::size_t embed,
                                    std::size_t num_classes, double dropout_rate,
                                    double leaky_slope, Rng& rng) {
    ClassifierHead h;
    h.fc1 = Linear::init(in, embed, rng);
    h.bn = BatchNormState::init(embed);
    h.fc2 = Linear::init(embed, num_classes, rng);
    h.dropout_rate = dropout_rate;
    h.leaky_slope = leaky_slope;
    return h;
}

ClassifierHead::Out ClassifierHead::forward(const TensorPtr& x, Mode mode, Rng& rng) {
    auto h = fc1.forward(x);
    h = batchnorm(h, bn, mode);
    h = leaky_relu(h, leaky_slope);
    auto z = dropout(h, dropout_rate, mode, rng);
    return {z, fc2.forward(z)};
}

void ClassifierHead::collect_params(std::vector<TensorPtr>& out) const {
    out.push_back(fc1.weight);
    out.push_back(fc1.bias);
    out.push_back(bn.gamma);
    out.push_back(bn.beta);
    out.push_back(fc2.weight);
    out.push_back(fc2.bias);
}

void ClassifierHead::collect_blocks(const std::string& prefix, std::vector<StateBlock>& out) {
    out.push_back({prefix + ".fc1.weight", fc1.weight->shape, &fc1.weight->data});
    out.push_back({prefix + ".fc1.bias", fc1.bias->shape, &fc1.bias->data});
    out.push_back({prefix + ".bn.gamma", bn.gamma->shape, &bn.gamma->data});
    out.push_back({prefix + ".bn.beta", bn.beta->shape, &bn.beta->data});
    out.push_back({prefix + ".bn.running_mean", {bn.running_mean.size()}, &bn.running_mean});
    out.push_back({prefix + ".bn.running_var", {bn.running_var.size()}, &bn.running_var});
    out.push_back({prefix + ".fc2.weight", fc2.weight->shape, &fc2.weight->data});
    out.push_back({prefix + ".fc2.bias", fc2.bias->shape, &fc2.bias->data});
}

std::size_t ClassifierHead::param_count() const {
    return fc1.param_count() + bn.gamma->numel() + bn.beta->numel() + fc2.param_count();
}

void GlobalEncoderConfig::validate() const {
    if (d_in == 0 || d_u == 0 || d_z == 0 || num_classes == 0) {
        throw ConfigError("global encoder: all dims must be positive");
    }
    for (auto h : backbone_hidden) {
        if (h == 0) throw ConfigError("global encoder: backbone hidden dim must be positive");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("global encoder: dropout rate must be in [0, 1)");
    }
}

namespace {

std::vector<Linear> init_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                             std::size_t out, Rng& rng) {
    std::vector<Linear> layers;
    std::size_t prev = in;
    for (auto h : hidden) {
        layers.push_back(Linear::init(prev, h, rng));
        prev = h;
    }
    layers.push_back(Linear::init(prev, out, rng));
    return layers;
}

TensorPtr run_mlp_relu(const std::vector<Linear>& layers, const TensorPtr& x) {
    auto h = x;
    for (const auto& l : layers) h = relu(l.forward(h));
    return h;
}

}  // namespace

GlobalEncoder GlobalEncoder::init(const GlobalEncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    GlobalEncoder enc;
    enc.cfg = cfg;
    enc.backbone = init_mlp(cfg.d_in, cfg.backbone_hidden, cfg.d_u, rng);
    enc.head = ClassifierHead::init(cfg.d_u, cfg.d_z, cfg.num_classes,
                                    cfg.dropout_rate, cfg.leaky_slope, rng);
    return enc;
}

GlobalEncoder GlobalEncoder::init(const GlobalEncoderConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return init(cfg, rng);
}

GlobalOut GlobalEncoder::encode(const TensorPtr& x, Mode mode, Rng& rng) {
    if (x->shape.size() != 2 || x->shape[1] != cfg.d_in) {
        throw ShapeError("encode: expected [Nx" + std::to_string(cfg.d_in) +
                         "] input, got " + shape_str(x->shape));
    }
    auto u = run_mlp_relu(backbone, x);
    auto [z, logits] = head.forward(u, mode, rng);
    return {u, z, logits};
}

std::vector<TensorPtr> GlobalEncoder::parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& l : backbone) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    head.collect_params(out);
    return out;
}

std::vector<StateBlock> GlobalEncoder::state_blocks() {
    std::vector<StateBlock> out;
    for (std::size_t i = 0; i < backbone.size(); ++i) {
        out.push_back({"backbone." + std::to_string(i) + ".weight",
                       backbone[i].weight->shape, &backbone[i].weight->data});
        out.push_back({"backbone." + std::to_string(i) + ".bias",
                       backbone[i].bias->shape, &backbone[i].bias->data});
    }
    head.collect_blocks("head", out);
    return out;
}

std::size_t GlobalEncoder::param_count() const {
    std::size_t n = 0;
    for (const auto& l : backbone) n += l.param_count();
    return n + head.param_count();
}

void PartEncoderConfig::validate() const {
    if (d_in == 0 || map_positions == 0 || map_channels == 0 || d_z == 0 ||
        num_classes == 0 || num_parts == 0) {
        throw ConfigError("part encoder: all dims must be positive");
    }
    if (map_positions % num_parts != 0) {
        throw ConfigError("part encoder: map_positions " + std::to_string(map_positions) +
                          " not divisible by num_parts " + std::to_string(num_parts));
    }
    for (auto h : backbone_hidden) {
        if (h == 0) throw ConfigError("part encoder: backbone hidden dim must be positive");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("part encoder: dropout rate must be in [0, 1)");
    }
}

PartEncoder PartEncoder::init(const PartEncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    PartEncoder enc;
    enc.cfg = cfg;
    enc.backbone = init_mlp(cfg.d_in, cfg.backbone_hidden,
                            cfg.map_positions * cfg.map_channels, rng);
    enc.heads.reserve(cfg.num_parts);
    for (std::size_t m = 0; m < cfg.num_parts; ++m) {
        enc.heads.push_back(ClassifierHead::init(cfg.map_channels, cfg.d_z,
                                                 cfg.num_classes, cfg.dropout_rate,
                                                 cfg.leaky_slope, rng));
    }
    return enc;
}

PartEncoder PartEncoder::init(const PartEncoderConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return init(cfg, rng);
}

PartsOut PartEncoder::encode(const TensorPtr& x, Mode mode, Rng& rng) {
    if (x->shape.size() != 2 || x->shape[1] != cfg.d_in) {
        throw ShapeError("encode: expected [Nx" + std::to_string(cfg.d_in) +
                         "] input, got " + shape_str(x->shape));
    }
    const std::size_t n = x->shape[0];
    auto flat = run_mlp_relu(backbone, x);
    auto map = reshape(flat, {n, cfg.map_positions, cfg.map_channels});

    PartsOut out;
    out.u = reduce_mean(map, 1);
    const std::size_t stripe = cfg.map_positions / cfg.num_parts;
    out.z.reserve(cfg.num_parts);
    out.logits.reserve(cfg.num_parts);
    for (std::size_t m = 0; m < cfg.num_parts; ++m) {
        auto pooled = reduce_mean(slice_positions(map, m * stripe, stripe), 1);
        auto [z, logits] = heads[m].forward(pooled, mode, rng);
        out.z.push_back(z);
        out.logits.push_back(logits);
    }
    return out;
}

std::vector<TensorPtr> PartEncoder::parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& l : backbone) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    for (const auto& h : heads) h.collect_params(out);
    return out;
}

std::vector<StateBlock> PartEncoder::state_blocks() {
    std::vector<StateBlock> out;
    for (std::size_t i = 0; i < backbone.size(); ++i) {
        out.push_back({"backbone." + std::to_string(i) + ".weight",
                       backbone[i].weight->shape, &backbone[i].weight->data});
        out.push_back({"backbone." + std::to_string(i) + ".bias",
                       backbone[i].bias->shape, &backbone[i].bias->data});
    }
    for (std::size_t m = 0; m < heads.size(); ++m) {
        heads[m].collect_blocks("head." + std::to_string(m), out);
    }
    return out;
}

std::size_t PartEncoder::param_count() const {
    std::size_t n = 0;
    for (const auto& l : backbone) n += l.param_count();
    for (const auto& h : heads) n += h.param_count();
    return n;
}

void DiscriminatorConfig::validate() const {
    if (input_dim == 0 || h1 == 0 || h2 == 0 || h3 == 0) {
        throw ConfigError("discriminator: all dims must be positive");
    }
}

DimDiscriminator DimDiscriminator::init(const DiscriminatorConfig& cfg, Rng& rng) {
    cfg.validate();
    DimDiscriminator d;
    d.cfg = cfg;
    d.l1 = Linear::init(cfg.input_dim, cfg.h1, rng);
    d.l2 = Linear::init(cfg.h1, cfg.h2, rng);
    d.l3 = Linear::init(cfg.h2, cfg.h3, rng);
    d.l4 = Linear::init(cfg.h3, 1, rng);
    return d;
}

DimDiscriminator DimDiscriminator::init(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return init(cfg, rng);
}

TensorPtr DimDiscriminator::score(const TensorPtr& u, const TensorPtr& z) const {
    if (u->shape.size() != 2 || z->shape.size() != 2 || u->shape[0] != z->shape[0]) {
        throw ShapeError("discriminate: batch sizes disagree: " + shape_str(u->shape) +
                         " vs " + shape_str(z->shape));
    }
    auto h = concat(u, z, 1);
    if (h->shape[1] != cfg.input_dim) {
        throw ShapeError("discriminate: pair dim " + std::to_string(h->shape[1]) +
                         " does not match discriminator input dim " +
                         std::to_string(cfg.input_dim));
    }
    h = relu(l1.forward(h));
    h = relu(l2.forward(h));
    h = relu(l3.forward(h));
    return sigmoid(l4.forward(h));
}

std::vector<TensorPtr> DimDiscriminator::parameters() const {
    return {l1.weight, l1.bias, l2.weight, l2.bias,
            l3.weight, l3.bias, l4.weight, l4.bias};
}

std::vector<StateBlock> DimDiscriminator::state_blocks(const std::string& prefix) {
    std::vector<StateBlock> out;
    const Linear* layers[] = {&l1, &l2, &l3, &l4};
    for (std::size_t i = 0; i < 4; ++i) {
        auto* l = const_cast<Linear*>(layers[i]);
        out.push_back({prefix + ".l" + std::to_string(i + 1) + ".weight",
                       l->weight->shape, &l->weight->data});
        out.push_back({prefix + ".l" + std::to_string(i + 1) + ".bias",
                       l->bias->shape, &l->bias->data});
    }
    return out;
}

std::size_t DimDiscriminator::param_count() const {
    return l1.param_count() + l2.param_count() + l3.param_count() + l4.param_count();
}

}  // namespace dim
