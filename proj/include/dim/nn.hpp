#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dim/tensor.hpp"

namespace dim {

struct Linear {
    TensorPtr weight;  // [in x out]
    TensorPtr bias;    // [out]

    // He-style init: weights normal with std = sqrt(2/fan_in), biases zero.
    static Linear init(std::size_t in, std::size_t out, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const;
    std::size_t param_count() const;
};

// Named view of a value block for checkpointing: parameters and batchnorm
// running statistics alike. `data` points into the owning model.
struct StateBlock {
    std::string name;
    Shape shape;
    std::vector<double>* data;
};

// fc1 -> batchnorm -> leaky_relu -> dropout (the block output is the
// embedding z), then fc2 producing identity logits from z.
struct ClassifierHead {
    Linear fc1;
    BatchNormState bn;
    Linear fc2;
    double dropout_rate = 0.5;
    double leaky_slope = 0.01;

    static ClassifierHead init(std::size_t in, std::size_t embed,
                               std::size_t num_classes, double dropout_rate,
                               double leaky_slope, Rng& rng);

    struct Out {
        TensorPtr z;
        TensorPtr logits;
    };
    Out forward(const TensorPtr& x, Mode mode, Rng& rng);

    void collect_params(std::vector<TensorPtr>& out) const;
    void collect_blocks(const std::string& prefix, std::vector<StateBlock>& out);
    std::size_t param_count() const;
};

struct GlobalEncoderConfig {
    std::size_t d_in = 32;
    std::vector<std::size_t> backbone_hidden = {32};  // relu MLP ending at d_u
    std::size_t d_u = 32;
    std::size_t d_z = 64;  // 512 at full scale
    std::size_t num_classes = 50;
    double dropout_rate = 0.5;
    double leaky_slope = 0.01;

    void validate() const;
};

struct GlobalOut {
    TensorPtr u;       // backbone summary, the input-side pair representative
    TensorPtr z;       // embedding
    TensorPtr logits;  // identity logits
};

struct GlobalEncoder {
    GlobalEncoderConfig cfg;
    std::vector<Linear> backbone;
    ClassifierHead head;

    static GlobalEncoder init(const GlobalEncoderConfig& cfg, Rng& rng);
    static GlobalEncoder init(const GlobalEncoderConfig& cfg, std::uint64_t seed);

    GlobalOut encode(const TensorPtr& x, Mode mode, Rng& rng);

    std::vector<TensorPtr> parameters() const;
    std::vector<StateBlock> state_blocks();
    std::size_t param_count() const;
};

struct PartEncoderConfig {
    std::size_t d_in = 32;
    std::vector<std::size_t> backbone_hidden = {32};
    std::size_t map_positions = 12;  // P, divisible by num_parts
    std::size_t map_channels = 16;   // C; the part summary u is C-dim
    std::size_t num_parts = 6;       // M
    std::size_t d_z = 64;
    std::size_t num_classes = 50;
    double dropout_rate = 0.5;
    double leaky_slope = 0.01;

    void validate() const;
};

struct PartsOut {
    TensorPtr u;                        // whole-map average pool, [N x C]
    std::vector<TensorPtr> z;           // M part embeddings
    std::vector<TensorPtr> logits;      // M logit blocks
};

// Backbone maps d_in to a [P x C] feature map (via an MLP and reshape);
// stripe m average-pools positions [m*P/M, (m+1)*P/M) and feeds its own
// classifier head.
struct PartEncoder {
    PartEncoderConfig cfg;
    std::vector<Linear> backbone;  // last layer emits P*C
    std::vector<ClassifierHead> heads;

    static PartEncoder init(const PartEncoderConfig& cfg, Rng& rng);
    static PartEncoder init(const PartEncoderConfig& cfg, std::uint64_t seed);

    PartsOut encode(const TensorPtr& x, Mode mode, Rng& rng);

    std::vector<TensorPtr> parameters() const;
    std::vector<StateBlock> state_blocks();
    std::size_t param_count() const;
};

struct DiscriminatorConfig {
    std::size_t input_dim = 96;  // summary dim + embedding dim
    std::size_t h1 = 128;
    std::size_t h2 = 128;
    std::size_t h3 = 64;

    void validate() const;
};

// Four fully connected layers; the first three are followed by ReLU, the
// last by a sigmoid, so scores live strictly inside (0, 1). No batchnorm or
// dropout anywhere, hence no train/eval distinction.
struct DimDiscriminator {
    DiscriminatorConfig cfg;
    Linear l1, l2, l3, l4;

    static DimDiscriminator init(const DiscriminatorConfig& cfg, Rng& rng);
    static DimDiscriminator init(const DiscriminatorConfig& cfg, std::uint64_t seed);

    // One score per row of concat(u, z) along the feature axis.
    TensorPtr score(const TensorPtr& u, const TensorPtr& z) const;

    std::vector<TensorPtr> parameters() const;
    std::vector<StateBlock> state_blocks(const std::string& prefix);
    std::size_t param_count() const;
};

}  // namespace dim
