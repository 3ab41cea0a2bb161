#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dim/error.hpp"
#include "dim/rng.hpp"

namespace dim {

// Whole-dataset transform used to fabricate a target domain: a Givens
// rotation over consecutive coordinate pairs plus a constant offset of
// length mean_shift; spread_scale multiplies the intra-cluster noise at
// generation time.
struct DomainShift {
    double rotation_angle_deg = 30.0;
    double mean_shift = 0.5;
    double spread_scale = 1.2;
};

struct DatasetSpec {
    std::size_t num_identities = 50;
    std::size_t samples_per_identity = 8;
    std::size_t num_cameras = 2;
    std::size_t input_dim = 32;
    double cluster_spread = 0.5;
    double camera_offset_scale = 0.3;
    std::optional<DomainShift> domain_shift;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Sample {
    std::vector<double> features;
    int identity = 0;
    int camera = 0;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<Sample> train, query, gallery;
    // Nearest-centroid train accuracy on raw inputs, recorded at generation.
    double difficulty = 0.0;
    std::string hash;  // content hash over the serialized sample rows

    std::size_t input_dim() const { return spec.input_dim; }
};

// Feature-only view for transfer finetuning. Deliberately has no label
// field: code paths built on it cannot read identities.
struct UnlabeledSet {
    std::vector<std::vector<double>> features;

    static UnlabeledSet from(const std::vector<Sample>& samples);
};

// Each identity is a Gaussian cluster; each camera adds a fixed offset drawn
// at camera_offset_scale. Per identity: the first half of the samples go to
// train; of the rest, the first sample under each camera goes to query and
// the remainder to gallery. Cameras are assigned round-robin within an
// identity. Deterministic given spec.seed.
Dataset synth_dataset(const DatasetSpec& spec);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// FNV-1a 64 over the given bytes, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

// Deterministic shortest-round-trip formatting used by every artifact writer.
std::string fmt_double(double v);

}  // namespace dim
