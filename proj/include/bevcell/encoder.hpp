#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bevcell/autodiff.hpp"
#include "bevcell/point_cloud.hpp"
#include "bevcell/types.hpp"

namespace bevcell::enc {

/// Parameters of the per-point MLP with layer sizes [4, H, H, D]:
/// ReLU on the two hidden layers, linear output. Each point feeds in as
/// (x, y, z, intensity); the feature of a point depends on that point only.
struct EncoderParams {
    int hidden = 32;
    int dim = 16;
    std::vector<Matrix> weights;  // [4 x H], [H x H], [H x D]
    std::vector<Matrix> biases;   // [1 x H], [1 x H], [1 x D]

    std::size_t layer_count() const { return weights.size(); }
    /// Throws ContractError on inconsistent shapes, DataError on non-finite
    /// entries, ParameterError when dim < 2.
    void validate() const;
};

/// Xavier-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
/// Bit-deterministic in the seed.
EncoderParams init_params(std::uint64_t seed, int hidden, int dim);

/// Tape handles for one forward/backward pass over a parameter set.
struct EncoderLeaves {
    std::vector<ad::Tensor> weights;
    std::vector<ad::Tensor> biases;
};

/// Place the parameters on a tape as gradient-tracked leaves.
EncoderLeaves attach(ad::Tape& tape, const EncoderParams& params);

/// Differentiable forward pass: row i of the result is the feature of point
/// i. center_input subtracts the cloud's xyz centroid before encoding
/// (intensity untouched). Throws ContractError on an empty cloud.
ad::Tensor encode(ad::Tape& tape, const PointCloud& cloud,
                  const EncoderLeaves& leaves, bool center_input = false);

/// Plain (non-recorded) forward pass; bit-identical to encode().
Matrix forward(const EncoderParams& params, const PointCloud& cloud,
               bool center_input = false);

/// Checkpoint layout: magic "BVCK", u32 version, u32 H, u32 D, then each
/// layer's weight matrix (row-major) and bias as little-endian f64.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params);
EncoderParams load_checkpoint(const std::filesystem::path& path);

/// Stream forms of the checkpoint payload, reusable by formats that extend
/// the file with trailing sections (the trainer's optimizer state).
void write_params(std::ostream& out, const EncoderParams& params);
EncoderParams read_params(std::istream& in);

}  // namespace bevcell::enc
