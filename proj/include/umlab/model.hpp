#pragma once

#include "umlab/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace umlab {

enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

/// Embedding MLP shape: layer_dims = [D, h1, ..., d]. The activation is
/// applied between layers, never after the last one.
struct ModelSpec {
    std::vector<int> layer_dims;
    Activation activation = Activation::relu;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Layer l maps row vectors x -> x * weights[l] + biases[l]^T, so
/// weights[l] is fan_in x fan_out.
struct Parameters {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Activation activation = Activation::relu;

    int num_layers() const { return static_cast<int>(weights.size()); }
    int input_dim() const { return static_cast<int>(weights.front().rows()); }
    int output_dim() const { return static_cast<int>(weights.back().cols()); }

    std::size_t size() const;
    /// Layer by layer: weight (row-major) then bias.
    Vector flatten() const;
    void assign(const Eigen::Ref<const Vector>& flat);
    /// Zero parameters with the same shapes.
    Parameters zeros_like() const;
};

/// Glorot-uniform weights, zero biases; deterministic per spec.seed.
Parameters init(const ModelSpec& spec);

Matrix forward(const Parameters& params, const Matrix& x);

struct Gradients {
    Parameters params;
    Matrix input;
};

/// Reverse-mode gradients of forward(params, x) contracted with grad_out.
Gradients backward(const Parameters& params, const Matrix& x, const Matrix& grad_out);

}  // namespace umlab
