#include "umlab/model.hpp"

#include "umlab/rng.hpp"

#include <cmath>

namespace umlab {

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw ParameterError("unknown activation '" + name + "' (expected relu or tanh)");
}

std::string activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

void ModelSpec::validate() const {
    if (layer_dims.size() < 2) throw ParameterError("model: layer_dims needs at least 2 entries");
    for (int n : layer_dims)
        if (n < 1) throw ParameterError("model: layer sizes must be >= 1");
}

std::size_t Parameters::size() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
}

Vector Parameters::flatten() const {
    Vector flat(static_cast<Eigen::Index>(size()));
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        flat.segment(off, weights[l].size()) = weights[l].reshaped<Eigen::RowMajor>();
        off += weights[l].size();
        flat.segment(off, biases[l].size()) = biases[l];
        off += biases[l].size();
    }
    return flat;
}

void Parameters::assign(const Eigen::Ref<const Vector>& flat) {
    if (static_cast<std::size_t>(flat.size()) != size()) throw ParameterError("model: flat parameter size mismatch");
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l].reshaped<Eigen::RowMajor>() = flat.segment(off, weights[l].size());
        off += weights[l].size();
        biases[l] = flat.segment(off, biases[l].size());
        off += biases[l].size();
    }
}

Parameters Parameters::zeros_like() const {
    Parameters z;
    z.activation = activation;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        z.weights.push_back(Matrix::Zero(weights[l].rows(), weights[l].cols()));
        z.biases.push_back(Vector::Zero(biases[l].size()));
    }
    return z;
}

Parameters init(const ModelSpec& spec) {
    spec.validate();
    Parameters p;
    p.activation = spec.activation;
    Stream rng = Stream(spec.seed).substream(0x3A7);
    for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
        const int fan_in = spec.layer_dims[l];
        const int fan_out = spec.layer_dims[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (int i = 0; i < fan_in; ++i)
            for (int j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-limit, limit);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Vector::Zero(fan_out));
    }
    return p;
}

namespace {

void activate(Matrix& z, Activation a) {
    if (a == Activation::relu)
        z = z.cwiseMax(0.0);
    else
        z = z.array().tanh().matrix();
}

void check_input(const Parameters& params, const Matrix& x) {
    if (params.weights.empty()) throw ParameterError("model has no layers");
    if (x.cols() != params.weights.front().rows())
        throw ParameterError("model: input has " + std::to_string(x.cols()) + " columns, expected " +
                             std::to_string(params.weights.front().rows()));
}

}  // namespace

Matrix forward(const Parameters& params, const Matrix& x) {
    check_input(params, x);
    Matrix h = x;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        Matrix z = h * params.weights[l];
        z.rowwise() += params.biases[l].transpose();
        if (l + 1 < params.weights.size()) activate(z, params.activation);
        h = std::move(z);
    }
    return h;
}

Gradients backward(const Parameters& params, const Matrix& x, const Matrix& grad_out) {
    check_input(params, x);
    const std::size_t L = params.weights.size();
    if (grad_out.rows() != x.rows() || grad_out.cols() != params.weights.back().cols())
        throw ParameterError("model: grad_out shape does not match the forward output");

    // inputs[l] is the input of layer l; outputs of hidden layers are post-activation.
    std::vector<Matrix> inputs;
    inputs.reserve(L);
    inputs.push_back(x);
    for (std::size_t l = 0; l + 1 < L; ++l) {
        Matrix z = inputs.back() * params.weights[l];
        z.rowwise() += params.biases[l].transpose();
        activate(z, params.activation);
        inputs.push_back(std::move(z));
    }

    Gradients g;
    g.params = params.zeros_like();
    Matrix delta = grad_out;
    for (std::size_t l = L; l-- > 0;) {
        g.params.weights[l].noalias() = inputs[l].transpose() * delta;
        g.params.biases[l] = delta.colwise().sum().transpose();
        Matrix prev = delta * params.weights[l].transpose();
        if (l > 0) {
            const Matrix& a = inputs[l];
            if (params.activation == Activation::relu)
                prev = prev.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
            else
                prev = prev.cwiseProduct((1.0 - a.array().square()).matrix());
        }
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

}  // namespace umlab
