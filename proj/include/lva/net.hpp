#pragma once

#include "lva/linalg.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lva {

struct Activation {
    enum class Kind { Identity, ReLU, LeakyReLU, Tanh };

    Kind kind = Kind::Identity;
    double slope = 0.0;  // LeakyReLU only, in (0, 1)

    static Activation identity() { return {Kind::Identity, 0.0}; }
    static Activation relu() { return {Kind::ReLU, 0.0}; }
    static Activation leaky_relu(double slope);
    static Activation tanh() { return {Kind::Tanh, 0.0}; }

    double apply(double v) const;
    /// Derivative at v. ReLU'(0) = 0 and LeakyReLU'(0) = slope (left derivative).
    double derivative(double v) const;
    /// Global Lipschitz constant of the scalar activation.
    double lipschitz() const;
    bool piecewise_linear() const { return kind != Kind::Tanh; }

    friend bool operator==(const Activation&, const Activation&) = default;
};

std::string to_string(Activation::Kind kind);

/// Affine map followed by an elementwise activation: z -> act(W z + b).
struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation;

    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
};

/// Feed-forward network f = f_n o ... o f_1. Immutable once constructed.
class Mlp {
public:
    explicit Mlp(std::vector<Layer> layers);

    const std::vector<Layer>& layers() const noexcept { return layers_; }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }
    std::size_t num_layers() const noexcept { return layers_.size(); }
    Eigen::Index input_dim() const { return layers_.front().in_dim(); }
    Eigen::Index output_dim() const { return layers_.back().out_dim(); }
    Eigen::Index width_after(std::size_t k) const { return k == 0 ? input_dim() : layers_[k - 1].out_dim(); }

    /// Copy with layer i replaced (shapes must match).
    Mlp with_layer(std::size_t i, Layer replacement) const;
    /// First k layers as a network (k >= 1).
    Mlp truncated(std::size_t k) const;

    friend bool operator==(const Mlp& a, const Mlp& b);

private:
    std::vector<Layer> layers_;
};

struct LipschitzProfile {
    std::vector<double> per_layer;
    std::vector<double> prefix_products;  // prefix_products[k] = prod(per_layer[0..k])
};

/// Random He-uniform initialization: hidden layers use `hidden`, the last uses `output`.
Mlp make_mlp(std::span<const Eigen::Index> dims, Activation hidden, Activation output, std::uint64_t seed);

Vector forward(const Mlp& net, const Vector& x);
/// Row-wise forward over a batch (N x d_in) -> (N x d_out).
Matrix forward_batch(const Mlp& net, const Matrix& inputs);

/// Output of the first k layers (k = 0 returns x).
Vector latent(const Mlp& net, const Vector& x, std::size_t k);
Matrix latent_batch(const Mlp& net, const Matrix& inputs, std::size_t k);

/// Jacobian of layers (k1, k2] evaluated at latent(net, x, k1).
Matrix jacobian(const Mlp& net, const Vector& x, std::size_t k1, std::size_t k2);

LipschitzProfile lipschitz_profile(const Mlp& net);
/// Lipschitz bound of the sub-network made of layers (k1, k2].
double lipschitz_bound(const Mlp& net, std::size_t k1, std::size_t k2);

std::string serialize(const Mlp& net);
Mlp deserialize(const std::string& text);

Mlp load_mlp(const std::string& path);
void save_mlp(const Mlp& net, const std::string& path);

}  // namespace lva
