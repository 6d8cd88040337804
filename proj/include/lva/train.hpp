#pragma once

#include "lva/dataset.hpp"
#include "lva/net.hpp"

#include <cstdint>
#include <set>
#include <utility>
#include <vector>

namespace lva {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    enum class Optimizer { SGD, Adam };

    double learning_rate = 1e-3;
    int epochs = 1;
    int batch_size = 1 << 30;  // clipped to N: full batch by default
    Optimizer optimizer = Optimizer::Adam;
    AdamParams adam{};
    std::uint64_t seed = 0;
    // 1-based layer indices {k+1, ..., n}, as in k-layer fixed transfer. Empty = all layers.
    std::set<std::size_t> trainable_layers;

    void validate() const;
};

struct TrainReport {
    std::vector<double> loss_history;  // mean loss over the mini-batches of each epoch
    double final_loss = 0.0;           // mean squared error on the full dataset after training
    double epsilon_trained = 0.0;      // sqrt(N * final_loss): the sum-convention error
};

/// Per-layer gradients of the mean squared error.
struct LayerGradient {
    Matrix d_weight;
    Vector d_bias;
};

/// (1/N) sum_i ||f(x_i) - y_i||^2.
double mse_loss(const Mlp& net, const PairedDataset& data);
double mse_loss(const Matrix& predictions, const Matrix& labels);

/// Analytic gradient of mse_loss with respect to every layer's parameters.
std::vector<LayerGradient> parameter_gradients(const Mlp& net, const PairedDataset& data);

std::pair<Mlp, TrainReport> pretrain(const Mlp& net, const PairedDataset& data, const TrainConfig& cfg);

/// Gradient descent restricted to a trailing block of layers {k+1, ..., n}; the
/// remaining layers are returned bit-identical.
std::pair<Mlp, TrainReport> finetune_gd(const Mlp& net, const PairedDataset& data, const TrainConfig& cfg);

}  // namespace lva
