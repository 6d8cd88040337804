#include "lva/train.hpp"

#include "lva/errors.hpp"
#include "lva/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lva {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be > 0");
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (optimizer == Optimizer::Adam) {
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0)) {
            throw ArgumentError("invalid Adam parameters");
        }
    }
}

double mse_loss(const Matrix& predictions, const Matrix& labels) {
    if (predictions.rows() != labels.rows() || predictions.cols() != labels.cols()) {
        throw ShapeError("mse_loss: prediction and label shapes differ");
    }
    if (predictions.rows() == 0) throw ArgumentError("mse_loss: empty dataset");
    return (predictions - labels).squaredNorm() / static_cast<double>(predictions.rows());
}

double mse_loss(const Mlp& net, const PairedDataset& data) {
    if (data.size() == 0) throw ArgumentError("mse_loss: empty dataset");
    if (data.input_dim() != net.input_dim() || data.label_dim() != net.output_dim()) {
        throw ShapeError("mse_loss: dataset dimensions do not match the network");
    }
    return mse_loss(forward_batch(net, data.inputs), data.labels);
}

namespace {

// Mean-squared-error gradients of layers [first, n) for a batch whose inputs are
// already the latents entering layer `first`. Returns the batch loss.
double backprop(const std::vector<Layer>& layers, std::size_t first, const Matrix& batch_in, const Matrix& batch_labels,
                std::vector<LayerGradient>& grads) {
    const std::size_t n = layers.size();
    std::vector<Matrix> pre(n), act(n);
    const Matrix* input = &batch_in;
    for (std::size_t l = first; l < n; ++l) {
        const Layer& layer = layers[l];
        pre[l] = (*input) * layer.weight.transpose();
        pre[l].rowwise() += layer.bias.transpose();
        if (layer.activation.kind == Activation::Kind::Identity) {
            act[l] = pre[l];
        } else {
            act[l] = pre[l].unaryExpr([&layer](double v) { return layer.activation.apply(v); });
        }
        input = &act[l];
    }
    const double inv_n = 1.0 / static_cast<double>(batch_in.rows());
    Matrix residual = act[n - 1] - batch_labels;
    const double loss = residual.squaredNorm() * inv_n;
    Matrix g = (2.0 * inv_n) * residual;
    for (std::size_t l = n; l-- > first;) {
        const Layer& layer = layers[l];
        if (layer.activation.kind != Activation::Kind::Identity) {
            g.array() *= pre[l].unaryExpr([&layer](double v) { return layer.activation.derivative(v); }).array();
        }
        const Matrix& below = (l == first) ? batch_in : act[l - 1];
        grads[l].d_weight = g.transpose() * below;
        grads[l].d_bias = g.colwise().sum().transpose();
        if (l > first) g = g * layer.weight;
    }
    return loss;
}

struct AdamState {
    Matrix m_w, v_w;
    Vector m_b, v_b;
};

std::pair<Mlp, TrainReport> train_suffix(const Mlp& net, const PairedDataset& data, const TrainConfig& cfg,
                                         std::size_t first) {
    const std::size_t n = net.num_layers();
    // Frozen prefix: its output is fixed, so it is evaluated once.
    const Matrix inputs = latent_batch(net, data.inputs, first);
    std::vector<Layer> layers = net.layers();
    const Eigen::Index count = data.size();
    const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, count);

    std::vector<LayerGradient> grads(n);
    std::vector<AdamState> adam(n);
    for (std::size_t l = first; l < n; ++l) {
        adam[l].m_w = Matrix::Zero(layers[l].weight.rows(), layers[l].weight.cols());
        adam[l].v_w = adam[l].m_w;
        adam[l].m_b = Vector::Zero(layers[l].bias.size());
        adam[l].v_b = adam[l].m_b;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Matrix batch_in, batch_labels;

    TrainReport report;
    report.loss_history.reserve(static_cast<std::size_t>(cfg.epochs));
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < count) {
            // Fisher-Yates keyed by (seed, epoch).
            std::iota(order.begin(), order.end(), Eigen::Index{0});
            CounterRng rng(cfg.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch));
            for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
        }
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < count; start += batch) {
            const Eigen::Index b = std::min(batch, count - start);
            double loss;
            if (b == count && batch == count) {
                loss = backprop(layers, first, inputs, data.labels, grads);
            } else {
                batch_in.resize(b, inputs.cols());
                batch_labels.resize(b, data.labels.cols());
                for (Eigen::Index r = 0; r < b; ++r) {
                    batch_in.row(r) = inputs.row(order[static_cast<std::size_t>(start + r)]);
                    batch_labels.row(r) = data.labels.row(order[static_cast<std::size_t>(start + r)]);
                }
                loss = backprop(layers, first, batch_in, batch_labels, grads);
            }
            epoch_loss += loss * static_cast<double>(b);
            ++step;
            for (std::size_t l = first; l < n; ++l) {
                if (cfg.optimizer == TrainConfig::Optimizer::SGD) {
                    layers[l].weight -= cfg.learning_rate * grads[l].d_weight;
                    layers[l].bias -= cfg.learning_rate * grads[l].d_bias;
                    continue;
                }
                const AdamParams& p = cfg.adam;
                AdamState& s = adam[l];
                s.m_w = p.beta1 * s.m_w + (1.0 - p.beta1) * grads[l].d_weight;
                s.v_w = p.beta2 * s.v_w + (1.0 - p.beta2) * grads[l].d_weight.cwiseAbs2();
                s.m_b = p.beta1 * s.m_b + (1.0 - p.beta1) * grads[l].d_bias;
                s.v_b = p.beta2 * s.v_b + (1.0 - p.beta2) * grads[l].d_bias.cwiseAbs2();
                const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(step));
                const double lr = cfg.learning_rate;
                layers[l].weight.array() -=
                    lr * (s.m_w.array() / c1) / ((s.v_w.array() / c2).sqrt() + p.epsilon);
                layers[l].bias.array() -= lr * (s.m_b.array() / c1) / ((s.v_b.array() / c2).sqrt() + p.epsilon);
            }
        }
        epoch_loss /= static_cast<double>(count);
        if (!std::isfinite(epoch_loss)) {
            const double last = report.loss_history.empty() ? std::nan("") : report.loss_history.back();
            throw TrainingError("training diverged at epoch " + std::to_string(epoch), epoch - 1, last);
        }
        report.loss_history.push_back(epoch_loss);
    }

    Mlp trained(std::move(layers));
    report.final_loss = mse_loss(trained, data);
    if (!std::isfinite(report.final_loss)) {
        throw TrainingError("training produced a non-finite final loss", cfg.epochs - 1, report.loss_history.back());
    }
    report.epsilon_trained = std::sqrt(static_cast<double>(count) * report.final_loss);
    return {std::move(trained), std::move(report)};
}

void check_data(const Mlp& net, const PairedDataset& data) {
    data.validate();
    if (data.input_dim() != net.input_dim() || data.label_dim() != net.output_dim()) {
        throw ShapeError("training data dimensions do not match the network");
    }
}

}  // namespace

std::vector<LayerGradient> parameter_gradients(const Mlp& net, const PairedDataset& data) {
    check_data(net, data);
    std::vector<LayerGradient> grads(net.num_layers());
    backprop(net.layers(), 0, data.inputs, data.labels, grads);
    return grads;
}

std::pair<Mlp, TrainReport> pretrain(const Mlp& net, const PairedDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (!cfg.trainable_layers.empty()) throw ArgumentError("pretrain trains every layer; trainable_layers must be empty");
    check_data(net, data);
    return train_suffix(net, data, cfg, 0);
}

std::pair<Mlp, TrainReport> finetune_gd(const Mlp& net, const PairedDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    check_data(net, data);
    const std::size_t n = net.num_layers();
    if (cfg.trainable_layers.empty()) throw ArgumentError("finetune_gd: trainable_layers must be non-empty");
    // Layer indices are 1-based in the finetuning contract: {k+1, ..., n}.
    const std::size_t lowest = *cfg.trainable_layers.begin();
    const std::size_t highest = *cfg.trainable_layers.rbegin();
    if (lowest < 1 || highest != n || cfg.trainable_layers.size() != n - lowest + 1) {
        throw ArgumentError("finetune_gd: trainable layers must be a trailing block {k+1, ..., n} with 1-based indices");
    }
    return train_suffix(net, data, cfg, lowest - 1);
}

}  // namespace lva
