#include "lva/bench.hpp"
#include "lva/errors.hpp"
#include "lva/train.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace lva;
using lva::testing::max_abs;
using lva::testing::random_dataset;
using lva::testing::random_matrix;
using lva::testing::small_net;

namespace {

bool bit_equal(const Layer& a, const Layer& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           std::memcmp(a.weight.data(), b.weight.data(), sizeof(double) * static_cast<std::size_t>(a.weight.size())) == 0 &&
           std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * static_cast<std::size_t>(a.bias.size())) == 0;
}

double max_param_change(const Mlp& a, const Mlp& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.num_layers(); ++i) {
        m = std::max(m, max_abs(a.layer(i).weight - b.layer(i).weight));
        m = std::max(m, (a.layer(i).bias - b.layer(i).bias).cwiseAbs().maxCoeff());
    }
    return m;
}

}  // namespace

TEST_CASE("mse_loss: trivial cases and loop oracle") {
    CounterRng rng(41);
    const Mlp net = small_net({2, 5, 3}, 42);
    PairedDataset d = random_dataset(9, 2, 3, rng);
    d.labels = forward_batch(net, d.inputs);
    CHECK(mse_loss(net, d) == 0.0);

    const Mlp zero({Layer{Matrix::Zero(1, 2), Vector::Zero(1), Activation::identity()}});
    PairedDataset ones{random_matrix(6, 2, rng), Matrix::Ones(6, 1), "ones"};
    CHECK(mse_loss(zero, ones) == 1.0);

    const PairedDataset r = random_dataset(25, 2, 3, rng);
    double oracle = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        const Vector diff = forward(net, r.inputs.row(i).transpose()) - r.labels.row(i).transpose();
        oracle += diff.squaredNorm();
    }
    oracle /= static_cast<double>(r.size());
    CHECK(std::abs(mse_loss(net, r) - oracle) <= 1e-13 * std::max(1.0, oracle));

    PairedDataset empty{Matrix(0, 2), Matrix(0, 3), "empty"};
    CHECK_THROWS_AS(mse_loss(net, empty), ArgumentError);
}

TEST_CASE("parameter_gradients: central finite differences on a tanh net") {
    CounterRng rng(43);
    const Mlp net = small_net({3, 6, 2}, 44, Activation::tanh());
    const PairedDataset d = random_dataset(12, 3, 2, rng);
    const auto grads = parameter_gradients(net, d);
    const double h = 1e-5;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const Layer& layer = net.layer(l);
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
            for (Eigen::Index j = 0; j <= layer.weight.cols(); ++j) {
                Layer plus = layer, minus = layer;
                const bool is_bias = j == layer.weight.cols();
                double& p = is_bias ? plus.bias(i) : plus.weight(i, j);
                double& m = is_bias ? minus.bias(i) : minus.weight(i, j);
                p += h;
                m -= h;
                const double fd = (mse_loss(net.with_layer(l, plus), d) - mse_loss(net.with_layer(l, minus), d)) / (2 * h);
                const double g = is_bias ? grads[l].d_bias(i) : grads[l].d_weight(i, j);
                CHECK(std::abs(g - fd) <= 1e-5 * std::max(std::abs(fd), 1e-3));
            }
        }
    }
}

TEST_CASE("pretrain: zero-step limit") {
    CounterRng rng(45);
    const Mlp net = small_net({2, 8, 1}, 46);
    const PairedDataset d = random_dataset(20, 2, 1, rng);
    TrainConfig cfg;
    cfg.learning_rate = 1e-14;
    cfg.epochs = 1;
    const auto [trained, report] = pretrain(net, d, cfg);
    CHECK(max_param_change(net, trained) < 1e-9);
    CHECK(report.loss_history.size() == 1);
    CHECK(report.epsilon_trained == doctest::Approx(std::sqrt(20 * report.final_loss)));
}

TEST_CASE("pretrain: linear net reaches the exact linear fit") {
    CounterRng rng(47);
    PairedDataset d{random_matrix(64, 3, rng), Matrix(64, 2), "linear"};
    const Matrix w = random_matrix(2, 3, rng);
    d.labels = d.inputs * w.transpose();
    d.labels.rowwise() += Eigen::RowVector2d(0.5, -1.0);
    const Mlp net = make_mlp(std::vector<Eigen::Index>{3, 2}, Activation::identity(), Activation::identity(), 48);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 5000;
    const auto [trained, report] = pretrain(net, d, cfg);
    CHECK(report.final_loss <= 1e-6);
}

TEST_CASE("pretrain: determinism and mini-batch shuffling") {
    CounterRng rng(49);
    const Mlp net = small_net({2, 8, 8, 1}, 50);
    const PairedDataset d = random_dataset(50, 2, 1, rng);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 7;
    cfg.seed = 9;
    const auto a = pretrain(net, d, cfg);
    const auto b = pretrain(net, d, cfg);
    REQUIRE(a.second.loss_history.size() == b.second.loss_history.size());
    CHECK(std::memcmp(a.second.loss_history.data(), b.second.loss_history.data(),
                      sizeof(double) * a.second.loss_history.size()) == 0);
    CHECK(a.first == b.first);
    cfg.seed = 10;
    const auto c = pretrain(net, d, cfg);
    CHECK_FALSE(c.first == a.first);
}

TEST_CASE("pretrain: loss decreases over 50-epoch windows on the source signal") {
    const PairedDataset src = bench::gen_signal({2000, 0, bench::Domain::Source});
    const Mlp net = make_mlp(std::vector<Eigen::Index>{1, 64, 64, 1}, Activation::relu(), Activation::identity(), 0);
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch_size = 64;
    const auto [trained, report] = pretrain(net, src, cfg);
    double previous = INFINITY;
    for (std::size_t w = 0; w + 50 <= report.loss_history.size(); w += 50) {
        double mean = 0.0;
        for (std::size_t e = w; e < w + 50; ++e) mean += report.loss_history[e];
        mean /= 50.0;
        CHECK(mean <= previous);
        previous = mean;
    }
}

TEST_CASE("pretrain: divergence raises a training error") {
    CounterRng rng(51);
    const Mlp net = small_net({2, 8, 1}, 52);
    PairedDataset d = random_dataset(20, 2, 1, rng);
    d.labels *= 1e3;
    TrainConfig cfg;
    cfg.optimizer = TrainConfig::Optimizer::SGD;
    cfg.learning_rate = 1e6;
    cfg.epochs = 200;
    try {
        pretrain(net, d, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(e.last_finite_epoch() >= -1);
        if (e.last_finite_epoch() >= 0) CHECK(std::isfinite(e.last_finite_loss()));
    }
}

TEST_CASE("finetune_gd: frozen layers are bit-identical") {
    CounterRng rng(53);
    const Mlp net = small_net({2, 6, 5, 4, 1}, 54);
    const PairedDataset d = random_dataset(30, 2, 1, rng);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 8;
    for (std::set<std::size_t> suffix : {std::set<std::size_t>{4}, {3, 4}, {2, 3, 4}}) {
        cfg.trainable_layers = suffix;
        const auto [tuned, report] = finetune_gd(net, d, cfg);
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
            if (suffix.count(l + 1)) {
                CHECK_FALSE(bit_equal(tuned.layer(l), net.layer(l)));
            } else {
                CHECK(bit_equal(tuned.layer(l), net.layer(l)));
            }
        }
    }
}

TEST_CASE("finetune_gd: zero-step limit and equivalence with pretrain") {
    CounterRng rng(55);
    const Mlp net = small_net({2, 6, 5, 1}, 56);
    const PairedDataset d = random_dataset(30, 2, 1, rng);
    TrainConfig cfg;
    cfg.learning_rate = 1e-14;
    cfg.trainable_layers = {3};
    const auto [still, r0] = finetune_gd(net, d, cfg);
    CHECK(max_param_change(net, still) < 1e-9);

    cfg.learning_rate = 1e-3;
    cfg.epochs = 25;
    cfg.batch_size = 4;
    cfg.seed = 3;
    cfg.trainable_layers = {1, 2, 3};
    const auto tuned = finetune_gd(net, d, cfg);
    TrainConfig all = cfg;
    all.trainable_layers.clear();
    const auto pre = pretrain(net, d, all);
    CHECK(tuned.first == pre.first);
    CHECK(tuned.second.loss_history == pre.second.loss_history);
}

TEST_CASE("finetune_gd: argument checks") {
    CounterRng rng(57);
    const Mlp net = small_net({2, 6, 5, 1}, 58);
    const PairedDataset d = random_dataset(10, 2, 1, rng);
    TrainConfig cfg;
    cfg.trainable_layers = {};
    CHECK_THROWS_AS(finetune_gd(net, d, cfg), ArgumentError);
    cfg.trainable_layers = {2};
    CHECK_THROWS_AS(finetune_gd(net, d, cfg), ArgumentError);
    cfg.trainable_layers = {1, 3};
    CHECK_THROWS_AS(finetune_gd(net, d, cfg), ArgumentError);
    cfg.trainable_layers = {4};
    CHECK_THROWS_AS(finetune_gd(net, d, cfg), ArgumentError);
    cfg.trainable_layers = {3};
    CHECK_THROWS_AS(pretrain(net, d, cfg), ArgumentError);
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}
