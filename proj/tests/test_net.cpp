#include "lva/errors.hpp"
#include "lva/net.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

using namespace lva;
using lva::testing::max_abs;
using lva::testing::random_matrix;
using lva::testing::random_vector;
using lva::testing::small_net;

#ifndef LVA_FIXTURES
#define LVA_FIXTURES "tests/fixtures"
#endif

namespace {

Layer affine(Matrix w, Vector b, Activation act) { return Layer{std::move(w), std::move(b), act}; }

// Straight-line reimplementation, independent of forward().
Vector oracle_forward(const Mlp& net, Vector x) {
    for (const Layer& l : net.layers()) {
        Vector y(l.weight.rows());
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
            double s = l.bias(i);
            for (Eigen::Index j = 0; j < l.weight.cols(); ++j) s += l.weight(i, j) * x(j);
            switch (l.activation.kind) {
                case Activation::Kind::Identity: y(i) = s; break;
                case Activation::Kind::ReLU: y(i) = s > 0 ? s : 0.0; break;
                case Activation::Kind::LeakyReLU: y(i) = s > 0 ? s : l.activation.slope * s; break;
                case Activation::Kind::Tanh: y(i) = std::tanh(s); break;
            }
        }
        x = y;
    }
    return x;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("forward: trivial cases") {
    const Mlp id({affine(Matrix::Identity(3, 3), Vector::Zero(3), Activation::identity())});
    Vector x(3);
    x << 1, -2, 3;
    CHECK(forward(id, x) == x);

    Matrix w(1, 1);
    w << -1;
    const Mlp relu({affine(w, Vector::Zero(1), Activation::relu())});
    Vector two(1);
    two << 2;
    CHECK(forward(relu, two)(0) == 0.0);
}

TEST_CASE("forward: straight-line oracle and batch agreement") {
    CounterRng rng(11);
    for (auto act : {Activation::relu(), Activation::tanh(), Activation::leaky_relu(0.1)}) {
        const Mlp net = small_net({3, 5, 4, 2}, 12, act);
        const Matrix xs = random_matrix(7, 3, rng);
        const Matrix batch = forward_batch(net, xs);
        for (Eigen::Index i = 0; i < xs.rows(); ++i) {
            const Vector x = xs.row(i).transpose();
            const Vector oracle = oracle_forward(net, x);
            CHECK((forward(net, x) - oracle).cwiseAbs().maxCoeff() < 1e-14);
            CHECK((batch.row(i).transpose() - oracle).cwiseAbs().maxCoeff() < 1e-14);
        }
    }
}

TEST_CASE("forward: dimension mismatch") {
    const Mlp net = small_net({3, 4, 1}, 1);
    CHECK_THROWS_AS(forward(net, Vector::Zero(2)), ShapeError);
    CHECK_THROWS_AS(forward_batch(net, Matrix::Zero(4, 2)), ShapeError);
}

TEST_CASE("latent: k = 0, k = n and truncation") {
    CounterRng rng(13);
    const Mlp net = small_net({2, 6, 5, 3}, 14);
    const Vector x = random_vector(2, rng);
    CHECK(latent(net, x, 0) == x);
    CHECK(latent(net, x, 3) == forward(net, x));
    CHECK(max_abs(latent(net, x, 2) - forward(net.truncated(2), x)) == 0.0);
    const Matrix xs = random_matrix(5, 2, rng);
    CHECK(max_abs(latent_batch(net, xs, 2) - forward_batch(net.truncated(2), xs)) == 0.0);
    CHECK_THROWS_AS(latent(net, x, 4), ArgumentError);
}

TEST_CASE("jacobian: affine and linear chains") {
    CounterRng rng(15);
    const Matrix w1 = random_matrix(4, 3, rng), w2 = random_matrix(2, 4, rng);
    const Mlp lin({affine(w1, random_vector(4, rng), Activation::identity()),
                   affine(w2, random_vector(2, rng), Activation::identity())});
    const Vector x = random_vector(3, rng);
    CHECK(max_abs(jacobian(lin, x, 0, 1) - w1) == 0.0);
    CHECK(max_abs(jacobian(lin, x, 0, 2) - w2 * w1) < 1e-14);
    CHECK(max_abs(jacobian(lin, x, 1, 2) - w2) == 0.0);
    CHECK_THROWS_AS(jacobian(lin, x, 2, 2), ArgumentError);
    CHECK_THROWS_AS(jacobian(lin, x, 0, 3), ArgumentError);
}

TEST_CASE("jacobian: central finite differences on a tanh net") {
    CounterRng rng(16);
    const Mlp net = small_net({3, 6, 5, 2}, 17, Activation::tanh());
    for (int trial = 0; trial < 5; ++trial) {
        const Vector x = random_vector(3, rng);
        const Matrix j = jacobian(net, x, 0, 3);
        const double h = 1e-5;
        for (int c = 0; c < 3; ++c) {
            Vector xp = x, xm = x;
            xp(c) += h;
            xm(c) -= h;
            const Vector fd = (forward(net, xp) - forward(net, xm)) / (2 * h);
            CHECK((j.col(c) - fd).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("jacobian: composability") {
    CounterRng rng(18);
    for (auto act : {Activation::tanh(), Activation::relu(), Activation::leaky_relu(0.2)}) {
        const Mlp net = small_net({3, 7, 6, 5, 2}, 19, act);
        const std::size_t n = net.num_layers();
        const Vector x = random_vector(3, rng);
        const Matrix full = jacobian(net, x, 0, n);
        const Matrix composed = jacobian(net, x, n - 1, n) * jacobian(net, x, 0, n - 1);
        CHECK(max_abs(full - composed) < 1e-12);
    }
}

TEST_CASE("jacobian: exact for piecewise-linear nets inside an activation region") {
    CounterRng rng(20);
    const Mlp net = small_net({2, 8, 8, 3}, 21, Activation::leaky_relu(0.05));
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Vector x = random_vector(2, rng);
        const Vector d = random_vector(2, rng, 1e-7);
        // Skip points whose perturbation flips any pre-activation sign.
        bool same_region = true;
        Vector a = x, b = x + d;
        for (const Layer& l : net.layers()) {
            const Vector pa = l.weight * a + l.bias, pb = l.weight * b + l.bias;
            for (Eigen::Index i = 0; i < pa.size(); ++i)
                if ((pa(i) > 0) != (pb(i) > 0)) same_region = false;
            a = pa.unaryExpr([&](double v) { return l.activation.apply(v); });
            b = pb.unaryExpr([&](double v) { return l.activation.apply(v); });
        }
        if (!same_region) continue;
        ++checked;
        const Vector lhs = forward(net, x + d) - forward(net, x);
        const Vector rhs = jacobian(net, x, 0, 3) * d;
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(checked > 40);
}

TEST_CASE("activation conventions") {
    CHECK(Activation::relu().derivative(0.0) == 0.0);
    CHECK(Activation::leaky_relu(0.1).derivative(0.0) == 0.1);
    CHECK(Activation::leaky_relu(0.1).lipschitz() == 1.0);
    CHECK_THROWS_AS(Activation::leaky_relu(1.5), ArgumentError);
    CHECK_FALSE(Activation::tanh().piecewise_linear());
}

TEST_CASE("lipschitz_profile: hand cases") {
    Matrix w = Matrix::Zero(2, 2);
    w(0, 0) = 2;
    w(1, 1) = 1;
    const Mlp one({affine(w, Vector::Zero(2), Activation::relu())});
    const auto p = lipschitz_profile(one);
    REQUIRE(p.per_layer.size() == 1);
    CHECK(p.per_layer[0] == doctest::Approx(2.0).epsilon(1e-12));

    Matrix w3 = Matrix::Zero(2, 2);
    w3(0, 0) = 3;
    const Mlp two({affine(w, Vector::Zero(2), Activation::relu()), affine(w3, Vector::Zero(2), Activation::identity())});
    const auto q = lipschitz_profile(two);
    CHECK(q.prefix_products[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(q.prefix_products[1] == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(lipschitz_bound(two, 1, 2) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("lipschitz_profile: sampled pairs never violate the prefix bounds") {
    CounterRng rng(22);
    const Mlp net = small_net({3, 10, 10, 2}, 23, Activation::tanh());
    const auto p = lipschitz_profile(net);
    for (int trial = 0; trial < 1000; ++trial) {
        const Vector a = random_vector(3, rng, 2.0), b = random_vector(3, rng, 2.0);
        for (std::size_t k = 1; k <= net.num_layers(); ++k) {
            const double lhs = (latent(net, a, k) - latent(net, b, k)).norm();
            CHECK(lhs <= p.prefix_products[k - 1] * (a - b).norm() * (1 + 1e-12));
        }
    }
}

TEST_CASE("serialization: bit-exact round trip") {
    const Mlp net = small_net({3, 5, 4, 2}, 24, Activation::leaky_relu(0.01));
    const Mlp back = deserialize(serialize(net));
    CHECK(back == net);
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
        CHECK(bit_equal(back.layer(i).weight, net.layer(i).weight));
        CHECK(bit_equal(Matrix(back.layer(i).bias), Matrix(net.layer(i).bias)));
    }
}

TEST_CASE("serialization: malformed documents") {
    CHECK_THROWS_AS(deserialize(R"({"layers": []})"), ParseError);
    CHECK_THROWS_AS(deserialize("{not json"), ParseError);
    CHECK_THROWS_AS(deserialize(R"({"layers": [{"weight": [[1, 2]], "bias": [0, 0], "activation": {"kind": "relu"}}]})"),
                    ParseError);
    try {
        deserialize(R"({"layers": [{"weight": [[1]], "bias": [0], "activation": {"kind": "swish"}}]})");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("layers[0]") != std::string::npos);
    }
}

TEST_CASE("serialization: hand-written fixture") {
    const Mlp net = load_mlp(std::string(LVA_FIXTURES) + "/one_layer.json");
    REQUIRE(net.num_layers() == 1);
    CHECK(net.layer(0).weight(0, 0) == 2.5);
    CHECK(net.layer(0).bias(0) == -0.5);
    CHECK(net.layer(0).activation == Activation::identity());
}

TEST_CASE("Mlp: structural checks") {
    CHECK_THROWS_AS(Mlp(std::vector<Layer>{}), ArgumentError);
    CHECK_THROWS_AS(Mlp({affine(Matrix::Zero(2, 3), Vector::Zero(2), Activation::relu()),
                         affine(Matrix::Zero(1, 3), Vector::Zero(1), Activation::identity())}),
                    ShapeError);
    const Mlp net = small_net({2, 3, 1}, 25);
    CHECK_THROWS_AS(net.with_layer(0, affine(Matrix::Zero(4, 2), Vector::Zero(4), Activation::relu())), ShapeError);
}
