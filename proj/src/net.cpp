#include "lva/net.hpp"

#include "lva/errors.hpp"
#include "lva/rng.hpp"

#include "json_util.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace lva {

using json = nlohmann::json;
using detail::activation_from_json;
using detail::activation_to_json;
using detail::number_at;

Activation Activation::leaky_relu(double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw ArgumentError("LeakyReLU slope must lie in (0, 1)");
    return {Kind::LeakyReLU, slope};
}

double Activation::apply(double v) const {
    switch (kind) {
        case Kind::Identity: return v;
        case Kind::ReLU: return v > 0.0 ? v : 0.0;
        case Kind::LeakyReLU: return v > 0.0 ? v : slope * v;
        case Kind::Tanh: return std::tanh(v);
    }
    return v;
}

double Activation::derivative(double v) const {
    switch (kind) {
        case Kind::Identity: return 1.0;
        case Kind::ReLU: return v > 0.0 ? 1.0 : 0.0;
        case Kind::LeakyReLU: return v > 0.0 ? 1.0 : slope;
        case Kind::Tanh: {
            const double t = std::tanh(v);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

double Activation::lipschitz() const { return kind == Kind::LeakyReLU ? std::max(1.0, slope) : 1.0; }

std::string to_string(Activation::Kind kind) {
    switch (kind) {
        case Activation::Kind::Identity: return "identity";
        case Activation::Kind::ReLU: return "relu";
        case Activation::Kind::LeakyReLU: return "leaky_relu";
        case Activation::Kind::Tanh: return "tanh";
    }
    return "identity";
}

namespace {

void validate_layer(const Layer& layer, std::size_t index) {
    if (layer.weight.rows() < 1 || layer.weight.cols() < 1) {
        throw ShapeError("layer " + std::to_string(index) + ": empty weight");
    }
    if (layer.bias.size() != layer.weight.rows()) {
        throw ShapeError("layer " + std::to_string(index) + ": bias length " + std::to_string(layer.bias.size()) +
                         " != weight rows " + std::to_string(layer.weight.rows()));
    }
    if (layer.activation.kind == Activation::Kind::LeakyReLU &&
        !(layer.activation.slope > 0.0 && layer.activation.slope < 1.0)) {
        throw ArgumentError("layer " + std::to_string(index) + ": LeakyReLU slope outside (0, 1)");
    }
}

template <typename Derived>
void apply_activation(Eigen::MatrixBase<Derived>& values, const Activation& act) {
    if (act.kind == Activation::Kind::Identity) return;
    values = values.unaryExpr([&act](double v) { return act.apply(v); });
}

}  // namespace

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ArgumentError("Mlp needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        validate_layer(layers_[i], i);
        if (i > 0 && layers_[i].in_dim() != layers_[i - 1].out_dim()) {
            throw ShapeError("layer " + std::to_string(i) + " expects input " + std::to_string(layers_[i].in_dim()) +
                             " but previous layer emits " + std::to_string(layers_[i - 1].out_dim()));
        }
    }
}

Mlp Mlp::with_layer(std::size_t i, Layer replacement) const {
    if (i >= layers_.size()) throw ArgumentError("with_layer: index out of range");
    if (replacement.weight.rows() != layers_[i].weight.rows() || replacement.weight.cols() != layers_[i].weight.cols()) {
        throw ShapeError("with_layer: replacement shape differs");
    }
    std::vector<Layer> copy = layers_;
    copy[i] = std::move(replacement);
    return Mlp(std::move(copy));
}

Mlp Mlp::truncated(std::size_t k) const {
    if (k < 1 || k > layers_.size()) throw ArgumentError("truncated: k out of range");
    return Mlp(std::vector<Layer>(layers_.begin(), layers_.begin() + static_cast<std::ptrdiff_t>(k)));
}

bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
        const Layer& la = a.layers_[i];
        const Layer& lb = b.layers_[i];
        if (la.activation != lb.activation) return false;
        if (la.weight.rows() != lb.weight.rows() || la.weight.cols() != lb.weight.cols()) return false;
        if (la.weight != lb.weight || la.bias != lb.bias) return false;
    }
    return true;
}

Mlp make_mlp(std::span<const Eigen::Index> dims, Activation hidden, Activation output, std::uint64_t seed) {
    if (dims.size() < 2) throw ArgumentError("make_mlp: need at least input and output dims");
    CounterRng rng(seed, /*stream=*/0x1417);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const Eigen::Index in = dims[i], out = dims[i + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        Layer layer;
        layer.weight.resize(out, in);
        for (Eigen::Index r = 0; r < out; ++r)
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
        layer.bias = Vector::Zero(out);
        for (Eigen::Index r = 0; r < out; ++r) layer.bias[r] = rng.uniform(-0.1, 0.1);
        layer.activation = (i + 2 == dims.size()) ? output : hidden;
        layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
}

Vector latent(const Mlp& net, const Vector& x, std::size_t k) {
    if (k > net.num_layers()) throw ArgumentError("latent: layer index " + std::to_string(k) + " out of range");
    if (x.size() != net.input_dim()) {
        throw ShapeError("input length " + std::to_string(x.size()) + " != " + std::to_string(net.input_dim()));
    }
    Vector z = x;
    for (std::size_t i = 0; i < k; ++i) {
        const Layer& layer = net.layer(i);
        Vector pre = layer.weight * z + layer.bias;
        apply_activation(pre, layer.activation);
        z = std::move(pre);
    }
    return z;
}

Vector forward(const Mlp& net, const Vector& x) { return latent(net, x, net.num_layers()); }

Matrix latent_batch(const Mlp& net, const Matrix& inputs, std::size_t k) {
    if (k > net.num_layers()) throw ArgumentError("latent_batch: layer index out of range");
    if (inputs.cols() != net.input_dim()) {
        throw ShapeError("input width " + std::to_string(inputs.cols()) + " != " + std::to_string(net.input_dim()));
    }
    Matrix z = inputs;
    for (std::size_t i = 0; i < k; ++i) {
        const Layer& layer = net.layer(i);
        Matrix pre = z * layer.weight.transpose();
        pre.rowwise() += layer.bias.transpose();
        apply_activation(pre, layer.activation);
        z = std::move(pre);
    }
    return z;
}

Matrix forward_batch(const Mlp& net, const Matrix& inputs) { return latent_batch(net, inputs, net.num_layers()); }

Matrix jacobian(const Mlp& net, const Vector& x, std::size_t k1, std::size_t k2) {
    if (!(k1 < k2 && k2 <= net.num_layers())) {
        throw ArgumentError("jacobian: need 0 <= from < to <= " + std::to_string(net.num_layers()));
    }
    Vector z = latent(net, x, k1);
    Matrix jac = Matrix::Identity(z.size(), z.size());
    for (std::size_t i = k1; i < k2; ++i) {
        const Layer& layer = net.layer(i);
        const Vector pre = layer.weight * z + layer.bias;
        Matrix step = layer.weight * jac;
        if (layer.activation.kind != Activation::Kind::Identity) {
            for (Eigen::Index r = 0; r < pre.size(); ++r) step.row(r) *= layer.activation.derivative(pre[r]);
        }
        jac = std::move(step);
        z = pre.unaryExpr([&layer](double v) { return layer.activation.apply(v); });
    }
    return jac;
}

LipschitzProfile lipschitz_profile(const Mlp& net) {
    LipschitzProfile profile;
    double running = 1.0;
    for (const Layer& layer : net.layers()) {
        const double c = linalg::spectral_norm(layer.weight) * layer.activation.lipschitz();
        profile.per_layer.push_back(c);
        running *= c;
        profile.prefix_products.push_back(running);
    }
    return profile;
}

double lipschitz_bound(const Mlp& net, std::size_t k1, std::size_t k2) {
    if (!(k1 <= k2 && k2 <= net.num_layers())) throw ArgumentError("lipschitz_bound: bad layer range");
    double c = 1.0;
    for (std::size_t i = k1; i < k2; ++i) c *= linalg::spectral_norm(net.layer(i).weight) * net.layer(i).activation.lipschitz();
    return c;
}

// ---------------------------------------------------------------------------
// JSON model format:
//   {"layers": [{"weight": [[...], ...], "bias": [...],
//                "activation": {"kind": "relu" | "leaky_relu" | "identity" | "tanh",
//                               "slope": 0.01}}]}
// ---------------------------------------------------------------------------


std::string serialize(const Mlp& net) {
    json layers = json::array();
    for (const Layer& layer : net.layers()) {
        json weight = json::array();
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) row.push_back(layer.weight(r, c));
            weight.push_back(std::move(row));
        }
        json bias = json::array();
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) bias.push_back(layer.bias[r]);
        layers.push_back({{"weight", std::move(weight)}, {"bias", std::move(bias)}, {"activation", activation_to_json(layer.activation)}});
    }
    return json{{"layers", std::move(layers)}}.dump(1) + "\n";
}

Mlp deserialize(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array()) {
        throw ParseError("model JSON: missing array field 'layers'");
    }
    const json& jl = doc["layers"];
    if (jl.empty()) throw ParseError("model JSON: 'layers' is empty");

    std::vector<Layer> layers;
    for (std::size_t i = 0; i < jl.size(); ++i) {
        const std::string where = "layers[" + std::to_string(i) + "]";
        const json& entry = jl[i];
        if (!entry.is_object()) throw ParseError(where + ": expected object");
        for (const char* field : {"weight", "bias", "activation"}) {
            if (!entry.contains(field)) throw ParseError(where + ": missing field '" + field + "'");
        }
        const json& jw = entry["weight"];
        if (!jw.is_array() || jw.empty() || !jw[0].is_array() || jw[0].empty()) {
            throw ParseError(where + ".weight: expected non-empty array of rows");
        }
        Layer layer;
        const std::size_t rows = jw.size(), cols = jw[0].size();
        layer.weight.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (std::size_t r = 0; r < rows; ++r) {
            if (!jw[r].is_array() || jw[r].size() != cols) {
                throw ParseError(where + ".weight[" + std::to_string(r) + "]: row length differs from row 0");
            }
            for (std::size_t c = 0; c < cols; ++c) {
                layer.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    number_at(jw[r][c], where + ".weight[" + std::to_string(r) + "][" + std::to_string(c) + "]");
            }
        }
        const json& jb = entry["bias"];
        if (!jb.is_array() || jb.size() != rows) throw ParseError(where + ".bias: expected " + std::to_string(rows) + " numbers");
        layer.bias.resize(static_cast<Eigen::Index>(rows));
        for (std::size_t r = 0; r < rows; ++r) layer.bias[static_cast<Eigen::Index>(r)] = number_at(jb[r], where + ".bias[" + std::to_string(r) + "]");
        layer.activation = activation_from_json(entry["activation"], where);
        layers.push_back(std::move(layer));
    }
    try {
        return Mlp(std::move(layers));
    } catch (const std::exception& e) {
        throw ParseError(std::string("model JSON: ") + e.what());
    }
}

Mlp load_mlp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return deserialize(buffer.str());
}

void save_mlp(const Mlp& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file '" + path + "'");
    out << serialize(net);
}

}  // namespace lva
