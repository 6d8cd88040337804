#pragma once

// JSON helpers shared by the model file formats.

#include "lva/errors.hpp"
#include "lva/net.hpp"

#include <json.hpp>

#include <cmath>
#include <string>

namespace lva::detail {

using json = nlohmann::json;

inline json activation_to_json(const Activation& act) {
    json j = {{"kind", to_string(act.kind)}};
    if (act.kind == Activation::Kind::LeakyReLU) j["slope"] = act.slope;
    return j;
}

inline Activation activation_from_json(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
        throw ParseError(where + ".activation: expected object with string field 'kind'");
    }
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "identity") return Activation::identity();
    if (kind == "relu") return Activation::relu();
    if (kind == "tanh") return Activation::tanh();
    if (kind == "leaky_relu") {
        if (!j.contains("slope") || !j["slope"].is_number()) throw ParseError(where + ".activation.slope: missing number");
        const double slope = j["slope"].get<double>();
        if (!(slope > 0.0 && slope < 1.0)) throw ParseError(where + ".activation.slope: must lie in (0, 1)");
        return Activation::leaky_relu(slope);
    }
    throw ParseError(where + ".activation.kind: unknown activation '" + kind + "'");
}

inline double number_at(const json& j, const std::string& where) {
    if (!j.is_number()) throw ParseError(where + ": expected number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ParseError(where + ": non-finite value");
    return v;
}

}  // namespace lva::detail
