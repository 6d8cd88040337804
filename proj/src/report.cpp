#include "lva/report.hpp"

#include <cmath>
#include <cstdio>

namespace lva {

using json = nlohmann::json;

json to_json(const TheoryReport& r) {
    if (r.kind == TheoryReport::Kind::Generalization) {
        return json{{"kind", "generalization"},
                    {"epsilon_test", r.epsilon_data},
                    {"C_g", r.c_suffix},
                    {"adapt_loss", r.adapt_loss},
                    {"N_adapt", r.n_adapt},
                    {"N_test", r.n_test},
                    {"max_multiplicity", r.max_multiplicity},
                    {"rhs", r.rhs_bound},
                    {"lhs", r.observed_loss},
                    {"holds", r.holds}};
    }
    return json{{"kind", "transfer"},
                {"r", r.finetuned_layers},
                {"epsilon_pretrained", r.epsilon_pretrained},
                {"epsilon_data", r.epsilon_data},
                {"C_F", r.c_suffix},
                {"C_Fprefix", r.c_prefix},
                {"C_deltaF", r.c_delta},
                {"C_xtilde", r.c_xtilde},
                {"v1_bound", r.v1_bound},
                {"rhs", r.rhs_bound},
                {"lhs", r.observed_loss},
                {"holds", r.holds},
                {"cdelta_leq_edata", r.cdelta_leq_edata},
                {"prefix_matches", r.prefix_matches}};
}

json to_json(const bench::BenchResult& r) {
    json j{{"method", r.method}, {"budget", r.budget}, {"loss", r.target_loss}, {"runtime_ms", r.runtime_ms}, {"seed", r.seed}};
    for (const auto& [k, v] : r.extra_metrics) j[k] = v;
    return j;
}

json to_json(const LstsqSolution& s) {
    return json{{"rank", s.rank},
                {"condition_estimate", std::isfinite(s.condition_estimate) ? json(s.condition_estimate) : json("inf")},
                {"residual_norm", s.residual_norm},
                {"rank_deficient", s.rank_deficient},
                {"ill_conditioned", s.ill_conditioned}};
}

namespace {

void write(const json& j, std::string& out, int indent, int depth) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * depth), ' ');
    switch (j.type()) {
        case json::value_t::number_float: {
            const double v = j.get<double>();
            if (!std::isfinite(v)) {
                out += "null";
            } else {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out += buf;
            }
            return;
        }
        case json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += "{\n";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ",\n";
                first = false;
                out += pad + json(it.key()).dump() + ": ";
                write(it.value(), out, indent, depth + 1);
            }
            out += "\n" + close_pad + "}";
            return;
        }
        case json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            out += "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) out += ",\n";
                out += pad;
                write(j[i], out, indent, depth + 1);
            }
            out += "\n" + close_pad + "]";
            return;
        }
        default:
            out += j.dump();
    }
}

}  // namespace

std::string dump_json(const json& doc) {
    std::string out;
    write(doc, out, 2, 0);
    out += "\n";
    return out;
}

}  // namespace lva
