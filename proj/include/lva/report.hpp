#pragma once

#include "lva/bench.hpp"
#include "lva/lva.hpp"

#include <json.hpp>

#include <string>

namespace lva {

/// Field names follow the bound's notation: epsilon_pretrained, epsilon_data, C_F,
/// C_Fprefix, C_deltaF, C_xtilde, v1_bound, rhs, lhs, holds, cdelta_leq_edata.
nlohmann::json to_json(const TheoryReport& report);
nlohmann::json to_json(const bench::BenchResult& result);
nlohmann::json to_json(const LstsqSolution& solve);

/// JSON text with every float printed to 17 significant digits.
std::string dump_json(const nlohmann::json& doc);

}  // namespace lva
