#include "lva/report.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>

using namespace lva;
using json = nlohmann::json;

TEST_CASE("dump_json prints floats with 17 significant digits and round-trips") {
    const double third = 1.0 / 3.0;
    const std::string text = dump_json(json{{"x", third}, {"y", 0.1}, {"n", 3}, {"s", "a\"b"}});
    CHECK(text.find("0.33333333333333331") != std::string::npos);
    CHECK(text.find("0.10000000000000001") != std::string::npos);
    const json back = json::parse(text);
    CHECK(back["x"].get<double>() == third);
    CHECK(back["y"].get<double>() == 0.1);
    CHECK(back["n"] == 3);
    CHECK(back["s"] == "a\"b");
}

TEST_CASE("dump_json writes non-finite numbers as null and handles empty containers") {
    const json doc{{"nan", std::nan("")}, {"inf", std::numeric_limits<double>::infinity()}, {"a", json::array()},
                   {"o", json::object()}, {"nested", {{"v", {1.5, -2.25}}}}};
    const json back = json::parse(dump_json(doc));
    CHECK(back["nan"].is_null());
    CHECK(back["inf"].is_null());
    CHECK(back["a"] == json::array());
    CHECK(back["o"] == json::object());
    CHECK(back["nested"]["v"][1].get<double>() == -2.25);
}

TEST_CASE("transfer report field names") {
    TheoryReport r;
    r.kind = TheoryReport::Kind::Transfer;
    r.finetuned_layers = 2;
    r.epsilon_pretrained = 0.5;
    r.epsilon_data = 0.25;
    r.c_prefix = 2.0;
    r.c_suffix = 3.0;
    r.c_delta = 0.125;
    r.c_xtilde = 4.0;
    r.v1_bound = 1.0;
    r.rhs_bound = 7.0;
    r.observed_loss = 6.0;
    r.holds = true;
    const json j = to_json(r);
    CHECK(j["kind"] == "transfer");
    CHECK(j["r"] == 2);
    CHECK(j["epsilon_pretrained"] == 0.5);
    CHECK(j["epsilon_data"] == 0.25);
    CHECK(j["C_Fprefix"] == 2.0);
    CHECK(j["C_F"] == 3.0);
    CHECK(j["C_deltaF"] == 0.125);
    CHECK(j["C_xtilde"] == 4.0);
    CHECK(j["v1_bound"] == 1.0);
    CHECK(j["rhs"] == 7.0);
    CHECK(j["lhs"] == 6.0);
    CHECK(j["holds"] == true);
    CHECK(j.contains("cdelta_leq_edata"));
    CHECK(j.contains("prefix_matches"));
}

TEST_CASE("generalization report field names") {
    TheoryReport r;
    r.kind = TheoryReport::Kind::Generalization;
    r.epsilon_data = 0.75;
    r.c_suffix = 1.5;
    r.adapt_loss = 0.01;
    r.n_adapt = 10;
    r.n_test = 30;
    r.max_multiplicity = 4;
    const json j = to_json(r);
    CHECK(j["kind"] == "generalization");
    CHECK(j["epsilon_test"] == 0.75);
    CHECK(j["C_g"] == 1.5);
    CHECK(j["N_adapt"] == 10);
    CHECK(j["N_test"] == 30);
    CHECK(j["max_multiplicity"] == 4);
    CHECK_FALSE(j.contains("C_F"));
}

TEST_CASE("bench result and solve diagnostics") {
    bench::BenchResult b;
    b.method = "LVA";
    b.budget = 64;
    b.target_loss = 0.002;
    b.seed = 3;
    b.extra_metrics["psnr"] = 27.0;
    const json j = to_json(b);
    CHECK(j["method"] == "LVA");
    CHECK(j["budget"] == 64);
    CHECK(j["loss"] == 0.002);
    CHECK(j["psnr"] == 27.0);
    CHECK(j["seed"] == 3);

    LstsqSolution s;
    s.condition_estimate = std::numeric_limits<double>::infinity();
    CHECK(to_json(s)["condition_estimate"] == "inf");
    s.condition_estimate = 12.0;
    CHECK(to_json(s)["condition_estimate"] == 12.0);
}
