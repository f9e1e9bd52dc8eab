/*
   Copyright 2026 The dualexp Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#include <cmath>
#include <vector>

#include "doctest.h"
#include "dualexp/errors.hpp"
#include "dualexp/expansion.hpp"
#include "dualexp/oracle.hpp"

using namespace dualexp;

namespace {

BrownianEnsemble ens1(std::int64_t n, int steps, std::uint64_t seed) {
    return generate_ensemble(1, TimeGrid(1.0, steps), n, seed);
}

ClaimFunctional constant_claim(double c) {
    ClaimFunctional f;
    f.label = "constant";
    f.payoff = [c](const PathView&) { return c; };
    f.raw_kernel = [](const PathView&, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
    f.n_features = 1;
    f.features = [](const PathView& v, int k, std::span<double> out) { out[0] = v.w[k * v.dim]; };
    return f;
}

}  // namespace

TEST_CASE("exponential formula: Gaussian claims") {
    const auto ens = ens1(200000, 8, 51);
    const Estimate lin = exponential_formula_value(ClaimSampler(linear_terminal({1.0}), ens), 0.1);
    // zeroth order noise of W(T) dominates
    CHECK(std::fabs(lin.value - 0.005) <= 4.0 * lin.std_error);
    CHECK(linear_control_value(std::vector<double>{1.0}, 1.0, 0.1) == doctest::Approx(0.005));
    const Estimate quad = exponential_formula_value(ClaimSampler(quadratic_terminal(), ens), 0.1);
    CHECK(std::fabs(quad.value - quadratic_control_value(1.0, 0.1)) <= 4.0 * quad.std_error);
}

TEST_CASE("exponential formula: small eps tends to the mean") {
    std::vector<double> v;
    for (int i = 0; i < 1000; ++i) v.push_back(std::sin(i * 0.37));
    CHECK(exponential_formula_value(v, 1e-5).value == doctest::Approx(mean(v)).epsilon(1e-8));
    CHECK(exponential_formula_value(v, 0.0).value == doctest::Approx(mean(v)).epsilon(1e-14));
    CHECK(quadratic_control_value(1.0, 0.0) == 1.0);
}

TEST_CASE("exponential formula: overflow is reported") {
    CHECK_THROWS_AS(quadratic_control_value(1.0, std::sqrt(0.5)), NumericalFailure);
    CHECK_THROWS_AS(quadratic_control_value(1.0, 1.0), NumericalFailure);
    // heavy tail: eps^2 T = 0.6 has no finite exponential moment
    CHECK_THROWS_AS(exponential_formula_value(ClaimSampler(quadratic_terminal(), ens1(100000, 4, 52)),
                                              std::sqrt(0.6)),
                    NumericalFailure);
    std::vector<double> bad(100, 1.0);
    bad[3] = std::nan("");
    CHECK_THROWS_AS(exponential_formula_value(bad, 0.1), NumericalFailure);
}

TEST_CASE("distortion price") {
    std::vector<double> v;
    for (int i = 0; i < 5000; ++i) v.push_back(10.0 * std::fabs(std::sin(i * 0.11)));
    const double m = mean(v);
    CHECK(distortion_price(v, 1e-9, 0.5).value == doctest::Approx(m).epsilon(1e-7));
    // rho -> 1 removes the distortion
    CHECK(distortion_price(v, 0.3, 1.0 - 1e-14).value == doctest::Approx(m).epsilon(1e-10));
    // second order: E + 1/2 a (1 - rho^2) var
    const double a = 1e-3, rho = 0.75;
    const double second = m + 0.5 * a * (1 - rho * rho) * variance(v);
    CHECK(distortion_price(v, a, rho).value == doctest::Approx(second).epsilon(1e-6));
    CHECK_THROWS_AS(distortion_price(v, 0.0, 0.5), ConfigError);
    CHECK_THROWS_AS(distortion_price(v, 0.1, 1.0), ConfigError);
}

TEST_CASE("distortion price: model gate and reduced correction") {
    auto model = basis_risk_2d({.rho = 0.75});
    const auto ens = generate_ensemble(2, TimeGrid(1.0, 32), 40000, 53);
    const auto put = vanilla_on_factor(model, 100.0, OptionKind::Put);
    const double alpha = 0.01;
    const Estimate d = distortion_price(put, alpha, ens);
    const auto mv = mean_variance_form(put, ens, alpha);
    CHECK(std::fabs(d.value - mv.total) <= 4.0 * mv.correction.std_error + 1e-3);
    CHECK_THROWS_AS(distortion_price(asset_forward(model), 0.1, ens), IncompatibleError);
    CHECK_THROWS_AS(distortion_price(vanilla_on_factor(ou_stochastic_vol({}), 0.4, OptionKind::Call), 0.1, ens),
                    IncompatibleError);
    CHECK_THROWS_AS(distortion_price(linear_terminal({1.0, 0.0}), 0.1, ens), IncompatibleError);
}

TEST_CASE("entropy minimum value") {
    std::vector<double> flat(100, 0.08);
    CHECK(entropy_minimum_value(flat, 0.9).value == doctest::Approx(0.08).epsilon(1e-12));
    std::vector<double> v;
    for (int i = 0; i < 2000; ++i) v.push_back(0.1 + 0.05 * std::sin(i * 0.7));
    const double s = 1.0 - 0.95 * 0.95;
    const double second = mean(v) - 0.5 * s * variance(v);
    CHECK(entropy_minimum_value(v, 0.95).value == doctest::Approx(second).epsilon(1e-6));
    CHECK(entropy_minimum_value(v, 0.95).value <= mean(v));
}

TEST_CASE("dp: linear claim") {
    DPInstance in;
    in.n_dp_steps = 2;
    in.richardson = false;
    const DPResult r = dp_control_value(linear_terminal({1.0}), 1, 0.1, in);
    CHECK(std::fabs(r.value - 0.005) < 1e-6);
    CHECK(r.widened_nodes == 0);
    CHECK(r.bound == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(r.evaluations > 0);
}

TEST_CASE("dp: quadratic claim on three steps") {
    const DPResult r = dp_control_value(quadratic_terminal(), 1, 0.1, DPInstance{});
    CHECK(r.by_depth.size() == 3);
    CHECK(std::fabs(r.value - quadratic_control_value(1.0, 0.1)) < 1e-4);
    // one tree alone carries the eps^2 / n discretisation
    CHECK(std::fabs(r.by_depth.back() - quadratic_control_value(1.0, 0.1)) > 1e-4);
}

TEST_CASE("dp: eps = 0 is the quadrature mean") {
    DPInstance in;
    in.richardson = false;
    const DPResult q = dp_control_value(quadratic_terminal(), 1, 0.0, in);
    CHECK(q.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q.bound == 0.0);
    const DPResult c = dp_control_value(constant_claim(2.5), 1, 0.3, in);
    CHECK(c.value == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("dp: refinement of the control grid is Cauchy") {
    DPInstance in;
    std::vector<double> v;
    for (int cp : {11, 21, 41}) {
        in.control_points = cp;
        v.push_back(dp_control_value(quadratic_terminal(), 1, 0.1, in).value);
    }
    CHECK(std::fabs(v[2] - v[1]) <= std::fabs(v[1] - v[0]) + 1e-12);
}

TEST_CASE("dp: instance bounds") {
    DPInstance in;
    in.nodes = 15;
    CHECK_THROWS_AS(dp_control_value(quadratic_terminal(), 1, 0.1, in), ConfigError);  // (15 * 41)^3 > 1e8
    in = {};
    in.n_dp_steps = 5;
    CHECK_THROWS_AS(dp_control_value(quadratic_terminal(), 1, 0.1, in), ConfigError);
    in = {};
    in.control_points = 40;
    CHECK_THROWS_AS(dp_control_value(quadratic_terminal(), 1, 0.1, in), ConfigError);
    in = {};
    in.nodes = 5;
    CHECK_THROWS_AS(dp_control_value(quadratic_terminal(), 1, 0.1, in), ConfigError);
    CHECK_THROWS_AS(dp_control_value(linear_terminal({1.0, 1.0}), 2, 0.1, DPInstance{}), ConfigError);
    auto model = basis_risk_2d({});
    CHECK_THROWS_AS(dp_control_value(asset_forward(model), 2, 0.1, DPInstance{}), IncompatibleError);
}

TEST_CASE("entropy dp: constant lambda and the expansion") {
    OuVolParams cp;
    cp.lambda0 = 0.4;
    cp.lambda_c = 0.0;
    EntropyDPOptions o;
    o.n_steps = 32;
    o.y_points = 101;
    const auto flat = entropy_dp_minimum(ou_stochastic_vol(cp), 1.0, o);
    CHECK(flat.value == doctest::Approx(0.08).epsilon(1e-10));
    CHECK(flat.zeroth == doctest::Approx(0.08).epsilon(1e-10));

    OuVolParams p;
    p.rho = 0.95;
    o.n_steps = 64;
    o.y_points = 201;
    const auto r = entropy_dp_minimum(ou_stochastic_vol(p), 1.0, o);
    CHECK(r.value < r.zeroth);
    CHECK(r.value > 0.0);
    CHECK_THROWS_AS(entropy_dp_minimum(basis_risk_2d({}), 1.0, o), IncompatibleError);
}

TEST_CASE("directional derivative: linear and constant claims") {
    const auto ens = ens1(20000, 16, 61);
    const auto one = ControlProcess::constant({1.0});
    const auto lin = verify_directional_derivative(ClaimSampler(linear_terminal({1.0}), ens), one, {0.05, 0.1});
    REQUIRE(lin.rows.size() == 2);
    CHECK(lin.rows[0].eps == 0.1);
    for (const auto& row : lin.rows) {
        CHECK(row.finite_difference.value == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::fabs(row.ibp.value - 1.0) <= 4.0 * row.ibp.std_error);
        CHECK(std::fabs(row.difference.value) <= 4.0 * row.difference.std_error);
    }
    const auto c = verify_directional_derivative(ClaimSampler(constant_claim(3.0), ens), one, {0.1});
    CHECK(c.rows[0].finite_difference.value == 0.0);
    CHECK(std::fabs(c.rows[0].ibp.value) <= 4.0 * c.rows[0].ibp.std_error);
    CHECK_THROWS_AS(verify_directional_derivative(ClaimSampler(linear_terminal({1.0}), ens), one, {}), ConfigError);
}

TEST_CASE("directional derivative: quadratic residual scales as eps^2") {
    const auto ens = ens1(100000, 16, 62);
    const auto rep = verify_directional_derivative(ClaimSampler(quadratic_terminal(), ens),
                                                   ControlProcess::constant({1.0}), {0.1, 0.2});
    REQUIRE(rep.residual_ratios.size() == 1);
    CHECK(rep.residual_ratios[0].value >= 3.0);
    CHECK(rep.residual_ratios[0].value <= 5.0);
    CHECK(rep.residual_eps2_coefficient > 0.0);
}

TEST_CASE("l2 convergence") {
    const auto ens = ens1(20000, 16, 63);
    const auto zero = verify_l2_convergence(ControlProcess::zero(1), ens, {0.1, 0.05});
    for (const auto& r : zero.rows) CHECK(r.distance == 0.0);
    const auto one = verify_l2_convergence(ControlProcess::constant({1.0}), ens, {0.05, 0.1});
    REQUIRE(one.ratios.size() == 1);
    CHECK(one.ratios[0] >= 1.5);
    CHECK(one.ratios[0] <= 2.5);
    const auto two = verify_l2_convergence(ControlProcess::constant({2.0}), ens, {0.1});
    CHECK(two.rows[0].distance >= 2.0 * one.rows[0].distance);
    CHECK_THROWS_AS(verify_l2_convergence(ControlProcess::zero(2), ens, {0.1}), IncompatibleError);
}
