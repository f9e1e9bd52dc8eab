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

double combined(const Estimate& a, const Estimate& b) {
    return std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
}

BrownianEnsemble ens1(std::int64_t n, int steps, std::uint64_t seed) {
    return generate_ensemble(1, TimeGrid(1.0, steps), n, seed);
}

BrownianEnsemble ens2(std::int64_t n, int steps, std::uint64_t seed) {
    return generate_ensemble(2, TimeGrid(1.0, steps), n, seed);
}

}  // namespace

TEST_CASE("control value: linear claim") {
    ClaimSampler s(linear_terminal({1.0}), ens1(40000, 16, 11));
    const auto r = control_value_expansion(s, 0.1);
    CHECK(r.correction.value == doctest::Approx(0.005).epsilon(1e-3));
    CHECK(std::fabs(r.total - 0.005) <= 4.0 * r.zeroth.std_error);
    CHECK(r.total == r.zeroth.value + r.correction.value);
    CHECK(r.remainder_exponent == 4);
    CHECK(r.order_parameter == 0.1);
    CHECK(r.metadata.claim == s.claim().label);
    CHECK(r.metadata.model == "brownian");
    CHECK(r.metadata.n_paths == 40000);
    CHECK(r.metadata.seed == 11);
}

TEST_CASE("control value: quadratic claim and its oracle") {
    ClarkOptions o;
    o.store_values = true;
    ClaimSampler s(quadratic_terminal(), ens1(100000, 32, 12));
    const auto est = clark_integrand(s, o);
    const auto r = control_value_expansion(est, 0.1);
    const double exact = quadratic_control_value(1.0, 0.1);
    CHECK(exact == doctest::Approx(1.010135).epsilon(1e-6));
    CHECK(std::fabs(r.total - 1.01) <= 4.0 * combined(r.zeroth, r.correction) + 2e-3);
    // same sample: the expansion misses only O(eps^4) plus discretisation
    const Estimate oracle = exponential_formula_value(est.values, 0.1);
    CHECK(std::fabs(oracle.value - r.total) < 2e-3);
    CHECK(std::fabs(exact - r.total) < 4.0 * r.zeroth.std_error + 2e-3);
}

TEST_CASE("control value: eps = 0") {
    ClarkOptions o;
    o.store_values = true;
    ClaimSampler s(quadratic_terminal(), ens1(20000, 16, 13));
    const auto est = clark_integrand(s, o);
    const auto r = control_value_expansion(est, 0.0);
    CHECK(r.correction.value == 0.0);
    CHECK(r.total == r.zeroth.value);
    CHECK(r.zeroth.value == doctest::Approx(mean(est.values)).epsilon(1e-12));
    CHECK_THROWS_AS(control_value_expansion(est, std::nan("")), ConfigError);
}

TEST_CASE("first-order control: linear claim gives phi = eps") {
    ClaimSampler s(linear_terminal({1.0}), ens1(20000, 16, 14));
    const auto est = clark_integrand(s);
    const auto foc = first_order_control(est, 0.1);
    ClaimSampler::Workspace ws;
    s.load(7, ws);
    std::vector<double> phi(16);
    evaluate_control(s.grid(), 1, foc.control, ws.view.w, phi);
    for (double v : phi) CHECK(v == doctest::Approx(0.1).epsilon(1e-2));
    CHECK_THROWS_AS(first_order_control(est, 0.1, ControlSpace::Admissible), IncompatibleError);
}

TEST_CASE("first-order control: plug-in objective matches the expansion") {
    ClaimSampler s(quadratic_terminal(), ens1(50000, 32, 15));
    const auto est = clark_integrand(s);
    const auto r = control_value_expansion(est, 0.1);
    const auto foc = first_order_control(est, 0.1);
    const Estimate obj = evaluate_objective(s, foc.control, 0.1);
    CHECK(std::fabs(obj.value - r.total) <= 4.0 * combined(obj, r.zeroth));
    // common random numbers: the difference is far below either error bar
    CHECK(std::fabs(obj.value - r.total) < 5e-3);
}

TEST_CASE("first-order control: fixed-point refinement moves by O(eps^2)") {
    ClaimSampler s(quadratic_terminal(), ens1(40000, 32, 16));
    const auto est = clark_integrand(s);
    const auto a = refine_control(first_order_control(est, 0.2));
    const auto b = refine_control(first_order_control(est, 0.1));
    CHECK(a.relative_change > 0.0);
    const double ratio = a.relative_change / b.relative_change;
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
    CHECK(a.change > b.change);
    CHECK(b.relative_change < 0.05);
}

TEST_CASE("indifference price: near-complete market") {
    // the xi energy is about (1 - rho^2) var(F) = 0.37 here, so alpha = 0.1 would leave
    // the correction at 1.5e-3 of the price; alpha = 0.01 keeps it well inside 1e-3
    auto model = basis_risk_2d({.rho = 0.999});
    const auto r = indifference_price_expansion(vanilla_on_factor(model, 100.0, OptionKind::Put),
                                                ens2(20000, 32, 21), 0.01);
    CHECK(r.correction.value >= 0.0);
    CHECK(r.correction.value <= 1e-3 * r.zeroth.value);
    CHECK(r.remainder_exponent == 2);
    CHECK(r.metadata.measure == "Q_M");
}

TEST_CASE("indifference price: both forms and the basis-risk reduction") {
    const double rho = 0.75, alpha = 0.1;
    auto model = basis_risk_2d({.rho = rho});
    ClarkOptions o;
    o.store_values = true;
    // deep in the money: smooth payoff, negligible regression residual
    const auto kw = indifference_decomposition(vanilla_on_factor(model, 1.0, OptionKind::Call),
                                               ens2(40000, 32, 22), o);
    CHECK(kw.residual_ratio.value < 1e-3);
    const auto a = indifference_price_expansion(kw, alpha);
    const auto b = mean_variance_form(kw, alpha);
    CHECK(a.zeroth.value == b.zeroth.value);
    CHECK(std::fabs(a.correction.value - b.correction.value) <= 4.0 * combined(a.correction, b.correction));
    const double reduced = 0.5 * alpha * (1.0 - rho * rho) * variance(kw.values);
    CHECK(std::fabs(b.correction.value - reduced) <= 4.0 * b.correction.std_error);
    // small alpha: the price tends to the marginal price
    const auto tiny = indifference_price_expansion(kw, 1e-8);
    CHECK(std::fabs(tiny.total - tiny.zeroth.value) < 1e-5);
    CHECK_THROWS_AS(indifference_price_expansion(kw, 0.0), ConfigError);
    CHECK_THROWS_AS(mean_variance_form(kw, -1.0), ConfigError);
}

TEST_CASE("indifference price: kinked payoff") {
    // the two forms differ by 1/2 alpha times the regression residual variance
    auto model = basis_risk_2d({.rho = 0.75});
    const auto kw = indifference_decomposition(vanilla_on_factor(model, 100.0, OptionKind::Put),
                                               ens2(20000, 32, 24));
    const auto a = indifference_price_expansion(kw, 0.1);
    const auto b = mean_variance_form(kw, 0.1);
    CHECK(b.correction.value - a.correction.value == doctest::Approx(0.05 * kw.pythagoras.value).epsilon(1e-9));
    CHECK(kw.pythagoras.value <= 0.05 * kw.var_f.value);
    CHECK(a.correction.value > 0.0);
}

TEST_CASE("indifference price: hedgeable claim has no correction") {
    auto model = basis_risk_2d({.rho = 0.75});
    const auto r = mean_variance_form(asset_forward(model), ens2(20000, 32, 23), 0.2);
    CHECK(std::fabs(r.correction.value) <= 4.0 * r.correction.std_error + 1e-9);
    const auto x = indifference_price_expansion(asset_forward(model), ens2(20000, 32, 23), 0.2);
    CHECK(x.zeroth.value == doctest::Approx(100.0).epsilon(1e-2));
}

TEST_CASE("indifference price: rejected inputs") {
    CHECK_THROWS_AS(indifference_price_expansion(linear_terminal({1.0, 0.0}), ens2(2000, 8, 1), 0.1),
                    IncompatibleError);
    auto sv = ou_stochastic_vol({});
    CHECK_THROWS_AS(indifference_price_expansion(vanilla_on_factor(sv, 0.4, OptionKind::Call), ens2(2000, 8, 1), 0.1),
                    IncompatibleError);
}

TEST_CASE("relative entropy") {
    auto model = basis_risk_2d({});
    const auto ens = ens2(4000, 16, 31);
    const auto qm = MeasureSpec::minimal_martingale();
    CHECK(relative_entropy_mc(model, qm, qm, ens).value == 0.0);
    const auto qg = MeasureSpec::constant_gamma({0.3}, "g");
    CHECK(relative_entropy_mc(model, qg, qg, ens).value == 0.0);
    const Estimate e = relative_entropy_mc(model, qg, qm, ens);
    CHECK(e.value == doctest::Approx(0.5 * 0.09).epsilon(1e-12));
    CHECK(e.std_error == doctest::Approx(0.0).epsilon(1e-12));

    // chain rule for constant lambda^S
    const auto p = MeasureSpec::physical();
    const Estimate a = relative_entropy_mc(model, qg, p, ens);
    const Estimate b = relative_entropy_mc(model, qm, p, ens);
    const double d = a.value - b.value - e.value;
    CHECK(std::fabs(d) <= 4.0 * (a.std_error + b.std_error + e.std_error) + 1e-12 * a.value);
    CHECK_THROWS_AS(relative_entropy_mc(model, qm, p, ens1(100, 4, 1)), IncompatibleError);
}

TEST_CASE("minimal entropy expansion") {
    OuVolParams cp;
    cp.lambda0 = 0.4;
    cp.lambda_c = 0.0;
    const auto flat = memm_entropy_expansion(ou_stochastic_vol(cp), ens2(5000, 32, 41));
    CHECK(flat.zeroth.value == doctest::Approx(0.08).epsilon(1e-12));
    CHECK(flat.correction.value == 0.0);
    CHECK(flat.order_parameter == doctest::Approx(1.0 - 0.81).epsilon(1e-12));

    const auto ou = memm_entropy_expansion(ou_stochastic_vol({}), ens2(20000, 32, 42));
    CHECK(ou.correction.value < 0.0);
    CHECK(ou.correction.std_error > 0.0);
    CHECK(ou.metadata.claim == "mv_tradeoff");
    CHECK_THROWS_AS(memm_entropy_expansion(basis_risk_2d({}), ens2(100, 4, 1)), IncompatibleError);
}
