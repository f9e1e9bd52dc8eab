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


#include <Eigen/QR>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dualexp/errors.hpp"
#include "dualexp/models.hpp"

using namespace dualexp;

namespace {

std::vector<double> terminal(const StateEnsemble& s, int c) {
    const int n = s.grid().n_steps();
    const int ns = s.model().state_dim();
    return map_state_paths(s, [&](std::int64_t, const StatePath& p) {
        return p.state[static_cast<std::size_t>(n) * ns + c];
    });
}

bool near(const Estimate& e, double target, double k = 4.0) {
    return std::fabs(e.value - target) <= k * e.std_error;
}

MultiAssetParams two_asset() {
    MultiAssetParams p;
    p.mu_s = Eigen::Vector2d(0.02, 0.06);
    p.sigma_s = Eigen::Vector2d(0.2, 0.3).asDiagonal();
    p.mu_y = Eigen::VectorXd::Constant(1, 0.05);
    p.sigma_y = Eigen::VectorXd::Constant(1, 0.25);
    p.rho = Eigen::MatrixXd(1, 2);
    p.rho << 0.5, 0.3;
    p.s0 = Eigen::Vector2d(100.0, 50.0);
    p.y0 = Eigen::VectorXd::Constant(1, 80.0);
    return p;
}

}  // namespace

TEST_CASE("market price of risk examples") {
    auto m = basis_risk_2d({});
    std::vector<double> x{100.0, 100.0};
    Eigen::VectorXd l = market_price_of_risk(*m, 0.0, x);
    CHECK(l(0) == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(l(1) == 0.0);

    BasisRisk2DParams p;
    p.mu_s = 0.0;
    CHECK(market_price_of_risk(*basis_risk_2d(p), 0.0, x).norm() == 0.0);

    auto ma = multi_asset_basis_risk(two_asset());
    std::vector<double> z{100.0, 50.0, 80.0};
    Eigen::VectorXd l2 = market_price_of_risk(*ma, 0.3, z);
    CHECK(l2(0) == doctest::Approx(0.1).epsilon(1e-13));
    CHECK(l2(1) == doctest::Approx(0.2).epsilon(1e-13));
    CHECK(l2(2) == 0.0);
    CHECK_THROWS_AS(market_price_of_risk(*ma, 0.0, x), IncompatibleError);
}

TEST_CASE("admissible projection") {
    auto m = basis_risk_2d({});
    std::vector<double> x{100.0, 100.0};
    Eigen::VectorXd r = project_admissible(*m, 0.0, x, Eigen::Vector2d(1.0, 1.0));
    CHECK(r(0) == 0.0);
    CHECK(r(1) == 1.0);
    Eigen::VectorXd again = project_admissible(*m, 0.0, x, r);
    CHECK(again == r);

    // m = 3, d = 1 against a QR null-space oracle
    auto sc = stochastic_correlation_model({});
    std::vector<double> z{100.0, 100.0, 0.75};
    Eigen::RowVector3d sigma(0.3, 0.0, 0.0);
    Eigen::MatrixXd sig = sigma;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(sig.transpose());
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(3, 3);
    Eigen::MatrixXd null = q.rightCols(2);
    Eigen::Vector3d raw(0.7, -1.3, 2.1);
    Eigen::VectorXd pr = project_admissible(*sc, 0.5, z, raw);
    Eigen::VectorXd oracle = null * (null.transpose() * raw);
    CHECK((pr - oracle).norm() < 1e-14);
    CHECK((sig * pr).norm() < 1e-10);

    // a general sigma: random-ish row with no zero entries
    Eigen::MatrixXd s2(1, 3);
    s2 << 0.3, -0.2, 0.1;
    Eigen::MatrixXd proj = admissible_projector(s2);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr2(s2.transpose());
    Eigen::MatrixXd q2 = qr2.householderQ() * Eigen::MatrixXd::Identity(3, 3);
    Eigen::MatrixXd n2 = q2.rightCols(2);
    CHECK((proj - n2 * n2.transpose()).norm() < 1e-14);
    Eigen::MatrixXd basis = admissible_basis(s2);
    CHECK((basis.transpose() * basis - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);
    CHECK((s2 * basis).norm() < 1e-14);

    Eigen::MatrixXd bad(2, 3);
    bad << 1, 0, 0, 2, 0, 0;
    ModelSpec spec;
    spec.family = "degenerate";
    spec.n_traded = 2;
    spec.n_brownian = 3;
    spec.s0 = {1.0, 1.0};
    spec.y0 = {0.0};
    spec.coefficients = [bad](const ControlContext&, Coefficients& c) {
        c.mu_s.setConstant(0.1);
        c.sigma = bad;
        c.mu_y.setZero();
        c.beta.setZero();
    };
    ItoMarketModel deg(spec);
    std::vector<double> w{1.0, 1.0, 0.0};
    CHECK_THROWS_AS(market_price_of_risk(deg, 0.0, w), NumericalFailure);
    CHECK_THROWS_AS(project_admissible(deg, 0.0, w, Eigen::Vector3d(1, 1, 1)), NumericalFailure);
}

TEST_CASE("measure integrand satisfies the martingale condition") {
    auto m = ou_stochastic_vol({.vol_loading = 0.5});
    auto g = TimeGrid(1.0, 16);
    auto ens = generate_ensemble(2, g, 200, 3);
    auto meas = MeasureSpec::constant_gamma({0.3});
    auto st = simulate_state(m, meas, {}, ens);
    double worst = 0.0;
    for_each_state_path(st, [&](std::int64_t, const StatePath& p) {
        for (int k = 0; k < 16; ++k) {
            const double y = p.state[k * 2 + 1];
            const double vol = 0.2 * std::exp(0.5 * y);
            const double mu = y * vol;
            const double r = std::fabs(vol * p.q[k * 2] - mu);
            if (r > worst) worst = r;
            CHECK(p.q[k * 2 + 1] == doctest::Approx(0.3).epsilon(1e-15));
        }
    });
    CHECK(worst <= 1e-10);
}

TEST_CASE("martingale property and unit density for every family") {
    auto g = TimeGrid(1.0, 64);
    std::vector<ModelPtr> models{basis_risk_2d({}), ou_stochastic_vol({}),
                                 multi_asset_basis_risk(two_asset()),
                                 stochastic_correlation_model({})};
    for (const auto& m : models) {
        CAPTURE(m->family());
        auto ens = generate_ensemble(m->n_brownian(), g, 40000, 11);
        auto q = simulate_state(m, MeasureSpec::minimal_martingale(), {}, ens);
        for (int i = 0; i < m->n_traded(); ++i) {
            auto s = terminal(q, i);
            CHECK(near(mean_estimate(s), m->initial_state()[i]));
            for (double v : s) REQUIRE(v > 0.0);
        }
        auto p = simulate_state(m, MeasureSpec::physical(), {}, ens);
        auto z = density_terminal(p, MeasureSpec::minimal_martingale());
        CHECK(near(mean_estimate(z), 1.0));
    }
    // a non-minimal measure too
    auto m = basis_risk_2d({});
    auto ens = generate_ensemble(2, g, 40000, 12);
    auto q = simulate_state(m, MeasureSpec::constant_gamma({-0.5}), {}, ens);
    CHECK(near(mean_estimate(terminal(q, 0)), 100.0));
    auto z = density_terminal(simulate_state(m, MeasureSpec::physical(), {}, ens),
                              MeasureSpec::constant_gamma({-0.5}));
    CHECK(near(mean_estimate(z), 1.0));
}

TEST_CASE("2D basis risk: lognormal factor drift under the minimal measure") {
    BasisRisk2DParams p;
    auto m = basis_risk_2d(p);
    auto g = TimeGrid(1.0, 256);
    auto ens = generate_ensemble(2, g, 20000, 21);
    auto st = simulate_state(m, MeasureSpec::minimal_martingale(), {}, ens);
    auto y = terminal(st, 1);
    for (double& v : y) v = std::log(v);
    const double nu = p.mu_y - p.rho * (p.mu_s / p.sigma_s) * p.sigma_y;
    CHECK(near(mean_estimate(y), std::log(p.y0) + (nu - 0.5 * p.sigma_y * p.sigma_y)));
}

TEST_CASE("2D basis risk: correlation limits and degenerate cases") {
    auto g = TimeGrid(1.0, 32);
    CHECK_THROWS_AS(basis_risk_2d({.rho = 1.0}), ConfigError);
    CHECK_THROWS_AS(basis_risk_2d({.rho = -1.0}), ConfigError);

    for (double rho : {0.0, 0.99}) {
        CAPTURE(rho);
        auto m = basis_risk_2d({.rho = rho});
        auto ens = generate_ensemble(2, g, 4000, 31);
        auto st = simulate_state(m, MeasureSpec::physical(), {}, ens);
        // per-step log returns pooled over paths and steps
        std::vector<double> rs, ry;
        st.ensemble();
        for_each_state_path(st, [&](std::int64_t p, const StatePath& path) {
            if (p >= 1000) return;
            for (int k = 0; k < 32; ++k) {
                rs.push_back(std::log(path.state[(k + 1) * 2] / path.state[k * 2]));
                ry.push_back(std::log(path.state[(k + 1) * 2 + 1] / path.state[k * 2 + 1]));
            }
        });
        const double n = static_cast<double>(rs.size());
        const double c = covariance(rs, ry) / std::sqrt(variance(rs) * variance(ry));
        const double se = (1.0 - c * c) / std::sqrt(n);
        CHECK(std::fabs(c - rho) <= 4.0 * se + 1e-3 * rho);
    }

    auto det = basis_risk_2d({.sigma_y = 0.0});
    auto st = simulate_state(det, MeasureSpec::physical(), {}, generate_ensemble(2, g, 3, 1));
    StatePath path;
    st.fill(2, path);
    double y = 100.0;
    for (int k = 0; k < 32; ++k) {
        CHECK(path.state[k * 2 + 1] == y);
        y = y + 0.1 * y * g.dt();
    }
}

TEST_CASE("OU stochastic vol: mean of K_T against the Euler moment recursion") {
    OuVolParams p{.kappa = 1.5, .theta = 0.3, .beta = 0.4, .lambda0 = 0.0, .lambda_c = 1.2};
    auto m = ou_stochastic_vol(p);
    auto g = TimeGrid(1.0, 64);
    const double dt = g.dt();
    for (auto meas : {MeasureSpec::physical(), MeasureSpec::minimal_martingale()}) {
        CAPTURE(meas.label());
        auto st = simulate_state(m, meas, {}, generate_ensemble(2, g, 40000, 41));
        auto kt = map_state_paths(st, [&](std::int64_t, const StatePath& path) {
            double s = 0.0;
            for (int k = 0; k < 64; ++k) {
                const double l = p.lambda_c * path.state[k * 2 + 1];
                s += l * l * dt;
            }
            return s;
        });
        // Euler: Y' = a + b Y + beta dW with b = 1 - kappa' dt
        const double kap = p.kappa + (meas.kind() == MeasureSpec::Kind::Physical
                                          ? 0.0 : p.rho * p.beta * p.lambda_c);
        const double b = 1.0 - kap * dt, a = p.kappa * p.theta * dt;
        double mean = p.y0, var = 0.0, oracle = 0.0;
        for (int k = 0; k < 64; ++k) {
            oracle += p.lambda_c * p.lambda_c * (var + mean * mean) * dt;
            mean = a + b * mean;
            var = b * b * var + p.beta * p.beta * dt;
        }
        CHECK(near(mean_estimate(kt), oracle));
    }

    auto det = ou_stochastic_vol({.beta = 0.0});
    auto st = simulate_state(det, MeasureSpec::physical(), {}, generate_ensemble(2, g, 2, 1));
    StatePath a, b;
    st.fill(0, a);
    st.fill(1, b);
    for (int k = 0; k <= 64; ++k) CHECK(a.state[k * 2 + 1] == b.state[k * 2 + 1]);
}

TEST_CASE("non-admissible perturbations and non-finite states are rejected") {
    auto m = basis_risk_2d({});
    auto ens = generate_ensemble(2, TimeGrid(1.0, 8), 10, 1);
    auto bad = std::make_shared<const ControlProcess>(ControlProcess::constant({1.0, 1.0}));
    auto st = simulate_state(m, MeasureSpec::minimal_martingale(), {bad, 0.1}, ens);
    StatePath path;
    CHECK_THROWS_AS(st.fill(0, path), IncompatibleError);

    auto good = std::make_shared<const ControlProcess>(project_admissible(m, *bad));
    auto ok = simulate_state(m, MeasureSpec::minimal_martingale(), {good, 0.1}, ens);
    ok.fill(0, path);
    for (int k = 0; k < 8; ++k) {
        CHECK(path.phi[k * 2] == 0.0);
        CHECK(path.phi[k * 2 + 1] == 1.0);
    }

    StochasticVolParams sp;
    sp.sigma = [](double) { return 0.2; };
    sp.lambda = [](double) { return 0.1; };
    sp.a = [](double y) { return y * y * 1e6; };
    sp.b = [](double) { return 0.1; };
    sp.y0 = 10.0;
    auto blow = stochastic_vol_model(sp);
    auto st2 = simulate_state(blow, MeasureSpec::physical(), {}, ens);
    CHECK_THROWS_AS(st2.fill(3, path), NumericalFailure);
    try {
        st2.fill(3, path);
    } catch (const NumericalFailure& e) {
        CHECK(std::string(e.what()).find("component Y") != std::string::npos);
        CHECK(std::string(e.what()).find("path 3") != std::string::npos);
    }
}

TEST_CASE("stochastic correlation stays inside the clamp") {
    auto m = stochastic_correlation_model({.rho0 = 0.95, .rho_bar = 0.95, .xi_rho = 2.0});
    auto st = simulate_state(m, MeasureSpec::physical(), {}, generate_ensemble(3, TimeGrid(1.0, 32), 2000, 5));
    double hi = -1.0;
    for_each_state_path(st, [&](std::int64_t, const StatePath& p) {
        for (int k = 0; k <= 32; ++k) hi = std::max(hi, std::fabs(p.state[k * 3 + 2]));
    });
    CHECK(hi <= 1.0 - 1e-6);
    CHECK(m->component_index("rho") == 2);
    CHECK_THROWS_AS(m->component_index("Z"), IncompatibleError);
}

TEST_CASE("component tangent matches finite differences of the whole path") {
    auto m = basis_risk_2d({});
    auto g = TimeGrid(1.0, 16);
    auto ens = generate_ensemble(2, g, 4, 8);
    auto st = simulate_state(m, MeasureSpec::minimal_martingale(), {}, ens);
    StatePath path, bumped;
    st.fill(1, path);
    std::vector<double> jac(16), load(32);
    component_tangent(st, path, 1, jac, load);
    // d Y_T / d dW_k^j via the chain rule vs direct bump
    for (int k : {0, 7, 15}) {
        for (int j = 0; j < 2; ++j) {
            double chain = load[k * 2 + j];
            for (int s = k + 1; s < 16; ++s) chain *= jac[s];
            std::vector<double> dw = path.brownian.dw;
            const double h = 1e-6;
            dw[k * 2 + j] += h;
            st.simulate(dw, bumped);
            const double up = bumped.state[16 * 2 + 1];
            dw[k * 2 + j] -= 2 * h;
            st.simulate(dw, bumped);
            const double dn = bumped.state[16 * 2 + 1];
            CHECK(chain == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
        }
    }
    auto sv = ou_stochastic_vol({});
    auto st2 = simulate_state(sv, MeasureSpec::minimal_martingale(), {}, ens);
    st2.fill(0, path);
    CHECK_THROWS_AS(component_tangent(st2, path, 0, jac, load), IncompatibleError);
}
