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

#include "dualexp/expansion.hpp"

#include <algorithm>
#include <cmath>

#include "dualexp/errors.hpp"
#include "dualexp/parallel.hpp"

namespace dualexp {

namespace {

// Runs fn(p, ws, scratch) over all paths, one workspace pair per block.
template <class Fn>
void for_each_path_pair(const ClaimSampler& s, Fn fn) {
    const std::int64_t n = s.n_paths();
    parallel_for(block_count(n), [&](std::int64_t b) {
        ClaimSampler::Workspace ws, scratch;
        const std::int64_t lo = b * kPathBlock, hi = std::min(n, lo + kPathBlock);
        for (std::int64_t p = lo; p < hi; ++p) {
            s.load(p, ws);
            fn(p, ws, scratch);
        }
    });
}

Estimate scaled(const Estimate& e, double c) {
    return {c * e.value, std::fabs(c) * e.std_error, e.n};
}

void require_alpha(double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
}

}  // namespace

ExpansionReport make_report(Estimate zeroth, Estimate correction, double order_parameter,
                            int remainder_exponent, ReportMetadata metadata) {
    ExpansionReport r;
    r.zeroth = zeroth;
    r.correction = correction;
    r.total = zeroth.value + correction.value;
    r.order_parameter = order_parameter;
    r.remainder_exponent = remainder_exponent;
    r.metadata = std::move(metadata);
    return r;
}

ReportMetadata describe(const ClarkEstimate& est) {
    const ClaimSampler& s = est.sampler();
    ReportMetadata md;
    md.claim = s.claim().label;
    if (const StateEnsemble* st = s.states()) {
        md.model = st->model().family();
        md.measure = st->measure().label();
    } else {
        md.model = "brownian";
        md.measure = "P";
    }
    md.basis = "monomial-" + std::to_string(est.basis().degree());
    md.route = est.route_name();
    md.seed = s.ensemble().seed();
    md.n_paths = s.n_paths();
    md.n_steps = s.grid().n_steps();
    return md;
}

ExpansionReport control_value_expansion(const ClarkEstimate& est, double eps) {
    if (!std::isfinite(eps)) throw ConfigError("epsilon must be finite");
    if (est.out_dim() != est.sampler().dim()) {
        throw ConfigError("control_value_expansion needs the full integrand (no kernel direction)");
    }
    const Estimate corr = eps == 0.0 ? Estimate{0.0, 0.0, est.energy.n} : scaled(est.energy, 0.5 * eps * eps);
    return make_report(est.mean_f, corr, eps, 4, describe(est));
}

ExpansionReport control_value_expansion(const ClaimSampler& sampler, double eps,
                                        const ClarkOptions& options) {
    return control_value_expansion(clark_integrand(sampler, options), eps);
}

FirstOrderControl first_order_control(const ClarkEstimate& est, double eps, ControlSpace space) {
    const int m = est.sampler().dim();
    if (est.out_dim() != m) throw ConfigError("first_order_control needs the full integrand");
    auto psi = std::make_shared<const ClarkEstimate>(est);
    ModelPtr model;
    if (space == ControlSpace::Admissible) {
        const StateEnsemble* st = est.sampler().states();
        if (!st) throw IncompatibleError("an admissible control needs a claim bound to a market model");
        model = st->model_ptr();
    }
    ControlProcess::Fn fn = [psi, eps, model, m](const ControlContext& ctx, std::span<double> out) {
        PathView v{ctx.grid, ctx.dim, ctx.w, {}, ctx.state, ctx.state_dim};
        psi->psi(v, ctx.step, out);
        for (int j = 0; j < m; ++j) out[j] *= eps;
        if (!model) return;
        // remove the row space of sigma: out -= sigma^T (sigma sigma^T)^{-1} sigma out
        thread_local Coefficients c;
        c.resize(model->n_traded(), model->n_factors(), m);
        model->coefficients(ctx, c);
        Eigen::Map<Eigen::VectorXd> o(out.data(), m);
        const Eigen::VectorXd so = c.sigma * o;
        const Eigen::MatrixXd g = c.sigma * c.sigma.transpose();
        o -= c.sigma.transpose() * g.ldlt().solve(so);
    };
    FirstOrderControl foc{psi, eps, space,
                          ControlProcess(m, std::move(fn), space == ControlSpace::Full ? "eps psi" : "eps P_N psi")};
    return foc;
}

Estimate evaluate_objective(const ClaimSampler& sampler, const ControlProcess& phi, double eps) {
    const int n = sampler.grid().n_steps(), m = sampler.dim();
    const double dt = sampler.grid().dt();
    if (phi.dim() != m) throw IncompatibleError("evaluate_objective: control dimension does not match");
    std::vector<double> out(static_cast<std::size_t>(sampler.n_paths()));
    if (const StateEnsemble* st = sampler.states()) {
        ClaimSampler shifted(sampler.claim(),
                             st->with_perturbation({std::make_shared<const ControlProcess>(phi), eps}));
        for_each_claim_path(shifted, [&](std::int64_t p, ClaimSampler::Workspace& ws) {
            double pen = 0.0;
            for (double v : ws.spath.phi) pen += v * v;
            out[static_cast<std::size_t>(p)] = shifted.payoff(ws) - 0.5 * pen * dt;
        });
    } else {
        const std::size_t nm = static_cast<std::size_t>(n) * m;
        for_each_path_pair(sampler, [&](std::int64_t p, ClaimSampler::Workspace& ws,
                                        ClaimSampler::Workspace& sc) {
            std::vector<double>& ctl = sc.adj;
            std::vector<double>& sdw = sc.shifted_dw;
            ctl.resize(nm);
            sdw.resize(nm);
            evaluate_control(sampler.grid(), m, phi, ws.view.w, ctl);
            double pen = 0.0;
            for (std::size_t i = 0; i < nm; ++i) {
                pen += ctl[i] * ctl[i];
                sdw[i] = ws.view.dw[i] + eps * ctl[i] * dt;
            }
            sampler.load_increments(sdw, sc);
            out[static_cast<std::size_t>(p)] = sampler.payoff(sc) - 0.5 * pen * dt;
        });
    }
    for (double v : out) {
        if (!std::isfinite(v)) throw NumericalFailure("evaluate_objective: non-finite objective on a path");
    }
    return mean_estimate(out);
}

FixedPointStep refine_control(const FirstOrderControl& control, const ClarkOptions& options) {
    const ClarkEstimate& est = *control.psi;
    if (control.space != ControlSpace::Full) {
        throw IncompatibleError("refine_control works on the abstract problem (full control space)");
    }
    ClarkOptions o = options;
    o.degree = est.basis().degree();
    o.feature_subset = est.features();
    o.route = ClarkRoute::Kernel;
    o.kernel_direction.clear();
    o.residual_pass = false;
    o.store_values = false;
    o.kernel_shift = std::make_shared<const ControlProcess>(control.control);
    o.kernel_shift_epsilon = control.epsilon;
    FixedPointStep step;
    auto refined = std::make_shared<const ClarkEstimate>(clark_integrand(est.sampler(), o));
    const int m = est.sampler().dim();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(m, m);
    const double gap = std::max(0.0, coefficient_gap_energy(*refined, est, id, id));
    const double eps = std::fabs(control.epsilon);
    step.change = eps * std::sqrt(gap);
    step.relative_change = est.energy.value > 0.0 ? std::sqrt(gap / est.energy.value) : 0.0;
    step.refined = std::move(refined);
    return step;
}

KWDecomposition indifference_decomposition(const ClaimFunctional& claim, const BrownianEnsemble& ens,
                                           const ClarkOptions& options) {
    if (!claim.bound()) throw IncompatibleError("indifference pricing needs a claim bound to a market model");
    if (claim.model->market_price_depends_on_factors()) {
        throw IncompatibleError("model " + claim.model->family() +
                                ": lambda^S depends on the factors, so the entropy-minimal measure is "
                                "not Q_M and is not identified here");
    }
    StateEnsemble states(claim.model, MeasureSpec::minimal_martingale(), ens);
    return kw_decompose(ClaimSampler(claim, states), options);
}

ExpansionReport indifference_price_expansion(const KWDecomposition& kw, double alpha) {
    require_alpha(alpha);
    ReportMetadata md = kw.psi ? describe(*kw.psi) : ReportMetadata{};
    return make_report(kw.mean_f, scaled(kw.energy_xi, 0.5 * alpha), alpha, 2, std::move(md));
}

ExpansionReport indifference_price_expansion(const ClaimFunctional& claim, const BrownianEnsemble& ens,
                                             double alpha, const ClarkOptions& options) {
    require_alpha(alpha);
    return indifference_price_expansion(indifference_decomposition(claim, ens, options), alpha);
}

ExpansionReport mean_variance_form(const KWDecomposition& kw, double alpha) {
    require_alpha(alpha);
    ReportMetadata md = kw.psi ? describe(*kw.psi) : ReportMetadata{};
    return make_report(kw.mean_f, scaled(kw.var_minus_theta, 0.5 * alpha), alpha, 2, std::move(md));
}

ExpansionReport mean_variance_form(const ClaimFunctional& claim, const BrownianEnsemble& ens,
                                   double alpha, const ClarkOptions& options) {
    require_alpha(alpha);
    return mean_variance_form(indifference_decomposition(claim, ens, options), alpha);
}

Estimate relative_entropy_mc(ModelPtr model, const MeasureSpec& measure_a,
                             const MeasureSpec& measure_b, const BrownianEnsemble& ens) {
    if (!model) throw ConfigError("relative_entropy_mc needs a model");
    if (ens.dim() != model->n_brownian()) {
        throw IncompatibleError("relative_entropy_mc: ensemble dimension does not match the model");
    }
    StateEnsemble states(model, measure_a, ens);
    const int n = ens.grid().n_steps(), m = model->n_brownian(), ns = model->state_dim();
    const double dt = ens.grid().dt();
    std::vector<double> vals = map_state_paths(states, [&](std::int64_t, const StatePath& path) {
        ControlContext ctx;
        ctx.grid = &ens.grid();
        ctx.dim = m;
        ctx.state_dim = ns;
        Coefficients c;
        c.resize(model->n_traded(), model->n_factors(), m);
        Eigen::VectorXd qb;
        double s = 0.0;
        for (int k = 0; k < n; ++k) {
            ctx.step = k;
            ctx.w = std::span<const double>(path.w.data(), static_cast<std::size_t>(k + 1) * m);
            ctx.state = std::span<const double>(path.state.data(), static_cast<std::size_t>(k + 1) * ns);
            model->coefficients(ctx, c);
            measure_integrand(*model, measure_b, ctx, c, qb);
            for (int j = 0; j < m; ++j) {
                const double d = path.q[static_cast<std::size_t>(k) * m + j] - qb(j);
                s += d * d;
            }
        }
        return 0.5 * s * dt;
    });
    return mean_estimate(vals);
}

std::vector<double> half_tradeoff_values(ModelPtr model, const BrownianEnsemble& ens) {
    StateEnsemble states(model, MeasureSpec::minimal_martingale(), ens);
    return claim_values(ClaimSampler(mv_tradeoff_functional(model), states));
}

ExpansionReport memm_entropy_expansion(std::span<const double> half_k, double rho,
                                       ReportMetadata metadata) {
    if (!(std::fabs(rho) <= 1.0)) throw ConfigError("memm_entropy_expansion requires |rho| <= 1");
    if (half_k.size() < 2) throw ConfigError("memm_entropy_expansion needs at least two paths");
    const Estimate zeroth = mean_estimate(half_k);
    // identical values (deterministic K_T) give an exact zero
    const auto [lo, hi] = std::minmax_element(half_k.begin(), half_k.end());
    const double v = *lo == *hi ? 0.0 : variance(half_k);
    // standard error of the sample variance from the fourth central moment
    std::vector<double> c4(half_k.size());
    for (std::size_t i = 0; i < half_k.size(); ++i) {
        const double d = half_k[i] - zeroth.value;
        c4[i] = d * d * d * d;
    }
    const double n = static_cast<double>(half_k.size());
    const double v_se = v > 0.0 ? std::sqrt(std::max(0.0, mean(c4) - v * v) / n) : 0.0;
    // 1/8 var(K) = 1/2 var(K / 2)
    const double s = 1.0 - rho * rho;
    const Estimate corr{v > 0.0 ? -0.5 * s * v : 0.0, 0.5 * s * v_se, zeroth.n};
    return make_report(zeroth, corr, s, 2, std::move(metadata));
}

ExpansionReport memm_entropy_expansion(ModelPtr model, const BrownianEnsemble& ens) {
    if (!model || model->family() != "stochastic_vol") {
        throw IncompatibleError("memm_entropy_expansion needs a stochastic_vol model");
    }
    const double rho = model->params().at("rho");
    const std::vector<double> hk = half_tradeoff_values(model, ens);
    ReportMetadata md;
    md.claim = "mv_tradeoff";
    md.model = model->family();
    md.measure = "Q_M";
    md.seed = ens.seed();
    md.n_paths = ens.n_paths();
    md.n_steps = ens.grid().n_steps();
    return memm_entropy_expansion(hk, rho, std::move(md));
}

}  // namespace dualexp
