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

#include "dualexp/models.hpp"

#include <cmath>
#include <sstream>

#include "dualexp/errors.hpp"

namespace dualexp {

ItoMarketModel::ItoMarketModel(ModelSpec spec) : spec_(std::move(spec)) {
    const int d = spec_.n_traded, m = spec_.n_brownian;
    const int k = static_cast<int>(spec_.y0.size());
    if (d < 1 || m < d) throw ConfigError("model needs 1 <= d <= m");
    if (static_cast<int>(spec_.s0.size()) != d) throw ConfigError("model: S0 size must equal d");
    if (!spec_.coefficients) throw ConfigError("model: missing coefficient map");
    for (double s : spec_.s0) {
        if (!(s > 0.0)) throw ConfigError("model: traded asset prices must start positive");
    }
    spec_.factor_names.resize(k);
    for (int j = 0; j < k; ++j) {
        if (spec_.factor_names[j].empty()) {
            spec_.factor_names[j] = k == 1 ? "Y" : "Y" + std::to_string(j + 1);
        }
    }
    spec_.factor_kinds.resize(k, ComponentKind::Signed);
    spec_.factor_bounds.resize(k, {-HUGE_VAL, HUGE_VAL});
    spec_.autonomous.resize(d + k, false);
    spec_.homogeneous.resize(d + k, false);
    for (int c = 0; c < d + k; ++c) {
        if (spec_.homogeneous[c] && !spec_.autonomous[c]) {
            throw ConfigError("model: a homogeneous component must be autonomous");
        }
    }
    x0_ = spec_.s0;
    x0_.insert(x0_.end(), spec_.y0.begin(), spec_.y0.end());
}

ComponentKind ItoMarketModel::component_kind(int c) const {
    if (c < n_traded()) return ComponentKind::Positive;
    return spec_.factor_kinds.at(c - n_traded());
}

std::string ItoMarketModel::component_name(int c) const {
    if (c < n_traded()) return n_traded() == 1 ? "S" : "S" + std::to_string(c + 1);
    return spec_.factor_names.at(c - n_traded());
}

int ItoMarketModel::component_index(const std::string& name) const {
    for (int c = 0; c < state_dim(); ++c) {
        if (component_name(c) == name) return c;
    }
    throw IncompatibleError("model " + family() + " has no state component '" + name + "'");
}

double ItoMarketModel::clamp_factor(int j, double y) const {
    const auto& b = spec_.factor_bounds[j];
    return y < b[0] ? b[0] : (y > b[1] ? b[1] : y);
}

void ItoMarketModel::coefficients(const ControlContext& ctx, Coefficients& c) const {
    c.resize(n_traded(), n_factors(), n_brownian());
    spec_.coefficients(ctx, c);
}

void market_price_of_risk(const Coefficients& c, Eigen::VectorXd& lambda) {
    const auto d = c.sigma.rows();
    if (d == 1) {
        const double ss = c.sigma.row(0).squaredNorm();
        lambda = c.sigma.row(0).transpose() * (c.mu_s(0) / ss);
        return;
    }
    Eigen::MatrixXd g = c.sigma * c.sigma.transpose();
    lambda = c.sigma.transpose() * g.ldlt().solve(c.mu_s);
}

namespace {

void check_rank(const Eigen::MatrixXd& sigma) {
    Eigen::MatrixXd g = sigma * sigma.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    if (!(es.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300))) {
        throw NumericalFailure("volatility matrix sigma is rank deficient");
    }
}

// A context at time t whose prefix is the given state held constant.
ControlContext point_context(const TimeGrid& g, int m, std::span<const double> state,
                             std::vector<double>& w, std::vector<double>& prefix) {
    ControlContext ctx;
    ctx.grid = &g;
    ctx.step = 1;
    ctx.dim = m;
    w.assign(2 * m, 0.0);
    ctx.w = w;
    prefix.assign(state.begin(), state.end());
    prefix.insert(prefix.end(), state.begin(), state.end());
    ctx.state = prefix;
    ctx.state_dim = static_cast<int>(state.size());
    return ctx;
}

}  // namespace

Eigen::VectorXd market_price_of_risk(const ItoMarketModel& model, double t,
                                     std::span<const double> state) {
    if (static_cast<int>(state.size()) != model.state_dim()) {
        throw IncompatibleError("market_price_of_risk: state has wrong size");
    }
    TimeGrid g(t > 0.0 ? t : 1e-300, 1);
    std::vector<double> w, prefix;
    ControlContext ctx = point_context(g, model.n_brownian(), state, w, prefix);
    Coefficients c;
    model.coefficients(ctx, c);
    check_rank(c.sigma);
    Eigen::VectorXd lambda;
    market_price_of_risk(c, lambda);
    return lambda;
}

Eigen::VectorXd project_admissible(const ItoMarketModel& model, double t,
                                   std::span<const double> state,
                                   const Eigen::VectorXd& raw) {
    if (static_cast<int>(state.size()) != model.state_dim() ||
        raw.size() != model.n_brownian()) {
        throw IncompatibleError("project_admissible: argument sizes do not match the model");
    }
    TimeGrid g(t > 0.0 ? t : 1e-300, 1);
    std::vector<double> w, prefix;
    ControlContext ctx = point_context(g, model.n_brownian(), state, w, prefix);
    Coefficients c;
    model.coefficients(ctx, c);
    check_rank(c.sigma);
    return admissible_projector(c.sigma) * raw;
}

Eigen::MatrixXd admissible_projector(const Eigen::MatrixXd& sigma) {
    const auto m = sigma.cols();
    Eigen::MatrixXd g = sigma * sigma.transpose();
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(m, m) -
                        sigma.transpose() * g.ldlt().solve(sigma);
    // exact zeros for columns that sigma does not touch
    for (Eigen::Index j = 0; j < m; ++j) {
        if (sigma.col(j).squaredNorm() == 0.0) {
            p.col(j).setZero();
            p.row(j).setZero();
            p(j, j) = 1.0;
        }
    }
    return p;
}

Eigen::MatrixXd admissible_basis(const Eigen::MatrixXd& sigma) {
    const auto m = sigma.cols();
    const auto r = m - sigma.rows();
    Eigen::MatrixXd p = admissible_projector(sigma);
    Eigen::MatrixXd n(m, r);
    Eigen::Index found = 0;
    for (Eigen::Index j = 0; j < m && found < r; ++j) {
        Eigen::VectorXd v = p.col(j);
        for (Eigen::Index i = 0; i < found; ++i) v -= n.col(i).dot(v) * n.col(i);
        const double nv = v.norm();
        if (nv > 1e-10) n.col(found++) = v / nv;
    }
    if (found != r) throw NumericalFailure("admissible_basis: sigma is rank deficient");
    return n;
}

MeasureSpec MeasureSpec::physical() {
    MeasureSpec m;
    m.kind_ = Kind::Physical;
    m.label_ = "P";
    return m;
}

MeasureSpec MeasureSpec::minimal_martingale() {
    MeasureSpec m;
    m.label_ = "Q_M";
    return m;
}

MeasureSpec MeasureSpec::constant_gamma(std::vector<double> gamma, std::string label) {
    MeasureSpec m;
    bool all_zero = true;
    for (double g : gamma) all_zero = all_zero && g == 0.0;
    m.gamma_dim_ = static_cast<int>(gamma.size());
    if (label.empty()) {
        std::ostringstream os;
        os << "gamma=(";
        for (std::size_t i = 0; i < gamma.size(); ++i) os << (i ? "," : "") << gamma[i];
        os << ")";
        label = os.str();
    }
    m.label_ = std::move(label);
    if (!all_zero) {
        m.gamma_ = [gamma = std::move(gamma)](const ControlContext&, std::span<double> out) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = gamma[i];
        };
    }
    return m;
}

MeasureSpec MeasureSpec::with_gamma(int gamma_dim, GammaFn gamma, std::string label) {
    MeasureSpec m;
    m.gamma_dim_ = gamma_dim;
    m.label_ = std::move(label);
    m.constant_ = false;
    m.gamma_ = std::move(gamma);
    return m;
}

void MeasureSpec::gamma(const ControlContext& ctx, std::span<double> out) const {
    if (gamma_) {
        gamma_(ctx, out);
    } else {
        for (double& v : out) v = 0.0;
    }
}

void measure_integrand(const ItoMarketModel& model, const MeasureSpec& measure,
                       const ControlContext& ctx, const Coefficients& c,
                       Eigen::VectorXd& q) {
    const int m = model.n_brownian();
    if (measure.kind() == MeasureSpec::Kind::Physical) {
        q.setZero(m);
        return;
    }
    market_price_of_risk(c, q);
    if (!measure.zero_gamma()) {
        const int r = m - model.n_traded();
        if (measure.gamma_dim() != r) {
            throw IncompatibleError("measure " + measure.label() + " has gamma of size " +
                                    std::to_string(measure.gamma_dim()) + ", model needs " +
                                    std::to_string(r));
        }
        std::vector<double> g(r);
        measure.gamma(ctx, g);
        Eigen::MatrixXd n = admissible_basis(c.sigma);
        q += n * Eigen::Map<const Eigen::VectorXd>(g.data(), r);
    }
}

ControlProcess project_admissible(ModelPtr model, const ControlProcess& raw) {
    if (raw.dim() != model->n_brownian()) {
        throw IncompatibleError("project_admissible: control dimension does not match model");
    }
    auto raw_ptr = std::make_shared<const ControlProcess>(raw);
    return ControlProcess(
        raw.dim(),
        [model, raw_ptr](const ControlContext& ctx, std::span<double> out) {
            if (ctx.state.empty()) {
                throw IncompatibleError("project_admissible: control needs the model state");
            }
            Coefficients c;
            model->coefficients(ctx, c);
            std::vector<double> v(out.size());
            raw_ptr->evaluate(ctx, v);
            Eigen::VectorXd pv =
                admissible_projector(c.sigma) * Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = pv(j);
        },
        "P(" + raw.label() + ")", raw.bound());
}

StateEnsemble::StateEnsemble(ModelPtr model, MeasureSpec measure,
                             BrownianEnsemble ens, Perturbation perturbation)
    : model_(std::move(model)), measure_(std::move(measure)), ens_(std::move(ens)),
      perturbation_(std::move(perturbation)) {
    if (!model_) throw IncompatibleError("state ensemble without model");
    if (ens_.dim() != model_->n_brownian()) {
        throw IncompatibleError("ensemble dimension " + std::to_string(ens_.dim()) +
                                " does not match model Brownian dimension " +
                                std::to_string(model_->n_brownian()));
    }
    if (perturbation_.control && perturbation_.control->dim() != model_->n_brownian()) {
        throw IncompatibleError("perturbation dimension does not match model");
    }
}

void StateEnsemble::fill(std::int64_t p, StatePath& out) const {
    ens_.fill(p, out.brownian);
    simulate(out.brownian.dw, out, p);
}

void StateEnsemble::simulate(std::span<const double> dw_in, StatePath& out,
                             std::int64_t path_id) const {
    const ItoMarketModel& mod = *model_;
    const TimeGrid& g = ens_.grid();
    const int n = g.n_steps();
    const int m = mod.n_brownian();
    const int d = mod.n_traded();
    const int k = mod.n_factors();
    const int ns = d + k;
    const double dt = g.dt();
    const std::size_t nm = static_cast<std::size_t>(n) * m;
    if (dw_in.size() != nm) throw IncompatibleError("simulate: increment size mismatch");

    out.dw.resize(nm);
    out.w.resize(nm + m);
    out.state.resize(static_cast<std::size_t>(n + 1) * ns);
    out.q.resize(nm);
    out.phi.assign(nm, 0.0);
    out.vol.resize(nm * ns);
    out.phi_buf.resize(m);
    for (int j = 0; j < m; ++j) out.w[j] = 0.0;
    const auto& x0 = mod.initial_state();
    std::copy(x0.begin(), x0.end(), out.state.begin());

    ControlContext ctx;
    ctx.grid = &g;
    ctx.dim = m;
    ctx.state_dim = ns;
    const bool perturbed = perturbation_.control && perturbation_.epsilon != 0.0;
    const double eps = perturbation_.epsilon;

    for (int s = 0; s < n; ++s) {
        const std::size_t a = static_cast<std::size_t>(s) * m;
        const std::size_t xs = static_cast<std::size_t>(s) * ns;
        ctx.step = s;
        ctx.w = std::span<const double>(out.w.data(), a + m);
        ctx.state = std::span<const double>(out.state.data(), xs + ns);
        mod.coefficients(ctx, out.coef);
        measure_integrand(mod, measure_, ctx, out.coef, out.qk);
        for (int j = 0; j < m; ++j) out.q[a + j] = out.qk(j);

        if (perturbed) {
            perturbation_.control->evaluate(ctx, out.phi_buf);
            Eigen::Map<const Eigen::VectorXd> ph(out.phi_buf.data(), m);
            const double leak = (out.coef.sigma * ph).norm();
            if (leak > 1e-8 * std::max(1.0, out.coef.sigma.norm() * ph.norm())) {
                throw IncompatibleError(
                    "perturbation control is not admissible (sigma * phi != 0); "
                    "use project_admissible");
            }
            for (int j = 0; j < m; ++j) {
                out.phi[a + j] = out.phi_buf[j];
                out.dw[a + j] = dw_in[a + j] + eps * out.phi_buf[j] * dt;
            }
        } else {
            for (int j = 0; j < m; ++j) out.dw[a + j] = dw_in[a + j];
        }
        for (int j = 0; j < m; ++j) out.w[a + m + j] = out.w[a + j] + dw_in[a + j];

        double* vk = out.vol.data() + a * ns;
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < m; ++j) vk[i * m + j] = out.coef.sigma(i, j);
        }
        for (int f = 0; f < k; ++f) {
            for (int j = 0; j < m; ++j) vk[(d + f) * m + j] = out.coef.beta(f, j);
        }
        const double* dw = out.dw.data() + a;
        double* xn = out.state.data() + xs + ns;
        const double* xc = out.state.data() + xs;
        for (int i = 0; i < d; ++i) {
            double vol_dw = 0.0, sq = 0.0, sq_q = 0.0;
            for (int j = 0; j < m; ++j) {
                const double sij = out.coef.sigma(i, j);
                vol_dw += sij * dw[j];
                sq += sij * sij;
                sq_q += sij * out.qk(j);
            }
            xn[i] = xc[i] * std::exp((out.coef.mu_s(i) - sq_q - 0.5 * sq) * dt + vol_dw);
        }
        for (int f = 0; f < k; ++f) {
            double diff = 0.0, bq = 0.0;
            for (int j = 0; j < m; ++j) {
                diff += out.coef.beta(f, j) * dw[j];
                bq += out.coef.beta(f, j) * out.qk(j);
            }
            xn[d + f] = mod.clamp_factor(f, xc[d + f] + (out.coef.mu_y(f) - bq) * dt + diff);
        }
        for (int c = 0; c < ns; ++c) {
            if (!std::isfinite(xn[c])) {
                std::ostringstream os;
                os << "non-finite state in model " << mod.family() << ": component "
                   << mod.component_name(c) << " at step " << s + 1;
                if (path_id >= 0) os << " of path " << path_id;
                throw NumericalFailure(os.str());
            }
        }
    }
}

StateEnsemble StateEnsemble::with_ensemble(BrownianEnsemble ens) const {
    return StateEnsemble(model_, measure_, std::move(ens), perturbation_);
}

StateEnsemble StateEnsemble::with_perturbation(Perturbation p) const {
    return StateEnsemble(model_, measure_, ens_, std::move(p));
}

StateEnsemble simulate_state(ModelPtr model, const MeasureSpec& measure,
                             const Perturbation& perturbation,
                             const BrownianEnsemble& ens) {
    return StateEnsemble(std::move(model), measure, ens, perturbation);
}

void for_each_state_path(const StateEnsemble& states,
                         const std::function<void(std::int64_t, const StatePath&)>& fn) {
    const std::int64_t n = states.n_paths();
    parallel_for(block_count(n), [&](std::int64_t b) {
        StatePath path;
        const std::int64_t lo = b * kPathBlock;
        const std::int64_t hi = std::min(n, lo + kPathBlock);
        for (std::int64_t p = lo; p < hi; ++p) {
            states.fill(p, path);
            fn(p, path);
        }
    });
}

std::vector<double> map_state_paths(
    const StateEnsemble& states,
    const std::function<double(std::int64_t, const StatePath&)>& fn) {
    std::vector<double> out(static_cast<std::size_t>(states.n_paths()));
    for_each_state_path(states, [&](std::int64_t p, const StatePath& path) {
        out[static_cast<std::size_t>(p)] = fn(p, path);
    });
    return out;
}

std::vector<double> density_terminal(const StateEnsemble& physical_states,
                                     const MeasureSpec& target) {
    const ItoMarketModel& mod = physical_states.model();
    const TimeGrid& g = physical_states.grid();
    const int n = g.n_steps(), m = mod.n_brownian(), ns = mod.state_dim();
    return map_state_paths(physical_states, [&](std::int64_t, const StatePath& path) {
        ControlContext ctx;
        ctx.grid = &g;
        ctx.dim = m;
        ctx.state_dim = ns;
        Coefficients c;
        Eigen::VectorXd q;
        double log_z = 0.0;
        for (int s = 0; s < n; ++s) {
            const std::size_t a = static_cast<std::size_t>(s) * m;
            ctx.step = s;
            ctx.w = std::span<const double>(path.w.data(), a + m);
            ctx.state = std::span<const double>(path.state.data(), static_cast<std::size_t>(s + 1) * ns);
            mod.coefficients(ctx, c);
            measure_integrand(mod, target, ctx, c, q);
            double ito = 0.0;
            for (int j = 0; j < m; ++j) ito += q(j) * path.dw[a + j];
            log_z += -ito - 0.5 * q.squaredNorm() * g.dt();
        }
        return std::exp(log_z);
    });
}

namespace {

// One Euler/log-Euler step of component c from state x (levels) at step s.
double step_component(const ItoMarketModel& mod, const MeasureSpec& measure,
                      ControlContext& ctx, std::vector<double>& prefix,
                      std::size_t xs, int c, const double* dw, Coefficients& coef,
                      Eigen::VectorXd& q) {
    const int d = mod.n_traded(), m = mod.n_brownian();
    const double dt = ctx.grid->dt();
    ctx.state = std::span<const double>(prefix.data(), xs + mod.state_dim());
    mod.coefficients(ctx, coef);
    measure_integrand(mod, measure, ctx, coef, q);
    const double x = prefix[xs + c];
    if (c < d) {
        double vol_dw = 0.0, sq = 0.0, sq_q = 0.0;
        for (int j = 0; j < m; ++j) {
            vol_dw += coef.sigma(c, j) * dw[j];
            sq += coef.sigma(c, j) * coef.sigma(c, j);
            sq_q += coef.sigma(c, j) * q(j);
        }
        return x * std::exp((coef.mu_s(c) - sq_q - 0.5 * sq) * dt + vol_dw);
    }
    const int f = c - d;
    double diff = 0.0, bq = 0.0;
    for (int j = 0; j < m; ++j) {
        diff += coef.beta(f, j) * dw[j];
        bq += coef.beta(f, j) * q(j);
    }
    return mod.clamp_factor(f, x + (coef.mu_y(f) - bq) * dt + diff);
}

}  // namespace

void component_tangent(const StateEnsemble& states, const StatePath& path,
                       int component, std::span<double> jac,
                       std::span<double> load) {
    const ItoMarketModel& mod = states.model();
    if (component < 0 || component >= mod.state_dim()) {
        throw IncompatibleError("component_tangent: bad component index");
    }
    if (!mod.autonomous(component)) {
        throw IncompatibleError("state component " + mod.component_name(component) + " of model " +
                                mod.family() +
                                " is coupled to other components; no pathwise kernel available");
    }
    const TimeGrid& g = states.grid();
    const int n = g.n_steps(), m = mod.n_brownian(), ns = mod.state_dim(), d = mod.n_traded();
    std::vector<double> prefix(path.state.begin(), path.state.end());
    Coefficients coef;
    Eigen::VectorXd q;
    ControlContext ctx;
    ctx.grid = &g;
    ctx.dim = m;
    ctx.state_dim = ns;
    const bool shortcut = mod.homogeneous(component) && states.measure().constant() &&
                          !mod.market_price_depends_on_factors();
    for (int s = 0; s < n; ++s) {
        const std::size_t a = static_cast<std::size_t>(s) * m;
        const std::size_t xs = static_cast<std::size_t>(s) * ns;
        const double x = path.state[xs + component];
        const double x_next = path.state[xs + ns + component];
        if (shortcut && x != 0.0) {
            jac[s] = x_next / x;
        } else {
            ctx.step = s;
            ctx.w = std::span<const double>(path.w.data(), a + m);
            const double* dw = path.dw.data() + a;
            const double h = 1e-6 * std::max(std::fabs(x), 1e-3);
            prefix[xs + component] = x + h;
            const double up = step_component(mod, states.measure(), ctx, prefix, xs, component, dw, coef, q);
            prefix[xs + component] = x - h;
            const double dn = step_component(mod, states.measure(), ctx, prefix, xs, component, dw, coef, q);
            prefix[xs + component] = x;
            jac[s] = (up - dn) / (2.0 * h);
        }
        // loadings from the coefficients at the actual state
        const double* row = path.vol.data() + (a * ns) + static_cast<std::size_t>(component) * m;
        if (component < d) {
            for (int j = 0; j < m; ++j) load[a + j] = x_next * row[j];
        } else {
            const int f = component - d;
            const bool clamped = x_next <= mod.clamp_factor(f, -HUGE_VAL) ||
                                 x_next >= mod.clamp_factor(f, HUGE_VAL);
            for (int j = 0; j < m; ++j) load[a + j] = clamped ? 0.0 : row[j];
        }
    }
}

// ---- families ----

ModelPtr basis_risk_2d(const BasisRisk2DParams& p) {
    if (!(std::fabs(p.rho) < 1.0)) {
        throw ConfigError("basis_risk_2d requires |rho| < 1 (got rho = " + std::to_string(p.rho) +
                          "); |rho| = 1 completes the market");
    }
    if (!(p.sigma_s > 0.0)) throw ConfigError("basis_risk_2d requires sigma_s > 0");
    if (!(p.sigma_y >= 0.0)) throw ConfigError("basis_risk_2d requires sigma_y >= 0");
    if (!(p.s0 > 0.0) || !(p.y0 > 0.0)) throw ConfigError("basis_risk_2d requires S0, Y0 > 0");
    ModelSpec s;
    s.family = "basis_risk_2d";
    s.n_traded = 1;
    s.n_brownian = 2;
    s.s0 = {p.s0};
    s.y0 = {p.y0};
    s.factor_names = {"Y"};
    s.factor_kinds = {ComponentKind::Positive};
    s.constant_coefficients = true;
    s.market_price_depends_on_factors = false;
    s.autonomous = {true, true};
    s.homogeneous = {true, true};
    const double rc = std::sqrt(1.0 - p.rho * p.rho);
    s.coefficients = [p, rc](const ControlContext& ctx, Coefficients& c) {
        const double y = ctx.state_now()[1];
        c.mu_s(0) = p.mu_s;
        c.sigma(0, 0) = p.sigma_s;
        c.sigma(0, 1) = 0.0;
        c.mu_y(0) = p.mu_y * y;
        c.beta(0, 0) = p.sigma_y * p.rho * y;
        c.beta(0, 1) = p.sigma_y * rc * y;
    };
    s.params = {{"mu_s", p.mu_s}, {"sigma_s", p.sigma_s}, {"mu_y", p.mu_y},
                {"sigma_y", p.sigma_y}, {"rho", p.rho}, {"S0", p.s0}, {"Y0", p.y0}};
    return std::make_shared<const ItoMarketModel>(std::move(s));
}

ModelPtr stochastic_vol_model(const StochasticVolParams& p) {
    if (!p.sigma || !p.lambda || !p.a || !p.b) {
        throw ConfigError("stochastic_vol_model: all four coefficient functions are required");
    }
    if (!(std::fabs(p.rho) <= 1.0)) throw ConfigError("stochastic_vol_model requires |rho| <= 1");
    if (!(p.s0 > 0.0)) throw ConfigError("stochastic_vol_model requires S0 > 0");
    ModelSpec s;
    s.family = "stochastic_vol";
    s.n_traded = 1;
    s.n_brownian = 2;
    s.s0 = {p.s0};
    s.y0 = {p.y0};
    s.factor_names = {"Y"};
    s.factor_kinds = {ComponentKind::Signed};
    s.market_price_depends_on_factors = !p.lambda_constant;
    s.autonomous = {false, true};
    const double rc = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
    s.coefficients = [p, rc](const ControlContext& ctx, Coefficients& c) {
        const double y = ctx.state_now()[1];
        const double vol = p.sigma(y);
        c.mu_s(0) = p.lambda(y) * vol;
        c.sigma(0, 0) = vol;
        c.sigma(0, 1) = 0.0;
        c.mu_y(0) = p.a(y);
        const double b = p.b(y);
        c.beta(0, 0) = b * p.rho;
        c.beta(0, 1) = b * rc;
    };
    s.params = p.echo;
    s.params["rho"] = p.rho;
    s.params["S0"] = p.s0;
    s.params["Y0"] = p.y0;
    return std::make_shared<const ItoMarketModel>(std::move(s));
}

ModelPtr ou_stochastic_vol(const OuVolParams& p) {
    if (!(p.vol_base > 0.0)) throw ConfigError("stochastic_vol requires vol_base > 0");
    if (!(p.beta >= 0.0)) throw ConfigError("stochastic_vol requires beta >= 0");
    StochasticVolParams sp;
    sp.sigma = [p](double y) { return p.vol_base * std::exp(p.vol_loading * y); };
    sp.lambda = [p](double y) { return p.lambda0 + p.lambda_c * y; };
    sp.a = [p](double y) { return p.kappa * (p.theta - y); };
    sp.b = [p](double) { return p.beta; };
    sp.rho = p.rho;
    sp.s0 = p.s0;
    sp.y0 = p.y0;
    sp.lambda_constant = p.lambda_c == 0.0;
    sp.echo = {{"kappa", p.kappa},     {"theta", p.theta},       {"beta", p.beta},
               {"lambda0", p.lambda0}, {"lambda_c", p.lambda_c}, {"vol_base", p.vol_base},
               {"vol_loading", p.vol_loading}};
    return stochastic_vol_model(sp);
}

ModelPtr multi_asset_basis_risk(const MultiAssetParams& p) {
    const auto d = p.mu_s.size();
    const auto k = p.mu_y.size();
    if (d < 1 || k < 1) throw ConfigError("multi_asset_basis_risk needs d >= 1 assets and k >= 1 factors");
    if (p.sigma_s.rows() != d || p.sigma_s.cols() != d) throw ConfigError("multi_asset_basis_risk: sigma_s must be d x d");
    if (p.sigma_y.size() != k || p.rho.rows() != k || p.rho.cols() != d) {
        throw ConfigError("multi_asset_basis_risk: factor parameter shapes do not match");
    }
    if (p.s0.size() != d || p.y0.size() != k) throw ConfigError("multi_asset_basis_risk: initial values have wrong size");
    if (std::fabs(p.sigma_s.determinant()) < 1e-12) throw ConfigError("multi_asset_basis_risk: sigma_s must be invertible");
    Eigen::VectorXd rc(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double r2 = p.rho.row(j).squaredNorm();
        if (!(r2 < 1.0)) throw ConfigError("multi_asset_basis_risk requires |rho_j| < 1 for every factor");
        if (!(p.y0(j) > 0.0)) throw ConfigError("multi_asset_basis_risk requires Y0 > 0");
        rc(j) = std::sqrt(1.0 - r2);
    }
    ModelSpec s;
    s.family = "multi_asset_basis_risk";
    s.n_traded = static_cast<int>(d);
    s.n_brownian = static_cast<int>(d + k);
    s.s0.assign(p.s0.data(), p.s0.data() + d);
    s.y0.assign(p.y0.data(), p.y0.data() + k);
    s.factor_kinds.assign(k, ComponentKind::Positive);
    s.constant_coefficients = true;
    s.market_price_depends_on_factors = false;
    s.autonomous.assign(d + k, true);
    s.homogeneous.assign(d + k, true);
    s.coefficients = [p, rc, d, k](const ControlContext& ctx, Coefficients& c) {
        auto x = ctx.state_now();
        c.mu_s = p.mu_s;
        c.sigma.setZero();
        c.sigma.leftCols(d) = p.sigma_s;
        c.beta.setZero();
        for (Eigen::Index j = 0; j < k; ++j) {
            const double y = x[d + j];
            c.mu_y(j) = p.mu_y(j) * y;
            for (Eigen::Index i = 0; i < d; ++i) c.beta(j, i) = p.sigma_y(j) * p.rho(j, i) * y;
            c.beta(j, d + j) = p.sigma_y(j) * rc(j) * y;
        }
    };
    for (Eigen::Index i = 0; i < d; ++i) s.params["mu_s" + std::to_string(i + 1)] = p.mu_s(i);
    for (Eigen::Index j = 0; j < k; ++j) s.params["mu_y" + std::to_string(j + 1)] = p.mu_y(j);
    return std::make_shared<const ItoMarketModel>(std::move(s));
}

ModelPtr stochastic_correlation_model(const StochasticCorrelationParams& p) {
    if (!(std::fabs(p.rho0) < 1.0) || !(std::fabs(p.rho_bar) < 1.0)) {
        throw ConfigError("stochastic_correlation requires |rho0| < 1 and |rho_bar| < 1");
    }
    if (!(p.delta * p.delta + p.eta * p.eta <= 1.0)) {
        throw ConfigError("stochastic_correlation requires delta^2 + eta^2 <= 1");
    }
    if (!(p.sigma_s > 0.0) || !(p.sigma_y >= 0.0)) throw ConfigError("stochastic_correlation requires sigma_s > 0, sigma_y >= 0");
    if (!(p.s0 > 0.0) || !(p.y0 > 0.0)) throw ConfigError("stochastic_correlation requires S0, Y0 > 0");
    constexpr double kEdge = 1e-6;
    ModelSpec s;
    s.family = "stochastic_correlation";
    s.n_traded = 1;
    s.n_brownian = 3;
    s.s0 = {p.s0};
    s.y0 = {p.y0, p.rho0};
    s.factor_names = {"Y", "rho"};
    s.factor_kinds = {ComponentKind::Positive, ComponentKind::Signed};
    s.factor_bounds = {{-HUGE_VAL, HUGE_VAL}, {-1.0 + kEdge, 1.0 - kEdge}};
    s.market_price_depends_on_factors = false;
    s.autonomous = {true, false, true};
    s.homogeneous = {true, false, false};
    const double r3 = std::sqrt(std::max(0.0, 1.0 - p.delta * p.delta - p.eta * p.eta));
    s.coefficients = [p, r3](const ControlContext& ctx, Coefficients& c) {
        auto x = ctx.state_now();
        const double y = x[1];
        const double r = x[2];
        const double rc = std::sqrt(std::max(0.0, 1.0 - r * r));
        c.mu_s(0) = p.mu_s;
        c.sigma << p.sigma_s, 0.0, 0.0;
        c.mu_y(0) = p.mu_y * y;
        c.beta(0, 0) = p.sigma_y * r * y;
        c.beta(0, 1) = p.sigma_y * rc * y;
        c.beta(0, 2) = 0.0;
        const double h = p.xi_rho * (1.0 - r * r);
        c.mu_y(1) = p.kappa_rho * (p.rho_bar - r);
        c.beta(1, 0) = h * p.delta;
        c.beta(1, 1) = h * p.eta;
        c.beta(1, 2) = h * r3;
    };
    s.params = {{"mu_s", p.mu_s},   {"sigma_s", p.sigma_s},     {"mu_y", p.mu_y},
                {"sigma_y", p.sigma_y}, {"rho0", p.rho0},       {"kappa_rho", p.kappa_rho},
                {"rho_bar", p.rho_bar}, {"xi_rho", p.xi_rho},   {"delta", p.delta},
                {"eta", p.eta},     {"S0", p.s0},               {"Y0", p.y0}};
    return std::make_shared<const ItoMarketModel>(std::move(s));
}

}  // namespace dualexp
