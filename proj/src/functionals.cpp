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


#include "dualexp/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dualexp/errors.hpp"

namespace dualexp {

namespace {

double component_feature(ComponentKind kind, double x, double x0) {
    return kind == ComponentKind::Positive ? std::log(x / x0) : x - x0;
}

void require_model(const ModelPtr& model, const std::string& what) {
    if (!model) throw IncompatibleError(what + " must be bound to a model");
}

// Regressors of a claim on state component c: c itself when it evolves on
// its own, otherwise every component of the state.
void state_features(ClaimFunctional& f, const ModelPtr& model, int c) {
    std::vector<int> comps;
    if (model->autonomous(c)) {
        comps.push_back(c);
    } else {
        for (int i = 0; i < model->state_dim(); ++i) comps.push_back(i);
    }
    std::vector<ComponentKind> kinds;
    std::vector<double> x0;
    for (int i : comps) {
        kinds.push_back(model->component_kind(i));
        x0.push_back(model->initial_state()[i]);
    }
    f.n_features = static_cast<int>(comps.size());
    f.features = [comps, kinds, x0](const PathView& v, int k, std::span<double> out) {
        for (std::size_t i = 0; i < comps.size(); ++i) {
            out[i] = component_feature(kinds[i], v.x(k, comps[i]), x0[i]);
        }
    };
}

double sq_market_price(const ItoMarketModel& mod, const ControlContext& ctx, Coefficients& c,
                       Eigen::VectorXd& l) {
    mod.coefficients(ctx, c);
    market_price_of_risk(c, l);
    return l.squaredNorm();
}

}  // namespace

ClaimFunctional linear_terminal(std::vector<double> c) {
    if (c.empty()) throw ConfigError("linear_terminal needs a non-empty coefficient vector");
    ClaimFunctional f;
    f.label = "linear";
    for (std::size_t j = 0; j < c.size(); ++j) f.params["c" + std::to_string(j + 1)] = c[j];
    const int m = static_cast<int>(c.size());
    f.required_dim = m;
    f.payoff = [c, m](const PathView& v) {
        const std::size_t end = static_cast<std::size_t>(v.n_steps()) * m;
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += c[j] * v.w[end + j];
        return s;
    };
    f.raw_kernel = [c, m](const PathView& v, std::span<double> out) {
        for (int k = 0; k < v.n_steps(); ++k) {
            for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(k) * m + j] = c[j];
        }
    };
    f.n_features = m;
    f.features = [m](const PathView& v, int k, std::span<double> out) {
        for (int j = 0; j < m; ++j) out[j] = v.w[static_cast<std::size_t>(k) * m + j];
    };
    return f;
}

ClaimFunctional quadratic_terminal() {
    ClaimFunctional f;
    f.label = "quadratic";
    f.required_dim = 1;
    f.payoff = [](const PathView& v) {
        const double w = v.w[v.n_steps()];
        return w * w;
    };
    f.raw_kernel = [](const PathView& v, std::span<double> out) {
        const double k2 = 2.0 * v.w[v.n_steps()];
        std::fill(out.begin(), out.end(), k2);
    };
    f.n_features = 1;
    f.features = [](const PathView& v, int k, std::span<double> out) { out[0] = v.w[k]; };
    return f;
}

ClaimFunctional vanilla_on_factor(ModelPtr model, double strike, OptionKind kind,
                                  const std::string& component) {
    const bool call = kind == OptionKind::Call;
    require_model(model, call ? "call" : "put");
    if (!(strike > 0.0)) throw ConfigError("strike must be positive");
    const int c = model->component_index(component);
    ClaimFunctional f;
    f.label = call ? "call" : "put";
    f.params = {{"strike", strike}};
    f.model = model;
    f.component = c;
    f.payoff = [c, strike, call](const PathView& v) {
        const double y = v.x(v.n_steps(), c);
        return call ? std::max(y - strike, 0.0) : std::max(strike - y, 0.0);
    };
    f.sensitivity = [c, strike, call](const PathView& v, std::span<double> g) {
        std::fill(g.begin(), g.end(), 0.0);
        const double y = v.x(v.n_steps(), c);
        g[v.n_steps()] = call ? (y > strike ? 1.0 : 0.0) : (y < strike ? -1.0 : 0.0);
    };
    state_features(f, model, c);
    return f;
}

ClaimFunctional lookback_put_on_factor(ModelPtr model, const std::string& component) {
    require_model(model, "lookback");
    const int c = model->component_index(component);
    if (!model->autonomous(c)) {
        throw IncompatibleError("lookback kernel needs component " + component +
                                " to evolve on its own; model " + model->family() +
                                " couples it to other state variables");
    }
    ClaimFunctional f;
    f.label = "lookback";
    f.model = model;
    f.component = c;
    f.payoff = [c](const PathView& v) {
        const int n = v.n_steps();
        double mx = v.x(0, c);
        for (int k = 1; k <= n; ++k) mx = std::max(mx, v.x(k, c));
        return mx - v.x(n, c);
    };
    f.sensitivity = [c](const PathView& v, std::span<double> g) {
        const int n = v.n_steps();
        std::fill(g.begin(), g.end(), 0.0);
        int arg = 0;
        double mx = v.x(0, c);
        for (int k = 1; k <= n; ++k) {
            if (v.x(k, c) > mx) {
                mx = v.x(k, c);
                arg = k;
            }
        }
        g[arg] += 1.0;
        g[n] -= 1.0;
    };
    const ComponentKind kind = model->component_kind(c);
    const double x0 = model->initial_state()[c];
    f.n_features = 2;
    f.features = [c, kind, x0](const PathView& v, int k, std::span<double> out) {
        double mx = v.x(0, c);
        for (int j = 1; j <= k; ++j) mx = std::max(mx, v.x(j, c));
        out[0] = component_feature(kind, v.x(k, c), x0);
        out[1] = component_feature(kind, mx, x0);
    };
    return f;
}

ClaimFunctional mv_tradeoff_functional(ModelPtr model) {
    require_model(model, "mv_tradeoff");
    if (model->n_factors() < 1) throw IncompatibleError("mv_tradeoff needs a model with a factor");
    const int c = model->n_traded();
    ClaimFunctional f;
    f.label = "mv_tradeoff";
    f.model = model;
    f.component = c;
    const int m = model->n_brownian();
    f.payoff = [model, m](const PathView& v) {
        ControlContext ctx;
        ctx.grid = v.grid;
        ctx.dim = m;
        ctx.state_dim = v.state_dim;
        Coefficients co;
        Eigen::VectorXd l;
        double k_t = 0.0;
        for (int k = 0; k < v.n_steps(); ++k) {
            ctx.step = k;
            ctx.w = v.w.first(static_cast<std::size_t>(k + 1) * m);
            ctx.state = v.state.first(static_cast<std::size_t>(k + 1) * v.state_dim);
            k_t += sq_market_price(*model, ctx, co, l);
        }
        return 0.5 * k_t * v.grid->dt();
    };
    if (model->market_price_depends_on_factors()) {
        // d/dy of 1/2 |lambda|^2 dt at each step, central differences
        f.sensitivity = [model, m, c](const PathView& v, std::span<double> g) {
            const int n = v.n_steps();
            const int ns = v.state_dim;
            std::vector<double> prefix(v.state.begin(), v.state.end());
            ControlContext ctx;
            ctx.grid = v.grid;
            ctx.dim = m;
            ctx.state_dim = ns;
            Coefficients co;
            Eigen::VectorXd l;
            for (int k = 0; k < n; ++k) {
                ctx.step = k;
                ctx.w = v.w.first(static_cast<std::size_t>(k + 1) * m);
                ctx.state = std::span<const double>(prefix.data(), static_cast<std::size_t>(k + 1) * ns);
                double& y = prefix[static_cast<std::size_t>(k) * ns + c];
                const double y0 = y;
                const double h = 1e-6 * std::max(std::fabs(y0), 1e-3);
                y = y0 + h;
                const double up = sq_market_price(*model, ctx, co, l);
                y = y0 - h;
                const double dn = sq_market_price(*model, ctx, co, l);
                y = y0;
                g[k] = 0.5 * v.grid->dt() * (up - dn) / (2.0 * h);
            }
            g[n] = 0.0;
        };
    } else {
        f.sensitivity = [](const PathView&, std::span<double> g) {
            std::fill(g.begin(), g.end(), 0.0);
        };
    }
    state_features(f, model, c);
    return f;
}

ClaimFunctional asset_forward(ModelPtr model, int asset) {
    require_model(model, "asset_forward");
    if (asset < 0 || asset >= model->n_traded()) {
        throw IncompatibleError("asset_forward: model " + model->family() + " has " +
                                std::to_string(model->n_traded()) + " traded assets");
    }
    ClaimFunctional f;
    f.label = "asset_forward";
    f.params = {{"asset", static_cast<double>(asset)}};
    f.model = model;
    f.component = asset;
    f.payoff = [asset](const PathView& v) { return v.x(v.n_steps(), asset); };
    f.sensitivity = [](const PathView& v, std::span<double> g) {
        std::fill(g.begin(), g.end(), 0.0);
        g[v.n_steps()] = 1.0;
    };
    state_features(f, model, asset);
    return f;
}

std::vector<std::string> claim_labels() {
    return {"linear", "quadratic", "put", "call", "lookback", "mv_tradeoff", "asset_forward"};
}

ClaimFunctional make_claim(const std::string& label, const std::map<std::string, double>& params,
                           ModelPtr model) {
    auto allow = [&](std::initializer_list<const char*> keys) {
        for (const auto& [k, v] : params) {
            bool ok = false;
            for (const char* a : keys) ok = ok || k == a;
            if (!ok) throw ConfigError("claim " + label + ": unknown parameter '" + k + "'");
        }
    };
    auto get = [&](const char* key, double dflt) {
        auto it = params.find(key);
        return it == params.end() ? dflt : it->second;
    };
    if (label == "linear") {
        allow({"c", "m"});
        const double m = get("m", model ? model->n_brownian() : 1);
        if (m < 1 || m != std::floor(m)) throw ConfigError("claim linear: m must be a positive integer");
        return linear_terminal(std::vector<double>(static_cast<std::size_t>(m), get("c", 1.0)));
    }
    if (label == "quadratic") {
        allow({});
        return quadratic_terminal();
    }
    if (label == "put" || label == "call") {
        allow({"strike"});
        if (!params.count("strike")) throw ConfigError("claim " + label + " needs 'strike'");
        return vanilla_on_factor(model, params.at("strike"),
                                 label == "put" ? OptionKind::Put : OptionKind::Call);
    }
    if (label == "lookback") {
        allow({});
        return lookback_put_on_factor(model);
    }
    if (label == "mv_tradeoff") {
        allow({});
        return mv_tradeoff_functional(model);
    }
    if (label == "asset_forward") {
        allow({"asset"});
        return asset_forward(model, static_cast<int>(get("asset", 0)));
    }
    std::ostringstream os;
    os << "unknown claim label '" << label << "'; available:";
    for (const auto& l : claim_labels()) os << ' ' << l;
    throw ConfigError(os.str());
}

// ---- sampler ----

ClaimSampler::ClaimSampler(const ClaimFunctional& claim, const BrownianEnsemble& ens)
    : claim_(claim), ens_(ens) {
    if (claim_.bound()) {
        throw IncompatibleError("claim " + claim_.label + " reads model state; give a state ensemble");
    }
    check();
}

ClaimSampler::ClaimSampler(const ClaimFunctional& claim, const StateEnsemble& states)
    : claim_(claim) {
    if (claim_.bound()) {
        if (claim_.model.get() != &states.model()) {
            throw IncompatibleError("claim " + claim_.label + " is bound to a different model");
        }
        states_.emplace(states);
    } else {
        ens_.emplace(states.ensemble());
    }
    check();
}

void ClaimSampler::check() const {
    if (claim_.required_dim > 0 && claim_.required_dim != dim()) {
        throw IncompatibleError("claim " + claim_.label + " needs Brownian dimension " +
                                std::to_string(claim_.required_dim) + ", ensemble has " +
                                std::to_string(dim()));
    }
}

const BrownianEnsemble& ClaimSampler::ensemble() const {
    return states_ ? states_->ensemble() : *ens_;
}

bool ClaimSampler::has_kernel() const {
    if (!claim_.has_kernel()) return false;
    return !claim_.bound() || claim_.model->autonomous(claim_.component);
}

namespace {

void bind_view(const ClaimSampler& s, ClaimSampler::Workspace& ws) {
    PathView& v = ws.view;
    v.grid = &s.grid();
    v.dim = s.dim();
    if (s.states()) {
        v.w = ws.spath.w;
        v.dw = ws.spath.dw;
        v.state = ws.spath.state;
        v.state_dim = s.states()->model().state_dim();
    } else {
        v.w = ws.bpath.w;
        v.dw = ws.bpath.dw;
        v.state = {};
        v.state_dim = 0;
    }
}

}  // namespace

void ClaimSampler::load(std::int64_t p, Workspace& ws) const {
    if (states_) {
        states_->fill(p, ws.spath);
    } else {
        ens_->fill(p, ws.bpath);
    }
    bind_view(*this, ws);
}

void ClaimSampler::load_increments(std::span<const double> dw, Workspace& ws) const {
    if (states_) {
        states_->simulate(dw, ws.spath);
    } else {
        const int m = dim();
        const std::size_t nm = dw.size();
        ws.bpath.dw.assign(dw.begin(), dw.end());
        ws.bpath.w.resize(nm + m);
        for (int j = 0; j < m; ++j) ws.bpath.w[j] = 0.0;
        for (std::size_t i = 0; i < nm; ++i) ws.bpath.w[i + m] = ws.bpath.w[i] + dw[i];
    }
    bind_view(*this, ws);
}

void ClaimSampler::kernel(Workspace& ws, std::span<double> out) const {
    if (!has_kernel()) {
        throw IncompatibleError("claim " + claim_.label + " has no derivative kernel here");
    }
    if (!states_) {
        claim_.raw_kernel(ws.view, out);
        return;
    }
    const int n = grid().n_steps(), m = dim();
    ws.sens.resize(n + 1);
    ws.jac.resize(n);
    ws.load.resize(static_cast<std::size_t>(n) * m);
    claim_.sensitivity(ws.view, ws.sens);
    component_tangent(*states_, ws.spath, claim_.component, ws.jac, ws.load);
    // adjoint sweep: a_j = g_j + a_{j+1} jac_j, kernel_k = a_{k+1} load_k
    double a = ws.sens[n];
    for (int k = n - 1; k >= 0; --k) {
        for (int j = 0; j < m; ++j) {
            out[static_cast<std::size_t>(k) * m + j] = a * ws.load[static_cast<std::size_t>(k) * m + j];
        }
        a = ws.sens[k] + a * ws.jac[k];
    }
}

ClaimSampler ClaimSampler::with_ensemble(const BrownianEnsemble& ens) const {
    if (states_) return ClaimSampler(claim_, states_->with_ensemble(ens));
    return ClaimSampler(claim_, ens);
}

void for_each_claim_path(const ClaimSampler& s,
                         const std::function<void(std::int64_t, ClaimSampler::Workspace&)>& fn) {
    const std::int64_t n = s.n_paths();
    parallel_for(block_count(n), [&](std::int64_t b) {
        ClaimSampler::Workspace ws;
        const std::int64_t lo = b * kPathBlock;
        const std::int64_t hi = std::min(n, lo + kPathBlock);
        for (std::int64_t p = lo; p < hi; ++p) {
            s.load(p, ws);
            fn(p, ws);
        }
    });
}

std::vector<double> claim_values(const ClaimSampler& s) {
    std::vector<double> out(static_cast<std::size_t>(s.n_paths()));
    for_each_claim_path(s, [&](std::int64_t p, ClaimSampler::Workspace& ws) {
        out[static_cast<std::size_t>(p)] = s.payoff(ws);
    });
    return out;
}

double kernel_directional(const ClaimSampler& s, ClaimSampler::Workspace& ws,
                          const ControlProcess& phi) {
    const int n = s.grid().n_steps(), m = s.dim();
    std::vector<double> ker(static_cast<std::size_t>(n) * m), ph(m);
    s.kernel(ws, ker);
    ControlContext ctx;
    ctx.grid = &s.grid();
    ctx.dim = m;
    ctx.state_dim = ws.view.state_dim;
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
        ctx.step = k;
        ctx.w = ws.view.w.first(static_cast<std::size_t>(k + 1) * m);
        if (ctx.state_dim > 0) {
            ctx.state = ws.view.state.first(static_cast<std::size_t>(k + 1) * ctx.state_dim);
        }
        phi.evaluate(ctx, ph);
        for (int j = 0; j < m; ++j) sum += ker[static_cast<std::size_t>(k) * m + j] * ph[j];
    }
    return sum * s.grid().dt();
}

MomentStability second_moment_stability(std::span<const double> values) {
    constexpr int kBlocks = 5;
    MomentStability r;
    const std::size_t n = values.size();
    if (n < 2 * kBlocks) throw ConfigError("second_moment_stability needs at least 10 values");
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = values[i] * values[i];
    const double pooled = mean(sq);
    r.stable = true;
    for (int b = 0; b < kBlocks; ++b) {
        const std::size_t lo = n * b / kBlocks, hi = n * (b + 1) / kBlocks;
        Estimate e = mean_estimate(std::span<const double>(sq).subspan(lo, hi - lo));
        r.block_second_moment.push_back(e.value);
        r.block_std_error.push_back(e.std_error);
        if (!std::isfinite(e.value) || std::fabs(e.value - pooled) > 5.0 * e.std_error) r.stable = false;
    }
    return r;
}

}  // namespace dualexp
