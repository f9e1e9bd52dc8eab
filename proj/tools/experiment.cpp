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

#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "dualexp/clark.hpp"
#include "dualexp/errors.hpp"
#include "dualexp/expansion.hpp"
#include "dualexp/oracle.hpp"

namespace dualexp::cli {

using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys = {"name", "kind", "model", "claim", "settings"};
const std::set<std::string> kSettingKeys = {"alpha", "eps", "rho", "n_paths", "n_steps", "horizon",
                                            "seed", "degree", "phi", "dp"};

template <class C>
std::string joined(const C& items) {
    std::string s;
    for (const auto& i : items) s += (s.empty() ? "" : ", ") + std::string(i);
    return s;
}

// Binds parameter names to fields; unknown names are errors.
using ParamTable = std::map<std::string, double*>;

void apply_params(const std::string& model, const std::map<std::string, double>& params, ParamTable table) {
    for (const auto& [k, v] : params) {
        auto it = table.find(k);
        if (it == table.end()) {
            std::vector<std::string> known;
            for (const auto& [name, ptr] : table) known.push_back(name);
            throw ConfigError("model " + model + ": unknown parameter '" + k + "' (known: " + joined(known) + ")");
        }
        *it->second = v;
    }
}

bool read_number_list(const json& j, const char* key, std::vector<double>& out, std::vector<std::string>& errs) {
    if (!j.contains(key)) return false;
    const json& v = j.at(key);
    if (v.is_number()) {
        out = {v.get<double>()};
    } else if (v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
        out = v.get<std::vector<double>>();
    } else {
        errs.push_back(std::string("settings.") + key + " must be a number or a list of numbers");
        return false;
    }
    if (out.empty()) errs.push_back(std::string("settings.") + key + " must not be empty");
    return true;
}

void read_params(const json& section, const std::string& where, std::map<std::string, double>& out,
                 std::vector<std::string>& errs) {
    if (!section.contains("params")) return;
    const json& p = section.at("params");
    if (!p.is_object()) {
        errs.push_back(where + ".params must be an object");
        return;
    }
    for (const auto& [k, v] : p.items()) {
        if (!v.is_number()) {
            errs.push_back(where + ".params." + k + " must be a number");
            continue;
        }
        out[k] = v.get<double>();
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

ClarkOptions clark_options(const ExperimentConfig& cfg) {
    ClarkOptions o;
    o.degree = cfg.degree;
    o.store_values = true;
    return o;
}

BrownianEnsemble ensemble(const ExperimentConfig& cfg, int dim) {
    return generate_ensemble(dim, TimeGrid(cfg.horizon, cfg.n_steps), cfg.n_paths, cfg.seed);
}

std::optional<double> closed_form(const ExperimentConfig& cfg, int dim, double eps) {
    if (cfg.claim == "linear") {
        auto it = cfg.claim_params.find("c");
        const double c = it == cfg.claim_params.end() ? 1.0 : it->second;
        return linear_control_value(std::vector<double>(dim, c), cfg.horizon, eps);
    }
    if (cfg.claim == "quadratic") return quadratic_control_value(cfg.horizon, eps);
    return std::nullopt;
}

Table run_price(const ExperimentConfig& cfg, const ModelPtr& model, const ClaimFunctional& claim) {
    const KWDecomposition kw = indifference_decomposition(claim, ensemble(cfg, model->n_brownian()), clark_options(cfg));
    const bool has_oracle = model->family() == "basis_risk_2d" && claim.component == 1;
    Table t;
    t.columns = {"alpha", "zeroth", "correction", "total", "oracle", "gap", "se_zeroth", "se_correction"};
    for (double a : cfg.alpha) {
        const ExpansionReport r = indifference_price_expansion(kw, a);
        std::optional<double> oracle, gap;
        if (has_oracle) {
            oracle = distortion_price(kw.values, a, model->params().at("rho")).value;
            gap = r.total - *oracle;
        }
        t.rows.push_back({a, r.zeroth.value, r.correction.value, r.total, oracle, gap, r.zeroth.std_error,
                          r.correction.std_error});
    }
    return t;
}

Table run_scaling(const ExperimentConfig& cfg, int dim, const ClaimFunctional& claim) {
    const ClarkEstimate est = clark_integrand(ClaimSampler(claim, ensemble(cfg, dim)), clark_options(cfg));
    Table t;
    t.columns = {"eps", "zeroth", "correction", "total", "oracle", "gap", "se_zeroth", "se_correction", "closed_form"};
    for (double e : cfg.eps) {
        const ExpansionReport r = control_value_expansion(est, e);
        const Estimate o = exponential_formula_value(est.values, e);
        t.rows.push_back({e, r.zeroth.value, r.correction.value, r.total, o.value, r.total - o.value,
                          r.zeroth.std_error, r.correction.std_error, closed_form(cfg, dim, e)});
    }
    return t;
}

Table run_verify(const ExperimentConfig& cfg, const ModelPtr& model, int dim, const ClaimFunctional& claim) {
    const BrownianEnsemble ens = ensemble(cfg, dim);
    const ControlProcess phi = ControlProcess::constant(std::vector<double>(dim, cfg.phi));
    const DirectionalReport d =
        claim.bound() ? verify_directional_derivative(
                            ClaimSampler(claim, StateEnsemble(model, MeasureSpec::physical(), ens)), phi, cfg.eps)
                      : verify_directional_derivative(ClaimSampler(claim, ens), phi, cfg.eps);
    const L2Report l2 = verify_l2_convergence(phi, ens, cfg.eps);
    Table t;
    t.columns = {"eps",      "finite_difference", "se_finite_difference", "ibp",
                 "se_ibp",   "difference",        "se_difference",        "residual",
                 "se_residual", "residual_ratio", "se_residual_ratio",    "l2_distance",
                 "se_l2_distance", "l2_ratio"};
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
        const auto& r = d.rows[i];
        std::optional<double> ratio, ratio_se, l2r;
        if (i < d.residual_ratios.size()) {
            ratio = d.residual_ratios[i].value;
            ratio_se = d.residual_ratios[i].std_error;
            l2r = l2.ratios[i];
        }
        t.rows.push_back({r.eps, r.finite_difference.value, r.finite_difference.std_error, r.ibp.value,
                          r.ibp.std_error, r.difference.value, r.difference.std_error, r.residual.value,
                          r.residual.std_error, ratio, ratio_se, l2.rows[i].distance, l2.rows[i].std_error, l2r});
    }
    return t;
}

Table run_entropy(const ExperimentConfig& cfg) {
    std::vector<double> rhos = cfg.rho;
    if (rhos.empty()) rhos = {build_model(cfg.model, cfg.model_params)->params().at("rho")};
    Table t;
    t.columns = {"rho", "zeroth", "correction", "total", "oracle", "gap", "se_zeroth", "se_correction", "dp"};
    for (double rho : rhos) {
        auto params = cfg.model_params;
        params["rho"] = rho;
        const ModelPtr model = build_model(cfg.model, params);
        const BrownianEnsemble ens = ensemble(cfg, model->n_brownian());
        const std::vector<double> hk = half_tradeoff_values(model, ens);
        const ExpansionReport r = memm_entropy_expansion(hk, rho);
        const Estimate o = entropy_minimum_value(hk, rho);
        std::optional<double> dp;
        if (cfg.dp) {
            EntropyDPOptions opt;
            opt.n_steps = cfg.n_steps;
            dp = entropy_dp_minimum(model, cfg.horizon, opt).value;
        }
        t.rows.push_back({rho, r.zeroth.value, r.correction.value, r.total, o.value, r.total - o.value,
                          r.zeroth.std_error, r.correction.std_error, dp});
    }
    return t;
}

Table run_oracle_compare(const ExperimentConfig& cfg, int dim, const ClaimFunctional& claim) {
    const std::vector<double> values = claim_values(ClaimSampler(claim, ensemble(cfg, dim)));
    DPInstance in;
    in.horizon = cfg.horizon;
    if (dim == 2) {
        // keeps (nodes x controls)^steps below the tree-size bound
        in.n_dp_steps = 2;
        in.control_points = 11;
    }
    Table t;
    t.columns = {"eps", "exponential_formula", "se_exponential_formula", "closed_form", "dp", "dp_gap"};
    for (double e : cfg.eps) {
        const Estimate x = exponential_formula_value(values, e);
        const std::optional<double> cf = closed_form(cfg, dim, e);
        const double dp = dp_control_value(claim, dim, e, in).value;
        t.rows.push_back({e, x.value, x.std_error, cf, dp, dp - (cf ? *cf : x.value)});
    }
    return t;
}

}  // namespace

std::vector<std::string> experiment_kinds() {
    return {"price", "expansion-scaling", "verify-lemma", "entropy", "oracle-compare"};
}

std::vector<std::string> model_names() {
    return {"brownian", "basis_risk_2d", "ou_stochastic_vol", "stochastic_correlation"};
}

ModelPtr build_model(const std::string& name, const std::map<std::string, double>& params) {
    if (name == "brownian") {
        for (const auto& [k, v] : params) {
            if (k != "m") throw ConfigError("model brownian: unknown parameter '" + k + "' (known: m)");
        }
        return nullptr;
    }
    if (name == "basis_risk_2d") {
        BasisRisk2DParams p;
        apply_params(name, params,
                     {{"mu_s", &p.mu_s}, {"sigma_s", &p.sigma_s}, {"mu_y", &p.mu_y}, {"sigma_y", &p.sigma_y},
                      {"rho", &p.rho}, {"s0", &p.s0}, {"y0", &p.y0}});
        return basis_risk_2d(p);
    }
    if (name == "ou_stochastic_vol") {
        OuVolParams p;
        apply_params(name, params,
                     {{"kappa", &p.kappa}, {"theta", &p.theta}, {"beta", &p.beta}, {"lambda0", &p.lambda0},
                      {"lambda_c", &p.lambda_c}, {"vol_base", &p.vol_base}, {"vol_loading", &p.vol_loading},
                      {"rho", &p.rho}, {"s0", &p.s0}, {"y0", &p.y0}});
        if (!(std::fabs(p.rho) < 1.0)) {
            throw ConfigError("ou_stochastic_vol requires |rho| < 1 (got rho = " + fmt(p.rho) + ")");
        }
        return ou_stochastic_vol(p);
    }
    if (name == "stochastic_correlation") {
        StochasticCorrelationParams p;
        apply_params(name, params,
                     {{"mu_s", &p.mu_s}, {"sigma_s", &p.sigma_s}, {"mu_y", &p.mu_y}, {"sigma_y", &p.sigma_y},
                      {"rho0", &p.rho0}, {"kappa_rho", &p.kappa_rho}, {"rho_bar", &p.rho_bar},
                      {"xi_rho", &p.xi_rho}, {"delta", &p.delta}, {"eta", &p.eta}, {"s0", &p.s0}, {"y0", &p.y0}});
        return stochastic_correlation_model(p);
    }
    throw ConfigError("unknown model '" + name + "'; available: " + joined(model_names()));
}

int brownian_dim(const ExperimentConfig& cfg, const ModelPtr& model) {
    if (model) return model->n_brownian();
    auto it = cfg.model_params.find("m");
    const double m = it == cfg.model_params.end() ? 1.0 : it->second;
    if (!(m >= 1.0 && m <= 8.0) || m != std::floor(m)) throw ConfigError("model brownian: m must be an integer in 1..8");
    return static_cast<int>(m);
}

std::vector<std::string> parse_config(const json& j, ExperimentConfig& cfg) {
    std::vector<std::string> errs;
    if (!j.is_object()) return {"config must be a JSON object"};
    cfg.raw = j;
    for (const auto& [k, v] : j.items()) {
        if (!kTopKeys.count(k)) errs.push_back("unknown key '" + k + "'");
    }
    if (j.contains("name")) {
        if (j.at("name").is_string()) cfg.name = j.at("name").get<std::string>();
        else errs.push_back("name must be a string");
    }
    if (!j.contains("kind") || !j.at("kind").is_string()) {
        errs.push_back("missing required string 'kind' (one of: " + joined(experiment_kinds()) + ")");
    } else {
        cfg.kind = j.at("kind").get<std::string>();
        const auto kinds = experiment_kinds();
        if (std::find(kinds.begin(), kinds.end(), cfg.kind) == kinds.end()) {
            errs.push_back("unknown kind '" + cfg.kind + "'; available: " + joined(kinds));
        }
    }
    if (!j.contains("model") || !j.at("model").is_object()) {
        errs.push_back("missing required object 'model'");
    } else {
        const json& m = j.at("model");
        for (const auto& [k, v] : m.items()) {
            if (k != "name" && k != "params") errs.push_back("unknown key 'model." + k + "'");
        }
        if (!m.contains("name") || !m.at("name").is_string()) errs.push_back("missing required string 'model.name'");
        else cfg.model = m.at("name").get<std::string>();
        read_params(m, "model", cfg.model_params, errs);
    }
    if (j.contains("claim")) {
        const json& c = j.at("claim");
        if (!c.is_object()) {
            errs.push_back("claim must be an object");
        } else {
            for (const auto& [k, v] : c.items()) {
                if (k != "label" && k != "params") errs.push_back("unknown key 'claim." + k + "'");
            }
            if (!c.contains("label") || !c.at("label").is_string()) errs.push_back("missing required string 'claim.label'");
            else cfg.claim = c.at("label").get<std::string>();
            read_params(c, "claim", cfg.claim_params, errs);
        }
    } else if (cfg.kind != "entropy") {
        errs.push_back("missing required object 'claim'");
    }

    const json s = j.contains("settings") ? j.at("settings") : json::object();
    if (!s.is_object()) {
        errs.push_back("settings must be an object");
    } else {
        for (const auto& [k, v] : s.items()) {
            if (!kSettingKeys.count(k)) errs.push_back("unknown key 'settings." + k + "'");
        }
        auto integer = [&](const char* key, auto& field, double lo, const char* rule) {
            if (!s.contains(key)) return;
            const json& v = s.at(key);
            if (!v.is_number() || v.get<double>() != std::floor(v.get<double>()) || v.get<double>() < lo) {
                errs.push_back(std::string(key) + " " + rule);
                return;
            }
            field = static_cast<std::remove_reference_t<decltype(field)>>(v.get<double>());
        };
        integer("n_paths", cfg.n_paths, 1000, "must be an integer >= 1000");
        integer("n_steps", cfg.n_steps, 1, "must be a positive integer");
        integer("seed", cfg.seed, 0, "must be a non-negative integer");
        if (s.contains("degree")) {
            const json& v = s.at("degree");
            if (!v.is_number_integer() || v.get<int>() < 0 || v.get<int>() > 6) {
                errs.push_back("basis degree must be an integer in 0..6");
            } else {
                cfg.degree = v.get<int>();
            }
        }
        if (s.contains("horizon")) {
            if (!s.at("horizon").is_number() || !(s.at("horizon").get<double>() > 0.0)) {
                errs.push_back("horizon must be positive");
            } else {
                cfg.horizon = s.at("horizon").get<double>();
            }
        }
        if (s.contains("phi")) {
            if (!s.at("phi").is_number()) errs.push_back("phi must be a number");
            else cfg.phi = s.at("phi").get<double>();
        }
        if (s.contains("dp")) {
            if (!s.at("dp").is_boolean()) errs.push_back("dp must be true or false");
            else cfg.dp = s.at("dp").get<bool>();
        }
        if (read_number_list(s, "alpha", cfg.alpha, errs)) {
            for (double a : cfg.alpha) {
                if (!(a > 0.0) || !std::isfinite(a)) errs.push_back("alpha must be positive (got " + fmt(a) + ")");
            }
        }
        if (read_number_list(s, "eps", cfg.eps, errs)) {
            for (double e : cfg.eps) {
                const bool strict = cfg.kind == "verify-lemma";
                if (!std::isfinite(e) || e < 0.0 || (strict && e == 0.0)) {
                    errs.push_back(std::string("eps must be ") + (strict ? "positive" : "non-negative") +
                                   " (got " + fmt(e) + ")");
                }
            }
        }
        if (read_number_list(s, "rho", cfg.rho, errs)) {
            for (double r : cfg.rho) {
                if (!(std::fabs(r) < 1.0)) errs.push_back("rho must satisfy |rho| < 1 (got " + fmt(r) + ")");
            }
        }
    }
    if (cfg.kind == "price" && cfg.alpha.empty()) errs.push_back("kind price needs settings.alpha");
    if ((cfg.kind == "expansion-scaling" || cfg.kind == "verify-lemma" || cfg.kind == "oracle-compare") &&
        cfg.eps.empty()) {
        errs.push_back("kind " + cfg.kind + " needs settings.eps");
    }
    if (!cfg.rho.empty() && cfg.kind != "entropy") errs.push_back("settings.rho is only used by kind entropy");
    // rho given in model params
    if (cfg.model_params.count("rho") && !(std::fabs(cfg.model_params.at("rho")) < 1.0)) {
        errs.push_back("model." + cfg.model + " requires |rho| < 1 (got rho = " + fmt(cfg.model_params.at("rho")) + ")");
    }
    return errs;
}

void check_compatibility(const ExperimentConfig& cfg, const ModelPtr& model, const ClaimFunctional* claim) {
    if (cfg.kind == "entropy") {
        if (!model || model->family() != "stochastic_vol") {
            throw IncompatibleError("kind entropy needs a stochastic volatility model (ou_stochastic_vol)");
        }
        if (claim && cfg.claim != "mv_tradeoff") {
            throw IncompatibleError("kind entropy works on the mean-variance trade-off; drop the claim or use mv_tradeoff");
        }
        return;
    }
    if (!claim) return;
    if (cfg.kind == "price") {
        if (!claim->bound()) throw IncompatibleError("kind price needs a claim on a market model, not '" + cfg.claim + "'");
        if (model->market_price_depends_on_factors()) {
            throw IncompatibleError("kind price: in model " + cfg.model +
                                    " the market price of risk depends on the factors, so the "
                                    "entropy-minimal measure is not identified");
        }
    }
    if ((cfg.kind == "expansion-scaling" || cfg.kind == "oracle-compare") && claim->bound()) {
        throw IncompatibleError("kind " + cfg.kind + " works on Brownian claims (linear, quadratic)");
    }
    if (cfg.kind == "oracle-compare") {
        const int dim = brownian_dim(cfg, model);
        if (dim > 2) throw IncompatibleError("kind oracle-compare: the DP tree handles at most 2 Brownian dimensions");
    }
}

std::vector<std::string> validate(const json& j) {
    ExperimentConfig cfg;
    std::vector<std::string> errs = parse_config(j, cfg);
    ModelPtr model;
    bool model_ok = false;
    try {
        model = build_model(cfg.model, cfg.model_params);
        brownian_dim(cfg, model);
        model_ok = true;
    } catch (const std::exception& e) {
        errs.push_back(e.what());
    }
    std::optional<ClaimFunctional> claim;
    if (model_ok && !cfg.claim.empty()) {
        try {
            claim = make_claim(cfg.claim, cfg.claim_params, model);
        } catch (const std::exception& e) {
            errs.push_back(e.what());
        }
    }
    if (model_ok && (claim || cfg.claim.empty())) {
        try {
            check_compatibility(cfg, model, claim ? &*claim : nullptr);
        } catch (const std::exception& e) {
            errs.push_back(std::string("incompatible: ") + e.what());
        }
    }
    // de-duplicate, keep order
    std::vector<std::string> out;
    for (auto& e : errs) {
        if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(std::move(e));
    }
    return out;
}

std::string Table::to_csv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) os << ',';
            if (r[i]) os << fmt(*r[i]);
        }
        os << '\n';
    }
    return os.str();
}

Table run_experiment(const ExperimentConfig& cfg) {
    const ModelPtr model = build_model(cfg.model, cfg.model_params);
    const int dim = brownian_dim(cfg, model);
    if (cfg.kind == "entropy") {
        std::optional<ClaimFunctional> claim;
        if (!cfg.claim.empty()) claim = make_claim(cfg.claim, cfg.claim_params, model);
        check_compatibility(cfg, model, claim ? &*claim : nullptr);
        return run_entropy(cfg);
    }
    const ClaimFunctional claim = make_claim(cfg.claim, cfg.claim_params, model);
    check_compatibility(cfg, model, &claim);
    if (cfg.kind == "price") return run_price(cfg, model, claim);
    if (cfg.kind == "expansion-scaling") return run_scaling(cfg, dim, claim);
    if (cfg.kind == "verify-lemma") return run_verify(cfg, model, dim, claim);
    if (cfg.kind == "oracle-compare") return run_oracle_compare(cfg, dim, claim);
    throw ConfigError("unknown kind '" + cfg.kind + "'");
}

}  // namespace dualexp::cli
