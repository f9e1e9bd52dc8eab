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

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualexp/wiener.hpp"

namespace dualexp {

// Coefficients of the market at one point, filled by a model:
//   dS^i = S^i (mu_s^i dt + sigma^i . dW),  dY = mu_y dt + beta dW.
struct Coefficients {
    Eigen::VectorXd mu_s;   // d
    Eigen::MatrixXd sigma;  // d x m
    Eigen::VectorXd mu_y;   // k
    Eigen::MatrixXd beta;   // k x m

    void resize(int d, int k, int m) {
        if (mu_s.size() != d) mu_s.resize(d);
        if (sigma.rows() != d || sigma.cols() != m) sigma.resize(d, m);
        if (mu_y.size() != k) mu_y.resize(k);
        if (beta.rows() != k || beta.cols() != m) beta.resize(k, m);
    }
};

// ctx.state holds the state prefix [S, Y] in levels; ctx.w the driving path.
using CoefficientMap = std::function<void(const ControlContext&, Coefficients&)>;

// How a state component is scaled when used as a regressor.
enum class ComponentKind { Positive, Signed };

struct ModelSpec {
    std::string family;
    int n_traded = 1;
    int n_brownian = 2;
    std::vector<double> s0;
    std::vector<double> y0;
    std::vector<std::string> factor_names;
    std::vector<ComponentKind> factor_kinds;
    // Per-factor clamp interval (lo, hi); empty means unbounded.
    std::vector<std::array<double, 2>> factor_bounds;
    CoefficientMap coefficients;
    bool constant_coefficients = false;
    // lambda^S depends on the non-traded factors.
    bool market_price_depends_on_factors = true;
    // Component c of the state evolves using only (t, its own value, dW).
    std::vector<bool> autonomous;
    // The one-step map of component c is linear in its own level (constant
    // parameters), so d x(k+1) / d x(k) = x(k+1) / x(k) whenever the measure
    // integrand does not depend on the state.
    std::vector<bool> homogeneous;
    std::map<std::string, double> params;
};

class ItoMarketModel {
public:
    explicit ItoMarketModel(ModelSpec spec);

    const std::string& family() const { return spec_.family; }
    int n_traded() const { return spec_.n_traded; }
    int n_brownian() const { return spec_.n_brownian; }
    int n_factors() const { return static_cast<int>(spec_.y0.size()); }
    int state_dim() const { return n_traded() + n_factors(); }
    const std::vector<double>& initial_state() const { return x0_; }
    const std::map<std::string, double>& params() const { return spec_.params; }
    bool constant_coefficients() const { return spec_.constant_coefficients; }
    bool market_price_depends_on_factors() const {
        return spec_.market_price_depends_on_factors;
    }
    bool autonomous(int component) const { return spec_.autonomous.at(component); }
    bool homogeneous(int component) const { return spec_.homogeneous.at(component); }
    ComponentKind component_kind(int component) const;
    std::string component_name(int component) const;
    // Index of a state component by name ("S", "S2", "Y", "rho", ...).
    int component_index(const std::string& name) const;
    double clamp_factor(int j, double y) const;

    void coefficients(const ControlContext& ctx, Coefficients& c) const;

private:
    ModelSpec spec_;
    std::vector<double> x0_;
};

using ModelPtr = std::shared_ptr<const ItoMarketModel>;

// lambda = sigma^T (sigma sigma^T)^{-1} mu_s.
void market_price_of_risk(const Coefficients& c, Eigen::VectorXd& lambda);

// Point versions: the state is [S, Y] in levels at time t.
Eigen::VectorXd market_price_of_risk(const ItoMarketModel& model, double t,
                                     std::span<const double> state);
Eigen::VectorXd project_admissible(const ItoMarketModel& model, double t,
                                   std::span<const double> state,
                                   const Eigen::VectorXd& raw);

// Orthonormal basis (m x (m - d)) of the null space of sigma. Columns are
// Gram-Schmidt images of the coordinate axes, so a block sigma = (s, 0)
// gives exactly the trailing axes.
Eigen::MatrixXd admissible_basis(const Eigen::MatrixXd& sigma);

// Orthogonal projector onto the null space of sigma.
Eigen::MatrixXd admissible_projector(const Eigen::MatrixXd& sigma);

// Equivalent local martingale measures q = lambda + N gamma, or the physical
// measure (q = 0 in the dynamics).
class MeasureSpec {
public:
    enum class Kind { Physical, Martingale };
    using GammaFn = std::function<void(const ControlContext&, std::span<double>)>;

    static MeasureSpec physical();
    static MeasureSpec minimal_martingale();
    static MeasureSpec constant_gamma(std::vector<double> gamma, std::string label = "");
    static MeasureSpec with_gamma(int gamma_dim, GammaFn gamma, std::string label);

    Kind kind() const { return kind_; }
    const std::string& label() const { return label_; }
    bool zero_gamma() const { return !gamma_; }
    // Deterministic constant gamma (empty function of the state).
    bool constant() const { return constant_; }
    int gamma_dim() const { return gamma_dim_; }
    void gamma(const ControlContext& ctx, std::span<double> out) const;

private:
    Kind kind_ = Kind::Martingale;
    std::string label_;
    int gamma_dim_ = 0;
    bool constant_ = true;
    GammaFn gamma_;
};

// Girsanov integrand q of the measure at the current point (zero for P).
void measure_integrand(const ItoMarketModel& model, const MeasureSpec& measure,
                       const ControlContext& ctx, const Coefficients& c,
                       Eigen::VectorXd& q);

// Projects a raw control onto ker(sigma) at each step; needs the state.
ControlProcess project_admissible(ModelPtr model, const ControlProcess& raw);

struct Perturbation {
    std::shared_ptr<const ControlProcess> control;
    double epsilon = 0.0;
};

struct StatePath {
    BrownianPath brownian;        // ensemble draws (Q or P Brownian motion)
    std::vector<double> dw;       // n * m: dW + eps phi dt
    std::vector<double> w;        // (n + 1) * m: cumulative dw
    std::vector<double> state;    // (n + 1) * (d + k), levels
    std::vector<double> q;        // n * m: measure integrand
    std::vector<double> phi;      // n * m: perturbation values
    std::vector<double> vol;      // n * (d + k) * m: rows of sigma and beta per step
    Coefficients coef;
    Eigen::VectorXd lambda, qk;
    std::vector<double> gamma_buf, phi_buf;
};

// Lazy simulated state: each path is simulated on demand from the ensemble.
class StateEnsemble {
public:
    StateEnsemble(ModelPtr model, MeasureSpec measure, BrownianEnsemble ens,
                  Perturbation perturbation = {});

    const ItoMarketModel& model() const { return *model_; }
    ModelPtr model_ptr() const { return model_; }
    const MeasureSpec& measure() const { return measure_; }
    const BrownianEnsemble& ensemble() const { return ens_; }
    const Perturbation& perturbation() const { return perturbation_; }
    const TimeGrid& grid() const { return ens_.grid(); }
    std::int64_t n_paths() const { return ens_.n_paths(); }

    void fill(std::int64_t p, StatePath& out) const;
    // Simulates from externally supplied Brownian increments.
    void simulate(std::span<const double> dw_in, StatePath& out,
                  std::int64_t path_id = -1) const;

    StateEnsemble with_ensemble(BrownianEnsemble ens) const;
    StateEnsemble with_perturbation(Perturbation p) const;

private:
    ModelPtr model_;
    MeasureSpec measure_;
    BrownianEnsemble ens_;
    Perturbation perturbation_;
};

StateEnsemble simulate_state(ModelPtr model, const MeasureSpec& measure,
                             const Perturbation& perturbation,
                             const BrownianEnsemble& ens);

void for_each_state_path(const StateEnsemble& states,
                         const std::function<void(std::int64_t, const StatePath&)>& fn);

std::vector<double> map_state_paths(
    const StateEnsemble& states,
    const std::function<double(std::int64_t, const StatePath&)>& fn);

// Sensitivities of an autonomous state component c along a simulated path:
// jac[k] = d x_c(k+1) / d x_c(k) and load[k m + j] = d x_c(k+1) / d dW_k^j.
void component_tangent(const StateEnsemble& states, const StatePath& path,
                       int component, std::span<double> jac,
                       std::span<double> load);

// Terminal density Z_T = exp(-sum q.dW - 1/2 sum |q|^2 dt) of `target`
// along paths simulated under the physical measure.
std::vector<double> density_terminal(const StateEnsemble& physical_states,
                                     const MeasureSpec& target);

// ---- model families ----

struct BasisRisk2DParams {
    double mu_s = 0.12, sigma_s = 0.3;
    double mu_y = 0.1, sigma_y = 0.3;
    double rho = 0.75;
    double s0 = 100.0, y0 = 100.0;
};
ModelPtr basis_risk_2d(const BasisRisk2DParams& p);

struct StochasticVolParams {
    std::function<double(double)> sigma;   // sigma(y) > 0
    std::function<double(double)> lambda;  // lambda(y)
    std::function<double(double)> a;       // factor drift under P
    std::function<double(double)> b;       // factor volatility
    double rho = 0.9;
    double s0 = 100.0, y0 = 0.0;
    bool lambda_constant = false;
    std::map<std::string, double> echo;
};
ModelPtr stochastic_vol_model(const StochasticVolParams& p);

// OU factor a = kappa (theta - y), b = beta; lambda = lambda0 + lambda_c y;
// sigma(y) = vol_base exp(vol_loading y).
struct OuVolParams {
    double kappa = 1.0, theta = 0.4, beta = 0.3;
    double lambda0 = 0.0, lambda_c = 1.0;
    double vol_base = 0.2, vol_loading = 0.0;
    double rho = 0.9;
    double s0 = 100.0, y0 = 0.4;
};
ModelPtr ou_stochastic_vol(const OuVolParams& p);

struct MultiAssetParams {
    Eigen::VectorXd mu_s;     // d
    Eigen::MatrixXd sigma_s;  // d x d, invertible
    Eigen::VectorXd mu_y;     // k
    Eigen::VectorXd sigma_y;  // k
    Eigen::MatrixXd rho;      // k x d loadings of each factor on W^S
    Eigen::VectorXd s0, y0;
};
ModelPtr multi_asset_basis_risk(const MultiAssetParams& p);

struct StochasticCorrelationParams {
    double mu_s = 0.12, sigma_s = 0.3;
    double mu_y = 0.1, sigma_y = 0.3;
    double rho0 = 0.75, kappa_rho = 1.0, rho_bar = 0.75, xi_rho = 0.3;
    double delta = 0.2, eta = 0.2;
    double s0 = 100.0, y0 = 100.0;
};
// rho follows d rho = kappa (rho_bar - rho) dt + xi (1 - rho^2) dW^rho,
// clamped to [-1 + 1e-6, 1 - 1e-6].
ModelPtr stochastic_correlation_model(const StochasticCorrelationParams& p);

}  // namespace dualexp
