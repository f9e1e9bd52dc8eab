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

#include <span>
#include <vector>

#include "dualexp/functionals.hpp"
#include "dualexp/models.hpp"
#include "dualexp/stats.hpp"

namespace dualexp {

// Exact value of sup_phi E[F(W + eps Phi) - 1/2 int |phi|^2 dt]. With v = eps phi
// the problem is eps^-2 sup_v E[eps^2 F(W + V) - 1/2 int |v|^2 dt], and the
// variational formula log E[e^G] = sup_v E[G(W + V) - 1/2 int |v|^2 dt] gives
//   value = eps^-2 log E[exp(eps^2 F(W))].
// Delta-method standard error. NumericalFailure when exp(eps^2 F) has no
// stable second moment across blocks of paths, or is not finite.
Estimate exponential_formula_value(std::span<const double> values, double eps);
Estimate exponential_formula_value(const ClaimSampler& sampler, double eps);

// eps^-2 log E[exp(eps^2 F)] - closed forms for the Gaussian claims:
// linear c.W(T): 1/2 |c|^2 T; quadratic W(T)^2: -eps^-2 1/2 log(1 - 2 eps^2 T).
double linear_control_value(std::span<const double> c, double horizon, double eps);
double quadratic_control_value(double horizon, double eps);

// Seller's indifference price in constant-parameter 2D basis risk for a claim
// on the non-traded factor: (a (1 - rho^2))^-1 log E^{Q_M}[exp(a (1 - rho^2) F)].
// values are payoffs simulated under Q_M.
Estimate distortion_price(std::span<const double> values, double alpha, double rho);
Estimate distortion_price(const ClaimFunctional& claim, double alpha, const BrownianEnsemble& ens);

// Minimal entropy over martingale measures in a stochastic volatility model,
// from 1/2 K_T simulated under Q_M: with s = 1 - rho^2,
//   I(Q_E|P) = inf_phi E[F(W + eps Phi) + 1/2 int phi^2] = -s^-1 log E[exp(-s K_T / 2)].
Estimate entropy_minimum_value(std::span<const double> half_k, double rho);

// Brute-force backward induction for the control problem on a small tree.
struct DPInstance {
    double horizon = 1.0;
    int n_dp_steps = 3;       // at most 4
    int nodes = 9;            // Gauss-Hermite nodes per axis, 7..15
    int control_points = 41;  // per axis, odd, at most 41
    // Combine trees with 1..n_dp_steps steps to remove the O(dt) and O(dt^2)
    // terms of piecewise-constant controls.
    bool richardson = true;
};

struct DPResult {
    double value = 0.0;              // extrapolated (or the deepest tree)
    std::vector<double> by_depth;    // value of the tree with d + 1 steps
    double bound = 0.0;              // B of the control grid
    long long evaluations = 0;       // payoff evaluations
    int widened_nodes = 0;           // nodes whose optimiser needed a wider grid
};

// sup over piecewise-constant adapted controls of E[F(W + eps Phi) - 1/2 sum |phi|^2 dt]
// on a Gauss-Hermite tree. Controls range over [-B, B]^m with B = 4 eps sd(F)
// and a parabolic polish around the best grid point. An optimiser on the grid
// boundary widens the grid (at most 8 times) and then fails. Raw claims only.
DPResult dp_control_value(const ClaimFunctional& claim, int dim, double eps, const DPInstance& instance);

// Entropy minimum of a one-factor stochastic volatility model by dynamic
// programming on a lattice in y: controls gamma on a grid with parabolic
// polish, Gauss-Hermite expectations, cubic interpolation.
struct EntropyDPOptions {
    int n_steps = 256;
    int y_points = 801;
    double y_width = 8.0;  // lattice half width in units of b(y0) sqrt(T)
    int nodes = 9;
    int control_points = 41;
};
struct EntropyDPResult {
    double value = 0.0;   // I(Q_E|P) at (0, y0)
    double zeroth = 0.0;  // E^{Q_M}[K_T / 2] on the same lattice
    int widened_nodes = 0;
};
EntropyDPResult entropy_dp_minimum(ModelPtr model, double horizon, const EntropyDPOptions& options = {});

// d/deps E[F(W + eps Phi)] at 0 by central differences versus E[F(W) (phi.W)_T],
// with the second-order residual E[F(W + eps Phi) - F(W) - eps F(W) (phi.W)_T].
struct DirectionalRow {
    double eps = 0.0;
    Estimate finite_difference;
    Estimate ibp;
    Estimate difference;  // finite_difference - ibp, per path
    Estimate residual;
};
struct DirectionalReport {
    std::vector<DirectionalRow> rows;
    // residual(eps_i) / residual(eps_{i+1}), delta-method error; rows sorted by eps descending
    std::vector<Estimate> residual_ratios;
    // second-order coefficient of the residual, least squares on eps^2
    double residual_eps2_coefficient = 0.0;
};
DirectionalReport verify_directional_derivative(const ClaimSampler& sampler, const ControlProcess& phi,
                                                std::vector<double> eps_list);

// || (1 - M_T(eps)) / eps - (phi.W)_T ||_2 with M = exp(-eps phi.W - eps^2/2 int |phi|^2).
struct L2Row {
    double eps = 0.0;
    double distance = 0.0;
    double std_error = 0.0;  // of the squared distance, mapped through sqrt
};
struct L2Report {
    std::vector<L2Row> rows;
    std::vector<double> ratios;  // distance(eps_i) / distance(eps_{i+1}), eps descending
};
L2Report verify_l2_convergence(const ControlProcess& phi, const BrownianEnsemble& ens,
                               std::vector<double> eps_list);

}  // namespace dualexp
