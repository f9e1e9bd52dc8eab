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

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualexp/clark.hpp"
#include "dualexp/models.hpp"
#include "dualexp/stats.hpp"

namespace dualexp {

struct ReportMetadata {
    std::string claim;
    std::string model;    // "brownian" for raw claims
    std::string measure;
    std::string basis;    // e.g. "monomial-3"
    std::string route;    // Clark route that produced the correction
    std::uint64_t seed = 0;
    std::int64_t n_paths = 0;
    int n_steps = 0;
};

// Two-term expansion value = zeroth + correction + O(order^remainder_exponent).
struct ExpansionReport {
    Estimate zeroth;
    Estimate correction;
    double total = 0.0;
    double order_parameter = 0.0;  // epsilon, alpha or 1 - rho^2
    int remainder_exponent = 4;
    ReportMetadata metadata;
};

// Sets total = zeroth + correction.
ExpansionReport make_report(Estimate zeroth, Estimate correction, double order_parameter,
                            int remainder_exponent, ReportMetadata metadata);

ReportMetadata describe(const ClarkEstimate& est);

// sup_phi E[F(W + eps int phi) - 1/2 int |phi|^2] ~ E[F] + 1/2 eps^2 E int |psi|^2.
ExpansionReport control_value_expansion(const ClaimSampler& sampler, double eps,
                                        const ClarkOptions& options = {});
// Same, reusing an integrand estimate (common random numbers across eps).
ExpansionReport control_value_expansion(const ClarkEstimate& est, double eps);

// Where a first-order control lives: all of R^m (abstract problem) or the
// null space of sigma (market problem).
enum class ControlSpace { Full, Admissible };

// phi_hat = eps psi_hat as an adapted control; in the admissible space the
// integrand is projected onto ker(sigma) at the current state.
struct FirstOrderControl {
    std::shared_ptr<const ClarkEstimate> psi;
    double epsilon = 0.0;
    ControlSpace space = ControlSpace::Full;
    ControlProcess control;
};

FirstOrderControl first_order_control(const ClarkEstimate& est, double eps,
                                      ControlSpace space = ControlSpace::Full);

// Plug-in value of E[F(W + eps Phi) - 1/2 int |phi|^2 dt] by re-simulation on
// the sampler's paths. Bound claims are simulated with the control as a
// perturbation of the state dynamics (the control must be admissible there).
Estimate evaluate_objective(const ClaimSampler& sampler, const ControlProcess& phi, double eps);

// One fixed-point step phi1 = eps E[kernel(W + eps Phi_hat) | F_t], regressed
// on the unshifted path. change = sample L2 norm of phi1 - phi_hat.
struct FixedPointStep {
    std::shared_ptr<const ClarkEstimate> refined;
    double change = 0.0;
    double relative_change = 0.0;  // change / L2 norm of phi_hat
};

FixedPointStep refine_control(const FirstOrderControl& control, const ClarkOptions& options = {});

// Indifference price of a seller of F at risk aversion alpha, at time 0:
// E^{Q0}[F] + 1/2 alpha E int |xi|^2 dt. Q0 = Q_M, so lambda^S must not
// depend on the factors.
ExpansionReport indifference_price_expansion(const KWDecomposition& kw, double alpha);
ExpansionReport indifference_price_expansion(const ClaimFunctional& claim, const BrownianEnsemble& ens,
                                             double alpha, const ClarkOptions& options = {});

// Same expansion in mean-variance form: E[F] + 1/2 alpha (var F - E int |theta sigma|^2).
ExpansionReport mean_variance_form(const KWDecomposition& kw, double alpha);
ExpansionReport mean_variance_form(const ClaimFunctional& claim, const BrownianEnsemble& ens,
                                   double alpha, const ClarkOptions& options = {});

// KW decomposition under Q_M on the given Brownian ensemble.
KWDecomposition indifference_decomposition(const ClaimFunctional& claim, const BrownianEnsemble& ens,
                                           const ClarkOptions& options = {});

// I(Q_a | Q_b) = E^{Q_a}[1/2 sum |q_a - q_b|^2 dt], simulated under Q_a.
Estimate relative_entropy_mc(ModelPtr model, const MeasureSpec& measure_a,
                             const MeasureSpec& measure_b, const BrownianEnsemble& ens);

// 1/2 K_T per path under Q_M (stochastic volatility models).
std::vector<double> half_tradeoff_values(ModelPtr model, const BrownianEnsemble& ens);

// I(Q_E|P) ~ E^{Q_M}[K_T / 2] - 1/8 (1 - rho^2) var^{Q_M}(K_T).
ExpansionReport memm_entropy_expansion(ModelPtr model, const BrownianEnsemble& ens);
// From precomputed 1/2 K_T values.
ExpansionReport memm_entropy_expansion(std::span<const double> half_k, double rho,
                                       ReportMetadata metadata = {});

}  // namespace dualexp
