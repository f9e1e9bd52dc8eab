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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dualexp/functionals.hpp"
#include "dualexp/stats.hpp"

namespace dualexp {

// All monomials of total degree <= degree in q regressors, constant first.
class RegressionBasis {
public:
    RegressionBasis(int n_inputs, int degree);

    int degree() const { return degree_; }
    int n_inputs() const { return q_; }
    int size() const { return static_cast<int>(parent_.size()); }
    // out has size() entries
    void evaluate(std::span<const double> x, std::span<double> out) const;
    // exponent vector of monomial i
    std::vector<int> exponents(int i) const;

private:
    int q_, degree_;
    // monomial i = monomial parent_[i] times input factor_[i]
    std::vector<int> parent_, factor_;
};

enum class ClarkRoute { Auto, Kernel, Increment };

struct ClarkOptions {
    int degree = 3;
    ClarkRoute route = ClarkRoute::Auto;
    // Regress kernel . u instead of the full kernel (kernel route only).
    std::vector<double> kernel_direction;
    // Use only these claim regressors (empty: all).
    std::vector<int> feature_subset;
    // Per-path pass for the reconstruction residual.
    bool residual_pass = true;
    // Also test LS orthogonality of the per-step fit residual in that pass.
    bool orthogonality_check = false;
    // Keep payoffs of every path.
    bool store_values = false;
    // Kernel route, raw claims: evaluate the kernel on W + eps * int phi dt,
    // phi read from the unshifted path, while regressing on the unshifted path.
    std::shared_ptr<const ControlProcess> kernel_shift;
    double kernel_shift_epsilon = 0.0;
    int n_batches = 32;
};

struct ResidualStats {
    // R = F - mean(F) - sum_k psi_k . dW_k
    Estimate residual_mean;
    double residual_var = 0.0;
    // var(R) / var(F), delta-method standard error
    Estimate ratio;
    // per-path energies sum_k |psi_k|^2 dt
    Estimate energy;
    // mean of (F - mean F)^2 - energy
    Estimate variance_gap;
    // largest |z| of corr(fit residual, regressor), if checked
    std::optional<double> max_orthogonality_z;
};

class ClarkEstimate {
public:
    const ClaimSampler& sampler() const { return sampler_; }
    const RegressionBasis& basis() const { return basis_; }
    ClarkRoute route() const { return route_; }
    const char* route_name() const { return route_ == ClarkRoute::Kernel ? "kernel" : "increment"; }
    // Output dimension: m, or 1 with a kernel direction.
    int out_dim() const { return out_dim_; }
    // coefficients at step k, basis size x out_dim
    const Eigen::MatrixXd& beta(int k) const { return beta_[k]; }
    // sample second moment of the basis at step k (basis size squared)
    const Eigen::MatrixXd& gram(int k) const { return gram_[k]; }
    const std::vector<int>& features() const { return features_; }

    Estimate mean_f;
    double var_f = 0.0;
    Estimate var_f_estimate;
    // mean of sum_k |psi_k|^2 dt from the normal equations; batch-means error
    Estimate energy;
    std::optional<ResidualStats> residual;
    std::vector<double> values;  // when stored

    // psi at step k of the loaded path
    void psi(const ClaimSampler::Workspace& ws, int k, std::span<double> out) const {
        psi(ws.view, k, out);
    }
    // psi at step k from a path prefix; only t_0..t_k are read
    void psi(const PathView& v, int k, std::span<double> out) const;

private:
    friend ClarkEstimate clark_integrand(const ClaimSampler&, const ClarkOptions&);
    ClarkEstimate(ClaimSampler s, RegressionBasis b) : sampler_(std::move(s)), basis_(std::move(b)) {}
    ClaimSampler sampler_;
    RegressionBasis basis_;
    ClarkRoute route_ = ClarkRoute::Kernel;
    int out_dim_ = 0;
    std::vector<int> features_;
    std::vector<Eigen::MatrixXd> beta_;
    std::vector<Eigen::MatrixXd> gram_;
};

// Least-squares estimate of the martingale integrand of F.
ClarkEstimate clark_integrand(const ClaimSampler& sampler, const ClarkOptions& options = {});

// mean sum_k |ma^T beta_a(k)^T phi - mb^T beta_b(k)^T phi|^2 dt, from the
// Gram matrices of a. Both estimates must share ensemble and basis; ma, mb
// map their outputs to a common space.
double coefficient_gap_energy(const ClarkEstimate& a, const ClarkEstimate& b,
                              const Eigen::MatrixXd& ma, const Eigen::MatrixXd& mb);

struct KWDecomposition {
    std::optional<ClarkEstimate> psi;
    Estimate mean_f;        // E^{Q0}[F]
    Estimate var_f;
    Estimate energy_theta;  // traded part, sum |P_sigma psi|^2 dt
    Estimate energy_xi;     // orthogonal part, sum |N^T psi|^2 dt
    Estimate pythagoras;    // var(F) - energy_theta - energy_xi
    Estimate var_minus_theta;  // var(F) - energy_theta, per-path error
    Estimate cross_moment;  // sum_k (theta . dS_k)(xi . N^T dW_k)
    Estimate residual_ratio;  // var(R) / var(F)
    std::vector<double> values;
};

// Kunita-Watanabe split of F under the measure of the sampler's states.
KWDecomposition kw_decompose(const ClaimSampler& sampler, const ClarkOptions& options = {});

// var(R) / var(F) with standard error; NumericalFailure when var(F) = 0.
Estimate residual_variance(const ClarkEstimate& est);
Estimate residual_variance(const KWDecomposition& kw);

}  // namespace dualexp
