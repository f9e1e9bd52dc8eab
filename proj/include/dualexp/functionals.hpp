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

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualexp/models.hpp"
#include "dualexp/wiener.hpp"

namespace dualexp {

// Everything a payoff may read from one simulated path.
struct PathView {
    const TimeGrid* grid = nullptr;
    int dim = 0;
    std::span<const double> w;      // (n + 1) * m, driving Brownian path
    std::span<const double> dw;     // n * m, its increments
    std::span<const double> state;  // (n + 1) * state_dim, empty for raw claims
    int state_dim = 0;

    int n_steps() const { return grid->n_steps(); }
    double x(int k, int c) const { return state[static_cast<std::size_t>(k) * state_dim + c]; }
};

// A payoff F(W) with an optional derivative kernel. Raw claims read the
// Brownian path and carry kernel(path) as n x m values. Claims bound to a
// model read one state component and carry its payoff sensitivity
// dF/dx_c(t_j), j = 0..n; the kernel then follows from the model tangent.
class ClaimFunctional {
public:
    using Payoff = std::function<double(const PathView&)>;
    using Fill = std::function<void(const PathView&, std::span<double>)>;
    using FeatureFill = std::function<void(const PathView&, int, std::span<double>)>;

    std::string label;
    std::map<std::string, double> params;
    ModelPtr model;           // null for raw claims
    int component = -1;       // state component read by a bound claim
    int required_dim = 0;     // raw claims: 0 = any
    Payoff payoff;
    Fill raw_kernel;          // raw claims
    Fill sensitivity;         // bound claims
    int n_features = 0;
    FeatureFill features;     // regressors at step k

    bool bound() const { return static_cast<bool>(model); }
    bool has_kernel() const { return bound() ? static_cast<bool>(sensitivity) : static_cast<bool>(raw_kernel); }
    double evaluate(const PathView& v) const { return payoff(v); }
};

// F = c . W(T); kernel c.
ClaimFunctional linear_terminal(std::vector<double> c);
// F = W(T)^2 (one-dimensional); kernel 2 W(T).
ClaimFunctional quadratic_terminal();

enum class OptionKind { Call, Put };

// (Y(T) - K)^+ or (K - Y(T))^+ on a named state component.
ClaimFunctional vanilla_on_factor(ModelPtr model, double strike, OptionKind kind,
                                  const std::string& component = "Y");
// max_k Y(t_k) - Y(T) over grid points, ties to the earliest index.
ClaimFunctional lookback_put_on_factor(ModelPtr model, const std::string& component = "Y");
// 1/2 K_T with K_T = sum_k |lambda^S(t_k)|^2 dt (left point rule).
ClaimFunctional mv_tradeoff_functional(ModelPtr model);
// F = S^i(T); fully hedgeable.
ClaimFunctional asset_forward(ModelPtr model, int asset = 0);

// Labels accepted by make_claim.
std::vector<std::string> claim_labels();
ClaimFunctional make_claim(const std::string& label, const std::map<std::string, double>& params,
                           ModelPtr model);

// Binds a claim to its source of paths (a Brownian ensemble for raw claims, a
// state ensemble for bound claims) and gives uniform access to payoffs,
// kernels and regressors.
class ClaimSampler {
public:
    struct Workspace {
        BrownianPath bpath;
        StatePath spath;
        PathView view;
        std::vector<double> sens, jac, load, adj;
        std::vector<double> shifted_dw;
    };

    ClaimSampler(const ClaimFunctional& claim, const BrownianEnsemble& ens);
    ClaimSampler(const ClaimFunctional& claim, const StateEnsemble& states);

    const ClaimFunctional& claim() const { return claim_; }
    const BrownianEnsemble& ensemble() const;
    const StateEnsemble* states() const { return states_ ? &*states_ : nullptr; }
    const TimeGrid& grid() const { return ensemble().grid(); }
    int dim() const { return ensemble().dim(); }
    std::int64_t n_paths() const { return ensemble().n_paths(); }
    int n_features() const { return claim_.n_features; }
    // A kernel exists and the claimed component admits a pathwise tangent.
    bool has_kernel() const;

    // Loads path p of the ensemble.
    void load(std::int64_t p, Workspace& ws) const;
    // Loads the path driven by the given increments (e.g. shifted ones).
    void load_increments(std::span<const double> dw, Workspace& ws) const;

    double payoff(const Workspace& ws) const { return claim_.evaluate(ws.view); }
    // kernel at every step, n * m values
    void kernel(Workspace& ws, std::span<double> out) const;
    void features(const Workspace& ws, int k, std::span<double> out) const {
        claim_.features(ws.view, k, out);
    }
    // Same sampler on another ensemble (e.g. shifted or with a new seed).
    ClaimSampler with_ensemble(const BrownianEnsemble& ens) const;

private:
    ClaimFunctional claim_;
    std::optional<BrownianEnsemble> ens_;
    std::optional<StateEnsemble> states_;
    void check() const;
};

// Runs fn over all paths in fixed blocks, one workspace per block.
void for_each_claim_path(const ClaimSampler& s,
                         const std::function<void(std::int64_t, ClaimSampler::Workspace&)>& fn);

// Payoffs of every path, in path order.
std::vector<double> claim_values(const ClaimSampler& s);

// Pathwise sum_k kernel_k . phi_k dt of the current path.
double kernel_directional(const ClaimSampler& s, ClaimSampler::Workspace& ws,
                          const ControlProcess& phi);

// Second-moment stability across 5 disjoint blocks of paths: true when the
// block estimates agree within 5 relative standard errors.
struct MomentStability {
    std::vector<double> block_second_moment;
    std::vector<double> block_std_error;
    bool stable = false;
};
MomentStability second_moment_stability(std::span<const double> values);

}  // namespace dualexp
