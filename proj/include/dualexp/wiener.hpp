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
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualexp/parallel.hpp"
#include "dualexp/stats.hpp"

namespace dualexp {

// Uniform grid t_k = k T / n on [0, T].
class TimeGrid {
public:
    TimeGrid(double horizon, int n_steps);

    double horizon() const { return horizon_; }
    int n_steps() const { return n_steps_; }
    double dt() const { return horizon_ / n_steps_; }
    double time(int k) const {
        return k == n_steps_ ? horizon_ : horizon_ * k / n_steps_;
    }

private:
    double horizon_;
    int n_steps_;
};

// What an adapted control may look at when producing its value at t_k:
// the driving path (and model state, if any) on t_0..t_k only.
struct ControlContext {
    const TimeGrid* grid = nullptr;
    int step = 0;
    int dim = 0;
    std::span<const double> w;      // (step + 1) * dim
    std::span<const double> state;  // (step + 1) * state_dim, may be empty
    int state_dim = 0;

    double time() const { return grid->time(step); }
    std::span<const double> w_now() const {
        return w.subspan(static_cast<std::size_t>(step) * dim, dim);
    }
    std::span<const double> state_now() const {
        return state.subspan(static_cast<std::size_t>(step) * state_dim, state_dim);
    }
};

// An adapted, dim-valued process given as a function of the path prefix.
class ControlProcess {
public:
    using Fn = std::function<void(const ControlContext&, std::span<double>)>;

    ControlProcess(int dim, Fn fn, std::string label = "control",
                   double bound = std::numeric_limits<double>::infinity());

    int dim() const { return dim_; }
    const std::string& label() const { return label_; }
    // Sup-norm bound if known, +inf otherwise.
    double bound() const { return bound_; }

    void evaluate(const ControlContext& ctx, std::span<double> out) const {
        fn_(ctx, out);
    }

    static ControlProcess zero(int dim);
    static ControlProcess constant(std::vector<double> value);
    // phi(t) with no path dependence.
    static ControlProcess deterministic(
        int dim, std::function<void(double, std::span<double>)> f,
        std::string label = "deterministic",
        double bound = std::numeric_limits<double>::infinity());
    // phi(t, W_t), Markov in the driving path.
    static ControlProcess markov(
        int dim,
        std::function<void(double, std::span<const double>, std::span<double>)> f,
        std::string label = "markov",
        double bound = std::numeric_limits<double>::infinity());

private:
    int dim_;
    Fn fn_;
    std::string label_;
    double bound_;
};

struct Shift {
    std::shared_ptr<const ControlProcess> control;
    double epsilon = 0.0;
};

// One simulated path with its increments. raw_dw holds the unshifted draws.
struct BrownianPath {
    std::vector<double> raw_dw;  // n * m
    std::vector<double> dw;      // n * m, after all shifts
    std::vector<double> w;       // (n + 1) * m, cumulative dw from 0
    // scratch for shift levels
    std::vector<double> level_w;
    std::vector<double> level_dw;
    std::vector<double> phi;
};

struct BrownianPathView {
    const TimeGrid* grid = nullptr;
    int dim = 0;
    std::span<const double> w;
    std::span<const double> dw;
};

using PathFunctional = std::function<double(const BrownianPathView&)>;

// Lazy ensemble of m-dimensional Brownian paths. Path p is a pure function of
// (seed, p) and the shift stack, so it can be regenerated at will. A
// materialised ensemble keeps its increments in memory instead.
class BrownianEnsemble {
public:
    BrownianEnsemble(TimeGrid grid, int dim, std::int64_t n_paths,
                     std::uint64_t seed, bool antithetic = false);

    const TimeGrid& grid() const { return grid_; }
    int dim() const { return dim_; }
    std::int64_t n_paths() const { return n_paths_; }
    std::uint64_t seed() const { return seed_; }
    bool antithetic() const { return antithetic_; }
    const std::vector<Shift>& shifts() const { return shifts_; }
    bool materialized() const { return static_cast<bool>(stored_); }

    // Generates path p into out (buffers are resized as needed).
    void fill(std::int64_t p, BrownianPath& out) const;

    BrownianEnsemble with_shift(Shift s) const;
    // Stores the (shifted) increments; the result has an empty shift stack.
    BrownianEnsemble materialize() const;
    // First n paths of this ensemble.
    BrownianEnsemble head(std::int64_t n) const;

    BrownianPathView view(const BrownianPath& path) const {
        return {&grid_, dim_, path.w, path.dw};
    }

private:
    TimeGrid grid_;
    int dim_;
    std::int64_t n_paths_;
    std::uint64_t seed_;
    bool antithetic_;
    std::vector<Shift> shifts_;
    std::shared_ptr<const std::vector<double>> stored_;
};

BrownianEnsemble generate_ensemble(int m, const TimeGrid& grid,
                                   std::int64_t n_paths, std::uint64_t seed,
                                   bool antithetic = false);

// Paths W + eps * int phi dt, with phi evaluated on the input path prefix.
BrownianEnsemble shift_paths(const BrownianEnsemble& ens,
                             const ControlProcess& phi, double eps);

// Applies one shift to increments dw_in (with cumulative path w_in); writes
// shifted increments/path and the control values phi_k to the outputs.
void apply_shift(const TimeGrid& grid, int dim, const ControlProcess& phi,
                 double eps, std::span<const double> w_in,
                 std::span<const double> dw_in, std::span<double> phi_out,
                 std::span<double> dw_out, std::span<double> w_out);

// Evaluates phi along a path (phi_out is n * m).
void evaluate_control(const TimeGrid& grid, int dim, const ControlProcess& phi,
                      std::span<const double> w, std::span<double> phi_out);

// Runs fn(p, path) over all paths in fixed blocks, in parallel.
void for_each_path(const BrownianEnsemble& ens,
                   const std::function<void(std::int64_t, const BrownianPath&)>& fn);

// Per-path scalar map, results in path order.
std::vector<double> map_paths(const BrownianEnsemble& ens,
                              const std::function<double(std::int64_t, const BrownianPath&)>& fn);

// Per-path discrete Ito sums sum_k phi(t_k) . dW_k.
std::vector<double> ito_integral(const ControlProcess& phi,
                                 const BrownianEnsemble& ens);

// Per-path discrete energies sum_k |phi(t_k)|^2 dt.
std::vector<double> control_energy(const ControlProcess& phi,
                                   const BrownianEnsemble& ens);

// Doleans exponential exp(-eps int phi dW - eps^2/2 int |phi|^2 dt) along the
// grid, stored path-major ((n + 1) values per path).
struct DoleansPaths {
    std::int64_t n_paths = 0;
    int n_steps = 0;
    std::vector<double> values;

    double at(std::int64_t p, int k) const {
        return values[static_cast<std::size_t>(p) * (n_steps + 1) + k];
    }
    double terminal(std::int64_t p) const { return at(p, n_steps); }
};

DoleansPaths doleans_exponential(const ControlProcess& phi, double eps,
                                 const BrownianEnsemble& ens);

// Terminal values only; usable on ensembles too large to store.
std::vector<double> doleans_terminal(const ControlProcess& phi, double eps,
                                     const BrownianEnsemble& ens);

struct GirsanovCheck {
    Estimate plain;     // E[F(W)]
    Estimate weighted;  // E[M_T F(W + eps Phi)]
    Estimate difference;
    bool within_4_sigma = false;
};

// Compares E[F(W)] with E[M_T F(W + eps Phi)] path by path.
GirsanovCheck girsanov_identity_check(const PathFunctional& f,
                                      const ControlProcess& phi, double eps,
                                      const BrownianEnsemble& ens);

}  // namespace dualexp
