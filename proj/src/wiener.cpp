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

#include "dualexp/wiener.hpp"

#include <cmath>
#include <stdexcept>

#include "dualexp/rng.hpp"

namespace dualexp {

TimeGrid::TimeGrid(double horizon, int n_steps)
    : horizon_(horizon), n_steps_(n_steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw std::invalid_argument("time grid horizon must be positive");
    }
    if (n_steps < 1) throw std::invalid_argument("time grid needs at least one step");
}

ControlProcess::ControlProcess(int dim, Fn fn, std::string label, double bound)
    : dim_(dim), fn_(std::move(fn)), label_(std::move(label)), bound_(bound) {
    if (dim < 1) throw std::invalid_argument("control dimension must be >= 1");
    if (!fn_) throw std::invalid_argument("control function is empty");
}

ControlProcess ControlProcess::zero(int dim) {
    return ControlProcess(
        dim, [](const ControlContext&, std::span<double> out) {
            for (double& v : out) v = 0.0;
        },
        "zero", 0.0);
}

ControlProcess ControlProcess::constant(std::vector<double> value) {
    double b = 0.0;
    for (double v : value) b = std::max(b, std::fabs(v));
    int dim = static_cast<int>(value.size());
    return ControlProcess(
        dim,
        [value = std::move(value)](const ControlContext&, std::span<double> out) {
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = value[j];
        },
        "constant", b);
}

ControlProcess ControlProcess::deterministic(
    int dim, std::function<void(double, std::span<double>)> f, std::string label,
    double bound) {
    return ControlProcess(
        dim,
        [f = std::move(f)](const ControlContext& ctx, std::span<double> out) {
            f(ctx.time(), out);
        },
        std::move(label), bound);
}

ControlProcess ControlProcess::markov(
    int dim,
    std::function<void(double, std::span<const double>, std::span<double>)> f,
    std::string label, double bound) {
    return ControlProcess(
        dim,
        [f = std::move(f)](const ControlContext& ctx, std::span<double> out) {
            f(ctx.time(), ctx.w_now(), out);
        },
        std::move(label), bound);
}

BrownianEnsemble::BrownianEnsemble(TimeGrid grid, int dim, std::int64_t n_paths,
                                   std::uint64_t seed, bool antithetic)
    : grid_(grid), dim_(dim), n_paths_(n_paths), seed_(seed), antithetic_(antithetic) {
    if (dim < 1) throw std::invalid_argument("Brownian dimension must be >= 1");
    if (n_paths < 1) throw std::invalid_argument("ensemble needs at least one path");
}

namespace {

void cumulate(int n, int m, std::span<const double> dw, std::span<double> w) {
    for (int j = 0; j < m; ++j) w[j] = 0.0;
    for (int k = 0; k < n; ++k) {
        const std::size_t a = static_cast<std::size_t>(k) * m;
        for (int j = 0; j < m; ++j) w[a + m + j] = w[a + j] + dw[a + j];
    }
}

}  // namespace

void BrownianEnsemble::fill(std::int64_t p, BrownianPath& out) const {
    if (p < 0 || p >= n_paths_) throw std::out_of_range("path index out of range");
    const int n = grid_.n_steps();
    const int m = dim_;
    const std::size_t nm = static_cast<std::size_t>(n) * m;
    out.raw_dw.resize(nm);
    out.dw.resize(nm);
    out.w.resize(nm + m);

    if (stored_) {
        const double* src = stored_->data() + static_cast<std::size_t>(p) * nm;
        std::copy(src, src + nm, out.raw_dw.begin());
    } else {
        NormalStream stream(seed_);
        std::uint64_t src_path = static_cast<std::uint64_t>(p);
        double sign = 1.0;
        if (antithetic_) {
            src_path = static_cast<std::uint64_t>(p) & ~std::uint64_t{1};
            sign = (p & 1) ? -1.0 : 1.0;
        }
        stream.fill(src_path, 0, out.raw_dw);
        const double scale = sign * std::sqrt(grid_.dt());
        for (double& v : out.raw_dw) v *= scale;
    }

    if (shifts_.empty()) {
        std::copy(out.raw_dw.begin(), out.raw_dw.end(), out.dw.begin());
        cumulate(n, m, out.dw, out.w);
        return;
    }

    // Level l is the path after the first l shifts; control l sees level l-1.
    const std::size_t levels = shifts_.size() + 1;
    out.level_w.resize(levels * (nm + m));
    out.level_dw.resize(levels * nm);
    out.phi.resize(m);
    auto lw = [&](std::size_t l) {
        return std::span<double>(out.level_w.data() + l * (nm + m), nm + m);
    };
    auto ldw = [&](std::size_t l) {
        return std::span<double>(out.level_dw.data() + l * nm, nm);
    };
    std::copy(out.raw_dw.begin(), out.raw_dw.end(), ldw(0).begin());
    for (std::size_t l = 0; l < levels; ++l) {
        for (int j = 0; j < m; ++j) lw(l)[j] = 0.0;
    }
    const double dt = grid_.dt();
    ControlContext ctx;
    ctx.grid = &grid_;
    ctx.dim = m;
    for (int k = 0; k < n; ++k) {
        const std::size_t a = static_cast<std::size_t>(k) * m;
        for (std::size_t l = 1; l < levels; ++l) {
            const Shift& s = shifts_[l - 1];
            ctx.step = k;
            ctx.w = std::span<const double>(lw(l - 1).data(), a + m);
            s.control->evaluate(ctx, out.phi);
            for (int j = 0; j < m; ++j) {
                ldw(l)[a + j] = ldw(l - 1)[a + j] + s.epsilon * out.phi[j] * dt;
            }
        }
        for (std::size_t l = 0; l < levels; ++l) {
            for (int j = 0; j < m; ++j) lw(l)[a + m + j] = lw(l)[a + j] + ldw(l)[a + j];
        }
    }
    std::copy(ldw(levels - 1).begin(), ldw(levels - 1).end(), out.dw.begin());
    std::copy(lw(levels - 1).begin(), lw(levels - 1).end(), out.w.begin());
}

BrownianEnsemble BrownianEnsemble::with_shift(Shift s) const {
    if (!s.control) throw std::invalid_argument("shift without control");
    if (s.control->dim() != dim_) {
        throw std::invalid_argument("control dimension does not match ensemble dimension");
    }
    if (!std::isfinite(s.epsilon)) throw std::invalid_argument("shift size must be finite");
    BrownianEnsemble out = *this;
    out.shifts_.push_back(std::move(s));
    return out;
}

BrownianEnsemble BrownianEnsemble::materialize() const {
    const std::size_t nm = static_cast<std::size_t>(grid_.n_steps()) * dim_;
    auto data = std::make_shared<std::vector<double>>(nm * static_cast<std::size_t>(n_paths_));
    for_each_path(*this, [&](std::int64_t p, const BrownianPath& path) {
        std::copy(path.dw.begin(), path.dw.end(),
                  data->begin() + static_cast<std::ptrdiff_t>(p * nm));
    });
    BrownianEnsemble out = *this;
    out.shifts_.clear();
    out.stored_ = std::move(data);
    return out;
}

BrownianEnsemble BrownianEnsemble::head(std::int64_t n) const {
    if (n < 1 || n > n_paths_) throw std::invalid_argument("head: bad path count");
    BrownianEnsemble out = *this;
    out.n_paths_ = n;
    return out;
}

BrownianEnsemble generate_ensemble(int m, const TimeGrid& grid,
                                   std::int64_t n_paths, std::uint64_t seed,
                                   bool antithetic) {
    return BrownianEnsemble(grid, m, n_paths, seed, antithetic);
}

BrownianEnsemble shift_paths(const BrownianEnsemble& ens,
                             const ControlProcess& phi, double eps) {
    return ens.with_shift({std::make_shared<const ControlProcess>(phi), eps});
}

void evaluate_control(const TimeGrid& grid, int dim, const ControlProcess& phi,
                      std::span<const double> w, std::span<double> phi_out) {
    ControlContext ctx;
    ctx.grid = &grid;
    ctx.dim = dim;
    for (int k = 0; k < grid.n_steps(); ++k) {
        const std::size_t a = static_cast<std::size_t>(k) * dim;
        ctx.step = k;
        ctx.w = w.subspan(0, a + dim);
        phi.evaluate(ctx, phi_out.subspan(a, dim));
    }
}

void apply_shift(const TimeGrid& grid, int dim, const ControlProcess& phi,
                 double eps, std::span<const double> w_in,
                 std::span<const double> dw_in, std::span<double> phi_out,
                 std::span<double> dw_out, std::span<double> w_out) {
    evaluate_control(grid, dim, phi, w_in, phi_out);
    const double dt = grid.dt();
    for (std::size_t i = 0; i < dw_in.size(); ++i) {
        dw_out[i] = dw_in[i] + eps * phi_out[i] * dt;
    }
    cumulate(grid.n_steps(), dim, dw_out, w_out);
}

void for_each_path(const BrownianEnsemble& ens,
                   const std::function<void(std::int64_t, const BrownianPath&)>& fn) {
    const std::int64_t n = ens.n_paths();
    parallel_for(block_count(n), [&](std::int64_t b) {
        BrownianPath path;
        const std::int64_t lo = b * kPathBlock;
        const std::int64_t hi = std::min(n, lo + kPathBlock);
        for (std::int64_t p = lo; p < hi; ++p) {
            ens.fill(p, path);
            fn(p, path);
        }
    });
}

std::vector<double> map_paths(
    const BrownianEnsemble& ens,
    const std::function<double(std::int64_t, const BrownianPath&)>& fn) {
    std::vector<double> out(static_cast<std::size_t>(ens.n_paths()));
    for_each_path(ens, [&](std::int64_t p, const BrownianPath& path) {
        out[static_cast<std::size_t>(p)] = fn(p, path);
    });
    return out;
}

std::vector<double> ito_integral(const ControlProcess& phi,
                                 const BrownianEnsemble& ens) {
    if (phi.dim() != ens.dim()) throw std::invalid_argument("ito_integral: dimension mismatch");
    const TimeGrid& g = ens.grid();
    const int m = ens.dim();
    return map_paths(ens, [&](std::int64_t, const BrownianPath& path) {
        std::vector<double> v(path.dw.size());
        evaluate_control(g, m, phi, path.w, v);
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * path.dw[i];
        return s;
    });
}

std::vector<double> control_energy(const ControlProcess& phi,
                                   const BrownianEnsemble& ens) {
    if (phi.dim() != ens.dim()) throw std::invalid_argument("control_energy: dimension mismatch");
    const TimeGrid& g = ens.grid();
    const int m = ens.dim();
    return map_paths(ens, [&](std::int64_t, const BrownianPath& path) {
        std::vector<double> v(path.dw.size());
        evaluate_control(g, m, phi, path.w, v);
        double s = 0.0;
        for (double x : v) s += x * x;
        return s * g.dt();
    });
}

namespace {

// Fills log M along the grid for one path.
void log_doleans(const TimeGrid& g, int m, const ControlProcess& phi, double eps,
                 const BrownianPath& path, std::vector<double>& v,
                 std::span<double> log_m) {
    v.resize(path.dw.size());
    evaluate_control(g, m, phi, path.w, v);
    const double dt = g.dt();
    log_m[0] = 0.0;
    for (int k = 0; k < g.n_steps(); ++k) {
        double ito = 0.0, sq = 0.0;
        for (int j = 0; j < m; ++j) {
            const double f = v[static_cast<std::size_t>(k) * m + j];
            ito += f * path.dw[static_cast<std::size_t>(k) * m + j];
            sq += f * f;
        }
        log_m[k + 1] = log_m[k] - eps * ito - 0.5 * eps * eps * sq * dt;
    }
}

}  // namespace

DoleansPaths doleans_exponential(const ControlProcess& phi, double eps,
                                 const BrownianEnsemble& ens) {
    if (phi.dim() != ens.dim()) throw std::invalid_argument("doleans_exponential: dimension mismatch");
    const int n = ens.grid().n_steps();
    DoleansPaths out;
    out.n_paths = ens.n_paths();
    out.n_steps = n;
    const double cells = static_cast<double>(n + 1) * static_cast<double>(ens.n_paths());
    if (cells > 2.5e8) {
        throw std::invalid_argument("doleans_exponential: ensemble too large to store; use doleans_terminal");
    }
    out.values.resize(static_cast<std::size_t>(cells));
    for_each_path(ens, [&](std::int64_t p, const BrownianPath& path) {
        std::vector<double> v;
        std::span<double> lm(out.values.data() + static_cast<std::size_t>(p) * (n + 1), n + 1);
        log_doleans(ens.grid(), ens.dim(), phi, eps, path, v, lm);
        for (double& x : lm) x = std::exp(x);
    });
    return out;
}

std::vector<double> doleans_terminal(const ControlProcess& phi, double eps,
                                     const BrownianEnsemble& ens) {
    if (phi.dim() != ens.dim()) throw std::invalid_argument("doleans_terminal: dimension mismatch");
    const int n = ens.grid().n_steps();
    return map_paths(ens, [&](std::int64_t, const BrownianPath& path) {
        std::vector<double> v, lm(n + 1);
        log_doleans(ens.grid(), ens.dim(), phi, eps, path, v, lm);
        return std::exp(lm[n]);
    });
}

GirsanovCheck girsanov_identity_check(const PathFunctional& f,
                                      const ControlProcess& phi, double eps,
                                      const BrownianEnsemble& ens) {
    if (phi.dim() != ens.dim()) throw std::invalid_argument("girsanov check: dimension mismatch");
    const TimeGrid& g = ens.grid();
    const int m = ens.dim();
    const int n = g.n_steps();
    const std::size_t np = static_cast<std::size_t>(ens.n_paths());
    std::vector<double> plain(np), weighted(np), diff(np);
    for_each_path(ens, [&](std::int64_t p, const BrownianPath& path) {
        std::vector<double> v, lm(n + 1), phi_v(path.dw.size()),
            sdw(path.dw.size()), sw(path.w.size());
        log_doleans(g, m, phi, eps, path, v, lm);
        apply_shift(g, m, phi, eps, path.w, path.dw, phi_v, sdw, sw);
        const double a = f({&g, m, path.w, path.dw});
        const double b = std::exp(lm[n]) * f({&g, m, sw, sdw});
        plain[p] = a;
        weighted[p] = b;
        diff[p] = b - a;
    });
    GirsanovCheck out;
    out.plain = mean_estimate(plain);
    out.weighted = mean_estimate(weighted);
    out.difference = mean_estimate(diff);
    out.within_4_sigma =
        std::fabs(out.difference.value) <= 4.0 * out.difference.std_error;
    return out;
}

}  // namespace dualexp
