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

#include "dualexp/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "dualexp/errors.hpp"
#include "dualexp/parallel.hpp"

namespace dualexp {

namespace {

// s^-1 log E[exp(s F)], delta-method error, moment stability checked.
Estimate entropic_value(std::span<const double> values, double s, const char* what) {
    if (values.size() < 10) throw ConfigError(std::string(what) + ": need at least 10 values");
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericalFailure(std::string(what) + ": non-finite payoff");
    }
    if (s == 0.0) return mean_estimate(values);
    const double m = mean(values);
    double top = -std::numeric_limits<double>::infinity();
    for (double v : values) top = std::max(top, s * (v - m));
    std::vector<double> y(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) y[i] = std::exp(s * (values[i] - m) - top);
    if (!second_moment_stability(y).stable) {
        throw NumericalFailure(std::string(what) +
                               ": exp(s F) has no stable second moment across path blocks "
                               "(exponential moment likely infinite)");
    }
    const double my = mean(y);
    double value;
    if (std::fabs(top) < 1.0) {
        // small exponents: log1p of mean expm1 keeps the digits that log(mean) loses
        std::vector<double> e(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) e[i] = std::expm1(s * (values[i] - m));
        value = m + std::log1p(mean(e)) / s;
    } else {
        value = m + (top + std::log(my)) / s;
    }
    if (!std::isfinite(value)) {
        throw NumericalFailure(std::string(what) + ": exp(s F) overflows");
    }
    const double se = std::sqrt(variance(y) / static_cast<double>(y.size())) / my / std::fabs(s);
    return {value, se, static_cast<std::int64_t>(values.size())};
}

// Probabilists' Gauss-Hermite rule by Golub-Welsch; weights sum to one.
void gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(static_cast<double>(i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    x.resize(n);
    w.resize(n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = es.eigenvalues()(i);
        w[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
        sum += w[i];
    }
    if (std::fabs(sum - 1.0) > 1e-12) throw NumericalFailure("Gauss-Hermite weights do not sum to one");
    for (double& v : w) v /= sum;
}

// Vertex of the parabola through (-h, a), (0, b), (h, c), as an offset.
double parabola_offset(double a, double b, double c, double h) {
    const double den = a - 2.0 * b + c;
    if (!(den < 0.0)) return 0.0;  // not concave: keep the grid point
    return 0.5 * h * (a - c) / den;
}

// Neville extrapolation to h = 0 of values at h = 1, 1/2, ..., 1/n.
double extrapolate_to_zero(const std::vector<double>& f) {
    std::vector<double> p = f;
    const int n = static_cast<int>(f.size());
    for (int lvl = 1; lvl < n; ++lvl) {
        for (int i = n - 1; i >= lvl; --i) {
            const double hi = 1.0 / (i + 1), hj = 1.0 / (i - lvl + 1);
            p[i] = (hj * p[i] - hi * p[i - 1]) / (hj - hi);
        }
    }
    return p[n - 1];
}

class TreeSolver {
public:
    TreeSolver(const ClaimFunctional& claim, int dim, double eps, double horizon, int depth,
               const std::vector<double>& z, const std::vector<double>& wz, int control_points)
        : claim_(claim), m_(dim), eps_(eps), grid_(horizon, depth), depth_(depth), z_(z), wz_(wz),
          cp_(control_points) {
        dt_ = grid_.dt();
        sq_ = std::sqrt(dt_);
        // tensor nodes for m axes
        const int q = static_cast<int>(z.size());
        int total = 1;
        for (int a = 0; a < m_; ++a) total *= q;
        node_idx_.resize(static_cast<std::size_t>(total) * m_);
        node_w_.resize(total);
        for (int t = 0; t < total; ++t) {
            int r = t;
            double w = 1.0;
            for (int a = 0; a < m_; ++a) {
                const int i = r % q;
                r /= q;
                node_idx_[static_cast<std::size_t>(t) * m_ + a] = i;
                w *= wz[i];
            }
            node_w_[t] = w;
        }
    }

    // moments of F on the uncontrolled tree
    void payoff_moments(double& mean_f, double& var_f) {
        std::vector<double> w(static_cast<std::size_t>(depth_ + 1) * m_, 0.0);
        double s1 = 0.0, s2 = 0.0;
        moments_rec(0, 1.0, w, s1, s2);
        mean_f = s1;
        var_f = std::max(0.0, s2 - s1 * s1);
    }

    double solve(double bound, long long& evals, int& widened) {
        bound_ = bound;
        std::vector<double> w(static_cast<std::size_t>(depth_ + 1) * m_, 0.0);
        Stats st;
        const double v = value(0, w, st, true);
        evals = st.evals;
        widened = st.widened;
        return v;
    }

private:
    struct Stats {
        long long evals = 0;
        int widened = 0;
    };

    double payoff(const std::vector<double>& w, std::vector<double>& dw) const {
        dw.resize(static_cast<std::size_t>(depth_) * m_);
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = w[i + m_] - w[i];
        PathView v{&grid_, m_, w, dw, {}, 0};
        return claim_.evaluate(v);
    }

    void moments_rec(int k, double prob, std::vector<double>& w, double& s1, double& s2) const {
        if (k == depth_) {
            std::vector<double> dw;
            const double f = payoff(w, dw);
            s1 += prob * f;
            s2 += prob * f * f;
            return;
        }
        for (std::size_t t = 0; t < node_w_.size(); ++t) {
            for (int a = 0; a < m_; ++a) {
                w[static_cast<std::size_t>(k + 1) * m_ + a] =
                    w[static_cast<std::size_t>(k) * m_ + a] + sq_ * z_[node_idx_[t * m_ + a]];
            }
            moments_rec(k + 1, prob * node_w_[t], w, s1, s2);
        }
    }

    // E over the next increment given control u at step k, plus the running cost
    double control_value(int k, const double* u, std::vector<double>& w, Stats& st) const {
        double cost = 0.0;
        for (int a = 0; a < m_; ++a) cost += u[a] * u[a];
        double ev = 0.0;
        for (std::size_t t = 0; t < node_w_.size(); ++t) {
            for (int a = 0; a < m_; ++a) {
                w[static_cast<std::size_t>(k + 1) * m_ + a] = w[static_cast<std::size_t>(k) * m_ + a] +
                                                              eps_ * u[a] * dt_ + sq_ * z_[node_idx_[t * m_ + a]];
            }
            ev += node_w_[t] * value(k + 1, w, st, false);
        }
        return ev - 0.5 * cost * dt_;
    }

    double value(int k, std::vector<double>& w, Stats& st, bool top) const {
        if (k == depth_) {
            ++st.evals;
            thread_local std::vector<double> dw;
            return payoff(w, dw);
        }
        if (bound_ == 0.0 || cp_ == 1) {
            std::vector<double> u(m_, 0.0);
            return control_value(k, u.data(), w, st);
        }
        double b = bound_;
        for (int attempt = 0; attempt <= 8; ++attempt, b *= 2.0) {
            const double h = 2.0 * b / (cp_ - 1);
            long long total = 1;
            for (int a = 0; a < m_; ++a) total *= cp_;
            std::vector<double> vals(static_cast<std::size_t>(total));
            auto eval_index = [&](long long t, std::vector<double>& wl, Stats& s) {
                std::vector<double> u(m_);
                long long r = t;
                for (int a = 0; a < m_; ++a) {
                    u[a] = -b + h * static_cast<double>(r % cp_);
                    r /= cp_;
                }
                return control_value(k, u.data(), wl, s);
            };
            if (top) {
                std::vector<Stats> part(static_cast<std::size_t>(total));
                parallel_for(total, [&](std::int64_t t) {
                    std::vector<double> wl = w;
                    vals[static_cast<std::size_t>(t)] = eval_index(t, wl, part[static_cast<std::size_t>(t)]);
                });
                for (const Stats& s : part) {
                    st.evals += s.evals;
                    st.widened += s.widened;
                }
            } else {
                for (long long t = 0; t < total; ++t) vals[static_cast<std::size_t>(t)] = eval_index(t, w, st);
            }
            const long long best = std::max_element(vals.begin(), vals.end()) - vals.begin();
            std::vector<int> idx(m_);
            bool interior = true;
            {
                long long r = best;
                for (int a = 0; a < m_; ++a) {
                    idx[a] = static_cast<int>(r % cp_);
                    r /= cp_;
                    if (idx[a] == 0 || idx[a] == cp_ - 1) interior = false;
                }
            }
            if (!interior) {
                ++st.widened;
                continue;
            }
            // parabolic polish, one axis at a time
            std::vector<double> u(m_);
            for (int a = 0; a < m_; ++a) u[a] = -b + h * idx[a];
            double best_val = vals[static_cast<std::size_t>(best)];
            long long stride = 1;
            for (int a = 0; a < m_; ++a) {
                const double lo = vals[static_cast<std::size_t>(best - stride)];
                const double hi = vals[static_cast<std::size_t>(best + stride)];
                const double off = parabola_offset(lo, vals[static_cast<std::size_t>(best)], hi, h);
                if (off != 0.0) {
                    std::vector<double> cand = u;
                    cand[a] += off;
                    const double cv = control_value(k, cand.data(), w, st);
                    if (cv > best_val) {
                        best_val = cv;
                        u = cand;
                    }
                }
                stride *= cp_;
            }
            return best_val;
        }
        throw NumericalFailure("dp_control_value: optimiser stays on the control-grid boundary after widening");
    }

    const ClaimFunctional& claim_;
    int m_;
    double eps_;
    TimeGrid grid_;
    int depth_;
    const std::vector<double>& z_;
    const std::vector<double>& wz_;
    int cp_;
    double dt_ = 0.0, sq_ = 0.0, bound_ = 0.0;
    std::vector<int> node_idx_;
    std::vector<double> node_w_;
};

// Cubic Lagrange interpolation on a uniform grid; edge stencils extrapolate.
double cubic_interp(const std::vector<double>& f, double x0, double h, double x) {
    const int n = static_cast<int>(f.size());
    const double t = (x - x0) / h;
    int i = static_cast<int>(std::floor(t)) - 1;
    i = std::clamp(i, 0, n - 4);
    const double u = t - i;  // position relative to node i
    const double l0 = -(u - 1) * (u - 2) * (u - 3) / 6.0;
    const double l1 = u * (u - 2) * (u - 3) / 2.0;
    const double l2 = -u * (u - 1) * (u - 3) / 2.0;
    const double l3 = u * (u - 1) * (u - 2) / 6.0;
    return l0 * f[i] + l1 * f[i + 1] + l2 * f[i + 2] + l3 * f[i + 3];
}

}  // namespace

Estimate exponential_formula_value(std::span<const double> values, double eps) {
    if (!std::isfinite(eps)) throw ConfigError("epsilon must be finite");
    return entropic_value(values, eps * eps, "exponential_formula_value");
}

Estimate exponential_formula_value(const ClaimSampler& sampler, double eps) {
    return exponential_formula_value(claim_values(sampler), eps);
}

double linear_control_value(std::span<const double> c, double horizon, double eps) {
    double c2 = 0.0;
    for (double v : c) c2 += v * v;
    return 0.5 * eps * eps * c2 * horizon;
}

double quadratic_control_value(double horizon, double eps) {
    const double a = 2.0 * eps * eps * horizon;
    if (!(a < 1.0)) throw NumericalFailure("quadratic claim: E[exp(eps^2 W_T^2)] is infinite for 2 eps^2 T >= 1");
    if (eps == 0.0) return horizon;
    return -0.5 * std::log1p(-a) / (eps * eps);
}

Estimate distortion_price(std::span<const double> values, double alpha, double rho) {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(std::fabs(rho) < 1.0)) throw ConfigError("distortion_price requires |rho| < 1");
    const double s = alpha * (1.0 - rho * rho);
    if (s < 1e-12) return mean_estimate(values);
    return entropic_value(values, s, "distortion_price");
}

Estimate distortion_price(const ClaimFunctional& claim, double alpha, const BrownianEnsemble& ens) {
    if (!claim.bound() || claim.model->family() != "basis_risk_2d") {
        throw IncompatibleError("distortion_price is available for claims in the basis_risk_2d model only");
    }
    if (claim.component != 1) {
        throw IncompatibleError("distortion_price needs a claim on the non-traded factor Y");
    }
    const double rho = claim.model->params().at("rho");
    StateEnsemble states(claim.model, MeasureSpec::minimal_martingale(), ens);
    return distortion_price(claim_values(ClaimSampler(claim, states)), alpha, rho);
}

Estimate entropy_minimum_value(std::span<const double> half_k, double rho) {
    if (!(std::fabs(rho) <= 1.0)) throw ConfigError("entropy_minimum_value requires |rho| <= 1");
    return entropic_value(half_k, -(1.0 - rho * rho), "entropy_minimum_value");
}

DPResult dp_control_value(const ClaimFunctional& claim, int dim, double eps, const DPInstance& in) {
    if (claim.bound()) throw IncompatibleError("dp_control_value works on raw Brownian claims");
    if (claim.required_dim != 0 && claim.required_dim != dim) {
        throw IncompatibleError("claim " + claim.label + " needs dimension " + std::to_string(claim.required_dim));
    }
    if (dim < 1) throw ConfigError("dp_control_value: dimension must be positive");
    if (in.n_dp_steps < 1 || in.n_dp_steps > 4) throw ConfigError("n_dp_steps must be in 1..4");
    if (in.nodes < 7 || in.nodes > 15) throw ConfigError("Gauss-Hermite nodes must be in 7..15");
    if (in.control_points < 3 || in.control_points > 41 || in.control_points % 2 == 0) {
        throw ConfigError("control_points must be odd and in 3..41");
    }
    if (!(in.horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (!std::isfinite(eps)) throw ConfigError("epsilon must be finite");
    double per_step = 1.0;
    for (int a = 0; a < dim; ++a) per_step *= static_cast<double>(in.nodes) * in.control_points;
    if (std::pow(per_step, in.n_dp_steps) >= 1e8) {
        throw ConfigError("dp_control_value: tree size (nodes x controls)^steps must stay below 1e8");
    }
    std::vector<double> z, w;
    gauss_hermite(in.nodes, z, w);
    DPResult r;
    const int first = in.richardson ? 1 : in.n_dp_steps;
    for (int depth = first; depth <= in.n_dp_steps; ++depth) {
        TreeSolver t(claim, dim, eps, in.horizon, depth, z, w, in.control_points);
        double mf, vf;
        t.payoff_moments(mf, vf);
        const double bound = 4.0 * std::fabs(eps) * std::sqrt(vf);
        if (depth == in.n_dp_steps) r.bound = bound;
        long long ev = 0;
        int wid = 0;
        r.by_depth.push_back(t.solve(bound, ev, wid));
        r.evaluations += ev;
        r.widened_nodes += wid;
    }
    r.value = in.richardson ? extrapolate_to_zero(r.by_depth) : r.by_depth.back();
    return r;
}

EntropyDPResult entropy_dp_minimum(ModelPtr model, double horizon, const EntropyDPOptions& o) {
    if (!model || model->family() != "stochastic_vol") {
        throw IncompatibleError("entropy_dp_minimum needs a stochastic_vol model");
    }
    if (o.n_steps < 1 || o.y_points < 8 || !(o.y_width > 0.0) || !(horizon > 0.0)) {
        throw ConfigError("entropy_dp_minimum: invalid lattice options");
    }
    if (o.nodes < 7 || o.nodes > 15 || o.control_points < 3 || o.control_points % 2 == 0) {
        throw ConfigError("entropy_dp_minimum: invalid quadrature or control grid");
    }
    const double rho = model->params().at("rho");
    const double eps = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    const TimeGrid grid(horizon, o.n_steps);
    const double dt = grid.dt(), sq = std::sqrt(dt);
    const int m = model->n_brownian();
    const double s0 = model->initial_state()[0], y0 = model->initial_state()[1];
    std::vector<double> z, wz;
    gauss_hermite(o.nodes, z, wz);

    // coefficients on the lattice (time-homogeneous family)
    auto coef_at = [&](double y, double& half_l2, double& drift, double& vol, double& ctl_load) {
        std::vector<double> st = {s0, y};
        ControlContext ctx;
        ctx.grid = &grid;
        ctx.dim = m;
        ctx.state_dim = 2;
        ctx.state = st;
        std::vector<double> wv(m, 0.0);
        ctx.w = wv;
        Coefficients c;
        c.resize(1, 1, m);
        model->coefficients(ctx, c);
        Eigen::VectorXd lam;
        market_price_of_risk(c, lam);
        const Eigen::MatrixXd nb = admissible_basis(c.sigma);
        half_l2 = 0.5 * lam.squaredNorm();
        drift = c.mu_y(0) - c.beta.row(0).dot(lam);
        vol = c.beta.row(0).norm();
        ctl_load = c.beta.row(0).dot(nb.col(0));
    };
    double h0, d0, b0, c0;
    coef_at(y0, h0, d0, b0, c0);
    const double half = o.y_width * std::max(b0, 1e-3) * std::sqrt(horizon);
    const int ny = o.y_points;
    const double ylo = y0 - half, hy = 2.0 * half / (ny - 1);
    std::vector<double> hl(ny), dr(ny), vo(ny), cl(ny);
    for (int i = 0; i < ny; ++i) {
        const double y = ylo + hy * i;
        coef_at(y, hl[i], dr[i], vo[i], cl[i]);
    }

    std::vector<double> v(ny, 0.0), m1(ny, 0.0), m2(ny, 0.0);
    std::vector<double> vn(ny), m1n(ny), m2n(ny);
    int widened_total = 0;
    // First sweep: moments under Q_M (gamma = 0).
    for (int k = o.n_steps - 1; k >= 0; --k) {
        parallel_for(ny, [&](std::int64_t i) {
            const double y = ylo + hy * i;
            double e1 = 0.0, e2 = 0.0;
            for (int j = 0; j < o.nodes; ++j) {
                const double yn = model->clamp_factor(0, y + dr[i] * dt + vo[i] * sq * z[j]);
                e1 += wz[j] * cubic_interp(m1, ylo, hy, yn);
                e2 += wz[j] * cubic_interp(m2, ylo, hy, yn);
            }
            const double r = hl[i] * dt;
            m1n[i] = r + e1;
            m2n[i] = r * r + 2.0 * r * e1 + e2;
        });
        std::swap(m1, m1n);
        std::swap(m2, m2n);
    }
    const double mean0 = cubic_interp(m1, ylo, hy, y0);
    const double sd0 = std::sqrt(std::max(0.0, cubic_interp(m2, ylo, hy, y0) - mean0 * mean0));
    const double b_ctl = 4.0 * eps * sd0;

    // Second sweep: minimisation over gamma, cost 1/2 (lambda^2 + gamma^2) dt.
    std::vector<int> widened(ny);
    for (int k = o.n_steps - 1; k >= 0; --k) {
        std::fill(widened.begin(), widened.end(), 0);
        parallel_for(ny, [&](std::int64_t i) {
            const double y = ylo + hy * i;
            auto objective = [&](double g) {
                double ev = 0.0;
                for (int j = 0; j < o.nodes; ++j) {
                    const double yn = model->clamp_factor(
                        0, y + (dr[i] - cl[i] * g) * dt + vo[i] * sq * z[j]);
                    ev += wz[j] * cubic_interp(v, ylo, hy, yn);
                }
                return 0.5 * g * g * dt + ev;
            };
            double best_val = objective(0.0);
            if (b_ctl > 0.0) {
                double b = b_ctl;
                const int cp = o.control_points;
                std::vector<double> vals(cp);
                bool done = false;
                for (int attempt = 0; attempt <= 8 && !done; ++attempt, b *= 2.0) {
                    const double h = 2.0 * b / (cp - 1);
                    for (int c = 0; c < cp; ++c) vals[c] = objective(-b + h * c);
                    const int best = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
                    if (best == 0 || best == cp - 1) {
                        ++widened[i];
                        continue;
                    }
                    best_val = vals[best];
                    // polish on -objective (concave)
                    const double off = parabola_offset(-vals[best - 1], -vals[best], -vals[best + 1], h);
                    if (off != 0.0) {
                        const double cv = objective(-b + h * best + off);
                        if (cv < best_val) best_val = cv;
                    }
                    done = true;
                }
                if (!done) throw NumericalFailure("entropy_dp_minimum: optimiser stays on the grid boundary");
            }
            vn[i] = hl[i] * dt + best_val;
        });
        for (int c : widened) widened_total += c;
        std::swap(v, vn);
    }
    EntropyDPResult r;
    r.value = cubic_interp(v, ylo, hy, y0);
    r.zeroth = mean0;
    r.widened_nodes = widened_total;
    return r;
}

DirectionalReport verify_directional_derivative(const ClaimSampler& sampler, const ControlProcess& phi,
                                                std::vector<double> eps_list) {
    const int n = sampler.grid().n_steps(), m = sampler.dim();
    const double dt = sampler.grid().dt();
    if (phi.dim() != m) throw IncompatibleError("verify_directional_derivative: control dimension mismatch");
    if (eps_list.empty()) throw ConfigError("verify_directional_derivative: empty epsilon list");
    for (double e : eps_list) {
        if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("epsilon values must be positive");
    }
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
    const std::size_t ne = eps_list.size();
    const std::size_t np = static_cast<std::size_t>(sampler.n_paths());
    // per epsilon: fd, ibp-difference, residual
    std::vector<std::vector<double>> fd(ne, std::vector<double>(np)), diff(ne, std::vector<double>(np)),
        res(ne, std::vector<double>(np));
    std::vector<double> ibp(np);
    const std::size_t nm = static_cast<std::size_t>(n) * m;
    parallel_for(block_count(sampler.n_paths()), [&](std::int64_t b) {
        ClaimSampler::Workspace ws, sh;
        std::vector<double> ctl(nm), sdw(nm);
        const std::int64_t lo = b * kPathBlock, hi = std::min(sampler.n_paths(), lo + kPathBlock);
        for (std::int64_t p = lo; p < hi; ++p) {
            sampler.load(p, ws);
            const double f0 = sampler.payoff(ws);
            evaluate_control(sampler.grid(), m, phi, ws.view.w, ctl);
            double ito = 0.0;
            for (std::size_t i = 0; i < nm; ++i) ito += ctl[i] * ws.view.dw[i];
            const std::size_t pi = static_cast<std::size_t>(p);
            ibp[pi] = f0 * ito;
            // copy the base increments: load_increments rebinds the view of sh only
            const std::vector<double> base(ws.view.dw.begin(), ws.view.dw.end());
            for (std::size_t e = 0; e < ne; ++e) {
                const double h = eps_list[e] * dt;
                for (std::size_t i = 0; i < nm; ++i) sdw[i] = base[i] + h * ctl[i];
                sampler.load_increments(sdw, sh);
                const double fp = sampler.payoff(sh);
                for (std::size_t i = 0; i < nm; ++i) sdw[i] = base[i] - h * ctl[i];
                sampler.load_increments(sdw, sh);
                const double fm = sampler.payoff(sh);
                fd[e][pi] = (fp - fm) / (2.0 * eps_list[e]);
                diff[e][pi] = fd[e][pi] - ibp[pi];
                res[e][pi] = fp - f0 - eps_list[e] * f0 * ito;
            }
        }
    });
    DirectionalReport rep;
    const Estimate ibp_est = mean_estimate(ibp);
    for (std::size_t e = 0; e < ne; ++e) {
        DirectionalRow row;
        row.eps = eps_list[e];
        row.finite_difference = mean_estimate(fd[e]);
        row.ibp = ibp_est;
        row.difference = mean_estimate(diff[e]);
        row.residual = mean_estimate(res[e]);
        rep.rows.push_back(row);
    }
    for (std::size_t e = 0; e + 1 < ne; ++e) {
        const double a = rep.rows[e].residual.value, c = rep.rows[e + 1].residual.value;
        const double r = a / c;
        const double v = variance(res[e]) - 2.0 * r * covariance(res[e], res[e + 1]) + r * r * variance(res[e + 1]);
        rep.residual_ratios.push_back({r, std::sqrt(std::max(0.0, v) / static_cast<double>(np)) / std::fabs(c),
                                       static_cast<std::int64_t>(np)});
    }
    // residual ~ k eps^2: least squares through the origin
    double num = 0.0, den = 0.0;
    for (const auto& row : rep.rows) {
        const double e2 = row.eps * row.eps;
        num += e2 * row.residual.value;
        den += e2 * e2;
    }
    rep.residual_eps2_coefficient = num / den;
    return rep;
}

L2Report verify_l2_convergence(const ControlProcess& phi, const BrownianEnsemble& ens,
                               std::vector<double> eps_list) {
    if (phi.dim() != ens.dim()) throw IncompatibleError("verify_l2_convergence: control dimension mismatch");
    if (eps_list.empty()) throw ConfigError("verify_l2_convergence: empty epsilon list");
    for (double e : eps_list) {
        if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("epsilon values must be positive");
    }
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
    const std::vector<double> ito = ito_integral(phi, ens);
    const std::vector<double> energy = control_energy(phi, ens);
    L2Report rep;
    std::vector<double> d2(ito.size());
    for (double e : eps_list) {
        for (std::size_t i = 0; i < ito.size(); ++i) {
            // 1 - M = -expm1(log M), accurate for small eps
            const double one_minus = -std::expm1(-e * ito[i] - 0.5 * e * e * energy[i]);
            const double d = one_minus / e - ito[i];
            d2[i] = d * d;
        }
        const Estimate sq = mean_estimate(d2);
        L2Row row;
        row.eps = e;
        row.distance = std::sqrt(sq.value);
        row.std_error = row.distance > 0.0 ? sq.std_error / (2.0 * row.distance) : 0.0;
        rep.rows.push_back(row);
    }
    for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i) {
        const double b = rep.rows[i + 1].distance;
        rep.ratios.push_back(b > 0.0 ? rep.rows[i].distance / b : std::numeric_limits<double>::quiet_NaN());
    }
    return rep;
}

}  // namespace dualexp
