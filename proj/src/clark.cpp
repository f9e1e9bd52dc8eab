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


#include "dualexp/clark.hpp"

#include <cmath>
#include <limits>

#include "dualexp/errors.hpp"

namespace dualexp {

RegressionBasis::RegressionBasis(int n_inputs, int degree) : q_(n_inputs), degree_(degree) {
    if (degree < 0 || degree > 6) throw ConfigError("basis degree must lie in 0..6");
    if (n_inputs < 0) throw ConfigError("basis needs a non-negative number of inputs");
    // Grow degree by degree; a monomial of degree d + 1 extends one of degree
    // d by a factor index no smaller than its last factor, so each monomial
    // appears once.
    parent_ = {-1};
    factor_ = {-1};
    std::vector<int> last = {0};
    std::size_t lo = 0, hi = 1;
    for (int d = 1; d <= degree; ++d) {
        for (std::size_t i = lo; i < hi; ++i) {
            for (int f = last[i]; f < q_; ++f) {
                parent_.push_back(static_cast<int>(i));
                factor_.push_back(f);
                last.push_back(f);
            }
        }
        lo = hi;
        hi = parent_.size();
    }
}

void RegressionBasis::evaluate(std::span<const double> x, std::span<double> out) const {
    out[0] = 1.0;
    for (std::size_t i = 1; i < parent_.size(); ++i) out[i] = out[parent_[i]] * x[factor_[i]];
}

std::vector<int> RegressionBasis::exponents(int i) const {
    std::vector<int> e(q_, 0);
    for (; i > 0; i = parent_[i]) ++e[factor_[i]];
    return e;
}

namespace {

// Normal equations of one block (or batch) of paths, all steps.
struct NormalEq {
    int n = 0, p = 0, r = 0;
    std::vector<double> g;  // n * p * p, upper triangle used
    std::vector<double> b;  // n * p * r
    std::int64_t count = 0;
    double f_sum = 0.0, f_sq = 0.0;  // payoff moments about f_ref

    NormalEq() = default;
    NormalEq(int n_, int p_, int r_)
        : n(n_), p(p_), r(r_), g(static_cast<std::size_t>(n_) * p_ * p_, 0.0),
          b(static_cast<std::size_t>(n_) * p_ * r_, 0.0) {}

    void add(int k, const double* phi, const double* y) {
        double* gk = g.data() + static_cast<std::size_t>(k) * p * p;
        for (int i = 0; i < p; ++i) {
            const double pi = phi[i];
            double* row = gk + static_cast<std::size_t>(i) * p;
            for (int j = i; j < p; ++j) row[j] += pi * phi[j];
        }
        double* bk = b.data() + static_cast<std::size_t>(k) * p * r;
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < r; ++j) bk[i * r + j] += phi[i] * y[j];
        }
    }
    void merge(const NormalEq& o) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += o.b[i];
        count += o.count;
        f_sum += o.f_sum;
        f_sq += o.f_sq;
    }
    Eigen::MatrixXd gram(int k) const {
        Eigen::MatrixXd m(p, p);
        const double* gk = g.data() + static_cast<std::size_t>(k) * p * p;
        for (int i = 0; i < p; ++i) {
            for (int j = i; j < p; ++j) m(i, j) = m(j, i) = gk[i * p + j];
        }
        return m;
    }
    Eigen::MatrixXd rhs(int k) const {
        Eigen::MatrixXd m(p, r);
        const double* bk = b.data() + static_cast<std::size_t>(k) * p * r;
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < r; ++j) m(i, j) = bk[i * r + j];
        }
        return m;
    }
};

// Ridge-regularised least squares with Jacobi scaling. Columns that are
// constant across paths (collinear with the intercept) get zero weight.
Eigen::MatrixXd solve_normal(const Eigen::MatrixXd& g, const Eigen::MatrixXd& b, double count,
                             int step) {
    const auto p = g.rows();
    std::vector<int> active = {0};
    const double mean_one = g(0, 0) / count;  // = 1
    for (Eigen::Index j = 1; j < p; ++j) {
        const double m2 = g(j, j) / count;
        const double m1 = g(0, j) / count / mean_one;
        const double var = m2 - m1 * m1;
        if (m2 > 0.0 && var > 1e-12 * m2) active.push_back(static_cast<int>(j));
    }
    const auto a = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd ga(a, a), ba(a, b.cols());
    Eigen::VectorXd s(a);
    for (Eigen::Index i = 0; i < a; ++i) s(i) = 1.0 / std::sqrt(g(active[i], active[i]));
    for (Eigen::Index i = 0; i < a; ++i) {
        for (Eigen::Index j = 0; j < a; ++j) ga(i, j) = g(active[i], active[j]) * s(i) * s(j);
        ba.row(i) = b.row(active[i]) * s(i);
    }
    const double ridge = 1e-8 * ga.trace() / static_cast<double>(a);
    ga.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(ga);
    const auto& d = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(d.minCoeff() > 1e-14 * d.maxCoeff())) {
        throw NumericalFailure("regression design at step " + std::to_string(step) +
                               " is rank deficient after regularisation");
    }
    Eigen::MatrixXd za = ldlt.solve(ba);
    Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(p, b.cols());
    for (Eigen::Index i = 0; i < a; ++i) beta.row(active[i]) = za.row(i) * s(i);
    if (!beta.allFinite()) {
        throw NumericalFailure("regression at step " + std::to_string(step) + " produced non-finite coefficients");
    }
    return beta;
}

// Sums of a few per-path quantities and of their pairwise products.
struct MomentMatrix {
    int q = 0;
    std::int64_t n = 0;
    std::vector<double> s, ss;
    std::vector<double> orth_num, orth_den;

    MomentMatrix() = default;
    explicit MomentMatrix(int q_, std::size_t n_orth = 0)
        : q(q_), s(q_, 0.0), ss(static_cast<std::size_t>(q_) * q_, 0.0),
          orth_num(n_orth, 0.0), orth_den(n_orth, 0.0) {}
    void add(const double* v) {
        ++n;
        for (int i = 0; i < q; ++i) {
            s[i] += v[i];
            for (int j = 0; j < q; ++j) ss[i * q + j] += v[i] * v[j];
        }
    }
    void merge(const MomentMatrix& o) {
        n += o.n;
        for (int i = 0; i < q; ++i) s[i] += o.s[i];
        for (std::size_t i = 0; i < ss.size(); ++i) ss[i] += o.ss[i];
        for (std::size_t i = 0; i < orth_num.size(); ++i) {
            orth_num[i] += o.orth_num[i];
            orth_den[i] += o.orth_den[i];
        }
    }
    double mean(int i) const { return s[i] / n; }
    double cov(int i, int j) const {
        return (ss[i * q + j] - s[i] * s[j] / n) / static_cast<double>(n - 1);
    }
    Estimate estimate(int i) const {
        return {mean(i), std::sqrt(std::max(0.0, cov(i, i)) / n), n};
    }
    // E[v_i] / E[v_j] with delta-method error
    Estimate ratio(int i, int j) const {
        const double r = mean(i) / mean(j);
        const double v = cov(i, i) - 2.0 * r * cov(i, j) + r * r * cov(j, j);
        return {r, std::sqrt(std::max(0.0, v) / n) / std::fabs(mean(j)), n};
    }
};

Estimate batch_estimate(const std::vector<double>& per_batch, double value, std::int64_t n) {
    const double nb = static_cast<double>(per_batch.size());
    const double se = per_batch.size() > 1
                          ? std::sqrt(variance(per_batch) / nb)
                          : std::numeric_limits<double>::quiet_NaN();
    return {value, se, n};
}

void claim_regressors(const ClaimSampler& s, const ClaimSampler::Workspace& ws, int k,
                      const std::vector<int>& subset, std::vector<double>& all,
                      std::vector<double>& x) {
    s.features(ws, k, all);
    for (std::size_t i = 0; i < subset.size(); ++i) x[i] = all[subset[i]];
}

}  // namespace

void ClarkEstimate::psi(const PathView& v, int k, std::span<double> out) const {
    thread_local std::vector<double> all, x, phi;
    all.resize(sampler_.n_features());
    x.resize(features_.size());
    phi.resize(basis_.size());
    sampler_.claim().features(v, k, all);
    for (std::size_t i = 0; i < features_.size(); ++i) x[i] = all[features_[i]];
    basis_.evaluate(x, phi);
    const Eigen::MatrixXd& b = beta_[k];
    for (int j = 0; j < out_dim_; ++j) {
        double s = 0.0;
        for (int i = 0; i < basis_.size(); ++i) s += b(i, j) * phi[i];
        out[j] = s;
    }
}

ClarkEstimate clark_integrand(const ClaimSampler& sampler, const ClarkOptions& opt) {
    const int n = sampler.grid().n_steps();
    const int m = sampler.dim();
    const double dt = sampler.grid().dt();
    const std::int64_t n_paths = sampler.n_paths();

    std::vector<int> subset = opt.feature_subset;
    if (subset.empty()) {
        for (int i = 0; i < sampler.n_features(); ++i) subset.push_back(i);
    }
    for (int i : subset) {
        if (i < 0 || i >= sampler.n_features()) throw ConfigError("feature subset index out of range");
    }
    ClarkEstimate est(sampler, RegressionBasis(static_cast<int>(subset.size()), opt.degree));
    est.features_ = subset;
    const int p = est.basis_.size();
    if (n_paths < 50 * static_cast<std::int64_t>(p)) {
        throw ConfigError("insufficient paths: " + std::to_string(n_paths) + " paths for " +
                          std::to_string(p) + " basis functions (need at least 50 per function)");
    }

    ClarkRoute route = opt.route;
    if (route == ClarkRoute::Auto) route = sampler.has_kernel() ? ClarkRoute::Kernel : ClarkRoute::Increment;
    if (route == ClarkRoute::Kernel && !sampler.has_kernel()) {
        throw IncompatibleError("claim " + sampler.claim().label + " has no kernel; use the increment route");
    }
    est.route_ = route;
    const std::vector<double>& u = opt.kernel_direction;
    if (!u.empty()) {
        if (route != ClarkRoute::Kernel) throw ConfigError("kernel_direction needs the kernel route");
        if (static_cast<int>(u.size()) != m) throw IncompatibleError("kernel_direction has the wrong size");
    }
    const int r = u.empty() ? m : 1;
    est.out_dim_ = r;
    const bool shifted = opt.kernel_shift && opt.kernel_shift_epsilon != 0.0;
    if (opt.kernel_shift) {
        if (route != ClarkRoute::Kernel) throw ConfigError("kernel_shift needs the kernel route");
        if (sampler.states()) throw IncompatibleError("kernel_shift is available for raw claims only");
        if (opt.kernel_shift->dim() != m) throw IncompatibleError("kernel_shift control has the wrong dimension");
    }

    // reference payoff so that moment sums stay centred
    double f_ref;
    {
        ClaimSampler::Workspace ws;
        sampler.load(0, ws);
        f_ref = sampler.payoff(ws);
    }
    if (opt.store_values) est.values.assign(static_cast<std::size_t>(n_paths), 0.0);

    auto make = [&](int rr) { return [&, rr] { return NormalEq(n, p, rr); }; };
    auto merge = [](NormalEq& a, const NormalEq& b) { a.merge(b); };
    auto block_paths = [&](std::int64_t b, auto&& per_path) {
        ClaimSampler::Workspace ws;
        const std::int64_t lo = b * kPathBlock, hi = std::min(n_paths, lo + kPathBlock);
        for (std::int64_t path = lo; path < hi; ++path) {
            sampler.load(path, ws);
            per_path(path, ws);
        }
    };

    std::vector<NormalEq> batches;
    if (route == ClarkRoute::Kernel) {
        batches = batch_accumulate<NormalEq>(
            n_paths, opt.n_batches, make(r),
            [&](std::int64_t b, NormalEq& acc) {
                std::vector<double> ker(static_cast<std::size_t>(n) * m), all(sampler.n_features()),
                    x(subset.size()), phi(p), y(r), ctl, sdw;
                ClaimSampler::Workspace ws_shift;
                if (shifted) {
                    ctl.resize(static_cast<std::size_t>(n) * m);
                    sdw.resize(static_cast<std::size_t>(n) * m);
                }
                block_paths(b, [&](std::int64_t path, ClaimSampler::Workspace& ws) {
                    const double f = sampler.payoff(ws);
                    if (opt.store_values) est.values[static_cast<std::size_t>(path)] = f;
                    acc.count += 1;
                    acc.f_sum += f - f_ref;
                    acc.f_sq += (f - f_ref) * (f - f_ref);
                    if (shifted) {
                        evaluate_control(sampler.grid(), m, *opt.kernel_shift, ws.view.w, ctl);
                        const double h = opt.kernel_shift_epsilon * dt;
                        for (std::size_t i = 0; i < sdw.size(); ++i) sdw[i] = ws.view.dw[i] + h * ctl[i];
                        sampler.load_increments(sdw, ws_shift);
                        sampler.kernel(ws_shift, ker);
                    } else {
                        sampler.kernel(ws, ker);
                    }
                    for (int k = 0; k < n; ++k) {
                        claim_regressors(sampler, ws, k, subset, all, x);
                        est.basis_.evaluate(x, phi);
                        const double* kk = ker.data() + static_cast<std::size_t>(k) * m;
                        if (u.empty()) {
                            acc.add(k, phi.data(), kk);
                        } else {
                            double s = 0.0;
                            for (int j = 0; j < m; ++j) s += kk[j] * u[j];
                            acc.add(k, phi.data(), &s);
                        }
                    }
                });
            },
            merge);
    } else {
        // pass A: value regressions V_k = E[F | x_k]
        auto value_batches = batch_accumulate<NormalEq>(
            n_paths, opt.n_batches, make(1),
            [&](std::int64_t b, NormalEq& acc) {
                std::vector<double> all(sampler.n_features()), x(subset.size()), phi(p);
                block_paths(b, [&](std::int64_t path, ClaimSampler::Workspace& ws) {
                    const double f = sampler.payoff(ws);
                    if (opt.store_values) est.values[static_cast<std::size_t>(path)] = f;
                    acc.count += 1;
                    acc.f_sum += f - f_ref;
                    acc.f_sq += (f - f_ref) * (f - f_ref);
                    for (int k = 0; k < n; ++k) {
                        claim_regressors(sampler, ws, k, subset, all, x);
                        est.basis_.evaluate(x, phi);
                        acc.add(k, phi.data(), &f);
                    }
                });
            },
            merge);
        NormalEq vt = tree_reduce(value_batches, merge);
        std::vector<Eigen::VectorXd> alpha(n);
        for (int k = 0; k < n; ++k) {
            alpha[k] = solve_normal(vt.gram(k), vt.rhs(k), static_cast<double>(vt.count), k);
        }
        // pass B: regress (V_{k+1} - V_k) dW_k / dt on x_k, V_n = F
        batches = batch_accumulate<NormalEq>(
            n_paths, opt.n_batches, make(r),
            [&](std::int64_t b, NormalEq& acc) {
                std::vector<double> all(sampler.n_features()), x(subset.size()), phi(p), y(r),
                    v(n + 1);
                std::vector<std::vector<double>> phis(n, std::vector<double>(p));
                block_paths(b, [&](std::int64_t, ClaimSampler::Workspace& ws) {
                    const double f = sampler.payoff(ws);
                    acc.count += 1;
                    acc.f_sum += f - f_ref;
                    acc.f_sq += (f - f_ref) * (f - f_ref);
                    for (int k = 0; k < n; ++k) {
                        claim_regressors(sampler, ws, k, subset, all, x);
                        est.basis_.evaluate(x, phis[k]);
                        v[k] = Eigen::Map<const Eigen::VectorXd>(phis[k].data(), p).dot(alpha[k]);
                    }
                    v[n] = f;
                    for (int k = 0; k < n; ++k) {
                        const double dv = (v[k + 1] - v[k]) / dt;
                        for (int j = 0; j < m; ++j) y[j] = dv * ws.view.dw[static_cast<std::size_t>(k) * m + j];
                        acc.add(k, phis[k].data(), y.data());
                    }
                });
            },
            merge);
    }

    NormalEq total = tree_reduce(batches, merge);
    const double cnt = static_cast<double>(total.count);
    est.beta_.resize(n);
    est.gram_.resize(n);
    for (int k = 0; k < n; ++k) {
        Eigen::MatrixXd g = total.gram(k);
        est.beta_[k] = solve_normal(g, total.rhs(k), cnt, k);
        est.gram_[k] = g / cnt;
    }

    // payoff moments and energy, with batch-means errors
    const double fm = total.f_sum / cnt;
    est.mean_f.value = f_ref + fm;
    est.mean_f.n = total.count;
    est.var_f = (total.f_sq - cnt * fm * fm) / (cnt - 1.0);
    est.mean_f.std_error = std::sqrt(std::max(0.0, est.var_f) / cnt);
    std::vector<double> e_b, v_b;
    double energy = 0.0;
    for (int k = 0; k < n; ++k) energy += (est.beta_[k].transpose() * est.gram_[k] * est.beta_[k]).trace();
    energy *= dt;
    for (const NormalEq& b : batches) {
        const double c = static_cast<double>(b.count);
        double e = 0.0;
        for (int k = 0; k < n; ++k) e += (est.beta_[k].transpose() * b.gram(k) * est.beta_[k]).trace();
        e_b.push_back(e * dt / c);
        const double bm = b.f_sum / c;
        v_b.push_back((b.f_sq - c * bm * bm) / (c - 1.0));
    }
    est.energy = batch_estimate(e_b, energy, total.count);
    est.var_f_estimate = batch_estimate(v_b, est.var_f, total.count);

    if (!opt.residual_pass) return est;

    // residual pass
    const bool orth = opt.orthogonality_check;
    if (orth && route != ClarkRoute::Kernel) throw ConfigError("orthogonality check needs the kernel route");
    const std::size_t n_orth = orth ? static_cast<std::size_t>(n) * p * r : 0;
    const double f_bar = est.mean_f.value;
    auto parts = batch_accumulate<MomentMatrix>(
        n_paths, opt.n_batches, [&] { return MomentMatrix(4, n_orth); },
        [&](std::int64_t b, MomentMatrix& acc) {
            std::vector<double> all(sampler.n_features()), x(subset.size()), phi(p), ker;
            if (orth) ker.resize(static_cast<std::size_t>(n) * m);
            block_paths(b, [&](std::int64_t, ClaimSampler::Workspace& ws) {
                const double f = sampler.payoff(ws);
                if (orth) sampler.kernel(ws, ker);
                double rec = 0.0, e = 0.0;
                for (int k = 0; k < n; ++k) {
                    claim_regressors(sampler, ws, k, subset, all, x);
                    est.basis_.evaluate(x, phi);
                    const Eigen::MatrixXd& bk = est.beta_[k];
                    const double* dw = ws.view.dw.data() + static_cast<std::size_t>(k) * m;
                    for (int j = 0; j < r; ++j) {
                        double ps = 0.0;
                        for (int i = 0; i < p; ++i) ps += bk(i, j) * phi[i];
                        e += ps * ps;
                        double inc;
                        if (u.empty()) {
                            inc = dw[j];
                        } else {
                            inc = 0.0;
                            for (int l = 0; l < m; ++l) inc += u[l] * dw[l];
                        }
                        rec += ps * inc;
                        if (orth) {
                            double t;
                            const double* kk = ker.data() + static_cast<std::size_t>(k) * m;
                            if (u.empty()) {
                                t = kk[j];
                            } else {
                                t = 0.0;
                                for (int l = 0; l < m; ++l) t += u[l] * kk[l];
                            }
                            const double res = t - ps;
                            for (int i = 0; i < p; ++i) {
                                const std::size_t o = (static_cast<std::size_t>(k) * p + i) * r + j;
                                acc.orth_num[o] += res * phi[i];
                                acc.orth_den[o] += res * res * phi[i] * phi[i];
                            }
                        }
                    }
                }
                const double rr = f - f_bar - rec;
                const double d = (f - f_bar) * (f - f_bar);
                const double q[4] = {rr, rr * rr, d, e * dt};
                acc.add(q);
            });
        },
        [](MomentMatrix& a, const MomentMatrix& b) { a.merge(b); });
    MomentMatrix mm = tree_reduce(parts, [](MomentMatrix& a, const MomentMatrix& b) { a.merge(b); });
    ResidualStats rs;
    rs.residual_mean = mm.estimate(0);
    rs.residual_var = mm.cov(0, 0);
    rs.energy = mm.estimate(3);
    if (mm.mean(2) > 0.0) rs.ratio = mm.ratio(1, 2);
    {
        // (F - mean F)^2 - energy, per path
        const double v = mm.cov(2, 2) - 2.0 * mm.cov(2, 3) + mm.cov(3, 3);
        rs.variance_gap = {mm.mean(2) - mm.mean(3), std::sqrt(std::max(0.0, v) / mm.n), mm.n};
    }
    if (orth) {
        double worst = 0.0;
        for (std::size_t o = 0; o < n_orth; ++o) {
            if (mm.orth_den[o] > 0.0) worst = std::max(worst, std::fabs(mm.orth_num[o]) / std::sqrt(mm.orth_den[o]));
        }
        rs.max_orthogonality_z = worst;
    }
    est.residual = rs;
    return est;
}

double coefficient_gap_energy(const ClarkEstimate& a, const ClarkEstimate& b,
                              const Eigen::MatrixXd& ma, const Eigen::MatrixXd& mb) {
    if (a.basis().size() != b.basis().size() || a.features() != b.features()) {
        throw IncompatibleError("coefficient_gap_energy: estimates use different bases");
    }
    const int n = a.sampler().grid().n_steps();
    double e = 0.0;
    for (int k = 0; k < n; ++k) {
        Eigen::MatrixXd d = a.beta(k) * ma - b.beta(k) * mb;
        e += (d.transpose() * a.gram(k) * d).trace();
    }
    return e * a.sampler().grid().dt();
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

KWDecomposition kw_decompose(const ClaimSampler& sampler, const ClarkOptions& options) {
    const StateEnsemble* states = sampler.states();
    if (!states) throw IncompatibleError("kw_decompose needs a claim bound to a model state ensemble");
    if (!options.kernel_direction.empty()) throw ConfigError("kw_decompose uses the full integrand");
    ClarkOptions opt = options;
    opt.residual_pass = false;
    KWDecomposition kw;
    kw.psi.emplace(clark_integrand(sampler, opt));
    const ClarkEstimate& est = *kw.psi;
    if (options.store_values) kw.values = est.values;

    const ItoMarketModel& mod = states->model();
    const int n = sampler.grid().n_steps(), m = sampler.dim(), d = mod.n_traded();
    const int ns = mod.state_dim();
    const double dt = sampler.grid().dt();
    const double f_bar = est.mean_f.value;
    const int p = est.basis().size();
    const std::vector<int>& subset = est.features();

    // per path: R, R^2, (F - mean)^2, e_theta, e_xi, cross
    auto parts = batch_accumulate<MomentMatrix>(
        sampler.n_paths(), options.n_batches, [] { return MomentMatrix(6); },
        [&](std::int64_t b, MomentMatrix& acc) {
            ClaimSampler::Workspace ws;
            std::vector<double> all(sampler.n_features()), x(subset.size()), phi(p);
            Eigen::MatrixXd sigma(d, m), key, null_basis;
            Eigen::VectorXd psi(m);
            const std::int64_t lo = b * kPathBlock, hi = std::min(sampler.n_paths(), lo + kPathBlock);
            for (std::int64_t path = lo; path < hi; ++path) {
                sampler.load(path, ws);
                const double f = sampler.payoff(ws);
                double rec = 0.0, e_th = 0.0, e_xi = 0.0, cross = 0.0;
                for (int k = 0; k < n; ++k) {
                    claim_regressors(sampler, ws, k, subset, all, x);
                    est.basis().evaluate(x, phi);
                    psi.noalias() = est.beta(k).transpose() * Eigen::Map<const Eigen::VectorXd>(phi.data(), p);
                    // rows of sigma cached by the simulation
                    sigma = Eigen::Map<const RowMat>(ws.spath.vol.data() + static_cast<std::size_t>(k) * ns * m, d, m);
                    const double* dw = ws.view.dw.data() + static_cast<std::size_t>(k) * m;
                    for (int j = 0; j < m; ++j) rec += psi(j) * dw[j];
                    // the split only depends on the row space of sigma
                    bool same = key.rows() == d && key.cols() == m;
                    for (int i = 0; i < d && same; ++i) {
                        const double nr = sigma.row(i).norm();
                        for (int j = 0; j < m && same; ++j) same = key(i, j) == sigma(i, j) / nr;
                    }
                    if (!same) {
                        key = sigma.rowwise().normalized();
                        null_basis = admissible_basis(sigma);
                    }
                    double theta_ds = 0.0;
                    if (d == 1) {
                        double ss = 0.0, sp = 0.0;
                        for (int j = 0; j < m; ++j) {
                            ss += sigma(0, j) * sigma(0, j);
                            sp += sigma(0, j) * psi(j);
                        }
                        const double a = sp / ss;
                        e_th += a * sp;
                        const double s0 = ws.view.x(k, 0), s1 = ws.view.x(k + 1, 0);
                        theta_ds = a / s0 * (s1 - s0);
                    } else {
                        Eigen::MatrixXd g = sigma * sigma.transpose();
                        Eigen::VectorXd a = g.ldlt().solve(sigma * psi);
                        e_th += (sigma.transpose() * a).squaredNorm();
                        for (int i = 0; i < d; ++i) {
                            const double s0 = ws.view.x(k, i), s1 = ws.view.x(k + 1, i);
                            theta_ds += a(i) / s0 * (s1 - s0);
                        }
                    }
                    // xi in null-space coordinates, and its increment xi . N^T dW
                    double xi_dw = 0.0;
                    for (Eigen::Index c = 0; c < null_basis.cols(); ++c) {
                        double xc = 0.0, nc = 0.0;
                        for (int j = 0; j < m; ++j) {
                            xc += null_basis(j, c) * psi(j);
                            nc += null_basis(j, c) * dw[j];
                        }
                        e_xi += xc * xc;
                        xi_dw += xc * nc;
                    }
                    cross += theta_ds * xi_dw;
                }
                const double rr = f - f_bar - rec;
                const double q[6] = {rr, rr * rr, (f - f_bar) * (f - f_bar), e_th * dt, e_xi * dt, cross};
                acc.add(q);
            }
        },
        [](MomentMatrix& a, const MomentMatrix& b) { a.merge(b); });
    MomentMatrix mm = tree_reduce(parts, [](MomentMatrix& a, const MomentMatrix& b) { a.merge(b); });
    kw.mean_f = est.mean_f;
    kw.var_f = mm.estimate(2);
    kw.energy_theta = mm.estimate(3);
    kw.energy_xi = mm.estimate(4);
    kw.cross_moment = mm.estimate(5);
    const double v = mm.cov(2, 2) + mm.cov(3, 3) + mm.cov(4, 4) - 2.0 * mm.cov(2, 3) -
                     2.0 * mm.cov(2, 4) + 2.0 * mm.cov(3, 4);
    kw.pythagoras = {mm.mean(2) - mm.mean(3) - mm.mean(4), std::sqrt(std::max(0.0, v) / mm.n), mm.n};
    {
        const double vt = mm.cov(2, 2) + mm.cov(3, 3) - 2.0 * mm.cov(2, 3);
        kw.var_minus_theta = {mm.mean(2) - mm.mean(3), std::sqrt(std::max(0.0, vt) / mm.n), mm.n};
    }
    if (mm.mean(2) > 0.0) kw.residual_ratio = mm.ratio(1, 2);
    return kw;
}

Estimate residual_variance(const ClarkEstimate& est) {
    if (!est.residual) throw ConfigError("residual_variance needs the residual pass");
    if (!(est.var_f > 0.0)) throw NumericalFailure("residual_variance: var(F) = 0, ratio undefined");
    return est.residual->ratio;
}

Estimate residual_variance(const KWDecomposition& kw) {
    if (!(kw.var_f.value > 0.0)) throw NumericalFailure("residual_variance: var(F) = 0, ratio undefined");
    return kw.residual_ratio;
}

}  // namespace dualexp
