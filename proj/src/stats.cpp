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

#include "dualexp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dualexp {

namespace {

double pairwise_rec(const double* x, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::size_t h = n / 2;
    return pairwise_rec(x, h) + pairwise_rec(x + h, n - h);
}

}  // namespace

double pairwise_sum(std::span<const double> x) {
    return pairwise_rec(x.data(), x.size());
}

double mean(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("mean of empty sample");
    const double c = x[0];
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - c;
    return c + pairwise_sum(d) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = (x[i] - m) * (x[i] - m);
    return pairwise_sum(d) / static_cast<double>(x.size() - 1);
}

double covariance(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("covariance: size mismatch");
    if (x.size() < 2) return 0.0;
    const double mx = mean(x), my = mean(y);
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = (x[i] - mx) * (y[i] - my);
    return pairwise_sum(d) / static_cast<double>(x.size() - 1);
}

Estimate mean_estimate(std::span<const double> x) {
    Estimate e;
    e.n = static_cast<std::int64_t>(x.size());
    e.value = mean(x);
    e.std_error = std::sqrt(variance(x) / static_cast<double>(x.size()));
    return e;
}

double log_mean_exp(std::span<const double> x, double s) {
    if (x.empty()) throw std::invalid_argument("log_mean_exp of empty sample");
    const double m = mean(x);
    double top = -std::numeric_limits<double>::infinity();
    for (double v : x) top = std::max(top, s * (v - m));
    if (!std::isfinite(top)) return top;
    std::vector<double> w(x.size());
    const double n = static_cast<double>(x.size());
    if (top < 1.0) {
        // Small exponents: expm1/log1p keep the deviation from one exact.
        for (std::size_t i = 0; i < x.size(); ++i) w[i] = std::expm1(s * (x[i] - m));
        return s * m + std::log1p(pairwise_sum(w) / n);
    }
    for (std::size_t i = 0; i < x.size(); ++i) w[i] = std::exp(s * (x[i] - m) - top);
    return s * m + top + std::log(pairwise_sum(w) / n);
}

bool within_sigma(double a, double b, double se_a, double se_b, double k) {
    return std::fabs(a - b) <= k * std::sqrt(se_a * se_a + se_b * se_b);
}

double Moments::variance() const {
    if (n < 2) return 0.0;
    double m = sum / n;
    return std::max(0.0, (sum_sq - n * m * m) / (n - 1));
}

Estimate Moments::estimate() const {
    return {mean(), n > 0 ? std::sqrt(variance() / n) : 0.0, n};
}

}  // namespace dualexp
