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
#include <span>
#include <vector>

namespace dualexp {

// A Monte Carlo estimate with its standard error.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::int64_t n = 0;
};

// Pairwise (cascade) summation, deterministic for a given input order.
double pairwise_sum(std::span<const double> x);

// Mean computed as x[0] + mean(x - x[0]); exact when all entries agree.
double mean(std::span<const double> x);

// Unbiased sample variance (two pass).
double variance(std::span<const double> x);

double covariance(std::span<const double> x, std::span<const double> y);

// Mean with standard error sd / sqrt(n).
Estimate mean_estimate(std::span<const double> x);

// log(mean(exp(s * x))) evaluated about the sample mean and the largest
// exponent, so it does not overflow for finite input.
double log_mean_exp(std::span<const double> x, double s);

// True when |a - b| <= k * sqrt(se_a^2 + se_b^2).
bool within_sigma(double a, double b, double se_a, double se_b, double k);

// Welford-free running moments for streaming use; merged pairwise.
struct Moments {
    std::int64_t n = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double x) {
        ++n;
        sum += x;
        sum_sq += x * x;
    }
    void merge(const Moments& o) {
        n += o.n;
        sum += o.sum;
        sum_sq += o.sum_sq;
    }
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double variance() const;
    Estimate estimate() const;
};

}  // namespace dualexp
