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

#include "dualexp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dualexp {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline void philox_round(Philox4x32Counter& c, const Philox4x32Key& k) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline double poly8(const double (&c)[8], double x) {
    return ((((((c[7] * x + c[6]) * x + c[5]) * x + c[4]) * x + c[3]) * x +
             c[2]) * x + c[1]) * x + c[0];
}

template <int L>
inline void philox_lanes(std::uint32_t* __restrict c0, std::uint32_t* __restrict c1,
                         std::uint32_t* __restrict c2,
                         std::uint32_t* __restrict c3, std::uint32_t k0, std::uint32_t k1) {
    for (int r = 0; r < 10; ++r) {
        for (int i = 0; i < L; ++i) {
            std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c0[i];
            std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c2[i];
            std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1[i] ^ k0;
            std::uint32_t n1 = static_cast<std::uint32_t>(p1);
            std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3[i] ^ k1;
            std::uint32_t n3 = static_cast<std::uint32_t>(p0);
            c0[i] = n0;
            c1[i] = n1;
            c2[i] = n2;
            c3[i] = n3;
        }
        k0 += kWeyl0;
        k1 += kWeyl1;
    }
}

// AS241 coefficients, lowest order first.
constexpr double kA[8] = {3.3871328727963666080e0, 1.3314166789178437745e+2,
                          1.9715909503065514427e+3, 1.3731693765509461125e+4,
                          4.5921953931549871457e+4, 6.7265770927008700853e+4,
                          3.3430575583588128105e+4, 2.5090809287301226727e+3};
constexpr double kB[8] = {1.0,
                          4.2313330701600911252e+1,
                          6.8718700749205790830e+2,
                          5.3941960214247511077e+3,
                          2.1213794301586595867e+4,
                          3.9307895800092710610e+4,
                          2.8729085735721942674e+4,
                          5.2264952788528545610e+3};
constexpr double kC[8] = {1.42343711074968357734e0, 4.63033784615654529590e0,
                          5.76949722146069140550e0, 3.64784832476320460504e0,
                          1.27045825245236838258e0, 2.41780725177450611770e-1,
                          2.27238449892691845833e-2, 7.74545014278341407640e-4};
constexpr double kD[8] = {1.0,
                          2.05319162663775882187e0,
                          1.67638483018380384940e0,
                          6.89767334985100004550e-1,
                          1.48103976427480074590e-1,
                          1.51986665636164571966e-2,
                          5.47593808499534494600e-4,
                          1.05075007164441684324e-9};
constexpr double kE[8] = {6.65790464350110377720e0, 5.46378491116411436990e0,
                          1.78482653991729133580e0, 2.96560571828504891230e-1,
                          2.65321895265761230930e-2, 1.24266094738807843860e-3,
                          2.71155556874348757815e-5, 2.01033439929228813265e-7};
constexpr double kF[8] = {1.0,
                          5.99832206555887937690e-1,
                          1.36929880922735805310e-1,
                          1.48753612908506148525e-2,
                          7.86869131145613259100e-4,
                          1.84631831751005468180e-5,
                          1.42151175831644588870e-7,
                          2.04426310338993978564e-15};

}  // namespace

Philox4x32Counter philox4x32(Philox4x32Counter ctr, Philox4x32Key key) {
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        philox_round(ctr, key);
    }
    return ctr;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("normal_quantile: p outside (0, 1)");
    }
    double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        double r = 0.180625 - q * q;
        return q * poly8(kA, r) / poly8(kB, r);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double z;
    if (r <= 5.0) {
        r -= 1.6;
        z = poly8(kC, r) / poly8(kD, r);
    } else {
        r -= 5.0;
        z = poly8(kE, r) / poly8(kF, r);
    }
    return q < 0.0 ? -z : z;
}

void NormalStream::fill(std::uint64_t path, std::uint64_t first,
                        std::span<double> out) const {
    constexpr int kLanes = 16;
    const std::uint32_t p_lo = static_cast<std::uint32_t>(path);
    const std::uint32_t p_hi = static_cast<std::uint32_t>(path >> 32);
    const std::size_t n = out.size();
    std::size_t i = 0;
    std::uint64_t block = first >> 1;
    // Draw index first may be odd: the first block then yields one draw.
    std::size_t skip = first & 1u;
    alignas(64) double u[2 * kLanes];
    alignas(64) double z[2 * kLanes];
    while (i < n) {
        std::uint32_t c0[kLanes], c1[kLanes], c2[kLanes], c3[kLanes];
        for (int l = 0; l < kLanes; ++l) {
            std::uint64_t b = block + l;
            c0[l] = static_cast<std::uint32_t>(b);
            c1[l] = static_cast<std::uint32_t>(b >> 32);
            c2[l] = p_lo;
            c3[l] = p_hi;
        }
        philox_lanes<kLanes>(c0, c1, c2, c3, static_cast<std::uint32_t>(seed_),
                             static_cast<std::uint32_t>(seed_ >> 32));
        for (int l = 0; l < kLanes; ++l) {
            u[2 * l] = bits_to_open_unit((static_cast<std::uint64_t>(c1[l]) << 32) | c0[l]);
            u[2 * l + 1] = bits_to_open_unit((static_cast<std::uint64_t>(c3[l]) << 32) | c2[l]);
        }
        // Central branch for every lane, tails patched afterwards.
        int tails = 0;
        for (int l = 0; l < 2 * kLanes; ++l) {
            double q = u[l] - 0.5;
            double r = 0.180625 - q * q;
            z[l] = q * poly8(kA, r) / poly8(kB, r);
            tails += std::fabs(q) > 0.425 ? 1 : 0;
        }
        if (tails > 0) {
            for (int l = 0; l < 2 * kLanes; ++l) {
                if (std::fabs(u[l] - 0.5) > 0.425) z[l] = normal_quantile(u[l]);
            }
        }
        std::size_t take = std::min<std::size_t>(2 * kLanes - skip, n - i);
        for (std::size_t l = 0; l < take; ++l) out[i + l] = z[skip + l];
        i += take;
        skip = 0;
        block += kLanes;
    }
}

double NormalStream::draw(std::uint64_t path, std::uint64_t index) const {
    double z;
    fill(path, index, std::span<double>(&z, 1));
    return z;
}

}  // namespace dualexp
