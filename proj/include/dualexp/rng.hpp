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

#include <array>
#include <cstdint>
#include <span>

namespace dualexp {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds (Salmon et al., "Parallel random numbers: as
// easy as 1, 2, 3").
Philox4x32Counter philox4x32(Philox4x32Counter ctr, Philox4x32Key key);

// Inverse of the standard normal CDF, Wichura's AS241 (PPND16).
// Accurate to about 1e-16 relative over (0, 1). p must lie strictly inside.
double normal_quantile(double p);

// Counter-based normal stream. Draw n of path p is a pure function of
// (seed, p, n): two draws are produced per Philox block.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Fills out with draws first, first + 1, ... of the given path.
    void fill(std::uint64_t path, std::uint64_t first,
              std::span<double> out) const;

    double draw(std::uint64_t path, std::uint64_t index) const;

private:
    std::uint64_t seed_;
};

// Maps 64 random bits to the open interval (0, 1).
inline double bits_to_open_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace dualexp
