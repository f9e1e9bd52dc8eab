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
#include <vector>

namespace dualexp {

// Paths are processed in blocks of this many; the block layout is fixed so
// reductions do not depend on the worker count.
constexpr std::int64_t kPathBlock = 4096;

void set_thread_count(int n);
int thread_count();

inline std::int64_t block_count(std::int64_t n_paths) {
    return (n_paths + kPathBlock - 1) / kPathBlock;
}

// Runs fn(i) for i in [0, n_tasks). Tasks are claimed dynamically; each must
// write only to its own output slot. The exception of the lowest failing task
// index is rethrown.
void parallel_for(std::int64_t n_tasks,
                  const std::function<void(std::int64_t)>& fn);

// Merges per-block partials in a balanced tree (left to right).
template <class T, class Merge>
T tree_reduce(std::vector<T> parts, Merge merge) {
    if (parts.empty()) return T{};
    std::size_t n = parts.size();
    while (n > 1) {
        std::size_t half = (n + 1) / 2;
        for (std::size_t i = 0; i + half < n; ++i) {
            merge(parts[i], parts[i + half]);
        }
        n = half;
    }
    return std::move(parts[0]);
}

// Splits the path blocks into n_batches contiguous batches and returns one
// accumulator per batch. Inside a batch, per-block accumulators (made by
// make) are filled in parallel by fill(block, acc) and tree-merged, so the
// result is independent of the thread count.
template <class T, class Make, class Fill, class Merge>
std::vector<T> batch_accumulate(std::int64_t n_paths, int n_batches, Make make, Fill fill,
                                Merge merge) {
    const std::int64_t nb = block_count(n_paths);
    if (n_batches > nb) n_batches = static_cast<int>(nb);
    if (n_batches < 1) n_batches = 1;
    std::vector<T> out;
    out.reserve(n_batches);
    for (int b = 0; b < n_batches; ++b) {
        const std::int64_t lo = nb * b / n_batches, hi = nb * (b + 1) / n_batches;
        std::vector<T> parts;
        parts.reserve(hi - lo);
        for (std::int64_t i = lo; i < hi; ++i) parts.push_back(make());
        parallel_for(hi - lo, [&](std::int64_t i) { fill(lo + i, parts[i]); });
        out.push_back(tree_reduce(std::move(parts), merge));
    }
    return out;
}

}  // namespace dualexp
