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

#include "dualexp/parallel.hpp"

#include <atomic>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace dualexp {

namespace {

int default_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int> g_threads{0};

}  // namespace

void set_thread_count(int n) { g_threads = n < 1 ? 1 : n; }

int thread_count() {
    int n = g_threads.load();
    return n > 0 ? n : default_threads();
}

void parallel_for(std::int64_t n_tasks,
                  const std::function<void(std::int64_t)>& fn) {
    if (n_tasks <= 0) return;
    int workers = static_cast<int>(
        std::min<std::int64_t>(thread_count(), n_tasks));
    std::atomic<std::int64_t> next{0};
    std::mutex err_mu;
    std::int64_t err_task = std::numeric_limits<std::int64_t>::max();
    std::exception_ptr err;

    auto work = [&]() {
        for (;;) {
            std::int64_t i = next.fetch_add(1);
            if (i >= n_tasks) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (i < err_task) {
                    err_task = i;
                    err = std::current_exception();
                }
            }
        }
    };

    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers - 1);
        for (int t = 1; t < workers; ++t) pool.emplace_back(work);
        work();
        for (auto& th : pool) th.join();
    }
    if (err) std::rethrow_exception(err);
}

}  // namespace dualexp
