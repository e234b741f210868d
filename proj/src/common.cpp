// Copyright 2026 The rangefield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rangefield/common.hpp"

#include <algorithm>

namespace rangefield {

namespace {
int g_num_threads = 1;
}

void set_num_threads(int n) { g_num_threads = std::max(1, n); }

int num_threads() { return g_num_threads; }

void parallel_for(int64_t n,
                  const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  const int workers = std::min<int64_t>(g_num_threads, n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int64_t lo = w * chunk;
    const int64_t hi = std::min<int64_t>(lo + chunk, n);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace rangefield
