// SPDX-License-Identifier: Apache-2.0
#include "pcrt/threadpool.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pcrt {

void parallel_chunks(std::size_t n_chunks, int threads,
                     const std::function<void(std::size_t)>& fn) {
    if (threads < 1) threads = 1;
    if (threads == 1 || n_chunks <= 1) {
        for (std::size_t i = 0; i < n_chunks; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n_chunks);
    for (std::size_t w = 0; w < n_workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n_chunks) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

void parallel_blocks(std::size_t n, std::size_t block_size, int threads,
                     const std::function<void(std::size_t, std::size_t)>& fn) {
    if (block_size == 0) block_size = 1;
    std::size_t n_blocks = (n + block_size - 1) / block_size;
    parallel_chunks(n_blocks, threads, [&](std::size_t b) {
        std::size_t begin = b * block_size;
        std::size_t end = std::min(n, begin + block_size);
        fn(begin, end);
    });
}

}  // namespace pcrt
