// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace pcrt {

// Runs fn(chunk_index) for chunk_index in [0, n_chunks) on up to `threads`
// workers. Chunk decomposition is fixed by the caller, so results gathered
// per chunk are identical for any thread count.
void parallel_chunks(std::size_t n_chunks, int threads,
                     const std::function<void(std::size_t)>& fn);

// Convenience: splits [0, n) into fixed blocks of block_size and calls
// fn(begin, end) per block, in parallel.
void parallel_blocks(std::size_t n, std::size_t block_size, int threads,
                     const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace pcrt
