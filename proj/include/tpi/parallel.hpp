#ifndef TPI_PARALLEL_HPP_
#define TPI_PARALLEL_HPP_

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

#include "tpi/types.hpp"

namespace tpi {

struct Chunk {
  Eigen::Index begin = 0;
  Eigen::Index count = 0;
};

/// Contiguous split of [0, n) into at most `workers` chunks. Depends only on
/// (n, workers), so reductions in chunk order are reproducible.
inline std::vector<Chunk> split_chunks(Eigen::Index n, int workers) {
  const Eigen::Index w = std::max<Eigen::Index>(1, std::min<Eigen::Index>(workers, n));
  std::vector<Chunk> out;
  Eigen::Index begin = 0;
  for (Eigen::Index i = 0; i < w; ++i) {
    const Eigen::Index count = n / w + (i < n % w ? 1 : 0);
    out.push_back({begin, count});
    begin += count;
  }
  return out;
}

/// Runs fn(chunk) for each chunk, on threads when workers > 1. Results are
/// returned in chunk order.
template <class Fn>
auto map_chunks(Eigen::Index n, int workers, Fn fn) {
  using R = decltype(fn(Chunk{}));
  const auto chunks = split_chunks(n, workers);
  std::vector<R> results(chunks.size());
  if (chunks.size() <= 1) {
    for (std::size_t i = 0; i < chunks.size(); ++i) results[i] = fn(chunks[i]);
    return results;
  }
  std::vector<std::exception_ptr> errors(chunks.size());
  std::vector<std::thread> threads;
  threads.reserve(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        results[i] = fn(chunks[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

}  // namespace tpi

#endif  // TPI_PARALLEL_HPP_
