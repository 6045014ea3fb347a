#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rkan {

namespace detail {
inline std::atomic<std::size_t>& worker_slot() {
  static std::atomic<std::size_t> workers{0};
  return workers;
}
}  // namespace detail

/// Worker count for batch math. Defaults to RKAN_THREADS, else 1.
inline std::size_t worker_count() {
  auto& slot = detail::worker_slot();
  std::size_t n = slot.load();
  if (n == 0) {
    n = 1;
    if (const char* env = std::getenv("RKAN_THREADS")) {
      try {
        n = std::max<long>(1, std::stol(env));
      } catch (...) {
        n = 1;
      }
    }
    slot.store(n);
  }
  return n;
}

inline void set_worker_count(std::size_t n) {
  detail::worker_slot().store(std::max<std::size_t>(1, n));
}

/// Keeps freed activation buffers inside the heap instead of returning them
/// to the kernel after every step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

/// Runs fn(i) for i in [0, n). Each index must write disjoint memory, so
/// results never depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

namespace detail {

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
               const T* a, const T* b, T beta, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Idx = Eigen::Index;
  if (m == 0 || n == 0) return;
  Eigen::Map<Mat> cm(c, static_cast<Idx>(m), static_cast<Idx>(n));
  if (beta == T{0})
    cm.setZero();
  else if (beta != T{1})
    cm *= beta;
  if (k == 0) return;
  const Eigen::Map<const Mat> am(a, static_cast<Idx>(trans_a ? k : m), static_cast<Idx>(trans_a ? m : k));
  const Eigen::Map<const Mat> bm(b, static_cast<Idx>(trans_b ? n : k), static_cast<Idx>(trans_b ? k : n));
  if (!trans_a && !trans_b)
    cm.noalias() += alpha * am * bm;
  else if (trans_a && !trans_b)
    cm.noalias() += alpha * am.transpose() * bm;
  else if (!trans_a)
    cm.noalias() += alpha * am * bm.transpose();
  else
    cm.noalias() += alpha * am.transpose() * bm.transpose();
}

}  // namespace detail

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, const double* b, double beta, double* c) {
  detail::gemm_impl(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, const float* b, float beta, float* c) {
  detail::gemm_impl(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
}

}  // namespace rkan
