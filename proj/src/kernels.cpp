#include "sbcq/core/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sbcq::kernels {
namespace {

std::atomic<int> g_threads{0};

int active_threads() {
  int n = g_threads.load(std::memory_order_relaxed);
#ifdef _OPENMP
  if (n <= 0) n = omp_get_max_threads();
#else
  n = 1;
#endif
  return std::max(n, 1);
}

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 16;

// C[i][j] (=|+=) init[j] + Σ_k A(i,k) · Bm[k][j] for i in [i0, i1).
// A(i,k) = a[i * a_row + k * a_inner]. Bm is row-major with leading dimension ldb.
// The k loop is innermost per output element so every element sums in index order.
struct GemmArgs {
  const double* a;
  std::size_t a_row;
  std::size_t a_inner;
  const double* bm;
  std::size_t ldb;
  std::size_t inner;
  std::size_t cols;
  double* c;
  std::size_t ldc;
  const double* init;  // per-column initial value, or nullptr for zero
  bool accumulate;     // start from existing C instead of init
};

inline double start_value(const GemmArgs& g, std::size_t i, std::size_t j) {
  if (g.accumulate) return g.c[i * g.ldc + j];
  return g.init ? g.init[j] : 0.0;
}

template <std::size_t Width>
void gemm_tile(const GemmArgs& g, std::size_t i0, std::size_t j0) {
  double acc[kRowBlock][Width];
  for (std::size_t r = 0; r < kRowBlock; ++r)
    for (std::size_t j = 0; j < Width; ++j) acc[r][j] = start_value(g, i0 + r, j0 + j);
  for (std::size_t k = 0; k < g.inner; ++k) {
    const double* bk = g.bm + k * g.ldb + j0;
    for (std::size_t r = 0; r < kRowBlock; ++r) {
      const double av = g.a[(i0 + r) * g.a_row + k * g.a_inner];
#pragma omp simd
      for (std::size_t j = 0; j < Width; ++j) acc[r][j] += av * bk[j];
    }
  }
  for (std::size_t r = 0; r < kRowBlock; ++r)
    for (std::size_t j = 0; j < Width; ++j) g.c[(i0 + r) * g.ldc + j0 + j] = acc[r][j];
}

void gemm_block(const GemmArgs& g, std::size_t i0) {
  std::size_t j0 = 0;
  for (; j0 + kColBlock <= g.cols; j0 += kColBlock) gemm_tile<kColBlock>(g, i0, j0);
  for (; j0 + 8 <= g.cols; j0 += 8) gemm_tile<8>(g, i0, j0);
  for (; j0 + 4 <= g.cols; j0 += 4) gemm_tile<4>(g, i0, j0);
  for (; j0 < g.cols; ++j0) gemm_tile<1>(g, i0, j0);
}

void gemm_row(const GemmArgs& g, std::size_t i) {
  double* ci = g.c + i * g.ldc;
  for (std::size_t j = 0; j < g.cols; ++j) ci[j] = start_value(g, i, j);
  for (std::size_t k = 0; k < g.inner; ++k) {
    const double av = g.a[i * g.a_row + k * g.a_inner];
    const double* bk = g.bm + k * g.ldb;
#pragma omp simd
    for (std::size_t j = 0; j < g.cols; ++j) ci[j] += av * bk[j];
  }
}

void gemm(const GemmArgs& g, std::size_t out_rows) {
  const std::size_t blocks = out_rows / kRowBlock;
  const std::size_t work = out_rows * g.cols * g.inner;
  const int threads = active_threads();
  const bool parallel = threads > 1 && work >= kParallelWork && blocks > 1;
  const auto nblocks = static_cast<std::ptrdiff_t>(blocks);
#pragma omp parallel for schedule(static) num_threads(threads) if (parallel)
  for (std::ptrdiff_t b = 0; b < nblocks; ++b) gemm_block(g, static_cast<std::size_t>(b) * kRowBlock);
  for (std::size_t i = blocks * kRowBlock; i < out_rows; ++i) gemm_row(g, i);
}

thread_local Matrix t_scratch;

}  // namespace

void set_num_threads(int n) { g_threads.store(n, std::memory_order_relaxed); }
int num_threads() { return active_threads(); }

void affine(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
  if (x.cols() != w.cols() || b.size() != w.rows())
    throw std::invalid_argument("kernels::affine: shape mismatch");
  if (w.rows() < 4) {
    // Narrow heads: one dot product per output, vectorised along the input dimension.
    y.reset(x.rows(), w.rows());
    const std::size_t p = x.cols(), q = w.rows();
    const auto rows = static_cast<std::ptrdiff_t>(x.rows());
    const bool parallel = active_threads() > 1 && x.size() * q >= kParallelWork;
#pragma omp parallel for schedule(static) num_threads(active_threads()) if (parallel)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + static_cast<std::size_t>(r) * p;
      for (std::size_t i = 0; i < q; ++i) {
        const double* wi = w.data() + i * p;
        double s = 0.0;
#pragma omp simd reduction(+ : s)
        for (std::size_t k = 0; k < p; ++k) s += xr[k] * wi[k];
        y(static_cast<std::size_t>(r), i) = b[i] + s;
      }
    }
    return;
  }
  Matrix& wt = t_scratch;
  wt.reset(w.cols(), w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t k = 0; k < w.cols(); ++k) wt(k, i) = w(i, k);
  y.reset(x.rows(), w.rows());
  GemmArgs g{x.data(), x.cols(), 1, wt.data(), wt.cols(), x.cols(), w.rows(), y.data(), y.cols(), b.data(), false};
  gemm(g, x.rows());
}

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows()) throw std::invalid_argument("kernels::matmul: shape mismatch");
  c.reset(a.rows(), b.cols());
  GemmArgs g{a.data(), a.cols(), 1, b.data(), b.cols(), a.cols(), b.cols(), c.data(), c.cols(), nullptr, false};
  gemm(g, a.rows());
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, std::span<double> c) {
  if (a.rows() != b.rows() || c.size() != a.cols() * b.cols())
    throw std::invalid_argument("kernels::matmul_tn_acc: shape mismatch");
  GemmArgs g{a.data(), 1, a.cols(), b.data(), b.cols(), a.rows(), b.cols(), c.data(), b.cols(), nullptr, true};
  gemm(g, a.cols());
}

void column_sum_acc(const Matrix& a, std::span<double> out) {
  if (out.size() != a.cols()) throw std::invalid_argument("kernels::column_sum_acc: shape mismatch");
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* ar = a.data() + r * a.cols();
#pragma omp simd
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += ar[j];
  }
}

namespace reference {

void affine(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
  if (x.cols() != w.cols() || b.size() != w.rows())
    throw std::invalid_argument("reference::affine: shape mismatch");
  y.reset(x.rows(), w.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s = b[i];
      for (std::size_t k = 0; k < x.cols(); ++k) s += x(r, k) * w(i, k);
      y(r, i) = s;
    }
}

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows()) throw std::invalid_argument("reference::matmul: shape mismatch");
  c.reset(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(r, k) * b(k, j);
      c(r, j) = s;
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, std::span<double> c) {
  if (a.rows() != b.rows() || c.size() != a.cols() * b.cols())
    throw std::invalid_argument("reference::matmul_tn_acc: shape mismatch");
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = c[i * b.cols() + j];
      for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * b(r, j);
      c[i * b.cols() + j] = s;
    }
}

void column_sum_acc(const Matrix& a, std::span<double> out) {
  if (out.size() != a.cols()) throw std::invalid_argument("reference::column_sum_acc: shape mismatch");
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (std::size_t r = 0; r < a.rows(); ++r) out[j] += a(r, j);
}

}  // namespace reference
}  // namespace sbcq::kernels
