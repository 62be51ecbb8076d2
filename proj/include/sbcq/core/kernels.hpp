#pragma once

// Batched dense linear-algebra kernels behind every network in the project.
//
// Two implementations share one contract:
//   sbcq::kernels            OpenMP-parallel, vectorizable loop order
//   sbcq::kernels::reference plain serial loops, kept as the test oracle
//
// The parallel kernels split work by output rows only. Every output element is
// accumulated in the same order whatever the thread count, so results are
// bit-identical between 1 and N threads.

#include <span>

#include "sbcq/core/matrix.hpp"

namespace sbcq::kernels {

/// y = x wᵀ + 1 bᵀ.  x: B×p, w: q×p, b: q  →  y: B×q.
void affine(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y);

/// c = a b.  a: B×q, b: q×p  →  c: B×p.
void matmul(const Matrix& a, const Matrix& b, Matrix& c);

/// c += aᵀ b.  a: B×q, b: B×p, c: q×p.  (weight gradients)
void matmul_tn_acc(const Matrix& a, const Matrix& b, std::span<double> c);

/// out[j] += Σ_r a(r, j).  (bias gradients)
void column_sum_acc(const Matrix& a, std::span<double> out);

/// Thread count used by the parallel kernels (defaults to the OpenMP maximum).
void set_num_threads(int n);
int num_threads();

namespace reference {
void affine(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y);
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn_acc(const Matrix& a, const Matrix& b, std::span<double> c);
void column_sum_acc(const Matrix& a, std::span<double> out);
}  // namespace reference

}  // namespace sbcq::kernels
