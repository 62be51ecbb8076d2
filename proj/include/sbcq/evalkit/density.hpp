#pragma once

#include <iosfwd>
#include <span>

#include "sbcq/core/matrix.hpp"

namespace sbcq::evalkit {

struct Pca1d {
  Vector axis;  // unit-norm first principal direction
  Vector mean;
  Vector scores;
  double explained = 0.0;  // share of total variance carried by the first component
  bool degenerate = false;  // zero variance: axis is arbitrary and scores are zero
};

/// First principal component of the rows of `x`; scores = (x − mean)·axis, with the sign chosen so
/// that the largest-magnitude score is positive.
Pca1d pca_1d(const Matrix& x);

/// Scores of new rows on an existing projection.
Vector project(const Pca1d& pca, const Matrix& x);

struct DensityGrid {
  std::size_t bins = 0;
  double state_lo = 0.0, state_hi = 0.0;
  double action_lo = 0.0, action_hi = 0.0;
  Matrix counts;  // bins × bins; row = state cell, column = action cell

  double total() const;
};

/// 2-D histogram over [min, max] of each axis with `bins` equal cells (the maximum falls in the last cell).
DensityGrid density_grid(std::span<const double> state_scores, std::span<const double> action_scores,
                         std::size_t bins = 50);

/// Header line with the axis ranges, then one row of counts per state cell.
void write_density_csv(std::ostream& out, const DensityGrid& grid);

}  // namespace sbcq::evalkit
