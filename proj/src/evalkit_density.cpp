#include "sbcq/evalkit/density.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace sbcq::evalkit {

Pca1d pca_1d(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2 || d == 0) throw std::invalid_argument("pca_1d: need at least two vectors");
  Pca1d out;
  out.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) out.mean[k] += x(r, k) / static_cast<double>(n);

  Eigen::MatrixXd centered(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) centered(r, k) = x(r, k) - out.mean[k];
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("pca_1d: eigen-decomposition failed");

  const double top = eig.eigenvalues()(d - 1), trace = cov.trace();
  out.axis.assign(d, 0.0);
  out.scores.assign(n, 0.0);
  if (!(trace > 0.0)) {
    out.axis[0] = 1.0;
    out.degenerate = true;
    return out;
  }
  Eigen::VectorXd axis = eig.eigenvectors().col(d - 1).normalized();
  Eigen::VectorXd scores = centered * axis;
  Eigen::Index arg = 0;
  scores.cwiseAbs().maxCoeff(&arg);
  if (scores(arg) < 0.0) {
    axis = -axis;
    scores = -scores;
  }
  for (std::size_t k = 0; k < d; ++k) out.axis[k] = axis(static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < n; ++r) out.scores[r] = scores(static_cast<Eigen::Index>(r));
  out.explained = top / trace;
  return out;
}

Vector project(const Pca1d& pca, const Matrix& x) {
  if (x.cols() != pca.axis.size()) throw std::invalid_argument("project: dimension mismatch");
  Vector out(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t k = 0; k < x.cols(); ++k) out[r] += (x(r, k) - pca.mean[k]) * pca.axis[k];
  return out;
}

double DensityGrid::total() const {
  double s = 0.0;
  for (double v : counts.values()) s += v;
  return s;
}

namespace {

std::size_t cell(double v, double lo, double hi, std::size_t bins) {
  if (!(hi > lo)) return 0;
  const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
  return std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(t))));
}

}  // namespace

DensityGrid density_grid(std::span<const double> state_scores, std::span<const double> action_scores,
                         std::size_t bins) {
  if (state_scores.empty()) throw std::invalid_argument("density_grid: empty input");
  if (state_scores.size() != action_scores.size()) throw std::invalid_argument("density_grid: length mismatch");
  if (bins == 0) throw std::invalid_argument("density_grid: bins must be >= 1");
  DensityGrid g;
  g.bins = bins;
  const auto [slo, shi] = std::minmax_element(state_scores.begin(), state_scores.end());
  const auto [alo, ahi] = std::minmax_element(action_scores.begin(), action_scores.end());
  g.state_lo = *slo;
  g.state_hi = *shi;
  g.action_lo = *alo;
  g.action_hi = *ahi;
  g.counts = Matrix(bins, bins);
  for (std::size_t i = 0; i < state_scores.size(); ++i)
    g.counts(cell(state_scores[i], g.state_lo, g.state_hi, bins), cell(action_scores[i], g.action_lo, g.action_hi, bins)) +=
        1.0;
  return g;
}

void write_density_csv(std::ostream& out, const DensityGrid& grid) {
  out << "# bins=" << grid.bins << " state_range=" << grid.state_lo << ':' << grid.state_hi
      << " action_range=" << grid.action_lo << ':' << grid.action_hi << '\n';
  for (std::size_t r = 0; r < grid.bins; ++r) {
    for (std::size_t c = 0; c < grid.bins; ++c) out << (c ? "," : "") << grid.counts(r, c);
    out << '\n';
  }
}

}  // namespace sbcq::evalkit
