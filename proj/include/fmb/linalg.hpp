#pragma once

// Dense linear-algebra helpers shared by every module: probability-weighted
// moments, least-norm solves for covariance regressions, and eigenvalue
// repair of curvature matrices.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "fmb/error.hpp"

namespace fmb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// q-weighted mean of the rows of X.
inline Vec weighted_mean(const Vec& q, const Mat& x) { return x.transpose() * q; }

/// q-weighted cross-covariance Cov(X, Y) = sum_i q_i (x_i - xbar)(y_i - ybar)^T.
/// Probability-weighted moments, no sample correction.
inline Mat weighted_cov(const Vec& q, const Mat& x, const Mat& y) {
  const Vec xbar = weighted_mean(q, x);
  const Vec ybar = weighted_mean(q, y);
  const Mat xc = x.rowwise() - xbar.transpose();
  const Mat yc = y.rowwise() - ybar.transpose();
  return xc.transpose() * q.asDiagonal() * yc;
}

inline Mat weighted_cov(const Vec& q, const Mat& x) { return symmetrize(weighted_cov(q, x, x)); }

/// Covariance of a scalar w with each column of X.
inline Vec weighted_cov(const Vec& q, const Vec& w, const Mat& x) {
  const double wbar = q.dot(w);
  const Vec xbar = weighted_mean(q, x);
  const Mat xc = x.rowwise() - xbar.transpose();
  return xc.transpose() * q.cwiseProduct((w.array() - wbar).matrix());
}

/// Least-norm solution of a symmetric PSD system S x = b. Eigenvalues below
/// rel_tol times the largest magnitude are treated as zero.
inline Vec pinv_solve(const Mat& s, const Vec& b, double rel_tol = 1e-10) {
  const Eigen::Index n = s.rows();
  if (n == 0) return Vec(0);
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(s));
  const Vec& lam = es.eigenvalues();
  const double lmax = lam.cwiseAbs().maxCoeff();
  if (lmax == 0.0) return Vec::Zero(n);
  const Vec proj = es.eigenvectors().transpose() * b;
  Vec scaled = Vec::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(lam(i)) > rel_tol * lmax) scaled(i) = proj(i) / lam(i);
  }
  return es.eigenvectors() * scaled;
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix with the same cutoff.
inline Mat pinv_sym(const Mat& s, double rel_tol = 1e-10) {
  const Eigen::Index n = s.rows();
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(s));
  const Vec& lam = es.eigenvalues();
  const double lmax = n ? lam.cwiseAbs().maxCoeff() : 0.0;
  Vec inv = Vec::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lmax > 0.0 && std::abs(lam(i)) > rel_tol * lmax) inv(i) = 1.0 / lam(i);
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline double min_eigenvalue(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(s), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(s), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Result of repairing a curvature matrix into a positive-definite metric.
struct RepairedMetric {
  Mat matrix;       // repaired PD matrix
  Mat inverse;      // its inverse, from the same eigensystem
  int flipped = 0;  // eigenvalues that were negative
  int clamped = 0;  // eigenvalues raised to the floor
};

/// Eigenvalue repair of a symmetric matrix that should be positive definite:
/// negative eigenvalues are flipped, then anything below floor_rel * lambda_max
/// is raised to that floor. Eigenvectors are kept. Throws if the matrix has
/// no positive eigenvalue at all.
inline RepairedMetric repair_pd(const Mat& a, double floor_rel, const std::string& what) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a));
  Vec lam = es.eigenvalues();
  if (lam.size() == 0 || !(lam.maxCoeff() > 0.0)) throw NumericalError(what);
  const double floor = floor_rel * lam.maxCoeff();
  RepairedMetric out;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam(i) < 0.0) {
      lam(i) = -lam(i);
      ++out.flipped;
    }
    if (lam(i) < floor) {
      lam(i) = floor;
      ++out.clamped;
    }
  }
  const Mat& v = es.eigenvectors();
  out.matrix = v * lam.asDiagonal() * v.transpose();
  out.inverse = v * lam.cwiseInverse().asDiagonal() * v.transpose();
  return out;
}

/// Eigenvalue floor at floor_rel * lambda_max, used to keep covariances PD.
inline Mat floor_pd(const Mat& a, double floor_rel) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a));
  Vec lam = es.eigenvalues();
  const double floor = floor_rel * std::max(lam.maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < lam.size(); ++i) lam(i) = std::max(lam(i), floor);
  return symmetrize(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

/// Symmetric PSD square root; negative eigenvalues from rounding are zeroed.
inline Mat sqrt_psd(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a));
  const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace fmb
