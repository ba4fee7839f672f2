#pragma once

// Gaussian-process regression at the training inputs and linear Kalman
// filtering, both written as metric times force.

#include <cmath>
#include <vector>

#include "fmb/optim.hpp"

namespace fmb {

inline double rbf_kernel(const Vec& x, const Vec& y, double sigma_g, double ell) {
  if (!(sigma_g > 0.0) || !(ell > 0.0)) throw NumericalError("rbf kernel needs sigma_g > 0 and ell > 0");
  return sigma_g * sigma_g * std::exp(-(x - y).squaredNorm() / (2.0 * ell * ell));
}

/// Gram matrix over the rows of X.
inline Mat rbf_gram(const Mat& x, double sigma_g, double ell) {
  const Eigen::Index n = x.rows();
  Mat k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j)
      k(i, j) = k(j, i) = rbf_kernel(x.row(i).transpose(), x.row(j).transpose(), sigma_g, ell);
  return k;
}

struct GpModel {
  Mat inputs;  // N x d
  double sigma_g = 1.0;
  double ell = 1.0;
  double noise_var = 1.0;
  Vec prior_mean;  // values of the prior mean at the inputs

  void validate() const {
    if (inputs.rows() < 1) throw NumericalError("gp model needs at least one input");
    if (!(sigma_g > 0.0) || !(ell > 0.0)) throw NumericalError("gp kernel needs sigma_g > 0 and ell > 0");
    if (!(noise_var > 0.0)) throw NumericalError("gp noise_var must be positive");
    if (prior_mean.size() != inputs.rows()) throw NumericalError("prior_mean must have one value per input");
    if (!inputs.allFinite() || !prior_mean.allFinite()) throw NumericalError("gp model has non-finite entries");
  }
};

struct GpUpdate {
  Vec delta_mean;
  Mat M;
  Vec f;
  Vec posterior_mean;
  double jitter = 0.0;
};

/// M = (K^-1 + I/sigma^2)^-1, f = (y - mu0)/sigma^2, computed in K's eigenbasis
/// so that M is defined even when K is singular.
inline GpUpdate gp_update(const GpModel& model, const Vec& y) {
  model.validate();
  if (y.size() != model.inputs.rows()) throw NumericalError("y must have one value per input");
  if (!y.allFinite()) throw NumericalError("y has non-finite entries");
  const Eigen::Index n = y.size();
  Mat k = rbf_gram(model.inputs, model.sigma_g, model.ell);

  GpUpdate out;
  if (Eigen::LLT<Mat>(k).info() != Eigen::Success) {
    out.jitter = 1e-10 * k.trace() / double(n);
    k.diagonal().array() += out.jitter;
    if (Eigen::LLT<Mat>(k).info() != Eigen::Success)
      throw NumericalError("Gram matrix is not invertible even with jitter");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(k);
  const double s2 = model.noise_var;
  const Vec lam = es.eigenvalues().cwiseMax(0.0);
  const Vec shrink = (lam.array() * s2 / (lam.array() + s2)).matrix();
  out.M = symmetrize(es.eigenvectors() * shrink.asDiagonal() * es.eigenvectors().transpose());
  out.f = (y - model.prior_mean) / s2;
  out.delta_mean = out.M * out.f;
  out.posterior_mean = model.prior_mean + out.delta_mean;
  return out;
}

struct FilterState {
  Vec x;
  Mat P;
};

struct LinearSystem {
  Mat F, Q, H, R;

  void validate() const {
    const Eigen::Index n = F.rows();
    if (F.cols() != n || Q.rows() != n || Q.cols() != n) throw NumericalError("F and Q must be n x n");
    if (H.cols() != n || R.rows() != H.rows() || R.cols() != H.rows()) throw NumericalError("H must be k x n, R k x k");
    if (min_eigenvalue(Q) < -1e-12 * std::max(1.0, Q.cwiseAbs().maxCoeff())) throw NumericalError("Q must be PSD");
    if (!(min_eigenvalue(R) > 0.0)) throw NumericalError("R must be positive definite");
  }
};

inline void check_state(const FilterState& s, Eigen::Index n) {
  if (s.x.size() != n || s.P.rows() != n || s.P.cols() != n) throw NumericalError("filter state has the wrong size");
}

inline FilterState kalman_predict(const FilterState& s, const LinearSystem& sys) {
  check_state(s, sys.F.rows());
  return {sys.F * s.x, symmetrize(sys.F * s.P * sys.F.transpose() + sys.Q)};
}

struct KalmanUpdate {
  FilterState posterior;
  StepReport report;  // M = prior covariance, f = H^T S^-1 v
  Vec innovation;
  Mat S_inv;
};

inline KalmanUpdate kalman_update(const FilterState& prior, const LinearSystem& sys, const Vec& y) {
  const Eigen::Index n = sys.F.rows();
  check_state(prior, n);
  if (y.size() != sys.H.rows()) throw NumericalError("observation has the wrong size");
  const Mat S = symmetrize(sys.H * prior.P * sys.H.transpose() + sys.R);
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success) throw NumericalError("singular innovation covariance");
  const Eigen::Index k = S.rows();
  KalmanUpdate out;
  out.S_inv = symmetrize(llt.solve(Mat::Identity(k, k)));
  out.innovation = y - sys.H * prior.x;
  const Vec f = sys.H.transpose() * out.S_inv * out.innovation;
  const Vec dx = prior.P * f;

  const Mat gain = prior.P * sys.H.transpose() * out.S_inv;
  const Mat I_KH = Mat::Identity(n, n) - gain * sys.H;
  out.posterior.x = prior.x + dx;
  out.posterior.P = symmetrize(I_KH * prior.P * I_KH.transpose() + gain * sys.R * gain.transpose());

  StepReport& r = out.report;
  r.delta_theta = dx;
  r.fmb = FmbDecomposition{prior.P, f, Mat::Zero(n, n), Vec::Zero(n), Vec::Zero(n), Vec::Zero(n)};
  r.diagnostics["innovation_norm"] = out.innovation.norm();
  r.diagnostics["gain_form_err"] = (dx - gain * out.innovation).lpNorm<Eigen::Infinity>();
  r.diagnostics["predicted_gain"] = r.predicted_gain();
  return out;
}

struct KalmanTraceRow {
  long t = 0;
  FilterState state;
  double innovation_norm = 0.0;
};

/// Alternating predict/update over the observations; row 0 is the initial state.
inline std::vector<KalmanTraceRow> kalman_run(const LinearSystem& sys, const FilterState& init,
                                              const std::vector<Vec>& observations) {
  sys.validate();
  check_state(init, sys.F.rows());
  std::vector<KalmanTraceRow> trace{{0, init, 0.0}};
  FilterState cur = init;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    const KalmanUpdate up = kalman_update(kalman_predict(cur, sys), sys, observations[t]);
    cur = up.posterior;
    trace.push_back({static_cast<long>(t + 1), cur, up.innovation.norm()});
  }
  return trace;
}

struct SimulatedSystem {
  std::vector<Vec> truth;  // hidden states x_1..x_T
  std::vector<Vec> observations;
};

/// Draws x_t = F x_{t-1} + w, y_t = H x_t + v with Gaussian noise from Q and R.
inline SimulatedSystem simulate_linear_system(const LinearSystem& sys, const Vec& x0, int steps, Rng& rng) {
  sys.validate();
  const Mat q_root = sqrt_psd(sys.Q), r_root = sqrt_psd(sys.R);
  SimulatedSystem out;
  Vec x = x0;
  for (int t = 0; t < steps; ++t) {
    x = sys.F * x + q_root * rng.normal_vec(x.size());
    out.truth.push_back(x);
    out.observations.push_back(sys.H * x + r_root * rng.normal_vec(sys.H.rows()));
  }
  return out;
}

}  // namespace fmb
