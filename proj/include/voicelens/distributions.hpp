#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include <json.hpp>

namespace voicelens {

// ---------------------------------------------------------------------------
// Scalar special functions
// ---------------------------------------------------------------------------

/// log(sum_i exp(xs_i)), overflow-free. All-(-inf) input yields -inf.
/// Throws std::invalid_argument on empty input.
double logsumexp(const std::vector<double>& xs);
double logsumexp(const Eigen::VectorXd& xs);

/// Standard normal CDF, absolute error well below 1e-12.
double std_normal_cdf(double x);

/// log(std_normal_cdf(x)), accurate deep into the lower tail where the
/// CDF itself underflows.
double log_std_normal_cdf(double x);

/// log N(x; 0, 1) for a scalar.
double std_normal_logpdf(double x);

/// log N(x; mean, var*I) for an isotropic Gaussian of dimension x.size().
double gaussian_iso_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                           double var);

/// Marginal density of N(z; y, 1) with y ~ uniform(a, b):
/// log[(Phi(z-a) - Phi(z-b)) / (b-a)].  Stable for z far outside [a, b].
double bhattacharjee_logpdf(double z, double a, double b);

/// d/dz of bhattacharjee_logpdf, same stability domain.
double bhattacharjee_dlogpdf_dz(double z, double a, double b);

// ---------------------------------------------------------------------------
// Isotropic Gaussian mixtures
// ---------------------------------------------------------------------------

struct GmmModel {
  Eigen::VectorXd weights;    // K, sums to 1
  Eigen::MatrixXd means;      // K x d
  Eigen::VectorXd variances;  // K, one scalar per component (sigma^2 I)

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  /// Throws std::invalid_argument when the invariants are violated.
  void validate(double var_floor = 0.0) const;
};

double gmm_logpdf(const Eigen::VectorXd& x, const GmmModel& model);

/// Ancestral sampling; rows are samples. Pure function of (model, n, seed).
Eigen::MatrixXd gmm_sample(const GmmModel& model, int n, std::uint64_t rng_seed);

struct EmConfig {
  int max_iters = 200;
  double tol = 1e-7;
  double var_floor = 1e-6;
  std::uint64_t rng_seed = 0;
};

/// EM fit with k-means++ seeding. `loglik_trace`, when given, receives the
/// total data log-likelihood under the parameters at the start of each
/// iteration (a non-decreasing sequence).
GmmModel gmm_fit_em(const Eigen::MatrixXd& data, int k, const EmConfig& config = {},
                    std::vector<double>* loglik_trace = nullptr);

nlohmann::json gmm_to_json(const GmmModel& model);
GmmModel gmm_from_json(const nlohmann::json& j);

}  // namespace voicelens
