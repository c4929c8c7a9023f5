#include "voicelens/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "voicelens/rng.hpp"

namespace voicelens {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112353;
constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

double logsumexp(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (m == -kInf) return -kInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

double logsumexp(const Eigen::VectorXd& xs) {
  if (xs.size() == 0) throw std::invalid_argument("logsumexp: empty input");
  const double m = xs.maxCoeff();
  if (m == -kInf) return -kInf;
  return m + std::log((xs.array() - m).exp().sum());
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double std_normal_logpdf(double x) { return -0.5 * (kLog2Pi + x * x); }

double log_std_normal_cdf(double x) {
  if (x > -10.0) {
    // erfc does not underflow here (argument below ~7.1).
    return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  }
  // Lower tail: Phi(x) = phi(x)/(-x) * [1 - 1/x^2 + 3/x^4 - 15/x^6 + ...]
  const double inv_x2 = 1.0 / (x * x);
  double term = 1.0, series = 1.0;
  for (int k = 1; k < 40; ++k) {
    term *= -(2.0 * k - 1.0) * inv_x2;
    if (std::abs(term) < 1e-17 * std::abs(series)) break;
    series += term;
  }
  return std_normal_logpdf(x) - std::log(-x) + std::log(series);
}

double gaussian_iso_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                           double var) {
  if (x.size() != mean.size())
    throw std::invalid_argument("gaussian_iso_logpdf: dimension mismatch");
  if (!(var > 0.0))
    throw std::invalid_argument("gaussian_iso_logpdf: variance must be positive");
  const double d = static_cast<double>(x.size());
  return -0.5 * d * (kLog2Pi + std::log(var)) -
         (x - mean).squaredNorm() / (2.0 * var);
}

namespace {

// log(Phi(hi) - Phi(lo)) for hi > lo, reflected so both CDF arguments are
// evaluated on the side that avoids cancellation.
double log_cdf_difference(double hi, double lo) {
  double l1, l2;
  if (hi + lo > 0.0) {
    l1 = log_std_normal_cdf(-lo);
    l2 = log_std_normal_cdf(-hi);
  } else {
    l1 = log_std_normal_cdf(hi);
    l2 = log_std_normal_cdf(lo);
  }
  return l1 + std::log1p(-std::exp(l2 - l1));
}

}  // namespace

double bhattacharjee_logpdf(double z, double a, double b) {
  if (!(a < b)) throw std::invalid_argument("bhattacharjee_logpdf: requires a < b");
  return log_cdf_difference(z - a, z - b) - std::log(b - a);
}

double bhattacharjee_dlogpdf_dz(double z, double a, double b) {
  if (!(a < b)) throw std::invalid_argument("bhattacharjee_dlogpdf_dz: requires a < b");
  const double log_mass = log_cdf_difference(z - a, z - b);
  // d/dz log[Phi(z-a) - Phi(z-b)] = (phi(z-a) - phi(z-b)) / mass
  return std::exp(std_normal_logpdf(z - a) - log_mass) -
         std::exp(std_normal_logpdf(z - b) - log_mass);
}

void GmmModel::validate(double var_floor) const {
  const int k = components();
  if (k < 1) throw std::invalid_argument("GmmModel: needs at least one component");
  if (means.rows() != k || variances.size() != k)
    throw std::invalid_argument("GmmModel: inconsistent component counts");
  if (weights.minCoeff() < 0.0)
    throw std::invalid_argument("GmmModel: negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("GmmModel: weights must sum to 1");
  if (!means.allFinite()) throw std::invalid_argument("GmmModel: non-finite mean");
  if (variances.minCoeff() < var_floor || !(variances.minCoeff() > 0.0))
    throw std::invalid_argument("GmmModel: variance below floor");
}

double gmm_logpdf(const Eigen::VectorXd& x, const GmmModel& model) {
  if (x.size() != model.dim())
    throw std::invalid_argument("gmm_logpdf: dimension mismatch");
  const int k = model.components();
  Eigen::VectorXd scores(k);
  for (int i = 0; i < k; ++i) {
    const double w = model.weights[i];
    scores[i] = w > 0.0 ? std::log(w) + gaussian_iso_logpdf(x, model.means.row(i),
                                                            model.variances[i])
                        : -kInf;
  }
  return logsumexp(scores);
}

Eigen::MatrixXd gmm_sample(const GmmModel& model, int n, std::uint64_t rng_seed) {
  if (n < 1) throw std::invalid_argument("gmm_sample: n must be >= 1");
  model.validate();
  Rng rng(rng_seed);
  const int d = model.dim();
  Eigen::MatrixXd out(n, d);
  for (int i = 0; i < n; ++i) {
    const int k = rng.categorical(model.weights);
    const double sd = std::sqrt(model.variances[k]);
    for (int j = 0; j < d; ++j) out(i, j) = model.means(k, j) + sd * rng.normal();
  }
  return out;
}

namespace {

// k-means++ seeding: first center uniform, then proportional to squared
// distance from the nearest chosen center.
std::vector<int> kmeanspp_seeds(const Eigen::MatrixXd& data, int k, Rng& rng) {
  const int n = static_cast<int>(data.rows());
  std::vector<int> centers;
  centers.push_back(static_cast<int>(rng.next_u64() % n));
  Eigen::VectorXd dist2 =
      (data.rowwise() - data.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = dist2.sum();
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.next_u64() % n);
    } else {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        u -= dist2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
    dist2 = dist2.cwiseMin(
        (data.rowwise() - data.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

GmmModel gmm_fit_em(const Eigen::MatrixXd& data, int k, const EmConfig& config,
                    std::vector<double>* loglik_trace) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  if (k < 1) throw std::invalid_argument("gmm_fit_em: k must be >= 1");
  if (n < k) throw std::invalid_argument("gmm_fit_em: fewer points than components");
  if (d < 1) throw std::invalid_argument("gmm_fit_em: empty dimension");

  Rng rng(config.rng_seed);
  GmmModel model;
  model.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
  model.means.resize(k, d);
  model.variances = Eigen::VectorXd::Ones(k);

  // Initialize from a hard assignment to the k-means++ seeds.
  const std::vector<int> seeds = kmeanspp_seeds(data, k, rng);
  Eigen::VectorXi assign(n);
  for (int i = 0; i < n; ++i) {
    double best = kInf;
    for (int c = 0; c < k; ++c) {
      const double dist = (data.row(i) - data.row(seeds[c])).squaredNorm();
      if (dist < best) {
        best = dist;
        assign[i] = c;
      }
    }
  }
  const double global_var = std::max(
      config.var_floor,
      (data.rowwise() - data.colwise().mean()).squaredNorm() / (n * d));
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    double sq = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
      if (assign[i] != c) continue;
      sum += data.row(i).transpose();
      ++count;
    }
    if (count == 0) {
      model.means.row(c) = data.row(seeds[c]);
      model.variances[c] = global_var;
      model.weights[c] = 1.0 / n;
      continue;
    }
    model.means.row(c) = sum.transpose() / count;
    for (int i = 0; i < n; ++i)
      if (assign[i] == c) sq += (data.row(i) - model.means.row(c)).squaredNorm();
    model.variances[c] = std::max(config.var_floor, count > 0 ? sq / (count * d) : global_var);
    if (model.variances[c] <= 0.0) model.variances[c] = global_var;
    model.weights[c] = static_cast<double>(count) / n;
  }
  model.weights /= model.weights.sum();

  Eigen::MatrixXd log_resp(n, k);
  double prev_loglik = -kInf;
  for (int iter = 0; iter < config.max_iters; ++iter) {
    // E-step.
    for (int c = 0; c < k; ++c) {
      const double logw =
          model.weights[c] > 0.0 ? std::log(model.weights[c]) : -kInf;
      const double v = model.variances[c];
      log_resp.col(c) =
          ((data.rowwise() - model.means.row(c)).rowwise().squaredNorm() *
           (-0.5 / v))
              .array() +
          (logw - 0.5 * d * (kLog2Pi + std::log(v)));
    }
    double loglik = 0.0;
    for (int i = 0; i < n; ++i) {
      const double lse = logsumexp(Eigen::VectorXd(log_resp.row(i)));
      loglik += lse;
      log_resp.row(i) = (log_resp.row(i).array() - lse).exp();
    }
    if (loglik_trace) loglik_trace->push_back(loglik);
    if (loglik - prev_loglik < config.tol && iter > 0) break;
    prev_loglik = loglik;

    // M-step (log_resp now holds responsibilities).
    for (int c = 0; c < k; ++c) {
      const double nk = log_resp.col(c).sum();
      if (nk < 1e-12) {
        model.weights[c] = nk / n;
        continue;
      }
      model.weights[c] = nk / n;
      model.means.row(c) = (log_resp.col(c).transpose() * data) / nk;
      const double sq =
          (log_resp.col(c).array() *
           (data.rowwise() - model.means.row(c)).rowwise().squaredNorm().array())
              .sum();
      model.variances[c] = std::max(config.var_floor, sq / (nk * d));
    }
    model.weights /= model.weights.sum();
  }
  model.validate();
  return model;
}

nlohmann::json gmm_to_json(const GmmModel& model) {
  nlohmann::json j;
  j["version"] = 1;
  j["d"] = model.dim();
  j["K"] = model.components();
  j["weights"] = std::vector<double>(model.weights.begin(), model.weights.end());
  std::vector<std::vector<double>> means;
  for (int c = 0; c < model.components(); ++c)
    means.emplace_back(model.means.row(c).begin(), model.means.row(c).end());
  j["means"] = means;
  j["variances"] =
      std::vector<double>(model.variances.begin(), model.variances.end());
  return j;
}

GmmModel gmm_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("gmm_from_json: unsupported version");
  const int k = j.at("K").get<int>();
  const int d = j.at("d").get<int>();
  GmmModel model;
  model.weights.resize(k);
  model.means.resize(k, d);
  model.variances.resize(k);
  const auto& w = j.at("weights");
  const auto& m = j.at("means");
  const auto& v = j.at("variances");
  for (int c = 0; c < k; ++c) {
    model.weights[c] = w.at(c).get<double>();
    model.variances[c] = v.at(c).get<double>();
    for (int i = 0; i < d; ++i) model.means(c, i) = m.at(c).at(i).get<double>();
  }
  model.validate();
  return model;
}

}  // namespace voicelens
