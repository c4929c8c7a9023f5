#include "voicelens/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace voicelens {

double cos_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cos_distance: length mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cos_distance: zero vector");
  const double c = a.dot(b) / (na * nb);
  return 1.0 - std::clamp(c, -1.0, 1.0);
}

namespace {

// Pairwise cosine-distance matrix between row sets.
Eigen::MatrixXd cos_distance_matrix(const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("cos_distance: dimension mismatch");
  const Eigen::VectorXd norm_a = a.rowwise().norm();
  const Eigen::VectorXd norm_b = b.rowwise().norm();
  if (norm_a.minCoeff() == 0.0 || norm_b.minCoeff() == 0.0)
    throw std::invalid_argument("cos_distance: zero vector");
  Eigen::MatrixXd sim = a * b.transpose();
  sim.array().colwise() /= norm_a.array();
  sim.array().rowwise() /= norm_b.transpose().array();
  return (1.0 - sim.array().min(1.0).max(-1.0)).matrix();
}

}  // namespace

double nn_distance(const Eigen::MatrixXd& set_a, const Eigen::MatrixXd& set_b,
                   bool exclude_self) {
  if (set_a.rows() == 0 || set_b.rows() == 0)
    throw std::invalid_argument("nn_distance: empty set");
  if (exclude_self && (set_a.rows() < 2 || set_a.rows() != set_b.rows()))
    throw std::invalid_argument("nn_distance: exclude_self needs |A| >= 2 and A == B");
  const Eigen::MatrixXd dist = cos_distance_matrix(set_a, set_b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      if (exclude_self && i == j) continue;
      best = std::min(best, dist(i, j));
    }
    total += best;
  }
  return total / static_cast<double>(dist.rows());
}

double paired_distance(const Eigen::MatrixXd& set_a, const Eigen::MatrixXd& set_b) {
  if (set_a.rows() != set_b.rows() || set_a.rows() == 0)
    throw std::invalid_argument("paired_distance: row mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < set_a.rows(); ++i)
    total += cos_distance(set_a.row(i), set_b.row(i));
  return total / static_cast<double>(set_a.rows());
}

int clique_number(const Eigen::MatrixXd& points, double threshold) {
  if (!(threshold > 0.0))
    throw std::invalid_argument("clique_number: threshold must be positive");
  const int n = static_cast<int>(points.rows());
  if (n == 0) return 0;
  const Eigen::MatrixXd dist = cos_distance_matrix(points, points);
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      adj[i][j] = i != j && dist(i, j) >= threshold;

  std::vector<int> candidates(n);
  for (int i = 0; i < n; ++i) candidates[i] = i;
  int clique = 0;
  while (!candidates.empty()) {
    int best = -1, best_count = -1;
    for (int v : candidates) {
      int count = 0;
      for (int u : candidates)
        if (adj[v][u]) ++count;
      if (count > best_count) {
        best_count = count;
        best = v;
      }
    }
    ++clique;
    std::vector<int> next;
    for (int u : candidates)
      if (adj[best][u]) next.push_back(u);
    candidates.swap(next);
  }
  return clique;
}

double pearson_r(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("pearson_r: needs equal lengths >= 2");
  const Eigen::ArrayXd xc = xs.array() - xs.mean();
  const Eigen::ArrayXd yc = ys.array() - ys.mean();
  const double sx = std::sqrt(xc.square().sum());
  const double sy = std::sqrt(yc.square().sum());
  if (sx == 0.0 || sy == 0.0)
    throw std::invalid_argument("pearson_r: constant input");
  return std::clamp((xc * yc).sum() / (sx * sy), -1.0, 1.0);
}

double attribute_accuracy(const std::vector<int>& predicted,
                          const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || predicted.empty())
    throw std::invalid_argument("attribute_accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace voicelens
