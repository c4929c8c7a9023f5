#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace voicelens {

/// 1 - cos(a, b), in [0, 2]. Throws on zero vectors or length mismatch.
double cos_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Mean over rows of A of the smallest cosine distance to a row of B.
/// With exclude_self (A and B the same set, row-aligned) the matching row
/// is skipped.
double nn_distance(const Eigen::MatrixXd& set_a, const Eigen::MatrixXd& set_b,
                   bool exclude_self = false);

/// Mean cosine distance between row-aligned pairs (A_i, B_i).
double paired_distance(const Eigen::MatrixXd& set_a, const Eigen::MatrixXd& set_b);

/// Greedy lower-bound clique estimate over the graph with an edge wherever
/// cos_distance >= threshold: repeatedly take the candidate with the most
/// remaining candidate-neighbors (ties to the lowest index). Empty input
/// gives 0.
int clique_number(const Eigen::MatrixXd& points, double threshold);

/// Sample Pearson correlation; throws on constant input or length < 2.
double pearson_r(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys);

/// Fraction of exact matches.
double attribute_accuracy(const std::vector<int>& predicted,
                          const std::vector<int>& truth);

struct DistanceReport {
  double s2s = 0.0;
  double s2g = 0.0;
  double g2g = 0.0;
  double s2t_s = 0.0;  // approximate; see module notes
};

}  // namespace voicelens
