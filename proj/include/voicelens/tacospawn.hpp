#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "voicelens/base.hpp"
#include "voicelens/distributions.hpp"

namespace voicelens {

/// Conditional-GMM baseline: one isotropic GMM per full condition tuple,
/// behaving as a lookup table over categorical metadata.
struct ConditionalGmm {
  std::vector<std::string> condition_names;          // categorical attributes
  std::vector<std::vector<std::string>> class_lists; // aligned with names
  std::map<std::vector<int>, GmmModel> table;        // condition tuple -> GMM
  std::vector<std::string> warnings;                 // K fallbacks noted here

  int dim() const;
  void validate() const;
};

/// Partitions the corpus by condition tuple and fits one GMM per partition.
/// Every item must be fully labeled on the chosen conditions. A partition
/// smaller than K falls back to K' = its item count, with a warning record.
ConditionalGmm conditional_gmm_fit(const Eigen::MatrixXd& embeddings,
                                   const std::vector<MultiLabel>& labels,
                                   const LabelSchema& schema,
                                   const std::vector<std::string>& conditions,
                                   int k, const EmConfig& config = {});

Eigen::MatrixXd conditional_gmm_sample(const ConditionalGmm& model,
                                       const std::vector<int>& condition,
                                       int n, std::uint64_t rng_seed);

double conditional_gmm_logpdf(const ConditionalGmm& model,
                              const std::vector<int>& condition,
                              const Eigen::VectorXd& x);

nlohmann::json conditional_gmm_to_json(const ConditionalGmm& model);
ConditionalGmm conditional_gmm_from_json(const nlohmann::json& j);

}  // namespace voicelens
