#include "voicelens/tacospawn.hpp"

#include <stdexcept>

namespace voicelens {

int ConditionalGmm::dim() const {
  return table.empty() ? 0 : table.begin()->second.dim();
}

void ConditionalGmm::validate() const {
  if (condition_names.size() != class_lists.size())
    throw std::invalid_argument("ConditionalGmm: names/classes mismatch");
  if (table.empty()) throw std::invalid_argument("ConditionalGmm: empty table");
  const int d = dim();
  for (const auto& [tuple, gmm] : table) {
    if (tuple.size() != condition_names.size())
      throw std::invalid_argument("ConditionalGmm: tuple arity mismatch");
    for (std::size_t i = 0; i < tuple.size(); ++i)
      if (tuple[i] < 0 || tuple[i] >= static_cast<int>(class_lists[i].size()))
        throw std::invalid_argument("ConditionalGmm: tuple class out of range");
    if (gmm.dim() != d)
      throw std::invalid_argument("ConditionalGmm: mixed member dimensions");
    gmm.validate();
  }
}

ConditionalGmm conditional_gmm_fit(const Eigen::MatrixXd& embeddings,
                                   const std::vector<MultiLabel>& labels,
                                   const LabelSchema& schema,
                                   const std::vector<std::string>& conditions,
                                   int k, const EmConfig& config) {
  const int n = static_cast<int>(embeddings.rows());
  if (n == 0) throw std::invalid_argument("conditional_gmm_fit: empty corpus");
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("conditional_gmm_fit: label count mismatch");
  if (conditions.empty())
    throw std::invalid_argument("conditional_gmm_fit: no conditions given");

  ConditionalGmm model;
  std::vector<int> attr_indices;
  for (const auto& name : conditions) {
    const int idx = schema.attr_index(name);
    if (schema.attributes[idx].kind != AttrKind::categorical)
      throw std::invalid_argument("conditional_gmm_fit: condition '" + name +
                                  "' is not categorical");
    attr_indices.push_back(idx);
    model.condition_names.push_back(name);
    model.class_lists.push_back(schema.attributes[idx].classes);
  }

  std::map<std::vector<int>, std::vector<int>> partitions;
  for (int i = 0; i < n; ++i) {
    std::vector<int> tuple;
    for (int idx : attr_indices) {
      const auto& slot = labels[i][idx];
      if (!slot.has_value())
        throw std::invalid_argument(
            "conditional_gmm_fit: item missing condition label '" +
            schema.attributes[idx].name + "'");
      tuple.push_back(std::get<int>(*slot));
    }
    partitions[tuple].push_back(i);
  }

  for (const auto& [tuple, rows] : partitions) {
    const int count = static_cast<int>(rows.size());
    int k_used = k;
    if (count < k) {
      k_used = count;
      std::string name;
      for (std::size_t i = 0; i < tuple.size(); ++i)
        name += (i ? "," : "") + model.class_lists[i][tuple[i]];
      model.warnings.push_back("condition (" + name + ") has " +
                               std::to_string(count) + " items < K=" +
                               std::to_string(k) + "; using K'=" +
                               std::to_string(k_used));
    }
    Eigen::MatrixXd part(count, embeddings.cols());
    for (int r = 0; r < count; ++r) part.row(r) = embeddings.row(rows[r]);
    model.table[tuple] = gmm_fit_em(part, k_used, config);
  }
  model.validate();
  return model;
}

Eigen::MatrixXd conditional_gmm_sample(const ConditionalGmm& model,
                                       const std::vector<int>& condition,
                                       int n, std::uint64_t rng_seed) {
  const auto it = model.table.find(condition);
  if (it == model.table.end())
    throw std::invalid_argument("conditional_gmm_sample: unknown condition tuple");
  return gmm_sample(it->second, n, rng_seed);
}

double conditional_gmm_logpdf(const ConditionalGmm& model,
                              const std::vector<int>& condition,
                              const Eigen::VectorXd& x) {
  const auto it = model.table.find(condition);
  if (it == model.table.end())
    throw std::invalid_argument("conditional_gmm_logpdf: unknown condition tuple");
  return gmm_logpdf(x, it->second);
}

nlohmann::json conditional_gmm_to_json(const ConditionalGmm& model) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [tuple, gmm] : model.table) {
    entries.push_back(
        nlohmann::json{{"tuple", tuple}, {"gmm", gmm_to_json(gmm)}});
  }
  return nlohmann::json{{"version", 1},
                        {"kind", "conditional_gmm"},
                        {"conditions", model.condition_names},
                        {"classes", model.class_lists},
                        {"entries", std::move(entries)}};
}

ConditionalGmm conditional_gmm_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("conditional_gmm_from_json: unsupported version");
  ConditionalGmm model;
  model.condition_names = j.at("conditions").get<std::vector<std::string>>();
  model.class_lists =
      j.at("classes").get<std::vector<std::vector<std::string>>>();
  for (const auto& entry : j.at("entries")) {
    model.table[entry.at("tuple").get<std::vector<int>>()] =
        gmm_from_json(entry.at("gmm"));
  }
  model.validate();
  return model;
}

}  // namespace voicelens
