#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "voicelens/rng.hpp"

namespace voicelens {

enum class AttrKind { categorical, continuous };

/// One attribute of the base partition. Categorical class j has mean j*shift
/// in every coordinate of its section; a continuous attribute of value y has
/// mean y in every coordinate, with y ranging over [range_low, range_high].
struct AttributeSpec {
  std::string name;
  int width = 1;
  AttrKind kind = AttrKind::categorical;

  // categorical
  std::vector<std::string> classes;
  Eigen::VectorXd prior;  // sums to 1
  double shift = 6.0;

  // continuous
  double range_low = 0.0;
  double range_high = 0.0;

  int num_classes() const { return static_cast<int>(classes.size()); }
  Eigen::VectorXd class_mean(int cls) const {
    return Eigen::VectorXd::Constant(width, cls * shift);
  }
  Eigen::VectorXd value_mean(double y) const {
    return Eigen::VectorXd::Constant(width, y);
  }
  void validate() const;
};

AttributeSpec categorical_attribute(std::string name, int width,
                                    std::vector<std::string> classes,
                                    double shift = 6.0);
AttributeSpec continuous_attribute(std::string name, int width, double range_low,
                                   double range_high);

/// Ordered attribute sections followed by the residual section; widths plus
/// residual_width equal total_dim exactly.
struct LabelSchema {
  std::vector<AttributeSpec> attributes;
  int residual_width = 0;

  int num_attributes() const { return static_cast<int>(attributes.size()); }
  int total_dim() const;
  int section_offset(int attr_index) const;
  int residual_offset() const { return total_dim() - residual_width; }
  int attr_index(const std::string& name) const;  // throws when absent
  void validate() const;
};

/// A partially observed label tuple: one slot per attribute, nullopt = empty.
/// Categorical slots hold a class index, continuous slots a real value.
using LabelValue = std::variant<int, double>;
using MultiLabel = std::vector<std::optional<LabelValue>>;

MultiLabel empty_label(const LabelSchema& schema);

/// Throws std::invalid_argument on shape mismatch or invalid values.
/// Observed continuous values outside the attribute range are rejected
/// unless allow_out_of_range is set.
void validate_label(const MultiLabel& y, const LabelSchema& schema,
                    bool allow_out_of_range = false);

/// log p(z | y) over the partitioned base: standard normal residual,
/// unit-variance Gaussians for observed sections, prior-weighted mixtures
/// for empty categorical sections and per-coordinate Bhattacharjee marginals
/// for empty continuous sections.
double base_loglik(const Eigen::VectorXd& z, const MultiLabel& y,
                   const LabelSchema& schema, bool allow_out_of_range = false);

/// base_loglik plus its gradient with respect to z.
double base_loglik_grad(const Eigen::VectorXd& z, const MultiLabel& y,
                        const LabelSchema& schema, Eigen::VectorXd& grad,
                        bool allow_out_of_range = false);

/// Ancestral sample from p(z | y); empty slots draw their condition from the
/// prior (categorical) or uniform(a, b) (continuous) first.
Eigen::VectorXd base_sample(const MultiLabel& y, const LabelSchema& schema,
                            Rng& rng, bool allow_out_of_range = false);
Eigen::VectorXd base_sample(const MultiLabel& y, const LabelSchema& schema,
                            std::uint64_t rng_seed,
                            bool allow_out_of_range = false);

/// Bayes posterior over the classes of a categorical attribute given z.
Eigen::VectorXd classify(const Eigen::VectorXd& z, const LabelSchema& schema,
                         int attr_index);

/// Continuous-attribute readout: mean of the section's coordinates.
double read_continuous(const Eigen::VectorXd& z, const LabelSchema& schema,
                       int attr_index);

/// A set of embedding/label pairs (rows are samples).
struct LabeledData {
  Eigen::MatrixXd embeddings;      // n x d
  std::vector<MultiLabel> labels;  // n, possibly partial

  int size() const { return static_cast<int>(embeddings.rows()); }
};

// --- label <-> text helpers (CSV cells and CLI tokens; empty string = empty) ---
std::string label_value_to_string(const LabelSchema& schema, int attr_index,
                                  const std::optional<LabelValue>& value);
std::optional<LabelValue> label_value_from_string(const LabelSchema& schema,
                                                  int attr_index,
                                                  const std::string& text);

nlohmann::json schema_to_json(const LabelSchema& schema);
LabelSchema schema_from_json(const nlohmann::json& j);

}  // namespace voicelens
