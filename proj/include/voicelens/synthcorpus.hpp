#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "voicelens/base.hpp"

namespace voicelens {

/// Latent effect of one attribute on the generated embeddings. Effect
/// directions are unit-norm and mutually orthogonal across the whole spec,
/// which keeps the Bayes posteriors of the generator exactly computable.
struct AttributeEffect {
  Eigen::MatrixXd class_offsets;  // categorical: classes x d
  Eigen::VectorXd proportions;    // categorical sampling proportions
  Eigen::VectorXd direction;      // continuous: d, unit norm (effect = value * direction)
};

struct GeneratorSpec {
  LabelSchema schema;  // embedding dimension = schema.total_dim()
  double sigma_noise = 1.0;
  int n_items = 1200;
  double val_fraction = 0.125;
  std::vector<AttributeEffect> effects;  // aligned with schema.attributes

  int dim() const { return schema.total_dim(); }
  void validate() const;

  /// Seeded construction: effect directions are Gaussian draws,
  /// orthonormalized, with categorical class offsets scaled to
  /// separation * sigma_noise.
  static GeneratorSpec create(const LabelSchema& schema, double separation,
                              double sigma_noise, int n_items,
                              double val_fraction, std::uint64_t rng_seed);
};

/// The (gender, age, snr) schema used throughout: width-1 categorical
/// sections with shift 6, an SNR section over [25, 55] dB, and the rest of
/// the dimensions residual.
LabelSchema default_schema(int d = 64);

/// Deliberately well separated clusters (8 sigma).
GeneratorSpec easy_preset(int d = 64, int n_items = 1200, std::uint64_t seed = 1);
/// Overlapping clusters (1.5 sigma); difficult decision boundaries.
GeneratorSpec hard_preset(int d = 64, int n_items = 1200, std::uint64_t seed = 1);

enum class Split : int { train = 0, val = 1 };

struct Corpus {
  LabelSchema schema;
  Eigen::MatrixXd embeddings;      // n x d
  std::vector<MultiLabel> labels;  // possibly partial
  std::vector<MultiLabel> truth;   // always full
  std::vector<Split> split;

  int size() const { return static_cast<int>(embeddings.rows()); }
  LabeledData subset(Split which) const;
  std::vector<int> indices(Split which) const;
};

Corpus generate(const GeneratorSpec& spec, std::uint64_t rng_seed);

/// Exact Bayes posterior over a categorical attribute's classes under the
/// generator model.
Eigen::VectorXd oracle_posterior(const GeneratorSpec& spec,
                                 const Eigen::VectorXd& e, int attr_index);
int oracle_class(const GeneratorSpec& spec, const Eigen::VectorXd& e,
                 int attr_index);
/// Least-squares readout of a continuous attribute along its direction.
double oracle_value(const GeneratorSpec& spec, const Eigen::VectorXd& e,
                    int attr_index);

/// Sets the attribute to empty on a seeded random (1 - keep_fraction) subset
/// of items; truth is untouched.
Corpus drop_labels(const Corpus& corpus, int attr_index, double keep_fraction,
                   std::uint64_t rng_seed);

// --- disk formats ---
// embeddings: one-line JSON header {version,n,d,dtype,order} + raw f64
// labels.csv: split column, one column per attribute, truth_* columns
void save_embeddings_bin(const std::string& path, const Eigen::MatrixXd& rows);
Eigen::MatrixXd load_embeddings_bin(const std::string& path);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

nlohmann::json generator_to_json(const GeneratorSpec& spec);
GeneratorSpec generator_from_json(const nlohmann::json& j);

}  // namespace voicelens
