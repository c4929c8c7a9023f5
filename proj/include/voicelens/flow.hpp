#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "voicelens/base.hpp"
#include "voicelens/distributions.hpp"

namespace voicelens {

// ---------------------------------------------------------------------------
// Masked feed-forward conditioner (MADE-style, two hidden layers)
// ---------------------------------------------------------------------------

struct MadeParams {
  Eigen::MatrixXd w1, w2, wm, ws;  // hidden x d, hidden x hidden, d x hidden (x2)
  Eigen::VectorXd b1, b2, bm, bs;

  template <typename F>
  void visit(F&& f) {
    f(w1), f(b1), f(w2), f(b2), f(wm), f(bm), f(ws), f(bs);
  }
  template <typename F>
  void visit(F&& f) const {
    f(w1), f(b1), f(w2), f(b2), f(wm), f(bm), f(ws), f(bs);
  }
  void set_zero();
  Eigen::Index size() const;
};

/// Emits a per-dimension shift m and clamped log-scale s where (m_i, s_i)
/// depend only on input dimensions of strictly lower degree.
struct MadeNet {
  Eigen::VectorXi degrees;                  // d; a permutation of 1..d
  Eigen::VectorXi h1_degrees, h2_degrees;   // ascending
  Eigen::MatrixXd mask1, mask2, mask_out;   // 0/1
  MadeParams params;
  double clamp_bound = 5.0;

  int dim() const { return static_cast<int>(degrees.size()); }
  int hidden() const { return static_cast<int>(h1_degrees.size()); }

  /// Zero output head: the induced transform starts as the identity map.
  static MadeNet create(const Eigen::VectorXi& degrees, int hidden,
                        double clamp_bound, Rng& init_rng);

  struct Cache {
    Eigen::MatrixXd h1, h2, s;  // tanh activations and clamped log-scale
  };

  /// Columns of x are samples. Fills shift and log_scale (both d x N).
  void forward(const Eigen::MatrixXd& x, Eigen::MatrixXd& shift,
               Eigen::MatrixXd& log_scale, Cache* cache = nullptr) const;

  /// Backprop for d_shift/d_log_scale given the forward cache; accumulates
  /// parameter gradients into `grads` and returns dL/dx in `dx`.
  void backward(const Eigen::MatrixXd& x, const Cache& cache,
                const Eigen::MatrixXd& d_shift, const Eigen::MatrixXd& d_log_scale,
                MadeParams& grads, Eigen::MatrixXd& dx) const;
};

// ---------------------------------------------------------------------------
// Flow layers and model
// ---------------------------------------------------------------------------

/// One affine autoregressive layer in the density-evaluation direction:
/// z_i = (x_i - m_i(x_<i)) * exp(-s_i(x_<i)), logdet += -sum_i s_i.
struct MafLayer {
  MadeNet net;

  struct Cache {
    Eigen::MatrixXd x;         // layer input
    Eigen::MatrixXd shift, log_scale, z;
    MadeNet::Cache net_cache;
  };

  void forward(const Eigen::MatrixXd& x, Eigen::MatrixXd& z,
               Eigen::RowVectorXd& logdet, Cache* cache = nullptr) const;

  /// dL/dz and dL/dlogdet (per sample) in; dL/dx out; parameter grads
  /// accumulated.
  void backward(const Cache& cache, const Eigen::MatrixXd& dz,
                const Eigen::RowVectorXd& dlogdet, MadeParams& grads,
                Eigen::MatrixXd& dx) const;

  /// Sequential inversion along the degree ordering (columns are samples).
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& z) const;
};

struct EditRequest {
  int attr_index = 0;
  std::optional<int> new_class;    // categorical
  std::optional<double> new_value; // continuous, absolute
  std::optional<double> delta;     // continuous, relative
};

class FlowModel {
 public:
  FlowModel() = default;

  /// Identity-initialized stack; hidden < 0 selects max(2d, 64). Layer
  /// orderings alternate between canonical and reversed so that the final
  /// layer emits base coordinates in canonical order.
  static FlowModel create(const LabelSchema& schema, int n_layers = 5,
                          int hidden = -1, double clamp_bound = 5.0,
                          std::uint64_t rng_seed = 0);

  const LabelSchema& schema() const { return schema_; }
  LabelSchema& mutable_schema() { return schema_; }
  const std::vector<MafLayer>& layers() const { return layers_; }
  std::vector<MafLayer>& mutable_layers() { return layers_; }
  int dim() const { return schema_.total_dim(); }

  /// Data -> base. Columns of x are samples; logdet is 1 x N.
  void forward_batch(const Eigen::MatrixXd& x, Eigen::MatrixXd& z,
                     Eigen::RowVectorXd& logdet,
                     std::vector<MafLayer::Cache>* caches = nullptr) const;
  std::pair<Eigen::VectorXd, double> forward(const Eigen::VectorXd& e) const;

  /// Base -> data (reverse path).
  Eigen::MatrixXd inverse_batch(const Eigen::MatrixXd& z) const;
  Eigen::VectorXd inverse(const Eigen::VectorXd& z) const;

  /// log p(e | y) by change of variables against the partitioned base.
  double loglik(const Eigen::VectorXd& e, const MultiLabel& y) const;
  /// Rows of `embeddings` are samples.
  Eigen::VectorXd loglik_batch(const Eigen::MatrixXd& embeddings,
                               const std::vector<MultiLabel>& labels) const;

  /// Posterior over a categorical attribute's classes for one embedding.
  Eigen::VectorXd classify_embedding(const Eigen::VectorXd& e, int attr_index) const;
  double read_embedding_continuous(const Eigen::VectorXd& e, int attr_index) const;

  /// Conditional generation; rows are samples. Pure in (y, n, seed).
  Eigen::MatrixXd sample(const MultiLabel& y, int n, std::uint64_t rng_seed) const;

  /// Attribute editing: overwrite the attribute's base section, keep
  /// everything else (including the residual), map back.
  Eigen::VectorXd edit(const Eigen::VectorXd& e, const EditRequest& request) const;

  // --- training/optimizer surface ---
  Eigen::Index num_params() const;
  Eigen::VectorXd get_params() const;
  void set_params(const Eigen::VectorXd& theta);

  /// Mean per-sample negative log-likelihood of a column batch.
  double batch_nll(const Eigen::MatrixXd& x_cols,
                   const std::vector<MultiLabel>& labels) const;
  /// Same, with the analytic gradient w.r.t. every parameter (flat, aligned
  /// with get_params).
  double batch_nll_grad(const Eigen::MatrixXd& x_cols,
                        const std::vector<MultiLabel>& labels,
                        Eigen::VectorXd& grad) const;

  nlohmann::json to_json() const;
  static FlowModel from_json(const nlohmann::json& j);

 private:
  LabelSchema schema_;
  std::vector<MafLayer> layers_;
};

// ---------------------------------------------------------------------------
// Semi-supervised training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 64;      // N labeled/partial pairs per step
  int reg_batch_size = 64;  // M regularization embeddings per step
  /// Perturbation scale for pseudo-labeling; negative selects the default
  /// 0.05 * median nearest-neighbor distance of the training embeddings.
  double perturbation_scale = -1.0;
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t rng_seed = 0;

  int n_layers = 5;
  int hidden = -1;  // max(2d, 64)
  double clamp_bound = 5.0;
  /// Replace schema priors with class frequencies of the labeled subset.
  bool empirical_priors = true;
  /// Epochs during which regularization data keeps empty categorical slots
  /// (marginal fit only) before Bayes pseudo-labeling kicks in; avoids
  /// locking in the near-constant predictions of the identity-initialized
  /// flow.
  int pseudo_label_warmup = 10;
};

/// Optional post-hoc labeler for regularization data: receives the clean
/// supporting-GMM sample with categorical pseudo-labels already assigned and
/// may fill continuous slots.
using PosthocLabeler =
    std::function<void(const Eigen::VectorXd& e, MultiLabel& y)>;

struct TrainResult {
  FlowModel model;
  std::vector<double> train_loss;   // mean batch NLL per epoch
  std::vector<double> val_loglik;   // mean validation loglik per epoch
  int best_epoch = -1;
};

/// MLE + consistency regularization with patience-based early stopping on
/// validation log-likelihood; returns the best-validation model.
TrainResult train_flow(const LabeledData& train, const LabeledData& val,
                       const GmmModel& supporting, const LabelSchema& schema,
                       const TrainConfig& config,
                       const PosthocLabeler& posthoc = nullptr);

/// Bayes pseudo-labels for a (perturbed) regularization embedding:
/// categorical slots get the posterior argmax, continuous slots stay empty.
MultiLabel assign_pseudo_labels(const FlowModel& model,
                                const Eigen::VectorXd& perturbed);

/// 0.05 * median nearest-neighbor (Euclidean) distance between rows.
double default_perturbation_scale(const Eigen::MatrixXd& embeddings);

}  // namespace voicelens
