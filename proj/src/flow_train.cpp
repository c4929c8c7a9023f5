#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "voicelens/flow.hpp"

namespace voicelens {

namespace {

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m, v;
  int t = 0;

  explicit Adam(Eigen::Index n, double learning_rate) : lr(learning_rate) {
    m = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(n);
  }

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    theta -= (lr / bc1) * m.cwiseQuotient(
                              ((v / bc2).cwiseSqrt().array() + eps).matrix());
  }
};

// Class frequencies over the observed slots of the labeled subset;
// uniform when an attribute has no observed labels at all.
void apply_empirical_priors(LabelSchema& schema,
                            const std::vector<MultiLabel>& labels) {
  for (int a = 0; a < schema.num_attributes(); ++a) {
    AttributeSpec& attr = schema.attributes[a];
    if (attr.kind != AttrKind::categorical) continue;
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(attr.num_classes());
    for (const auto& y : labels) {
      if (a < static_cast<int>(y.size()) && y[a].has_value())
        counts[std::get<int>(*y[a])] += 1.0;
    }
    const double total = counts.sum();
    attr.prior = total > 0.0
                     ? Eigen::VectorXd(counts / total)
                     : Eigen::VectorXd::Constant(attr.num_classes(),
                                                 1.0 / attr.num_classes());
  }
}

}  // namespace

double default_perturbation_scale(const Eigen::MatrixXd& embeddings) {
  const Eigen::Index n = embeddings.rows();
  if (n < 2) return 0.0;
  std::vector<double> nn(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      best = std::min(best, (embeddings.row(i) - embeddings.row(j)).squaredNorm());
    }
    nn[i] = std::sqrt(best);
  }
  std::nth_element(nn.begin(), nn.begin() + n / 2, nn.end());
  return 0.05 * nn[n / 2];
}

TrainResult train_flow(const LabeledData& train, const LabeledData& val,
                       const GmmModel& supporting, const LabelSchema& schema,
                       const TrainConfig& config, const PosthocLabeler& posthoc) {
  const int n_train = train.size();
  const int d = schema.total_dim();
  if (n_train == 0) throw std::invalid_argument("train_flow: empty train corpus");
  if (val.size() == 0) throw std::invalid_argument("train_flow: empty val corpus");
  if (train.embeddings.cols() != d || val.embeddings.cols() != d ||
      supporting.dim() != d)
    throw std::invalid_argument("train_flow: dimension mismatch");
  if (config.batch_size < 1 || config.reg_batch_size < 0 ||
      config.max_epochs < 1 || config.patience < 1)
    throw std::invalid_argument("train_flow: bad config");

  LabelSchema train_schema = schema;
  if (config.empirical_priors) apply_empirical_priors(train_schema, train.labels);

  FlowModel model = FlowModel::create(train_schema, config.n_layers,
                                      config.hidden, config.clamp_bound,
                                      config.rng_seed);
  const double eps_scale = config.perturbation_scale >= 0.0
                               ? config.perturbation_scale
                               : default_perturbation_scale(train.embeddings);

  Rng rng(config.rng_seed + 0x9e3779b97f4a7c15ULL);
  Adam adam(model.num_params(), config.learning_rate);
  Eigen::VectorXd theta = model.get_params();

  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  const Eigen::MatrixXd val_cols = val.embeddings.transpose();

  TrainResult result;
  double best_val = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_theta = theta;
  int best_epoch = -1, stale = 0;

  const int n_cat = [&] {
    int c = 0;
    for (const auto& a : train_schema.attributes)
      if (a.kind == AttrKind::categorical) ++c;
    return c;
  }();

  Eigen::VectorXd grad;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int steps = 0;
    for (int start = 0; start < n_train; start += config.batch_size) {
      const int nb = std::min(config.batch_size, n_train - start);
      const int mb = config.reg_batch_size;
      Eigen::MatrixXd batch(d, nb + mb);
      std::vector<MultiLabel> labels(nb + mb);
      for (int i = 0; i < nb; ++i) {
        batch.col(i) = train.embeddings.row(order[start + i]).transpose();
        labels[i] = train.labels[order[start + i]];
      }
      if (mb > 0) {
        // Regularization data from the supporting model, pseudo-labeled by
        // classifying perturbed copies under the current parameters. During
        // warmup the categorical slots stay empty and the samples only
        // shape the marginal.
        const bool assign_pseudo =
            n_cat > 0 && epoch >= config.pseudo_label_warmup;
        Eigen::MatrixXd reg(d, mb);
        Eigen::MatrixXd perturbed(d, mb);
        for (int i = 0; i < mb; ++i) {
          const int k = rng.categorical(supporting.weights);
          const double sd = std::sqrt(supporting.variances[k]);
          for (int c = 0; c < d; ++c)
            reg(c, i) = supporting.means(k, c) + sd * rng.normal();
          for (int c = 0; c < d; ++c)
            perturbed(c, i) = reg(c, i) + eps_scale * rng.normal();
        }
        Eigen::MatrixXd z_pert;
        Eigen::RowVectorXd logdet_unused;
        if (assign_pseudo) model.forward_batch(perturbed, z_pert, logdet_unused);
        for (int i = 0; i < mb; ++i) {
          MultiLabel y = empty_label(train_schema);
          if (assign_pseudo) {
            for (int a = 0; a < train_schema.num_attributes(); ++a) {
              if (train_schema.attributes[a].kind != AttrKind::categorical)
                continue;
              Eigen::VectorXd posterior = classify(z_pert.col(i), train_schema, a);
              int arg = 0;
              posterior.maxCoeff(&arg);
              y[a] = arg;
            }
          }
          if (posthoc) posthoc(reg.col(i), y);
          batch.col(nb + i) = reg.col(i);
          labels[nb + i] = std::move(y);
        }
      }
      epoch_loss += model.batch_nll_grad(batch, labels, grad);
      ++steps;
      adam.step(theta, grad);
      model.set_params(theta);
    }
    result.train_loss.push_back(epoch_loss / std::max(steps, 1));

    const double val_ll =
        model.loglik_batch(val.embeddings, val.labels).mean();
    result.val_loglik.push_back(val_ll);
    if (val_ll > best_val) {
      best_val = val_ll;
      best_theta = theta;
      best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }

  model.set_params(best_theta);
  result.model = std::move(model);
  result.best_epoch = best_epoch;
  return result;
}

MultiLabel assign_pseudo_labels(const FlowModel& model,
                                const Eigen::VectorXd& perturbed) {
  const LabelSchema& schema = model.schema();
  MultiLabel y = empty_label(schema);
  const Eigen::VectorXd z = model.forward(perturbed).first;
  for (int a = 0; a < schema.num_attributes(); ++a) {
    if (schema.attributes[a].kind != AttrKind::categorical) continue;
    Eigen::VectorXd posterior = classify(z, schema, a);
    int arg = 0;
    posterior.maxCoeff(&arg);
    y[a] = arg;
  }
  return y;
}

}  // namespace voicelens
