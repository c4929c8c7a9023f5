#include "voicelens/flow.hpp"

#include <cmath>
#include <stdexcept>

namespace voicelens {

namespace {

Eigen::MatrixXd masked(const Eigen::MatrixXd& w, const Eigen::MatrixXd& mask) {
  return w.cwiseProduct(mask);
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::runtime_error("matrix_from_json: size mismatch");
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++];
  return m;
}

}  // namespace

void MadeParams::set_zero() {
  visit([](auto& p) { p.setZero(); });
}

Eigen::Index MadeParams::size() const {
  Eigen::Index n = 0;
  visit([&n](const auto& p) { n += p.size(); });
  return n;
}

MadeNet MadeNet::create(const Eigen::VectorXi& degrees, int hidden,
                        double clamp_bound, Rng& init_rng) {
  const int d = static_cast<int>(degrees.size());
  if (d < 1) throw std::invalid_argument("MadeNet: empty dimension");
  if (hidden < 1) throw std::invalid_argument("MadeNet: hidden must be >= 1");

  MadeNet net;
  net.degrees = degrees;
  net.clamp_bound = clamp_bound;

  // Hidden degrees ascend over 1..d-1 so masked prefixes are contiguous.
  const int max_deg = d - 1;
  net.h1_degrees.resize(hidden);
  net.h2_degrees.resize(hidden);
  for (int j = 0; j < hidden; ++j) {
    const int deg = max_deg > 0 ? 1 + (j * max_deg) / hidden : 0;
    net.h1_degrees[j] = deg;
    net.h2_degrees[j] = deg;
  }

  net.mask1.resize(hidden, d);
  for (int j = 0; j < hidden; ++j)
    for (int i = 0; i < d; ++i)
      net.mask1(j, i) = net.h1_degrees[j] >= degrees[i] ? 1.0 : 0.0;
  net.mask2.resize(hidden, hidden);
  for (int k = 0; k < hidden; ++k)
    for (int j = 0; j < hidden; ++j)
      net.mask2(k, j) = net.h2_degrees[k] >= net.h1_degrees[j] ? 1.0 : 0.0;
  net.mask_out.resize(d, hidden);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < hidden; ++k)
      net.mask_out(i, k) = degrees[i] > net.h2_degrees[k] ? 1.0 : 0.0;

  auto init = [&](Eigen::MatrixXd& w, int fan_in) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(r, c) = scale * init_rng.normal();
  };
  net.params.w1.resize(hidden, d);
  net.params.w2.resize(hidden, hidden);
  init(net.params.w1, d);
  init(net.params.w2, hidden);
  // Zero output head: m = 0 and s = 0 until training moves them.
  net.params.wm = Eigen::MatrixXd::Zero(d, hidden);
  net.params.ws = Eigen::MatrixXd::Zero(d, hidden);
  net.params.b1 = Eigen::VectorXd::Zero(hidden);
  net.params.b2 = Eigen::VectorXd::Zero(hidden);
  net.params.bm = Eigen::VectorXd::Zero(d);
  net.params.bs = Eigen::VectorXd::Zero(d);
  return net;
}

void MadeNet::forward(const Eigen::MatrixXd& x, Eigen::MatrixXd& shift,
                      Eigen::MatrixXd& log_scale, Cache* cache) const {
  const Eigen::MatrixXd h1 =
      ((masked(params.w1, mask1) * x).colwise() + params.b1).array().tanh();
  const Eigen::MatrixXd h2 =
      ((masked(params.w2, mask2) * h1).colwise() + params.b2).array().tanh();
  shift = (masked(params.wm, mask_out) * h2).colwise() + params.bm;
  const Eigen::MatrixXd s_raw =
      (masked(params.ws, mask_out) * h2).colwise() + params.bs;
  log_scale = clamp_bound * (s_raw / clamp_bound).array().tanh();
  if (cache) {
    cache->h1 = h1;
    cache->h2 = h2;
    cache->s = log_scale;
  }
}

void MadeNet::backward(const Eigen::MatrixXd& x, const Cache& cache,
                       const Eigen::MatrixXd& d_shift,
                       const Eigen::MatrixXd& d_log_scale, MadeParams& grads,
                       Eigen::MatrixXd& dx) const {
  // Through the clamp s = c * tanh(s_raw / c).
  const Eigen::MatrixXd d_s_raw =
      d_log_scale.array() * (1.0 - (cache.s / clamp_bound).array().square());

  grads.wm += (d_shift * cache.h2.transpose()).cwiseProduct(mask_out);
  grads.bm += d_shift.rowwise().sum();
  grads.ws += (d_s_raw * cache.h2.transpose()).cwiseProduct(mask_out);
  grads.bs += d_s_raw.rowwise().sum();

  const Eigen::MatrixXd dh2 = masked(params.wm, mask_out).transpose() * d_shift +
                              masked(params.ws, mask_out).transpose() * d_s_raw;
  const Eigen::MatrixXd da2 =
      dh2.array() * (1.0 - cache.h2.array().square());
  grads.w2 += (da2 * cache.h1.transpose()).cwiseProduct(mask2);
  grads.b2 += da2.rowwise().sum();

  const Eigen::MatrixXd dh1 = masked(params.w2, mask2).transpose() * da2;
  const Eigen::MatrixXd da1 =
      dh1.array() * (1.0 - cache.h1.array().square());
  grads.w1 += (da1 * x.transpose()).cwiseProduct(mask1);
  grads.b1 += da1.rowwise().sum();

  dx = masked(params.w1, mask1).transpose() * da1;
}

void MafLayer::forward(const Eigen::MatrixXd& x, Eigen::MatrixXd& z,
                       Eigen::RowVectorXd& logdet, Cache* cache) const {
  Eigen::MatrixXd shift, log_scale;
  net.forward(x, shift, log_scale, cache ? &cache->net_cache : nullptr);
  z = (x - shift).cwiseProduct((-log_scale).array().exp().matrix());
  logdet = -log_scale.colwise().sum();
  if (cache) {
    cache->x = x;
    cache->shift = shift;
    cache->log_scale = log_scale;
    cache->z = z;
  }
}

void MafLayer::backward(const Cache& cache, const Eigen::MatrixXd& dz,
                        const Eigen::RowVectorXd& dlogdet, MadeParams& grads,
                        Eigen::MatrixXd& dx) const {
  const Eigen::MatrixXd exp_neg_s = (-cache.log_scale).array().exp();
  const Eigen::MatrixXd dz_scaled = dz.cwiseProduct(exp_neg_s);
  const Eigen::MatrixXd d_shift = -dz_scaled;
  // dz/ds = -z; the logdet term contributes -dlogdet to every s_i.
  Eigen::MatrixXd d_log_scale = -dz.cwiseProduct(cache.z);
  d_log_scale.rowwise() -= dlogdet;

  Eigen::MatrixXd dx_net;
  net.backward(cache.x, cache.net_cache, d_shift, d_log_scale, grads, dx_net);
  dx = dz_scaled + dx_net;
}

Eigen::MatrixXd MafLayer::inverse(const Eigen::MatrixXd& z) const {
  const int d = net.dim();
  const Eigen::Index n = z.cols();
  const int hidden = net.hidden();
  if (z.rows() != d) throw std::invalid_argument("MafLayer::inverse: bad shape");

  const Eigen::MatrixXd w1m = masked(net.params.w1, net.mask1);
  const Eigen::MatrixXd w2m = masked(net.params.w2, net.mask2);
  const Eigen::MatrixXd wmm = masked(net.params.wm, net.mask_out);
  const Eigen::MatrixXd wsm = masked(net.params.ws, net.mask_out);

  std::vector<int> dim_of_rank(d + 1, -1);
  for (int i = 0; i < d; ++i) dim_of_rank[net.degrees[i]] = i;

  // Hidden degrees ascend, so the units visible at rank r form a prefix.
  std::vector<int> prefix1(d + 1, 0), prefix2(d + 1, 0);
  for (int r = 1; r <= d; ++r) {
    int c1 = prefix1[r - 1], c2 = prefix2[r - 1];
    while (c1 < hidden && net.h1_degrees[c1] <= r - 1) ++c1;
    while (c2 < hidden && net.h2_degrees[c2] <= r - 1) ++c2;
    prefix1[r] = c1;
    prefix2[r] = c2;
  }

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(d, n);
  // Pre-activations of the first hidden layer, updated rank-1 as x fills in.
  Eigen::MatrixXd a1 = net.params.b1.replicate(1, n);
  Eigen::RowVectorXd shift_row(n), s_raw_row(n);
  for (int r = 1; r <= d; ++r) {
    const int i = dim_of_rank[r];
    const int n1 = prefix1[r], n2 = prefix2[r];
    if (n2 > 0) {
      const Eigen::MatrixXd h1 = a1.topRows(n1).array().tanh();
      const Eigen::MatrixXd h2 =
          ((w2m.topLeftCorner(n2, n1) * h1).colwise() + net.params.b2.head(n2))
              .array()
              .tanh();
      shift_row = wmm.row(i).head(n2) * h2;
      shift_row.array() += net.params.bm[i];
      s_raw_row = wsm.row(i).head(n2) * h2;
      s_raw_row.array() += net.params.bs[i];
    } else {
      shift_row.setConstant(net.params.bm[i]);
      s_raw_row.setConstant(net.params.bs[i]);
    }
    const Eigen::RowVectorXd s =
        net.clamp_bound * (s_raw_row / net.clamp_bound).array().tanh();
    x.row(i) = z.row(i).cwiseProduct(s.array().exp().matrix()) + shift_row;
    a1 += w1m.col(i) * x.row(i);
  }
  return x;
}

FlowModel FlowModel::create(const LabelSchema& schema, int n_layers, int hidden,
                            double clamp_bound, std::uint64_t rng_seed) {
  schema.validate();
  if (n_layers < 1) throw std::invalid_argument("FlowModel: needs >= 1 layer");
  const int d = schema.total_dim();
  if (hidden < 0) hidden = std::max(2 * d, 64);

  FlowModel model;
  model.schema_ = schema;
  Rng rng(rng_seed);
  for (int k = 0; k < n_layers; ++k) {
    // Alternate orderings; the final layer is canonical so base sections
    // land on fixed coordinate ranges.
    const bool canonical = ((n_layers - 1 - k) % 2) == 0;
    Eigen::VectorXi degrees(d);
    for (int i = 0; i < d; ++i) degrees[i] = canonical ? i + 1 : d - i;
    MafLayer layer;
    layer.net = MadeNet::create(degrees, hidden, clamp_bound, rng);
    model.layers_.push_back(std::move(layer));
  }
  return model;
}

void FlowModel::forward_batch(const Eigen::MatrixXd& x, Eigen::MatrixXd& z,
                              Eigen::RowVectorXd& logdet,
                              std::vector<MafLayer::Cache>* caches) const {
  if (x.rows() != dim())
    throw std::invalid_argument("FlowModel::forward_batch: dimension mismatch");
  if (!x.allFinite())
    throw std::invalid_argument("FlowModel::forward_batch: non-finite input");
  if (caches) caches->resize(layers_.size());
  Eigen::MatrixXd current = x;
  logdet = Eigen::RowVectorXd::Zero(x.cols());
  Eigen::RowVectorXd layer_logdet;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    layers_[k].forward(current, z, layer_logdet, caches ? &(*caches)[k] : nullptr);
    logdet += layer_logdet;
    current = z;
  }
  z = current;
}

std::pair<Eigen::VectorXd, double> FlowModel::forward(
    const Eigen::VectorXd& e) const {
  Eigen::MatrixXd z;
  Eigen::RowVectorXd logdet;
  forward_batch(e, z, logdet);
  return {z.col(0), logdet[0]};
}

Eigen::MatrixXd FlowModel::inverse_batch(const Eigen::MatrixXd& z) const {
  if (z.rows() != dim())
    throw std::invalid_argument("FlowModel::inverse_batch: dimension mismatch");
  if (!z.allFinite())
    throw std::invalid_argument("FlowModel::inverse_batch: non-finite input");
  Eigen::MatrixXd current = z;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    current = it->inverse(current);
  return current;
}

Eigen::VectorXd FlowModel::inverse(const Eigen::VectorXd& z) const {
  return inverse_batch(z).col(0);
}

double FlowModel::loglik(const Eigen::VectorXd& e, const MultiLabel& y) const {
  const auto [z, logdet] = forward(e);
  return base_loglik(z, y, schema_, /*allow_out_of_range=*/true) + logdet;
}

Eigen::VectorXd FlowModel::loglik_batch(
    const Eigen::MatrixXd& embeddings, const std::vector<MultiLabel>& labels) const {
  if (embeddings.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("loglik_batch: label count mismatch");
  Eigen::MatrixXd z;
  Eigen::RowVectorXd logdet;
  forward_batch(embeddings.transpose(), z, logdet);
  Eigen::VectorXd out(embeddings.rows());
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
    out[i] = base_loglik(z.col(i), labels[i], schema_, true) + logdet[i];
  return out;
}

Eigen::VectorXd FlowModel::classify_embedding(const Eigen::VectorXd& e,
                                              int attr_index) const {
  return classify(forward(e).first, schema_, attr_index);
}

double FlowModel::read_embedding_continuous(const Eigen::VectorXd& e,
                                            int attr_index) const {
  return read_continuous(forward(e).first, schema_, attr_index);
}

Eigen::MatrixXd FlowModel::sample(const MultiLabel& y, int n,
                                  std::uint64_t rng_seed) const {
  if (n < 1) throw std::invalid_argument("FlowModel::sample: n must be >= 1");
  Rng rng(rng_seed);
  Eigen::MatrixXd z(dim(), n);
  for (int i = 0; i < n; ++i) z.col(i) = base_sample(y, schema_, rng);
  return inverse_batch(z).transpose();
}

Eigen::VectorXd FlowModel::edit(const Eigen::VectorXd& e,
                                const EditRequest& request) const {
  if (request.attr_index < 0 || request.attr_index >= schema_.num_attributes())
    throw std::invalid_argument("edit: attribute index out of range");
  const AttributeSpec& attr = schema_.attributes[request.attr_index];
  const int given = int(request.new_class.has_value()) +
                    int(request.new_value.has_value()) +
                    int(request.delta.has_value());
  if (given != 1)
    throw std::invalid_argument("edit: exactly one of class/value/delta required");

  Eigen::VectorXd z = forward(e).first;
  const int off = schema_.section_offset(request.attr_index);
  if (request.new_class.has_value()) {
    if (attr.kind != AttrKind::categorical)
      throw std::invalid_argument("edit: class edit on continuous attribute");
    if (*request.new_class < 0 || *request.new_class >= attr.num_classes())
      throw std::invalid_argument("edit: invalid class");
    z.segment(off, attr.width) = attr.class_mean(*request.new_class);
  } else if (attr.kind != AttrKind::continuous) {
    throw std::invalid_argument("edit: value edit on categorical attribute");
  } else if (request.new_value.has_value()) {
    z.segment(off, attr.width) = attr.value_mean(*request.new_value);
  } else {
    z.segment(off, attr.width).array() += *request.delta;
  }
  return inverse(z);
}

Eigen::Index FlowModel::num_params() const {
  Eigen::Index n = 0;
  for (const auto& layer : layers_) n += layer.net.params.size();
  return n;
}

Eigen::VectorXd FlowModel::get_params() const {
  Eigen::VectorXd theta(num_params());
  Eigen::Index off = 0;
  for (const auto& layer : layers_) {
    layer.net.params.visit([&](const auto& p) {
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) theta[off++] = p(r, c);
    });
  }
  return theta;
}

void FlowModel::set_params(const Eigen::VectorXd& theta) {
  if (theta.size() != num_params())
    throw std::invalid_argument("set_params: size mismatch");
  Eigen::Index off = 0;
  for (auto& layer : layers_) {
    layer.net.params.visit([&](auto& p) {
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = theta[off++];
    });
  }
}

namespace {

double nll_core(const FlowModel& model, const Eigen::MatrixXd& x_cols,
                const std::vector<MultiLabel>& labels,
                std::vector<MafLayer::Cache>* caches, Eigen::MatrixXd* dz_out,
                Eigen::RowVectorXd* dlogdet_out) {
  const Eigen::Index batch = x_cols.cols();
  if (batch == 0) throw std::invalid_argument("batch_nll: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != batch)
    throw std::invalid_argument("batch_nll: label count mismatch");
  Eigen::MatrixXd z;
  Eigen::RowVectorXd logdet;
  model.forward_batch(x_cols, z, logdet, caches);

  const double inv_b = 1.0 / static_cast<double>(batch);
  double nll = 0.0;
  if (dz_out) dz_out->resize(z.rows(), z.cols());
  Eigen::VectorXd grad;
  for (Eigen::Index i = 0; i < batch; ++i) {
    double ll;
    if (dz_out) {
      ll = base_loglik_grad(z.col(i), labels[i], model.schema(), grad, true);
      dz_out->col(i) = -grad * inv_b;
    } else {
      ll = base_loglik(z.col(i), labels[i], model.schema(), true);
    }
    nll += -(ll + logdet[i]);
  }
  if (dlogdet_out)
    *dlogdet_out = Eigen::RowVectorXd::Constant(batch, -inv_b);
  return nll * inv_b;
}

}  // namespace

double FlowModel::batch_nll(const Eigen::MatrixXd& x_cols,
                            const std::vector<MultiLabel>& labels) const {
  return nll_core(*this, x_cols, labels, nullptr, nullptr, nullptr);
}

double FlowModel::batch_nll_grad(const Eigen::MatrixXd& x_cols,
                                 const std::vector<MultiLabel>& labels,
                                 Eigen::VectorXd& grad) const {
  std::vector<MafLayer::Cache> caches;
  Eigen::MatrixXd dz;
  Eigen::RowVectorXd dlogdet;
  const double nll = nll_core(*this, x_cols, labels, &caches, &dz, &dlogdet);

  std::vector<MadeParams> layer_grads(layers_.size());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    layer_grads[k] = layers_[k].net.params;  // shapes
    layer_grads[k].set_zero();
  }
  Eigen::MatrixXd dx;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    layers_[k].backward(caches[k], dz, dlogdet, layer_grads[k], dx);
    dz = dx;
  }

  grad.resize(num_params());
  Eigen::Index off = 0;
  for (const auto& g : layer_grads) {
    g.visit([&](const auto& p) {
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) grad[off++] = p(r, c);
    });
  }
  return nll;
}

nlohmann::json FlowModel::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) {
    const auto& net = layer.net;
    nlohmann::json lj;
    lj["degrees"] =
        std::vector<int>(net.degrees.begin(), net.degrees.end());
    lj["hidden"] = net.hidden();
    lj["w1"] = matrix_to_json(net.params.w1);
    lj["b1"] = matrix_to_json(net.params.b1);
    lj["w2"] = matrix_to_json(net.params.w2);
    lj["b2"] = matrix_to_json(net.params.b2);
    lj["wm"] = matrix_to_json(net.params.wm);
    lj["bm"] = matrix_to_json(net.params.bm);
    lj["ws"] = matrix_to_json(net.params.ws);
    lj["bs"] = matrix_to_json(net.params.bs);
    layers.push_back(std::move(lj));
  }
  return nlohmann::json{{"version", 1},
                        {"kind", "flow"},
                        {"clamp_bound", layers_.empty() ? 5.0 : layers_[0].net.clamp_bound},
                        {"schema", schema_to_json(schema_)},
                        {"layers", std::move(layers)}};
}

FlowModel FlowModel::from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("FlowModel::from_json: unsupported version");
  FlowModel model;
  model.schema_ = schema_from_json(j.at("schema"));
  const double clamp = j.at("clamp_bound").get<double>();
  Rng dummy(0);
  for (const auto& lj : j.at("layers")) {
    const auto deg = lj.at("degrees").get<std::vector<int>>();
    Eigen::VectorXi degrees =
        Eigen::Map<const Eigen::VectorXi>(deg.data(), deg.size());
    MafLayer layer;
    layer.net = MadeNet::create(degrees, lj.at("hidden").get<int>(), clamp, dummy);
    layer.net.params.w1 = matrix_from_json(lj.at("w1"));
    layer.net.params.b1 = matrix_from_json(lj.at("b1"));
    layer.net.params.w2 = matrix_from_json(lj.at("w2"));
    layer.net.params.b2 = matrix_from_json(lj.at("b2"));
    layer.net.params.wm = matrix_from_json(lj.at("wm"));
    layer.net.params.bm = matrix_from_json(lj.at("bm"));
    layer.net.params.ws = matrix_from_json(lj.at("ws"));
    layer.net.params.bs = matrix_from_json(lj.at("bs"));
    model.layers_.push_back(std::move(layer));
  }
  if (model.layers_.empty() ||
      model.layers_[0].net.dim() != model.schema_.total_dim())
    throw std::runtime_error("FlowModel::from_json: layer/schema mismatch");
  return model;
}

}  // namespace voicelens
