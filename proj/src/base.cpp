#include "voicelens/base.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "voicelens/distributions.hpp"

namespace voicelens {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112353;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

void AttributeSpec::validate() const {
  if (name.empty()) throw std::invalid_argument("AttributeSpec: empty name");
  if (width < 1) throw std::invalid_argument("AttributeSpec: width must be >= 1");
  if (kind == AttrKind::categorical) {
    if (num_classes() < 2)
      throw std::invalid_argument("AttributeSpec '" + name +
                                  "': categorical needs >= 2 classes");
    if (prior.size() != num_classes() || prior.minCoeff() < 0.0 ||
        std::abs(prior.sum() - 1.0) > 1e-9)
      throw std::invalid_argument("AttributeSpec '" + name +
                                  "': prior must be a distribution over classes");
  } else {
    if (!(range_low < range_high))
      throw std::invalid_argument("AttributeSpec '" + name +
                                  "': requires range_low < range_high");
  }
}

AttributeSpec categorical_attribute(std::string name, int width,
                                    std::vector<std::string> classes,
                                    double shift) {
  AttributeSpec spec;
  spec.name = std::move(name);
  spec.width = width;
  spec.kind = AttrKind::categorical;
  spec.prior = Eigen::VectorXd::Constant(static_cast<int>(classes.size()),
                                         1.0 / classes.size());
  spec.classes = std::move(classes);
  spec.shift = shift;
  spec.validate();
  return spec;
}

AttributeSpec continuous_attribute(std::string name, int width, double range_low,
                                   double range_high) {
  AttributeSpec spec;
  spec.name = std::move(name);
  spec.width = width;
  spec.kind = AttrKind::continuous;
  spec.range_low = range_low;
  spec.range_high = range_high;
  spec.validate();
  return spec;
}

int LabelSchema::total_dim() const {
  int d = residual_width;
  for (const auto& attr : attributes) d += attr.width;
  return d;
}

int LabelSchema::section_offset(int attr_index) const {
  int offset = 0;
  for (int i = 0; i < attr_index; ++i) offset += attributes[i].width;
  return offset;
}

int LabelSchema::attr_index(const std::string& name) const {
  for (int i = 0; i < num_attributes(); ++i)
    if (attributes[i].name == name) return i;
  throw std::invalid_argument("LabelSchema: no attribute named '" + name + "'");
}

void LabelSchema::validate() const {
  if (residual_width < 0)
    throw std::invalid_argument("LabelSchema: negative residual width");
  for (const auto& attr : attributes) attr.validate();
  for (std::size_t i = 0; i < attributes.size(); ++i)
    for (std::size_t j = i + 1; j < attributes.size(); ++j)
      if (attributes[i].name == attributes[j].name)
        throw std::invalid_argument("LabelSchema: duplicate attribute name '" +
                                    attributes[i].name + "'");
  if (total_dim() < 1) throw std::invalid_argument("LabelSchema: empty partition");
}

MultiLabel empty_label(const LabelSchema& schema) {
  return MultiLabel(schema.num_attributes(), std::nullopt);
}

void validate_label(const MultiLabel& y, const LabelSchema& schema,
                    bool allow_out_of_range) {
  if (static_cast<int>(y.size()) != schema.num_attributes())
    throw std::invalid_argument("MultiLabel: slot count does not match schema");
  for (int i = 0; i < schema.num_attributes(); ++i) {
    if (!y[i].has_value()) continue;
    const AttributeSpec& attr = schema.attributes[i];
    if (attr.kind == AttrKind::categorical) {
      if (!std::holds_alternative<int>(*y[i]))
        throw std::invalid_argument("MultiLabel: attribute '" + attr.name +
                                    "' expects a class value");
      const int cls = std::get<int>(*y[i]);
      if (cls < 0 || cls >= attr.num_classes())
        throw std::invalid_argument("MultiLabel: class out of range for '" +
                                    attr.name + "'");
    } else {
      if (!std::holds_alternative<double>(*y[i]))
        throw std::invalid_argument("MultiLabel: attribute '" + attr.name +
                                    "' expects a real value");
      const double v = std::get<double>(*y[i]);
      if (!std::isfinite(v))
        throw std::invalid_argument("MultiLabel: non-finite value for '" +
                                    attr.name + "'");
      if (!allow_out_of_range && (v < attr.range_low || v > attr.range_high))
        throw std::invalid_argument("MultiLabel: value outside range for '" +
                                    attr.name + "'");
    }
  }
}

namespace {

// log-likelihood of one attribute section, with optional gradient output.
double section_loglik(const Eigen::VectorXd& zi, const AttributeSpec& attr,
                      const std::optional<LabelValue>& slot,
                      Eigen::VectorXd* grad) {
  if (slot.has_value()) {
    const Eigen::VectorXd mean = attr.kind == AttrKind::categorical
                                     ? attr.class_mean(std::get<int>(*slot))
                                     : attr.value_mean(std::get<double>(*slot));
    if (grad) *grad = mean - zi;
    return gaussian_iso_logpdf(zi, mean, 1.0);
  }
  if (attr.kind == AttrKind::categorical) {
    // Prior-weighted isotropic mixture over class means.
    const int c = attr.num_classes();
    Eigen::VectorXd scores(c);
    for (int j = 0; j < c; ++j) {
      scores[j] = attr.prior[j] > 0.0
                      ? std::log(attr.prior[j]) +
                            gaussian_iso_logpdf(zi, attr.class_mean(j), 1.0)
                      : -kInf;
    }
    const double lse = logsumexp(scores);
    if (grad) {
      Eigen::VectorXd posterior_mean = Eigen::VectorXd::Zero(attr.width);
      for (int j = 0; j < c; ++j) {
        if (attr.prior[j] <= 0.0) continue;
        posterior_mean += std::exp(scores[j] - lse) * attr.class_mean(j);
      }
      *grad = posterior_mean - zi;
    }
    return lse;
  }
  // Empty continuous attribute: independent Bhattacharjee coordinates.
  double total = 0.0;
  if (grad) grad->resize(attr.width);
  for (int c = 0; c < attr.width; ++c) {
    total += bhattacharjee_logpdf(zi[c], attr.range_low, attr.range_high);
    if (grad)
      (*grad)[c] = bhattacharjee_dlogpdf_dz(zi[c], attr.range_low, attr.range_high);
  }
  return total;
}

double base_loglik_impl(const Eigen::VectorXd& z, const MultiLabel& y,
                        const LabelSchema& schema, Eigen::VectorXd* grad,
                        bool allow_out_of_range) {
  if (z.size() != schema.total_dim())
    throw std::invalid_argument("base_loglik: z does not match schema dimension");
  validate_label(y, schema, allow_out_of_range);
  if (grad) grad->resize(z.size());
  double total = 0.0;
  for (int i = 0; i < schema.num_attributes(); ++i) {
    const AttributeSpec& attr = schema.attributes[i];
    const int off = schema.section_offset(i);
    Eigen::VectorXd section_grad;
    total += section_loglik(z.segment(off, attr.width), attr, y[i],
                            grad ? &section_grad : nullptr);
    if (grad) grad->segment(off, attr.width) = section_grad;
  }
  const int u = schema.residual_width;
  if (u > 0) {
    const auto zu = z.tail(u);
    total += -0.5 * u * kLog2Pi - 0.5 * zu.squaredNorm();
    if (grad) grad->tail(u) = -zu;
  }
  return total;
}

}  // namespace

double base_loglik(const Eigen::VectorXd& z, const MultiLabel& y,
                   const LabelSchema& schema, bool allow_out_of_range) {
  return base_loglik_impl(z, y, schema, nullptr, allow_out_of_range);
}

double base_loglik_grad(const Eigen::VectorXd& z, const MultiLabel& y,
                        const LabelSchema& schema, Eigen::VectorXd& grad,
                        bool allow_out_of_range) {
  return base_loglik_impl(z, y, schema, &grad, allow_out_of_range);
}

Eigen::VectorXd base_sample(const MultiLabel& y, const LabelSchema& schema,
                            Rng& rng, bool allow_out_of_range) {
  validate_label(y, schema, allow_out_of_range);
  Eigen::VectorXd z(schema.total_dim());
  for (int i = 0; i < schema.num_attributes(); ++i) {
    const AttributeSpec& attr = schema.attributes[i];
    const int off = schema.section_offset(i);
    Eigen::VectorXd mean;
    if (y[i].has_value()) {
      mean = attr.kind == AttrKind::categorical
                 ? attr.class_mean(std::get<int>(*y[i]))
                 : attr.value_mean(std::get<double>(*y[i]));
    } else if (attr.kind == AttrKind::categorical) {
      mean = attr.class_mean(rng.categorical(attr.prior));
    } else {
      mean = attr.value_mean(rng.uniform(attr.range_low, attr.range_high));
    }
    for (int c = 0; c < attr.width; ++c) z[off + c] = mean[c] + rng.normal();
  }
  const int u = schema.residual_width;
  for (int c = 0; c < u; ++c) z[schema.residual_offset() + c] = rng.normal();
  return z;
}

Eigen::VectorXd base_sample(const MultiLabel& y, const LabelSchema& schema,
                            std::uint64_t rng_seed, bool allow_out_of_range) {
  Rng rng(rng_seed);
  return base_sample(y, schema, rng, allow_out_of_range);
}

Eigen::VectorXd classify(const Eigen::VectorXd& z, const LabelSchema& schema,
                         int attr_index) {
  if (attr_index < 0 || attr_index >= schema.num_attributes())
    throw std::invalid_argument("classify: attribute index out of range");
  const AttributeSpec& attr = schema.attributes[attr_index];
  if (attr.kind != AttrKind::categorical)
    throw std::invalid_argument("classify: attribute '" + attr.name +
                                "' is continuous; use read_continuous");
  if (z.size() != schema.total_dim())
    throw std::invalid_argument("classify: z does not match schema dimension");
  const auto zi = z.segment(schema.section_offset(attr_index), attr.width);
  const int c = attr.num_classes();
  Eigen::VectorXd scores(c);
  for (int j = 0; j < c; ++j) {
    scores[j] = attr.prior[j] > 0.0
                    ? std::log(attr.prior[j]) +
                          gaussian_iso_logpdf(zi, attr.class_mean(j), 1.0)
                    : -kInf;
  }
  const double lse = logsumexp(scores);
  return (scores.array() - lse).exp();
}

double read_continuous(const Eigen::VectorXd& z, const LabelSchema& schema,
                       int attr_index) {
  if (attr_index < 0 || attr_index >= schema.num_attributes())
    throw std::invalid_argument("read_continuous: attribute index out of range");
  const AttributeSpec& attr = schema.attributes[attr_index];
  if (attr.kind != AttrKind::continuous)
    throw std::invalid_argument("read_continuous: attribute '" + attr.name +
                                "' is categorical; use classify");
  if (z.size() != schema.total_dim())
    throw std::invalid_argument("read_continuous: z does not match schema dimension");
  return z.segment(schema.section_offset(attr_index), attr.width).mean();
}

std::string label_value_to_string(const LabelSchema& schema, int attr_index,
                                  const std::optional<LabelValue>& value) {
  if (!value.has_value()) return "";
  const AttributeSpec& attr = schema.attributes[attr_index];
  if (attr.kind == AttrKind::categorical)
    return attr.classes.at(std::get<int>(*value));
  char buf[32];
  const double v = std::get<double>(*value);
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("label_value_to_string: format");
  return std::string(buf, ptr);
}

std::optional<LabelValue> label_value_from_string(const LabelSchema& schema,
                                                  int attr_index,
                                                  const std::string& text) {
  if (text.empty() || text == "_") return std::nullopt;
  const AttributeSpec& attr = schema.attributes[attr_index];
  if (attr.kind == AttrKind::categorical) {
    for (int j = 0; j < attr.num_classes(); ++j)
      if (attr.classes[j] == text) return LabelValue{j};
    throw std::invalid_argument("unknown class '" + text + "' for attribute '" +
                                attr.name + "'");
  }
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad numeric value '" + text +
                                "' for attribute '" + attr.name + "'");
  }
  if (used != text.size())
    throw std::invalid_argument("bad numeric value '" + text +
                                "' for attribute '" + attr.name + "'");
  return LabelValue{v};
}

nlohmann::json schema_to_json(const LabelSchema& schema) {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& attr : schema.attributes) {
    nlohmann::json a;
    a["name"] = attr.name;
    a["width"] = attr.width;
    if (attr.kind == AttrKind::categorical) {
      a["kind"] = "categorical";
      a["classes"] = attr.classes;
      a["prior"] = std::vector<double>(attr.prior.begin(), attr.prior.end());
      a["shift"] = attr.shift;
    } else {
      a["kind"] = "continuous";
      a["range"] = {attr.range_low, attr.range_high};
    }
    attrs.push_back(std::move(a));
  }
  return nlohmann::json{{"version", 1},
                        {"d", schema.total_dim()},
                        {"residual_width", schema.residual_width},
                        {"attributes", std::move(attrs)}};
}

LabelSchema schema_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("schema_from_json: unsupported version");
  LabelSchema schema;
  schema.residual_width = j.at("residual_width").get<int>();
  for (const auto& a : j.at("attributes")) {
    AttributeSpec attr;
    attr.name = a.at("name").get<std::string>();
    attr.width = a.at("width").get<int>();
    const std::string kind = a.at("kind").get<std::string>();
    if (kind == "categorical") {
      attr.kind = AttrKind::categorical;
      attr.classes = a.at("classes").get<std::vector<std::string>>();
      const auto prior = a.at("prior").get<std::vector<double>>();
      attr.prior = Eigen::Map<const Eigen::VectorXd>(prior.data(), prior.size());
      attr.shift = a.at("shift").get<double>();
    } else if (kind == "continuous") {
      attr.kind = AttrKind::continuous;
      attr.range_low = a.at("range").at(0).get<double>();
      attr.range_high = a.at("range").at(1).get<double>();
    } else {
      throw std::runtime_error("schema_from_json: unknown kind '" + kind + "'");
    }
    schema.attributes.push_back(std::move(attr));
  }
  schema.validate();
  if (j.contains("d") && j.at("d").get<int>() != schema.total_dim())
    throw std::runtime_error("schema_from_json: declared dimension mismatch");
  return schema;
}

}  // namespace voicelens
