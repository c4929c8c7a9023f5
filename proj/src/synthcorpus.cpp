#include "voicelens/synthcorpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "voicelens/distributions.hpp"

namespace voicelens {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

void GeneratorSpec::validate() const {
  schema.validate();
  if (!(sigma_noise > 0.0))
    throw std::invalid_argument("GeneratorSpec: sigma_noise must be positive");
  if (n_items < 1) throw std::invalid_argument("GeneratorSpec: n_items < 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("GeneratorSpec: val_fraction out of [0, 1)");
  if (effects.size() != static_cast<std::size_t>(schema.num_attributes()))
    throw std::invalid_argument("GeneratorSpec: effects/attributes mismatch");
  const int d = dim();
  for (int a = 0; a < schema.num_attributes(); ++a) {
    const AttributeSpec& attr = schema.attributes[a];
    const AttributeEffect& eff = effects[a];
    if (attr.kind == AttrKind::categorical) {
      if (eff.class_offsets.rows() != attr.num_classes() ||
          eff.class_offsets.cols() != d)
        throw std::invalid_argument("GeneratorSpec: bad offsets for '" +
                                    attr.name + "'");
      if (eff.proportions.size() != attr.num_classes() ||
          std::abs(eff.proportions.sum() - 1.0) > 1e-9 ||
          eff.proportions.minCoeff() < 0.0)
        throw std::invalid_argument("GeneratorSpec: bad proportions for '" +
                                    attr.name + "'");
    } else if (eff.direction.size() != d) {
      throw std::invalid_argument("GeneratorSpec: bad direction for '" +
                                  attr.name + "'");
    }
  }
}

GeneratorSpec GeneratorSpec::create(const LabelSchema& schema, double separation,
                                    double sigma_noise, int n_items,
                                    double val_fraction, std::uint64_t rng_seed) {
  schema.validate();
  const int d = schema.total_dim();
  int n_dirs = 0;
  for (const auto& attr : schema.attributes)
    n_dirs += attr.kind == AttrKind::categorical ? attr.num_classes() : 1;
  if (n_dirs > d)
    throw std::invalid_argument("GeneratorSpec: more effect directions than dims");

  // Gaussian draws, Gram-Schmidt orthonormalized.
  Rng rng(rng_seed);
  Eigen::MatrixXd dirs(n_dirs, d);
  for (int i = 0; i < n_dirs; ++i) {
    Eigen::VectorXd v = rng.normal_vector(d);
    for (int j = 0; j < i; ++j) v -= dirs.row(j).dot(v) * dirs.row(j).transpose();
    const double norm = v.norm();
    if (norm < 1e-8)
      throw std::runtime_error("GeneratorSpec: degenerate direction draw");
    dirs.row(i) = v.transpose() / norm;
  }

  GeneratorSpec spec;
  spec.schema = schema;
  spec.sigma_noise = sigma_noise;
  spec.n_items = n_items;
  spec.val_fraction = val_fraction;
  int next = 0;
  for (const auto& attr : schema.attributes) {
    AttributeEffect eff;
    if (attr.kind == AttrKind::categorical) {
      const int c = attr.num_classes();
      eff.class_offsets.resize(c, d);
      for (int j = 0; j < c; ++j)
        eff.class_offsets.row(j) = separation * sigma_noise * dirs.row(next++);
      eff.proportions = Eigen::VectorXd::Constant(c, 1.0 / c);
    } else {
      eff.direction = dirs.row(next++).transpose();
    }
    spec.effects.push_back(std::move(eff));
  }
  spec.validate();
  return spec;
}

LabelSchema default_schema(int d) {
  if (d < 4) throw std::invalid_argument("default_schema: d must be >= 4");
  LabelSchema schema;
  schema.attributes.push_back(categorical_attribute("gender", 1, {"F", "M"}, 6.0));
  schema.attributes.push_back(
      categorical_attribute("age", 1, {"adult", "child"}, 6.0));
  schema.attributes.push_back(continuous_attribute("snr", 1, 25.0, 55.0));
  schema.residual_width = d - 3;
  schema.validate();
  return schema;
}

GeneratorSpec easy_preset(int d, int n_items, std::uint64_t seed) {
  return GeneratorSpec::create(default_schema(d), 8.0, 1.0, n_items, 0.125, seed);
}

GeneratorSpec hard_preset(int d, int n_items, std::uint64_t seed) {
  return GeneratorSpec::create(default_schema(d), 1.5, 1.0, n_items, 0.125, seed);
}

LabeledData Corpus::subset(Split which) const {
  const std::vector<int> idx = indices(which);
  LabeledData out;
  out.embeddings.resize(idx.size(), embeddings.cols());
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.embeddings.row(i) = embeddings.row(idx[i]);
    out.labels.push_back(labels[idx[i]]);
  }
  return out;
}

std::vector<int> Corpus::indices(Split which) const {
  std::vector<int> idx;
  for (int i = 0; i < size(); ++i)
    if (split[i] == which) idx.push_back(i);
  return idx;
}

Corpus generate(const GeneratorSpec& spec, std::uint64_t rng_seed) {
  spec.validate();
  Rng rng(rng_seed);
  const int n = spec.n_items;
  const int d = spec.dim();

  Corpus corpus;
  corpus.schema = spec.schema;
  corpus.embeddings.resize(n, d);
  corpus.labels.resize(n);
  corpus.truth.resize(n);
  corpus.split.assign(n, Split::train);

  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
    MultiLabel truth(spec.schema.num_attributes());
    for (int a = 0; a < spec.schema.num_attributes(); ++a) {
      const AttributeSpec& attr = spec.schema.attributes[a];
      const AttributeEffect& eff = spec.effects[a];
      if (attr.kind == AttrKind::categorical) {
        const int cls = rng.categorical(eff.proportions);
        truth[a] = cls;
        e += eff.class_offsets.row(cls).transpose();
      } else {
        const double v = rng.uniform(attr.range_low, attr.range_high);
        truth[a] = v;
        e += v * eff.direction;
      }
    }
    for (int c = 0; c < d; ++c) e[c] += spec.sigma_noise * rng.normal();
    corpus.embeddings.row(i) = e.transpose();
    corpus.truth[i] = truth;
    corpus.labels[i] = truth;
  }

  // Validation split: seeded shuffle, first slice reserved.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const int n_val = static_cast<int>(std::lround(spec.val_fraction * n));
  for (int i = 0; i < n_val; ++i) corpus.split[order[i]] = Split::val;
  return corpus;
}

Eigen::VectorXd oracle_posterior(const GeneratorSpec& spec,
                                 const Eigen::VectorXd& e, int attr_index) {
  if (attr_index < 0 || attr_index >= spec.schema.num_attributes())
    throw std::invalid_argument("oracle_posterior: unknown attribute");
  const AttributeSpec& attr = spec.schema.attributes[attr_index];
  if (attr.kind != AttrKind::categorical)
    throw std::invalid_argument("oracle_posterior: attribute is continuous");
  if (e.size() != spec.dim())
    throw std::invalid_argument("oracle_posterior: dimension mismatch");
  const AttributeEffect& eff = spec.effects[attr_index];
  const int c = attr.num_classes();
  const double inv_2v = 1.0 / (2.0 * spec.sigma_noise * spec.sigma_noise);

  // Other attributes' effects are orthogonal to this attribute's offset
  // span, so the exact posterior reduces to distances within that span.
  Eigen::VectorXd coords(c);
  for (int j = 0; j < c; ++j)
    coords[j] = eff.class_offsets.row(j).dot(e) /
                eff.class_offsets.row(j).norm();
  Eigen::VectorXd scores(c);
  for (int j = 0; j < c; ++j) {
    const double norm_j = eff.class_offsets.row(j).norm();
    Eigen::VectorXd target = Eigen::VectorXd::Zero(c);
    target[j] = norm_j;
    scores[j] = (eff.proportions[j] > 0.0 ? std::log(eff.proportions[j])
                                          : -std::numeric_limits<double>::infinity()) -
                (coords - target).squaredNorm() * inv_2v;
  }
  const double lse = logsumexp(scores);
  return (scores.array() - lse).exp();
}

int oracle_class(const GeneratorSpec& spec, const Eigen::VectorXd& e,
                 int attr_index) {
  Eigen::VectorXd posterior = oracle_posterior(spec, e, attr_index);
  int arg = 0;
  posterior.maxCoeff(&arg);
  return arg;
}

double oracle_value(const GeneratorSpec& spec, const Eigen::VectorXd& e,
                    int attr_index) {
  if (attr_index < 0 || attr_index >= spec.schema.num_attributes())
    throw std::invalid_argument("oracle_value: unknown attribute");
  const AttributeSpec& attr = spec.schema.attributes[attr_index];
  if (attr.kind != AttrKind::continuous)
    throw std::invalid_argument("oracle_value: attribute is categorical");
  if (e.size() != spec.dim())
    throw std::invalid_argument("oracle_value: dimension mismatch");
  const AttributeEffect& eff = spec.effects[attr_index];
  return eff.direction.dot(e) / eff.direction.squaredNorm();
}

Corpus drop_labels(const Corpus& corpus, int attr_index, double keep_fraction,
                   std::uint64_t rng_seed) {
  if (attr_index < 0 || attr_index >= corpus.schema.num_attributes())
    throw std::invalid_argument("drop_labels: unknown attribute");
  if (keep_fraction < 0.0 || keep_fraction > 1.0)
    throw std::invalid_argument("drop_labels: keep_fraction out of [0, 1]");
  Corpus out = corpus;
  Rng rng(rng_seed);
  for (int i = 0; i < out.size(); ++i)
    if (rng.uniform() >= keep_fraction) out.labels[i][attr_index] = std::nullopt;
  return out;
}

void save_embeddings_bin(const std::string& path, const Eigen::MatrixXd& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  nlohmann::json header{{"version", 1},
                        {"n", rows.rows()},
                        {"d", rows.cols()},
                        {"dtype", "f64"},
                        {"order", "row-major"}};
  out << header.dump() << "\n";
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      const double v = rows(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Eigen::MatrixXd load_embeddings_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string header_line;
  std::getline(in, header_line);
  const nlohmann::json header = nlohmann::json::parse(header_line);
  const std::string dtype = header.at("dtype").get<std::string>();
  if (header.at("version").get<int>() != 1 || (dtype != "f64" && dtype != "f32") ||
      header.at("order").get<std::string>() != "row-major")
    throw std::runtime_error("unsupported embedding file: " + path);
  const Eigen::Index n = header.at("n").get<Eigen::Index>();
  const Eigen::Index d = header.at("d").get<Eigen::Index>();
  Eigen::MatrixXd rows(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      double v;
      if (dtype == "f64") {
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
      } else {
        float f;
        in.read(reinterpret_cast<char*>(&f), sizeof(float));
        v = f;
      }
      if (!in) throw std::runtime_error("truncated embedding file: " + path);
      rows(i, j) = v;
    }
  return rows;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_embeddings_bin((fs::path(dir) / "embeddings.bin").string(),
                      corpus.embeddings);
  {
    std::ofstream out(fs::path(dir) / "schema.json");
    out << schema_to_json(corpus.schema).dump(2) << "\n";
  }
  std::ofstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw std::runtime_error("cannot write labels.csv under " + dir);
  csv << "split";
  for (const auto& attr : corpus.schema.attributes) csv << "," << attr.name;
  for (const auto& attr : corpus.schema.attributes) csv << ",truth_" << attr.name;
  csv << "\n";
  for (int i = 0; i < corpus.size(); ++i) {
    csv << (corpus.split[i] == Split::val ? "val" : "train");
    for (int a = 0; a < corpus.schema.num_attributes(); ++a)
      csv << "," << label_value_to_string(corpus.schema, a, corpus.labels[i][a]);
    for (int a = 0; a < corpus.schema.num_attributes(); ++a)
      csv << "," << label_value_to_string(corpus.schema, a, corpus.truth[i][a]);
    csv << "\n";
  }
}

Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  Corpus corpus;
  {
    std::ifstream in(fs::path(dir) / "schema.json");
    if (!in) throw std::runtime_error("cannot read schema.json under " + dir);
    nlohmann::json j;
    in >> j;
    corpus.schema = schema_from_json(j);
  }
  corpus.embeddings =
      load_embeddings_bin((fs::path(dir) / "embeddings.bin").string());

  std::ifstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw std::runtime_error("cannot read labels.csv under " + dir);
  std::string line;
  std::getline(csv, line);
  const auto header = split_csv_line(line);
  const int l = corpus.schema.num_attributes();
  if (static_cast<int>(header.size()) != 1 + 2 * l || header[0] != "split")
    throw std::runtime_error("unexpected labels.csv header under " + dir);
  for (int a = 0; a < l; ++a) {
    if (header[1 + a] != corpus.schema.attributes[a].name ||
        header[1 + l + a] != "truth_" + corpus.schema.attributes[a].name)
      throw std::runtime_error("labels.csv does not match schema under " + dir);
  }
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != 1 + 2 * l)
      throw std::runtime_error("short row in labels.csv under " + dir);
    corpus.split.push_back(cells[0] == "val" ? Split::val : Split::train);
    MultiLabel label(l), truth(l);
    for (int a = 0; a < l; ++a) {
      label[a] = label_value_from_string(corpus.schema, a, cells[1 + a]);
      truth[a] = label_value_from_string(corpus.schema, a, cells[1 + l + a]);
    }
    corpus.labels.push_back(std::move(label));
    corpus.truth.push_back(std::move(truth));
  }
  if (static_cast<Eigen::Index>(corpus.labels.size()) != corpus.embeddings.rows())
    throw std::runtime_error("labels.csv row count mismatch under " + dir);
  return corpus;
}

namespace {

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.begin(), v.end());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), data.size());
}

}  // namespace

nlohmann::json generator_to_json(const GeneratorSpec& spec) {
  nlohmann::json effects = nlohmann::json::array();
  for (int a = 0; a < spec.schema.num_attributes(); ++a) {
    const AttributeSpec& attr = spec.schema.attributes[a];
    const AttributeEffect& eff = spec.effects[a];
    nlohmann::json ej;
    if (attr.kind == AttrKind::categorical) {
      std::vector<std::vector<double>> offsets;
      for (int c = 0; c < eff.class_offsets.rows(); ++c)
        offsets.emplace_back(eff.class_offsets.row(c).begin(),
                             eff.class_offsets.row(c).end());
      ej["class_offsets"] = offsets;
      ej["proportions"] = vector_to_json(eff.proportions);
    } else {
      ej["direction"] = vector_to_json(eff.direction);
    }
    effects.push_back(std::move(ej));
  }
  return nlohmann::json{{"version", 1},
                        {"sigma_noise", spec.sigma_noise},
                        {"n_items", spec.n_items},
                        {"val_fraction", spec.val_fraction},
                        {"schema", schema_to_json(spec.schema)},
                        {"effects", std::move(effects)}};
}

GeneratorSpec generator_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("generator_from_json: unsupported version");
  GeneratorSpec spec;
  spec.schema = schema_from_json(j.at("schema"));
  spec.sigma_noise = j.at("sigma_noise").get<double>();
  spec.n_items = j.at("n_items").get<int>();
  spec.val_fraction = j.at("val_fraction").get<double>();
  const auto& effects = j.at("effects");
  for (int a = 0; a < spec.schema.num_attributes(); ++a) {
    const AttributeSpec& attr = spec.schema.attributes[a];
    AttributeEffect eff;
    if (attr.kind == AttrKind::categorical) {
      const auto offsets =
          effects.at(a).at("class_offsets").get<std::vector<std::vector<double>>>();
      eff.class_offsets.resize(offsets.size(), spec.dim());
      for (std::size_t c = 0; c < offsets.size(); ++c)
        eff.class_offsets.row(c) = Eigen::Map<const Eigen::VectorXd>(
            offsets[c].data(), offsets[c].size());
      eff.proportions = vector_from_json(effects.at(a).at("proportions"));
    } else {
      eff.direction = vector_from_json(effects.at(a).at("direction"));
    }
    spec.effects.push_back(std::move(eff));
  }
  spec.validate();
  return spec;
}

}  // namespace voicelens
