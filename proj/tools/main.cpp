// voicelens: semi-supervised flow-based speaker-embedding generation,
// classification, and editing over synthetic desk-scale corpora.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voicelens/base.hpp"
#include "voicelens/distributions.hpp"
#include "voicelens/flow.hpp"
#include "voicelens/metrics.hpp"
#include "voicelens/synthcorpus.hpp"
#include "voicelens/tacospawn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voicelens;

namespace {

// ---------------------------------------------------------------------------
// manifest plumbing
// ---------------------------------------------------------------------------

std::string sha1_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("sha1 failure");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// git-style blob hash of a file's content.
std::string git_blob_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read input file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  return sha1_hex(blob);
}

struct Manifest {
  std::string command;
  json options = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const fs::path& path) const {
    json hashes = json::object();
    for (const auto& input : inputs) hashes[input] = git_blob_hash(input);
    const json j{{"version", 1},    {"command", command}, {"options", options},
                 {"seed", seed},    {"inputs", hashes},   {"outputs", outputs}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
  }
};

fs::path manifest_path_for(const std::string& out_file) {
  return fs::path(out_file).string() + ".manifest.json";
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("VOICELENS_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double");
  return std::string(buf, ptr);
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read file: " + path);
  json j;
  in >> j;
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// label / model helpers
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, std::string>> parse_assignments(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("bad assignment '" + item + "' (expected name=value)");
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

MultiLabel parse_label_flag(const LabelSchema& schema, const std::string& text) {
  MultiLabel y = empty_label(schema);
  for (const auto& [name, value] : parse_assignments(text)) {
    const int idx = schema.attr_index(name);
    y[idx] = label_value_from_string(schema, idx, value);
  }
  return y;
}

enum class ModelKind { flow, gmm, conditional_gmm };

ModelKind detect_model_kind(const json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "flow") return ModelKind::flow;
  if (kind == "conditional_gmm") return ModelKind::conditional_gmm;
  if (kind == "gmm" || j.contains("weights")) return ModelKind::gmm;
  if (j.contains("layers")) return ModelKind::flow;
  if (j.contains("entries")) return ModelKind::conditional_gmm;
  throw std::runtime_error("cannot determine model kind");
}

GeneratorSpec load_generator(const std::string& corpus_dir) {
  const fs::path path = fs::path(corpus_dir) / "generator.json";
  if (!fs::exists(path))
    throw std::runtime_error("no generator.json under " + corpus_dir +
                             " (oracle unavailable)");
  return generator_from_json(load_json_file(path.string()));
}

void write_labels_csv(const std::string& path, const LabelSchema& schema,
                      const std::vector<MultiLabel>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (int a = 0; a < schema.num_attributes(); ++a)
    out << (a ? "," : "") << schema.attributes[a].name;
  out << "\n";
  for (const auto& y : labels) {
    for (int a = 0; a < schema.num_attributes(); ++a)
      out << (a ? "," : "") << label_value_to_string(schema, a, y[a]);
    out << "\n";
  }
}

void write_report(const std::string& prefix,
                  const std::vector<std::pair<std::string, double>>& rows,
                  Manifest& manifest) {
  const std::string csv_path = prefix + ".csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write file: " + csv_path);
  csv << "metric,value\n";
  json j = json::object();
  for (const auto& [metric, value] : rows) {
    csv << metric << "," << format_double(value) << "\n";
    j[metric] = value;
  }
  const std::string json_path = prefix + ".json";
  write_json_file(json_path, j);
  manifest.outputs.push_back(csv_path);
  manifest.outputs.push_back(json_path);
}

std::vector<std::string> corpus_input_files(const std::string& dir) {
  std::vector<std::string> files = {dir + "/embeddings.bin", dir + "/labels.csv",
                                    dir + "/schema.json"};
  if (fs::exists(fs::path(dir) / "generator.json"))
    files.push_back(dir + "/generator.json");
  return files;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  std::string preset = "easy";
  int d = 64;
  int n = 1200;
  double val_fraction = 0.125;
  double sigma_noise = 1.0;
  double separation = -1.0;       // <0: from preset
  std::vector<std::string> keep;  // attr=fraction label keeping
  std::uint64_t seed = default_seed();
};

int run_synth(const SynthOptions& opt) {
  double separation = opt.separation;
  if (separation < 0.0) {
    if (opt.preset == "easy") separation = 8.0;
    else if (opt.preset == "hard") separation = 1.5;
    else throw std::runtime_error("unknown preset '" + opt.preset + "'");
  }
  const GeneratorSpec spec =
      GeneratorSpec::create(default_schema(opt.d), separation, opt.sigma_noise,
                            opt.n, opt.val_fraction, opt.seed);
  Corpus corpus = generate(spec, opt.seed);
  for (const auto& assignment : opt.keep) {
    for (const auto& [name, value] : parse_assignments(assignment)) {
      const int idx = corpus.schema.attr_index(name);
      corpus = drop_labels(corpus, idx, std::stod(value),
                           opt.seed ^ (0x51ed2700ULL + idx));
    }
  }
  save_corpus(corpus, opt.out);
  write_json_file((fs::path(opt.out) / "generator.json").string(),
                  generator_to_json(spec));

  Manifest manifest;
  manifest.command = "synth";
  manifest.options = {{"preset", opt.preset},
                      {"d", opt.d},
                      {"n", opt.n},
                      {"val_fraction", opt.val_fraction},
                      {"sigma_noise", opt.sigma_noise},
                      {"separation", separation},
                      {"keep", opt.keep}};
  manifest.seed = opt.seed;
  manifest.outputs = corpus_input_files(opt.out);
  manifest.write(fs::path(opt.out) / "manifest.json");
  std::cout << "synth: wrote " << corpus.size() << " items (d=" << opt.d
            << ", separation=" << separation << ") to " << opt.out << "\n";
  return 0;
}

struct FitGmmOptions {
  std::string corpus;
  std::string out;
  int k = 10;
  std::string split = "train";
  std::string conditional;  // comma-separated attribute names
  int max_iters = 200;
  double tol = 1e-7;
  std::uint64_t seed = default_seed();
};

int run_fit_gmm(const FitGmmOptions& opt) {
  const Corpus corpus = load_corpus(opt.corpus);
  std::vector<int> rows;
  if (opt.split == "all") {
    for (int i = 0; i < corpus.size(); ++i) rows.push_back(i);
  } else if (opt.split == "train" || opt.split == "val") {
    rows = corpus.indices(opt.split == "val" ? Split::val : Split::train);
  } else {
    throw std::runtime_error("unknown split '" + opt.split + "'");
  }
  if (rows.empty()) throw std::runtime_error("selected split is empty");

  const EmConfig config{.max_iters = opt.max_iters, .tol = opt.tol,
                        .rng_seed = opt.seed};
  Manifest manifest;
  manifest.command = "fit-gmm";
  manifest.options = {{"corpus", opt.corpus}, {"k", opt.k},
                      {"split", opt.split},   {"conditional", opt.conditional},
                      {"max_iters", opt.max_iters}, {"tol", opt.tol}};
  manifest.seed = opt.seed;
  manifest.inputs = corpus_input_files(opt.corpus);
  manifest.outputs = {opt.out};

  if (opt.conditional.empty()) {
    Eigen::MatrixXd data(rows.size(), corpus.embeddings.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      data.row(i) = corpus.embeddings.row(rows[i]);
    const GmmModel model = gmm_fit_em(data, opt.k, config);
    json j = gmm_to_json(model);
    j["kind"] = "gmm";
    write_json_file(opt.out, j);
    std::cout << "fit-gmm: K=" << opt.k << " on " << rows.size() << " items -> "
              << opt.out << "\n";
  } else {
    std::vector<std::string> conditions;
    {
      std::stringstream ss(opt.conditional);
      std::string name;
      while (std::getline(ss, name, ',')) conditions.push_back(name);
    }
    // The baseline uses only items fully labeled on the conditions.
    std::vector<int> labeled;
    for (int i : rows) {
      bool ok = true;
      for (const auto& name : conditions)
        if (!corpus.labels[i][corpus.schema.attr_index(name)].has_value())
          ok = false;
      if (ok) labeled.push_back(i);
    }
    if (labeled.size() < rows.size())
      std::cout << "fit-gmm: skipped " << rows.size() - labeled.size()
                << " items lacking condition labels\n";
    if (labeled.empty()) throw std::runtime_error("no fully labeled items");
    Eigen::MatrixXd data(labeled.size(), corpus.embeddings.cols());
    std::vector<MultiLabel> labels;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      data.row(i) = corpus.embeddings.row(labeled[i]);
      labels.push_back(corpus.labels[labeled[i]]);
    }
    const ConditionalGmm model =
        conditional_gmm_fit(data, labels, corpus.schema, conditions, opt.k, config);
    write_json_file(opt.out, conditional_gmm_to_json(model));
    for (const auto& warning : model.warnings)
      std::cout << "fit-gmm: warning: " << warning << "\n";
    std::cout << "fit-gmm: conditional on (" << opt.conditional << "), "
              << model.table.size() << " tuples -> " << opt.out << "\n";
  }
  manifest.write(manifest_path_for(opt.out));
  return 0;
}

struct TrainOptions {
  std::string corpus;
  std::string supporting;
  std::string out;
  int epochs = 200;
  int patience = 10;
  int batch = 64;
  int reg_batch = 64;
  double lr = 1e-3;
  double eps = -1.0;
  int layers = 5;
  int hidden = -1;
  double clamp = 5.0;
  bool oracle_posthoc = false;
  std::uint64_t seed = default_seed();
};

int run_train(const TrainOptions& opt) {
  const Corpus corpus = load_corpus(opt.corpus);
  const GmmModel supporting = gmm_from_json(load_json_file(opt.supporting));
  const LabeledData train = corpus.subset(Split::train);
  const LabeledData val = corpus.subset(Split::val);

  TrainConfig config;
  config.batch_size = opt.batch;
  config.reg_batch_size = opt.reg_batch;
  config.perturbation_scale = opt.eps;
  config.learning_rate = opt.lr;
  config.max_epochs = opt.epochs;
  config.patience = opt.patience;
  config.rng_seed = opt.seed;
  config.n_layers = opt.layers;
  config.hidden = opt.hidden;
  config.clamp_bound = opt.clamp;

  PosthocLabeler posthoc;
  if (opt.oracle_posthoc) {
    const GeneratorSpec gen = load_generator(opt.corpus);
    posthoc = [gen](const Eigen::VectorXd& e, MultiLabel& y) {
      for (int a = 0; a < gen.schema.num_attributes(); ++a)
        if (gen.schema.attributes[a].kind == AttrKind::continuous)
          y[a] = oracle_value(gen, e, a);
    };
  }

  const TrainResult result =
      train_flow(train, val, supporting, corpus.schema, config, posthoc);
  write_json_file(opt.out, result.model.to_json());

  Manifest manifest;
  manifest.command = "train";
  manifest.options = {{"corpus", opt.corpus},   {"supporting", opt.supporting},
                      {"epochs", opt.epochs},   {"patience", opt.patience},
                      {"batch", opt.batch},     {"reg_batch", opt.reg_batch},
                      {"lr", opt.lr},           {"eps", opt.eps},
                      {"layers", opt.layers},   {"hidden", opt.hidden},
                      {"clamp", opt.clamp},
                      {"oracle_posthoc", opt.oracle_posthoc}};
  manifest.seed = opt.seed;
  manifest.inputs = corpus_input_files(opt.corpus);
  manifest.inputs.push_back(opt.supporting);
  manifest.outputs = {opt.out};
  manifest.write(manifest_path_for(opt.out));

  std::cout << "train: " << result.train_loss.size() << " epochs, best epoch "
            << result.best_epoch << ", val loglik "
            << format_double(result.val_loglik[result.best_epoch]) << " -> "
            << opt.out << "\n";
  return 0;
}

struct SampleOptions {
  std::string model;
  std::string out;  // prefix
  int n = 100;
  std::string label;      // flow
  std::string condition;  // conditional gmm
  bool allow_out_of_range = false;
  std::uint64_t seed = default_seed();
};

int run_sample(const SampleOptions& opt) {
  const json model_json = load_json_file(opt.model);
  const ModelKind kind = detect_model_kind(model_json);
  const std::string bin_path = opt.out + ".embeddings.bin";
  const std::string csv_path = opt.out + ".labels.csv";

  Manifest manifest;
  manifest.command = "sample";
  manifest.options = {{"model", opt.model},
                      {"n", opt.n},
                      {"label", opt.label},
                      {"condition", opt.condition},
                      {"allow_out_of_range", opt.allow_out_of_range}};
  manifest.seed = opt.seed;
  manifest.inputs = {opt.model};
  manifest.outputs = {bin_path};

  if (kind == ModelKind::flow) {
    const FlowModel model = FlowModel::from_json(model_json);
    MultiLabel y = empty_label(model.schema());
    if (!opt.label.empty()) y = parse_label_flag(model.schema(), opt.label);
    validate_label(y, model.schema(), opt.allow_out_of_range);
    const Eigen::MatrixXd samples = model.sample(y, opt.n, opt.seed);
    save_embeddings_bin(bin_path, samples);
    write_labels_csv(csv_path, model.schema(), std::vector<MultiLabel>(opt.n, y));
    manifest.outputs.push_back(csv_path);
  } else if (kind == ModelKind::gmm) {
    if (!opt.label.empty() || !opt.condition.empty())
      throw std::runtime_error("a plain GMM cannot be conditioned");
    const GmmModel model = gmm_from_json(model_json);
    save_embeddings_bin(bin_path, gmm_sample(model, opt.n, opt.seed));
  } else {
    const ConditionalGmm model = conditional_gmm_from_json(model_json);
    if (opt.condition.empty())
      throw std::runtime_error("--condition is required for a conditional GMM");
    std::vector<int> tuple(model.condition_names.size(), -1);
    for (const auto& [name, value] : parse_assignments(opt.condition)) {
      bool found = false;
      for (std::size_t i = 0; i < model.condition_names.size(); ++i) {
        if (model.condition_names[i] != name) continue;
        found = true;
        for (std::size_t c = 0; c < model.class_lists[i].size(); ++c)
          if (model.class_lists[i][c] == value) tuple[i] = static_cast<int>(c);
        if (tuple[i] < 0)
          throw std::runtime_error("unknown class '" + value + "' for '" + name +
                                   "'");
      }
      if (!found) throw std::runtime_error("unknown condition '" + name + "'");
    }
    for (std::size_t i = 0; i < tuple.size(); ++i)
      if (tuple[i] < 0)
        throw std::runtime_error("missing condition '" +
                                 model.condition_names[i] + "'");
    save_embeddings_bin(bin_path,
                        conditional_gmm_sample(model, tuple, opt.n, opt.seed));
  }
  manifest.write(manifest_path_for(opt.out));
  std::cout << "sample: " << opt.n << " embeddings -> " << bin_path << "\n";
  return 0;
}

struct ClassifyOptions {
  std::string model;
  std::string corpus;      // corpus dir (uses truth when present)
  std::string embeddings;  // raw embeddings file
  std::string attr;
  std::string split = "all";
  std::string out;
  std::uint64_t seed = default_seed();
};

int run_classify(const ClassifyOptions& opt) {
  const FlowModel model = FlowModel::from_json(load_json_file(opt.model));
  const int attr_index = model.schema().attr_index(opt.attr);
  const AttributeSpec& attr = model.schema().attributes[attr_index];
  if (attr.kind != AttrKind::categorical)
    throw std::runtime_error("classify: attribute '" + opt.attr +
                             "' is continuous");

  Manifest manifest;
  manifest.command = "classify";
  manifest.options = {{"model", opt.model},
                      {"corpus", opt.corpus},
                      {"embeddings", opt.embeddings},
                      {"attr", opt.attr},
                      {"split", opt.split}};
  manifest.seed = opt.seed;
  manifest.inputs = {opt.model};

  Eigen::MatrixXd data;
  std::vector<int> truth;  // -1 when unknown
  if (!opt.corpus.empty()) {
    const Corpus corpus = load_corpus(opt.corpus);
    std::vector<int> rows;
    if (opt.split == "all")
      for (int i = 0; i < corpus.size(); ++i) rows.push_back(i);
    else
      rows = corpus.indices(opt.split == "val" ? Split::val : Split::train);
    data.resize(rows.size(), corpus.embeddings.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      data.row(i) = corpus.embeddings.row(rows[i]);
      const auto& slot = corpus.truth[rows[i]][attr_index];
      truth.push_back(slot.has_value() ? std::get<int>(*slot) : -1);
    }
    for (const auto& f : corpus_input_files(opt.corpus))
      manifest.inputs.push_back(f);
  } else if (!opt.embeddings.empty()) {
    data = load_embeddings_bin(opt.embeddings);
    truth.assign(data.rows(), -1);
    manifest.inputs.push_back(opt.embeddings);
  } else {
    throw std::runtime_error("classify: need --corpus or --embeddings");
  }

  std::ofstream csv(opt.out);
  if (!csv) throw std::runtime_error("cannot write file: " + opt.out);
  csv << "index,predicted,truth";
  for (const auto& cls : attr.classes) csv << ",posterior_" << cls;
  csv << "\n";
  int hits = 0, known = 0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Eigen::VectorXd posterior =
        model.classify_embedding(data.row(i).transpose(), attr_index);
    int predicted = 0;
    posterior.maxCoeff(&predicted);
    csv << i << "," << attr.classes[predicted] << ","
        << (truth[i] >= 0 ? attr.classes[truth[i]] : "");
    for (Eigen::Index c = 0; c < posterior.size(); ++c)
      csv << "," << format_double(posterior[c]);
    csv << "\n";
    if (truth[i] >= 0) {
      ++known;
      if (predicted == truth[i]) ++hits;
    }
  }
  manifest.outputs = {opt.out};
  manifest.write(manifest_path_for(opt.out));
  if (known > 0)
    std::cout << "classify: accuracy " << format_double(double(hits) / known)
              << " on " << known << " items\n";
  else
    std::cout << "classify: wrote posteriors for " << data.rows() << " items\n";
  return 0;
}

struct EditOptions {
  std::string model;
  std::string embeddings;
  std::string corpus;
  std::string split = "all";
  std::string attr;
  std::optional<double> delta;
  std::string set_value;  // class name or numeric value
  std::string out;
  std::uint64_t seed = default_seed();
};

int run_edit(const EditOptions& opt) {
  const FlowModel model = FlowModel::from_json(load_json_file(opt.model));
  const int attr_index = model.schema().attr_index(opt.attr);
  const AttributeSpec& attr = model.schema().attributes[attr_index];

  EditRequest request;
  request.attr_index = attr_index;
  if (opt.delta.has_value() && !opt.set_value.empty())
    throw std::runtime_error("edit: give either --delta or --set, not both");
  if (opt.delta.has_value()) {
    request.delta = *opt.delta;
  } else if (!opt.set_value.empty()) {
    if (attr.kind == AttrKind::categorical) {
      const auto v =
          label_value_from_string(model.schema(), attr_index, opt.set_value);
      if (!v.has_value()) throw std::runtime_error("edit: bad --set value");
      request.new_class = std::get<int>(*v);
    } else {
      request.new_value = std::stod(opt.set_value);
    }
  } else {
    throw std::runtime_error("edit: need --delta or --set");
  }

  Manifest manifest;
  manifest.command = "edit";
  manifest.options = {{"model", opt.model},
                      {"embeddings", opt.embeddings},
                      {"corpus", opt.corpus},
                      {"split", opt.split},
                      {"attr", opt.attr},
                      {"delta", opt.delta.has_value() ? json(*opt.delta) : json()},
                      {"set", opt.set_value}};
  manifest.seed = opt.seed;
  manifest.inputs = {opt.model};

  Eigen::MatrixXd data;
  if (!opt.embeddings.empty()) {
    data = load_embeddings_bin(opt.embeddings);
    manifest.inputs.push_back(opt.embeddings);
  } else if (!opt.corpus.empty()) {
    const Corpus corpus = load_corpus(opt.corpus);
    std::vector<int> rows;
    if (opt.split == "all")
      for (int i = 0; i < corpus.size(); ++i) rows.push_back(i);
    else
      rows = corpus.indices(opt.split == "val" ? Split::val : Split::train);
    data.resize(rows.size(), corpus.embeddings.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      data.row(i) = corpus.embeddings.row(rows[i]);
    for (const auto& f : corpus_input_files(opt.corpus))
      manifest.inputs.push_back(f);
  } else {
    throw std::runtime_error("edit: need --embeddings or --corpus");
  }

  Eigen::MatrixXd edited(data.rows(), data.cols());
  double readout_shift = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Eigen::VectorXd e = data.row(i).transpose();
    const Eigen::VectorXd out = model.edit(e, request);
    edited.row(i) = out.transpose();
    if (attr.kind == AttrKind::continuous)
      readout_shift += model.read_embedding_continuous(out, attr_index) -
                       model.read_embedding_continuous(e, attr_index);
  }
  save_embeddings_bin(opt.out, edited);
  manifest.outputs = {opt.out};
  manifest.write(manifest_path_for(opt.out));
  if (attr.kind == AttrKind::continuous)
    std::cout << "edit: mean readout shift "
              << format_double(readout_shift / data.rows()) << " over "
              << data.rows() << " items -> " << opt.out << "\n";
  else
    std::cout << "edit: rewrote '" << opt.attr << "' on " << data.rows()
              << " items -> " << opt.out << "\n";
  return 0;
}

struct EvalOptions {
  std::string corpus;
  std::string model;
  std::string out = "report";
  int n_gen = 1000;
  bool distances = false;
  bool clique = false;
  double snr_bin_width = 10.0;
  bool pearson = false;
  bool accuracy = false;
  std::string attr = "gender";
  std::uint64_t seed = default_seed();
};

Eigen::MatrixXd eval_generate(const json& model_json, int n, std::uint64_t seed) {
  const ModelKind kind = detect_model_kind(model_json);
  if (kind == ModelKind::flow) {
    const FlowModel model = FlowModel::from_json(model_json);
    return model.sample(empty_label(model.schema()), n, seed);
  }
  if (kind == ModelKind::gmm)
    return gmm_sample(gmm_from_json(model_json), n, seed);
  // Conditional GMM: uniform draw over condition tuples.
  const ConditionalGmm model = conditional_gmm_from_json(model_json);
  std::vector<std::vector<int>> tuples;
  for (const auto& [tuple, gmm] : model.table) tuples.push_back(tuple);
  Rng rng(seed);
  Eigen::MatrixXd out(n, model.dim());
  for (int i = 0; i < n; ++i) {
    const auto& tuple = tuples[rng.next_u64() % tuples.size()];
    out.row(i) = conditional_gmm_sample(model, tuple, 1, rng.next_u64()).row(0);
  }
  return out;
}

int run_eval(const EvalOptions& opt) {
  const Corpus corpus = load_corpus(opt.corpus);
  Manifest manifest;
  manifest.command = "eval";
  manifest.options = {{"corpus", opt.corpus},   {"model", opt.model},
                      {"n_gen", opt.n_gen},     {"distances", opt.distances},
                      {"clique", opt.clique},   {"snr_bins", opt.snr_bin_width},
                      {"pearson", opt.pearson}, {"accuracy", opt.accuracy},
                      {"attr", opt.attr}};
  manifest.seed = opt.seed;
  manifest.inputs = corpus_input_files(opt.corpus);
  if (!opt.model.empty()) manifest.inputs.push_back(opt.model);

  std::vector<std::pair<std::string, double>> rows;
  const double s2s = nn_distance(corpus.embeddings, corpus.embeddings, true);
  rows.emplace_back("s2s", s2s);

  json model_json;
  if (!opt.model.empty()) model_json = load_json_file(opt.model);
  if ((opt.distances || opt.pearson || opt.clique || opt.accuracy) &&
      opt.model.empty())
    throw std::runtime_error("eval: this report needs --model");

  if (opt.distances) {
    const Eigen::MatrixXd gen = eval_generate(model_json, opt.n_gen, opt.seed);
    rows.emplace_back("s2g", nn_distance(corpus.embeddings, gen));
    rows.emplace_back("g2g", nn_distance(gen, gen, true));
    if (detect_model_kind(model_json) == ModelKind::flow) {
      // A reconstruction map exists: round-trip the validation items.
      const FlowModel model = FlowModel::from_json(model_json);
      const LabeledData val = corpus.subset(Split::val);
      if (val.size() > 0) {
        Eigen::MatrixXd z;
        Eigen::RowVectorXd logdet;
        model.forward_batch(val.embeddings.transpose(), z, logdet);
        const Eigen::MatrixXd recon = model.inverse_batch(z).transpose();
        rows.emplace_back("s2t_s", paired_distance(val.embeddings, recon));
      }
    }
  }

  if (opt.accuracy) {
    const FlowModel model = FlowModel::from_json(model_json);
    const int attr_index = model.schema().attr_index(opt.attr);
    const auto idx = corpus.indices(Split::val);
    std::vector<int> predicted, truth;
    for (int i : idx) {
      const Eigen::VectorXd posterior = model.classify_embedding(
          corpus.embeddings.row(i).transpose(), attr_index);
      int arg = 0;
      posterior.maxCoeff(&arg);
      predicted.push_back(arg);
      truth.push_back(std::get<int>(*corpus.truth[i][attr_index]));
    }
    rows.emplace_back("accuracy_" + opt.attr,
                      attribute_accuracy(predicted, truth));
  }

  if (opt.pearson) {
    const FlowModel model = FlowModel::from_json(model_json);
    const GeneratorSpec gen = load_generator(opt.corpus);
    int snr_index = -1;
    for (int a = 0; a < model.schema().num_attributes(); ++a)
      if (model.schema().attributes[a].kind == AttrKind::continuous)
        snr_index = a;
    if (snr_index < 0) throw std::runtime_error("no continuous attribute");
    const AttributeSpec& attr = model.schema().attributes[snr_index];
    Rng rng(opt.seed + 1);
    Eigen::VectorXd conditioned(opt.n_gen), measured(opt.n_gen);
    for (int i = 0; i < opt.n_gen; ++i) {
      const double target = rng.uniform(attr.range_low, attr.range_high);
      MultiLabel y = empty_label(model.schema());
      y[snr_index] = target;
      const Eigen::MatrixXd s = model.sample(y, 1, rng.next_u64());
      conditioned[i] = target;
      measured[i] = oracle_value(gen, s.row(0).transpose(), snr_index);
    }
    rows.emplace_back("pearson_r_" + attr.name, pearson_r(conditioned, measured));
  }

  if (opt.clique) {
    const FlowModel model = FlowModel::from_json(model_json);
    int snr_index = -1;
    for (int a = 0; a < model.schema().num_attributes(); ++a)
      if (model.schema().attributes[a].kind == AttrKind::continuous)
        snr_index = a;
    if (snr_index < 0) throw std::runtime_error("no continuous attribute");
    const AttributeSpec& attr = model.schema().attributes[snr_index];
    const std::string clique_path = opt.out + ".clique.csv";
    std::ofstream csv(clique_path);
    if (!csv) throw std::runtime_error("cannot write file: " + clique_path);
    csv << "bin_low,bin_high,omega\n";
    int bin = 0;
    for (double lo = attr.range_low; lo < attr.range_high - 1e-9;
         lo += opt.snr_bin_width, ++bin) {
      const double hi = std::min(lo + opt.snr_bin_width, attr.range_high);
      MultiLabel y = empty_label(model.schema());
      y[snr_index] = 0.5 * (lo + hi);
      const Eigen::MatrixXd s = model.sample(y, opt.n_gen, opt.seed + 100 + bin);
      csv << format_double(lo) << "," << format_double(hi) << ","
          << clique_number(s, s2s) << "\n";
    }
    manifest.outputs.push_back(clique_path);
  }

  write_report(opt.out, rows, manifest);
  manifest.write(manifest_path_for(opt.out));
  for (const auto& [metric, value] : rows)
    std::cout << "eval: " << metric << " = " << format_double(value) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voicelens: flow-based speaker-embedding generation and editing"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_cmd->add_option("--out", synth.out, "output corpus directory")->required();
  synth_cmd->add_option("--preset", synth.preset, "easy|hard");
  synth_cmd->add_option("--d", synth.d, "embedding dimension");
  synth_cmd->add_option("--n", synth.n, "corpus size");
  synth_cmd->add_option("--val-fraction", synth.val_fraction);
  synth_cmd->add_option("--sigma-noise", synth.sigma_noise);
  synth_cmd->add_option("--separation", synth.separation,
                        "cluster separation (overrides preset)");
  synth_cmd->add_option("--keep", synth.keep,
                        "attr=fraction: keep only this fraction of labels");
  synth_cmd->add_option("--seed", synth.seed);

  FitGmmOptions fit;
  auto* fit_cmd =
      app.add_subcommand("fit-gmm", "fit a supporting or conditional GMM");
  fit_cmd->add_option("--corpus", fit.corpus)->required();
  fit_cmd->add_option("--out", fit.out)->required();
  fit_cmd->add_option("--k", fit.k, "components per mixture");
  fit_cmd->add_option("--split", fit.split, "train|val|all");
  fit_cmd->add_option("--conditional", fit.conditional,
                      "comma-separated categorical attributes");
  fit_cmd->add_option("--max-iters", fit.max_iters);
  fit_cmd->add_option("--tol", fit.tol);
  fit_cmd->add_option("--seed", fit.seed);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train the flow");
  train_cmd->add_option("--corpus", train.corpus)->required();
  train_cmd->add_option("--supporting", train.supporting)->required();
  train_cmd->add_option("--out", train.out)->required();
  train_cmd->add_option("--epochs", train.epochs);
  train_cmd->add_option("--patience", train.patience);
  train_cmd->add_option("--batch", train.batch);
  train_cmd->add_option("--reg-batch", train.reg_batch);
  train_cmd->add_option("--lr", train.lr);
  train_cmd->add_option("--eps", train.eps,
                        "pseudo-label perturbation scale (<0: auto)");
  train_cmd->add_option("--layers", train.layers);
  train_cmd->add_option("--hidden", train.hidden);
  train_cmd->add_option("--clamp", train.clamp);
  train_cmd->add_flag("--oracle-posthoc", train.oracle_posthoc,
                      "label continuous attrs of regularization data with the "
                      "corpus oracle");
  train_cmd->add_option("--seed", train.seed);

  SampleOptions sample;
  auto* sample_cmd =
      app.add_subcommand("sample", "sample embeddings from a model");
  sample_cmd->add_option("--model", sample.model)->required();
  sample_cmd->add_option("--out", sample.out, "output prefix")->required();
  sample_cmd->add_option("-n,--n", sample.n);
  sample_cmd->add_option("--label", sample.label,
                         "flow conditioning, e.g. gender=F,age=_,snr=_");
  sample_cmd->add_option("--condition", sample.condition,
                         "conditional-GMM tuple, e.g. gender=F,age=child");
  sample_cmd->add_flag("--allow-out-of-range", sample.allow_out_of_range);
  sample_cmd->add_option("--seed", sample.seed);

  ClassifyOptions classify_opt;
  auto* classify_cmd = app.add_subcommand("classify", "attribute posteriors");
  classify_cmd->add_option("--model", classify_opt.model)->required();
  classify_cmd->add_option("--corpus", classify_opt.corpus);
  classify_cmd->add_option("--embeddings", classify_opt.embeddings);
  classify_cmd->add_option("--attr", classify_opt.attr)->required();
  classify_cmd->add_option("--split", classify_opt.split, "train|val|all");
  classify_cmd->add_option("--out", classify_opt.out)->required();
  classify_cmd->add_option("--seed", classify_opt.seed);

  EditOptions edit;
  auto* edit_cmd = app.add_subcommand("edit", "attribute editing");
  edit_cmd->add_option("--model", edit.model)->required();
  edit_cmd->add_option("--embeddings", edit.embeddings);
  edit_cmd->add_option("--corpus", edit.corpus);
  edit_cmd->add_option("--split", edit.split, "train|val|all");
  edit_cmd->add_option("--attr", edit.attr)->required();
  double delta_value = 0.0;
  auto* delta_opt =
      edit_cmd->add_option("--delta", delta_value, "shift a continuous attribute");
  edit_cmd->add_option("--set", edit.set_value, "set class or value");
  edit_cmd->add_option("--out", edit.out)->required();
  edit_cmd->add_option("--seed", edit.seed);

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluation reports");
  eval_cmd->add_option("--corpus", eval.corpus)->required();
  eval_cmd->add_option("--model", eval.model);
  eval_cmd->add_option("--out", eval.out, "report path prefix");
  eval_cmd->add_option("--n-gen", eval.n_gen);
  eval_cmd->add_flag("--distances", eval.distances);
  eval_cmd->add_flag("--clique", eval.clique);
  eval_cmd->add_option("--snr-bins", eval.snr_bin_width, "bin width in dB");
  eval_cmd->add_flag("--pearson", eval.pearson);
  eval_cmd->add_flag("--accuracy", eval.accuracy);
  eval_cmd->add_option("--attr", eval.attr);
  eval_cmd->add_option("--seed", eval.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (fit_cmd->parsed()) return run_fit_gmm(fit);
    if (train_cmd->parsed()) return run_train(train);
    if (sample_cmd->parsed()) return run_sample(sample);
    if (classify_cmd->parsed()) return run_classify(classify_opt);
    if (edit_cmd->parsed()) {
      if (delta_opt->count() > 0) edit.delta = delta_value;
      return run_edit(edit);
    }
    if (eval_cmd->parsed()) return run_eval(eval);
  } catch (const std::exception& err) {
    std::cerr << "voicelens: error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
