// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier closed-loop checks train a real model on the hard synthetic
// preset and measure everything against the generator oracle.

#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "voicelens/base.hpp"
#include "voicelens/distributions.hpp"
#include "voicelens/flow.hpp"
#include "voicelens/metrics.hpp"
#include "voicelens/synthcorpus.hpp"
#include "voicelens/tacospawn.hpp"

using namespace voicelens;
namespace fs = std::filesystem;

namespace {

struct Check {
  bool pass = true;
  std::ostringstream details;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      details << (details.str().empty() ? "" : "; ") << "FAILED: " << what;
    }
  }
  void note(const std::string& text) {
    details << (details.str().empty() ? "" : "; ") << text;
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

// Random non-identity model in its design regime: weight noise scaled by
// fan-in like the initializer, bias noise kept small so the log-scales stay
// far from the clamp.
FlowModel perturbed_model(const LabelSchema& schema, int n_layers, int hidden,
                          std::uint64_t seed, double scale) {
  FlowModel model = FlowModel::create(schema, n_layers, hidden, 5.0, seed);
  Rng rng(seed + 1);
  for (auto& layer : model.mutable_layers()) {
    layer.net.params.visit([&](auto& p) {
      const double std = p.cols() > 1 ? scale / std::sqrt(double(p.cols()))
                                      : 0.25 * scale;
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) += std * rng.normal();
    });
  }
  return model;
}

// ---------------------------------------------------------------------------
// 1. flow correctness: round trips, logdet, parameter gradients
// ---------------------------------------------------------------------------
Check criterion_flow_correctness() {
  Check check;
  const auto start = std::chrono::steady_clock::now();

  for (int d : {4, 16, 256}) {
    const FlowModel model = perturbed_model(default_schema(d), 5, -1, 1000 + d, 0.2);
    Rng rng(2000 + d);
    const int n = 1000;
    const Eigen::MatrixXd e = testutil::random_matrix(model.dim(), n, rng, 1.5);
    Eigen::MatrixXd z;
    Eigen::RowVectorXd logdet;
    model.forward_batch(e, z, logdet);
    const double err = (model.inverse_batch(z) - e).cwiseAbs().maxCoeff();
    check.require(err < 1e-8,
                  "round trip at d=" + std::to_string(d) + " err=" + fmt(err));
    check.note("d" + std::to_string(model.dim()) + " roundtrip " + fmt(err, 2));
  }

  // logdet against a finite-difference Jacobian at small d.
  for (int d : {4, 6, 8}) {
    const FlowModel model = perturbed_model(default_schema(d), 5, -1, 3000 + d, 0.3);
    Rng rng(4000 + d);
    for (int trial = 0; trial < 5; ++trial) {
      const Eigen::VectorXd e = testutil::random_matrix(d, 1, rng, 1.5);
      const auto [z, logdet] = model.forward(e);
      Eigen::MatrixXd jac(d, d);
      const double step = 1e-6;
      for (int j = 0; j < d; ++j) {
        Eigen::VectorXd hi = e, lo = e;
        hi[j] += step;
        lo[j] -= step;
        jac.col(j) =
            (model.forward(hi).first - model.forward(lo).first) / (2.0 * step);
      }
      const double numeric = std::log(std::abs(jac.fullPivLu().determinant()));
      const double rel =
          std::abs(logdet - numeric) / std::max(1.0, std::abs(logdet));
      check.require(rel < 1e-5,
                    "logdet at d=" + std::to_string(d) + " rel=" + fmt(rel));
    }
  }

  // Every parameter gradient against central differences (d=6, 2 layers,
  // mixed empty labels). The continuous range is kept small so the loss
  // magnitude stays in the regime where central differences resolve 1e-4.
  {
    LabelSchema schema;
    schema.attributes.push_back(categorical_attribute("gender", 1, {"F", "M"}, 6.0));
    schema.attributes.push_back(categorical_attribute("age", 1, {"a", "c"}, 6.0));
    schema.attributes.push_back(continuous_attribute("snr", 1, 0.0, 3.0));
    schema.residual_width = 3;
    FlowModel model = perturbed_model(schema, 2, 16, 5000, 0.5);
    Rng rng(6000);
    Eigen::MatrixXd x = testutil::random_matrix(6, 6, rng, 1.5);
    const std::vector<MultiLabel> labels = {
        {LabelValue{0}, LabelValue{1}, LabelValue{1.2}},
        {std::nullopt, std::nullopt, std::nullopt},
        {LabelValue{1}, std::nullopt, std::nullopt},
        {std::nullopt, LabelValue{0}, LabelValue{2.6}},
        {LabelValue{0}, std::nullopt, LabelValue{0.4}},
        {std::nullopt, LabelValue{1}, std::nullopt},
    };
    Eigen::VectorXd grad;
    model.batch_nll_grad(x, labels, grad);
    const Eigen::VectorXd theta = model.get_params();
    const double step = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd probe = theta;
      probe[i] = theta[i] + step;
      model.set_params(probe);
      const double hi = model.batch_nll(x, labels);
      probe[i] = theta[i] - step;
      model.set_params(probe);
      const double lo = model.batch_nll(x, labels);
      const double fd = (hi - lo) / (2.0 * step);
      const double rel = std::abs(grad[i] - fd) /
                         std::max({1e-4, std::abs(fd), std::abs(grad[i])});
      worst = std::max(worst, rel);
    }
    check.require(worst < 1e-4, "parameter gradients worst rel=" + fmt(worst));
    check.note("grad worst rel " + fmt(worst, 2) + " over " +
               std::to_string(theta.size()) + " params");
  }

  const double elapsed = seconds_since(start);
  check.require(elapsed < 120.0, "runtime " + fmt(elapsed) + "s exceeds 2 min");
  check.note("runtime " + fmt(elapsed, 3) + "s");
  return check;
}

// ---------------------------------------------------------------------------
// 2. base distribution: marginals, Bhattacharjee mass, classify posterior
// ---------------------------------------------------------------------------
Check criterion_base_distribution() {
  Check check;
  LabelSchema schema;
  schema.attributes.push_back(categorical_attribute("gender", 1, {"F", "M"}, 6.0));
  schema.attributes.push_back(continuous_attribute("snr", 1, 25.0, 55.0));
  schema.residual_width = 2;

  Rng rng(71);
  double worst_cat = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd z = testutil::random_matrix(4, 1, rng, 3.0);
    z[1] = rng.uniform(20.0, 60.0);
    const double marginal =
        std::exp(base_loglik(z, {std::nullopt, std::nullopt}, schema));
    double summed = 0.0;
    for (int j = 0; j < 2; ++j)
      summed += schema.attributes[0].prior[j] *
                std::exp(base_loglik(z, {LabelValue{j}, std::nullopt}, schema));
    worst_cat = std::max(worst_cat, std::abs(marginal - summed) /
                                        std::max(1e-300, std::abs(summed)));
  }
  check.require(worst_cat < 1e-10, "categorical marginal rel=" + fmt(worst_cat));

  double worst_cont = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd z = testutil::random_matrix(4, 1, rng, 2.0);
    z[1] = rng.uniform(20.0, 60.0);
    // Quadrature scaled by the peak of the integrand so the comparison keeps
    // full relative precision no matter how small the joint density is.
    const double y_star = std::clamp(z[1], 25.0, 55.0);
    const double peak =
        base_loglik(z, {LabelValue{0}, LabelValue{y_star}}, schema);
    const double marginal =
        std::exp(base_loglik(z, {LabelValue{0}, std::nullopt}, schema) - peak);
    const double quad =
        testutil::integrate(
            [&](double y) {
              return std::exp(
                  base_loglik(z, {LabelValue{0}, LabelValue{y}}, schema) - peak);
            },
            25.0, 55.0, 1e-13) /
        30.0;
    worst_cont =
        std::max(worst_cont, std::abs(marginal - quad) / std::max(1e-300, quad));
  }
  check.require(worst_cont < 1e-6, "continuous marginal rel=" + fmt(worst_cont));

  const double mass = testutil::integrate(
      [](double z) { return std::exp(bhattacharjee_logpdf(z, 25.0, 55.0)); },
      13.0, 67.0, 1e-10);
  check.require(std::abs(mass - 1.0) < 1e-6,
                "Bhattacharjee mass=" + fmt(mass, 10));

  Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
  z[0] = 2.0;
  const Eigen::VectorXd posterior = classify(z, schema, 0);
  const double expected = 1.0 / (1.0 + std::exp(-6.0));
  check.require(std::abs(posterior[0] - expected) < 1e-10,
                "classify posterior " + fmt(posterior[0], 8));
  check.note("posterior(z=2) = " + fmt(posterior[0], 6));
  return check;
}

// Shared state for the closed-loop criteria.
struct ClosedLoop {
  GeneratorSpec spec;
  Corpus corpus;        // hard preset, 30% categorical labels
  GmmModel supporting;  // K=10 on train embeddings
  FlowModel flow;
  ConditionalGmm baseline;  // per-gender, labeled subset
  double train_seconds = 0.0;
};

ClosedLoop train_closed_loop() {
  ClosedLoop state;
  state.spec = hard_preset(64, 3600, 101);
  Corpus corpus = generate(state.spec, 202);
  corpus = drop_labels(corpus, 0, 0.30, 303);
  corpus = drop_labels(corpus, 1, 0.30, 304);
  state.corpus = corpus;

  const LabeledData train = corpus.subset(Split::train);
  const LabeledData val = corpus.subset(Split::val);
  state.supporting = gmm_fit_em(train.embeddings, 20, {.rng_seed = 7});

  TrainConfig config;
  config.batch_size = 64;
  config.reg_batch_size = 128;
  config.learning_rate = 1e-3;
  config.max_epochs = 400;
  config.patience = 30;
  config.rng_seed = 11;
  config.n_layers = 5;

  const GeneratorSpec& spec = state.spec;
  PosthocLabeler posthoc = [&spec](const Eigen::VectorXd& e, MultiLabel& y) {
    for (int a = 0; a < spec.schema.num_attributes(); ++a)
      if (spec.schema.attributes[a].kind == AttrKind::continuous)
        y[a] = oracle_value(spec, e, a);
  };

  const auto start = std::chrono::steady_clock::now();
  TrainResult result =
      train_flow(train, val, state.supporting, corpus.schema, config, posthoc);
  state.train_seconds = seconds_since(start);
  state.flow = std::move(result.model);

  // Baseline: per-gender mixtures on the items that still carry labels.
  std::vector<int> labeled;
  for (int i = 0; i < train.size(); ++i)
    if (train.labels[i][0].has_value()) labeled.push_back(i);
  Eigen::MatrixXd data(labeled.size(), 64);
  std::vector<MultiLabel> labels;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    data.row(i) = train.embeddings.row(labeled[i]);
    labels.push_back(train.labels[labeled[i]]);
  }
  state.baseline = conditional_gmm_fit(data, labels, corpus.schema, {"gender"},
                                       10, {.rng_seed = 13});
  return state;
}

// ---------------------------------------------------------------------------
// 3. semi-supervised closed loop on the hard preset
// ---------------------------------------------------------------------------
Check criterion_closed_loop(const ClosedLoop& state) {
  Check check;
  const auto start = std::chrono::steady_clock::now();
  const Corpus& corpus = state.corpus;
  const auto val_idx = corpus.indices(Split::val);

  for (int attr = 0; attr < 2; ++attr) {
    int flow_hits = 0, oracle_hits = 0;
    for (int i : val_idx) {
      const Eigen::VectorXd e = corpus.embeddings.row(i).transpose();
      const int truth = std::get<int>(*corpus.truth[i][attr]);
      Eigen::VectorXd posterior = state.flow.classify_embedding(e, attr);
      int arg = 0;
      posterior.maxCoeff(&arg);
      flow_hits += arg == truth;
      oracle_hits += oracle_class(state.spec, e, attr) == truth;
    }
    const double flow_acc = double(flow_hits) / val_idx.size();
    const double oracle_acc = double(oracle_hits) / val_idx.size();
    const std::string name = corpus.schema.attributes[attr].name;
    check.require(flow_acc >= 0.95 * oracle_acc,
                  name + " accuracy " + fmt(flow_acc) + " < 0.95 * oracle " +
                      fmt(oracle_acc));
    check.note(name + " acc " + fmt(flow_acc, 3) + " (oracle " +
               fmt(oracle_acc, 3) + ")");
  }

  // Conditional generation agreement, flow vs the per-class GMM baseline.
  int flow_agree = 0, baseline_agree = 0;
  const int per_class = 500;
  for (int cls = 0; cls < 2; ++cls) {
    MultiLabel y = empty_label(corpus.schema);
    y[0] = cls;
    const Eigen::MatrixXd gen = state.flow.sample(y, per_class, 401 + cls);
    for (int i = 0; i < per_class; ++i)
      flow_agree += oracle_class(state.spec, gen.row(i).transpose(), 0) == cls;
    const Eigen::MatrixXd gen_baseline =
        conditional_gmm_sample(state.baseline, {cls}, per_class, 501 + cls);
    for (int i = 0; i < per_class; ++i)
      baseline_agree +=
          oracle_class(state.spec, gen_baseline.row(i).transpose(), 0) == cls;
  }
  const double flow_rate = double(flow_agree) / (2 * per_class);
  const double baseline_rate = double(baseline_agree) / (2 * per_class);
  check.require(flow_rate >= 0.90,
                "generation agreement " + fmt(flow_rate) + " < 0.90");
  check.require(baseline_rate < flow_rate,
                "baseline " + fmt(baseline_rate) + " not below flow " +
                    fmt(flow_rate));
  check.note("generation agreement flow " + fmt(flow_rate, 3) + " vs baseline " +
             fmt(baseline_rate, 3));

  const double elapsed = state.train_seconds + seconds_since(start);
  check.require(elapsed < 600.0, "runtime " + fmt(elapsed) + "s exceeds 10 min");
  check.note("runtime " + fmt(elapsed, 3) + "s incl. training");
  return check;
}

// ---------------------------------------------------------------------------
// 4. continuous control sweep
// ---------------------------------------------------------------------------
Check criterion_continuous_control(const ClosedLoop& state) {
  Check check;
  const int n = 500;
  const AttributeSpec& attr = state.corpus.schema.attributes[2];
  Eigen::VectorXd conditioned(n), measured(n);
  for (int i = 0; i < n; ++i) {
    const double target =
        attr.range_low + (attr.range_high - attr.range_low) * i / (n - 1.0);
    MultiLabel y = empty_label(state.corpus.schema);
    y[2] = target;
    const Eigen::MatrixXd s = state.flow.sample(y, 1, 700 + i);
    conditioned[i] = target;
    measured[i] = oracle_value(state.spec, s.row(0).transpose(), 2);
  }
  const double r = pearson_r(conditioned, measured);
  check.require(r >= 0.9, "pearson r=" + fmt(r));
  check.note("pearson r " + fmt(r, 4) + " over " + std::to_string(n) + " sweeps");
  return check;
}

// ---------------------------------------------------------------------------
// 5. editing: delta boost, proximity, no-op fidelity
// ---------------------------------------------------------------------------
Check criterion_editing(const ClosedLoop& state) {
  Check check;
  const Corpus& corpus = state.corpus;
  const double delta = 15.0;

  // 100 low-SNR items from the corpus.
  std::vector<int> low;
  for (int i = 0; i < corpus.size() && low.size() < 100; ++i)
    if (std::get<double>(*corpus.truth[i][2]) < 33.0) low.push_back(static_cast<int>(i));
  check.require(low.size() == 100, "need 100 low-attribute items");

  EditRequest request;
  request.attr_index = 2;
  request.delta = delta;
  EditRequest noop = request;
  noop.delta = 0.0;

  double boost = 0.0, worst_noop = 0.0;
  std::vector<double> move;
  for (int i : low) {
    const Eigen::VectorXd e = corpus.embeddings.row(i).transpose();
    const Eigen::VectorXd edited = state.flow.edit(e, request);
    boost += oracle_value(state.spec, edited, 2) - oracle_value(state.spec, e, 2);
    move.push_back(cos_distance(e, edited));
    worst_noop =
        std::max(worst_noop, (state.flow.edit(e, noop) - e).cwiseAbs().maxCoeff());
  }
  boost /= low.size();
  std::nth_element(move.begin(), move.begin() + move.size() / 2, move.end());
  const double median_move = move[move.size() / 2];
  const double s2s = nn_distance(corpus.embeddings, corpus.embeddings, true);

  check.require(boost >= 0.8 * delta,
                "mean boost " + fmt(boost) + " < " + fmt(0.8 * delta));
  check.require(median_move <= s2s,
                "median cos move " + fmt(median_move) + " > s2s " + fmt(s2s));
  check.require(worst_noop < 1e-8, "no-op edit err " + fmt(worst_noop));
  check.note("boost " + fmt(boost, 3) + " (target 12), median move " +
             fmt(median_move, 3) + " vs s2s " + fmt(s2s, 3) + ", noop " +
             fmt(worst_noop, 2));
  return check;
}

// ---------------------------------------------------------------------------
// 6. unconditional generation distances, flow and GMM baseline
// ---------------------------------------------------------------------------
Check criterion_unconditional(const ClosedLoop& state) {
  Check check;
  const Eigen::MatrixXd& real = state.corpus.embeddings;
  const double s2s = nn_distance(real, real, true);
  const int n = 1000;

  const Eigen::MatrixXd flow_gen =
      state.flow.sample(empty_label(state.corpus.schema), n, 801);
  const Eigen::MatrixXd gmm_gen = gmm_sample(state.supporting, n, 802);

  for (const auto& [name, gen] :
       std::vector<std::pair<std::string, const Eigen::MatrixXd*>>{
           {"flow", &flow_gen}, {"gmm", &gmm_gen}}) {
    const double s2g = nn_distance(real, *gen);
    const double g2g = nn_distance(*gen, *gen, true);
    check.require(std::abs(g2g - s2s) / s2s <= 0.15,
                  name + " |g2g-s2s|/s2s=" + fmt(std::abs(g2g - s2s) / s2s));
    check.require(std::abs(s2g - s2s) / s2s <= 0.15,
                  name + " |s2g-s2s|/s2s=" + fmt(std::abs(s2g - s2s) / s2s));
    check.note(name + ": s2s " + fmt(s2s, 3) + ", s2g " + fmt(s2g, 3) + ", g2g " +
               fmt(g2g, 3));
  }
  return check;
}

// ---------------------------------------------------------------------------
// 7. clique estimator vs exhaustive search
// ---------------------------------------------------------------------------
Check criterion_clique(const ClosedLoop& state) {
  Check check;
  auto adjacency = [](const Eigen::MatrixXd& pts, double thr) {
    const int n = static_cast<int>(pts.rows());
    std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) adj[i][j] = cos_distance(pts.row(i), pts.row(j)) >= thr;
    return adj;
  };

  int exact_hits = 0;
  for (int t = 0; t < 100; ++t) {
    Rng rng(9000 + t);
    const int n = 15;
    Eigen::MatrixXd pts = testutil::random_matrix(n, 3, rng);
    for (int i = 0; i < n; ++i) pts.row(i) /= pts.row(i).norm();
    const double thr = 0.8 + 0.4 * rng.uniform();
    const int greedy = clique_number(pts, thr);
    const int exact = testutil::brute_force_max_clique(adjacency(pts, thr));
    check.require(greedy <= exact, "greedy exceeded exact clique");
    if (greedy == exact) ++exact_hits;
  }
  check.require(exact_hits >= 80,
                "greedy matched exact only " + std::to_string(exact_hits) + "%");
  check.note("greedy = exact in " + std::to_string(exact_hits) + "/100 trials");

  // omega(G) is monotone non-increasing in the threshold: raising it only
  // removes edges. Verified on the exact clique number; the greedy lower
  // bound is not a monotone function of the edge set (removing an edge can
  // redirect its first pick toward a larger clique), so its rare upward
  // jumps are counted and reported rather than asserted away.
  bool exact_monotone = true;
  int greedy_jumps = 0, greedy_steps = 0;
  for (int t = 0; t < 20; ++t) {
    Rng rng(9500 + t);
    const int n = 15;
    Eigen::MatrixXd pts = testutil::random_matrix(n, 3, rng);
    for (int i = 0; i < n; ++i) pts.row(i) /= pts.row(i).norm();
    int prev_exact = testutil::brute_force_max_clique(adjacency(pts, 1e-9));
    int prev_greedy = clique_number(pts, 1e-9);
    for (double thr = 0.02; thr <= 1.99; thr += 0.02) {
      const int cur_exact = testutil::brute_force_max_clique(adjacency(pts, thr));
      const int cur_greedy = clique_number(pts, thr);
      if (cur_exact > prev_exact) exact_monotone = false;
      check.require(cur_greedy <= cur_exact, "greedy exceeded exact in sweep");
      greedy_jumps += cur_greedy > prev_greedy;
      ++greedy_steps;
      prev_exact = cur_exact;
      prev_greedy = cur_greedy;
    }
  }
  check.require(exact_monotone, "exact omega not monotone in threshold");
  check.note("exact omega monotone over " + std::to_string(greedy_steps) +
             " threshold steps; greedy bound jumped on " +
             std::to_string(greedy_jumps));

  // The estimator stays a valid lower bound on the generated embeddings too.
  const Eigen::MatrixXd gen =
      state.flow.sample(empty_label(state.corpus.schema), 60, 901);
  for (double thr : {0.005, 0.01, 0.02, 0.05}) {
    const int greedy = clique_number(gen, thr);
    // n=60 exceeds the exhaustive oracle's reach; check against the corpus
    // of 15-point subsets instead.
    Eigen::MatrixXd sub = gen.topRows(15);
    check.require(clique_number(sub, thr) <=
                      testutil::brute_force_max_clique(adjacency(sub, thr)),
                  "greedy exceeded exact on generated subset");
    check.require(greedy >= 1, "empty clique on nonempty set");
  }
  return check;
}

// ---------------------------------------------------------------------------
// 8. EM monotonicity
// ---------------------------------------------------------------------------
Check criterion_em() {
  Check check;
  double worst_drop = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(1200 + seed);
    const int n = 30 + static_cast<int>(rng.next_u64() % 120);
    const int d = 1 + static_cast<int>(rng.next_u64() % 5);
    const int k = 1 + static_cast<int>(rng.next_u64() % 5);
    const Eigen::MatrixXd data = testutil::random_matrix(n, d, rng, 2.0);
    std::vector<double> trace;
    gmm_fit_em(data, std::min(k, n), {.max_iters = 80, .rng_seed = 31u + seed},
               &trace);
    for (std::size_t i = 1; i < trace.size(); ++i)
      worst_drop = std::max(worst_drop, trace[i - 1] - trace[i]);
  }
  check.require(worst_drop <= 1e-8, "loglik dropped by " + fmt(worst_drop));
  check.note("worst per-iteration drop " + fmt(worst_drop, 2));
  return check;
}

// ---------------------------------------------------------------------------
// 9. CLI determinism
// ---------------------------------------------------------------------------
int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(VOICELENS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Check criterion_determinism() {
  Check check;
  const fs::path root =
      fs::temp_directory_path() / ("vl_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  for (const std::string side : {"x", "y"}) {
    const std::string dir = (root / side).string();
    fs::create_directories(dir);
    bool ok = true;
    ok &= run_cli("synth --out " + dir +
                  "/corpus --d 12 --n 120 --preset hard"
                  " --keep gender=0.4 --seed 33") == 0;
    ok &= run_cli("fit-gmm --corpus " + dir + "/corpus --out " + dir +
                  "/gmm.json --k 4 --seed 5") == 0;
    ok &= run_cli("train --corpus " + dir + "/corpus --supporting " + dir +
                  "/gmm.json --out " + dir +
                  "/flow.json --epochs 3 --patience 4 --batch 32 --reg-batch 16"
                  " --layers 2 --hidden 16 --seed 9 --oracle-posthoc") == 0;
    ok &= run_cli("sample --model " + dir + "/flow.json --out " + dir +
                  "/samples -n 25 --label gender=F,age=_,snr=_ --seed 4") == 0;
    ok &= run_cli("edit --model " + dir + "/flow.json --embeddings " + dir +
                  "/samples.embeddings.bin --attr snr --delta 15 --out " + dir +
                  "/edited.bin --seed 4") == 0;
    ok &= run_cli("classify --model " + dir + "/flow.json --corpus " + dir +
                  "/corpus --attr gender --split val --out " + dir +
                  "/cls.csv --seed 4") == 0;
    ok &= run_cli("eval --corpus " + dir + "/corpus --model " + dir +
                  "/flow.json --distances --accuracy --pearson --clique"
                  " --snr-bins 10 --n-gen 30 --out " +
                  dir + "/report --seed 6") == 0;
    check.require(ok, "pipeline run failed under " + dir);
  }

  int files = 0;
  if (check.pass) {
    for (const auto& entry : fs::recursive_directory_iterator(root / "x")) {
      if (!entry.is_regular_file()) continue;
      ++files;
      const auto rel = fs::relative(entry.path(), root / "x");
      std::string left = slurp(entry.path());
      std::string right = slurp(root / "y" / rel);
      // Manifests embed the run directory; normalize it before comparing.
      std::string::size_type pos;
      const std::string sx = (root / "x").string(), sy = (root / "y").string();
      while ((pos = left.find(sx)) != std::string::npos)
        left.replace(pos, sx.size(), "@");
      while ((pos = right.find(sy)) != std::string::npos)
        right.replace(pos, sy.size(), "@");
      check.require(left == right, "mismatch in " + rel.string());
    }
    check.require(files >= 15, "expected full output tree, saw " +
                                   std::to_string(files) + " files");
    check.note(std::to_string(files) + " files byte-identical across reruns");
  }
  fs::remove_all(root);
  return check;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  int failures = 0;
  auto report = [&](int index, const std::string& name, const Check& check) {
    std::cout << (check.pass ? "[PASS] " : "[FAIL] ") << "criterion " << index
              << ": " << name;
    if (!check.details.str().empty())
      std::cout << " (" << check.details.str() << ")";
    std::cout << std::endl;
    if (!check.pass) ++failures;
  };

  report(1, "flow correctness (round trip, logdet, gradients)",
         criterion_flow_correctness());
  report(2, "base distribution (marginals, Bhattacharjee, classify)",
         criterion_base_distribution());

  const ClosedLoop state = train_closed_loop();
  report(3, "semi-supervised closed loop on the hard preset",
         criterion_closed_loop(state));
  report(4, "continuous control sweep", criterion_continuous_control(state));
  report(5, "attribute editing", criterion_editing(state));
  report(6, "unconditional generation distances", criterion_unconditional(state));
  report(7, "clique estimator", criterion_clique(state));
  report(8, "EM monotonicity", criterion_em());
  report(9, "CLI determinism", criterion_determinism());

  std::cout << (failures == 0 ? "ACCEPTANCE: all criteria passed"
                              : "ACCEPTANCE: " + std::to_string(failures) +
                                    " criteria failed")
            << " (" << fmt(seconds_since(t0), 3) << "s total)" << std::endl;
  return failures == 0 ? 0 : 1;
}
