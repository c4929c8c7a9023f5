#include "voicelens/distributions.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "voicelens/rng.hpp"

using namespace voicelens;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd vec1(double x) {
  Eigen::VectorXd v(1);
  v << x;
  return v;
}
}  // namespace

TEST_CASE("logsumexp basics") {
  CHECK(logsumexp(std::vector<double>{5.0}) == doctest::Approx(5.0));
  CHECK(logsumexp(std::vector<double>{0.0, 0.0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(logsumexp(std::vector<double>{1000.0, 1000.0}) ==
        doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
  CHECK(logsumexp(std::vector<double>{-kInf, -kInf}) == -kInf);
  CHECK(std::isfinite(logsumexp(std::vector<double>{-kInf, 0.0})));
  CHECK_THROWS_AS(logsumexp(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("std_normal_cdf against quadrature") {
  CHECK(std_normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-14));
  // Independent oracle: integrate the pdf.
  const double phi_196 = 0.5 + testutil::integrate(testutil::normal_pdf, 0.0, 1.96);
  CHECK(std::abs(std_normal_cdf(1.96) - phi_196) < 1e-12);
  CHECK(std_normal_cdf(1.96) == doctest::Approx(0.9750021).epsilon(1e-6));
  for (double x : {0.1, 0.7, 1.5, 3.0, 6.5, 9.0}) {
    CHECK(std::abs(std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))) < 1e-12);
    const double oracle = 0.5 + testutil::integrate(testutil::normal_pdf, 0.0, x);
    CHECK(std::abs(std_normal_cdf(x) - oracle) < 1e-12);
  }
}

TEST_CASE("log_std_normal_cdf tail accuracy") {
  // Oracle via the exact identity Phi(x) = phi(x) * int_0^inf exp(x t - t^2/2) dt
  // for x < 0, with the integrand of order one so quadrature is well scaled.
  // Covers both sides of the internal branch switch.
  for (double x : {-8.0, -9.5, -10.0, -10.5, -12.0, -20.0, -35.0}) {
    const double tail = testutil::integrate(
        [&](double t) { return std::exp(x * t - 0.5 * t * t); }, 0.0, 60.0 / -x,
        1e-14);
    const double ref = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI) + std::log(tail);
    CHECK(log_std_normal_cdf(x) == doctest::Approx(ref).epsilon(1e-10));
  }
  // Far tail stays finite and monotone.
  double prev = log_std_normal_cdf(-300.0);
  for (double x = -299.0; x <= -250.0; x += 1.0) {
    const double cur = log_std_normal_cdf(x);
    CHECK(std::isfinite(cur));
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("gaussian_iso_logpdf examples") {
  CHECK(gaussian_iso_logpdf(vec1(0.0), vec1(0.0), 1.0) ==
        doctest::Approx(-0.918939).epsilon(1e-6));
  Eigen::VectorXd z2 = Eigen::VectorXd::Zero(2);
  CHECK(gaussian_iso_logpdf(z2, z2, 1.0) ==
        doctest::Approx(-1.837877).epsilon(1e-6));
  // Direct formula at extended precision: -0.5*log(8*pi) - 1/8.
  const double expected = -0.5 * std::log(8.0 * M_PI) - 0.125;
  CHECK(gaussian_iso_logpdf(vec1(1.0), vec1(0.0), 4.0) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(gaussian_iso_logpdf(vec1(1.0), vec1(0.0), 4.0) ==
        doctest::Approx(-1.737086).epsilon(1e-6));
  CHECK_THROWS_AS(gaussian_iso_logpdf(vec1(0.0), z2, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_iso_logpdf(vec1(0.0), vec1(0.0), 0.0),
                  std::invalid_argument);
}

TEST_CASE("gmm_logpdf matches brute force") {
  SUBCASE("degenerate K=1") {
    GmmModel m;
    m.weights = Eigen::VectorXd::Ones(1);
    m.means = Eigen::MatrixXd::Constant(1, 3, 0.5);
    m.variances = Eigen::VectorXd::Constant(1, 2.0);
    Eigen::VectorXd x(3);
    x << 1.0, -0.5, 0.25;
    CHECK(gmm_logpdf(x, m) ==
          doctest::Approx(gaussian_iso_logpdf(x, m.means.row(0), 2.0))
              .epsilon(1e-15));
  }

  SUBCASE("two components, frozen value") {
    GmmModel m;
    m.weights = Eigen::VectorXd::Constant(2, 0.5);
    m.means.resize(2, 1);
    m.means << 0.0, 6.0;
    m.variances = Eigen::VectorXd::Ones(2);
    // Brute-force oracle: log of the summed component densities.
    const double oracle =
        std::log(0.5 * testutil::normal_pdf(0.0) + 0.5 * testutil::normal_pdf(6.0));
    CHECK(gmm_logpdf(vec1(0.0), m) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(gmm_logpdf(vec1(0.0), m) == doctest::Approx(-1.612086).epsilon(1e-6));
  }

  SUBCASE("random instances, 1-4 dims") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      const int d = 1 + static_cast<int>(rng.next_u64() % 4);
      const int k = 1 + static_cast<int>(rng.next_u64() % 4);
      GmmModel m;
      m.weights = Eigen::VectorXd::Zero(k);
      for (int i = 0; i < k; ++i) m.weights[i] = rng.uniform_pos();
      m.weights /= m.weights.sum();
      m.means = testutil::random_matrix(k, d, rng, 3.0);
      m.variances = Eigen::VectorXd::Zero(k);
      for (int i = 0; i < k; ++i) m.variances[i] = 0.1 + rng.uniform();
      const Eigen::VectorXd x = testutil::random_matrix(d, 1, rng, 3.0);

      double sum = 0.0;
      double best = -kInf;
      for (int i = 0; i < k; ++i) {
        const double comp =
            std::log(m.weights[i]) +
            gaussian_iso_logpdf(x, m.means.row(i), m.variances[i]);
        sum += std::exp(comp);
        best = std::max(best, comp);
      }
      CHECK(gmm_logpdf(x, m) == doctest::Approx(std::log(sum)).epsilon(1e-10));
      // Mixture lower bound.
      CHECK(gmm_logpdf(x, m) >= best - 1e-12);
    }
  }
}

TEST_CASE("gmm_sample determinism and moments") {
  GmmModel m;
  m.weights = Eigen::VectorXd::Ones(1);
  m.means = Eigen::MatrixXd::Constant(1, 2, 3.0);
  m.variances = Eigen::VectorXd::Constant(1, 1e-6);
  const Eigen::MatrixXd a = gmm_sample(m, 3, 42);
  const Eigen::MatrixXd b = gmm_sample(m, 3, 42);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.array() - 3.0).abs().maxCoeff() < 0.01);

  GmmModel std1;
  std1.weights = Eigen::VectorXd::Ones(1);
  std1.means = Eigen::MatrixXd::Zero(1, 1);
  std1.variances = Eigen::VectorXd::Ones(1);
  const Eigen::MatrixXd s = gmm_sample(std1, 10000, 11);
  CHECK(std::abs(s.col(0).mean()) < 0.05);
}

TEST_CASE("gmm_fit_em") {
  SUBCASE("K=1 closed form") {
    Rng rng(3);
    const Eigen::MatrixXd data = testutil::random_matrix(200, 3, rng, 2.0);
    const GmmModel m = gmm_fit_em(data, 1);
    const Eigen::RowVectorXd mean = data.colwise().mean();
    CHECK((m.means.row(0) - mean).norm() < 1e-9);
    const double var =
        (data.rowwise() - mean).squaredNorm() / (data.rows() * data.cols());
    CHECK(m.variances[0] == doctest::Approx(var).epsilon(1e-9));
  }

  SUBCASE("two clusters at +-10 in 2-D") {
    Rng rng(5);
    Eigen::MatrixXd data(400, 2);
    for (int i = 0; i < 400; ++i) {
      const double center = i < 200 ? 10.0 : -10.0;
      data(i, 0) = center + rng.normal();
      data(i, 1) = center + rng.normal();
    }
    const GmmModel m = gmm_fit_em(data, 2, {.rng_seed = 9});
    Eigen::Vector2d c0(10.0, 10.0), c1(-10.0, -10.0);
    const double err0 = std::min((m.means.row(0).transpose() - c0).norm(),
                                 (m.means.row(0).transpose() - c1).norm());
    const double err1 = std::min((m.means.row(1).transpose() - c0).norm(),
                                 (m.means.row(1).transpose() - c1).norm());
    CHECK(err0 < 0.5);
    CHECK(err1 < 0.5);
    // Both centers actually found.
    CHECK((m.means.row(0) - m.means.row(1)).norm() > 10.0);
  }

  SUBCASE("monotone log-likelihood on 50 seeded datasets") {
    for (int seed = 0; seed < 50; ++seed) {
      Rng rng(1000 + seed);
      const int n = 30 + static_cast<int>(rng.next_u64() % 100);
      const int d = 1 + static_cast<int>(rng.next_u64() % 4);
      const int k = 1 + static_cast<int>(rng.next_u64() % 4);
      Eigen::MatrixXd data = testutil::random_matrix(n, d, rng, 2.0);
      std::vector<double> trace;
      gmm_fit_em(data, std::min(k, n), {.max_iters = 60, .rng_seed = 77u + seed},
                 &trace);
      REQUIRE(!trace.empty());
      for (std::size_t i = 1; i < trace.size(); ++i)
        CHECK(trace[i] >= trace[i - 1] - 1e-8);
    }
  }

  SUBCASE("degenerate duplicate data hits the variance floor") {
    Eigen::MatrixXd data = Eigen::MatrixXd::Constant(20, 2, 1.5);
    const GmmModel m = gmm_fit_em(data, 2, {.var_floor = 1e-6});
    CHECK(m.variances.minCoeff() >= 1e-6);
  }

  SUBCASE("n < K errors") {
    Eigen::MatrixXd data = Eigen::MatrixXd::Zero(3, 2);
    CHECK_THROWS_AS(gmm_fit_em(data, 4), std::invalid_argument);
  }
}

TEST_CASE("bhattacharjee_logpdf") {
  SUBCASE("frozen values against quadrature") {
    // Oracle: integrate phi(z - y) / (b - a) over y in [a, b].
    auto oracle = [](double z, double a, double b) {
      return std::log(testutil::integrate(
                 [&](double y) { return testutil::normal_pdf(z - y); }, a, b) /
             (b - a));
    };
    CHECK(bhattacharjee_logpdf(40.0, 25.0, 55.0) ==
          doctest::Approx(oracle(40.0, 25.0, 55.0)).epsilon(1e-10));
    CHECK(bhattacharjee_logpdf(40.0, 25.0, 55.0) ==
          doctest::Approx(-3.401197).epsilon(1e-6));
    CHECK(bhattacharjee_logpdf(25.0, 25.0, 55.0) ==
          doctest::Approx(oracle(25.0, 25.0, 55.0)).epsilon(1e-10));
    CHECK(bhattacharjee_logpdf(25.0, 25.0, 55.0) ==
          doctest::Approx(-4.094345).epsilon(1e-6));
  }

  SUBCASE("reflection symmetry is exact") {
    for (double t : {-3.0, 0.0, 1.0, 7.5, 14.9, 22.0}) {
      const double left = bhattacharjee_logpdf(25.0 + t, 25.0, 55.0);
      const double right = bhattacharjee_logpdf(55.0 - t, 25.0, 55.0);
      CHECK(std::abs(left - right) < 1e-12);
    }
  }

  SUBCASE("integrates to one") {
    const double mass = testutil::integrate(
        [](double z) { return std::exp(bhattacharjee_logpdf(z, 25.0, 55.0)); },
        25.0 - 12.0, 55.0 + 12.0, 1e-10);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("far-tail agreement with the asymptotic form") {
    // For z >> b the pdf approaches phi(z - b) / ((b - a) * (z - b)) scale;
    // compare against the direct CDF-difference form evaluated in logs.
    for (double z : {60.0, 80.0, 120.0, 300.0}) {
      const double direct =
          log_std_normal_cdf(55.0 - z) +
          std::log1p(-std::exp(log_std_normal_cdf(25.0 - z) -
                               log_std_normal_cdf(55.0 - z))) -
          std::log(30.0);
      CHECK(bhattacharjee_logpdf(z, 25.0, 55.0) ==
            doctest::Approx(direct).epsilon(1e-9));
      CHECK(std::isfinite(bhattacharjee_logpdf(z, 25.0, 55.0)));
      CHECK(std::isfinite(bhattacharjee_logpdf(-z + 80.0, 25.0, 55.0)));
    }
  }

  SUBCASE("gradient matches finite differences") {
    for (double z : {10.0, 25.0, 33.0, 40.0, 57.0, 90.0}) {
      const double fd = (bhattacharjee_logpdf(z + 1e-6, 25.0, 55.0) -
                         bhattacharjee_logpdf(z - 1e-6, 25.0, 55.0)) /
                        2e-6;
      CHECK(bhattacharjee_dlogpdf_dz(z, 25.0, 55.0) ==
            doctest::Approx(fd).epsilon(1e-5));
    }
  }

  SUBCASE("a >= b errors") {
    CHECK_THROWS_AS(bhattacharjee_logpdf(0.0, 2.0, 2.0), std::invalid_argument);
  }
}

TEST_CASE("gmm json round trip") {
  Rng rng(21);
  GmmModel m;
  m.weights = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  m.means = testutil::random_matrix(3, 4, rng);
  m.variances = Eigen::VectorXd::Constant(3, 0.7);
  const GmmModel back = gmm_from_json(gmm_to_json(m));
  CHECK((back.means - m.means).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.weights - m.weights).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd probe = testutil::random_matrix(4, 1, rng);
  CHECK(gmm_logpdf(probe, back) == gmm_logpdf(probe, m));
}
