#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advsep/theory_checks.hpp"

using namespace advsep;

namespace {

TrialBatch batch(std::size_t d, std::size_t m, std::size_t trials, std::uint64_t seed) {
  TrialBatch tb;
  tb.d = d;
  tb.m = m;
  tb.trials = trials;
  tb.base_seed = seed;
  return tb;
}

// explicit-matrix sampler for S = a^T W W^T D a, used as the oracle for the
// bivariate reduction inside mc_independent_moments
std::pair<double, double> explicit_moments(std::size_t d, std::size_t m, std::size_t trials,
                                           std::uint64_t seed) {
  KahanSum sum, sumsq;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(seed + t);
    Matrix W = gaussian_matrix(m, d, 1.0 / static_cast<double>(d), rng);
    Vector a(m), da(m);
    for (std::size_t k = 0; k < m; ++k) {
      a[k] = std::sqrt(1.0 / static_cast<double>(m)) * rng.gaussian();
      da[k] = (rng.next_u64() & 1u) ? a[k] : 0.0;
    }
    const double s = dot(matvec_t(W, a), matvec_t(W, da));
    sum.add(s);
    sumsq.add(s * s);
  }
  const double n = static_cast<double>(trials);
  const double mean = sum.value() / n;
  return {mean, (sumsq.value() - n * mean * mean) / (n - 1.0)};
}

NetworkParams net(std::size_t d, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  return init_network(d, m, rng);
}

Vector conditioned_input(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Vector x = gaussian_vector(d, 1.0, rng);
  scale_in_place(x, std::sqrt(static_cast<double>(d)) / norm(x));
  return x;
}

}  // namespace

TEST_CASE("independent moments agree with explicit matrix sampling", "[theory]") {
  const std::size_t trials = 20000;
  auto [mean_red, var_red] = [&] {
    auto pr = mc_independent_moments(batch(32, 64, trials, 77));
    return std::pair<double, double>{pr.first.empirical, pr.second.empirical};
  }();
  auto [mean_exp, var_exp] = explicit_moments(32, 64, trials, 901);

  REQUIRE(std::abs(mean_red - 0.5) < 0.01);
  REQUIRE(std::abs(mean_exp - 0.5) < 0.01);
  REQUIRE(std::abs(mean_red - mean_exp) < 0.008);
  REQUIRE(std::abs(var_red - var_exp) / var_exp < 0.08);
}

TEST_CASE("independent moments match the derived variance", "[theory]") {
  auto [mean_check, var_check] = mc_independent_moments(batch(256, 1024, 20000, 40));

  REQUIRE(mean_check.pass);
  REQUIRE(mean_check.bound == 0.5);
  REQUIRE(std::abs(mean_check.empirical - 0.5) < 0.01);
  REQUIRE(mean_check.trials == 20000);
  REQUIRE(mean_check.std_error > 0.0);

  const double derived = var_check.aux.at("derived_variance");
  const double target = 5.0 / 4096.0 + 3.0 / 1024.0 + 9.0 / (4.0 * 1024.0 * 256.0);
  REQUIRE(derived == Catch::Approx(target).margin(1e-15));
  REQUIRE(var_check.aux.at("rel_dev_vs_derived") < 0.06);
  // the two-sided target stored in `bound` uses the looser reference formula
  REQUIRE(var_check.bound ==
          Catch::Approx(5.0 / 4096.0 + 1.0 / 256.0 + 2.0 / (1024.0 * 256.0)).margin(1e-15));

  REQUIRE_THROWS_AS(mc_independent_moments(batch(16, 16, 9999, 1)), std::invalid_argument);
}

TEST_CASE("conditioning split is exact", "[theory]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    NetworkParams p = net(64, 256, seed);
    Vector x = conditioned_input(64, 1000 + seed);
    REQUIRE(conditioning_split_residual(p, x) < 1e-10);
  }
  NetworkParams small = net(4, 8, 9);
  REQUIRE(conditioning_split_residual(small, conditioned_input(4, 10)) < 1e-12);

  Vector bad(64);
  bad[0] = 1.0;  // norm 1, not sqrt(64)
  REQUIRE_THROWS_AS(conditioning_split_residual(net(64, 16, 3), bad), std::invalid_argument);
}

TEST_CASE("h norm tail bound holds", "[theory]") {
  CheckResult c = check_h_norm_tail(batch(16, 64, 2000, 50));
  REQUIRE(c.pass);
  REQUIRE(c.empirical >= 0.999);
  REQUIRE(c.bound == Catch::Approx(1.0 - std::exp(-64.0 / 7.0)).margin(1e-15));
  REQUIRE(c.trials == 2000);

  CheckResult again = check_h_norm_tail(batch(16, 64, 2000, 50));
  REQUIRE(again.empirical == c.empirical);
  REQUIRE(again.std_error == c.std_error);
}

TEST_CASE("inner product tails hold and require c2", "[theory]") {
  TrialBatch tb = batch(512, 512, 1000, 60);
  REQUIRE_THROWS_AS(check_inner_product_tail(tb), std::invalid_argument);
  tb.constants["c2"] = 0.0;
  REQUIRE_THROWS_AS(check_inner_product_tail(tb), std::invalid_argument);

  tb.constants["c2"] = 1.0 / 64.0;
  auto [plain, masked] = check_inner_product_tail(tb);
  const double expected_bound =
      1.0 - std::exp(-512.0 / 7.0) - 4.0 * std::exp(-512.0 / (64.0 * 4.0));
  REQUIRE(plain.bound == Catch::Approx(expected_bound).margin(1e-12));
  REQUIRE(masked.bound == plain.bound);
  REQUIRE(plain.pass);
  REQUIRE(masked.pass);
  // the true frequencies sit far above the union bound
  REQUIRE(plain.empirical > 0.98);
  REQUIRE(masked.empirical > 0.99);
}

TEST_CASE("margin threshold frequency", "[theory][heavy]") {
  CheckResult c = check_margin_threshold(batch(512, 2048, 300, 70));
  REQUIRE(c.aux.at("in_regime") == 1.0);
  REQUIRE(c.pass);
  REQUIRE(c.empirical >= 0.99);
  REQUIRE(c.aux.at("threshold") == Catch::Approx(1.0 / 32.0));

  CheckResult toy = check_margin_threshold(batch(8, 8, 200, 71));
  REQUIRE(toy.aux.at("in_regime") == 0.0);
  REQUIRE(toy.pass);  // report-only outside the regime
  REQUIRE(toy.empirical < 1.0);
  REQUIRE(toy.empirical > 0.0);
}

TEST_CASE("identity mask variant exceeds the threshold almost surely", "[theory]") {
  // with D = I the statistic is ||W^T a||^2; conditional on a it is
  // ||a||^2/d times a chi-square with d degrees of freedom
  const std::size_t d = 256, m = 1024, trials = 2000;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(80 + t);
    double a2 = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double ak = rng.gaussian();
      a2 += ak * ak / static_cast<double>(m);
    }
    double chi = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = rng.gaussian();
      chi += g * g;
    }
    if (a2 * chi / static_cast<double>(d) > 1.0 / 32.0) ++hits;
  }
  REQUIRE(static_cast<double>(hits) / trials >= 0.999);
}

TEST_CASE("cross term obeys Bernstein but misses the fixed margin", "[theory]") {
  CheckResult c = check_subexp_sum_tail(batch(256, 1024, 400, 90));
  REQUIRE(c.aux.at("bernstein_ok") == 1.0);
  REQUIRE(c.empirical <= c.bound + 3.0 * c.std_error + 1e-12);
  REQUIRE(c.bound > 0.3);
  REQUIRE(c.bound < 0.8);
  // the exceedance threshold defaults to about two standard deviations
  REQUIRE(c.empirical > 0.005);
  REQUIRE(c.empirical < 0.15);
  // centered statistic
  REQUIRE(std::abs(c.aux.at("cross_mean")) < 4.0 * c.aux.at("cross_mean_se"));
  // the analysis-native random margin |a_D|^2/4 is comfortably satisfied...
  REQUIRE(c.aux.at("random_margin_event_freq") >= 0.99);
  // ...while the fixed 1/32 margin sits near one standard deviation and is not
  REQUIRE(c.aux.at("margin_event_freq") > 0.5);
  REQUIRE(c.aux.at("margin_event_freq") < 0.9);
  REQUIRE(c.aux.at("margin_ok") == 0.0);
  REQUIRE_FALSE(c.pass);
}

TEST_CASE("doubling the exceedance level shrinks the Bernstein bound", "[theory]") {
  TrialBatch tb = batch(128, 256, 50, 95);
  const double base_eps = 1.0 / (128.0 * std::sqrt(128.0));
  tb.constants["bernstein_eps"] = base_eps;
  const double b1 = check_subexp_sum_tail(tb).bound;
  tb.constants["bernstein_eps"] = 2.0 * base_eps;
  const double b2 = check_subexp_sum_tail(tb).bound;
  REQUIRE(b2 < b1);
}

TEST_CASE("ntk expansion reproduces the direct product", "[theory]") {
  NetworkParams p0 = net(32, 128, 7);
  Vector x = conditioned_input(32, 8);

  SECTION("zero perturbation") {
    NtkExpansion e = ntk_expansion_terms(p0, p0, x);
    REQUIRE(e.sum == Catch::Approx(e.direct).margin(1e-12));
    REQUIRE(e.flips == 0);
    REQUIRE(e.dw_spectral == 0.0);
    REQUIRE(e.da_norm == 0.0);
    for (std::size_t i = 1; i < 8; ++i) REQUIRE(e.terms[i] == 0.0);
    const double lead = dot(matvec_t(p0.W, p0.a), input_gradient(p0, x));
    REQUIRE(e.leading() == Catch::Approx(lead).margin(1e-12));
  }

  SECTION("generic perturbation") {
    Rng rng(9);
    NetworkParams p1 = p0;
    for (double& w : p1.W.e) w += 0.05 * rng.gaussian();
    for (double& ak : p1.a.e) ak += 0.05 * rng.gaussian();
    NtkExpansion e = ntk_expansion_terms(p0, p1, x);
    REQUIRE(std::abs(e.sum - e.direct) <= 1e-9 * (1.0 + std::abs(e.direct)));
    REQUIRE(e.da_norm == Catch::Approx([&] {
              double s = 0.0;
              for (std::size_t k = 0; k < p0.m; ++k) {
                const double dv = p1.a[k] - p0.a[k];
                s += dv * dv;
              }
              return std::sqrt(s);
            }()).epsilon(1e-12));
    ActivationPattern d0 = activation_pattern(p0, x);
    ActivationPattern d1 = activation_pattern(p1, x);
    std::size_t flips = 0;
    for (std::size_t k = 0; k < p0.m; ++k)
      if (d0.mask[k] != d1.mask[k]) ++flips;
    REQUIRE(e.flips == flips);
    REQUIRE(flips > 0);
  }

  SECTION("readout-only perturbation isolates one term") {
    Rng rng(11);
    NetworkParams p1 = p0;
    for (double& ak : p1.a.e) ak += 0.1 * rng.gaussian();
    NtkExpansion e = ntk_expansion_terms(p0, p1, x);
    REQUIRE(e.flips == 0);
    REQUIRE(e.dw_spectral == 0.0);
    for (std::size_t i : {1, 2, 4, 5, 6, 7}) REQUIRE(e.terms[i] == 0.0);
    REQUIRE(e.direct - e.leading() == Catch::Approx(e.da_term()).epsilon(1e-9));
  }

  SECTION("rank-one weight perturbation has known spectral norm") {
    Rng rng(13);
    Vector u = gaussian_vector(p0.m, 1.0, rng);
    Vector v = gaussian_vector(p0.d, 1.0, rng);
    NetworkParams p1 = p0;
    for (std::size_t k = 0; k < p0.m; ++k)
      for (std::size_t j = 0; j < p0.d; ++j) p1.W(k, j) += 0.001 * u[k] * v[j];
    NtkExpansion e = ntk_expansion_terms(p0, p1, x);
    REQUIRE(e.dw_spectral == Catch::Approx(0.001 * norm(u) * norm(v)).epsilon(1e-7));
  }

  NetworkParams other = net(16, 128, 14);
  REQUIRE_THROWS_AS(ntk_expansion_terms(p0, other, x), std::invalid_argument);
}

TEST_CASE("sparse vector bound", "[theory]") {
  // m = 2048: m / ln(m)^2 = 35.2, so the admissible sparsity range is 1..35
  REQUIRE_THROWS_AS(check_sparse_vector_bound(batch(128, 2048, 10, 1), 36), std::invalid_argument);
  REQUIRE_THROWS_AS(check_sparse_vector_bound(batch(128, 2048, 10, 1), 0), std::invalid_argument);

  CheckResult c = check_sparse_vector_bound(batch(128, 2048, 300, 110), 16);
  REQUIRE(c.aux.at("in_regime") == 1.0);
  REQUIRE(c.pass);
  REQUIRE(c.empirical >= 0.99);
  REQUIRE(c.aux.at("sparsity") == 16.0);

  CheckResult toy = check_sparse_vector_bound(batch(16, 256, 100, 111), 4);
  REQUIRE(toy.aux.at("in_regime") == 0.0);
  REQUIRE(toy.pass);
}

TEST_CASE("sparse statistic is linear in the probe vector", "[theory]") {
  NetworkParams p = net(32, 256, 200);
  Rng rng(201);
  Vector u(p.m);
  for (std::size_t k = 0; k < 5; ++k) u[k] = rng.gaussian();
  Vector u2 = u;
  for (double& v : u2.e) v *= 2.0;
  const Vector wta = matvec_t(p.W, p.a);
  const double s1 = dot(wta, matvec_t(p.W, u));
  const double s2 = dot(wta, matvec_t(p.W, u2));
  REQUIRE(s2 == Catch::Approx(2.0 * s1).epsilon(1e-12));
  Vector zero(p.m);
  REQUIRE(dot(wta, matvec_t(p.W, zero)) == 0.0);
}

TEST_CASE("standard error shrinks like the square root of trials", "[theory]") {
  auto se_at = [](std::size_t trials) {
    return mc_independent_moments(batch(16, 32, trials, 300)).first.std_error;
  };
  const double ratio = se_at(10000) / se_at(100000);
  REQUIRE(ratio > std::sqrt(10.0) * 0.8);
  REQUIRE(ratio < std::sqrt(10.0) * 1.2);
}

TEST_CASE("check results serialize to json and csv", "[theory]") {
  CheckResult c = check_h_norm_tail(batch(8, 32, 500, 400));
  nlohmann::json j = check_result_to_json(c);
  REQUIRE(j["name"] == "h_norm_tail");
  REQUIRE(j["trials"] == 500);
  REQUIRE(j["pass"] == c.pass);
  REQUIRE(j["empirical"].get<double>() == c.empirical);
  REQUIRE(j["bound"].get<double>() == c.bound);
  REQUIRE(j["aux"].is_object());

  CheckResult c2 = check_margin_threshold(batch(8, 8, 50, 401));
  const std::string path = (std::filesystem::temp_directory_path() / "checks.csv").string();
  write_check_csv({c, c2}, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == "name,empirical,bound,pass,trials,std_error");
  REQUIRE(std::getline(in, line));
  REQUIRE(line.rfind("h_norm_tail,", 0) == 0);
  {
    std::istringstream row(line.substr(line.find(',') + 1));
    std::string field;
    std::getline(row, field, ',');
    REQUIRE(std::stod(field) == c.empirical);
    std::getline(row, field, ',');
    REQUIRE(std::stod(field) == c.bound);
  }
  REQUIRE(std::getline(in, line));
  REQUIRE(line.rfind("margin_threshold,", 0) == 0);
  REQUIRE_FALSE(std::getline(in, line));
  std::filesystem::remove(path);
}

TEST_CASE("variance estimate shrinks with the dimensions", "[theory]") {
  auto [m_big, v_big] = mc_independent_moments(batch(1024, 4096, 10000, 310));
  auto [m_small, v_small] = mc_independent_moments(batch(64, 128, 10000, 311));
  (void)m_big;
  (void)m_small;
  REQUIRE(v_big.empirical < v_small.empirical);
  REQUIRE(std::abs(v_big.empirical - v_big.aux.at("derived_variance")) <=
          2.0 * v_big.std_error);
  REQUIRE(std::abs(v_small.empirical - v_small.aux.at("derived_variance")) <=
          2.0 * v_small.std_error);
}

TEST_CASE("masking keeps the inner product event at least as frequent", "[theory]") {
  TrialBatch tb = batch(128, 256, 5000, 320);
  tb.constants["c2"] = 1.0 / 16.0;
  auto [plain, masked] = check_inner_product_tail(tb);
  const double slack = 3.0 * (plain.std_error + masked.std_error) + 1e-12;
  REQUIRE(masked.empirical >= plain.empirical - slack);
}

TEST_CASE("conditioning split holds for x aligned with a row of W", "[theory]") {
  Rng rng(330);
  NetworkParams p = init_network(64, 32, rng);
  Vector x(p.d);
  for (std::size_t j = 0; j < p.d; ++j) x[j] = p.W.e[j];  // first row
  scale_in_place(x, std::sqrt(static_cast<double>(p.d)) / norm(x));
  REQUIRE(conditioning_split_residual(p, x) < 1e-12);
}
