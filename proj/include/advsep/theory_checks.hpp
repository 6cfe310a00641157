#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsep/model.hpp"
#include "advsep/numerics.hpp"

namespace advsep {

struct TrialBatch {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t trials = 0;
  std::uint64_t base_seed = 0;
  std::map<std::string, double> constants;

  double constant(const std::string& name, double fallback) const {
    auto it = constants.find(name);
    return it == constants.end() ? fallback : it->second;
  }

  void validate() const {
    if (d == 0 || m == 0) throw std::invalid_argument("TrialBatch: zero dimension");
    if (trials == 0) throw std::invalid_argument("TrialBatch: trials must be >= 1");
  }
};

struct CheckResult {
  std::string name;
  double empirical = 0.0;
  double bound = 0.0;  // analytic bound or two-sided target
  bool pass = false;
  std::size_t trials = 0;
  double std_error = 0.0;
  std::map<std::string, double> aux;  // secondary diagnostics, non-gating unless stated
};

inline nlohmann::json check_result_to_json(const CheckResult& c) {
  return nlohmann::json{{"name", c.name},     {"empirical", c.empirical}, {"bound", c.bound},
                        {"pass", c.pass},     {"trials", c.trials},       {"std_error", c.std_error},
                        {"aux", c.aux}};
}

inline void write_check_csv(const std::vector<CheckResult>& checks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_check_csv: cannot open " + path);
  out << "name,empirical,bound,pass,trials,std_error\n";
  char buf[64];
  for (const CheckResult& c : checks) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", c.empirical, c.bound);
    out << c.name << "," << buf << "," << (c.pass ? 1 : 0) << "," << c.trials << ",";
    std::snprintf(buf, sizeof buf, "%.17g", c.std_error);
    out << buf << "\n";
  }
}

namespace check_detail {

inline double binom_se(double p, std::size_t n) {
  if (p < 0.0) p = 0.0;
  if (p > 1.0) p = 1.0;
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

}  // namespace check_detail

// Moments of S = a^T W W^T D a with D ~ Bernoulli(1/2)^m independent of (W, a).
// Conditional on (a, D) the pairs ((W^T a)_l, (W^T D a)_l) over the d columns
// are i.i.d. bivariate normal with Var = |a|^2/d, |a_D|^2/d and Cov = |a_D|^2/d,
// so S is sampled exactly from 2d correlated gaussians instead of an m x d
// matrix. Returns the mean check (target 1/2) and the variance check (target
// 5/(4m) + 1/d + 2/(md)).
inline std::pair<CheckResult, CheckResult> mc_independent_moments(const TrialBatch& tb) {
  tb.validate();
  if (tb.trials < 10000)
    throw std::invalid_argument("mc_independent_moments: variance check needs trials >= 1e4");
  const double dd = static_cast<double>(tb.d);
  const double dm = static_cast<double>(tb.m);
  KahanSum sum, sumsq, sumcube, sumquart;
  const double inv_m = 1.0 / dm;
  for (std::size_t t = 0; t < tb.trials; ++t) {
    Rng rng(tb.base_seed + t);
    double A = 0.0, B = 0.0;
    for (std::size_t k = 0; k < tb.m; ++k) {
      const double ak = std::sqrt(inv_m) * rng.gaussian();
      A += ak * ak;
      if (rng.next_u64() & 1u) B += ak * ak;
    }
    double S = 0.0;
    if (A > 0.0) {
      const double su = std::sqrt(A / dd);
      const double cv = B / std::sqrt(dd * A);
      const double rem = std::sqrt(std::max(0.0, B * (A - B) / (dd * A)));
      for (std::size_t l = 0; l < tb.d; ++l) {
        const double x1 = rng.gaussian();
        const double x2 = rng.gaussian();
        S += (su * x1) * (cv * x1 + rem * x2);
      }
    }
    sum.add(S);
    sumsq.add(S * S);
    sumcube.add(S * S * S);
    sumquart.add(S * S * S * S);
  }
  const double n = static_cast<double>(tb.trials);
  const double mean = sum.value() / n;
  const double var = (sumsq.value() - n * mean * mean) / (n - 1.0);
  const double raw2 = sumsq.value() / n;
  const double raw3 = sumcube.value() / n;
  const double raw4 = sumquart.value() / n;
  const double mu4 = raw4 - 4.0 * mean * raw3 + 6.0 * mean * mean * raw2 -
                     3.0 * mean * mean * mean * mean;

  CheckResult mean_check;
  mean_check.name = "independent_moments_mean";
  mean_check.empirical = mean;
  mean_check.bound = 0.5;
  mean_check.trials = tb.trials;
  mean_check.std_error = std::sqrt(var / n);
  const double mean_tol = tb.constant("mean_tol", 0.01);
  mean_check.pass = std::abs(mean - 0.5) < mean_tol;
  mean_check.aux["abs_dev"] = std::abs(mean - 0.5);
  mean_check.aux["tol"] = mean_tol;

  CheckResult var_check;
  var_check.name = "independent_moments_variance";
  var_check.empirical = var;
  var_check.bound = 5.0 / (4.0 * dm) + 1.0 / dd + 2.0 / (dm * dd);
  var_check.trials = tb.trials;
  // moment-based standard error of the sample variance, no normality assumed
  var_check.std_error =
      std::sqrt(std::max(0.0, mu4 - var * var * (n - 3.0) / (n - 1.0)) / n);
  const double rel_tol = tb.constant("var_rel_tol", 0.15);
  var_check.pass = std::abs(var - var_check.bound) <= rel_tol * var_check.bound;
  var_check.aux["rel_dev"] = std::abs(var - var_check.bound) / var_check.bound;
  var_check.aux["rel_tol"] = rel_tol;
  // exact-derivation reference value, reported for diagnosis only
  var_check.aux["derived_variance"] = 5.0 / (4.0 * dm) + 3.0 / (4.0 * dd) + 9.0 / (4.0 * dm * dd);
  var_check.aux["rel_dev_vs_derived"] =
      std::abs(var - var_check.aux["derived_variance"]) / var_check.aux["derived_variance"];
  return {mean_check, var_check};
}

// Exact algebraic split a^T W W^T D_x a =
//   (1/d) (a^T W x)(x^T W^T D_x a) + a^T (W P_x^perp)(W P_x^perp)^T D_x a,
// with P_x = x x^T / d. Returns the absolute residual between the two sides.
inline double conditioning_split_residual(const NetworkParams& p, const Vector& x) {
  check_input_dim(p, x, "conditioning_split_residual");
  const double dd = static_cast<double>(p.d);
  const double xn = norm(x);
  if (std::abs(xn - std::sqrt(dd)) > 1e-9 * std::sqrt(dd))
    throw std::invalid_argument("conditioning_split_residual: ||x|| must equal sqrt(d)");
  Vector wta = matvec_t(p.W, p.a);
  Vector wda = input_gradient(p, x);  // W^T D_x a
  const double lhs = dot(wta, wda);
  const double on_term = dot(wta, x) * dot(x, wda) / dd;
  Vector pa = wta, pb = wda;
  const double ca = dot(wta, x) / dd;
  const double cb = dot(wda, x) / dd;
  for (std::size_t j = 0; j < p.d; ++j) {
    pa[j] -= ca * x[j];
    pb[j] -= cb * x[j];
  }
  const double off_term = dot(pa, pb);
  return std::abs(lhs - (on_term + off_term));
}

// P{ ||h||^2 < 2m } with h = W x and ||x|| = sqrt(d); h then has i.i.d. N(0,1)
// entries, so it is drawn directly. Lower bound 1 - e^{-m/7}.
inline CheckResult check_h_norm_tail(const TrialBatch& tb) {
  tb.validate();
  std::size_t hits = 0;
  for (std::size_t t = 0; t < tb.trials; ++t) {
    Rng rng(tb.base_seed + t);
    double s = 0.0;
    for (std::size_t k = 0; k < tb.m; ++k) {
      const double g = rng.gaussian();
      s += g * g;
    }
    if (s < 2.0 * static_cast<double>(tb.m)) ++hits;
  }
  CheckResult c;
  c.name = "h_norm_tail";
  c.trials = tb.trials;
  c.empirical = static_cast<double>(hits) / static_cast<double>(tb.trials);
  c.bound = 1.0 - std::exp(-static_cast<double>(tb.m) / 7.0);
  c.std_error = check_detail::binom_se(c.empirical, tb.trials);
  c.pass = c.empirical >= c.bound - 3.0 * check_detail::binom_se(c.bound, tb.trials);
  return c;
}

// P{ |a^T h| < sqrt(c2 d) } and P{ |a^T D_x h| < sqrt(c2 d) } with h = W x as
// above and D_x = diag(h > 0); both are functions of (a, h) only. Lower bound
// 1 - e^{-m/7} - 4 e^{-c2 d / 4}.
inline std::pair<CheckResult, CheckResult> check_inner_product_tail(const TrialBatch& tb) {
  tb.validate();
  auto it = tb.constants.find("c2");
  if (it == tb.constants.end())
    throw std::invalid_argument("check_inner_product_tail: constant c2 required");
  const double c2 = it->second;
  if (!(c2 > 0.0)) throw std::invalid_argument("check_inner_product_tail: c2 must be > 0");
  const double thresh = std::sqrt(c2 * static_cast<double>(tb.d));
  std::size_t hit1 = 0, hit2 = 0;
  const double inv_m = 1.0 / static_cast<double>(tb.m);
  for (std::size_t t = 0; t < tb.trials; ++t) {
    Rng rng(tb.base_seed + t);
    double ip = 0.0, ip_masked = 0.0;
    for (std::size_t k = 0; k < tb.m; ++k) {
      const double ak = std::sqrt(inv_m) * rng.gaussian();
      const double hk = rng.gaussian();
      ip += ak * hk;
      if (hk > 0.0) ip_masked += ak * hk;
    }
    if (std::abs(ip) < thresh) ++hit1;
    if (std::abs(ip_masked) < thresh) ++hit2;
  }
  const double bound = 1.0 - std::exp(-static_cast<double>(tb.m) / 7.0) -
                       4.0 * std::exp(-c2 * static_cast<double>(tb.d) / 4.0);
  auto mk = [&](const char* name, std::size_t hits) {
    CheckResult c;
    c.name = name;
    c.trials = tb.trials;
    c.empirical = static_cast<double>(hits) / static_cast<double>(tb.trials);
    c.bound = bound;
    c.std_error = check_detail::binom_se(c.empirical, tb.trials);
    c.pass = c.empirical >= bound - 3.0 * check_detail::binom_se(bound, tb.trials);
    return c;
  };
  return {mk("inner_product_tail_plain", hit1), mk("inner_product_tail_masked", hit2)};
}

// P{ a^T W W^T D_x a > threshold } with the real correlated pattern
// D_x = sigma'(W x) at a random conditioned x. Explicit W per trial. The pass
// gate applies only in the regime d >= 512, m >= 2048; outside it the
// frequency is reported and the check passes vacuously.
inline CheckResult check_margin_threshold(const TrialBatch& tb) {
  tb.validate();
  const double threshold = tb.constant("margin_threshold", 1.0 / 32.0);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < tb.trials; ++t) {
    Rng rng(tb.base_seed + t);
    NetworkParams p = init_network(tb.d, tb.m, rng);
    Vector x = gaussian_vector(tb.d, 1.0, rng);
    scale_in_place(x, std::sqrt(static_cast<double>(tb.d)) / norm(x));
    const double stat = dot(matvec_t(p.W, p.a), input_gradient(p, x));
    if (stat > threshold) ++hits;
  }
  CheckResult c;
  c.name = "margin_threshold";
  c.trials = tb.trials;
  c.empirical = static_cast<double>(hits) / static_cast<double>(tb.trials);
  c.bound = tb.constant("freq_target", 0.99);
  c.std_error = check_detail::binom_se(c.empirical, tb.trials);
  const bool in_regime = tb.d >= 512 && tb.m >= 2048;
  c.aux["in_regime"] = in_regime ? 1.0 : 0.0;
  c.aux["threshold"] = threshold;
  c.pass = in_regime ? c.empirical >= c.bound : true;
  return c;
}

// Cross term X = a^T (I - D) W W^T D a under independent Bernoulli D.
// Bernstein clause: the empirical frequency of {|X| >= eps * d} must stay
// below 2 exp(-c min(eps^2/K^2, eps/K) d) (averaged over the realized
// per-trial K = 2 |a_Dbar| |a_D| / (pi d)), with three standard errors of
// slack. Margin clause: frequency of {|X| <= cross_margin} against
// cross_margin_freq. eps defaults to bernstein_beta * d^{-3/2}, which puts the
// threshold at about two standard deviations of X so the event is actually
// exercised.
inline CheckResult check_subexp_sum_tail(const TrialBatch& tb) {
  tb.validate();
  const double dd = static_cast<double>(tb.d);
  const double c_bern = tb.constant("bernstein_c", 0.125);
  const double beta = tb.constant("bernstein_beta", 1.0);
  const double eps = tb.constant("bernstein_eps", beta / (dd * std::sqrt(dd)));
  const double cross_margin = tb.constant("cross_margin", 1.0 / 32.0);
  const double margin_freq_target = tb.constant("cross_margin_freq", 0.99);
  const double inv_m = 1.0 / static_cast<double>(tb.m);

  std::size_t exceed = 0, within_margin = 0, within_random_margin = 0;
  KahanSum cross_sum, cross_sumsq, bound_sum;
  for (std::size_t t = 0; t < tb.trials; ++t) {
    Rng rng(tb.base_seed + t);
    Matrix W = gaussian_matrix(tb.m, tb.d, 1.0 / dd, rng);
    Vector a_on(tb.m), a_off(tb.m);
    double B_on = 0.0, B_off = 0.0;
    for (std::size_t k = 0; k < tb.m; ++k) {
      const double ak = std::sqrt(inv_m) * rng.gaussian();
      if (rng.next_u64() & 1u) {
        a_on[k] = ak;
        B_on += ak * ak;
      } else {
        a_off[k] = ak;
        B_off += ak * ak;
      }
    }
    const double cross = dot(matvec_t(W, a_off), matvec_t(W, a_on));
    cross_sum.add(cross);
    cross_sumsq.add(cross * cross);
    if (std::abs(cross) >= eps * dd) ++exceed;
    if (std::abs(cross) <= cross_margin) ++within_margin;
    if (std::abs(cross) <= B_on / 4.0) ++within_random_margin;
    const double K = 2.0 * std::sqrt(B_off * B_on) / (3.141592653589793 * dd);
    const double expo =
        K > 0.0 ? c_bern * std::min(eps * eps / (K * K), eps / K) * dd : 1e300;
    bound_sum.add(std::min(1.0, 2.0 * std::exp(-expo)));
  }
  const double n = static_cast<double>(tb.trials);
  const double exceed_freq = static_cast<double>(exceed) / n;
  const double mean_bound = bound_sum.value() / n;
  const double margin_freq = static_cast<double>(within_margin) / n;
  const double mean_cross = cross_sum.value() / n;
  const double var_cross = (cross_sumsq.value() - n * mean_cross * mean_cross) / (n - 1.0);

  CheckResult c;
  c.name = "subexp_cross_term";
  c.trials = tb.trials;
  c.empirical = exceed_freq;
  c.bound = mean_bound;
  c.std_error = check_detail::binom_se(exceed_freq, tb.trials);
  const bool bernstein_ok =
      exceed_freq <= mean_bound + 3.0 * check_detail::binom_se(std::min(mean_bound, 1.0), tb.trials);
  const bool margin_ok = margin_freq >= margin_freq_target;
  c.pass = bernstein_ok && margin_ok;
  c.aux["eps"] = eps;
  c.aux["margin_event_freq"] = margin_freq;
  c.aux["margin_event_target"] = margin_freq_target;
  c.aux["margin_threshold"] = cross_margin;
  c.aux["bernstein_ok"] = bernstein_ok ? 1.0 : 0.0;
  c.aux["margin_ok"] = margin_ok ? 1.0 : 0.0;
  c.aux["cross_mean"] = mean_cross;
  c.aux["cross_mean_se"] = std::sqrt(var_cross / n);
  c.aux["cross_sd"] = std::sqrt(var_cross);
  // frequency of the analysis-native event |X| <= |a_D|^2 / 4 (diagnostic)
  c.aux["random_margin_event_freq"] = static_cast<double>(within_random_margin) / n;
  return c;
}

// All eight terms of a^T W (W*)^T D*_x a* under W* = W + dW, a* = a + da,
// D*_x = D_x + dD_x, plus diagnostics. The term sum must reproduce the direct
// evaluation exactly up to rounding.
struct NtkExpansion {
  // order: (W,D,a), (dW,D,a), (W,dD,a), (W,D,da), (dW,dD,a), (dW,D,da),
  //        (W,dD,da), (dW,dD,da); "second factor, mask, readout" selectors
  std::array<double, 8> terms{};
  double sum = 0.0;
  double direct = 0.0;
  std::size_t flips = 0;      // ||dD_x||_0
  double dw_spectral = 0.0;   // ||dW||_2
  double da_norm = 0.0;       // ||da||
  double leading() const { return terms[0]; }
  double dw_term() const { return terms[1]; }
  double dd_term() const { return terms[2]; }
  double da_term() const { return terms[3]; }
};

inline NtkExpansion ntk_expansion_terms(const NetworkParams& p0, const NetworkParams& p1,
                                        const Vector& x) {
  if (p0.d != p1.d || p0.m != p1.m)
    throw std::invalid_argument("ntk_expansion_terms: shape mismatch");
  check_input_dim(p0, x, "ntk_expansion_terms");

  Matrix dW(p0.m, p0.d);
  for (std::size_t i = 0; i < dW.e.size(); ++i) dW.e[i] = p1.W.e[i] - p0.W.e[i];
  Vector da(p0.m);
  for (std::size_t k = 0; k < p0.m; ++k) da[k] = p1.a[k] - p0.a[k];

  ActivationPattern d0 = activation_pattern(p0, x);
  ActivationPattern d1 = activation_pattern(p1, x);
  std::vector<double> dmask(p0.m), mask0(p0.m);
  std::size_t flips = 0;
  for (std::size_t k = 0; k < p0.m; ++k) {
    mask0[k] = d0.mask[k];
    dmask[k] = static_cast<double>(d1.mask[k]) - static_cast<double>(d0.mask[k]);
    if (d0.mask[k] != d1.mask[k]) ++flips;
  }

  Vector wta = matvec_t(p0.W, p0.a);
  auto masked = [&](const std::vector<double>& mask, const Vector& vec) {
    Vector out(p0.m);
    for (std::size_t k = 0; k < p0.m; ++k) out[k] = mask[k] * vec[k];
    return out;
  };
  auto term = [&](const Matrix& second, const std::vector<double>& mask, const Vector& vec) {
    return dot(wta, matvec_t(second, masked(mask, vec)));
  };

  NtkExpansion out;
  out.terms[0] = term(p0.W, mask0, p0.a);
  out.terms[1] = term(dW, mask0, p0.a);
  out.terms[2] = term(p0.W, dmask, p0.a);
  out.terms[3] = term(p0.W, mask0, da);
  out.terms[4] = term(dW, dmask, p0.a);
  out.terms[5] = term(dW, mask0, da);
  out.terms[6] = term(p0.W, dmask, da);
  out.terms[7] = term(dW, dmask, da);
  KahanSum ks;
  for (double t : out.terms) ks.add(t);
  out.sum = ks.value();

  std::vector<double> mask1(p0.m);
  for (std::size_t k = 0; k < p0.m; ++k) mask1[k] = d1.mask[k];
  out.direct = dot(wta, matvec_t(p1.W, masked(mask1, p1.a)));

  out.flips = flips;
  bool dw_zero = true;
  for (double v : dW.e)
    if (v != 0.0) {
      dw_zero = false;
      break;
    }
  out.dw_spectral = dw_zero ? 0.0 : spectral_norm(dW, 1e-9);
  out.da_norm = norm(da);
  return out;
}

// P{ |a^T W W^T u| <= 2 ||u|| } over random unit u with a fixed support size.
// The pass gate applies at m >= 2048, mirroring the margin check's regime rule.
inline CheckResult check_sparse_vector_bound(const TrialBatch& tb, std::size_t sparsity) {
  tb.validate();
  const double logm = std::log(static_cast<double>(tb.m));
  const std::size_t cap = static_cast<std::size_t>(static_cast<double>(tb.m) / (logm * logm));
  if (sparsity == 0 || sparsity > cap)
    throw std::invalid_argument("check_sparse_vector_bound: sparsity must be in 1.." +
                                std::to_string(cap));
  std::size_t hits = 0;
  for (std::size_t t = 0; t < tb.trials; ++t) {
    Rng rng(tb.base_seed + t);
    NetworkParams p = init_network(tb.d, tb.m, rng);
    // Floyd's sampling of a size-`sparsity` support
    std::vector<std::size_t> support;
    support.reserve(sparsity);
    for (std::size_t j = tb.m - sparsity; j < tb.m; ++j) {
      const std::size_t r = static_cast<std::size_t>(rng.next_u64() % (j + 1));
      bool seen = false;
      for (std::size_t s : support)
        if (s == r) {
          seen = true;
          break;
        }
      support.push_back(seen ? j : r);
    }
    Vector u(tb.m);
    for (std::size_t s : support) u[s] = rng.gaussian();
    const double un = norm(u);
    if (un == 0.0) continue;
    scale_in_place(u, 1.0 / un);
    const double stat = std::abs(dot(matvec_t(p.W, p.a), matvec_t(p.W, u)));
    if (stat <= 2.0) ++hits;
  }
  CheckResult c;
  c.name = "sparse_vector_bound";
  c.trials = tb.trials;
  c.empirical = static_cast<double>(hits) / static_cast<double>(tb.trials);
  c.bound = tb.constant("freq_target", 0.99);
  c.std_error = check_detail::binom_se(c.empirical, tb.trials);
  const bool in_regime = tb.m >= 2048;
  c.aux["in_regime"] = in_regime ? 1.0 : 0.0;
  c.aux["sparsity"] = static_cast<double>(sparsity);
  c.pass = in_regime ? c.empirical >= c.bound : true;
  return c;
}

}  // namespace advsep
