#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "advsep/attack.hpp"
#include "advsep/model.hpp"
#include "advsep/numerics.hpp"

namespace advsep {

enum class WitnessOrigin { theoretical, projected, perceptron, probe };

inline const char* to_string(WitnessOrigin o) {
  switch (o) {
    case WitnessOrigin::theoretical: return "theoretical";
    case WitnessOrigin::projected: return "projected";
    case WitnessOrigin::perceptron: return "perceptron";
    case WitnessOrigin::probe: return "probe";
  }
  return "?";
}

struct Witness {
  Vector v;
  WitnessOrigin origin = WitnessOrigin::theoretical;
};

// v = -W^T a
inline Witness theoretical_witness(const NetworkParams& p) {
  Vector v = matvec_t(p.W, p.a);
  scale_in_place(v, -1.0);
  if (!all_finite(v)) throw std::runtime_error("theoretical_witness: non-finite");
  return Witness{std::move(v), WitnessOrigin::theoretical};
}

// v' = -(I - Pi_X) W^T a, orthogonal to every data point by construction.
inline Witness projected_witness(const NetworkParams& p, const LabeledDataset& ds) {
  if (ds.n() == 0) throw std::invalid_argument("projected_witness: empty dataset");
  if (ds.dim() != p.d) throw std::invalid_argument("projected_witness: dimension mismatch");
  std::vector<Vector> cols;
  cols.reserve(ds.n());
  for (const LabeledSample& s : ds.samples) cols.push_back(s.x);
  Projector proj = projector_from_columns(cols);
  if (proj.rank() >= p.d)
    throw std::invalid_argument("projected_witness: data spans the full space, witness is zero");
  Vector base = matvec_t(p.W, p.a);
  scale_in_place(base, -1.0);
  Vector v = apply_complement(proj, base);
  if (norm(v) == 0.0) throw std::runtime_error("projected_witness: zero witness");
  return Witness{std::move(v), WitnessOrigin::projected};
}

struct MarginReport {
  std::vector<double> margins;  // <v, y_i r_i> per record
  double min_margin = 0.0;
  std::size_t violations = 0;
  bool separable = false;
};

inline MarginReport margins(const NoiseSet& ns, const Witness& w) {
  if (ns.size() == 0) throw std::invalid_argument("margins: empty noise set");
  if (ns.d != w.v.dim()) throw std::invalid_argument("margins: dimension mismatch");
  MarginReport rep;
  rep.margins.reserve(ns.size());
  rep.min_margin = std::numeric_limits<double>::infinity();
  for (const NoiseRecord& rec : ns.records) {
    const double margin = static_cast<double>(rec.y) * dot(w.v, rec.r);
    rep.margins.push_back(margin);
    rep.min_margin = std::min(rep.min_margin, margin);
    if (!(margin > 0.0)) ++rep.violations;
  }
  rep.separable = rep.violations == 0;
  return rep;
}

struct PerceptronDecision {
  bool separable = false;  // false means undecided, never "inseparable"
  std::optional<Witness> witness;
  std::size_t epochs_used = 0;
  std::size_t mistakes = 0;
};

// Classic perceptron on the label-signed, unit-normalized noises. A witness is
// only returned after it re-verifies against the raw records.
inline PerceptronDecision perceptron_decide(const NoiseSet& ns, std::size_t max_epochs) {
  if (ns.size() == 0) throw std::invalid_argument("perceptron_decide: empty noise set");
  if (max_epochs == 0) throw std::invalid_argument("perceptron_decide: max_epochs must be >= 1");
  std::vector<Vector> z;
  z.reserve(ns.size());
  for (const NoiseRecord& rec : ns.records) {
    Vector zi = rec.r;
    scale_in_place(zi, static_cast<double>(rec.y));
    const double nn = norm(zi);
    if (nn > 0.0) scale_in_place(zi, 1.0 / nn);
    z.push_back(std::move(zi));
  }
  PerceptronDecision out;
  Vector w(ns.d);
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    std::size_t epoch_mistakes = 0;
    for (const Vector& zi : z) {
      if (dot(w, zi) <= 0.0) {
        for (std::size_t j = 0; j < ns.d; ++j) w[j] += zi[j];
        ++epoch_mistakes;
      }
    }
    out.mistakes += epoch_mistakes;
    out.epochs_used = epoch;
    if (epoch_mistakes == 0) {
      Witness cand{w, WitnessOrigin::perceptron};
      if (margins(ns, cand).violations == 0) {
        out.separable = true;
        out.witness = std::move(cand);
      }
      return out;
    }
  }
  return out;
}

struct ProbeConfig {
  std::size_t iterations = 50;  // outer quasi-Newton steps
  std::size_t history = 10;     // stored curvature pairs
};

struct LinearProbe {
  Matrix weights;  // classes x d
  Vector biases;   // classes
  std::size_t classes = 0;
  std::size_t iterations_run = 0;
  double final_loss = 0.0;
};

namespace probe_detail {

inline std::size_t class_index(int label, std::size_t classes) {
  if (classes == 2 && (label == -1 || label == 1)) return label < 0 ? 0 : 1;
  if (label < 0 || static_cast<std::size_t>(label) >= classes)
    throw std::invalid_argument("probe: label " + std::to_string(label) +
                                " outside 0.." + std::to_string(classes - 1) +
                                " (or not -1/+1 for 2 classes)");
  return static_cast<std::size_t>(label);
}

// Mean multinomial cross-entropy and its gradient; theta packs the classes x d
// weight block then the biases.
inline double loss_and_grad(const NoiseSet& ns, const std::vector<std::size_t>& cls,
                            std::size_t classes, const std::vector<double>& theta,
                            std::vector<double>& grad) {
  const std::size_t d = ns.d;
  const std::size_t n = ns.size();
  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> score(classes);
  std::vector<double> prob(classes);
  KahanSum loss;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector& x = ns.records[i].r;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      const double* wc = theta.data() + c * d;
      double s = theta[classes * d + c];
      for (std::size_t j = 0; j < d; ++j) s += wc[j] * x[j];
      score[c] = s;
      mx = std::max(mx, s);
    }
    double zsum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) zsum += std::exp(score[c] - mx);
    const double logz = mx + std::log(zsum);
    loss.add((logz - score[cls[i]]) * inv_n);
    for (std::size_t c = 0; c < classes; ++c) {
      prob[c] = std::exp(score[c] - logz);
      const double coeff = (prob[c] - (c == cls[i] ? 1.0 : 0.0)) * inv_n;
      double* gw = grad.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) gw[j] += coeff * x[j];
      grad[classes * d + c] += coeff;
    }
  }
  return loss.value();
}

}  // namespace probe_detail

// L-BFGS (two-loop recursion, Armijo backtracking) from zero initialization,
// no regularization, fixed iteration budget. Deterministic: no randomness at
// all enters the probe.
inline LinearProbe train_probe(const NoiseSet& train, std::size_t classes,
                               const ProbeConfig& opt = ProbeConfig{}) {
  if (classes < 2) throw std::invalid_argument("train_probe: classes must be >= 2");
  if (train.size() == 0) throw std::invalid_argument("train_probe: empty noise set");
  std::vector<std::size_t> cls;
  cls.reserve(train.size());
  for (const NoiseRecord& rec : train.records)
    cls.push_back(probe_detail::class_index(rec.y, classes));
  if (std::all_of(cls.begin(), cls.end(), [&](std::size_t c) { return c == cls.front(); }))
    throw std::invalid_argument("train_probe: degenerate single-class input");

  const std::size_t d = train.d;
  const std::size_t dim = classes * d + classes;
  std::vector<double> theta(dim, 0.0), grad(dim), new_grad(dim), dir(dim), trial(dim);
  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho_hist;

  double loss = probe_detail::loss_and_grad(train, cls, classes, theta, grad);
  std::size_t iters = 0;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    // two-loop recursion builds dir = -H grad
    dir = grad;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t h = s_hist.size(); h-- > 0;) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) sq += s_hist[h][j] * dir[j];
      alpha[h] = rho_hist[h] * sq;
      for (std::size_t j = 0; j < dim; ++j) dir[j] -= alpha[h] * y_hist[h][j];
    }
    if (!s_hist.empty()) {
      double sy = 0.0, yy = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        sy += s_hist.back()[j] * y_hist.back()[j];
        yy += y_hist.back()[j] * y_hist.back()[j];
      }
      if (yy > 0.0) {
        const double gamma = sy / yy;
        for (double& v : dir) v *= gamma;
      }
    }
    for (std::size_t h = 0; h < s_hist.size(); ++h) {
      double yq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) yq += y_hist[h][j] * dir[j];
      const double beta = rho_hist[h] * yq;
      for (std::size_t j = 0; j < dim; ++j) dir[j] += (alpha[h] - beta) * s_hist[h][j];
    }
    for (double& v : dir) v = -v;

    double gd = 0.0;
    for (std::size_t j = 0; j < dim; ++j) gd += grad[j] * dir[j];
    if (gd >= 0.0) {  // fall back to steepest descent
      gd = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        dir[j] = -grad[j];
        gd -= grad[j] * grad[j];
      }
    }
    if (gd == 0.0) break;  // zero gradient, done

    double step = 1.0;
    if (it == 0) {
      double gn = 0.0;
      for (double v : grad) gn += v * v;
      gn = std::sqrt(gn);
      step = gn > 1.0 ? 1.0 / gn : 1.0;
    }
    const double c1 = 1e-4;
    double new_loss = loss;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      for (std::size_t j = 0; j < dim; ++j) trial[j] = theta[j] + step * dir[j];
      new_loss = probe_detail::loss_and_grad(train, cls, classes, trial, new_grad);
      if (new_loss <= loss + c1 * step * gd) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    if (s_hist.size() == opt.history) {
      s_hist.erase(s_hist.begin());
      y_hist.erase(y_hist.begin());
      rho_hist.erase(rho_hist.begin());
    }
    std::vector<double> s_new(dim), y_new(dim);
    double sy = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      s_new[j] = trial[j] - theta[j];
      y_new[j] = new_grad[j] - grad[j];
      sy += s_new[j] * y_new[j];
    }
    if (sy > 1e-300) {
      s_hist.push_back(std::move(s_new));
      y_hist.push_back(std::move(y_new));
      rho_hist.push_back(1.0 / sy);
    }
    theta = trial;
    grad = new_grad;
    loss = new_loss;
    iters = it + 1;
  }

  LinearProbe probe;
  probe.classes = classes;
  probe.weights = Matrix(classes, d);
  probe.biases = Vector(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) probe.weights(c, j) = theta[c * d + j];
    probe.biases[c] = theta[classes * d + c];
  }
  probe.iterations_run = iters;
  probe.final_loss = loss;
  return probe;
}

// Fraction of argmax-correct predictions; ties resolve to the lowest class.
inline double eval_probe(const LinearProbe& probe, const NoiseSet& ns) {
  if (ns.size() == 0) throw std::invalid_argument("eval_probe: empty noise set");
  if (ns.d != probe.weights.cols()) throw std::invalid_argument("eval_probe: dimension mismatch");
  std::size_t correct = 0;
  for (const NoiseRecord& rec : ns.records) {
    const std::size_t truth = probe_detail::class_index(rec.y, probe.classes);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < probe.classes; ++c) {
      double s = probe.biases[c];
      const double* wc = probe.weights.row(c);
      for (std::size_t j = 0; j < ns.d; ++j) s += wc[j] * rec.r[j];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    if (best == truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ns.size());
}

}  // namespace advsep
