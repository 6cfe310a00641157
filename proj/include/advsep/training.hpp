#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsep/model.hpp"
#include "advsep/numerics.hpp"

namespace advsep {

enum class TrainMode { train_both, readout_only, hidden_only };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::train_both: return "train_both";
    case TrainMode::readout_only: return "readout_only";
    case TrainMode::hidden_only: return "hidden_only";
  }
  throw std::invalid_argument("unknown TrainMode");
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "train_both") return TrainMode::train_both;
  if (s == "readout_only") return TrainMode::readout_only;
  if (s == "hidden_only") return TrainMode::hidden_only;
  throw std::invalid_argument("unknown TrainMode: " + s);
}

struct TrainConfig {
  double lr = 0.0;
  std::size_t steps = 0;
  std::size_t snapshot_every = 0;
  TrainMode mode = TrainMode::train_both;
  double temperature = 1.0;
  std::uint64_t seed = 0;  // provenance only; full-batch descent draws nothing

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (steps == 0) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (snapshot_every == 0 || snapshot_every > steps)
      throw std::invalid_argument("TrainConfig: snapshot_every must be in 1..steps");
    if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  }
};

struct Snapshot {
  std::size_t step = 0;
  NetworkParams params;
  double loss = 0.0;
  double dist_w_spectral = 0.0;
  double dist_w_frobenius = 0.0;
  double dist_a = 0.0;
  std::vector<std::size_t> flips;  // ||D_{x_i}(t) - D_{x_i}(0)||_0 per sample
};

// Average softplus(-y f / T) loss over the dataset and its parameter
// gradients, with the residual factor 1 - sigmoid(y f / T) and no extra 1/T
// (matching the noise-direction convention; exact gradient of the loss at
// T = 1).
inline double loss_and_param_grads(const NetworkParams& p, const LabeledDataset& ds,
                                   double temperature, Matrix* grad_w, Vector* grad_a) {
  if (ds.n() == 0) throw std::invalid_argument("loss_and_param_grads: empty dataset");
  if (!(temperature > 0.0))
    throw std::invalid_argument("loss_and_param_grads: temperature must be > 0");
  if (grad_w != nullptr && (grad_w->rows() != p.m || grad_w->cols() != p.d))
    *grad_w = Matrix(p.m, p.d);
  if (grad_w != nullptr) std::fill(grad_w->e.begin(), grad_w->e.end(), 0.0);
  if (grad_a != nullptr && grad_a->dim() != p.m) *grad_a = Vector(p.m);
  if (grad_a != nullptr) std::fill(grad_a->e.begin(), grad_a->e.end(), 0.0);

  const double inv_n = 1.0 / static_cast<double>(ds.n());
  KahanSum loss_sum;
  std::vector<double> h(p.m);
  for (const LabeledSample& s : ds.samples) {
    check_input_dim(p, s.x, "loss_and_param_grads");
    const double y = static_cast<double>(s.y);
    double f = 0.0;
    for (std::size_t k = 0; k < p.m; ++k) {
      double hk = 0.0;
      const double* row = p.W.row(k);
      for (std::size_t j = 0; j < p.d; ++j) hk += row[j] * s.x[j];
      h[k] = hk;
      if (hk > 0.0) f += p.a[k] * hk;
    }
    loss_sum.add(softplus(-y * f / temperature) * inv_n);
    if (grad_w == nullptr && grad_a == nullptr) continue;
    const double coef = -(1.0 - stable_sigmoid(y * f / temperature)) * y * inv_n;
    for (std::size_t k = 0; k < p.m; ++k) {
      if (h[k] <= 0.0) continue;
      if (grad_a != nullptr) (*grad_a)[k] += coef * h[k];
      if (grad_w != nullptr) {
        double* grow = grad_w->row(k);
        const double ck = coef * p.a[k];
        for (std::size_t j = 0; j < p.d; ++j) grow[j] += ck * s.x[j];
      }
    }
  }
  return loss_sum.value();
}

namespace train_detail {

inline double spectral_or_zero(const Matrix& M) {
  for (double v : M.e)
    if (v != 0.0) return spectral_norm(M, 1e-9);
  return 0.0;
}

inline Snapshot make_snapshot(std::size_t step, const NetworkParams& p, double loss,
                              const NetworkParams& p0, const LabeledDataset& ds,
                              const std::vector<ActivationPattern>& masks0) {
  Snapshot s;
  s.step = step;
  s.params = p;
  s.loss = loss;
  Matrix dW(p.m, p.d);
  for (std::size_t i = 0; i < dW.e.size(); ++i) dW.e[i] = p.W.e[i] - p0.W.e[i];
  s.dist_w_spectral = spectral_or_zero(dW);
  double fro = 0.0;
  for (double v : dW.e) fro += v * v;
  s.dist_w_frobenius = std::sqrt(fro);
  double da = 0.0;
  for (std::size_t k = 0; k < p.m; ++k) {
    const double dv = p.a[k] - p0.a[k];
    da += dv * dv;
  }
  s.dist_a = std::sqrt(da);
  s.flips.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    ActivationPattern cur = activation_pattern(p, ds.samples[i].x);
    std::size_t flips = 0;
    for (std::size_t k = 0; k < p.m; ++k)
      if (cur.mask[k] != masks0[i].mask[k]) ++flips;
    s.flips[i] = flips;
  }
  return s;
}

}  // namespace train_detail

// Full-batch gradient descent with snapshots at step 0, every
// cfg.snapshot_every steps, and the final step. Aborts if the loss passes the
// divergence guard.
inline std::vector<Snapshot> gd_train(const NetworkParams& p0, const LabeledDataset& ds,
                                      const TrainConfig& cfg) {
  cfg.validate();
  if (ds.n() == 0) throw std::invalid_argument("gd_train: empty dataset");
  constexpr double kDivergenceGuard = 1e6;

  std::vector<ActivationPattern> masks0;
  masks0.reserve(ds.n());
  for (const LabeledSample& s : ds.samples) masks0.push_back(activation_pattern(p0, s.x));

  std::vector<Snapshot> out;
  NetworkParams p = p0;
  Matrix grad_w(p.m, p.d);
  Vector grad_a(p.m);
  double loss = loss_and_param_grads(p, ds, cfg.temperature, &grad_w, &grad_a);
  out.push_back(train_detail::make_snapshot(0, p, loss, p0, ds, masks0));
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    if (cfg.mode != TrainMode::readout_only)
      for (std::size_t i = 0; i < grad_w.e.size(); ++i) p.W.e[i] -= cfg.lr * grad_w.e[i];
    if (cfg.mode != TrainMode::hidden_only)
      for (std::size_t k = 0; k < p.m; ++k) p.a[k] -= cfg.lr * grad_a[k];
    loss = loss_and_param_grads(p, ds, cfg.temperature, &grad_w, &grad_a);
    if (!(loss <= kDivergenceGuard))
      throw std::runtime_error("gd_train: diverged at step " + std::to_string(t) +
                               " with loss " + std::to_string(loss));
    if (t % cfg.snapshot_every == 0 || t == cfg.steps)
      out.push_back(train_detail::make_snapshot(t, p, loss, p0, ds, masks0));
  }
  return out;
}

// p0 plus a rank-1 weight perturbation of exact spectral norm radius_w and a
// readout perturbation of exact Euclidean norm radius_a.
inline NetworkParams ntk_ball_perturbation(const NetworkParams& p0, double radius_w,
                                           double radius_a, Rng& rng) {
  if (radius_w < 0.0 || radius_a < 0.0)
    throw std::invalid_argument("ntk_ball_perturbation: radii must be >= 0");
  NetworkParams p = p0;
  if (radius_w > 0.0) {
    Vector u = gaussian_vector(p.m, 1.0, rng);
    Vector v = gaussian_vector(p.d, 1.0, rng);
    const double scale = radius_w / (norm(u) * norm(v));
    for (std::size_t k = 0; k < p.m; ++k) {
      double* row = p.W.row(k);
      const double cu = scale * u[k];
      for (std::size_t j = 0; j < p.d; ++j) row[j] += cu * v[j];
    }
  }
  if (radius_a > 0.0) {
    Vector g = gaussian_vector(p.m, 1.0, rng);
    const double scale = radius_a / norm(g);
    for (std::size_t k = 0; k < p.m; ++k) p.a[k] += scale * g[k];
  }
  return p;
}

namespace train_detail {

inline void write_doubles(const std::string& path, const std::vector<double>& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline std::vector<double> read_doubles(const std::string& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<double> v(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw std::runtime_error("short read from " + path);
  return v;
}

}  // namespace train_detail

// Directory layout: manifest.json plus step_<k>_W.bin / step_<k>_a.bin raw
// little-endian doubles (W row-major).
inline void save_snapshots(const std::vector<Snapshot>& snaps, const std::string& dir) {
  if (snaps.empty()) throw std::invalid_argument("save_snapshots: empty snapshot list");
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["d"] = snaps.front().params.d;
  manifest["m"] = snaps.front().params.m;
  manifest["snapshots"] = nlohmann::json::array();
  for (const Snapshot& s : snaps) {
    const std::string stem = "step_" + std::to_string(s.step);
    train_detail::write_doubles(dir + "/" + stem + "_W.bin", s.params.W.e);
    train_detail::write_doubles(dir + "/" + stem + "_a.bin", s.params.a.e);
    manifest["snapshots"].push_back(nlohmann::json{{"step", s.step},
                                                   {"loss", s.loss},
                                                   {"dist_w_spectral", s.dist_w_spectral},
                                                   {"dist_w_frobenius", s.dist_w_frobenius},
                                                   {"dist_a", s.dist_a},
                                                   {"flips", s.flips},
                                                   {"weights", stem + "_W.bin"},
                                                   {"readout", stem + "_a.bin"}});
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("save_snapshots: cannot open manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

inline std::vector<Snapshot> load_snapshots(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("load_snapshots: no manifest in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_snapshots: bad manifest: " + std::string(e.what()));
  }
  const std::size_t d = manifest.at("d").get<std::size_t>();
  const std::size_t m = manifest.at("m").get<std::size_t>();
  std::vector<Snapshot> out;
  for (const nlohmann::json& js : manifest.at("snapshots")) {
    Snapshot s;
    s.step = js.at("step").get<std::size_t>();
    s.loss = js.at("loss").get<double>();
    s.dist_w_spectral = js.at("dist_w_spectral").get<double>();
    s.dist_w_frobenius = js.at("dist_w_frobenius").get<double>();
    s.dist_a = js.at("dist_a").get<double>();
    s.flips = js.at("flips").get<std::vector<std::size_t>>();
    s.params.d = d;
    s.params.m = m;
    s.params.W = Matrix(m, d);
    s.params.W.e = train_detail::read_doubles(dir + "/" + js.at("weights").get<std::string>(),
                                              m * d);
    s.params.a = Vector(m);
    s.params.a.e = train_detail::read_doubles(dir + "/" + js.at("readout").get<std::string>(), m);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace advsep
