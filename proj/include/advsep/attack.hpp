#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsep/model.hpp"
#include "advsep/numerics.hpp"

namespace advsep {

enum class AttackMethod { grad_l2, sign_linf, pgd };
enum class NormKind { l2, linf };

inline const char* to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::grad_l2: return "grad_l2";
    case AttackMethod::sign_linf: return "sign_linf";
    case AttackMethod::pgd: return "pgd";
  }
  return "?";
}

inline const char* to_string(NormKind n) { return n == NormKind::l2 ? "l2" : "linf"; }

inline AttackMethod attack_method_from_string(const std::string& s) {
  if (s == "grad_l2") return AttackMethod::grad_l2;
  if (s == "sign_linf") return AttackMethod::sign_linf;
  if (s == "pgd") return AttackMethod::pgd;
  throw std::invalid_argument("unknown attack method: " + s);
}

inline NormKind norm_kind_from_string(const std::string& s) {
  if (s == "l2") return NormKind::l2;
  if (s == "linf") return NormKind::linf;
  throw std::invalid_argument("unknown norm kind: " + s);
}

struct AttackSpec {
  AttackMethod method = AttackMethod::grad_l2;
  double eta = 1.0;           // applied when forming x_adv = x + eta * r
  std::size_t steps = 1;      // > 1 only for pgd
  double epsilon = 0.0;       // ball radius; 0 means unconstrained (one-step only)
  NormKind norm = NormKind::l2;
  double temperature = 1.0;

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("AttackSpec: eta must be > 0");
    if (epsilon < 0.0) throw std::invalid_argument("AttackSpec: epsilon must be >= 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("AttackSpec: temperature must be > 0");
    if (steps == 0) throw std::invalid_argument("AttackSpec: steps must be >= 1");
    if (method != AttackMethod::pgd && steps != 1)
      throw std::invalid_argument("AttackSpec: steps must be 1 for one-step methods");
  }

  bool operator==(const AttackSpec&) const = default;
};

struct NoiseRecord {
  Vector r;
  int y = 1;
  std::size_t sample_id = 0;
  AttackSpec spec;
  double residual_factor = 0.0;  // 1 - sigmoid(y f(x) / T) at the source sample
};

struct GeneratorFingerprint {
  std::uint64_t seed = 0;
  AttackSpec spec;
  std::uint64_t network_hash = 0;
  bool external = false;
};

struct NoiseSet {
  std::vector<NoiseRecord> records;
  std::size_t d = 0;
  GeneratorFingerprint fingerprint;

  std::size_t size() const { return records.size(); }
};

inline std::uint64_t fnv1a64(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t network_hash(const NetworkParams& p) {
  std::uint64_t h = fnv1a64(p.W.e.data(), p.W.e.size() * sizeof(double));
  h = fnv1a64(p.a.e.data(), p.a.e.size() * sizeof(double), h);
  h = fnv1a64(&p.d, sizeof p.d, h);
  h = fnv1a64(&p.m, sizeof p.m, h);
  return h;
}

namespace attack_detail {

inline double residual_at(const NetworkParams& p, const LabeledSample& s, double temperature) {
  const double f = forward(p, s.x);
  return 1.0 - stable_sigmoid(static_cast<double>(s.y) * f / temperature);
}

// Gradient of the loss at x up to the temperature factor:
// -(1 - s(y f / T)) y grad f(x). This is the one-step noise itself.
inline Vector loss_direction(const NetworkParams& p, const LabeledSample& s, double temperature,
                             double* residual_out) {
  const double resid = residual_at(p, s, temperature);
  if (residual_out) *residual_out = resid;
  Vector g = input_gradient(p, s.x);
  scale_in_place(g, -resid * static_cast<double>(s.y));
  return g;
}

}  // namespace attack_detail

inline NoiseRecord grad_l2_noise(const NetworkParams& p, const LabeledSample& s,
                                 const AttackSpec& spec, std::size_t sample_id = 0) {
  spec.validate();
  if (spec.method != AttackMethod::grad_l2)
    throw std::invalid_argument("grad_l2_noise: spec.method must be grad_l2");
  check_input_dim(p, s.x, "grad_l2_noise");
  NoiseRecord rec;
  rec.r = attack_detail::loss_direction(p, s, spec.temperature, &rec.residual_factor);
  rec.y = s.y;
  rec.sample_id = sample_id;
  rec.spec = spec;
  return rec;
}

inline NoiseRecord sign_linf_noise(const NetworkParams& p, const LabeledSample& s,
                                   const AttackSpec& spec, std::size_t sample_id = 0) {
  spec.validate();
  if (spec.method != AttackMethod::sign_linf)
    throw std::invalid_argument("sign_linf_noise: spec.method must be sign_linf");
  check_input_dim(p, s.x, "sign_linf_noise");
  NoiseRecord rec;
  rec.r = attack_detail::loss_direction(p, s, spec.temperature, &rec.residual_factor);
  for (double& v : rec.r.e) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  rec.y = s.y;
  rec.sample_id = sample_id;
  rec.spec = spec;
  return rec;
}

namespace attack_detail {

inline void project_onto_centered_ball(Vector& delta, double epsilon, NormKind norm_kind) {
  if (norm_kind == NormKind::l2) {
    const double dist = norm(delta);
    if (dist > epsilon) scale_in_place(delta, epsilon / dist);
  } else {
    for (double& v : delta.e) {
      if (v < -epsilon) v = -epsilon;
      if (v > epsilon) v = epsilon;
    }
  }
}

}  // namespace attack_detail

// Iterated ascent from x with exact projection onto the epsilon-ball; the
// stored noise is the total displacement x_final - x. The displacement itself
// is the iteration state, so a single unconstrained step reproduces the
// one-step methods (times eta) bit-exactly and the ball constraint holds by
// construction.
inline NoiseRecord pgd_noise(const NetworkParams& p, const LabeledSample& s, const AttackSpec& spec,
                             std::size_t sample_id = 0) {
  spec.validate();
  if (spec.method != AttackMethod::pgd)
    throw std::invalid_argument("pgd_noise: spec.method must be pgd");
  if (!(spec.epsilon > 0.0)) throw std::invalid_argument("pgd_noise: epsilon must be > 0");
  check_input_dim(p, s.x, "pgd_noise");

  NoiseRecord rec;
  rec.residual_factor = attack_detail::residual_at(p, s, spec.temperature);
  Vector delta(s.x.dim());
  LabeledSample cur = s;
  for (std::size_t t = 0; t < spec.steps; ++t) {
    for (std::size_t j = 0; j < delta.dim(); ++j) cur.x[j] = s.x[j] + delta[j];
    Vector dir = attack_detail::loss_direction(p, cur, spec.temperature, nullptr);
    if (spec.norm == NormKind::linf)
      for (double& v : dir.e) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    for (std::size_t j = 0; j < delta.dim(); ++j) delta[j] += spec.eta * dir[j];
    attack_detail::project_onto_centered_ball(delta, spec.epsilon, spec.norm);
  }
  rec.r = std::move(delta);
  rec.y = s.y;
  rec.sample_id = sample_id;
  rec.spec = spec;
  return rec;
}

inline NoiseRecord make_noise(const NetworkParams& p, const LabeledSample& s,
                              const AttackSpec& spec, std::size_t sample_id) {
  switch (spec.method) {
    case AttackMethod::grad_l2: return grad_l2_noise(p, s, spec, sample_id);
    case AttackMethod::sign_linf: return sign_linf_noise(p, s, spec, sample_id);
    case AttackMethod::pgd: return pgd_noise(p, s, spec, sample_id);
  }
  throw std::invalid_argument("make_noise: bad method");
}

inline NoiseSet generate_noise_set(const NetworkParams& p, const LabeledDataset& ds,
                                   const AttackSpec& spec, Rng& rng) {
  spec.validate();
  if (ds.n() == 0) throw std::invalid_argument("generate_noise_set: empty dataset");
  NoiseSet set;
  set.d = ds.dim();
  set.fingerprint.seed = rng.seed();
  set.fingerprint.spec = spec;
  set.fingerprint.network_hash = network_hash(p);
  set.records.reserve(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    try {
      set.records.push_back(make_noise(p, ds.samples[i], spec, i));
    } catch (const std::exception& e) {
      throw std::runtime_error("generate_noise_set: sample " + std::to_string(i) + ": " + e.what());
    }
  }
  return set;
}

// One-step noises enter the adversarial example as x + eta * r; a pgd record's
// r already accumulated the per-step eta, so it is added as-is.
inline LabeledSample adversarial_example(const LabeledSample& s, const NoiseRecord& rec) {
  LabeledSample adv = s;
  const double scale = rec.spec.method == AttackMethod::pgd ? 1.0 : rec.spec.eta;
  for (std::size_t j = 0; j < adv.x.dim(); ++j) adv.x[j] += scale * rec.r[j];
  return adv;
}

inline nlohmann::json attack_spec_to_json(const AttackSpec& s) {
  return nlohmann::json{{"method", to_string(s.method)}, {"eta", s.eta},
                        {"steps", s.steps},              {"epsilon", s.epsilon},
                        {"norm", to_string(s.norm)},     {"temperature", s.temperature}};
}

inline AttackSpec attack_spec_from_json(const nlohmann::json& j) {
  AttackSpec s;
  s.method = attack_method_from_string(j.at("method").get<std::string>());
  s.eta = j.at("eta").get<double>();
  if (j.contains("steps")) s.steps = j.at("steps").get<std::size_t>();
  if (j.contains("epsilon")) s.epsilon = j.at("epsilon").get<double>();
  if (j.contains("norm")) s.norm = norm_kind_from_string(j.at("norm").get<std::string>());
  if (j.contains("temperature")) s.temperature = j.at("temperature").get<double>();
  s.validate();
  return s;
}

// CSV with columns r_1..r_d,y,sample_id plus a "<path>.json" sidecar carrying
// the fingerprint and spec.
inline void save_noise_csv(const NoiseSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_noise_csv: cannot open " + path);
  for (std::size_t j = 0; j < set.d; ++j) out << "r_" << (j + 1) << ",";
  out << "y,sample_id\n";
  char buf[32];
  for (const NoiseRecord& rec : set.records) {
    for (std::size_t j = 0; j < set.d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", rec.r[j]);
      out << buf << ",";
    }
    out << rec.y << "," << rec.sample_id << "\n";
  }
  if (!out) throw std::runtime_error("save_noise_csv: write failed for " + path);

  nlohmann::json side{{"d", set.d},
                      {"count", set.size()},
                      {"seed", set.fingerprint.seed},
                      {"network_hash", set.fingerprint.network_hash},
                      {"external", set.fingerprint.external},
                      {"rng_algorithm", Rng::algorithm()},
                      {"spec", attack_spec_to_json(set.fingerprint.spec)}};
  std::ofstream meta(path + ".json");
  if (!meta) throw std::runtime_error("save_noise_csv: cannot open " + path + ".json");
  meta << side.dump(2) << "\n";
}

}  // namespace advsep
