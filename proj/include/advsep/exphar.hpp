#pragma once

#include <algorithm>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsep/attack.hpp"
#include "advsep/model.hpp"
#include "advsep/numerics.hpp"
#include "advsep/separability.hpp"
#include "advsep/theory_checks.hpp"
#include "advsep/training.hpp"

namespace advsep {

enum class ExperimentKind {
  init_separability,
  ntk_separability,
  corollary_adv_examples,
  large_eta,
  theory_suite,
  train_and_probe,
  ingest_and_probe,
};

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::init_separability: return "init_separability";
    case ExperimentKind::ntk_separability: return "ntk_separability";
    case ExperimentKind::corollary_adv_examples: return "corollary_adv_examples";
    case ExperimentKind::large_eta: return "large_eta";
    case ExperimentKind::theory_suite: return "theory_suite";
    case ExperimentKind::train_and_probe: return "train_and_probe";
    case ExperimentKind::ingest_and_probe: return "ingest_and_probe";
  }
  throw std::invalid_argument("unknown ExperimentKind");
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (ExperimentKind k :
       {ExperimentKind::init_separability, ExperimentKind::ntk_separability,
        ExperimentKind::corollary_adv_examples, ExperimentKind::large_eta,
        ExperimentKind::theory_suite, ExperimentKind::train_and_probe,
        ExperimentKind::ingest_and_probe})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown ExperimentKind: " + s);
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::init_separability;
  std::string name;
  std::size_t d = 0, m = 0, n = 0;
  std::uint64_t base_seed = 0;
  std::size_t seed_count = 1;
  double separation = 1.0;
  AttackSpec attack;
  std::vector<AttackSpec> attacks;        // train_and_probe noise settings
  std::optional<TrainConfig> train;
  double lr_small = 0.0, lr_large = 0.0;  // train_and_probe regimes
  ProbeConfig probe;
  std::size_t test_n = 0;                 // init_separability: probe holdout size
  std::size_t probe_classes = 0;          // ingest_and_probe: 0 = infer
  double train_fraction = 0.8;            // ingest_and_probe split
  std::string noise_csv;
  std::size_t trials = 1000;              // theory_suite
  std::vector<std::string> checks;        // theory_suite subset; empty = all
  double radius_w = -1.0, radius_a = -1.0;  // ntk_separability; <0 = 1/sqrt(m)
  std::map<std::string, double> thresholds;
  std::string output_dir;
  bool dump_noise = false;

  double threshold(const std::string& key, double fallback) const {
    auto it = thresholds.find(key);
    return it == thresholds.end() ? fallback : it->second;
  }

  // total, structured validation: returns one diagnostic per problem
  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    auto need_dims = [&](bool want_n) {
      if (d == 0) errs.push_back("d: must be >= 1");
      if (m == 0) errs.push_back("m: must be >= 1");
      if (want_n && n == 0) errs.push_back("n: must be >= 1");
    };
    if (seed_count == 0) errs.push_back("seeds.count: must be >= 1");
    if (!(separation >= 0.0)) errs.push_back("separation: must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0))
      errs.push_back("train_fraction: must be in (0, 1]");
    if (probe.iterations == 0) errs.push_back("probe.iterations: must be >= 1");
    switch (kind) {
      case ExperimentKind::init_separability:
      case ExperimentKind::ntk_separability:
      case ExperimentKind::large_eta:
        need_dims(true);
        break;
      case ExperimentKind::corollary_adv_examples:
        need_dims(true);
        if (d != 0 && n != 0 && n >= d)
          errs.push_back("n: corollary_adv_examples requires n < d (projected witness)");
        break;
      case ExperimentKind::theory_suite:
        need_dims(false);
        if (trials == 0) errs.push_back("trials: must be >= 1");
        break;
      case ExperimentKind::train_and_probe:
        need_dims(true);
        if (!train.has_value()) {
          errs.push_back("train: section required for train_and_probe");
        } else {
          TrainConfig probe_tc = *train;
          probe_tc.lr = 1.0;  // lr comes from lr_small / lr_large
          try {
            probe_tc.validate();
          } catch (const std::exception& e) {
            errs.push_back(std::string("train: ") + e.what());
          }
        }
        if (!(lr_small > 0.0)) errs.push_back("lr_small: must be > 0");
        if (!(lr_large > 0.0)) errs.push_back("lr_large: must be > 0");
        for (std::size_t i = 0; i < attacks.size(); ++i) {
          try {
            attacks[i].validate();
          } catch (const std::exception& e) {
            errs.push_back("attacks[" + std::to_string(i) + "]: " + e.what());
          }
        }
        break;
      case ExperimentKind::ingest_and_probe:
        if (noise_csv.empty()) errs.push_back("noise_csv: path required for ingest_and_probe");
        break;
    }
    if (kind != ExperimentKind::train_and_probe && kind != ExperimentKind::ingest_and_probe &&
        kind != ExperimentKind::theory_suite) {
      try {
        attack.validate();
      } catch (const std::exception& e) {
        errs.push_back(std::string("attack: ") + e.what());
      }
    }
    return errs;
  }
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool pass = false;
  std::map<std::string, double> metrics;
  nlohmann::json fingerprint;  // generator provenance, if any
};

struct ExperimentReport {
  nlohmann::json config_echo;
  std::vector<SeedResult> seeds;
  std::map<std::string, double> aggregates;
  std::vector<CheckResult> criteria;
  bool overall_pass = false;
  std::vector<std::string> artifacts;
  std::map<std::string, std::vector<std::array<double, 2>>> curves;
  std::string rng_algorithm;
  std::vector<std::string> notes;
};

namespace exphar_detail {

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return nlohmann::json{{"lr", t.lr},
                        {"steps", t.steps},
                        {"snapshot_every", t.snapshot_every},
                        {"mode", to_string(t.mode)},
                        {"temperature", t.temperature},
                        {"seed", t.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.lr = j.value("lr", 0.0);
  t.steps = j.value("steps", std::size_t{0});
  t.snapshot_every = j.value("snapshot_every", std::size_t{0});
  if (j.contains("mode")) t.mode = train_mode_from_string(j.at("mode").get<std::string>());
  t.temperature = j.value("temperature", 1.0);
  t.seed = j.value("seed", std::uint64_t{0});
  return t;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out,
                std::vector<std::string>& errs) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    errs.push_back(std::string(key) + ": wrong type");
  }
}

}  // namespace exphar_detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["kind"] = to_string(c.kind);
  j["name"] = c.name;
  j["d"] = c.d;
  j["m"] = c.m;
  j["n"] = c.n;
  j["seeds"] = {{"base", c.base_seed}, {"count", c.seed_count}};
  j["separation"] = c.separation;
  j["attack"] = attack_spec_to_json(c.attack);
  if (!c.attacks.empty()) {
    j["attacks"] = nlohmann::json::array();
    for (const AttackSpec& a : c.attacks) j["attacks"].push_back(attack_spec_to_json(a));
  }
  if (c.train.has_value()) j["train"] = exphar_detail::train_config_to_json(*c.train);
  if (c.lr_small > 0.0) j["lr_small"] = c.lr_small;
  if (c.lr_large > 0.0) j["lr_large"] = c.lr_large;
  j["probe"] = {{"iterations", c.probe.iterations}, {"history", c.probe.history}};
  if (c.test_n > 0) j["test_n"] = c.test_n;
  if (c.probe_classes > 0) j["probe_classes"] = c.probe_classes;
  j["train_fraction"] = c.train_fraction;
  if (!c.noise_csv.empty()) j["noise_csv"] = c.noise_csv;
  j["trials"] = c.trials;
  if (!c.checks.empty()) j["checks"] = c.checks;
  if (c.radius_w >= 0.0) j["radius_w"] = c.radius_w;
  if (c.radius_a >= 0.0) j["radius_a"] = c.radius_a;
  j["thresholds"] = c.thresholds;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  j["dump_noise"] = c.dump_noise;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  std::vector<std::string> errs;
  ExperimentConfig c;
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  if (!j.contains("kind")) {
    errs.push_back("kind: required");
  } else {
    try {
      c.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    } catch (const std::exception& e) {
      errs.push_back(std::string("kind: ") + e.what());
    }
  }
  exphar_detail::read_field(j, "name", c.name, errs);
  exphar_detail::read_field(j, "d", c.d, errs);
  exphar_detail::read_field(j, "m", c.m, errs);
  exphar_detail::read_field(j, "n", c.n, errs);
  if (j.contains("seeds")) {
    if (!j.at("seeds").is_object()) {
      errs.push_back("seeds: must be an object {base, count}");
    } else {
      exphar_detail::read_field(j.at("seeds"), "base", c.base_seed, errs);
      exphar_detail::read_field(j.at("seeds"), "count", c.seed_count, errs);
    }
  }
  exphar_detail::read_field(j, "separation", c.separation, errs);
  if (j.contains("attack")) {
    try {
      c.attack = attack_spec_from_json(j.at("attack"));
    } catch (const std::exception& e) {
      errs.push_back(std::string("attack: ") + e.what());
    }
  }
  if (j.contains("attacks")) {
    if (!j.at("attacks").is_array()) {
      errs.push_back("attacks: must be an array");
    } else {
      for (std::size_t i = 0; i < j.at("attacks").size(); ++i) {
        try {
          c.attacks.push_back(attack_spec_from_json(j.at("attacks")[i]));
        } catch (const std::exception& e) {
          errs.push_back("attacks[" + std::to_string(i) + "]: " + e.what());
        }
      }
    }
  }
  if (j.contains("train")) {
    try {
      c.train = exphar_detail::train_config_from_json(j.at("train"));
    } catch (const std::exception& e) {
      errs.push_back(std::string("train: ") + e.what());
    }
  }
  exphar_detail::read_field(j, "lr_small", c.lr_small, errs);
  exphar_detail::read_field(j, "lr_large", c.lr_large, errs);
  if (j.contains("probe")) {
    exphar_detail::read_field(j.at("probe"), "iterations", c.probe.iterations, errs);
    exphar_detail::read_field(j.at("probe"), "history", c.probe.history, errs);
  }
  exphar_detail::read_field(j, "test_n", c.test_n, errs);
  exphar_detail::read_field(j, "probe_classes", c.probe_classes, errs);
  exphar_detail::read_field(j, "train_fraction", c.train_fraction, errs);
  exphar_detail::read_field(j, "noise_csv", c.noise_csv, errs);
  exphar_detail::read_field(j, "trials", c.trials, errs);
  exphar_detail::read_field(j, "checks", c.checks, errs);
  exphar_detail::read_field(j, "radius_w", c.radius_w, errs);
  exphar_detail::read_field(j, "radius_a", c.radius_a, errs);
  if (j.contains("thresholds")) {
    try {
      c.thresholds = j.at("thresholds").get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception&) {
      errs.push_back("thresholds: must map names to numbers");
    }
  }
  exphar_detail::read_field(j, "output_dir", c.output_dir, errs);
  exphar_detail::read_field(j, "dump_noise", c.dump_noise, errs);
  if (errs.empty())
    for (const std::string& e : c.validate()) errs.push_back(e);
  if (!errs.empty()) {
    std::string msg = "config invalid:";
    for (const std::string& e : errs) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
  return c;
}

// --- external noise ingestion ----------------------------------------------

inline NoiseSet ingest_noise_csv(const std::string& path, std::size_t expected_dim = 0) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest_noise_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("ingest_noise_csv: empty file " + path);
  std::vector<std::string> header = csv_detail::split_line(line);
  if (header.size() < 3)
    throw std::runtime_error("ingest_noise_csv: header needs r_1..r_d,y,sample_id");
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "r_" + std::to_string(j + 1))
      throw std::runtime_error("ingest_noise_csv: bad header column " + std::to_string(j + 1) +
                               " (want r_" + std::to_string(j + 1) + ", got " + header[j] + ")");
  if (header[d] != "y" || header[d + 1] != "sample_id")
    throw std::runtime_error("ingest_noise_csv: header must end with y,sample_id");
  if (expected_dim != 0 && d != expected_dim)
    throw std::runtime_error("ingest_noise_csv: dimension " + std::to_string(d) +
                             " does not match expected " + std::to_string(expected_dim));

  NoiseSet set;
  set.d = d;
  set.fingerprint.external = true;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells = csv_detail::split_line(line);
    if (cells.size() != d + 2)
      throw std::runtime_error("ingest_noise_csv: row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, want " +
                               std::to_string(d + 2));
    NoiseRecord rec;
    rec.r = Vector(d);
    for (std::size_t j = 0; j < d; ++j)
      rec.r[j] = csv_detail::parse_finite(cells[j], row, j + 1);
    const double yv = csv_detail::parse_finite(cells[d], row, d + 1);
    if (yv != std::floor(yv))
      throw std::runtime_error("ingest_noise_csv: row " + std::to_string(row) +
                               ": label must be an integer");
    rec.y = static_cast<int>(yv);
    const double sid = csv_detail::parse_finite(cells[d + 1], row, d + 2);
    if (sid < 0 || sid != std::floor(sid))
      throw std::runtime_error("ingest_noise_csv: row " + std::to_string(row) +
                               ": sample_id must be a non-negative integer");
    rec.sample_id = static_cast<std::size_t>(sid);
    set.records.push_back(std::move(rec));
  }

  // optional sidecar with generator provenance
  const std::string sidecar = path + ".json";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream sc(sidecar);
    nlohmann::json js;
    try {
      sc >> js;
      if (js.contains("seed")) set.fingerprint.seed = js.at("seed").get<std::uint64_t>();
      if (js.contains("network_hash"))
        set.fingerprint.network_hash = js.at("network_hash").get<std::uint64_t>();
      if (js.contains("spec")) set.fingerprint.spec = attack_spec_from_json(js.at("spec"));
    } catch (const std::exception& e) {
      throw std::runtime_error("ingest_noise_csv: bad sidecar " + sidecar + ": " + e.what());
    }
    set.fingerprint.external = true;
  }
  return set;
}

// --- report serialization ---------------------------------------------------

inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["config"] = r.config_echo;
  j["rng_algorithm"] = r.rng_algorithm;
  j["overall_pass"] = r.overall_pass;
  std::vector<std::string> notes = r.notes;
  if (r.seeds.empty() &&
      std::find(notes.begin(), notes.end(), "no trials") == notes.end())
    notes.push_back("no trials");
  j["notes"] = notes;
  j["seeds"] = nlohmann::json::array();
  for (const SeedResult& s : r.seeds) {
    nlohmann::json js{{"seed", s.seed}, {"pass", s.pass}, {"metrics", s.metrics}};
    if (!s.fingerprint.is_null()) js["fingerprint"] = s.fingerprint;
    j["seeds"].push_back(std::move(js));
  }
  j["aggregates"] = r.aggregates;
  j["criteria"] = nlohmann::json::array();
  for (const CheckResult& c : r.criteria) j["criteria"].push_back(check_result_to_json(c));
  j["curves"] = nlohmann::json::object();
  for (const auto& [name, pts] : r.curves) {
    nlohmann::json arr = nlohmann::json::array();
    for (const std::array<double, 2>& p : pts) arr.push_back({p[0], p[1]});
    j["curves"][name] = std::move(arr);
  }
  j["artifacts"] = r.artifacts;
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.config_echo = j.at("config");
  r.rng_algorithm = j.value("rng_algorithm", std::string{});
  r.overall_pass = j.at("overall_pass").get<bool>();
  if (j.contains("notes")) r.notes = j.at("notes").get<std::vector<std::string>>();
  for (const nlohmann::json& js : j.at("seeds")) {
    SeedResult s;
    s.seed = js.at("seed").get<std::uint64_t>();
    s.pass = js.at("pass").get<bool>();
    s.metrics = js.at("metrics").get<std::map<std::string, double>>();
    if (js.contains("fingerprint")) s.fingerprint = js.at("fingerprint");
    r.seeds.push_back(std::move(s));
  }
  r.aggregates = j.at("aggregates").get<std::map<std::string, double>>();
  for (const nlohmann::json& jc : j.at("criteria")) {
    CheckResult c;
    c.name = jc.at("name").get<std::string>();
    c.empirical = jc.at("empirical").get<double>();
    c.bound = jc.at("bound").get<double>();
    c.pass = jc.at("pass").get<bool>();
    c.trials = jc.at("trials").get<std::size_t>();
    c.std_error = jc.at("std_error").get<double>();
    if (jc.contains("aux")) c.aux = jc.at("aux").get<std::map<std::string, double>>();
    r.criteria.push_back(std::move(c));
  }
  if (j.contains("curves"))
    for (auto it = j.at("curves").begin(); it != j.at("curves").end(); ++it) {
      std::vector<std::array<double, 2>> pts;
      for (const nlohmann::json& p : it.value())
        pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      r.curves[it.key()] = std::move(pts);
    }
  if (j.contains("artifacts")) r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  return r;
}

inline std::vector<std::string> emit_report(const ExperimentReport& report,
                                            const std::vector<std::string>& formats,
                                            const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("emit_report: cannot create " + dir + ": " + ec.message());
  std::vector<std::string> paths;
  char buf[64];
  for (const std::string& fmt : formats) {
    if (fmt == "json") {
      const std::string path = dir + "/report.json";
      std::ofstream out(path);
      if (!out) throw std::runtime_error("emit_report: cannot open " + path);
      out << report_to_json(report).dump(2) << "\n";
      paths.push_back(path);
    } else if (fmt == "csv") {
      const std::string spath = dir + "/seeds.csv";
      std::ofstream out(spath);
      if (!out) throw std::runtime_error("emit_report: cannot open " + spath);
      std::vector<std::string> keys;
      for (const SeedResult& s : report.seeds)
        for (const auto& [k, v] : s.metrics)
          if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
      std::sort(keys.begin(), keys.end());
      out << "seed,pass";
      for (const std::string& k : keys) out << "," << k;
      out << "\n";
      for (const SeedResult& s : report.seeds) {
        out << s.seed << "," << (s.pass ? 1 : 0);
        for (const std::string& k : keys) {
          auto it = s.metrics.find(k);
          if (it == s.metrics.end()) {
            out << ",";
          } else {
            std::snprintf(buf, sizeof buf, "%.17g", it->second);
            out << "," << buf;
          }
        }
        out << "\n";
      }
      paths.push_back(spath);
      const std::string cpath = dir + "/criteria.csv";
      write_check_csv(report.criteria, cpath);
      paths.push_back(cpath);
    } else if (fmt == "plotdata") {
      for (const auto& [name, pts] : report.curves) {
        const std::string path = dir + "/plot_" + name + ".csv";
        std::ofstream out(path);
        if (!out) throw std::runtime_error("emit_report: cannot open " + path);
        out << "x,y\n";
        for (const std::array<double, 2>& p : pts) {
          std::snprintf(buf, sizeof buf, "%.17g,%.17g", p[0], p[1]);
          out << buf << "\n";
        }
        paths.push_back(path);
      }
    } else {
      throw std::invalid_argument("emit_report: unknown format " + fmt);
    }
  }
  return paths;
}

// --- pipelines ---------------------------------------------------------------

namespace exphar_detail {

inline std::string attack_label(const AttackSpec& s) {
  if (s.method == AttackMethod::pgd) return "pgd" + std::to_string(s.steps);
  return to_string(s.method);
}

inline NoiseSet features_as_noise_set(const LabeledDataset& ds) {
  NoiseSet set;
  set.d = ds.dim();
  set.fingerprint.external = true;  // raw features, not attack output
  set.records.reserve(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    NoiseRecord rec;
    rec.r = ds.samples[i].x;
    rec.y = ds.samples[i].y;
    rec.sample_id = i;
    set.records.push_back(std::move(rec));
  }
  return set;
}

inline CheckResult fraction_criterion(const std::string& name, double fraction, double target,
                                      std::size_t trials) {
  CheckResult c;
  c.name = name;
  c.empirical = fraction;
  c.bound = target;
  c.trials = trials;
  c.std_error = check_detail::binom_se(fraction, std::max<std::size_t>(trials, 1));
  c.pass = fraction >= target;
  return c;
}

inline CheckResult upper_criterion(const std::string& name, double value, double cap,
                                   std::size_t trials) {
  CheckResult c;
  c.name = name;
  c.empirical = value;
  c.bound = cap;
  c.trials = trials;
  c.pass = value <= cap;
  return c;
}

inline nlohmann::json fingerprint_to_json(const GeneratorFingerprint& f) {
  return nlohmann::json{{"seed", f.seed},
                        {"network_hash", f.network_hash},
                        {"external", f.external},
                        {"spec", attack_spec_to_json(f.spec)}};
}

inline void run_init_separability(const ExperimentConfig& cfg, ExperimentReport& rep) {
  const double stat_threshold = cfg.threshold("margin_stat_threshold", 1.0 / 32.0);
  std::size_t separable_seeds = 0, stats_ok_in_separable = 0, probe_ok = 0;
  for (std::size_t i = 0; i < cfg.seed_count; ++i) {
    Rng rng(cfg.base_seed + i);
    SeedResult sr;
    sr.seed = rng.seed();
    NetworkParams p = init_network(cfg.d, cfg.m, rng);
    LabeledDataset ds = make_two_cluster_dataset(cfg.d, cfg.n, cfg.separation, rng);
    NoiseSet ns = generate_noise_set(p, ds, cfg.attack, rng);
    sr.fingerprint = fingerprint_to_json(ns.fingerprint);
    Witness w = theoretical_witness(p);
    MarginReport mr = margins(ns, w);
    double min_stat = 1e300;
    for (std::size_t k = 0; k < ns.size(); ++k)
      min_stat = std::min(min_stat, mr.margins[k] / ns.records[k].residual_factor);
    sr.metrics["min_margin"] = mr.min_margin;
    sr.metrics["violations"] = static_cast<double>(mr.violations);
    sr.metrics["separable"] = mr.separable ? 1.0 : 0.0;
    sr.metrics["min_stat"] = min_stat;
    sr.metrics["stats_above_threshold"] = min_stat > stat_threshold ? 1.0 : 0.0;
    if (mr.separable) {
      ++separable_seeds;
      if (min_stat > stat_threshold) ++stats_ok_in_separable;
    }
    sr.pass = mr.separable;

    if (cfg.test_n > 0) {
      LabeledDataset test_ds = make_two_cluster_dataset(cfg.d, cfg.test_n, cfg.separation, rng);
      NoiseSet test_ns = generate_noise_set(p, test_ds, cfg.attack, rng);
      LinearProbe probe = train_probe(ns, 2, cfg.probe);
      const double train_acc = eval_probe(probe, ns);
      const double test_acc = eval_probe(probe, test_ns);
      sr.metrics["probe_train_acc"] = train_acc;
      sr.metrics["probe_test_acc"] = test_acc;
      const bool ok = train_acc >= cfg.threshold("probe_train_target", 1.0) &&
                      test_acc >= cfg.threshold("probe_test_target", 0.99);
      sr.metrics["probe_ok"] = ok ? 1.0 : 0.0;
      if (ok) ++probe_ok;
      sr.pass = sr.pass && ok;
    }
    rep.curves["min_margin_by_seed"].push_back(
        {static_cast<double>(sr.seed), mr.min_margin});
    rep.seeds.push_back(std::move(sr));
  }
  const double nn = static_cast<double>(cfg.seed_count);
  const double frac_sep = static_cast<double>(separable_seeds) / nn;
  rep.aggregates["fraction_separable"] = frac_sep;
  rep.criteria.push_back(fraction_criterion("seed_fraction_separable", frac_sep,
                                            cfg.threshold("seed_fraction", 0.95),
                                            cfg.seed_count));
  const double frac_stats =
      separable_seeds == 0
          ? 1.0
          : static_cast<double>(stats_ok_in_separable) / static_cast<double>(separable_seeds);
  rep.aggregates["fraction_stats_above_threshold"] = frac_stats;
  rep.criteria.push_back(fraction_criterion("margin_stat_above_threshold_in_separable_seeds",
                                            frac_stats, 1.0, separable_seeds));
  if (cfg.test_n > 0) {
    const double frac_probe = static_cast<double>(probe_ok) / nn;
    rep.aggregates["fraction_probe_ok"] = frac_probe;
    rep.criteria.push_back(fraction_criterion("probe_generalization_seed_fraction", frac_probe,
                                              cfg.threshold("probe_seed_fraction", 0.90),
                                              cfg.seed_count));
  }
}

inline void run_ntk_separability(const ExperimentConfig& cfg, ExperimentReport& rep) {
  const double rW =
      cfg.radius_w >= 0.0 ? cfg.radius_w : 1.0 / std::sqrt(static_cast<double>(cfg.m));
  const double rA =
      cfg.radius_a >= 0.0 ? cfg.radius_a : 1.0 / std::sqrt(static_cast<double>(cfg.m));
  const double lead_min = cfg.threshold("leading_term_min", 1.0 / 32.0);
  const double t2_cap =
      cfg.threshold("term2_cap", 5.0 / std::sqrt(static_cast<double>(cfg.m)));
  const double t4_cap =
      cfg.threshold("term4_cap", 5.0 / std::sqrt(static_cast<double>(cfg.d)));
  std::size_t separable_seeds = 0, diag_ok_in_separable = 0;
  for (std::size_t i = 0; i < cfg.seed_count; ++i) {
    Rng rng(cfg.base_seed + i);
    SeedResult sr;
    sr.seed = rng.seed();
    NetworkParams p0 = init_network(cfg.d, cfg.m, rng);
    NetworkParams p1 = ntk_ball_perturbation(p0, rW, rA, rng);
    LabeledDataset ds = make_two_cluster_dataset(cfg.d, cfg.n, cfg.separation, rng);
    NoiseSet ns = generate_noise_set(p1, ds, cfg.attack, rng);
    sr.fingerprint = fingerprint_to_json(ns.fingerprint);
    MarginReport mr = margins(ns, theoretical_witness(p0));

    Matrix dW(p0.m, p0.d);
    for (std::size_t k = 0; k < dW.e.size(); ++k) dW.e[k] = p1.W.e[k] - p0.W.e[k];
    Vector da(p0.m);
    for (std::size_t k = 0; k < p0.m; ++k) da[k] = p1.a[k] - p0.a[k];
    Vector wta = matvec_t(p0.W, p0.a);
    double min_leading = 1e300, max_t2 = 0.0, max_t4 = 0.0;
    Vector mv(p0.m), mv4(p0.m);
    for (const LabeledSample& s : ds.samples) {
      ActivationPattern mask = activation_pattern(p0, s.x);
      for (std::size_t k = 0; k < p0.m; ++k) {
        mv[k] = mask.mask[k] ? p0.a[k] : 0.0;
        mv4[k] = mask.mask[k] ? da[k] : 0.0;
      }
      min_leading = std::min(min_leading, dot(wta, matvec_t(p0.W, mv)));
      max_t2 = std::max(max_t2, std::abs(dot(wta, matvec_t(dW, mv))));
      max_t4 = std::max(max_t4, std::abs(dot(wta, matvec_t(p0.W, mv4))));
    }
    const bool diag_ok = min_leading > lead_min && max_t2 <= t2_cap && max_t4 <= t4_cap;
    sr.metrics["min_margin"] = mr.min_margin;
    sr.metrics["violations"] = static_cast<double>(mr.violations);
    sr.metrics["separable"] = mr.separable ? 1.0 : 0.0;
    sr.metrics["min_leading_term"] = min_leading;
    sr.metrics["max_abs_term2"] = max_t2;
    sr.metrics["max_abs_term4"] = max_t4;
    sr.metrics["term_bounds_ok"] = diag_ok ? 1.0 : 0.0;
    if (mr.separable) {
      ++separable_seeds;
      if (diag_ok) ++diag_ok_in_separable;
    }
    sr.pass = mr.separable;
    rep.curves["min_margin_by_seed"].push_back(
        {static_cast<double>(sr.seed), mr.min_margin});
    rep.seeds.push_back(std::move(sr));
  }
  const double frac_sep = static_cast<double>(separable_seeds) / cfg.seed_count;
  rep.aggregates["fraction_separable"] = frac_sep;
  rep.criteria.push_back(fraction_criterion("seed_fraction_separable", frac_sep,
                                            cfg.threshold("seed_fraction", 0.95),
                                            cfg.seed_count));
  const double frac_diag =
      separable_seeds == 0
          ? 1.0
          : static_cast<double>(diag_ok_in_separable) / static_cast<double>(separable_seeds);
  rep.aggregates["fraction_term_bounds_ok"] = frac_diag;
  rep.criteria.push_back(fraction_criterion("term_bounds_in_separable_seeds", frac_diag, 1.0,
                                            separable_seeds));
}

inline void run_corollary_adv_examples(const ExperimentConfig& cfg, ExperimentReport& rep) {
  const double ortho_tol = cfg.threshold("ortho_tol", 1e-8);
  std::size_t good_seeds = 0;
  double worst_ortho = 0.0;
  for (std::size_t i = 0; i < cfg.seed_count; ++i) {
    Rng rng(cfg.base_seed + i);
    SeedResult sr;
    sr.seed = rng.seed();
    NetworkParams p = init_network(cfg.d, cfg.m, rng);
    LabeledDataset ds = make_two_cluster_dataset(cfg.d, cfg.n, cfg.separation, rng);
    NoiseSet ns = generate_noise_set(p, ds, cfg.attack, rng);
    sr.fingerprint = fingerprint_to_json(ns.fingerprint);
    Witness w = projected_witness(p, ds);
    const double wn = norm(w.v);
    double min_margin = 1e300, max_ortho = 0.0;
    std::size_t violations = 0;
    for (std::size_t k = 0; k < ds.n(); ++k) {
      LabeledSample adv = adversarial_example(ds.samples[k], ns.records[k]);
      const double margin = static_cast<double>(adv.y) * dot(w.v, adv.x);
      min_margin = std::min(min_margin, margin);
      if (margin <= 0.0) ++violations;
      max_ortho = std::max(
          max_ortho, std::abs(dot(w.v, ds.samples[k].x)) / (wn * norm(ds.samples[k].x)));
    }
    sr.metrics["min_adv_margin"] = min_margin;
    sr.metrics["violations"] = static_cast<double>(violations);
    sr.metrics["separable"] = violations == 0 ? 1.0 : 0.0;
    sr.metrics["max_ortho_leak"] = max_ortho;
    worst_ortho = std::max(worst_ortho, max_ortho);
    sr.pass = violations == 0 && max_ortho <= ortho_tol;
    if (sr.pass) ++good_seeds;
    rep.curves["min_adv_margin_by_seed"].push_back(
        {static_cast<double>(sr.seed), min_margin});
    rep.seeds.push_back(std::move(sr));
  }
  const double frac = static_cast<double>(good_seeds) / cfg.seed_count;
  rep.aggregates["fraction_separable_and_orthogonal"] = frac;
  rep.criteria.push_back(fraction_criterion("seed_fraction_adv_separable", frac,
                                            cfg.threshold("seed_fraction", 0.95),
                                            cfg.seed_count));
  rep.aggregates["max_ortho_leak"] = worst_ortho;
  rep.criteria.push_back(
      upper_criterion("projected_witness_orthogonality", worst_ortho, ortho_tol,
                      cfg.seed_count));
}

inline void run_large_eta(const ExperimentConfig& cfg, ExperimentReport& rep) {
  const double dd = static_cast<double>(cfg.d);
  const double median_cap = cfg.threshold("median_rel_cap", 10.0 * std::pow(dd, -0.25));
  const double acc_target = cfg.threshold("min_probe_accuracy", 0.99);
  double worst_median = 0.0, worst_acc = 1.0;
  for (std::size_t i = 0; i < cfg.seed_count; ++i) {
    Rng rng(cfg.base_seed + i);
    SeedResult sr;
    sr.seed = rng.seed();
    NetworkParams p = init_network(cfg.d, cfg.m, rng);
    LabeledDataset ds = make_two_cluster_dataset(cfg.d, cfg.n, cfg.separation, rng);
    // stream noises: keep only the adversarial example features and the
    // relative perturbation sizes, so n*d stays the memory footprint
    NoiseSet adv;
    adv.d = cfg.d;
    adv.fingerprint.seed = rng.seed();
    adv.fingerprint.spec = cfg.attack;
    adv.fingerprint.network_hash = network_hash(p);
    adv.records.reserve(cfg.n);
    std::vector<double> rel(cfg.n);
    for (std::size_t k = 0; k < cfg.n; ++k) {
      NoiseRecord rec = make_noise(p, ds.samples[k], cfg.attack, k);
      LabeledSample x_adv = adversarial_example(ds.samples[k], rec);
      double dist2 = 0.0;
      for (std::size_t j = 0; j < cfg.d; ++j) {
        const double dv = x_adv.x[j] - ds.samples[k].x[j];
        dist2 += dv * dv;
      }
      rel[k] = std::sqrt(dist2) / norm(ds.samples[k].x);
      NoiseRecord feat;
      feat.r = std::move(x_adv.x);
      feat.y = x_adv.y;
      feat.sample_id = k;
      feat.spec = cfg.attack;
      adv.records.push_back(std::move(feat));
    }
    sr.fingerprint = fingerprint_to_json(adv.fingerprint);
    std::vector<double> sorted_rel = rel;
    std::nth_element(sorted_rel.begin(), sorted_rel.begin() + sorted_rel.size() / 2,
                     sorted_rel.end());
    double median = sorted_rel[sorted_rel.size() / 2];
    if (sorted_rel.size() % 2 == 0) {
      const double hi = median;
      std::nth_element(sorted_rel.begin(), sorted_rel.begin() + sorted_rel.size() / 2 - 1,
                       sorted_rel.end());
      median = 0.5 * (hi + sorted_rel[sorted_rel.size() / 2 - 1]);
    }
    LinearProbe probe = train_probe(adv, 2, cfg.probe);
    const double acc = eval_probe(probe, adv);
    sr.metrics["median_rel_perturbation"] = median;
    sr.metrics["probe_train_acc"] = acc;
    sr.pass = median <= median_cap && acc >= acc_target;
    worst_median = std::max(worst_median, median);
    worst_acc = std::min(worst_acc, acc);

    std::sort(rel.begin(), rel.end());
    for (int q = 0; q <= 10; ++q) {
      const std::size_t idx =
          std::min(cfg.n - 1, static_cast<std::size_t>(q * (cfg.n - 1) / 10));
      rep.curves["rel_perturbation_deciles"].push_back(
          {static_cast<double>(q) / 10.0, rel[idx]});
    }
    rep.seeds.push_back(std::move(sr));
  }
  rep.aggregates["max_median_rel_perturbation"] = worst_median;
  rep.aggregates["min_probe_train_acc"] = worst_acc;
  rep.criteria.push_back(upper_criterion("median_relative_perturbation", worst_median,
                                         median_cap, cfg.seed_count));
  rep.criteria.push_back(fraction_criterion("probe_train_accuracy", worst_acc, acc_target,
                                            cfg.seed_count));
}

inline bool suite_wants(const ExperimentConfig& cfg, const std::string& name) {
  if (cfg.checks.empty()) return true;
  return std::find(cfg.checks.begin(), cfg.checks.end(), name) != cfg.checks.end();
}

inline void run_theory_suite(const ExperimentConfig& cfg, ExperimentReport& rep) {
  auto add = [&](CheckResult c) {
    rep.aggregates[c.name] = c.empirical;
    rep.criteria.push_back(std::move(c));
  };

  if (suite_wants(cfg, "independent_moments")) {
    TrialBatch tb;
    tb.d = 256;
    tb.m = 512;
    tb.trials = std::max<std::size_t>(cfg.trials, 10000);
    tb.base_seed = cfg.base_seed;
    auto [mean_check, var_check] = mc_independent_moments(tb);
    add(std::move(mean_check));
    add(std::move(var_check));
  }
  if (suite_wants(cfg, "conditioning_split")) {
    const std::size_t instances = 1000;
    double max_rel = 0.0;
    for (std::size_t t = 0; t < instances; ++t) {
      Rng rng(cfg.base_seed + 100 + t);
      NetworkParams p = init_network(128, 512, rng);
      Vector x = gaussian_vector(128, 1.0, rng);
      scale_in_place(x, std::sqrt(128.0) / norm(x));
      const double stat = dot(matvec_t(p.W, p.a), input_gradient(p, x));
      max_rel = std::max(max_rel,
                         conditioning_split_residual(p, x) / (1.0 + std::abs(stat)));
    }
    CheckResult c;
    c.name = "conditioning_split_residual";
    c.empirical = max_rel;
    c.bound = 1e-9;
    c.trials = instances;
    c.pass = max_rel <= c.bound;
    add(std::move(c));
  }
  if (suite_wants(cfg, "h_norm_tail")) {
    TrialBatch tb;
    tb.d = 64;
    tb.trials = 100000;
    tb.m = 64;
    tb.base_seed = cfg.base_seed + 200;
    CheckResult c64 = check_h_norm_tail(tb);
    c64.name += "_m64";
    add(std::move(c64));
    tb.m = 8;
    tb.base_seed = cfg.base_seed + 300;
    CheckResult c8 = check_h_norm_tail(tb);
    c8.name += "_m8";
    add(std::move(c8));
  }
  if (suite_wants(cfg, "inner_product_tail")) {
    TrialBatch tb;
    tb.d = 4096;
    tb.m = 1024;
    tb.trials = 10000;
    tb.base_seed = cfg.base_seed + 400;
    tb.constants["c2"] = 1.0 / 64.0;
    auto [plain, masked] = check_inner_product_tail(tb);
    add(std::move(plain));
    add(std::move(masked));
    TrialBatch loose;
    loose.d = 16;
    loose.m = 64;
    loose.trials = 10000;
    loose.base_seed = cfg.base_seed + 500;
    loose.constants["c2"] = 4.0;
    auto [lp, lm] = check_inner_product_tail(loose);
    lp.name += "_loose";
    lm.name += "_loose";
    add(std::move(lp));
    add(std::move(lm));
  }
  if (suite_wants(cfg, "chi_square_tail")) {
    const std::size_t draws = 100000;
    std::size_t cell = 0;
    for (std::size_t dof : {std::size_t{16}, std::size_t{64}, std::size_t{256}}) {
      for (double z : {0.5, 2.0}) {
        const TailSide side = z < 1.0 ? TailSide::lower : TailSide::upper;
        std::size_t hits = 0;
        Rng rng(cfg.base_seed + 600 + cell);
        for (std::size_t t = 0; t < draws; ++t) {
          double s = 0.0;
          for (std::size_t k = 0; k < dof; ++k) {
            const double g = rng.gaussian();
            s += g * g;
          }
          const double zd = z * static_cast<double>(dof);
          if (side == TailSide::lower ? s <= zd : s >= zd) ++hits;
        }
        CheckResult c;
        c.name = "chi_square_tail_dof" + std::to_string(dof) + "_z" +
                 (z < 1.0 ? std::string("05") : std::string("2"));
        c.trials = draws;
        c.empirical = static_cast<double>(hits) / static_cast<double>(draws);
        c.bound = chi_square_tail_bound(z, dof, side);
        c.std_error = check_detail::binom_se(c.empirical, draws);
        c.pass = c.empirical <=
                 std::min(1.0, c.bound) + 3.0 * check_detail::binom_se(c.empirical, draws);
        add(std::move(c));
        ++cell;
      }
    }
  }
  if (suite_wants(cfg, "margin_threshold")) {
    TrialBatch tb;
    tb.d = cfg.d;
    tb.m = cfg.m;
    tb.trials = cfg.trials;
    tb.base_seed = cfg.base_seed + 700;
    add(check_margin_threshold(tb));
  }
  if (suite_wants(cfg, "subexp_cross_term")) {
    TrialBatch tb;
    tb.d = cfg.d;
    tb.m = cfg.m;
    tb.trials = cfg.trials;
    tb.base_seed = cfg.base_seed + 800;
    add(check_subexp_sum_tail(tb));
  }
  if (suite_wants(cfg, "sparse_vector_bound")) {
    TrialBatch tb;
    tb.d = cfg.d;
    tb.m = cfg.m;
    tb.trials = cfg.trials;
    tb.base_seed = cfg.base_seed + 900;
    const double logm = std::log(static_cast<double>(tb.m));
    const std::size_t sparsity =
        std::max<std::size_t>(1, static_cast<std::size_t>(tb.m / (logm * logm)));
    add(check_sparse_vector_bound(tb, sparsity));
  }

  // one summary row so the per-seed table is never empty for a suite run
  SeedResult sr;
  sr.seed = cfg.base_seed;
  sr.pass = true;
  for (const CheckResult& c : rep.criteria) {
    sr.pass = sr.pass && c.pass;
    sr.metrics[c.name] = c.empirical;
  }
  rep.seeds.push_back(std::move(sr));
}

inline void run_train_and_probe(const ExperimentConfig& cfg, ExperimentReport& rep) {
  std::vector<AttackSpec> attacks = cfg.attacks;
  if (attacks.empty()) {
    AttackSpec g;
    g.method = AttackMethod::grad_l2;
    g.eta = 1.0;
    AttackSpec s;
    s.method = AttackMethod::sign_linf;
    s.eta = 1.0;
    s.norm = NormKind::linf;
    AttackSpec p5;
    p5.method = AttackMethod::pgd;
    p5.eta = 0.2;
    p5.epsilon = 0.5;
    p5.steps = 5;
    p5.norm = NormKind::linf;
    AttackSpec p10 = p5;
    p10.steps = 10;
    attacks = {g, s, p5, p10};
  }
  const std::array<const char*, 2> regimes = {"small", "large"};
  const std::array<double, 2> lrs = {cfg.lr_small, cfg.lr_large};

  std::size_t small_wins = 0;
  std::map<std::string, std::size_t> beats_raw;
  std::map<std::size_t, std::array<KahanSum, 2>> curve_sums;  // step -> per-regime acc sum
  for (std::size_t i = 0; i < cfg.seed_count; ++i) {
    Rng rng(cfg.base_seed + i);
    SeedResult sr;
    sr.seed = rng.seed();
    NetworkParams p0 = init_network(cfg.d, cfg.m, rng);
    LabeledDataset ds = make_two_cluster_dataset(cfg.d, cfg.n, cfg.separation, rng);
    NoiseSet raw = features_as_noise_set(ds);
    LinearProbe raw_probe = train_probe(raw, 2, cfg.probe);
    const double raw_acc = eval_probe(raw_probe, raw);
    sr.metrics["raw_probe_acc"] = raw_acc;

    std::array<double, 2> lead_acc{};
    for (std::size_t rgi = 0; rgi < 2; ++rgi) {
      TrainConfig tc = *cfg.train;
      tc.lr = lrs[rgi];
      tc.seed = sr.seed;
      std::vector<Snapshot> snaps;
      try {
        snaps = gd_train(p0, ds, tc);
      } catch (const std::exception& e) {
        throw std::runtime_error("seed " + std::to_string(sr.seed) + " (" + regimes[rgi] +
                                 " lr): " + e.what());
      }
      for (const Snapshot& snap : snaps) {
        NoiseSet ns = generate_noise_set(snap.params, ds, attacks.front(), rng);
        LinearProbe probe = train_probe(ns, 2, cfg.probe);
        const double acc = eval_probe(probe, ns);
        curve_sums[snap.step][rgi].add(acc);
        if (snap.step == snaps.back().step) lead_acc[rgi] = acc;
      }
      const Snapshot& last = snaps.back();
      sr.metrics[std::string(regimes[rgi]) + "_final_loss"] = last.loss;
      sr.metrics[std::string(regimes[rgi]) + "_dist_w_spectral"] = last.dist_w_spectral;
      for (const AttackSpec& a : attacks) {
        const std::string label = attack_label(a);
        double acc;
        if (&a == &attacks.front()) {
          acc = lead_acc[rgi];
        } else {
          NoiseSet ns = generate_noise_set(last.params, ds, a, rng);
          LinearProbe probe = train_probe(ns, 2, cfg.probe);
          acc = eval_probe(probe, ns);
        }
        sr.metrics[std::string(regimes[rgi]) + "_" + label + "_noise_acc"] = acc;
        if (acc >= raw_acc) ++beats_raw[std::string(regimes[rgi]) + "_" + label];
      }
    }
    const bool small_ge = lead_acc[0] >= lead_acc[1];
    sr.metrics["small_ge_large"] = small_ge ? 1.0 : 0.0;
    if (small_ge) ++small_wins;
    sr.pass = small_ge;
    rep.seeds.push_back(std::move(sr));
  }

  for (const auto& [step, sums] : curve_sums) {
    rep.curves["probe_acc_vs_step_small_lr"].push_back(
        {static_cast<double>(step), sums[0].value() / cfg.seed_count});
    rep.curves["probe_acc_vs_step_large_lr"].push_back(
        {static_cast<double>(step), sums[1].value() / cfg.seed_count});
  }
  const double nn = static_cast<double>(cfg.seed_count);
  const double frac_small = static_cast<double>(small_wins) / nn;
  rep.aggregates["fraction_small_lr_ge_large_lr"] = frac_small;
  rep.criteria.push_back(fraction_criterion("small_lr_probe_acc_ge_large_lr", frac_small,
                                            cfg.threshold("lr_order_fraction", 0.60),
                                            cfg.seed_count));
  for (std::size_t rgi = 0; rgi < 2; ++rgi)
    for (const AttackSpec& a : attacks) {
      const std::string key = std::string(regimes[rgi]) + "_" + attack_label(a);
      const double frac = static_cast<double>(beats_raw[key]) / nn;
      rep.aggregates["fraction_noise_ge_raw_" + key] = frac;
      rep.criteria.push_back(
          fraction_criterion("noise_acc_ge_raw_acc_" + key, frac,
                             cfg.threshold("noise_vs_raw_fraction", 0.90), cfg.seed_count));
    }
}

inline void run_ingest_and_probe(const ExperimentConfig& cfg, ExperimentReport& rep) {
  NoiseSet all = ingest_noise_csv(cfg.noise_csv, cfg.d);
  if (all.size() == 0) throw std::runtime_error("ingest_and_probe: no rows in " + cfg.noise_csv);
  std::size_t classes = cfg.probe_classes;
  bool pm_labels = true;
  int max_label = 0;
  for (const NoiseRecord& r : all.records) {
    if (r.y != 1 && r.y != -1) pm_labels = false;
    max_label = std::max(max_label, r.y);
  }
  if (classes == 0) classes = pm_labels ? 2 : static_cast<std::size_t>(max_label) + 1;

  const std::size_t n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(all.size())));
  NoiseSet train, test;
  train.d = test.d = all.d;
  train.fingerprint = test.fingerprint = all.fingerprint;
  for (std::size_t i = 0; i < all.size(); ++i)
    (i < n_train ? train : test).records.push_back(all.records[i]);

  LinearProbe probe = train_probe(train, classes, cfg.probe);
  SeedResult sr;
  sr.seed = cfg.base_seed;
  sr.fingerprint = fingerprint_to_json(all.fingerprint);
  sr.metrics["classes"] = static_cast<double>(classes);
  sr.metrics["n_train"] = static_cast<double>(train.size());
  sr.metrics["n_test"] = static_cast<double>(test.size());
  sr.metrics["probe_train_acc"] = eval_probe(probe, train);
  sr.metrics["probe_final_loss"] = probe.final_loss;
  if (test.size() > 0) sr.metrics["probe_test_acc"] = eval_probe(probe, test);
  sr.pass = true;
  rep.aggregates["probe_train_acc"] = sr.metrics["probe_train_acc"];
  if (test.size() > 0) rep.aggregates["probe_test_acc"] = sr.metrics["probe_test_acc"];
  rep.seeds.push_back(std::move(sr));
  rep.notes.push_back("external data: accuracies reported without pass criteria");
}

}  // namespace exphar_detail

// Runs the configured pipeline and returns the report without touching the
// filesystem. run_experiment wraps this and writes artifacts.
inline ExperimentReport compute_experiment(const ExperimentConfig& cfg) {
  {
    const std::vector<std::string> errs = cfg.validate();
    if (!errs.empty()) {
      std::string msg = "config invalid:";
      for (const std::string& e : errs) msg += "\n  - " + e;
      throw std::invalid_argument(msg);
    }
  }
  ExperimentReport rep;
  rep.config_echo = experiment_config_to_json(cfg);
  rep.rng_algorithm = Rng::algorithm();
  try {
    switch (cfg.kind) {
      case ExperimentKind::init_separability:
        exphar_detail::run_init_separability(cfg, rep);
        break;
      case ExperimentKind::ntk_separability:
        exphar_detail::run_ntk_separability(cfg, rep);
        break;
      case ExperimentKind::corollary_adv_examples:
        exphar_detail::run_corollary_adv_examples(cfg, rep);
        break;
      case ExperimentKind::large_eta:
        exphar_detail::run_large_eta(cfg, rep);
        break;
      case ExperimentKind::theory_suite:
        exphar_detail::run_theory_suite(cfg, rep);
        break;
      case ExperimentKind::train_and_probe:
        exphar_detail::run_train_and_probe(cfg, rep);
        break;
      case ExperimentKind::ingest_and_probe:
        exphar_detail::run_ingest_and_probe(cfg, rep);
        break;
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(to_string(cfg.kind) + ": " + e.what());
  }
  if (rep.seeds.empty()) rep.notes.push_back("no trials");
  bool pass = true;
  for (const CheckResult& c : rep.criteria) pass = pass && c.pass;
  rep.overall_pass = pass;
  for (const SeedResult& s : rep.seeds)
    for (const auto& [k, v] : s.metrics)
      if (!std::isfinite(v))
        throw std::runtime_error("report invariant: non-finite metric " + k + " at seed " +
                                 std::to_string(s.seed));
  return rep;
}

inline std::string resolve_output_dir(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("ADVSEP_OUTPUT_ROOT");
  const std::string base = root != nullptr && *root != '\0' ? root : "runs";
  return base + "/" + (cfg.name.empty() ? to_string(cfg.kind) : cfg.name);
}

namespace exphar_detail {

// regenerates the first seed's noise set by replaying the pipeline prefix;
// only kinds whose pipelines start with (network, dataset, noise) qualify
inline std::optional<NoiseSet> first_seed_noise(const ExperimentConfig& cfg) {
  Rng rng(cfg.base_seed);
  switch (cfg.kind) {
    case ExperimentKind::init_separability:
    case ExperimentKind::corollary_adv_examples: {
      NetworkParams p = init_network(cfg.d, cfg.m, rng);
      LabeledDataset ds = make_two_cluster_dataset(cfg.d, cfg.n, cfg.separation, rng);
      return generate_noise_set(p, ds, cfg.attack, rng);
    }
    case ExperimentKind::ntk_separability: {
      const double rW =
          cfg.radius_w >= 0.0 ? cfg.radius_w : 1.0 / std::sqrt(static_cast<double>(cfg.m));
      const double rA =
          cfg.radius_a >= 0.0 ? cfg.radius_a : 1.0 / std::sqrt(static_cast<double>(cfg.m));
      NetworkParams p0 = init_network(cfg.d, cfg.m, rng);
      NetworkParams p1 = ntk_ball_perturbation(p0, rW, rA, rng);
      LabeledDataset ds = make_two_cluster_dataset(cfg.d, cfg.n, cfg.separation, rng);
      return generate_noise_set(p1, ds, cfg.attack, rng);
    }
    default:
      return std::nullopt;
  }
}

}  // namespace exphar_detail

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentReport rep = compute_experiment(cfg);
  const std::string dir = resolve_output_dir(cfg);
  std::vector<std::string> paths = emit_report(rep, {"csv", "plotdata"}, dir);
  rep.artifacts = std::move(paths);
  if (cfg.dump_noise) {
    std::optional<NoiseSet> ns = exphar_detail::first_seed_noise(cfg);
    if (ns.has_value()) {
      const std::string npath = dir + "/noise_seed_" + std::to_string(cfg.base_seed) + ".csv";
      save_noise_csv(*ns, npath);
      rep.artifacts.push_back(npath);
    }
  }
  // the JSON report carries the artifact list, so it is written last
  for (const std::string& p : emit_report(rep, {"json"}, dir)) rep.artifacts.push_back(p);
  return rep;
}

struct VerifyResult {
  bool match = false;
  bool criteria_pass = false;
  std::vector<std::string> diffs;
};

inline VerifyResult verify_run(const std::string& run_dir) {
  std::ifstream in(run_dir + "/report.json");
  if (!in) throw std::runtime_error("verify_run: no report.json in " + run_dir);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("verify_run: bad report.json: " + std::string(e.what()));
  }
  ExperimentReport stored = report_from_json(j);
  ExperimentConfig cfg = experiment_config_from_json(stored.config_echo);
  ExperimentReport fresh = compute_experiment(cfg);

  VerifyResult v;
  v.criteria_pass = fresh.overall_pass;
  auto diff = [&](const std::string& what) { v.diffs.push_back(what); };
  if (stored.seeds.size() != fresh.seeds.size()) {
    diff("seed count: stored " + std::to_string(stored.seeds.size()) + " vs replay " +
         std::to_string(fresh.seeds.size()));
  } else {
    for (std::size_t i = 0; i < stored.seeds.size(); ++i) {
      if (stored.seeds[i].seed != fresh.seeds[i].seed)
        diff("seed order mismatch at index " + std::to_string(i));
      if (stored.seeds[i].pass != fresh.seeds[i].pass)
        diff("seed " + std::to_string(stored.seeds[i].seed) + ": pass flag differs");
      if (stored.seeds[i].metrics != fresh.seeds[i].metrics)
        diff("seed " + std::to_string(stored.seeds[i].seed) + ": metrics differ");
    }
  }
  if (stored.aggregates != fresh.aggregates) diff("aggregates differ");
  if (stored.criteria.size() != fresh.criteria.size()) {
    diff("criteria count differs");
  } else {
    for (std::size_t i = 0; i < stored.criteria.size(); ++i) {
      const CheckResult &a = stored.criteria[i], &b = fresh.criteria[i];
      if (a.name != b.name || a.empirical != b.empirical || a.bound != b.bound ||
          a.pass != b.pass)
        diff("criterion " + a.name + " differs");
    }
  }
  if (stored.curves != fresh.curves) diff("curves differ");
  if (stored.overall_pass != fresh.overall_pass) diff("overall pass flag differs");
  v.match = v.diffs.empty();
  return v;
}

}  // namespace advsep
