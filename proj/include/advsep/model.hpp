#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advsep/numerics.hpp"

namespace advsep {

// f(x) = a^T relu(W x), W is m x d with N(0,1/d) entries, a has N(0,1/m) entries.
struct NetworkParams {
  Matrix W;
  Vector a;
  std::size_t d = 0;
  std::size_t m = 0;
};

// One bit per hidden unit: 1 iff the pre-activation is strictly positive.
// relu'(0) is taken as 0.
struct ActivationPattern {
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return mask.size(); }
  std::size_t popcount() const {
    std::size_t c = 0;
    for (std::uint8_t b : mask) c += b;
    return c;
  }
};

struct LabeledSample {
  Vector x;
  int y = 1;  // -1 or +1
};

struct LabeledDataset {
  std::vector<LabeledSample> samples;
  bool norm_conditioned = false;

  std::size_t n() const { return samples.size(); }
  std::size_t dim() const { return samples.empty() ? 0 : samples.front().x.dim(); }
};

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

// log(1 + e^t) without overflow; -log sigmoid(z) = softplus(-z).
inline double softplus(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

inline NetworkParams init_network(std::size_t d, std::size_t m, Rng& rng) {
  if (d == 0 || m == 0) throw std::invalid_argument("init_network: zero dimension");
  // Two child streams so W and a are independent draws regardless of shapes.
  Rng stream_w(rng.next_u64());
  Rng stream_a(rng.next_u64());
  NetworkParams p;
  p.W = gaussian_matrix(m, d, 1.0 / static_cast<double>(d), stream_w);
  p.a = gaussian_vector(m, 1.0 / static_cast<double>(m), stream_a);
  p.d = d;
  p.m = m;
  return p;
}

inline void check_input_dim(const NetworkParams& p, const Vector& x, const char* who) {
  if (x.dim() != p.d) throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

inline double forward(const NetworkParams& p, const Vector& x) {
  check_input_dim(p, x, "forward");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.m; ++k) {
    const double* row = p.W.row(k);
    double h = 0.0;
    for (std::size_t j = 0; j < p.d; ++j) h += row[j] * x[j];
    if (h > 0.0) acc += p.a[k] * h;
  }
  return acc;
}

inline ActivationPattern activation_pattern(const NetworkParams& p, const Vector& x) {
  check_input_dim(p, x, "activation_pattern");
  ActivationPattern pat;
  pat.mask.resize(p.m);
  for (std::size_t k = 0; k < p.m; ++k) {
    const double* row = p.W.row(k);
    double h = 0.0;
    for (std::size_t j = 0; j < p.d; ++j) h += row[j] * x[j];
    pat.mask[k] = h > 0.0 ? 1 : 0;
  }
  return pat;
}

// grad f(x) = W^T D_x a
inline Vector input_gradient(const NetworkParams& p, const Vector& x) {
  check_input_dim(p, x, "input_gradient");
  Vector g(p.d);
  for (std::size_t k = 0; k < p.m; ++k) {
    const double* row = p.W.row(k);
    double h = 0.0;
    for (std::size_t j = 0; j < p.d; ++j) h += row[j] * x[j];
    if (h > 0.0) {
      const double ak = p.a[k];
      for (std::size_t j = 0; j < p.d; ++j) g[j] += ak * row[j];
    }
  }
  return g;
}

inline double sample_loss(const NetworkParams& p, const LabeledSample& s, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_loss: temperature must be > 0");
  const double f = forward(p, s.x);
  return softplus(-static_cast<double>(s.y) * f / temperature);
}

inline LabeledDataset condition_norms(const LabeledDataset& ds) {
  LabeledDataset out = ds;
  const double target = std::sqrt(static_cast<double>(ds.dim()));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double nn = norm(out.samples[i].x);
    if (nn == 0.0)
      throw std::invalid_argument("condition_norms: zero-vector sample at index " +
                                  std::to_string(i));
    scale_in_place(out.samples[i].x, target / nn);
  }
  out.norm_conditioned = true;
  return out;
}

// Two Gaussian clusters at +/- separation * u on the unit direction u, labels
// matching the cluster sign, then conditioned to ||x|| = sqrt(d).
inline LabeledDataset make_two_cluster_dataset(std::size_t d, std::size_t n, double separation,
                                               Rng& rng) {
  if (d == 0 || n == 0) throw std::invalid_argument("make_two_cluster_dataset: zero size");
  Vector u = gaussian_vector(d, 1.0, rng);
  scale_in_place(u, 1.0 / norm(u));
  LabeledDataset ds;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = (rng.next_u64() & 1u) ? 1 : -1;
    Vector x = gaussian_vector(d, 1.0, rng);
    for (std::size_t j = 0; j < d; ++j) x[j] += separation * static_cast<double>(y) * u[j];
    ds.samples.push_back({std::move(x), y});
  }
  return condition_norms(ds);
}

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_finite(const std::string& tok, std::size_t row, std::size_t col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("csv row " + std::to_string(row) + ", column " + std::to_string(col) +
                             ": not a number: '" + tok + "'");
  }
  while (used < tok.size() && (tok[used] == ' ' || tok[used] == '\t')) ++used;
  if (used != tok.size())
    throw std::runtime_error("csv row " + std::to_string(row) + ", column " + std::to_string(col) +
                             ": trailing junk in '" + tok + "'");
  if (!std::isfinite(v))
    throw std::runtime_error("csv row " + std::to_string(row) + ", column " + std::to_string(col) +
                             ": non-finite value");
  return v;
}

}  // namespace csv_detail

// CSV schema: header "x_1,...,x_d,y", one sample per row, y in {-1,+1}.
inline LabeledDataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_dataset_csv: empty file " + path);
  const std::vector<std::string> header = csv_detail::split_line(line);
  if (header.size() < 2 || header.back() != "y")
    throw std::runtime_error("load_dataset_csv: header must be x_1..x_d,y");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "x_" + std::to_string(j + 1))
      throw std::runtime_error("load_dataset_csv: header column " + std::to_string(j + 1) +
                               " must be x_" + std::to_string(j + 1));
  LabeledDataset ds;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::vector<std::string> toks = csv_detail::split_line(line);
    if (toks.size() != d + 1)
      throw std::runtime_error("load_dataset_csv: row " + std::to_string(row) + " has " +
                               std::to_string(toks.size()) + " fields, expected " +
                               std::to_string(d + 1));
    Vector x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = csv_detail::parse_finite(toks[j], row, j + 1);
    const double yv = csv_detail::parse_finite(toks[d], row, d + 1);
    if (yv != 1.0 && yv != -1.0)
      throw std::runtime_error("load_dataset_csv: row " + std::to_string(row) +
                               ": label must be -1 or +1");
    ds.samples.push_back({std::move(x), yv > 0 ? 1 : -1});
  }
  if (ds.samples.empty()) throw std::runtime_error("load_dataset_csv: no samples in " + path);
  return ds;
}

inline void save_dataset_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset_csv: cannot open " + path);
  const std::size_t d = ds.dim();
  for (std::size_t j = 0; j < d; ++j) out << "x_" << (j + 1) << ",";
  out << "y\n";
  char buf[32];
  for (const LabeledSample& s : ds.samples) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", s.x[j]);
      out << buf << ",";
    }
    out << s.y << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset_csv: write failed for " + path);
}

}  // namespace advsep
