#include <catch2/catch_amalgamated.hpp>

#include "advsep/separability.hpp"

using namespace advsep;

namespace {

AttackSpec gl2() {
  AttackSpec s;
  s.method = AttackMethod::grad_l2;
  s.eta = 1.0;
  return s;
}

NoiseSet set_of(std::vector<NoiseRecord> recs, std::size_t d) {
  NoiseSet ns;
  ns.records = std::move(recs);
  ns.d = d;
  return ns;
}

NoiseRecord rec_of(std::vector<double> r, int y) {
  NoiseRecord rec;
  rec.r = Vector(std::move(r));
  rec.y = y;
  return rec;
}

// Plain gradient-descent logistic regression, used as an independent oracle
// for the probe.
double oracle_logreg_train_acc(const NoiseSet& ns, int steps, double lr) {
  const std::size_t d = ns.d, n = ns.size();
  std::vector<double> w(d + 1, 0.0);
  for (int t = 0; t < steps; ++t) {
    std::vector<double> g(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = w[d];
      for (std::size_t j = 0; j < d; ++j) z += w[j] * ns.records[i].r[j];
      const double target = ns.records[i].y > 0 ? 1.0 : 0.0;
      const double coeff = (stable_sigmoid(z) - target) / static_cast<double>(n);
      for (std::size_t j = 0; j < d; ++j) g[j] += coeff * ns.records[i].r[j];
      g[d] += coeff;
    }
    for (std::size_t j = 0; j <= d; ++j) w[j] -= lr * g[j];
  }
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = w[d];
    for (std::size_t j = 0; j < d; ++j) z += w[j] * ns.records[i].r[j];
    if ((z > 0.0) == (ns.records[i].y > 0)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("theoretical_witness") {
  SECTION("tiny explicit case") {
    NetworkParams p;
    p.d = 3;
    p.m = 1;
    p.W = Matrix(1, 3);
    p.W(0, 0) = 1.0;
    p.a = Vector(1, 1.0);
    Witness w = theoretical_witness(p);
    REQUIRE(w.origin == WitnessOrigin::theoretical);
    REQUIRE(w.v[0] == -1.0);
    REQUIRE(w.v[1] == 0.0);
    REQUIRE(w.v[2] == 0.0);
  }
  SECTION("norm concentrates near 1 at d=256, m=1024") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng r(300 + seed);
      NetworkParams p = init_network(256, 1024, r);
      const double nn = norm(theoretical_witness(p).v);
      REQUIRE(nn >= 0.7);
      REQUIRE(nn <= 1.3);
    }
  }
}

TEST_CASE("theoretical witness margin event at init", "[heavy]") {
  // One grad_l2 noise per seed at d=512, m=2048; the signed margin must be
  // positive in >= 99% of 1000 seeds.
  std::size_t positive = 0;
  const std::size_t seeds = 1000;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng r(5000 + seed);
    NetworkParams p = init_network(512, 2048, r);
    LabeledDataset ds = make_two_cluster_dataset(512, 1, 1.0, r);
    Rng g(6000 + seed);
    NoiseSet ns = generate_noise_set(p, ds, gl2(), g);
    if (margins(ns, theoretical_witness(p)).min_margin > 0.0) ++positive;
  }
  REQUIRE(positive >= 990);
}

TEST_CASE("projected_witness") {
  SECTION("single axis datum zeroes one coordinate") {
    Rng r(9);
    NetworkParams p = init_network(6, 12, r);
    LabeledDataset ds;
    Vector e1(6);
    e1[0] = std::sqrt(6.0);
    ds.samples.push_back({e1, 1});
    Witness w = projected_witness(p, ds);
    Vector base = matvec_t(p.W, p.a);
    REQUIRE(w.origin == WitnessOrigin::projected);
    REQUIRE(std::abs(w.v[0]) <= 1e-12);
    for (std::size_t j = 1; j < 6; ++j) REQUIRE(w.v[j] == Catch::Approx(-base[j]).epsilon(1e-12));
  }
  SECTION("orthogonality to every datum") {
    Rng r(11);
    NetworkParams p = init_network(64, 256, r);
    LabeledDataset ds = make_two_cluster_dataset(64, 20, 1.0, r);
    Witness w = projected_witness(p, ds);
    const double cap = 1e-8 * norm(w.v) * 8.0;
    for (const LabeledSample& s : ds.samples) REQUIRE(std::abs(dot(w.v, s.x)) <= cap);
  }
  SECTION("full-span data is rejected") {
    Rng r(13);
    NetworkParams p = init_network(4, 8, r);
    LabeledDataset ds = make_two_cluster_dataset(4, 12, 0.5, r);
    REQUIRE_THROWS_AS(projected_witness(p, ds), std::invalid_argument);
  }
  SECTION("separates adversarial examples at desk scale") {
    // d >> n regime: margins of x + eta r against v' stay positive.
    std::size_t good = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng r(700 + seed);
      NetworkParams p = init_network(128, 512, r);
      LabeledDataset ds = make_two_cluster_dataset(128, 10, 1.0, r);
      Rng g(800 + seed);
      NoiseSet ns = generate_noise_set(p, ds, gl2(), g);
      Witness w = projected_witness(p, ds);
      bool all_pos = true;
      for (std::size_t i = 0; i < ds.n(); ++i) {
        LabeledSample adv = adversarial_example(ds.samples[i], ns.records[i]);
        if (!(static_cast<double>(adv.y) * dot(w.v, adv.x) > 0.0)) all_pos = false;
      }
      if (all_pos) ++good;
    }
    REQUIRE(good >= 4);
  }
}

TEST_CASE("margins") {
  SECTION("aligned and anti-aligned single records") {
    Witness w{Vector(std::vector<double>{2.0, 0.0}), WitnessOrigin::theoretical};
    NoiseSet pos = set_of({rec_of({2.0, 0.0}, 1)}, 2);
    MarginReport mp = margins(pos, w);
    REQUIRE(mp.separable);
    REQUIRE(mp.min_margin == Catch::Approx(4.0));

    NoiseSet neg = set_of({rec_of({-2.0, 0.0}, 1)}, 2);
    MarginReport mn = margins(neg, w);
    REQUIRE_FALSE(mn.separable);
    REQUIRE(mn.violations == 1);
  }
  SECTION("scale invariance of the verdict") {
    Rng r(15);
    NetworkParams p = init_network(32, 64, r);
    LabeledDataset ds = make_two_cluster_dataset(32, 30, 1.0, r);
    Rng g(16);
    NoiseSet ns = generate_noise_set(p, ds, gl2(), g);
    Witness w = theoretical_witness(p);
    MarginReport base = margins(ns, w);
    Witness scaled{w.v, w.origin};
    scale_in_place(scaled.v, 7.5);
    MarginReport rep = margins(ns, scaled);
    REQUIRE(rep.separable == base.separable);
    REQUIRE(rep.violations == base.violations);
    for (std::size_t i = 0; i < rep.margins.size(); ++i)
      REQUIRE((rep.margins[i] > 0.0) == (base.margins[i] > 0.0));
  }
  SECTION("unsigned margin statistic clears 1/32 at d=512, m=2048") {
    std::size_t seeds_ok = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng r(900 + seed);
      NetworkParams p = init_network(512, 2048, r);
      LabeledDataset ds = make_two_cluster_dataset(512, 200, 1.0, r);
      Vector wta = matvec_t(p.W, p.a);
      bool all_above = true;
      for (const LabeledSample& s : ds.samples) {
        const double stat = dot(wta, input_gradient(p, s.x));  // a^T W W^T D_x a
        if (!(stat > 1.0 / 32.0)) all_above = false;
      }
      if (all_above) ++seeds_ok;
    }
    REQUIRE(seeds_ok == 3);
  }
}

TEST_CASE("perceptron_decide") {
  SECTION("contradictory records stay undecided") {
    NoiseSet ns = set_of({rec_of({1.0, 0.0}, 1), rec_of({1.0, 0.0}, -1)}, 2);
    PerceptronDecision dec = perceptron_decide(ns, 50);
    REQUIRE_FALSE(dec.separable);
    REQUIRE_FALSE(dec.witness.has_value());
    REQUIRE(dec.epochs_used == 50);
  }
  SECTION("margin-half case certifies within the perceptron bound") {
    const double s3 = std::sqrt(3.0);
    NoiseSet ns = set_of({rec_of({0.5, s3 / 2.0}, 1), rec_of({0.5, -s3 / 2.0}, 1),
                          rec_of({-0.5, s3 / 2.0}, -1)},
                         2);
    PerceptronDecision dec = perceptron_decide(ns, 6);
    REQUIRE(dec.separable);
    REQUIRE(dec.mistakes <= 4);
    REQUIRE(margins(ns, *dec.witness).violations == 0);
  }
  SECTION("agrees with the theoretical witness on an init-regime set") {
    Rng r(17);
    NetworkParams p = init_network(512, 2048, r);
    LabeledDataset ds = make_two_cluster_dataset(512, 200, 1.0, r);
    Rng g(18);
    NoiseSet ns = generate_noise_set(p, ds, gl2(), g);
    REQUIRE(margins(ns, theoretical_witness(p)).violations == 0);
    PerceptronDecision dec = perceptron_decide(ns, 10000);
    REQUIRE(dec.separable);
    REQUIRE(dec.witness->origin == WitnessOrigin::perceptron);
    MarginReport rep = margins(ns, *dec.witness);
    REQUIRE(rep.violations == 0);
    REQUIRE(rep.min_margin > 0.0);
  }
  SECTION("zero noise vector can never be certified") {
    NoiseSet ns = set_of({rec_of({0.0, 0.0}, 1), rec_of({1.0, 0.0}, 1)}, 2);
    PerceptronDecision dec = perceptron_decide(ns, 20);
    REQUIRE_FALSE(dec.separable);
  }
  SECTION("input validation") {
    NoiseSet ns = set_of({rec_of({1.0}, 1)}, 1);
    REQUIRE_THROWS_AS(perceptron_decide(ns, 0), std::invalid_argument);
    NoiseSet empty;
    empty.d = 1;
    REQUIRE_THROWS_AS(perceptron_decide(empty, 5), std::invalid_argument);
  }
}

TEST_CASE("train_probe and eval_probe on toy data") {
  SECTION("separable clusters reach 100% train accuracy") {
    Rng r(19);
    std::vector<NoiseRecord> recs;
    for (int i = 0; i < 40; ++i) {
      Vector v = gaussian_vector(8, 0.05, r);
      const int y = i % 2 ? 1 : -1;
      v[0] += static_cast<double>(y);  // margin ~1 along the first axis
      recs.push_back(rec_of(std::vector<double>(v.e), y));
    }
    NoiseSet ns = set_of(std::move(recs), 8);
    LinearProbe probe = train_probe(ns, 2);
    REQUIRE(eval_probe(probe, ns) == 1.0);
    REQUIRE(probe.final_loss < 0.1);
    REQUIRE(probe.iterations_run <= 50);
  }
  SECTION("random labels on gaussian noise stay near chance") {
    Rng r(20);
    std::vector<NoiseRecord> recs;
    for (int i = 0; i < 1000; ++i) {
      Vector v = gaussian_vector(50, 1.0, r);
      recs.push_back(rec_of(std::vector<double>(v.e), (r.next_u64() & 1) ? 1 : -1));
    }
    NoiseSet ns = set_of(std::move(recs), 50);
    LinearProbe probe = train_probe(ns, 2);
    const double acc = eval_probe(probe, ns);
    REQUIRE(acc < 0.75);
    const double oracle = oracle_logreg_train_acc(ns, 400, 2.0);
    REQUIRE(oracle < 0.75);
    REQUIRE(std::abs(acc - oracle) < 0.10);
  }
  SECTION("degenerate single-class input is rejected") {
    NoiseSet ns = set_of({rec_of({1.0}, 1), rec_of({2.0}, 1)}, 1);
    REQUIRE_THROWS_AS(train_probe(ns, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(train_probe(ns, 1), std::invalid_argument);
  }
  SECTION("zero-weight probe scores 0.5 on a balanced set via tie-break") {
    LinearProbe zero;
    zero.classes = 2;
    zero.weights = Matrix(2, 3);
    zero.biases = Vector(2);
    std::vector<NoiseRecord> recs;
    for (int i = 0; i < 10; ++i) recs.push_back(rec_of({1.0 * i, 2.0, 3.0}, i < 5 ? -1 : 1));
    NoiseSet ns = set_of(std::move(recs), 3);
    REQUIRE(eval_probe(zero, ns) == 0.5);
  }
  SECTION("eval_probe is permutation invariant") {
    Rng r(21);
    std::vector<NoiseRecord> recs;
    for (int i = 0; i < 30; ++i) {
      Vector v = gaussian_vector(6, 1.0, r);
      recs.push_back(rec_of(std::vector<double>(v.e), i % 2 ? 1 : -1));
    }
    NoiseSet ns = set_of(std::move(recs), 6);
    LinearProbe probe = train_probe(ns, 2);
    const double base = eval_probe(probe, ns);
    std::reverse(ns.records.begin(), ns.records.end());
    REQUIRE(eval_probe(probe, ns) == base);
  }
  SECTION("multiclass labels route by index and reject out-of-range") {
    Rng r(22);
    std::vector<NoiseRecord> recs;
    for (int i = 0; i < 60; ++i) {
      Vector v = gaussian_vector(5, 0.05, r);
      const int y = i % 3;
      v[static_cast<std::size_t>(y)] += 2.0;
      recs.push_back(rec_of(std::vector<double>(v.e), y));
    }
    NoiseSet ns = set_of(std::move(recs), 5);
    LinearProbe probe = train_probe(ns, 3);
    REQUIRE(eval_probe(probe, ns) >= 0.95);
    recs.clear();
    recs.push_back(rec_of({1.0}, 5));
    recs.push_back(rec_of({1.0}, 0));
    NoiseSet bad = set_of(std::move(recs), 1);
    REQUIRE_THROWS_AS(train_probe(bad, 3), std::invalid_argument);
  }
}

TEST_CASE("probe fits init-regime noises perfectly and generalizes", "[heavy]") {
  Rng r(23);
  NetworkParams p = init_network(512, 2048, r);
  LabeledDataset train_ds = make_two_cluster_dataset(512, 300, 1.0, r);
  LabeledDataset test_ds = make_two_cluster_dataset(512, 300, 1.0, r);
  Rng g1(24), g2(25);
  NoiseSet train = generate_noise_set(p, train_ds, gl2(), g1);
  NoiseSet test = generate_noise_set(p, test_ds, gl2(), g2);
  LinearProbe probe = train_probe(train, 2);
  REQUIRE(eval_probe(probe, train) == 1.0);
  REQUIRE(eval_probe(probe, test) >= 0.99);
}
