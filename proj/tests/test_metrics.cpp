#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvood/metrics.hpp"
#include "mvood/random.hpp"

#include <algorithm>
#include <cmath>

using namespace mvood;

namespace {

double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

// Two-sided p by enumerating every sign assignment over O(n^2) mid-ranks.
double enumeration_p(const std::vector<double>& a, const std::vector<double>& b, double* w_out = nullptr) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1) / 2;
    total += rank[i];
  }
  double wp = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) wp += rank[i];
  const double w = std::min(wp, total - wp);
  if (w_out) *w_out = w;
  long extreme = 0;
  for (unsigned long mask = 0; mask < (1ul << n); ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1ul) s += rank[i];
    extreme += std::min(s, total - s) <= w + 1e-9;
  }
  return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(1ul << n));
}

double type7(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1) * p;
  const auto lo = static_cast<std::size_t>(h);
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

EvalSet random_set(Rng& rng, std::size_t n, double positive_rate = 0.2) {
  EvalSet e;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i < 2 ? static_cast<int>(i) : rng.uniform() < positive_rate;
    e.labels.push_back(y);
    e.scores.push_back(std::clamp(rng.uniform() * 0.7 + 0.3 * y, 0.0, 1.0));
    e.predictions.push_back(e.scores.back() > 0.5);
  }
  return e;
}

}  // namespace

TEST_CASE("binary metrics from a hand confusion matrix") {
  // TP=2 FP=1 FN=1 TN=6
  const std::vector<int> y{1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<int> p{1, 1, 0, 1, 0, 0, 0, 0, 0, 0};
  const auto m = binary_metrics(p, y);
  CHECK(m.tp == 2);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);
  CHECK(m.tn == 6);
  CHECK(m.precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall == doctest::Approx(2.0 / 3.0));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(m.accuracy == doctest::Approx(0.8));
  CHECK(m.specificity == doctest::Approx(6.0 / 7.0));
}

TEST_CASE("binary metrics: perfect, degenerate and invalid") {
  const std::vector<int> y{0, 1, 1, 0};
  const auto perfect = binary_metrics(y, y);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);
  const std::vector<int> none{0, 0, 0, 0};
  const auto neg = binary_metrics(none, y);
  CHECK(neg.recall == 0.0);
  CHECK(neg.precision == 0.0);
  CHECK(neg.undefined_precision);
  CHECK_FALSE(neg.undefined_recall);
  CHECK_THROWS(binary_metrics(std::vector<int>{}, std::vector<int>{}));
  CHECK_THROWS(binary_metrics(std::vector<int>{0, 1}, std::vector<int>{0}));
}

TEST_CASE("macro_auc examples") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(macro_auc(s, y) == doctest::Approx(0.75));
  CHECK(pair_auc(s, y) == 0.75);
  CHECK(macro_auc(std::vector<double>{0.1, 0.2, 0.9, 0.95}, y) == 1.0);
  CHECK(macro_auc(std::vector<double>(4, 0.3), y) == 0.5);
  CHECK_THROWS(macro_auc(s, std::vector<int>{1, 1, 1, 1}));
}

TEST_CASE("macro_auc against the pair-counting oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10) / 10;  // coarse grid forces ties
      y[i] = i < 2 ? static_cast<int>(i) : rng.uniform() < 0.4;
    }
    const double oracle = pair_auc(s, y);
    CHECK(macro_auc(s, y) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(macro_auc(s, y, ScoreKind::Raw) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(binary_auc(s, y) == doctest::Approx(oracle).epsilon(1e-12));
    // strictly increasing transform
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3 * s[i]) - 7;
    CHECK(macro_auc(t, y, ScoreKind::Raw) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon: a > b elementwise, n = 6") {
  const std::vector<double> a{2, 3, 4, 5, 6, 7}, b{1, 1, 1, 1, 1, 1};
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.w == 0.0);
  CHECK(r.exact);
  CHECK(r.p_value == 0.03125);
  CHECK(r.n == 6);
}

TEST_CASE("wilcoxon: degenerate and short inputs") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  try {
    wilcoxon_signed_rank(a, a);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("degenerate comparison") != std::string::npos);
  }
  CHECK_THROWS(wilcoxon_signed_rank(std::vector<double>{1, 2, 3}, std::vector<double>{0, 0, 0}));
  CHECK_THROWS(wilcoxon_signed_rank(a, std::vector<double>{1, 2}));
}

TEST_CASE("wilcoxon exact p against full enumeration") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + rng.index(8);  // 5..12
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::round(rng.uniform(-3, 3) * 2) / 2;  // half-integers give ties and zeros
      b[i] = std::round(rng.uniform(-3, 3) * 2) / 2;
    }
    long nonzero = 0;
    for (std::size_t i = 0; i < n; ++i) nonzero += a[i] != b[i];
    if (nonzero < 5) continue;
    double w = 0;
    const double p = enumeration_p(a, b, &w);
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(r.w == w);
    CHECK(r.p_value == doctest::Approx(p).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon exact and normal approximation agree at n = 25") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> a(25), b(25);
    for (std::size_t i = 0; i < 25; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform() + 0.1;
    }
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(std::abs(r.p_value - wilcoxon_normal_p(a, b)) <= 0.01);
  }
  std::vector<double> a(30), b(30);
  Rng rng(99);
  for (std::size_t i = 0; i < 30; ++i) a[i] = rng.uniform(), b[i] = rng.uniform();
  const auto big = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(big.exact);
  CHECK(big.p_value == wilcoxon_normal_p(a, b));
}

TEST_CASE("bootstrap indices are stratified and seed-determined") {
  Rng rng(3);
  const EvalSet e = random_set(rng, 60);
  const long pos = std::count(e.labels.begin(), e.labels.end(), 1);
  for (int r = 0; r < 20; ++r) {
    const auto idx = bootstrap_indices(e.labels, 5, r);
    CHECK(idx.size() == e.labels.size());
    long p = 0;
    for (auto i : idx) p += e.labels[i];
    CHECK(p == pos);
    CHECK(idx == bootstrap_indices(e.labels, 5, r));
  }
  CHECK(bootstrap_indices(e.labels, 5, 0) != bootstrap_indices(e.labels, 6, 0));
}

TEST_CASE("bootstrap CI matches a reference re-implementation") {
  Rng rng(4);
  const EvalSet e = random_set(rng, 300, 0.1);
  BootstrapConfig cfg;
  cfg.seed = 17;
  const MetricFn auc = [](const EvalSet& s) { return macro_auc(s.scores, s.labels); };
  const auto r = bootstrap_ci(auc, e, cfg);
  REQUIRE(r.replicates.size() == 100);

  // reference: the same per-replicate seed stream, sampling by class
  std::vector<double> ref;
  std::vector<std::size_t> neg, pos;
  for (std::size_t i = 0; i < e.labels.size(); ++i) (e.labels[i] ? pos : neg).push_back(i);
  for (int k = 0; k < 100; ++k) {
    Rng g(derive_seed(17, static_cast<std::uint64_t>(k)));
    std::vector<double> s;
    std::vector<int> y;
    for (const auto* cls : {&neg, &pos})
      for (std::size_t j = 0; j < cls->size(); ++j) {
        const auto i = (*cls)[g.index(cls->size())];
        s.push_back(e.scores[i]);
        y.push_back(e.labels[i]);
      }
    ref.push_back(pair_auc(s, y));
  }
  for (int k = 0; k < 100; ++k) CHECK(r.replicates[k] == doctest::Approx(ref[k]).epsilon(1e-12));
  CHECK(r.ci_low == doctest::Approx(type7(ref, 0.025)).epsilon(1e-12));
  CHECK(r.ci_high == doctest::Approx(type7(ref, 0.975)).epsilon(1e-12));
  const double median = type7(r.replicates, 0.5);
  CHECK(r.ci_low <= median);
  CHECK(median <= r.ci_high);
  CHECK(r.point == doctest::Approx(pair_auc(e.scores, e.labels)));

  const auto again = bootstrap_ci(auc, e, cfg);
  CHECK(again.replicates == r.replicates);
  const auto flat = bootstrap_ci([](const EvalSet&) { return 0.42; }, e, cfg);
  CHECK(flat.ci_low == 0.42);
  CHECK(flat.ci_high == 0.42);
}

TEST_CASE("bootstrap config validation") {
  BootstrapConfig cfg;
  cfg.ci_level = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = BootstrapConfig{};
  cfg.n_replicates = 1;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("compare_models") {
  Rng rng(5);
  const EvalSet e = random_set(rng, 200);
  BootstrapConfig cfg;
  const auto a = evaluate_model("a", e, cfg);
  CHECK(a.metrics.size() == metric_names().size());
  CHECK(a.metrics.at("macro_auc").replicates.size() == 100);
  CHECK_THROWS(compare_models(a, a, cfg));

  auto b = a;
  b.name = "b";
  for (auto& x : b.metrics.at("macro_auc").replicates) x += 1.0;
  const auto c = compare_models(a, b, cfg);
  CHECK(c.significant);
  CHECK(c.test.p_value < 1e-3);
  CHECK(c.test.w == 0.0);

  auto shorter = b;
  shorter.metrics.at("macro_auc").replicates.pop_back();
  CHECK_THROWS(compare_models(a, shorter, cfg));
}

TEST_CASE("report JSON roundtrip and svg") {
  Rng rng(6);
  const auto r = evaluate_model("svae", random_set(rng, 80), BootstrapConfig{});
  const auto back = eval_report_from_json(to_json(r));
  CHECK(back.name == "svae");
  CHECK(back.n_samples == r.n_samples);
  for (const auto& [name, m] : r.metrics) {
    CHECK(back.metrics.at(name).replicates == m.replicates);
    CHECK(back.metrics.at(name).ci_low == m.ci_low);
  }
  const std::string svg = bootstrap_svg({r, back});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("svae") != std::string::npos);
}
