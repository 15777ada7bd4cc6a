#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvood/ood.hpp"
#include "mvood/pipeline.hpp"
#include "mvood/training.hpp"

#include <algorithm>
#include <cmath>

using namespace mvood;

namespace {

PipelineData small_cohort(int patients, std::uint64_t seed) {
  PhantomSpec spec;
  spec.n_patients = patients;
  spec.seed = seed;
  SplitConfig split;
  split.seed = seed;
  const SplitResult r = stratified_patient_split(phantom_slices(spec, PreprocessConfig{}), split);
  std::vector<SliceSample> tagged;
  for (SplitName n : {SplitName::Train, SplitName::Tune, SplitName::Eval})
    for (auto& s : r.merged(n)) tagged.push_back(std::move(s));
  return group_by_split(tagged);
}

VAEConfig small_model(bool multi_view) {
  VAEConfig cfg;
  cfg.channels = {4, 8, 8};
  cfg.latent_dim = 8;
  cfg.beta = 1e-3;
  cfg.multi_view = multi_view;
  return cfg;
}

ModelCheckpoint untrained(bool multi_view) {
  const VAEConfig cfg = small_model(multi_view);
  return {cfg, init_vae_params<float>(cfg, 1)};
}

// Sort-and-interpolate quantile, independent of the library's.
double type7(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1) * p;
  const auto lo = static_cast<std::size_t>(h);
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

}  // namespace

TEST_CASE("iqr_threshold on [1,2,3,4]") {
  const std::vector<double> s{1, 2, 3, 4};
  const auto t = iqr_threshold(s);
  CHECK(t.q1 == 1.75);
  CHECK(t.q3 == 3.25);
  CHECK(t.iqr == 1.5);
  CHECK(t.threshold == 5.5);
}

TEST_CASE("iqr_threshold: constant scores and too few scores") {
  const std::vector<double> c(7, 0.25);
  const auto t = iqr_threshold(c);
  CHECK(t.iqr == 0.0);
  CHECK(t.threshold == 0.25);
  CHECK_THROWS(iqr_threshold(std::vector<double>{1, 2, 3}));
}

TEST_CASE("iqr_threshold matches the quantile oracle and is permutation invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(4 + rng.index(30));
    for (auto& x : s) x = rng.uniform(0, 2);
    const auto t = iqr_threshold(s);
    const double q1 = type7(s, 0.25), q3 = type7(s, 0.75);
    CHECK(t.q1 == doctest::Approx(q1).epsilon(1e-14));
    CHECK(t.q3 == doctest::Approx(q3).epsilon(1e-14));
    CHECK(t.threshold == doctest::Approx(q3 + 1.5 * (q3 - q1)).epsilon(1e-14));
    CHECK(t.q1 <= t.q3);
    CHECK(t.threshold >= t.q3);

    auto shuffled = s;
    rng.shuffle(shuffled);
    CHECK(iqr_threshold(shuffled).threshold == t.threshold);

    auto more = s;
    more.push_back(t.q3 + rng.uniform(0, 100));
    const auto u = iqr_threshold(more);
    CHECK(u.q3 >= t.q3);
    CHECK(u.q1 >= t.q1);
  }
}

TEST_CASE("the fence itself is not monotone under an added high score") {
  // q1 can rise faster than q3: [0,1,1,1] -> fence 1.375; adding 2 -> fence 1.0
  const auto before = iqr_threshold(std::vector<double>{0, 1, 1, 1});
  const auto after = iqr_threshold(std::vector<double>{0, 1, 1, 1, 2});
  CHECK(before.threshold == 1.375);
  CHECK(after.threshold == 1.0);
  CHECK(after.q3 >= before.q3);
}

TEST_CASE("threshold decisions survive a joint affine transform") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> tune(20), eval(40);
    for (auto& x : tune) x = rng.uniform();
    for (auto& x : eval) x = rng.uniform(0, 2);
    const double a = rng.uniform(0.1, 10), b = rng.uniform(-5, 5);
    auto tune2 = tune, eval2 = eval;
    for (auto& x : tune2) x = a * x + b;
    for (auto& x : eval2) x = a * x + b;
    const double t1 = iqr_threshold(tune).threshold, t2 = iqr_threshold(tune2).threshold;
    for (std::size_t i = 0; i < eval.size(); ++i) {
      // skip points within rounding distance of the fence
      if (std::abs(eval[i] - t1) < 1e-9) continue;
      CHECK((eval[i] > t1) == (eval2[i] > t2));
    }
  }
}

TEST_CASE("detect: threshold boundary is strict and only axial slices are scored") {
  const PipelineData data = small_cohort(20, 0);
  ThresholdArtifacts art{untrained(false), {}, ViewPolicy::AxialOnly};
  const auto scores = reconstruction_scores(art.checkpoint, data.eval, ViewPolicy::AxialOnly);
  REQUIRE(scores.size() == data.eval.size());
  art.threshold.threshold = scores[0].score;
  const auto rows = detect(art, data.eval);
  CHECK(rows.size() == data.eval.size());
  CHECK(rows[0].prediction == 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].view == View::Axial);
    CHECK(rows[i].score == scores[i].score);
    CHECK(rows[i].prediction == (scores[i].score > art.threshold.threshold));
  }
  auto bad = data.eval;
  bad[0].axial.view = View::Coronal;
  CHECK_THROWS(detect(art, bad));
}

TEST_CASE("reconstruction scores are deterministic MSE") {
  const PipelineData data = small_cohort(20, 1);
  for (bool multi : {false, true}) {
    const auto ckpt = untrained(multi);
    std::vector<ViewTriplet> dup{data.eval[3], data.eval[3], data.eval[5]};
    const auto s = reconstruction_scores(ckpt, dup);
    CHECK(s[0].score == s[1].score);
    for (const auto& x : s) CHECK(x.score >= 0.0);
    if (!multi) {
      // equals the beta = 0 view loss of the same pair
      const auto x = stack_view(dup, std::vector<std::size_t>{2}, 0);
      const auto out = svae_forward(ckpt.params, ckpt.config, x);
      const auto& v = out.views[0];
      CHECK(s[2].score == doctest::Approx(vae_view_loss(v.reconstruction, x, v.mu, v.logvar, 0.0).item())
                             .epsilon(1e-6));
    }
  }
  auto broken = untrained(false);
  broken.params.erase("dec_axial.fc.bias");
  CHECK_THROWS(reconstruction_scores(broken, data.eval));
}

TEST_CASE("classifier: encoder copied bitwise, decoder discarded") {
  for (bool multi : {false, true})
    for (ViewPolicy views : {ViewPolicy::AxialOnly, ViewPolicy::AllViews}) {
      const auto ckpt = untrained(multi);
      const auto clf = make_classifier(ckpt, views, 3);
      const bool all = multi && views == ViewPolicy::AllViews;
      std::size_t encoders = 0;
      for (const auto& [name, t] : clf.params) {
        CHECK(name.rfind("dec_", 0) != 0);
        CHECK(name.rfind("bottleneck", 0) != 0);
        CHECK(name.rfind("proj_", 0) != 0);
        if (name.rfind("enc_", 0) == 0) {
          ++encoders;
          CHECK(std::memcmp(t.values().data(), ckpt.params.at(name).values().data(),
                            sizeof(float) * t.numel()) == 0);
          if (!all) CHECK(name.rfind("enc_axial.", 0) == 0);
        }
      }
      CHECK(encoders == (all ? 3u : 1u) * 10u);
      CHECK(clf.params.at("head.weight").shape() == Shape{8 * (all ? 3 : 1), 2});
    }
}

TEST_CASE("classifier with a zero head predicts class 0 everywhere") {
  const PipelineData data = small_cohort(20, 2);
  auto clf = make_classifier(untrained(false), ViewPolicy::AxialOnly, 0);
  clf.params.at("head.weight").mutable_values().setZero();
  const auto rows = detect(clf, data.eval);
  for (const auto& r : rows) {
    CHECK(r.prediction == 0);
    CHECK(r.score == 0.5);
  }
}

TEST_CASE("classifier: logits (0, 10) give class 1 with probability near 1") {
  const PipelineData data = small_cohort(20, 2);
  auto clf = make_classifier(untrained(false), ViewPolicy::AxialOnly, 0);
  clf.params.at("head.weight").mutable_values().setZero();
  clf.params.at("head.bias").mutable_values() << 0.0f, 10.0f;
  const std::vector<ViewTriplet> one{data.eval[0]};
  const auto rows = detect(clf, one);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].prediction == 1);
  CHECK(rows[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));
}

TEST_CASE("fine-tuning errors on single-class data") {
  const PipelineData data = small_cohort(20, 0);
  FinetuneConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS(finetune_classifier(untrained(false), data.tune_controls, cfg));
}

TEST_CASE("desk-scale: trained model separates noise, fine-tuning lowers cross-entropy") {
  const PipelineData data = small_cohort(40, 0);
  TrainConfig tc;
  tc.max_epochs = 15;
  tc.patience = 5;
  tc.lr = 1e-3;
  const auto [ckpt, history] = fit(small_model(false), data.train, data.tune_controls, tc);

  std::vector<ViewTriplet> probe = data.tune_controls;
  ViewTriplet noise = probe[0];
  Rng rng(0);
  for (Eigen::Index i = 0; i < noise.axial.pixels.size(); ++i)
    noise.axial.pixels.data()[i] = static_cast<float>(rng.uniform());
  probe.push_back(noise);
  const auto scores = reconstruction_scores(ckpt, probe);
  double mean = 0;
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) mean += scores[i].score;
  mean /= static_cast<double>(scores.size() - 1);
  CHECK(scores.back().score > mean);

  FinetuneConfig fc;
  fc.epochs = 10;
  fc.lr = 1e-3;
  const auto a = finetune_classifier(ckpt, data.tune, fc);
  const auto b = finetune_classifier(ckpt, data.tune, fc);
  REQUIRE(a.epoch_loss.size() == 10);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());
  CHECK(a.epoch_loss == b.epoch_loss);
  const auto p = classifier_probabilities(a.classifier, data.eval);
  CHECK(p.size() == data.eval.size());
  for (double x : p) CHECK((x >= 0.0 && x <= 1.0));
}

TEST_CASE("view policy strings") {
  CHECK(parse_view_policy("all") == ViewPolicy::AllViews);
  CHECK(parse_view_policy("axial") == ViewPolicy::AxialOnly);
  CHECK(to_string(ViewPolicy::AxialOnly) == "axial");
  CHECK_THROWS(parse_view_policy("coronal"));
}
