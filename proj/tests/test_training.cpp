#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nlrn/training.hpp"
#include "support/synth.hpp"

using namespace nlrn;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("nlrn_train_" + name)).string();
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model.channels = 4;
  cfg.model.embed = 2;
  cfg.model.neighborhood = 3;
  cfg.model.unroll = 1;
  cfg.patch = 8;
  cfg.batch = 2;
  cfg.steps = 6;
  cfg.sigma = 25;
  cfg.seed = 7;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("sample_batch: sigma 0 leaves patches untouched; fixed seed reproduces bits") {
  std::vector<GrayImage> corpus = {synth::textured(24, 24, 1), synth::textured(20, 28, 2)};
  TrainConfig cfg = tiny_train_config();
  cfg.sigma = 0;
  Rng r1(5), r2(5);
  SampleBatch b1 = sample_batch(corpus, cfg, r1);
  SampleBatch b2 = sample_batch(corpus, cfg, r2);
  for (std::size_t i = 0; i < b1.clean.size(); ++i) {
    CHECK(b1.degraded[i] == b1.clean[i]);
    CHECK(b1.clean[i] == b2.clean[i]);
    CHECK(b1.degraded[i] == b2.degraded[i]);
  }
}

TEST_CASE("sample_batch: sigma 25 noise has the right empirical std") {
  std::vector<GrayImage> corpus = {synth::textured(32, 32, 3)};
  TrainConfig cfg = tiny_train_config();
  cfg.patch = 16;
  cfg.batch = 64;
  Rng rng(11);
  double sq = 0;
  std::size_t n = 0;
  for (int rep = 0; rep < 64; ++rep) {  // 64*64*256 > 1e6 samples
    SampleBatch b = sample_batch(corpus, cfg, rng);
    for (std::size_t i = 0; i < b.clean.size(); ++i) {
      const double d = b.degraded[i] - b.clean[i];
      sq += d * d;
      ++n;
    }
  }
  const double std_hat = std::sqrt(sq / n);
  CHECK(std_hat == doctest::Approx(25.0 / 255.0).epsilon(0.01));
}

TEST_CASE("sample_batch: sr mode degrades through the bicubic round trip") {
  std::vector<GrayImage> corpus = {synth::textured(36, 36, 4)};
  TrainConfig cfg = tiny_train_config();
  cfg.task = TrainTask::kSr;
  cfg.patch = 12;
  Rng rng(13);
  SampleBatch b = sample_batch(corpus, cfg, rng);
  // Degraded patches are genuinely blurred: less high-frequency energy.
  double clean_var = 0, deg_var = 0, cmean = 0, dmean = 0;
  for (std::size_t i = 0; i < b.clean.size(); ++i) {
    cmean += b.clean[i];
    dmean += b.degraded[i];
  }
  cmean /= b.clean.size();
  dmean /= b.clean.size();
  for (std::size_t i = 0; i < b.clean.size(); ++i) {
    clean_var += (b.clean[i] - cmean) * (b.clean[i] - cmean);
    deg_var += (b.degraded[i] - dmean) * (b.degraded[i] - dmean);
  }
  CHECK(deg_var < clean_var);
}

TEST_CASE("sample_batch: patch larger than every scaled image raises") {
  std::vector<GrayImage> corpus = {synth::textured(10, 10, 5)};
  TrainConfig cfg = tiny_train_config();
  cfg.patch = 11;
  Rng rng(1);
  CHECK_THROWS_WITH_AS(sample_batch(corpus, cfg, rng), doctest::Contains("patch"), ShapeError);
  CHECK_THROWS_AS(sample_batch({}, cfg, rng), ShapeError);
}

TEST_CASE("adam: zero gradient from a fresh state leaves parameters unchanged") {
  DenseTensor<double> p({3}, std::vector<double>{1, -2, 3});
  DenseTensor<double> g({3});
  std::vector<DenseTensor<double>*> params{&p}, grads{&g};
  AdamState<double> state = AdamState<double>::make(params);
  adam_step(params, grads, state, 0.1);
  CHECK(p.at(0) == 1.0);
  CHECK(p.at(1) == -2.0);
  CHECK(p.at(2) == 3.0);

  // With zero gradients the moments decay by their beta factors.
  state.m[0].fill(0.5);
  state.v[0].fill(0.25);
  adam_step(params, grads, state, 0.1);
  CHECK(state.m[0].at(0) == doctest::Approx(0.45));     // beta1 * 0.5
  CHECK(state.v[0].at(0) == doctest::Approx(0.24975));  // beta2 * 0.25
}

TEST_CASE("adam: first step moves by about -lr * sign(g)") {
  for (double g0 : {0.37, -2.0, 15.0}) {
    DenseTensor<double> p({1}, std::vector<double>{0.0});
    DenseTensor<double> g({1}, std::vector<double>{g0});
    std::vector<DenseTensor<double>*> params{&p}, grads{&g};
    AdamState<double> state = AdamState<double>::make(params);
    const double lr = 0.01;
    adam_step(params, grads, state, lr);
    CHECK(std::abs(p.at(0) + lr * g0 / (std::abs(g0) + 1e-8)) <= 1e-9);
  }
}

TEST_CASE("adam: 100 steps on half w^2 from w=1 converges near zero") {
  DenseTensor<double> w({1}, std::vector<double>{1.0});
  DenseTensor<double> g({1});
  std::vector<DenseTensor<double>*> params{&w}, grads{&g};
  AdamState<double> state = AdamState<double>::make(params);
  for (int i = 0; i < 100; ++i) {
    g.at(0) = w.at(0);  // gradient of 0.5 w^2
    adam_step(params, grads, state, 0.1);
  }
  CHECK(std::abs(w.at(0)) < 0.1);
}

TEST_CASE("clip_gradients: below the threshold unchanged, (3,4) scales to (0.3,0.4)") {
  DenseTensor<double> g({2}, std::vector<double>{0.18, 0.24});  // norm 0.3
  std::vector<DenseTensor<double>*> grads{&g};
  CHECK(clip_gradients(grads, 0.5) == doctest::Approx(0.3));
  CHECK(g.at(0) == 0.18);

  DenseTensor<double> big({2}, std::vector<double>{3, 4});
  std::vector<DenseTensor<double>*> grads2{&big};
  const double post = clip_gradients(grads2, 0.5);
  CHECK(post <= 0.5 + 1e-9);
  CHECK(big.at(0) == doctest::Approx(0.3));
  CHECK(big.at(1) == doctest::Approx(0.4));
}

TEST_CASE("clip_gradients: post-clip norm is bounded for random inputs; NaN raises") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    DenseTensor<double> a({5});
    DenseTensor<double> b({3});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = 10 * (2 * rng.uniform() - 1);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 10 * (2 * rng.uniform() - 1);
    std::vector<DenseTensor<double>*> grads{&a, &b};
    CHECK(clip_gradients(grads, 0.5) <= 0.5 + 1e-9);
  }
  DenseTensor<double> bad({2});
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<DenseTensor<double>*> grads{&bad};
  CHECK_THROWS_AS(clip_gradients(grads, 0.5), NumericError);
}

TEST_CASE("lr schedule: exactly six values, each half the previous") {
  const int total = 600;
  std::vector<double> seen;
  for (int step = 0; step < total; ++step) {
    const double lr = lr_schedule(1e-3, step, total);
    if (seen.empty() || lr != seen.back()) seen.push_back(lr);
  }
  REQUIRE(seen.size() == 6);
  CHECK(seen.front() == doctest::Approx(1e-3));
  for (std::size_t i = 1; i < seen.size(); ++i) {
    CHECK(seen[i] == doctest::Approx(seen[i - 1] * 0.5));
  }
}

TEST_CASE("config JSON: round trip, presets, unknown fields named in errors") {
  TrainConfig cfg = train_config_from_json(R"({"task":"denoise","sigma":15,"steps":10,
    "model":{"preset":"desk","unroll":2}})");
  CHECK(cfg.sigma == 15);
  CHECK(cfg.model.channels == 16);
  CHECK(cfg.model.unroll == 2);

  TrainConfig echo = train_config_from_json(train_config_to_json(cfg));
  CHECK(echo.sigma == cfg.sigma);
  CHECK(echo.model.neighborhood == cfg.model.neighborhood);

  CHECK_THROWS_WITH_AS(train_config_from_json(R"({"sigma":15,"bogus_field":1})"),
                       doctest::Contains("bogus_field"), ShapeError);
  CHECK_THROWS_WITH_AS(train_config_from_json(R"({"model":{"wobble":3}})"),
                       doctest::Contains("wobble"), ShapeError);
  CHECK_THROWS_AS(train_config_from_json("not json"), ShapeError);
}

TEST_CASE("train: loss decreases over 50-step windows on a fixed tiny run") {
  std::vector<GrayImage> corpus;
  for (int i = 0; i < 4; ++i) corpus.push_back(synth::textured(24, 24, 100 + i));
  TrainConfig cfg = tiny_train_config();
  cfg.steps = 200;
  cfg.patch = 8;
  cfg.batch = 4;
  const std::string metrics = tmp_path("window.jsonl");
  TrainResult res = train(corpus, cfg, "", metrics);
  CHECK(res.steps_run == 200);

  // Average the logged loss over the first and last 50-step windows.
  std::ifstream is(metrics);
  std::vector<double> losses;
  std::string line;
  while (std::getline(is, line)) {
    const auto pos = line.find("\"loss\":");
    REQUIRE(pos != std::string::npos);
    losses.push_back(std::stod(line.substr(pos + 7)));
  }
  REQUIRE(losses.size() == 200);
  double head = 0, tail = 0;
  for (int i = 0; i < 50; ++i) {
    head += losses[i];
    tail += losses[150 + i];
  }
  CHECK(tail < head);
}

TEST_CASE("train: identical seeds give byte-identical checkpoints and logs") {
  std::vector<GrayImage> corpus = {synth::textured(20, 20, 41), synth::textured(20, 20, 42)};
  TrainConfig cfg = tiny_train_config();
  cfg.steps = 12;
  const std::string c1 = tmp_path("det1.nlrn"), c2 = tmp_path("det2.nlrn");
  const std::string m1 = tmp_path("det1.jsonl"), m2 = tmp_path("det2.jsonl");
  train(corpus, cfg, c1, m1);
  train(corpus, cfg, c2, m2);
  CHECK(slurp(c1) == slurp(c2));
  CHECK(slurp(m1) == slurp(m2));
  CHECK(!slurp(c1).empty());
}

TEST_CASE("train: resume continues the step count deterministically") {
  std::vector<GrayImage> corpus = {synth::textured(20, 20, 51)};
  TrainConfig cfg = tiny_train_config();
  cfg.steps = 5;
  const std::string part = tmp_path("part.nlrn");
  train(corpus, cfg, part, "");

  TrainConfig rest = cfg;
  rest.steps = 10;
  const std::string r1 = tmp_path("resumed1.nlrn"), r2 = tmp_path("resumed2.nlrn");
  const std::string m1 = tmp_path("resumed1.jsonl"), m2 = tmp_path("resumed2.jsonl");
  train(corpus, rest, r1, m1, part);
  train(corpus, rest, r2, m2, part);
  CHECK(slurp(r1) == slurp(r2));
  CHECK(slurp(m1) == slurp(m2));
  CHECK(slurp(r1) != slurp(part));  // it actually trained further

  // The metrics log continues from step 5.
  std::ifstream is(m1);
  std::string first_line;
  std::getline(is, first_line);
  CHECK(first_line.find("\"step\":5") != std::string::npos);
}
