// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Runs the real CLI for the gradient suite and the library
// for everything else.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nlrn/checkpoint.hpp"
#include "nlrn/classic_nonlocal.hpp"
#include "nlrn/gradcheck.hpp"
#include "nlrn/imaging.hpp"
#include "nlrn/model.hpp"
#include "nlrn/nonlocal.hpp"
#include "nlrn/rng.hpp"
#include "nlrn/training.hpp"
#include "support/oracles.hpp"
#include "support/synth.hpp"

using namespace nlrn;
namespace fs = std::filesystem;

namespace {

// Budgets locked for the desk-scale runs.
constexpr int kMainSteps = 2500;
constexpr int kProbeSteps = 1200;
constexpr double kSigma8bit = 25.0;

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "nlrn_acceptance";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

DenseTensor<double> random_tensor(std::vector<int> shape, Rng& rng, double spread = 1.0) {
  DenseTensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = spread * (2 * rng.uniform() - 1);
  return t;
}

NonLocalWeights<double> random_weights(int m, int l, Metric metric, Rng& rng) {
  NonLocalWeights<double> w = NonLocalWeights<double>::make(m, l, metric);
  w.w_theta = random_tensor({m, l}, rng);
  w.w_psi = random_tensor({m, l}, rng);
  w.w_g = random_tensor({m, m}, rng);
  w.h = 0.9;
  return w;
}

// Shared across criteria 5-8.
struct DeskRuns {
  std::vector<GrayImage> corpus, held_clean, held_noisy;
  TrainConfig cfg_a;
  std::string ckpt_a, metrics_a;
  NlrnParams<float> params_a;
  NlrnConfig model_a;
  double psnr_noisy = 0, psnr_a = 0;
  bool trained = false;
};

DeskRuns g_runs;

double mean_heldout_psnr(NlrnParams<float>& params, const NlrnConfig& cfg,
                         const std::vector<GrayImage>& clean,
                         const std::vector<GrayImage>& noisy, double* noisy_mean = nullptr) {
  double pn = 0, pr = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    pn += psnr(clean[i], noisy[i]);
    pr += psnr(clean[i], restore_image(noisy[i], params, cfg));
  }
  if (noisy_mean) *noisy_mean = pn / clean.size();
  return pr / clean.size();
}

// --- criterion 1: gradient suite via the CLI -----------------------------------

Check criterion1() {
  Check c;
  const auto start = std::chrono::steady_clock::now();
  const std::string out = (work_dir() / "gradcheck.txt").string();
  const std::string cmd = std::string(NLRN_CLI_PATH) + " gradcheck --module all > " + out + " 2>&1";
  const int status = std::system(cmd.c_str());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.require(WEXITSTATUS(status) == 0, "gradcheck exit " + std::to_string(WEXITSTATUS(status)));
  const std::string text = slurp(out);
  c.require(text.find("FAIL") == std::string::npos, "a primitive failed");
  c.require(text.find("12 differentiable ops checked") != std::string::npos,
            "registry incomplete");
  c.require(secs <= 120.0, "runtime " + std::to_string(secs) + "s > 2min");
  c.note("12 ops <= 1e-4, " + std::to_string(secs).substr(0, 4) + "s");
  return c;
}

// --- criterion 2: framework equivalences ----------------------------------------

Check criterion2() {
  Check c;
  Rng rng(202);
  const int m = 3, l = 2, h = 4, w = 5;
  constexpr Metric kAll[] = {Metric::kEuclideanGaussian,   Metric::kDot,
                             Metric::kEmbeddedDot,         Metric::kGaussian,
                             Metric::kSymEmbeddedGaussian, Metric::kEmbeddedGaussian};

  // (a) confined with full coverage == dense whole-image formulation
  for (Metric metric : kAll) {
    NonLocalWeights<double> weights = random_weights(m, l, metric, rng);
    DenseTensor<double> f = random_tensor({m, h, w}, rng);
    NonLocalResult<double> confined =
        nonlocal_forward(f, weights, NeighborhoodSpec{2 * std::max(h, w) + 1});
    oracles::DenseNonLocal dense = oracles::dense_nonlocal(f, weights);
    double diff = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      diff = std::max(diff, std::abs(confined.output[i] - dense.output[i]));
    }
    c.require(diff <= 1e-10, "dense mismatch " + std::to_string(diff) + " for " +
                                 metric_to_string(metric));
  }

  // (b) W_g = 0 gives the exact identity
  for (Metric metric : kAll) {
    NonLocalWeights<double> weights = random_weights(m, l, metric, rng);
    weights.w_g.fill(0.0);
    DenseTensor<double> f = random_tensor({m, 6, 6}, rng);
    CorrelationState<double> prior = CorrelationState<double>::zeros(6, 6, 3);
    prior.logits = random_tensor({6, 6, 3, 3}, rng);
    NonLocalResult<double> res = nonlocal_forward(f, weights, NeighborhoodSpec{3}, &prior);
    bool exact = true;
    for (std::size_t i = 0; i < f.size(); ++i) exact = exact && res.output[i] == f[i];
    c.require(exact, "zero-W_g identity violated for " + metric_to_string(metric));
  }

  // (c) zeroed priors reproduce the no-propagation variant exactly
  {
    NlrnConfig cfg;
    cfg.channels = 4;
    cfg.embed = 2;
    cfg.neighborhood = 3;
    cfg.unroll = 3;
    NlrnParams<double> params = NlrnParams<double>::make(cfg);
    Rng prng(203);
    params.xavier_init(prng);
    DenseTensor<double> image({1, 1, 8, 8});
    for (std::size_t i = 0; i < image.size(); ++i) image[i] = prng.uniform();

    NlrnParams<double> p1 = params, p2 = params;
    NlrnConfig ablated = cfg;
    ablated.propagate_corr = false;
    ForwardRecord<double> without = nlrn_forward(image, p1, ablated, BnMode::kInfer);

    // Unroll by hand, forcing a zero prior into every transition.
    DenseTensor<double> single({1, 8, 8}, image.raw());
    RecurrentState<double> s0 = init_state(single, p2, cfg);
    RecurrentState<double> state = s0;
    for (int t = 0; t < cfg.unroll; ++t) {
      RecurrentState<double> z = state;
      z.corr = CorrelationState<double>::zeros(8, 8, cfg.neighborhood);
      state = transition(z, s0, p2, cfg, BnMode::kInfer);
    }
    DenseTensor<double> x(std::vector<int>{1, 4, 8, 8}, state.feat.raw());
    x = batchnorm_forward(x, p2.bn_out, BnMode::kInfer);
    x = relu_forward(x);
    x = conv2d_forward_batch(x, p2.output_conv);
    double diff = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      diff = std::max(diff, std::abs(x[i] - without.residual[i]));
    }
    c.require(diff == 0.0, "zero-prior ablation differs by " + std::to_string(diff));
  }
  c.note("dense<=1e-10 (6 metrics), W_g=0 bitwise, ablation exact");
  return c;
}

// --- criterion 3: classic-method oracles -----------------------------------------

Check criterion3() {
  Check c;
  const auto start = std::chrono::steady_clock::now();

  // Block matching vs exhaustive sort on random 16x16 images.
  for (int trial = 0; trial < 4; ++trial) {
    Rng rng(300 + trial);
    std::vector<double> px(16 * 16);
    for (double& p : px) p = rng.uniform();
    GrayImage img(16, 16, std::move(px));
    GroupFilterConfig cfg;
    cfg.p = 5;
    cfg.q = 11;
    cfg.k = 8;
    const int y = static_cast<int>(rng.uniform_index(16));
    const int x = static_cast<int>(rng.uniform_index(16));
    PatchGroup g = block_match(img, y, x, cfg);

    const DenseTensor<double> ref = extract_patch(img, y, x, cfg.p);
    struct Entry {
      double d;
      int raster, index;
    };
    std::vector<Entry> all;
    int raster = 0;
    for (int dy = -5; dy <= 5; ++dy)
      for (int dx = -5; dx <= 5; ++dx, ++raster) {
        const int yy = ((y + dy) % 16 + 16) % 16, xx = ((x + dx) % 16 + 16) % 16;
        if (yy == y && xx == x) continue;
        const DenseTensor<double> patch = extract_patch(img, yy, xx, cfg.p);
        double d = 0;
        for (std::size_t i = 0; i < patch.size(); ++i) {
          d += (patch[i] - ref[i]) * (patch[i] - ref[i]);
        }
        all.push_back({d, raster, yy * 16 + xx});
      }
    std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
      return a.d != b.d ? a.d < b.d : a.raster < b.raster;
    });
    bool same = g.member_indices[0] == y * 16 + x;
    for (int i = 0; i + 1 < cfg.k; ++i) same = same && g.member_indices[i + 1] == all[i].index;
    c.require(same, "block match differs from the exhaustive sort");
  }

  // WNNM vs the SVD soft-threshold oracle.
  {
    Rng rng(310);
    PatchGroup g;
    g.data = DenseTensor<double>({8, 25});
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = rng.uniform();
    GroupFilterConfig cfg;
    cfg.p = 5;
    cfg.q = 11;
    cfg.k = 8;
    cfg.sigma = 0.08;
    cfg.c = 2.8;
    DenseTensor<double> ours = wnnm_project(g, cfg);
    DenseTensor<double> oracle = oracles::wnnm_svd_oracle(g.data, cfg.sigma, cfg.c);
    double diff = 0;
    for (std::size_t i = 0; i < ours.size(); ++i) {
      diff = std::max(diff, std::abs(ours[i] - oracle[i]));
    }
    c.require(diff <= 1e-8, "wnnm vs svd oracle diff " + std::to_string(diff));
  }

  // Wiener and LSSC transforms round-trip with shrinkage disabled.
  {
    Rng rng(320);
    DenseTensor<double> group({6, 49});
    for (std::size_t i = 0; i < group.size(); ++i) group[i] = rng.uniform();
    DenseTensor<double> wiener = wiener_group_filter(group, group, 0.0);
    GroupFilterConfig cfg;
    cfg.p = 7;
    cfg.q = 11;
    cfg.k = 6;
    cfg.sigma = 0;
    DenseTensor<double> lssc = lssc_shrink(group, cfg);
    double dw = 0, dl = 0;
    for (std::size_t i = 0; i < group.size(); ++i) {
      dw = std::max(dw, std::abs(wiener[i] - group[i]));
      dl = std::max(dl, std::abs(lssc[i] - group[i]));
    }
    c.require(dw <= 1e-10, "wiener round trip " + std::to_string(dw));
    c.require(dl <= 1e-10, "lssc round trip " + std::to_string(dl));
  }

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.require(secs <= 60.0, "runtime " + std::to_string(secs) + "s > 1min");
  c.note("exhaustive sort x4, svd<=1e-8, round trips<=1e-10");
  return c;
}

// --- criterion 4: classic denoising gain ------------------------------------------

Check criterion4() {
  Check c;
  GrayImage clean = synth::piecewise_constant(64, 64, 6, 3000);
  GrayImage noisy = add_awgn(clean, kSigma8bit / 255.0, 3001);
  const double base = psnr(clean, noisy);

  NLMConfig nlm;
  nlm.p = 7;
  nlm.q = 21;
  nlm.h = std::sqrt(2.0) * (kSigma8bit / 255.0) * nlm.p;
  const double nlm_gain = psnr(clean, nlm_denoise(noisy, nlm)) - base;
  c.require(nlm_gain >= 3.0, "nlm gain " + std::to_string(nlm_gain) + " dB < 3");

  GroupFilterConfig g;
  g.mode = GroupFilterMode::kWnnm;
  g.p = 7;
  g.q = 21;
  g.k = 16;
  g.sigma = kSigma8bit / 255.0;
  const double wnnm_gain = psnr(clean, group_denoise_image(noisy, g)) - base;
  c.require(wnnm_gain >= 3.0, "wnnm gain " + std::to_string(wnnm_gain) + " dB < 3");

  std::ostringstream os;
  os.precision(2);
  os << std::fixed << "noisy " << base << " dB, nlm +" << nlm_gain << " dB, wnnm +" << wnnm_gain
     << " dB";
  c.note(os.str());
  return c;
}

// --- criterion 5: desk-scale training ----------------------------------------------

Check criterion5() {
  Check c;
  const auto start = std::chrono::steady_clock::now();

  g_runs.corpus.clear();
  g_runs.held_clean.clear();
  g_runs.held_noisy.clear();
  for (int i = 0; i < 20; ++i) g_runs.corpus.push_back(synth::textured(64, 64, 500 + i));
  for (int i = 0; i < 4; ++i) {
    g_runs.held_clean.push_back(synth::textured(64, 64, 900 + i));
    g_runs.held_noisy.push_back(add_awgn(g_runs.held_clean.back(), kSigma8bit / 255.0, 1000 + i));
  }

  TrainConfig cfg;
  cfg.patch = 9;
  cfg.batch = 16;
  cfg.sigma = kSigma8bit;
  cfg.seed = 11;
  cfg.steps = kMainSteps;  // within the <=5000 budget
  g_runs.cfg_a = cfg;
  g_runs.ckpt_a = (work_dir() / "runA.nlrn").string();
  g_runs.metrics_a = (work_dir() / "runA.jsonl").string();

  TrainResult res = train(g_runs.corpus, cfg, g_runs.ckpt_a, g_runs.metrics_a);
  g_runs.params_a = std::move(res.params);
  g_runs.model_a = res.model;
  g_runs.trained = true;

  // (b) held-out gain >= 2 dB
  g_runs.psnr_a = mean_heldout_psnr(g_runs.params_a, g_runs.model_a, g_runs.held_clean,
                                    g_runs.held_noisy, &g_runs.psnr_noisy);
  c.require(g_runs.psnr_a >= g_runs.psnr_noisy + 2.0,
            "held-out " + std::to_string(g_runs.psnr_a) + " vs noisy " +
                std::to_string(g_runs.psnr_noisy));

  // (a) overfit probe on 8 fixed 24x24 patches: training-set gain >= 4 dB
  std::vector<GrayImage> probe, probe_noisy;
  for (int i = 0; i < 8; ++i) {
    probe.push_back(synth::textured(24, 24, 700 + i));
    probe_noisy.push_back(add_awgn(probe.back(), kSigma8bit / 255.0, 800 + i));
  }
  TrainConfig pc;
  pc.patch = 24;
  pc.batch = 8;
  pc.sigma = kSigma8bit;
  pc.seed = 21;
  pc.steps = kProbeSteps;
  pc.augment = false;
  TrainResult probe_res = train(probe, pc);
  double probe_noisy_psnr = 0;
  const double probe_psnr = mean_heldout_psnr(probe_res.params, probe_res.model, probe,
                                              probe_noisy, &probe_noisy_psnr);
  c.require(probe_psnr >= probe_noisy_psnr + 4.0,
            "overfit probe " + std::to_string(probe_psnr) + " vs noisy " +
                std::to_string(probe_noisy_psnr));

  // (c)+(d) from the metrics log: clip bound and the lr ladder.
  std::ifstream is(g_runs.metrics_a);
  std::string line;
  int lines = 0;
  double max_norm = 0;
  std::vector<double> lr_values;
  while (std::getline(is, line)) {
    ++lines;
    const auto gpos = line.find("\"grad_norm\":");
    const auto lpos = line.find("\"lr\":");
    if (gpos == std::string::npos || lpos == std::string::npos) continue;
    max_norm = std::max(max_norm, std::stod(line.substr(gpos + 12)));
    const double lr = std::stod(line.substr(lpos + 5));
    if (lr_values.empty() || lr != lr_values.back()) lr_values.push_back(lr);
  }
  c.require(lines == kMainSteps, "metrics lines " + std::to_string(lines));
  c.require(max_norm <= 0.5 + 1e-9, "post-clip norm " + std::to_string(max_norm));
  bool ladder = lr_values.size() == 6 && std::abs(lr_values[0] - 1e-3) < 1e-15;
  for (std::size_t i = 1; i < lr_values.size() && ladder; ++i) {
    ladder = std::abs(lr_values[i] - lr_values[i - 1] * 0.5) < 1e-15;
  }
  c.require(ladder, "lr ladder has " + std::to_string(lr_values.size()) + " values");

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.require(secs <= 600.0, "runtime " + std::to_string(secs) + "s > 10min");
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << "held-out +" << g_runs.psnr_a - g_runs.psnr_noisy << " dB, probe +"
     << probe_psnr - probe_noisy_psnr << " dB, clip<=0.5, 6 lr halvings, " << static_cast<int>(secs)
     << "s";
  c.note(os.str());
  return c;
}

// --- criterion 6: ablation trend checks ---------------------------------------------

Check criterion6() {
  Check c;
  if (!g_runs.trained) {
    c.require(false, "criterion 5 training unavailable");
    return c;
  }
  TrainConfig cfg_b = g_runs.cfg_a;
  cfg_b.model.unroll = 1;
  TrainResult rb = train(g_runs.corpus, cfg_b);
  const double psnr_b =
      mean_heldout_psnr(rb.params, rb.model, g_runs.held_clean, g_runs.held_noisy);

  TrainConfig cfg_c = g_runs.cfg_a;
  cfg_c.model.neighborhood = 1;
  TrainResult rc = train(g_runs.corpus, cfg_c);
  const double psnr_c =
      mean_heldout_psnr(rc.params, rc.model, g_runs.held_clean, g_runs.held_noisy);

  c.require(g_runs.psnr_a >= psnr_b + 0.1,
            "T=3 (" + std::to_string(g_runs.psnr_a) + ") vs T=1 (" + std::to_string(psnr_b) + ")");
  c.require(g_runs.psnr_a >= psnr_c + 0.1,
            "q=9 (" + std::to_string(g_runs.psnr_a) + ") vs q=1 (" + std::to_string(psnr_c) + ")");
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << "T=3: " << g_runs.psnr_a << " dB, T=1: " << psnr_b << " dB, q=1: " << psnr_c
     << " dB";
  c.note(os.str());
  return c;
}

// --- criterion 7: metrics and I/O ----------------------------------------------------

Check criterion7() {
  Check c;
  // PSNR/SSIM identities.
  GrayImage base = synth::ramp(16, 16);
  for (double& p : base.pixels()) p *= 0.85;
  c.require(psnr(base, base) == 100.0, "psnr cap");
  GrayImage biased = base;
  for (double& p : biased.pixels()) p += 0.1;
  c.require(std::abs(psnr(base, biased) - 20.0) <= 0.01, "psnr +0.1 bias");
  c.require(ssim(synth::textured(16, 16, 4), synth::textured(16, 16, 4)) == 1.0, "ssim identity");

  // PNG round trip, bit exact.
  {
    GrayImage img = synth::textured(21, 17, 40);
    for (double& p : img.pixels()) p = std::round(p * 255.0) / 255.0;
    const std::string p1 = (work_dir() / "rt1.png").string();
    const std::string p2 = (work_dir() / "rt2.png").string();
    save_png(img, p1);
    save_png(load_png(p1), p2);
    c.require(!slurp(p1).empty() && slurp(p1) == slurp(p2), "png round trip not bit-exact");
  }

  // Checkpoint round trip, bit exact.
  {
    NlrnConfig cfg = NlrnConfig::desk_preset();
    NlrnParams<float> params = NlrnParams<float>::make(cfg);
    Rng rng(41);
    params.xavier_init(rng);
    const std::string p1 = (work_dir() / "ck1.nlrn").string();
    const std::string p2 = (work_dir() / "ck2.nlrn").string();
    save_checkpoint(p1, params, cfg);
    auto [loaded, lcfg] = load_checkpoint<float>(p1);
    save_checkpoint(p2, loaded, lcfg);
    c.require(!slurp(p1).empty() && slurp(p1) == slurp(p2), "checkpoint round trip not bit-exact");
  }

  // Multi-view equals the recomputed 8-view mean.
  {
    GrayImage img = synth::textured(20, 20, 42);
    auto model = [](const GrayImage& v) {
      GrayImage out = v;
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
          out.at(y, x) = std::min(1.0, v.at(y, x) * 0.95 + 0.01 * (y % 2));
        }
      return out;
    };
    GrayImage fused = multi_view_restore(img, model);
    std::vector<double> mean(img.pixels().size(), 0.0);
    for (int k = 0; k < 8; ++k) {
      GrayImage one = dihedral_invert(model(dihedral_apply(img, k)), k);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += one.pixels()[i] / 8.0;
    }
    double diff = 0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      diff = std::max(diff, std::abs(fused.pixels()[i] - mean[i]));
    }
    c.require(diff <= 1e-12, "multi-view mean diff " + std::to_string(diff));
  }

  // Multi-view does not degrade the trained desk model.
  if (g_runs.trained) {
    RestoreFn model = [&](const GrayImage& img) {
      return restore_image(img, g_runs.params_a, g_runs.model_a);
    };
    const double single = psnr(g_runs.held_clean[0], model(g_runs.held_noisy[0]));
    const double multi =
        psnr(g_runs.held_clean[0], multi_view_restore(g_runs.held_noisy[0], model));
    c.require(multi >= single - 0.05, "multi-view " + std::to_string(multi) + " vs single " +
                                          std::to_string(single));
    std::ostringstream os;
    os.precision(3);
    os << std::fixed << "identities ok, round trips bit-exact, multi-view " << multi
       << " vs single " << single;
    c.note(os.str());
  } else {
    c.require(false, "criterion 5 training unavailable for the multi-view comparison");
  }
  return c;
}

// --- criterion 8: determinism ---------------------------------------------------------

Check criterion8() {
  Check c;
  if (!g_runs.trained) {
    c.require(false, "criterion 5 training unavailable");
    return c;
  }
  const std::string ckpt2 = (work_dir() / "runA_repeat.nlrn").string();
  const std::string metrics2 = (work_dir() / "runA_repeat.jsonl").string();
  train(g_runs.corpus, g_runs.cfg_a, ckpt2, metrics2);
  const std::string a = slurp(g_runs.ckpt_a), b = slurp(ckpt2);
  c.require(!a.empty() && a == b, "checkpoints differ between identical runs");
  c.require(slurp(g_runs.metrics_a) == slurp(metrics2), "metrics logs differ");
  c.note("checkpoints and logs byte-identical across reruns");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* title;
    std::function<Check()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite (gradcheck --module all, 64-bit, <=1e-4, <=2min)", criterion1},
      {2, "framework equivalences (dense, zero-W_g identity, zero-prior ablation)", criterion2},
      {3, "classic-method oracles (block match, wnnm svd, transform round trips)", criterion3},
      {4, "classic denoising gain >= 3 dB (nlm and wnnm, sigma 25/255)", criterion4},
      {5, "desk-scale training (overfit +4 dB, held-out +2 dB, clip, lr ladder)", criterion5},
      {6, "ablation trends (T=3 vs T=1, q=9 vs q=1, >= 0.1 dB)", criterion6},
      {7, "metrics and I/O (psnr/ssim identities, bit-exact round trips, multi-view)", criterion7},
      {8, "determinism (byte-identical checkpoints and logs)", criterion8},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), criterion.id) == selected.end()) {
      continue;
    }
    Check result;
    const auto start = std::chrono::steady_clock::now();
    try {
      result = criterion.run();
    } catch (const std::exception& e) {
      result.ok = false;
      result.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s — %s (%.1fs)\n", result.ok ? "PASS" : "FAIL", criterion.id,
                criterion.title, result.detail.c_str(), secs);
    std::fflush(stdout);
    if (!result.ok) ++failures;
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
