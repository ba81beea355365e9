#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nlrn/checkpoint.hpp"
#include "nlrn/classic_nonlocal.hpp"
#include "nlrn/gradcheck.hpp"
#include "nlrn/imaging.hpp"
#include "nlrn/model.hpp"
#include "nlrn/nonlocal.hpp"
#include "nlrn/rng.hpp"
#include "nlrn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

void echo_config(const json& resolved) { std::cerr << resolved.dump() << "\n"; }

std::vector<std::string> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw nlrn::IoError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

void print_metrics_vs_ref(const nlrn::GrayImage& ref, const nlrn::GrayImage& in,
                          const nlrn::GrayImage& out, int crop) {
  json m = {{"psnr_in", nlrn::psnr(ref, in, crop)},
            {"psnr_out", nlrn::psnr(ref, out, crop)},
            {"ssim_in", nlrn::ssim(ref, in)},
            {"ssim_out", nlrn::ssim(ref, out)}};
  std::cout << m.dump() << "\n";
}

// --- denoise-classic ------------------------------------------------------------

struct ClassicArgs {
  std::string method, in, out, ref;
  double sigma = 25.0;
  int q = 21, p = 7, k = 16;
  double h = 0.0;  // 0 = derive from sigma and p
  double c = 0.0;  // 0 = per-method default
  double a = 0.0;  // 0 = unweighted (a = infinity)
  int threads = 1;
};

int run_classic(const ClassicArgs& args) {
  const double sigma01 = args.sigma / 255.0;
  const double h = args.h > 0 ? args.h : std::sqrt(2.0) * sigma01 * args.p;
  // WNNM: by default scale the shrink weights to the noise-bulk edge of the
  // group spectrum, ~sigma*(sqrt(K)+p), so noise-level singular values are
  // actually suppressed.
  const double wnnm_c =
      (std::sqrt(static_cast<double>(args.k)) + args.p) *
      (std::sqrt(static_cast<double>(args.k)) + args.p) / std::sqrt(static_cast<double>(args.k));
  const double c = args.c > 0 ? args.c : (args.method == "lssc" ? 2.7 : wnnm_c);
  echo_config(json{{"command", "denoise-classic"},
                   {"method", args.method},
                   {"sigma", args.sigma},
                   {"in", args.in},
                   {"out", args.out},
                   {"ref", args.ref},
                   {"q", args.q},
                   {"p", args.p},
                   {"k", args.k},
                   {"h", h},
                   {"c", c},
                   {"a", args.a},
                   {"threads", args.threads}});

  const nlrn::GrayImage noisy = nlrn::load_png(args.in);
  nlrn::GrayImage denoised;
  if (args.method == "nlm") {
    nlrn::NLMConfig cfg;
    cfg.p = args.p;
    cfg.q = args.q;
    cfg.h = h;
    if (args.a > 0) cfg.a = args.a;
    denoised = nlrn::nlm_denoise(noisy, cfg, args.threads);
  } else {
    nlrn::GroupFilterConfig cfg;
    if (args.method == "wnnm") {
      cfg.mode = nlrn::GroupFilterMode::kWnnm;
    } else if (args.method == "wiener") {
      cfg.mode = nlrn::GroupFilterMode::kWiener;
    } else if (args.method == "lssc") {
      cfg.mode = nlrn::GroupFilterMode::kLssc;
    } else {
      throw CLI::ValidationError("--method must be one of nlm|wnnm|wiener|lssc");
    }
    cfg.p = args.p;
    cfg.q = args.q;
    cfg.k = args.k;
    cfg.sigma = sigma01;
    cfg.c = c;
    denoised = nlrn::group_denoise_image(noisy, cfg, args.threads);
  }
  nlrn::save_png(denoised, args.out);
  if (!args.ref.empty()) {
    print_metrics_vs_ref(nlrn::load_png(args.ref), noisy, denoised, 0);
  }
  return 0;
}

// --- train ----------------------------------------------------------------------

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& resume,
              const std::string& metrics_path, long long seed_override, int threads_override) {
  nlrn::TrainConfig cfg = nlrn::train_config_from_file(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<unsigned long long>(seed_override);
  if (threads_override > 0) cfg.threads = threads_override;
  const std::string metrics = metrics_path.empty() ? out_path + ".metrics.jsonl" : metrics_path;

  echo_config(json{{"command", "train"},
                   {"config", json::parse(nlrn::train_config_to_json(cfg))},
                   {"data", data_dir},
                   {"out", out_path},
                   {"metrics", metrics},
                   {"resume", resume}});

  std::vector<nlrn::GrayImage> corpus;
  for (const std::string& path : list_pngs(data_dir)) corpus.push_back(nlrn::load_png(path));
  if (corpus.empty()) throw nlrn::IoError("no training images in " + data_dir);

  nlrn::TrainResult result = nlrn::train(corpus, cfg, out_path, metrics, resume);
  std::cout << json{{"steps", result.steps_run},
                    {"first_loss", result.first_loss},
                    {"last_loss", result.last_loss},
                    {"checkpoint", out_path}}
                   .dump()
            << "\n";
  return 0;
}

// --- restore --------------------------------------------------------------------

int run_restore(const std::string& ckpt, const std::string& in, const std::string& out,
                const std::string& ref, bool multi_view, const std::string& task, int factor) {
  echo_config(json{{"command", "restore"},
                   {"ckpt", ckpt},
                   {"in", in},
                   {"out", out},
                   {"ref", ref},
                   {"multi_view", multi_view},
                   {"task", task},
                   {"factor", factor}});
  auto [params, cfg] = nlrn::load_checkpoint<float>(ckpt);

  nlrn::GrayImage input = nlrn::load_png(in);
  int crop = 0;
  if (task == "sr") {
    input = nlrn::bicubic_resize(input, input.height() * factor, input.width() * factor);
    crop = factor;
  } else if (task != "denoise") {
    throw CLI::ValidationError("--task must be denoise or sr");
  }

  nlrn::RestoreFn model = [&](const nlrn::GrayImage& img) {
    return nlrn::restore_image(img, params, cfg);
  };
  const nlrn::GrayImage restored = multi_view ? nlrn::multi_view_restore(input, model) : model(input);
  nlrn::save_png(restored, out);
  if (!ref.empty()) {
    print_metrics_vs_ref(nlrn::load_png(ref), input, restored, crop);
  }
  return 0;
}

// --- eval -----------------------------------------------------------------------

int run_eval(const std::string& ref_dir, const std::string& in_dir, int crop) {
  echo_config(json{{"command", "eval"}, {"ref", ref_dir}, {"in", in_dir}, {"crop", crop}});
  double sum_psnr = 0, sum_ssim = 0;
  int count = 0;
  for (const std::string& ref_path : list_pngs(ref_dir)) {
    const fs::path name = fs::path(ref_path).filename();
    const fs::path in_path = fs::path(in_dir) / name;
    if (!fs::exists(in_path)) continue;
    const nlrn::GrayImage ref = nlrn::load_png(ref_path);
    const nlrn::GrayImage img = nlrn::load_png(in_path.string());
    const double p = nlrn::psnr(ref, img, crop);
    const double s = nlrn::ssim(ref, img);
    std::cout << json{{"file", name.string()}, {"psnr", p}, {"ssim", s}}.dump() << "\n";
    sum_psnr += p;
    sum_ssim += s;
    ++count;
  }
  if (count == 0) throw nlrn::IoError("no paired .png files between " + ref_dir + " and " + in_dir);
  std::cout << json{{"files", count}, {"mean_psnr", sum_psnr / count}, {"mean_ssim", sum_ssim / count}}
                   .dump()
            << "\n";
  return 0;
}

// --- gradcheck ---------------------------------------------------------------------

int run_gradcheck_cmd(const std::string& module, bool corrupt) {
  echo_config(json{{"command", "gradcheck"}, {"module", module}, {"corrupt", corrupt}});
  const std::vector<nlrn::GradCheckResult> results = nlrn::run_gradcheck(module, corrupt);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-32s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_error,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  std::printf("%zu differentiable ops checked, tolerance %.1e\n", results.size(),
              nlrn::kGradCheckTolerance);
  if (!all_pass) {
    for (const auto& r : results) {
      if (!r.pass) std::fprintf(stderr, "gradcheck failed: %s\n", r.name.c_str());
    }
    return kExitNumeric;
  }
  return 0;
}

// --- corrmap ---------------------------------------------------------------------

int run_corrmap(const std::string& ckpt, const std::string& in, const std::string& loc,
                const std::string& prefix) {
  echo_config(json{{"command", "corrmap"},
                   {"ckpt", ckpt},
                   {"in", in},
                   {"loc", loc},
                   {"out_prefix", prefix}});
  const auto comma = loc.find(',');
  if (comma == std::string::npos) throw CLI::ValidationError("--loc must be Y,X");
  const int y = std::stoi(loc.substr(0, comma));
  const int x = std::stoi(loc.substr(comma + 1));

  auto [params, cfg] = nlrn::load_checkpoint<float>(ckpt);
  const nlrn::GrayImage img = nlrn::load_png(in);
  if (y < 0 || y >= img.height() || x < 0 || x >= img.width()) {
    throw nlrn::ShapeError("corrmap location out of bounds: " + loc);
  }

  nlrn::DenseTensor<float> tensor = nlrn::image_to_tensor<float>(img);
  nlrn::RecurrentState<float> s0 = nlrn::init_state(tensor, params, cfg);
  nlrn::RecurrentState<float> state = s0;
  for (int t = 1; t <= cfg.unroll; ++t) {
    state = nlrn::transition(state, s0, params, cfg, nlrn::BnMode::kInfer);
    nlrn::DenseTensor<float> map = nlrn::correlation_row_softmax(state.corr, y, x);
    float lo = map[0], hi = map[0];
    for (std::size_t i = 0; i < map.size(); ++i) {
      lo = std::min(lo, map[i]);
      hi = std::max(hi, map[i]);
    }
    std::vector<double> px(map.size(), 0.5);
    if (hi - lo > 1e-12f) {
      for (std::size_t i = 0; i < map.size(); ++i) px[i] = (map[i] - lo) / (hi - lo);
    }
    nlrn::save_png(nlrn::GrayImage(cfg.neighborhood, cfg.neighborhood, px),
                   prefix + "_state" + std::to_string(t) + ".png");
  }
  return 0;
}

// --- bench ----------------------------------------------------------------------

/// Dense whole-image reference of the non-local operation (embedded Gaussian),
/// used to vet full-coverage configurations before timing them.
nlrn::DenseTensor<double> dense_nonlocal_reference(const nlrn::DenseTensor<double>& features,
                                                   const nlrn::NonLocalWeights<double>& w) {
  const int m = features.dim(0), h = features.dim(1), wd = features.dim(2);
  const int n = h * wd;
  nlrn::DenseTensor<double> x({n, m});
  for (int c = 0; c < m; ++c)
    for (int i = 0; i < n; ++i) x.at(i, c) = features[static_cast<std::size_t>(c) * n + i];
  nlrn::DenseTensor<double> theta = nlrn::matmul(x, w.w_theta);
  nlrn::DenseTensor<double> psi = nlrn::matmul(x, w.w_psi);
  nlrn::DenseTensor<double> g = nlrn::matmul(x, w.w_g);
  nlrn::DenseTensor<double> out({m, h, wd});
  const int l = w.w_theta.dim(1);
  std::vector<double> logits(n);
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < n; ++j) {
      double t = 0;
      for (int c = 0; c < l; ++c) t += theta.at(i, c) * psi.at(j, c);
      logits[j] = t;
      mx = std::max(mx, t);
    }
    double sum = 0;
    for (int j = 0; j < n; ++j) {
      logits[j] = std::exp(logits[j] - mx);
      sum += logits[j];
    }
    for (int c = 0; c < m; ++c) {
      double acc = 0;
      for (int j = 0; j < n; ++j) acc += logits[j] / sum * g.at(j, c);
      out[static_cast<std::size_t>(c) * n + i] = x.at(i, c) + acc;
    }
  }
  return out;
}

int run_bench(std::vector<int> qs, std::vector<int> ms, const std::string& size, int reps,
              unsigned long long seed) {
  const auto cross = size.find('x');
  if (cross == std::string::npos) throw CLI::ValidationError("--size must be HxW");
  const int h = std::stoi(size.substr(0, cross));
  const int w = std::stoi(size.substr(cross + 1));
  echo_config(json{{"command", "bench"},
                   {"q", qs},
                   {"m", ms},
                   {"size", size},
                   {"reps", reps},
                   {"seed", seed}});

  std::printf("q,m,l,H,W,ms_per_call\n");
  for (int m : ms) {
    for (int q : qs) {
      const int l = std::max(1, m / 2);
      nlrn::Rng rng(seed);
      nlrn::NonLocalWeights<double> w64 = nlrn::NonLocalWeights<double>::make(m, l);
      for (auto* t : {&w64.w_theta, &w64.w_psi, &w64.w_g}) {
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = 2.0 * rng.uniform() - 1.0;
      }
      nlrn::DenseTensor<double> f64({m, h, w});
      for (std::size_t i = 0; i < f64.size(); ++i) f64[i] = 2.0 * rng.uniform() - 1.0;

      if (q >= std::max(h, w)) {
        nlrn::NonLocalResult<double> confined =
            nlrn::nonlocal_forward(f64, w64, nlrn::NeighborhoodSpec{q});
        nlrn::DenseTensor<double> dense = dense_nonlocal_reference(f64, w64);
        double max_diff = 0;
        for (std::size_t i = 0; i < dense.size(); ++i) {
          max_diff = std::max(max_diff, std::abs(dense[i] - confined.output[i]));
        }
        if (max_diff > 1e-10) {
          throw nlrn::NumericError("bench: full-coverage q=" + std::to_string(q) +
                                   " disagrees with the dense reference by " +
                                   std::to_string(max_diff));
        }
      }

      nlrn::NonLocalWeights<float> w32 = nlrn::NonLocalWeights<float>::make(m, l);
      w32.w_theta = w64.w_theta.cast<float>();
      w32.w_psi = w64.w_psi.cast<float>();
      w32.w_g = w64.w_g.cast<float>();
      nlrn::DenseTensor<float> f32 = f64.cast<float>();

      std::vector<double> times;
      for (int rep = 0; rep < reps; ++rep) {
        const auto start = std::chrono::steady_clock::now();
        nlrn::NonLocalResult<float> res =
            nlrn::nonlocal_forward(f32, w32, nlrn::NeighborhoodSpec{q});
        const auto stop = std::chrono::steady_clock::now();
        if (!res.output.all_finite()) throw nlrn::NumericError("bench produced non-finite output");
        times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
      }
      std::sort(times.begin(), times.end());
      std::printf("%d,%d,%d,%d,%d,%.4f\n", q, m, l, h, w, times[times.size() / 2]);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-local image restoration toolkit"};
  app.require_subcommand(1);
  // --h is a real flag (the NLM filtering degree), so help is --help only.
  app.set_help_flag("--help", "Print this help message and exit");

  // denoise-classic
  ClassicArgs classic;
  CLI::App* sc_classic = app.add_subcommand("denoise-classic", "Classic non-local denoisers");
  sc_classic->set_help_flag("--help", "Print this help message and exit");
  sc_classic->add_option("--method", classic.method, "nlm|wnnm|wiener|lssc")->required();
  sc_classic->add_option("--sigma", classic.sigma, "noise std in 8-bit units")->required();
  sc_classic->add_option("--in", classic.in, "input PNG")->required();
  sc_classic->add_option("--out", classic.out, "output PNG")->required();
  sc_classic->add_option("--ref", classic.ref, "clean reference for PSNR/SSIM");
  sc_classic->add_option("--q", classic.q, "search window side (odd)");
  sc_classic->add_option("--p", classic.p, "patch side (odd)");
  sc_classic->add_option("--k", classic.k, "patches per matched group");
  sc_classic->add_option("--h", classic.h, "NLM filtering degree (default from sigma)");
  sc_classic->add_option("--c", classic.c, "shrink parameter (default 2.8, lssc 2.7)");
  sc_classic->add_option("--a", classic.a, "NLM spatial kernel std (default unweighted)");
  sc_classic->add_option("--threads", classic.threads, "worker threads");

  // train
  std::string train_config, train_data, train_out, train_resume, train_metrics;
  long long train_seed = -1;
  int train_threads = 0;
  CLI::App* sc_train = app.add_subcommand("train", "Train the recurrent model");
  sc_train->add_option("--config", train_config, "JSON config")->required();
  sc_train->add_option("--data", train_data, "directory of training PNGs")->required();
  sc_train->add_option("--out", train_out, "checkpoint path")->required();
  sc_train->add_option("--resume", train_resume, "checkpoint to resume from");
  sc_train->add_option("--metrics", train_metrics, "metrics JSONL path");
  sc_train->add_option("--seed", train_seed, "seed override");
  sc_train->add_option("--threads", train_threads, "data-parallel workers");

  // restore
  std::string restore_ckpt, restore_in, restore_out, restore_ref, restore_task = "denoise";
  bool restore_mv = false;
  int restore_factor = 2;
  CLI::App* sc_restore = app.add_subcommand("restore", "Run a trained model on an image");
  sc_restore->add_option("--ckpt", restore_ckpt, "checkpoint")->required();
  sc_restore->add_option("--in", restore_in, "input PNG")->required();
  sc_restore->add_option("--out", restore_out, "output PNG")->required();
  sc_restore->add_option("--ref", restore_ref, "clean reference for PSNR/SSIM");
  sc_restore->add_flag("--multi-view", restore_mv, "average the 8 dihedral views");
  sc_restore->add_option("--task", restore_task, "denoise|sr");
  sc_restore->add_option("--factor", restore_factor, "SR upscaling factor");

  // eval
  std::string eval_ref, eval_in;
  int eval_crop = 0;
  CLI::App* sc_eval = app.add_subcommand("eval", "PSNR/SSIM over folders paired by filename");
  sc_eval->add_option("--ref", eval_ref, "reference directory")->required();
  sc_eval->add_option("--in", eval_in, "test directory")->required();
  sc_eval->add_option("--crop", eval_crop, "border crop in pixels");

  // gradcheck
  std::string gc_module = "all";
  bool gc_corrupt = false;
  CLI::App* sc_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  sc_gc->add_option("--module", gc_module, "all|diff_ops|nonlocal|nlrn");
  sc_gc->add_flag("--corrupt", gc_corrupt, "inject an error (negative control)")
      ->group("");  // hidden

  // corrmap
  std::string cm_ckpt, cm_in, cm_loc, cm_prefix;
  CLI::App* sc_cm = app.add_subcommand("corrmap", "Correlation maps per recurrent state");
  sc_cm->add_option("--ckpt", cm_ckpt, "checkpoint")->required();
  sc_cm->add_option("--in", cm_in, "input PNG")->required();
  sc_cm->add_option("--loc", cm_loc, "Y,X location")->required();
  sc_cm->add_option("--out-prefix", cm_prefix, "output path prefix")->required();

  // bench
  std::vector<int> bench_q{9}, bench_m{16};
  std::string bench_size = "32x32";
  int bench_reps = 5;
  unsigned long long bench_seed = 0;
  CLI::App* sc_bench = app.add_subcommand("bench", "Time the non-local kernel (CSV to stdout)");
  sc_bench->add_option("--q", bench_q, "neighborhood sides")->delimiter(',');
  sc_bench->add_option("--m", bench_m, "channel counts")->delimiter(',');
  sc_bench->add_option("--size", bench_size, "image size HxW");
  sc_bench->add_option("--reps", bench_reps, "repetitions per config (median reported)");
  sc_bench->add_option("--seed", bench_seed, "seed for the random inputs");

  try {
    app.parse(argc, argv);
    if (*sc_classic) return run_classic(classic);
    if (*sc_train) {
      return run_train(train_config, train_data, train_out, train_resume, train_metrics,
                       train_seed, train_threads);
    }
    if (*sc_restore) {
      return run_restore(restore_ckpt, restore_in, restore_out, restore_ref, restore_mv,
                         restore_task, restore_factor);
    }
    if (*sc_eval) return run_eval(eval_ref, eval_in, eval_crop);
    if (*sc_gc) return run_gradcheck_cmd(gc_module, gc_corrupt);
    if (*sc_cm) return run_corrmap(cm_ckpt, cm_in, cm_loc, cm_prefix);
    if (*sc_bench) return run_bench(bench_q, bench_m, bench_size, bench_reps, bench_seed);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  } catch (const nlrn::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlrn::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
