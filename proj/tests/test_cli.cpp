#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "nlrn/checkpoint.hpp"
#include "nlrn/imaging.hpp"
#include "nlrn/model.hpp"
#include "support/synth.hpp"

using namespace nlrn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string out_file = (fs::temp_directory_path() / "nlrn_cli_out.txt").string();
  const std::string cmd = std::string(NLRN_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(out_file);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return {WEXITSTATUS(status), text};
}

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "nlrn_cli_work";
  fs::create_directories(dir);
  return dir;
}

std::string make_zero_checkpoint(int unroll = 3) {
  NlrnConfig cfg;
  cfg.channels = 4;
  cfg.embed = 2;
  cfg.neighborhood = 5;
  cfg.unroll = unroll;
  NlrnParams<float> params = NlrnParams<float>::make(cfg);
  const std::string path = (work_dir() / "zero.nlrn").string();
  save_checkpoint(path, params, cfg);
  return path;
}

bool files_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !ba.empty() && ba == bb;
}

}  // namespace

TEST_CASE("every subcommand documents itself and exits 0 on --help") {
  for (const std::string sub :
       {"denoise-classic", "train", "restore", "eval", "gradcheck", "corrmap", "bench"}) {
    RunResult r = run_cli(sub + " --help");
    INFO(sub, ": ", r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("--") != std::string::npos);
  }
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("missing input file exits 2 and names the path") {
  const std::string missing = (work_dir() / "no_such_image.png").string();
  RunResult r = run_cli("denoise-classic --method nlm --sigma 25 --in " + missing + " --out " +
                        (work_dir() / "x.png").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("no_such_image.png") != std::string::npos);
}

TEST_CASE("unknown flags are rejected") {
  RunResult r = run_cli("gradcheck --definitely-not-a-flag");
  CHECK(r.exit_code != 0);
}

TEST_CASE("denoise-classic on a clean constant image is byte-identical after quantization") {
  const std::string in = (work_dir() / "const.png").string();
  const std::string out = (work_dir() / "const_out.png").string();
  save_png(GrayImage(24, 24, 0.5), in);
  RunResult r = run_cli("denoise-classic --method nlm --sigma 25 --in " + in + " --out " + out);
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(files_identical(in, out));
  // The resolved configuration is echoed as JSON.
  CHECK(r.output.find("\"method\":\"nlm\"") != std::string::npos);
}

TEST_CASE("train: empty data directory errors; unknown config fields are named") {
  const fs::path empty = work_dir() / "empty_dir";
  fs::create_directories(empty);
  const std::string cfg_path = (work_dir() / "cfg.json").string();
  {
    std::ofstream os(cfg_path);
    os << R"({"steps":2,"batch":1,"patch":8,"model":{"channels":4,"embed":2,"neighborhood":3,"unroll":1}})";
  }
  RunResult r = run_cli("train --config " + cfg_path + " --data " + empty.string() + " --out " +
                        (work_dir() / "c.nlrn").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("no training images") != std::string::npos);

  const std::string bad_cfg = (work_dir() / "bad.json").string();
  {
    std::ofstream os(bad_cfg);
    os << R"({"steps":2,"walrus":9})";
  }
  r = run_cli("train --config " + bad_cfg + " --data " + empty.string() + " --out x.nlrn");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("walrus") != std::string::npos);
}

TEST_CASE("train twice with the same seed gives identical checkpoints") {
  const fs::path data = work_dir() / "data";
  fs::create_directories(data);
  for (int i = 0; i < 2; ++i) {
    save_png(synth::textured(20, 20, 60 + i), (data / ("img" + std::to_string(i) + ".png")).string());
  }
  const std::string cfg_path = (work_dir() / "train_cfg.json").string();
  {
    std::ofstream os(cfg_path);
    os << R"({"steps":4,"batch":2,"patch":8,"sigma":25,"seed":3,
              "model":{"channels":4,"embed":2,"neighborhood":3,"unroll":1}})";
  }
  const std::string c1 = (work_dir() / "s1.nlrn").string();
  const std::string c2 = (work_dir() / "s2.nlrn").string();
  RunResult r1 = run_cli("train --config " + cfg_path + " --data " + data.string() + " --out " + c1);
  RunResult r2 = run_cli("train --config " + cfg_path + " --data " + data.string() + " --out " + c2);
  INFO(r1.output);
  CHECK(r1.exit_code == 0);
  CHECK(r2.exit_code == 0);
  CHECK(files_identical(c1, c2));
}

TEST_CASE("restore: zero checkpoint reproduces the input; corrupt magic exits 2") {
  const std::string ckpt = make_zero_checkpoint();
  const std::string in = (work_dir() / "rin.png").string();
  const std::string out = (work_dir() / "rout.png").string();
  save_png(synth::textured(16, 16, 70), in);
  RunResult r = run_cli("restore --ckpt " + ckpt + " --in " + in + " --out " + out);
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(files_identical(in, out));

  // Multi-view on the residual-zero model also equals the input.
  const std::string out_mv = (work_dir() / "rout_mv.png").string();
  r = run_cli("restore --ckpt " + ckpt + " --in " + in + " --out " + out_mv + " --multi-view");
  CHECK(r.exit_code == 0);
  CHECK(files_identical(in, out_mv));

  const std::string bad = (work_dir() / "bad.nlrn").string();
  {
    std::ofstream os(bad, std::ios::binary);
    os << "XXXXXXXXjunkjunkjunk";
  }
  r = run_cli("restore --ckpt " + bad + " --in " + in + " --out " + out);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("magic") != std::string::npos);
}

TEST_CASE("restore --task sr upscales before restoring") {
  const std::string ckpt = make_zero_checkpoint();
  const std::string in = (work_dir() / "sr_in.png").string();
  const std::string out = (work_dir() / "sr_out.png").string();
  save_png(synth::textured(12, 12, 71), in);
  RunResult r = run_cli("restore --ckpt " + ckpt + " --in " + in + " --out " + out +
                        " --task sr --factor 2");
  CHECK(r.exit_code == 0);
  GrayImage up = load_png(out);
  CHECK(up.height() == 24);
  CHECK(up.width() == 24);
}

TEST_CASE("eval pairs directories by filename and reports means") {
  const fs::path ref = work_dir() / "eval_ref";
  const fs::path trial = work_dir() / "eval_in";
  fs::create_directories(ref);
  fs::create_directories(trial);
  for (int i = 0; i < 3; ++i) {
    GrayImage img = synth::textured(16, 16, 80 + i);
    save_png(img, (ref / ("v" + std::to_string(i) + ".png")).string());
    save_png(add_awgn(img, 0.05, 90 + i), (trial / ("v" + std::to_string(i) + ".png")).string());
  }
  RunResult r = run_cli("eval --ref " + ref.string() + " --in " + trial.string());
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("mean_psnr") != std::string::npos);
  CHECK(r.output.find("\"files\":3") != std::string::npos);

  RunResult empty = run_cli("eval --ref " + ref.string() + " --in " + (work_dir() / "empty_dir").string());
  CHECK(empty.exit_code == 2);
}

TEST_CASE("gradcheck CLI passes, reports every registered op, fails when corrupted") {
  RunResult r = run_cli("gradcheck --module diff_ops");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("conv2d_3x3") != std::string::npos);
  CHECK(r.output.find("5 differentiable ops checked") != std::string::npos);

  RunResult bad = run_cli("gradcheck --module nonlocal --corrupt");
  CHECK(bad.exit_code == 3);
  CHECK(bad.output.find("FAIL") != std::string::npos);
}

TEST_CASE("corrmap writes one map per recurrent state; zero model maps are flat") {
  const std::string ckpt = make_zero_checkpoint(3);
  const std::string in = (work_dir() / "cm_in.png").string();
  save_png(synth::textured(12, 12, 95), in);
  const std::string prefix = (work_dir() / "cm").string();
  RunResult r = run_cli("corrmap --ckpt " + ckpt + " --in " + in + " --loc 5,6 --out-prefix " + prefix);
  INFO(r.output);
  CHECK(r.exit_code == 0);
  for (int t = 1; t <= 3; ++t) {
    const std::string map_path = prefix + "_state" + std::to_string(t) + ".png";
    REQUIRE(fs::exists(map_path));
    GrayImage map = load_png(map_path);
    CHECK(map.height() == 5);
    CHECK(map.width() == 5);
    // Zero weights give uniform correlations: a flat mid-gray map.
    for (double p : map.pixels()) CHECK(p == doctest::Approx(0.5).epsilon(0.01));
  }
  CHECK(!fs::exists(prefix + "_state4.png"));

  RunResult oob = run_cli("corrmap --ckpt " + ckpt + " --in " + in + " --loc 99,0 --out-prefix " + prefix);
  CHECK(oob.exit_code == 1);
}

TEST_CASE("bench emits the CSV header and verifies full coverage against the dense oracle") {
  RunResult r = run_cli("bench --q 3,17 --m 4 --size 8x8 --reps 2 --seed 5");
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("q,m,l,H,W,ms_per_call") != std::string::npos);
  CHECK(r.output.find("\n3,4,2,8,8,") != std::string::npos);
  CHECK(r.output.find("\n17,4,2,8,8,") != std::string::npos);  // full coverage: oracle checked
}
