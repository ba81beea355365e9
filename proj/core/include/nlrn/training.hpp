#pragma once

#include <string>
#include <vector>

#include "nlrn/checkpoint.hpp"
#include "nlrn/imaging.hpp"
#include "nlrn/model.hpp"
#include "nlrn/rng.hpp"
#include "nlrn/tensor.hpp"

namespace nlrn {

enum class TrainTask { kDenoise, kSr };

struct TrainConfig {
  TrainTask task = TrainTask::kDenoise;
  double sigma = 25.0;                   // noise level in 8-bit units
  std::vector<int> sr_factors = {2, 3, 4};
  int patch = 0;                         // 0 = neighborhood size q
  int batch = 16;
  double lr = 1e-3;                      // halved five times over the run
  double clip_norm = 0.5;
  int steps = 3000;
  unsigned long long seed = 0;
  bool augment = true;                   // dihedral flips/rotations + scaling
  int ckpt_every = 0;                    // 0 = final checkpoint only
  int threads = 1;                       // >1 opts into data-parallel backward
  NlrnConfig model = NlrnConfig::desk_preset();

  int effective_patch() const { return patch > 0 ? patch : model.neighborhood; }
  void validate() const;
};

/// Strict JSON parsing: unknown fields are rejected by name.
TrainConfig train_config_from_json(const std::string& json_text);
TrainConfig train_config_from_file(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

/// First/second Adam moments per trainable tensor plus the step counter.
template <typename T>
struct AdamState {
  std::vector<DenseTensor<T>> m;
  std::vector<DenseTensor<T>> v;
  long step = 0;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  static AdamState make(const std::vector<DenseTensor<T>*>& params);
};

/// Bias-corrected Adam update, in place.
template <typename T>
void adam_step(const std::vector<DenseTensor<T>*>& params,
               const std::vector<DenseTensor<T>*>& grads, AdamState<T>& state, T lr);

/// Scales all gradients by max_norm/norm when the global l2 norm exceeds
/// max_norm; returns the post-clip global norm. NaN gradients raise.
template <typename T>
double clip_gradients(const std::vector<DenseTensor<T>*>& grads, double max_norm = 0.5);

/// Learning rate after the equally spaced halvings: exactly six distinct
/// values over `total` steps.
double lr_schedule(double lr0, int step, int total);

struct SampleBatch {
  DenseTensor<float> clean;     // [n,1,p,p]
  DenseTensor<float> degraded;  // clean + noise, or bicubic up(down(clean))
};

/// Uniform patch sampling with per-sample augmentation (8 dihedral transforms
/// x scales {1.0, 0.9, 0.8, 0.7}) and fresh degradation every draw.
SampleBatch sample_batch(const std::vector<GrayImage>& corpus, const TrainConfig& cfg, Rng& rng);

struct TrainResult {
  NlrnParams<float> params;
  NlrnConfig model;
  double first_loss = 0;
  double last_loss = 0;
  int steps_run = 0;
};

/// The full loop: sample, forward, loss, backward, clip, Adam, with the lr
/// schedule, JSONL metrics ({step, loss, lr, grad_norm} per line) and
/// checkpointing. Single-threaded runs are bit-reproducible under a fixed
/// seed. Empty paths disable the corresponding file output.
TrainResult train(const std::vector<GrayImage>& corpus, const TrainConfig& cfg,
                  const std::string& ckpt_path = "", const std::string& metrics_path = "",
                  const std::string& resume_path = "");

}  // namespace nlrn
