#include "nlrn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "nlrn/parallel.hpp"

namespace nlrn {

void TrainConfig::validate() const {
  if (sigma < 0) throw ShapeError("train config: sigma must be >= 0");
  if (batch < 1) throw ShapeError("train config: batch must be >= 1");
  if (steps < 1) throw ShapeError("train config: steps must be >= 1");
  if (lr <= 0) throw ShapeError("train config: lr must be positive");
  if (clip_norm <= 0) throw ShapeError("train config: clip_norm must be positive");
  if (effective_patch() < 1) throw ShapeError("train config: patch must be >= 1");
  if (task == TrainTask::kSr) {
    if (sr_factors.empty()) throw ShapeError("train config: sr task needs factors");
    for (int f : sr_factors) {
      if (f < 2 || f > 4) throw ShapeError("train config: sr factors must be in {2,3,4}");
    }
  }
  model.validate();
}

// --- config JSON ---------------------------------------------------------------

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::vector<std::string>& known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ShapeError("unknown config field: " + where + it.key());
    }
  }
}

}  // namespace

TrainConfig train_config_from_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ShapeError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(doc,
                 {"task", "sigma", "sr_factors", "patch", "batch", "lr", "clip_norm", "steps",
                  "seed", "augment", "ckpt_every", "threads", "model"},
                 "");
  TrainConfig cfg;
  if (doc.contains("task")) {
    const std::string task = doc["task"].get<std::string>();
    if (task == "denoise") {
      cfg.task = TrainTask::kDenoise;
    } else if (task == "sr") {
      cfg.task = TrainTask::kSr;
    } else {
      throw ShapeError("unknown config field value: task=" + task);
    }
  }
  if (doc.contains("sigma")) cfg.sigma = doc["sigma"].get<double>();
  if (doc.contains("sr_factors")) cfg.sr_factors = doc["sr_factors"].get<std::vector<int>>();
  if (doc.contains("patch")) cfg.patch = doc["patch"].get<int>();
  if (doc.contains("batch")) cfg.batch = doc["batch"].get<int>();
  if (doc.contains("lr")) cfg.lr = doc["lr"].get<double>();
  if (doc.contains("clip_norm")) cfg.clip_norm = doc["clip_norm"].get<double>();
  if (doc.contains("steps")) cfg.steps = doc["steps"].get<int>();
  if (doc.contains("seed")) cfg.seed = doc["seed"].get<unsigned long long>();
  if (doc.contains("augment")) cfg.augment = doc["augment"].get<bool>();
  if (doc.contains("ckpt_every")) cfg.ckpt_every = doc["ckpt_every"].get<int>();
  if (doc.contains("threads")) cfg.threads = doc["threads"].get<int>();
  if (doc.contains("model")) {
    const json& m = doc["model"];
    reject_unknown(m,
                   {"preset", "channels", "embed", "neighborhood", "unroll", "metric", "metric_h",
                    "propagate_corr"},
                   "model.");
    if (m.contains("preset")) {
      const std::string preset = m["preset"].get<std::string>();
      if (preset == "desk") {
        cfg.model = NlrnConfig::desk_preset();
      } else if (preset == "paper") {
        cfg.model = NlrnConfig::paper_preset();
      } else {
        throw ShapeError("unknown config field value: model.preset=" + preset);
      }
    }
    if (m.contains("channels")) cfg.model.channels = m["channels"].get<int>();
    if (m.contains("embed")) cfg.model.embed = m["embed"].get<int>();
    if (m.contains("neighborhood")) cfg.model.neighborhood = m["neighborhood"].get<int>();
    if (m.contains("unroll")) cfg.model.unroll = m["unroll"].get<int>();
    if (m.contains("metric")) cfg.model.metric = metric_from_string(m["metric"].get<std::string>());
    if (m.contains("metric_h")) cfg.model.metric_h = m["metric_h"].get<double>();
    if (m.contains("propagate_corr")) cfg.model.propagate_corr = m["propagate_corr"].get<bool>();
  }
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return train_config_from_json(text);
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json doc;
  doc["task"] = cfg.task == TrainTask::kDenoise ? "denoise" : "sr";
  doc["sigma"] = cfg.sigma;
  doc["sr_factors"] = cfg.sr_factors;
  doc["patch"] = cfg.effective_patch();
  doc["batch"] = cfg.batch;
  doc["lr"] = cfg.lr;
  doc["clip_norm"] = cfg.clip_norm;
  doc["steps"] = cfg.steps;
  doc["seed"] = cfg.seed;
  doc["augment"] = cfg.augment;
  doc["ckpt_every"] = cfg.ckpt_every;
  doc["threads"] = cfg.threads;
  doc["model"] = {{"channels", cfg.model.channels},
                  {"embed", cfg.model.embed},
                  {"neighborhood", cfg.model.neighborhood},
                  {"unroll", cfg.model.unroll},
                  {"metric", metric_to_string(cfg.model.metric)},
                  {"metric_h", cfg.model.metric_h},
                  {"propagate_corr", cfg.model.propagate_corr}};
  return doc.dump();
}

// --- optimizer -------------------------------------------------------------------

template <typename T>
AdamState<T> AdamState<T>::make(const std::vector<DenseTensor<T>*>& params) {
  AdamState<T> s;
  for (const DenseTensor<T>* p : params) {
    s.m.push_back(DenseTensor<T>::zeros_like(*p));
    s.v.push_back(DenseTensor<T>::zeros_like(*p));
  }
  return s;
}

template <typename T>
void adam_step(const std::vector<DenseTensor<T>*>& params,
               const std::vector<DenseTensor<T>*>& grads, AdamState<T>& state, T lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient/moment counts disagree");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), state.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseTensor<T>& p = *params[i];
    const DenseTensor<T>& g = *grads[i];
    if (!p.same_shape(g)) throw ShapeError("adam_step: gradient shape mismatch");
    DenseTensor<T>& m = state.m[i];
    DenseTensor<T>& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
      const T mhat = m[j] / static_cast<T>(bc1);
      const T vhat = v[j] / static_cast<T>(bc2);
      p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

template <typename T>
double clip_gradients(const std::vector<DenseTensor<T>*>& grads, double max_norm) {
  double sq = 0;
  for (const DenseTensor<T>* g : grads) {
    for (std::size_t j = 0; j < g->size(); ++j) {
      const double v = (*g)[j];
      sq += v * v;
    }
  }
  if (!std::isfinite(sq)) throw NumericError("clip_gradients: NaN or Inf gradient");
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return norm;
  const T factor = static_cast<T>(max_norm / norm);
  double post = 0;
  for (DenseTensor<T>* g : grads) {
    for (std::size_t j = 0; j < g->size(); ++j) {
      (*g)[j] *= factor;
      post += static_cast<double>((*g)[j]) * (*g)[j];
    }
  }
  return std::sqrt(post);
}

double lr_schedule(double lr0, int step, int total) {
  const int milestone = std::min(5, (6 * step) / std::max(1, total));
  return lr0 * std::pow(0.5, milestone);
}

// --- sampling --------------------------------------------------------------------

namespace {

constexpr double kScales[] = {1.0, 0.9, 0.8, 0.7};

struct Combo {
  int image;
  int scale;  // index into kScales
};

std::vector<Combo> valid_combos(const std::vector<GrayImage>& corpus, int patch, bool augment) {
  std::vector<Combo> combos;
  const int nscales = augment ? 4 : 1;
  for (int i = 0; i < static_cast<int>(corpus.size()); ++i) {
    for (int s = 0; s < nscales; ++s) {
      const int sh = static_cast<int>(std::lround(corpus[i].height() * kScales[s]));
      const int sw = static_cast<int>(std::lround(corpus[i].width() * kScales[s]));
      if (sh >= patch && sw >= patch) combos.push_back({i, s});
    }
  }
  return combos;
}

}  // namespace

SampleBatch sample_batch(const std::vector<GrayImage>& corpus, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (corpus.empty()) throw ShapeError("sample_batch: empty corpus");
  const int patch = cfg.effective_patch();
  const std::vector<Combo> combos = valid_combos(corpus, patch, cfg.augment);
  if (combos.empty()) throw ShapeError("sample_batch: patch larger than every scaled image");

  SampleBatch batch;
  batch.clean = DenseTensor<float>({cfg.batch, 1, patch, patch});
  batch.degraded = DenseTensor<float>({cfg.batch, 1, patch, patch});
  const std::size_t ppix = static_cast<std::size_t>(patch) * patch;

  for (int s = 0; s < cfg.batch; ++s) {
    const Combo combo = combos[rng.uniform_index(combos.size())];
    GrayImage img = corpus[combo.image];
    if (kScales[combo.scale] != 1.0) {
      img = bicubic_resize(img, static_cast<int>(std::lround(img.height() * kScales[combo.scale])),
                           static_cast<int>(std::lround(img.width() * kScales[combo.scale])));
    }
    if (cfg.augment) {
      img = dihedral_apply(img, static_cast<int>(rng.uniform_index(8)));
    }
    const int y0 = static_cast<int>(rng.uniform_index(img.height() - patch + 1));
    const int x0 = static_cast<int>(rng.uniform_index(img.width() - patch + 1));

    float* clean = batch.clean.data() + static_cast<std::size_t>(s) * ppix;
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x)
        clean[static_cast<std::size_t>(y) * patch + x] = static_cast<float>(img.at(y0 + y, x0 + x));

    float* degraded = batch.degraded.data() + static_cast<std::size_t>(s) * ppix;
    if (cfg.task == TrainTask::kDenoise) {
      const double sigma = cfg.sigma / 255.0;
      for (std::size_t i = 0; i < ppix; ++i) {
        degraded[i] = clean[i] + static_cast<float>(sigma * rng.gaussian());
      }
    } else {
      const int f = cfg.sr_factors[rng.uniform_index(cfg.sr_factors.size())];
      std::vector<double> px(clean, clean + ppix);
      for (double& v : px) v = std::min(1.0, std::max(0.0, v));
      GrayImage hi(patch, patch, std::move(px));
      GrayImage lo = bicubic_resize(hi, std::max(1, patch / f), std::max(1, patch / f));
      GrayImage up = bicubic_resize(lo, patch, patch);
      for (std::size_t i = 0; i < ppix; ++i) degraded[i] = static_cast<float>(up.pixels()[i]);
    }
  }
  return batch;
}

// --- the loop --------------------------------------------------------------------

namespace {

void append_metrics(std::ofstream& os, int step, double loss, double lr, double grad_norm) {
  if (!os.is_open()) return;
  json line = {{"step", step}, {"loss", loss}, {"lr", lr}, {"grad_norm", grad_norm}};
  os << line.dump() << "\n";
}

std::string opt_state_path(const std::string& ckpt_path) { return ckpt_path + ".state"; }

void save_opt_state(const std::string& path, AdamState<float>& adam, int next_step,
                    const Rng& rng) {
  TensorFile file;
  file.config["step"] = std::to_string(next_step);
  file.config["adam_step"] = std::to_string(adam.step);
  file.config["rng"] = rng.serialize();
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    file.tensors.push_back({"adam.m." + std::to_string(i), adam.m[i]});
    file.tensors.push_back({"adam.v." + std::to_string(i), adam.v[i]});
  }
  save_tensor_file(path, file);
}

}  // namespace

TrainResult train(const std::vector<GrayImage>& corpus, const TrainConfig& cfg,
                  const std::string& ckpt_path, const std::string& metrics_path,
                  const std::string& resume_path) {
  cfg.validate();
  if (corpus.empty()) throw ShapeError("no training images");

  Rng rng(cfg.seed);
  NlrnParams<float> params = NlrnParams<float>::make(cfg.model);
  params.xavier_init(rng);

  AdamState<float> adam = AdamState<float>::make(trainable_tensors(params));
  int start_step = 0;
  if (!resume_path.empty()) {
    auto [loaded, loaded_cfg] = load_checkpoint<float>(resume_path);
    if (loaded_cfg.channels != cfg.model.channels || loaded_cfg.embed != cfg.model.embed ||
        loaded_cfg.neighborhood != cfg.model.neighborhood || loaded_cfg.unroll != cfg.model.unroll) {
      throw ShapeError("resume checkpoint does not match the configured model");
    }
    params = std::move(loaded);
    const std::string state_path = opt_state_path(resume_path);
    if (std::ifstream(state_path).good()) {
      TensorFile state = load_tensor_file(state_path);
      start_step = std::stoi(state.config.at("step"));
      adam.step = std::stol(state.config.at("adam_step"));
      rng.deserialize(state.config.at("rng"));
      for (std::size_t i = 0; i < adam.m.size(); ++i) {
        adam.m[i] = state.tensors.at(2 * i).tensor;
        adam.v[i] = state.tensors.at(2 * i + 1).tensor;
      }
    }
  }

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics log: " + metrics_path);
  }

  TrainResult result;
  result.model = cfg.model;
  bool wrote_checkpoint = false;

  for (int step = start_step; step < cfg.steps; ++step) {
    const double lr = lr_schedule(cfg.lr, step, cfg.steps);
    SampleBatch batch = sample_batch(corpus, cfg, rng);

    double loss = 0;
    NlrnParams<float> grad_shell = NlrnParams<float>::make(cfg.model);
    if (cfg.threads > 1 && cfg.batch > 1) {
      // Data-parallel: per-sample forward/backward, gradients summed in
      // sample order by this thread. Not covered by the bit-determinism
      // guarantee.
      const int n = cfg.batch;
      std::vector<NlrnGrads<float>> partial(n);
      const int hw = cfg.effective_patch();
      parallel_chunks(0, n, cfg.threads, [&](int s0, int s1, int) {
        for (int s = s0; s < s1; ++s) {
          std::vector<float> noisy(batch.degraded.data() + static_cast<std::size_t>(s) * hw * hw,
                                   batch.degraded.data() + static_cast<std::size_t>(s + 1) * hw * hw);
          std::vector<float> clean(batch.clean.data() + static_cast<std::size_t>(s) * hw * hw,
                                   batch.clean.data() + static_cast<std::size_t>(s + 1) * hw * hw);
          DenseTensor<float> xn({1, 1, hw, hw}, std::move(noisy));
          DenseTensor<float> xc({1, 1, hw, hw}, std::move(clean));
          NlrnParams<float> local = params;  // BN buffers update on the copy
          ForwardRecord<float> rec =
              nlrn_forward(xn, local, cfg.model, BnMode::kTrain, false, true);
          partial[s] = nlrn_backward(rec, xc);
        }
      });
      // One serial pass refreshes the running statistics exactly once.
      ForwardRecord<float> rec =
          nlrn_forward(batch.degraded, params, cfg.model, BnMode::kTrain, true, false);
      (void)rec;
      auto dst = trainable_tensors(grad_shell);
      const float inv_n = 1.0f / static_cast<float>(cfg.batch);
      for (int s = 0; s < n; ++s) {
        auto src = trainable_tensors(partial[s].params);
        for (std::size_t i = 0; i < dst.size(); ++i) {
          for (std::size_t j = 0; j < dst[i]->size(); ++j) {
            (*dst[i])[j] += (*src[i])[j] * inv_n;
          }
        }
        loss += partial[s].loss * inv_n;
      }
    } else {
      ForwardRecord<float> record =
          nlrn_forward(batch.degraded, params, cfg.model, BnMode::kTrain, true, true);
      NlrnGrads<float> grads = nlrn_backward(record, batch.clean);
      loss = grads.loss;
      grad_shell = std::move(grads.params);
    }

    if (!std::isfinite(loss)) {
      throw NumericError("training diverged: non-finite loss at step " + std::to_string(step) +
                         (wrote_checkpoint ? " (last checkpoint retained: " + ckpt_path + ")"
                                           : " (no checkpoint written yet)"));
    }

    auto gvec = trainable_tensors(grad_shell);
    const double grad_norm = clip_gradients(gvec, cfg.clip_norm);
    adam_step(trainable_tensors(params), gvec, adam, static_cast<float>(lr));

    append_metrics(metrics, step, loss, lr, grad_norm);
    if (step == start_step) result.first_loss = loss;
    result.last_loss = loss;
    result.steps_run = step + 1;

    if (!ckpt_path.empty() && cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0) {
      save_checkpoint(ckpt_path, params, cfg.model);
      save_opt_state(opt_state_path(ckpt_path), adam, step + 1, rng);
      wrote_checkpoint = true;
    }
  }

  if (!ckpt_path.empty()) {
    save_checkpoint(ckpt_path, params, cfg.model);
    save_opt_state(opt_state_path(ckpt_path), adam, cfg.steps, rng);
  }
  result.params = std::move(params);
  return result;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(const std::vector<DenseTensor<float>*>&,
                        const std::vector<DenseTensor<float>*>&, AdamState<float>&, float);
template void adam_step(const std::vector<DenseTensor<double>*>&,
                        const std::vector<DenseTensor<double>*>&, AdamState<double>&, double);
template double clip_gradients(const std::vector<DenseTensor<float>*>&, double);
template double clip_gradients(const std::vector<DenseTensor<double>*>&, double);

}  // namespace nlrn
