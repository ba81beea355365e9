#include "nlrn/model.hpp"

#include <cmath>

namespace nlrn {

void NlrnConfig::validate() const {
  if (channels < 1) throw ShapeError("config: channels must be >= 1");
  if (embed < 1 || embed > channels) throw ShapeError("config: embed must satisfy 1 <= l <= m");
  if (neighborhood < 1 || neighborhood % 2 == 0) {
    throw ShapeError("config: neighborhood must be odd and >= 1");
  }
  if (unroll < 1) throw ShapeError("config: unroll must be >= 1");
  if (metric_h <= 0) throw ShapeError("config: metric_h must be positive");
}

template <typename T>
NlrnParams<T> NlrnParams<T>::make(const NlrnConfig& cfg) {
  cfg.validate();
  NlrnParams<T> p;
  p.input_conv = ConvLayer<T>::make(cfg.channels, 1, 3);
  p.nl = NonLocalWeights<T>::make(cfg.channels, cfg.embed, cfg.metric);
  p.nl.h = static_cast<T>(cfg.metric_h);
  p.bn1 = BatchNormLayer<T>::make(cfg.channels);
  p.conv1 = ConvLayer<T>::make(cfg.channels, cfg.channels, 3);
  p.bn2 = BatchNormLayer<T>::make(cfg.channels);
  p.conv2 = ConvLayer<T>::make(cfg.channels, cfg.channels, 3);
  p.bn_out = BatchNormLayer<T>::make(cfg.channels);
  p.output_conv = ConvLayer<T>::make(1, cfg.channels, 3);
  return p;
}

namespace {

template <typename T>
void xavier_fill(DenseTensor<T>& t, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

}  // namespace

template <typename T>
void NlrnParams<T>::xavier_init(Rng& rng) {
  auto conv_fans = [](const ConvLayer<T>& c) {
    const int k = c.ksize() * c.ksize();
    return std::pair<int, int>{c.in_channels() * k, c.out_channels() * k};
  };
  for (ConvLayer<T>* c : {&input_conv, &conv1, &conv2, &output_conv}) {
    auto [fi, fo] = conv_fans(*c);
    xavier_fill(c->kernel, fi, fo, rng);
    c->bias.fill(T(0));
  }
  xavier_fill(nl.w_theta, nl.m(), nl.l(), rng);
  xavier_fill(nl.w_psi, nl.m(), nl.l(), rng);
  xavier_fill(nl.w_g, nl.m(), nl.m(), rng);
  for (BatchNormLayer<T>* bn : {&bn1, &bn2, &bn_out}) {
    bn->gamma.fill(T(1));
    bn->beta.fill(T(0));
    bn->running_mean.fill(T(0));
    bn->running_var.fill(T(1));
  }
}

template <typename T>
std::vector<NamedTensor<T>> named_tensors(NlrnParams<T>& p) {
  return {
      {"input_conv.kernel", &p.input_conv.kernel, true},
      {"input_conv.bias", &p.input_conv.bias, true},
      {"nl.w_theta", &p.nl.w_theta, true},
      {"nl.w_psi", &p.nl.w_psi, true},
      {"nl.w_g", &p.nl.w_g, true},
      {"bn1.gamma", &p.bn1.gamma, true},
      {"bn1.beta", &p.bn1.beta, true},
      {"bn1.running_mean", &p.bn1.running_mean, false},
      {"bn1.running_var", &p.bn1.running_var, false},
      {"conv1.kernel", &p.conv1.kernel, true},
      {"conv1.bias", &p.conv1.bias, true},
      {"bn2.gamma", &p.bn2.gamma, true},
      {"bn2.beta", &p.bn2.beta, true},
      {"bn2.running_mean", &p.bn2.running_mean, false},
      {"bn2.running_var", &p.bn2.running_var, false},
      {"conv2.kernel", &p.conv2.kernel, true},
      {"conv2.bias", &p.conv2.bias, true},
      {"bn_out.gamma", &p.bn_out.gamma, true},
      {"bn_out.beta", &p.bn_out.beta, true},
      {"bn_out.running_mean", &p.bn_out.running_mean, false},
      {"bn_out.running_var", &p.bn_out.running_var, false},
      {"output_conv.kernel", &p.output_conv.kernel, true},
      {"output_conv.bias", &p.output_conv.bias, true},
  };
}

template <typename T>
std::vector<DenseTensor<T>*> trainable_tensors(NlrnParams<T>& p) {
  std::vector<DenseTensor<T>*> out;
  for (auto& nt : named_tensors(p)) {
    if (nt.trainable) out.push_back(nt.tensor);
  }
  return out;
}

// --- forward -------------------------------------------------------------------

namespace {

template <typename T>
DenseTensor<T> slice_sample(const DenseTensor<T>& batch, int s) {
  const int ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t count = static_cast<std::size_t>(ch) * h * w;
  std::vector<T> data(batch.data() + s * count, batch.data() + (s + 1) * count);
  return DenseTensor<T>({ch, h, w}, std::move(data));
}

template <typename T>
void write_sample(DenseTensor<T>& batch, int s, const DenseTensor<T>& sample) {
  const std::size_t count = sample.size();
  std::copy(sample.data(), sample.data() + count, batch.data() + s * count);
}

/// Shared body of `transition` and the unrolled batch forward. feats is
/// [n,m,H,W]; corrs holds one state per sample and is updated in place.
template <typename T>
DenseTensor<T> step_batch(const DenseTensor<T>& feats, std::vector<CorrelationState<T>>* corrs,
                          const DenseTensor<T>& s0_feat, NlrnParams<T>& params,
                          const NlrnConfig& cfg, BnMode mode, bool update_running,
                          StepTapes<T>* tapes) {
  const int n = feats.dim(0), m = feats.dim(1), h = feats.dim(2), w = feats.dim(3);
  NeighborhoodSpec spec{cfg.neighborhood};

  DenseTensor<T> nl_out({n, m, h, w});
  if (tapes) tapes->nl.resize(n);
  for (int s = 0; s < n; ++s) {
    DenseTensor<T> fs = slice_sample(feats, s);
    const CorrelationState<T>* prior =
        cfg.propagate_corr && corrs ? &(*corrs)[s] : nullptr;
    NonLocalResult<T> res =
        nonlocal_forward(fs, params.nl, spec, prior, tapes ? &tapes->nl[s] : nullptr);
    write_sample(nl_out, s, res.output);
    if (corrs) (*corrs)[s] = std::move(res.emitted);
  }

  DenseTensor<T> x1 = batchnorm_forward(nl_out, params.bn1, mode, tapes ? &tapes->bn1 : nullptr,
                                        update_running);
  DenseTensor<T> r1 = relu_forward(x1, tapes ? &tapes->relu1 : nullptr);
  DenseTensor<T> c1 = conv2d_forward_batch(r1, params.conv1, tapes ? &tapes->conv1 : nullptr);
  DenseTensor<T> x2 = batchnorm_forward(c1, params.bn2, mode, tapes ? &tapes->bn2 : nullptr,
                                        update_running);
  DenseTensor<T> r2 = relu_forward(x2, tapes ? &tapes->relu2 : nullptr);
  DenseTensor<T> c2 = conv2d_forward_batch(r2, params.conv2, tapes ? &tapes->conv2 : nullptr);

  for (std::size_t i = 0; i < c2.size(); ++i) c2[i] += s0_feat[i];
  return c2;
}

}  // namespace

template <typename T>
RecurrentState<T> init_state(const DenseTensor<T>& image, const NlrnParams<T>& params,
                             const NlrnConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("init_state expects a single-channel image [1,H,W]");
  }
  RecurrentState<T> s;
  s.feat = conv2d_forward<T>(image, params.input_conv);
  s.corr = CorrelationState<T>::zeros(image.dim(1), image.dim(2), cfg.neighborhood);
  return s;
}

template <typename T>
RecurrentState<T> transition(const RecurrentState<T>& prev, const RecurrentState<T>& s0,
                             NlrnParams<T>& params, const NlrnConfig& cfg, BnMode mode) {
  const int m = prev.feat.dim(0), h = prev.feat.dim(1), w = prev.feat.dim(2);
  if (!prev.feat.same_shape(s0.feat)) throw ShapeError("transition: state shapes disagree");
  DenseTensor<T> feats(std::vector<int>{1, m, h, w}, prev.feat.raw());
  DenseTensor<T> s0b(std::vector<int>{1, m, h, w}, s0.feat.raw());
  std::vector<CorrelationState<T>> corrs{prev.corr};
  DenseTensor<T> next =
      step_batch(feats, &corrs, s0b, params, cfg, mode, /*update_running=*/mode == BnMode::kTrain,
                 static_cast<StepTapes<T>*>(nullptr));
  RecurrentState<T> out;
  out.feat = DenseTensor<T>({m, h, w}, next.raw());
  out.corr = std::move(corrs[0]);
  return out;
}

template <typename T>
ForwardRecord<T> nlrn_forward(const DenseTensor<T>& images, NlrnParams<T>& params,
                              const NlrnConfig& cfg, BnMode mode, bool update_running,
                              bool keep_tapes) {
  cfg.validate();
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw ShapeError("nlrn_forward expects images [n,1,H,W]");
  }
  const int n = images.dim(0), h = images.dim(2), w = images.dim(3);

  ForwardRecord<T> record;
  record.cfg = cfg;
  record.input = images;
  record.has_tapes = keep_tapes;

  DenseTensor<T> s0_feat = conv2d_forward_batch(images, params.input_conv,
                                                keep_tapes ? &record.input_conv_tape : nullptr);
  std::vector<CorrelationState<T>> corrs;
  corrs.reserve(n);
  for (int s = 0; s < n; ++s) {
    corrs.push_back(CorrelationState<T>::zeros(h, w, cfg.neighborhood));
  }

  DenseTensor<T> feat = s0_feat;
  if (keep_tapes) record.steps.resize(cfg.unroll);
  for (int t = 0; t < cfg.unroll; ++t) {
    feat = step_batch(feat, &corrs, s0_feat, params, cfg, mode, update_running,
                      keep_tapes ? &record.steps[t] : nullptr);
  }

  DenseTensor<T> xo = batchnorm_forward(feat, params.bn_out, mode,
                                        keep_tapes ? &record.bn_out : nullptr, update_running);
  DenseTensor<T> ro = relu_forward(xo, keep_tapes ? &record.relu_out : nullptr);
  record.residual = conv2d_forward_batch(ro, params.output_conv,
                                         keep_tapes ? &record.conv_out : nullptr);
  return record;
}

template <typename T>
double nlrn_loss(const DenseTensor<T>& residual, const DenseTensor<T>& noisy,
                 const DenseTensor<T>& clean) {
  if (!residual.same_shape(noisy) || !residual.same_shape(clean)) {
    throw ShapeError("nlrn_loss shape mismatch");
  }
  const int n = residual.dim(0);
  double total = 0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    const double e = static_cast<double>(residual[i]) + noisy[i] - clean[i];
    total += 0.5 * e * e;
  }
  return total / n;
}

template <typename T>
NlrnGrads<T> nlrn_backward(ForwardRecord<T>& record, const DenseTensor<T>& clean) {
  if (record.used) throw NumericError("forward record reused");
  if (!record.has_tapes) throw NumericError("forward record was built without tapes");
  record.used = true;
  if (!clean.same_shape(record.input)) throw ShapeError("nlrn_backward target shape mismatch");

  const NlrnConfig& cfg = record.cfg;
  const int n = record.input.dim(0), h = record.input.dim(2), w = record.input.dim(3);
  const int m = cfg.channels;

  NlrnGrads<T> out;
  out.params = NlrnParams<T>::make(cfg);
  out.loss = nlrn_loss(record.residual, record.input, clean);
  // Gradient containers start at zero, including the BN gamma slots.
  for (DenseTensor<T>* t : trainable_tensors(out.params)) t->fill(T(0));

  // dL/d residual
  DenseTensor<T> grad = DenseTensor<T>::zeros_like(record.residual);
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] = (record.residual[i] + record.input[i] - clean[i]) * inv_n;
  }

  auto add_into = [](DenseTensor<T>& dst, const DenseTensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };

  // Output head.
  {
    ConvGrads<T> cg = conv2d_backward(record.conv_out, grad);
    add_into(out.params.output_conv.kernel, cg.kernel);
    add_into(out.params.output_conv.bias, cg.bias);
    DenseTensor<T> gr = relu_backward(record.relu_out, cg.x);
    BatchNormGrads<T> bg = batchnorm_backward(record.bn_out, gr);
    add_into(out.params.bn_out.gamma, bg.gamma);
    add_into(out.params.bn_out.beta, bg.beta);
    grad = std::move(bg.x);  // dL/d feat^T
  }

  DenseTensor<T> ds0({n, m, h, w});
  std::vector<DenseTensor<T>> dcorr;  // per sample, [H,W,q,q]
  if (cfg.propagate_corr) {
    dcorr.assign(n, DenseTensor<T>({h, w, cfg.neighborhood, cfg.neighborhood}));
  }

  NeighborhoodSpec spec{cfg.neighborhood};
  (void)spec;
  for (int t = cfg.unroll - 1; t >= 0; --t) {
    StepTapes<T>& tapes = record.steps[t];
    // feat^{t+1} = conv2_out + s0.feat
    add_into(ds0, grad);

    ConvGrads<T> cg2 = conv2d_backward(tapes.conv2, grad);
    add_into(out.params.conv2.kernel, cg2.kernel);
    add_into(out.params.conv2.bias, cg2.bias);
    DenseTensor<T> gr2 = relu_backward(tapes.relu2, cg2.x);
    BatchNormGrads<T> bg2 = batchnorm_backward(tapes.bn2, gr2);
    add_into(out.params.bn2.gamma, bg2.gamma);
    add_into(out.params.bn2.beta, bg2.beta);

    ConvGrads<T> cg1 = conv2d_backward(tapes.conv1, bg2.x);
    add_into(out.params.conv1.kernel, cg1.kernel);
    add_into(out.params.conv1.bias, cg1.bias);
    DenseTensor<T> gr1 = relu_backward(tapes.relu1, cg1.x);
    BatchNormGrads<T> bg1 = batchnorm_backward(tapes.bn1, gr1);
    add_into(out.params.bn1.gamma, bg1.gamma);
    add_into(out.params.bn1.beta, bg1.beta);

    // Through the per-sample non-local modules.
    DenseTensor<T> dfeat_prev({n, m, h, w});
    for (int s = 0; s < n; ++s) {
      DenseTensor<T> go = slice_sample(bg1.x, s);
      NonLocalGrads<T> ng = nonlocal_backward(
          tapes.nl[s], go, cfg.propagate_corr ? &dcorr[s] : nullptr);
      add_into(out.params.nl.w_theta, ng.w_theta);
      add_into(out.params.nl.w_psi, ng.w_psi);
      add_into(out.params.nl.w_g, ng.w_g);
      write_sample(dfeat_prev, s, ng.features);
      if (cfg.propagate_corr) dcorr[s] = std::move(ng.prior_logits);
    }
    grad = std::move(dfeat_prev);
  }

  // The first transition consumed s^0 directly.
  add_into(ds0, grad);
  ConvGrads<T> cgi = conv2d_backward(record.input_conv_tape, ds0);
  add_into(out.params.input_conv.kernel, cgi.kernel);
  add_into(out.params.input_conv.bias, cgi.bias);
  return out;
}

template <typename T>
DenseTensor<T> image_to_tensor(const GrayImage& img) {
  DenseTensor<T> t({1, img.height(), img.width()});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(img.pixels()[i]);
  return t;
}

template <typename T>
GrayImage tensor_to_image(const DenseTensor<T>& t) {
  const int h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  if (t.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("tensor_to_image expects a single-channel tensor");
  }
  std::vector<double> px(t.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = std::min(1.0, std::max(0.0, static_cast<double>(t[i])));
  }
  return GrayImage(h, w, std::move(px));
}

template <typename T>
GrayImage restore_image(const GrayImage& img, NlrnParams<T>& params, const NlrnConfig& cfg) {
  DenseTensor<T> x({1, 1, img.height(), img.width()});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(img.pixels()[i]);
  ForwardRecord<T> record = nlrn_forward(x, params, cfg, BnMode::kInfer,
                                         /*update_running=*/false, /*keep_tapes=*/false);
  std::vector<double> px(record.residual.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = std::min(1.0, std::max(0.0, static_cast<double>(record.residual[i]) + img.pixels()[i]));
  }
  return GrayImage(img.height(), img.width(), std::move(px));
}

#define NLRN_INSTANTIATE_MODEL(T)                                                            \
  template struct NlrnParams<T>;                                                             \
  template std::vector<NamedTensor<T>> named_tensors(NlrnParams<T>&);                        \
  template std::vector<DenseTensor<T>*> trainable_tensors(NlrnParams<T>&);                   \
  template RecurrentState<T> init_state(const DenseTensor<T>&, const NlrnParams<T>&,        \
                                        const NlrnConfig&);                                  \
  template RecurrentState<T> transition(const RecurrentState<T>&, const RecurrentState<T>&, \
                                        NlrnParams<T>&, const NlrnConfig&, BnMode);          \
  template ForwardRecord<T> nlrn_forward(const DenseTensor<T>&, NlrnParams<T>&,             \
                                         const NlrnConfig&, BnMode, bool, bool);             \
  template double nlrn_loss(const DenseTensor<T>&, const DenseTensor<T>&,                   \
                            const DenseTensor<T>&);                                          \
  template NlrnGrads<T> nlrn_backward(ForwardRecord<T>&, const DenseTensor<T>&);             \
  template GrayImage restore_image(const GrayImage&, NlrnParams<T>&, const NlrnConfig&);     \
  template DenseTensor<T> image_to_tensor(const GrayImage&);                                 \
  template GrayImage tensor_to_image(const DenseTensor<T>&);

NLRN_INSTANTIATE_MODEL(float)
NLRN_INSTANTIATE_MODEL(double)

#undef NLRN_INSTANTIATE_MODEL

}  // namespace nlrn
