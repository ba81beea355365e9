#pragma once

#include <string>
#include <vector>

#include "nlrn/diff_ops.hpp"
#include "nlrn/imaging.hpp"
#include "nlrn/nonlocal.hpp"
#include "nlrn/rng.hpp"
#include "nlrn/tensor.hpp"

namespace nlrn {

struct NlrnConfig {
  int channels = 128;    // m, filters per layer
  int embed = 64;        // l
  int neighborhood = 45; // q
  int unroll = 12;       // T
  Metric metric = Metric::kEmbeddedGaussian;
  double metric_h = 1.0;       // euclidean_gaussian only
  bool propagate_corr = true;  // feed each state's logits into the next

  static NlrnConfig paper_preset() { return NlrnConfig{}; }
  static NlrnConfig desk_preset() {
    NlrnConfig cfg;
    cfg.channels = 16;
    cfg.embed = 8;
    cfg.neighborhood = 9;
    cfg.unroll = 3;
    return cfg;
  }
  void validate() const;
};

/// One copy of every learnable tensor; reused at every recurrent step.
template <typename T>
struct NlrnParams {
  ConvLayer<T> input_conv;   // image -> m, 3x3, no pre-activation
  NonLocalWeights<T> nl;
  BatchNormLayer<T> bn1;     // pre-activation of conv1
  ConvLayer<T> conv1;        // m -> m, 3x3
  BatchNormLayer<T> bn2;
  ConvLayer<T> conv2;
  BatchNormLayer<T> bn_out;  // pre-activation of the output conv
  ConvLayer<T> output_conv;  // m -> 1, 3x3

  static NlrnParams make(const NlrnConfig& cfg);
  void xavier_init(Rng& rng);
};

template <typename T>
struct NamedTensor {
  std::string name;
  DenseTensor<T>* tensor;
  bool trainable;
};

/// Fixed enumeration order; it defines the checkpoint layout and the
/// optimizer slot order.
template <typename T>
std::vector<NamedTensor<T>> named_tensors(NlrnParams<T>& params);

template <typename T>
std::vector<DenseTensor<T>*> trainable_tensors(NlrnParams<T>& params);

/// s^t = {s_feat, s_corr}.
template <typename T>
struct RecurrentState {
  DenseTensor<T> feat;       // [m,H,W]
  CorrelationState<T> corr;  // [H,W,q,q]
};

/// s^0: feature map after the input convolution, zero correlation logits.
template <typename T>
RecurrentState<T> init_state(const DenseTensor<T>& image, const NlrnParams<T>& params,
                             const NlrnConfig& cfg);

/// One recurrent transition: non-local module (with the previous state's
/// logits as prior), BN-ReLU-conv twice, then the identity path from s^0.
template <typename T>
RecurrentState<T> transition(const RecurrentState<T>& prev, const RecurrentState<T>& s0,
                             NlrnParams<T>& params, const NlrnConfig& cfg,
                             BnMode mode = BnMode::kInfer);

template <typename T>
struct StepTapes {
  std::vector<NonLocalTape<T>> nl;  // one per sample
  BatchNormTape<T> bn1;
  ReluTape<T> relu1;
  ConvTape<T> conv1;
  BatchNormTape<T> bn2;
  ReluTape<T> relu2;
  ConvTape<T> conv2;
};

/// Everything one backward pass over the unrolled network needs.
template <typename T>
struct ForwardRecord {
  NlrnConfig cfg;
  DenseTensor<T> input;     // [n,1,H,W]
  DenseTensor<T> residual;  // [n,1,H,W], unclamped
  ConvTape<T> input_conv_tape;
  std::vector<StepTapes<T>> steps;
  BatchNormTape<T> bn_out;
  ReluTape<T> relu_out;
  ConvTape<T> conv_out;
  bool has_tapes = false;
  bool used = false;
};

/// Unrolls the transition `cfg.unroll` times over a minibatch [n,1,H,W] and
/// applies the output convolution; `restored = residual + input` stays
/// unclamped (clamping happens only at image export).
template <typename T>
ForwardRecord<T> nlrn_forward(const DenseTensor<T>& images, NlrnParams<T>& params,
                              const NlrnConfig& cfg, BnMode mode,
                              bool update_running = true, bool keep_tapes = false);

/// (1/n) * sum over samples of 0.5 * ||residual + noisy - clean||^2.
template <typename T>
double nlrn_loss(const DenseTensor<T>& residual, const DenseTensor<T>& noisy,
                 const DenseTensor<T>& clean);

/// Backpropagation through time. Per-step parameter gradients are summed
/// across the shared weights; gradients flow through both the feature path
/// and the propagated correlation logits, and through every identity-path
/// use of s^0. Returns gradients in an NlrnParams shell (running-stat slots
/// stay zero) plus the loss.
template <typename T>
struct NlrnGrads {
  NlrnParams<T> params;
  double loss = 0;
};

template <typename T>
NlrnGrads<T> nlrn_backward(ForwardRecord<T>& record, const DenseTensor<T>& clean);

/// Single-image restoration (infer mode): [0,1] image in, clamped image out.
template <typename T>
GrayImage restore_image(const GrayImage& img, NlrnParams<T>& params, const NlrnConfig& cfg);

template <typename T>
DenseTensor<T> image_to_tensor(const GrayImage& img);
template <typename T>
GrayImage tensor_to_image(const DenseTensor<T>& t);

}  // namespace nlrn
