#pragma once

#include "nlrn/tensor.hpp"

namespace nlrn {

/// 2D convolution parameters, stride 1, size-preserving zero padding.
/// Kernel is [out_ch, in_ch, kh, kw] with (kh,kw) in {(1,1),(3,3)}.
template <typename T>
struct ConvLayer {
  DenseTensor<T> kernel;
  DenseTensor<T> bias;

  static ConvLayer make(int out_ch, int in_ch, int ksize);
  int out_channels() const { return kernel.dim(0); }
  int in_channels() const { return kernel.dim(1); }
  int ksize() const { return kernel.dim(2); }
};

template <typename T>
struct BatchNormLayer {
  DenseTensor<T> gamma;
  DenseTensor<T> beta;
  DenseTensor<T> running_mean;
  DenseTensor<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  static BatchNormLayer make(int channels);
  int channels() const { return gamma.dim(0); }
};

enum class BnMode { kTrain, kInfer };

// Tapes cache the forward intermediates one backward pass needs. They are
// single-use: backward flips `used` and throws on a second call.

template <typename T>
struct ConvTape {
  DenseTensor<T> x;        // [n,ch,h,w]
  DenseTensor<T> kernel;   // copy taken at forward time
  bool rank3_input = false;
  bool used = false;

  ConvTape() = default;
  ConvTape(const ConvTape&) = delete;
  ConvTape& operator=(const ConvTape&) = delete;
  ConvTape(ConvTape&&) = default;
  ConvTape& operator=(ConvTape&&) = default;
};

template <typename T>
struct ReluTape {
  DenseTensor<T> x;
  bool used = false;

  ReluTape() = default;
  ReluTape(const ReluTape&) = delete;
  ReluTape& operator=(const ReluTape&) = delete;
  ReluTape(ReluTape&&) = default;
  ReluTape& operator=(ReluTape&&) = default;
};

template <typename T>
struct BatchNormTape {
  DenseTensor<T> xhat;     // [n,ch,h,w]
  DenseTensor<T> inv_std;  // [ch]
  DenseTensor<T> gamma;    // copy
  bool train_mode = false;
  bool used = false;

  BatchNormTape() = default;
  BatchNormTape(const BatchNormTape&) = delete;
  BatchNormTape& operator=(const BatchNormTape&) = delete;
  BatchNormTape(BatchNormTape&&) = default;
  BatchNormTape& operator=(BatchNormTape&&) = default;
};

template <typename T>
struct SoftmaxTape {
  DenseTensor<T> weights;  // [rows, cols]
  bool used = false;

  SoftmaxTape() = default;
  SoftmaxTape(const SoftmaxTape&) = delete;
  SoftmaxTape& operator=(const SoftmaxTape&) = delete;
  SoftmaxTape(SoftmaxTape&&) = default;
  SoftmaxTape& operator=(SoftmaxTape&&) = default;
};

template <typename T>
struct ConvGrads {
  DenseTensor<T> x;
  DenseTensor<T> kernel;
  DenseTensor<T> bias;
};

template <typename T>
struct BatchNormGrads {
  DenseTensor<T> x;
  DenseTensor<T> gamma;
  DenseTensor<T> beta;
};

// --- conv2d ------------------------------------------------------------------

/// Single image [ch,h,w] -> [out_ch,h,w]; zero padding preserves spatial size.
template <typename T>
DenseTensor<T> conv2d_forward(const DenseTensor<T>& x, const ConvLayer<T>& layer,
                              ConvTape<T>* tape = nullptr);

/// Minibatch [n,ch,h,w] -> [n,out_ch,h,w].
template <typename T>
DenseTensor<T> conv2d_forward_batch(const DenseTensor<T>& x, const ConvLayer<T>& layer,
                                    ConvTape<T>* tape = nullptr);

template <typename T>
ConvGrads<T> conv2d_backward(ConvTape<T>& tape, const DenseTensor<T>& grad_out);

// --- relu --------------------------------------------------------------------

template <typename T>
DenseTensor<T> relu_forward(const DenseTensor<T>& x, ReluTape<T>* tape = nullptr);

/// Masks the gradient where x <= 0 (the subgradient at exactly 0 is 0).
template <typename T>
DenseTensor<T> relu_backward(ReluTape<T>& tape, const DenseTensor<T>& grad_out);

// --- batch norm ---------------------------------------------------------------

/// x is [n,ch,h,w]. Train mode standardizes with minibatch statistics over
/// (n,h,w) and updates the running buffers in `layer`; infer mode uses the
/// running buffers and leaves them untouched.
template <typename T>
DenseTensor<T> batchnorm_forward(const DenseTensor<T>& x, BatchNormLayer<T>& layer,
                                 BnMode mode, BatchNormTape<T>* tape = nullptr,
                                 bool update_running = true);

/// Exact train-mode gradients; the batch statistics are treated as functions
/// of x.
template <typename T>
BatchNormGrads<T> batchnorm_backward(BatchNormTape<T>& tape, const DenseTensor<T>& grad_out);

// --- row softmax ---------------------------------------------------------------

template <typename T>
DenseTensor<T> softmax_rows_forward(const DenseTensor<T>& logits, SoftmaxTape<T>* tape = nullptr);

template <typename T>
DenseTensor<T> softmax_rows_backward(SoftmaxTape<T>& tape, const DenseTensor<T>& grad_out);

}  // namespace nlrn
