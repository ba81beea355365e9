#include "nlrn/diff_ops.hpp"

#include <cmath>

namespace nlrn {

template <typename T>
ConvLayer<T> ConvLayer<T>::make(int out_ch, int in_ch, int ksize) {
  if (out_ch < 1 || in_ch < 1) throw ShapeError("conv layer needs out_ch, in_ch >= 1");
  if (ksize != 1 && ksize != 3) throw ShapeError("conv kernel must be 1x1 or 3x3");
  ConvLayer<T> layer;
  layer.kernel = DenseTensor<T>({out_ch, in_ch, ksize, ksize});
  layer.bias = DenseTensor<T>({out_ch});
  return layer;
}

template <typename T>
BatchNormLayer<T> BatchNormLayer<T>::make(int channels) {
  if (channels < 1) throw ShapeError("batch norm needs channels >= 1");
  BatchNormLayer<T> layer;
  layer.gamma = DenseTensor<T>({channels}, T(1));
  layer.beta = DenseTensor<T>({channels});
  layer.running_mean = DenseTensor<T>({channels});
  layer.running_var = DenseTensor<T>({channels}, T(1));
  return layer;
}

namespace {

template <typename T>
void consume(bool& used, const char* what) {
  if (used) throw NumericError(std::string(what) + " tape reused");
  used = true;
}

// Zero-pads one [ch,h,w] block of `x` starting at `src` into `dst`.
template <typename T>
void pad_plane(const T* src, T* dst, int ch, int h, int w, int pad) {
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  std::fill(dst, dst + static_cast<std::size_t>(ch) * hp * wp, T(0));
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < h; ++y) {
      const T* s = src + (static_cast<std::size_t>(c) * h + y) * w;
      T* d = dst + (static_cast<std::size_t>(c) * hp + y + pad) * wp + pad;
      std::copy(s, s + w, d);
    }
  }
}

}  // namespace

template <typename T>
DenseTensor<T> conv2d_forward_batch(const DenseTensor<T>& x, const ConvLayer<T>& layer,
                                    ConvTape<T>* tape) {
  if (x.rank() != 4) throw ShapeError("conv2d batch input must be [n,ch,h,w]");
  const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (ch != layer.in_channels()) {
    throw ShapeError("conv2d channel mismatch: input " + std::to_string(ch) + ", layer " +
                     std::to_string(layer.in_channels()));
  }
  if (!layer.kernel.all_finite() || !layer.bias.all_finite()) {
    throw NumericError("conv2d layer has non-finite parameters");
  }
  const int out_ch = layer.out_channels();
  const int k = layer.ksize();
  const int pad = k / 2;
  const int hp = h + 2 * pad, wp = w + 2 * pad;

  DenseTensor<T> y({n, out_ch, h, w});
  std::vector<T> xpad(static_cast<std::size_t>(ch) * hp * wp);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  for (int s = 0; s < n; ++s) {
    pad_plane(x.data() + static_cast<std::size_t>(s) * ch * plane, xpad.data(), ch, h, w, pad);
    for (int o = 0; o < out_ch; ++o) {
      T* yo = y.data() + (static_cast<std::size_t>(s) * out_ch + o) * plane;
      std::fill(yo, yo + plane, layer.bias[o]);
      for (int c = 0; c < ch; ++c) {
        const T* xc = xpad.data() + static_cast<std::size_t>(c) * hp * wp;
        for (int u = 0; u < k; ++u) {
          for (int v = 0; v < k; ++v) {
            const T kv = layer.kernel.at(o, c, u, v);
            if (kv == T(0)) continue;
            for (int i = 0; i < h; ++i) {
              const T* xrow = xc + static_cast<std::size_t>(i + u) * wp + v;
              T* yrow = yo + static_cast<std::size_t>(i) * w;
              for (int j = 0; j < w; ++j) yrow[j] += kv * xrow[j];
            }
          }
        }
      }
    }
  }
  if (tape) {
    tape->x = x;
    tape->kernel = layer.kernel;
    tape->rank3_input = false;
    tape->used = false;
  }
  return y;
}

template <typename T>
DenseTensor<T> conv2d_forward(const DenseTensor<T>& x, const ConvLayer<T>& layer,
                              ConvTape<T>* tape) {
  if (x.rank() != 3) throw ShapeError("conv2d input must be [ch,h,w]");
  DenseTensor<T> x4(std::vector<int>{1, x.dim(0), x.dim(1), x.dim(2)}, x.raw());
  DenseTensor<T> y4 = conv2d_forward_batch(x4, layer, tape);
  if (tape) tape->rank3_input = true;
  return DenseTensor<T>({y4.dim(1), y4.dim(2), y4.dim(3)}, y4.raw());
}

template <typename T>
ConvGrads<T> conv2d_backward(ConvTape<T>& tape, const DenseTensor<T>& grad_out) {
  consume<T>(tape.used, "conv2d");
  const bool rank3 = tape.rank3_input;
  DenseTensor<T> gout = grad_out;
  if (rank3) {
    if (grad_out.rank() != 3) throw ShapeError("conv2d_backward grad rank mismatch");
    gout = DenseTensor<T>({1, grad_out.dim(0), grad_out.dim(1), grad_out.dim(2)}, grad_out.raw());
  }
  const int n = tape.x.dim(0), ch = tape.x.dim(1), h = tape.x.dim(2), w = tape.x.dim(3);
  const int out_ch = tape.kernel.dim(0);
  const int k = tape.kernel.dim(2);
  const int pad = k / 2;
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  if (gout.rank() != 4 || gout.dim(0) != n || gout.dim(1) != out_ch || gout.dim(2) != h ||
      gout.dim(3) != w) {
    throw ShapeError("conv2d_backward grad shape mismatch");
  }

  ConvGrads<T> grads;
  grads.x = DenseTensor<T>::zeros_like(tape.x);
  grads.kernel = DenseTensor<T>::zeros_like(tape.kernel);
  grads.bias = DenseTensor<T>({out_ch});

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<T> xpad(static_cast<std::size_t>(ch) * hp * wp);
  std::vector<T> gxpad(static_cast<std::size_t>(ch) * hp * wp);

  for (int s = 0; s < n; ++s) {
    pad_plane(tape.x.data() + static_cast<std::size_t>(s) * ch * plane, xpad.data(), ch, h, w,
              pad);
    std::fill(gxpad.begin(), gxpad.end(), T(0));
    for (int o = 0; o < out_ch; ++o) {
      const T* go = gout.data() + (static_cast<std::size_t>(s) * out_ch + o) * plane;
      T bsum = T(0);
      for (std::size_t i = 0; i < plane; ++i) bsum += go[i];
      grads.bias[o] += bsum;
      for (int c = 0; c < ch; ++c) {
        const T* xc = xpad.data() + static_cast<std::size_t>(c) * hp * wp;
        T* gxc = gxpad.data() + static_cast<std::size_t>(c) * hp * wp;
        for (int u = 0; u < k; ++u) {
          for (int v = 0; v < k; ++v) {
            const T kv = tape.kernel.at(o, c, u, v);
            T ksum = T(0);
            for (int i = 0; i < h; ++i) {
              const T* xrow = xc + static_cast<std::size_t>(i + u) * wp + v;
              T* gxrow = gxc + static_cast<std::size_t>(i + u) * wp + v;
              const T* grow = go + static_cast<std::size_t>(i) * w;
              for (int j = 0; j < w; ++j) {
                ksum += grow[j] * xrow[j];
                gxrow[j] += kv * grow[j];
              }
            }
            grads.kernel.at(o, c, u, v) += ksum;
          }
        }
      }
    }
    // Crop the padded gradient back to [ch,h,w].
    for (int c = 0; c < ch; ++c) {
      for (int y = 0; y < h; ++y) {
        const T* src = gxpad.data() + (static_cast<std::size_t>(c) * hp + y + pad) * wp + pad;
        T* dst = grads.x.data() + ((static_cast<std::size_t>(s) * ch + c) * h + y) * w;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
    }
  }
  if (rank3) {
    grads.x = DenseTensor<T>({ch, h, w}, grads.x.raw());
  }
  return grads;
}

// --- relu --------------------------------------------------------------------

template <typename T>
DenseTensor<T> relu_forward(const DenseTensor<T>& x, ReluTape<T>* tape) {
  DenseTensor<T> y = DenseTensor<T>::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (tape) {
    tape->x = x;
    tape->used = false;
  }
  return y;
}

template <typename T>
DenseTensor<T> relu_backward(ReluTape<T>& tape, const DenseTensor<T>& grad_out) {
  consume<T>(tape.used, "relu");
  if (!tape.x.same_shape(grad_out)) throw ShapeError("relu_backward grad shape mismatch");
  DenseTensor<T> gx = DenseTensor<T>::zeros_like(grad_out);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    gx[i] = tape.x[i] > T(0) ? grad_out[i] : T(0);
  }
  return gx;
}

// --- batch norm ----------------------------------------------------------------

template <typename T>
DenseTensor<T> batchnorm_forward(const DenseTensor<T>& x, BatchNormLayer<T>& layer,
                                 BnMode mode, BatchNormTape<T>* tape, bool update_running) {
  if (x.rank() != 4) throw ShapeError("batchnorm input must be [n,ch,h,w]");
  const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (ch != layer.channels()) throw ShapeError("batchnorm channel mismatch");
  const std::size_t per_ch = static_cast<std::size_t>(n) * h * w;
  if (mode == BnMode::kTrain && per_ch < 2) {
    throw ShapeError("batchnorm train mode needs more than one element per channel");
  }

  DenseTensor<T> y = DenseTensor<T>::zeros_like(x);
  DenseTensor<T> xhat;
  if (tape) xhat = DenseTensor<T>::zeros_like(x);
  DenseTensor<T> inv_std({ch});
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  for (int c = 0; c < ch; ++c) {
    T mean, var;
    if (mode == BnMode::kTrain) {
      double sum = 0, sq = 0;
      for (int s = 0; s < n; ++s) {
        const T* xc = x.data() + (static_cast<std::size_t>(s) * ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += xc[i];
          sq += static_cast<double>(xc[i]) * xc[i];
        }
      }
      mean = static_cast<T>(sum / static_cast<double>(per_ch));
      var = static_cast<T>(std::max(0.0, sq / static_cast<double>(per_ch) -
                                             (sum / static_cast<double>(per_ch)) *
                                                 (sum / static_cast<double>(per_ch))));
      if (update_running) {
        layer.running_mean[c] = layer.momentum * layer.running_mean[c] + (T(1) - layer.momentum) * mean;
        layer.running_var[c] = layer.momentum * layer.running_var[c] + (T(1) - layer.momentum) * var;
      }
    } else {
      mean = layer.running_mean[c];
      var = layer.running_var[c];
    }
    const T istd = T(1) / std::sqrt(var + layer.eps);
    inv_std[c] = istd;
    const T g = layer.gamma[c], b = layer.beta[c];
    for (int s = 0; s < n; ++s) {
      const T* xc = x.data() + (static_cast<std::size_t>(s) * ch + c) * plane;
      T* yc = y.data() + (static_cast<std::size_t>(s) * ch + c) * plane;
      T* hc = tape ? xhat.data() + (static_cast<std::size_t>(s) * ch + c) * plane : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xn = (xc[i] - mean) * istd;
        if (hc) hc[i] = xn;
        yc[i] = g * xn + b;
      }
    }
  }
  if (tape) {
    tape->xhat = std::move(xhat);
    tape->inv_std = std::move(inv_std);
    tape->gamma = layer.gamma;
    tape->train_mode = mode == BnMode::kTrain;
    tape->used = false;
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(BatchNormTape<T>& tape, const DenseTensor<T>& grad_out) {
  consume<T>(tape.used, "batchnorm");
  if (!tape.train_mode) throw NumericError("batchnorm_backward needs a train-mode tape");
  if (!tape.xhat.same_shape(grad_out)) throw ShapeError("batchnorm_backward grad shape mismatch");
  const int n = grad_out.dim(0), ch = grad_out.dim(1), h = grad_out.dim(2), w = grad_out.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T inv_count = T(1) / static_cast<T>(static_cast<std::size_t>(n) * plane);

  BatchNormGrads<T> grads;
  grads.x = DenseTensor<T>::zeros_like(grad_out);
  grads.gamma = DenseTensor<T>({ch});
  grads.beta = DenseTensor<T>({ch});

  for (int c = 0; c < ch; ++c) {
    T dbeta = T(0), dgamma = T(0);
    for (int s = 0; s < n; ++s) {
      const std::size_t off = (static_cast<std::size_t>(s) * ch + c) * plane;
      const T* go = grad_out.data() + off;
      const T* xh = tape.xhat.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        dbeta += go[i];
        dgamma += go[i] * xh[i];
      }
    }
    grads.beta[c] = dbeta;
    grads.gamma[c] = dgamma;
    const T coeff = tape.gamma[c] * tape.inv_std[c];
    const T mean_g = dbeta * inv_count;
    const T mean_gx = dgamma * inv_count;
    for (int s = 0; s < n; ++s) {
      const std::size_t off = (static_cast<std::size_t>(s) * ch + c) * plane;
      const T* go = grad_out.data() + off;
      const T* xh = tape.xhat.data() + off;
      T* gx = grads.x.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        gx[i] = coeff * (go[i] - mean_g - xh[i] * mean_gx);
      }
    }
  }
  return grads;
}

// --- row softmax -----------------------------------------------------------------

template <typename T>
DenseTensor<T> softmax_rows_forward(const DenseTensor<T>& logits, SoftmaxTape<T>* tape) {
  const int rows = logits.rows(), cols = logits.cols();
  if (!logits.all_finite()) throw NumericError("softmax logits must be finite");
  DenseTensor<T> w({rows, cols});
  for (int r = 0; r < rows; ++r) {
    const T* lr = logits.data() + static_cast<std::size_t>(r) * cols;
    T* wr = w.data() + static_cast<std::size_t>(r) * cols;
    T mx = lr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, lr[c]);
    T sum = T(0);
    for (int c = 0; c < cols; ++c) {
      wr[c] = std::exp(lr[c] - mx);
      sum += wr[c];
    }
    for (int c = 0; c < cols; ++c) wr[c] /= sum;
  }
  if (tape) {
    tape->weights = w;
    tape->used = false;
  }
  return w;
}

template <typename T>
DenseTensor<T> softmax_rows_backward(SoftmaxTape<T>& tape, const DenseTensor<T>& grad_out) {
  consume<T>(tape.used, "softmax");
  if (!tape.weights.same_shape(grad_out)) throw ShapeError("softmax_backward grad shape mismatch");
  const int rows = grad_out.rows(), cols = grad_out.cols();
  DenseTensor<T> gl({rows, cols});
  for (int r = 0; r < rows; ++r) {
    const T* wr = tape.weights.data() + static_cast<std::size_t>(r) * cols;
    const T* gr = grad_out.data() + static_cast<std::size_t>(r) * cols;
    T dot = T(0);
    for (int c = 0; c < cols; ++c) dot += wr[c] * gr[c];
    T* out = gl.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) out[c] = wr[c] * (gr[c] - dot);
  }
  return gl;
}

#define NLRN_INSTANTIATE_DIFF_OPS(T)                                                       \
  template struct ConvLayer<T>;                                                            \
  template struct BatchNormLayer<T>;                                                       \
  template DenseTensor<T> conv2d_forward(const DenseTensor<T>&, const ConvLayer<T>&,       \
                                         ConvTape<T>*);                                    \
  template DenseTensor<T> conv2d_forward_batch(const DenseTensor<T>&, const ConvLayer<T>&, \
                                               ConvTape<T>*);                              \
  template ConvGrads<T> conv2d_backward(ConvTape<T>&, const DenseTensor<T>&);              \
  template DenseTensor<T> relu_forward(const DenseTensor<T>&, ReluTape<T>*);               \
  template DenseTensor<T> relu_backward(ReluTape<T>&, const DenseTensor<T>&);              \
  template DenseTensor<T> batchnorm_forward(const DenseTensor<T>&, BatchNormLayer<T>&,     \
                                            BnMode, BatchNormTape<T>*, bool);              \
  template BatchNormGrads<T> batchnorm_backward(BatchNormTape<T>&, const DenseTensor<T>&); \
  template DenseTensor<T> softmax_rows_forward(const DenseTensor<T>&, SoftmaxTape<T>*);    \
  template DenseTensor<T> softmax_rows_backward(SoftmaxTape<T>&, const DenseTensor<T>&);

NLRN_INSTANTIATE_DIFF_OPS(float)
NLRN_INSTANTIATE_DIFF_OPS(double)

#undef NLRN_INSTANTIATE_DIFF_OPS

}  // namespace nlrn
