#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlrn/tensor.hpp"

namespace nlrn {

enum class Metric {
  kEuclideanGaussian,    // exp{-|Xi-Xj|^2 / h^2}
  kDot,                  // Xi.Xj, mean-normalized
  kEmbeddedDot,          // theta(Xi).psi(Xj), mean-normalized
  kGaussian,             // exp{Xi.Xj}
  kSymEmbeddedGaussian,  // exp{theta(Xi).theta(Xj)}
  kEmbeddedGaussian,     // exp{theta(Xi).psi(Xj)}
};

Metric metric_from_string(const std::string& name);
std::string metric_to_string(Metric metric);

/// True for the four metrics whose exponential is realized by the downstream
/// softmax; the two dot-product metrics are normalized by neighborhood count
/// instead.
bool metric_uses_softmax(Metric metric);
bool metric_uses_embeddings(Metric metric);

/// q x q neighborhood with circular padding.
struct NeighborhoodSpec {
  int q = 9;
};

/// Learnable embeddings of the non-local operation plus the metric selector.
/// w_theta, w_psi are [m,l], w_g is [m,m]; h applies to the Euclidean-Gaussian
/// metric only.
template <typename T>
struct NonLocalWeights {
  DenseTensor<T> w_theta;
  DenseTensor<T> w_psi;
  DenseTensor<T> w_g;
  Metric metric = Metric::kEmbeddedGaussian;
  T h = T(1);

  static NonLocalWeights make(int m, int l, Metric metric = Metric::kEmbeddedGaussian);
  int m() const { return w_theta.dim(0); }
  int l() const { return w_theta.dim(1); }
};

/// Pre-softmax correlation logits of every location against its q x q
/// neighborhood; the recurrent s_corr state.
template <typename T>
struct CorrelationState {
  DenseTensor<T> logits;  // [H,W,q,q]

  static CorrelationState zeros(int height, int width, int q);
  int height() const { return logits.dim(0); }
  int width() const { return logits.dim(1); }
  int q() const { return logits.dim(2); }
};

/// Offsets that survive circular-wrap deduplication along one axis. When q
/// exceeds the image extent the window revisits pixels; per residue class the
/// offset closest to the window center is kept (ties toward the smaller
/// index), so the neighborhood is a true set and full-coverage q reproduces
/// the dense whole-image operation.
std::vector<std::uint8_t> canonical_axis_mask(int q, int extent);

/// Gather of the circular q x q neighborhood of every location, duplicates
/// included: entry (y,x,dy,dx,:) = features[:, (y+dy-q/2) mod H, (x+dx-q/2) mod W].
template <typename T>
DenseTensor<T> extract_neighborhood(const DenseTensor<T>& features, NeighborhoodSpec spec);

/// Per-metric correlation logits without any prior; inactive (duplicate)
/// offsets hold zero.
template <typename T>
CorrelationState<T> correlation_logits(const DenseTensor<T>& features,
                                       const NonLocalWeights<T>& weights,
                                       NeighborhoodSpec spec);

template <typename T>
struct NonLocalTape {
  // Location-major caches (N = H*W rows).
  DenseTensor<T> x_lm;       // [N,m]
  DenseTensor<T> theta;      // [N,l] when the metric embeds
  DenseTensor<T> psi;        // [N,l] when the metric uses psi
  DenseTensor<T> g_lm;       // [N,m]
  DenseTensor<T> weights;    // [H,W,q,q] post-normalization, inactive zero
  DenseTensor<T> w_theta;    // parameter copies for the feature-path gradients
  DenseTensor<T> w_psi;
  DenseTensor<T> w_g;
  Metric metric = Metric::kEmbeddedGaussian;
  T h = T(1);
  int height = 0, width = 0, q = 0;
  bool used = false;

  NonLocalTape() = default;
  NonLocalTape(const NonLocalTape&) = delete;
  NonLocalTape& operator=(const NonLocalTape&) = delete;
  NonLocalTape(NonLocalTape&&) = default;
  NonLocalTape& operator=(NonLocalTape&&) = default;
};

template <typename T>
struct NonLocalResult {
  DenseTensor<T> output;         // [m,H,W]
  CorrelationState<T> emitted;   // total logits, the propagated s_corr
};

/// The full soft block-matching operation: correlation logits plus the
/// additive prior, row normalization over the neighborhood, aggregation of
/// the g-embedded neighbors and the skip connection.
/// prior == nullptr means the zero state.
template <typename T>
NonLocalResult<T> nonlocal_forward(const DenseTensor<T>& features,
                                   const NonLocalWeights<T>& weights, NeighborhoodSpec spec,
                                   const CorrelationState<T>* prior = nullptr,
                                   NonLocalTape<T>* tape = nullptr);

template <typename T>
struct NonLocalGrads {
  DenseTensor<T> features;  // [m,H,W]
  DenseTensor<T> w_theta;
  DenseTensor<T> w_psi;
  DenseTensor<T> w_g;
  DenseTensor<T> prior_logits;  // [H,W,q,q]
};

/// Gradients of a scalar objective reaching this operation through both the
/// output features and the emitted logits (the next state's prior).
/// grad_emitted == nullptr means no contribution through the emitted state.
template <typename T>
NonLocalGrads<T> nonlocal_backward(NonLocalTape<T>& tape, const DenseTensor<T>& grad_output,
                                   const DenseTensor<T>* grad_emitted = nullptr);

/// Softmax-normalized correlation row of one location as a q x q map
/// (inactive offsets zero); the raw material of the correlation-map export.
template <typename T>
DenseTensor<T> correlation_row_softmax(const CorrelationState<T>& state, int y, int x);

}  // namespace nlrn
