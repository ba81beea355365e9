#include "nlrn/nonlocal.hpp"

#include <algorithm>
#include <cmath>

namespace nlrn {

Metric metric_from_string(const std::string& name) {
  if (name == "euclidean_gaussian") return Metric::kEuclideanGaussian;
  if (name == "dot") return Metric::kDot;
  if (name == "embedded_dot") return Metric::kEmbeddedDot;
  if (name == "gaussian") return Metric::kGaussian;
  if (name == "sym_embedded_gaussian") return Metric::kSymEmbeddedGaussian;
  if (name == "embedded_gaussian") return Metric::kEmbeddedGaussian;
  throw ShapeError("unknown distance metric: " + name);
}

std::string metric_to_string(Metric metric) {
  switch (metric) {
    case Metric::kEuclideanGaussian: return "euclidean_gaussian";
    case Metric::kDot: return "dot";
    case Metric::kEmbeddedDot: return "embedded_dot";
    case Metric::kGaussian: return "gaussian";
    case Metric::kSymEmbeddedGaussian: return "sym_embedded_gaussian";
    case Metric::kEmbeddedGaussian: return "embedded_gaussian";
  }
  return "?";
}

bool metric_uses_softmax(Metric metric) {
  return metric != Metric::kDot && metric != Metric::kEmbeddedDot;
}

bool metric_uses_embeddings(Metric metric) {
  return metric == Metric::kEmbeddedDot || metric == Metric::kSymEmbeddedGaussian ||
         metric == Metric::kEmbeddedGaussian;
}

template <typename T>
NonLocalWeights<T> NonLocalWeights<T>::make(int m, int l, Metric metric) {
  if (m < 1 || l < 1 || l > m) throw ShapeError("non-local weights need 1 <= l <= m");
  NonLocalWeights<T> w;
  w.w_theta = DenseTensor<T>({m, l});
  w.w_psi = DenseTensor<T>({m, l});
  w.w_g = DenseTensor<T>({m, m});
  w.metric = metric;
  return w;
}

template <typename T>
CorrelationState<T> CorrelationState<T>::zeros(int height, int width, int q) {
  if (q < 1 || q % 2 == 0) throw ShapeError("neighborhood side q must be odd and >= 1");
  CorrelationState<T> s;
  s.logits = DenseTensor<T>({height, width, q, q});
  return s;
}

std::vector<std::uint8_t> canonical_axis_mask(int q, int extent) {
  if (q < 1 || q % 2 == 0) throw ShapeError("neighborhood side q must be odd and >= 1");
  const int r = q / 2;
  std::vector<int> best(static_cast<std::size_t>(extent), -1);
  for (int d = 0; d < q; ++d) {
    const int residue = (((d - r) % extent) + extent) % extent;
    int& b = best[residue];
    if (b < 0 || std::abs(d - r) < std::abs(b - r)) b = d;
  }
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(q), 0);
  for (int residue = 0; residue < extent; ++residue) {
    if (best[residue] >= 0) mask[best[residue]] = 1;
  }
  return mask;
}

namespace {

struct Geometry {
  int m = 0, height = 0, width = 0, q = 0, r = 0;
  std::vector<std::uint8_t> mask_y, mask_x;
  std::vector<int> wrap_y;  // [height][q] absolute row per (y,dy)
  std::vector<int> wrap_x;
  std::vector<std::pair<int, int>> active;  // (dy,dx) surviving deduplication
};

Geometry make_geometry(int m, int height, int width, int q) {
  Geometry g;
  g.m = m;
  g.height = height;
  g.width = width;
  g.q = q;
  g.r = q / 2;
  g.mask_y = canonical_axis_mask(q, height);
  g.mask_x = canonical_axis_mask(q, width);
  g.wrap_y.resize(static_cast<std::size_t>(height) * q);
  for (int y = 0; y < height; ++y)
    for (int d = 0; d < q; ++d)
      g.wrap_y[static_cast<std::size_t>(y) * q + d] = (((y + d - g.r) % height) + height) % height;
  g.wrap_x.resize(static_cast<std::size_t>(width) * q);
  for (int x = 0; x < width; ++x)
    for (int d = 0; d < q; ++d)
      g.wrap_x[static_cast<std::size_t>(x) * q + d] = (((x + d - g.r) % width) + width) % width;
  for (int dy = 0; dy < q; ++dy)
    for (int dx = 0; dx < q; ++dx)
      if (g.mask_y[dy] && g.mask_x[dx]) g.active.emplace_back(dy, dx);
  return g;
}

template <typename T>
void check_features(const DenseTensor<T>& features, const NonLocalWeights<T>& weights) {
  if (features.rank() != 3) throw ShapeError("non-local features must be [m,H,W]");
  if (features.dim(0) != weights.m()) {
    throw ShapeError("non-local channel mismatch: features " + std::to_string(features.dim(0)) +
                     ", weights " + std::to_string(weights.m()));
  }
}

/// features [m,H,W] -> [N,m] with N = H*W rows.
template <typename T>
DenseTensor<T> to_location_major(const DenseTensor<T>& features) {
  const int m = features.dim(0), h = features.dim(1), w = features.dim(2);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  DenseTensor<T> out({static_cast<int>(n), m});
  const T* src = features.data();
  T* dst = out.data();
  for (int c = 0; c < m; ++c)
    for (std::size_t i = 0; i < n; ++i) dst[i * m + c] = src[static_cast<std::size_t>(c) * n + i];
  return out;
}

template <typename T>
DenseTensor<T> to_channel_major(const DenseTensor<T>& lm, int m, int h, int w) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  DenseTensor<T> out({m, h, w});
  const T* src = lm.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < m; ++c) dst[static_cast<std::size_t>(c) * n + i] = src[i * m + c];
  return out;
}

template <typename T>
T metric_logit(Metric metric, const T* xi, const T* xj, const T* ti, const T* tj,
               const T* pj, int m, int l, T inv_h2) {
  switch (metric) {
    case Metric::kEuclideanGaussian: {
      T s = T(0);
      for (int c = 0; c < m; ++c) {
        const T d = xi[c] - xj[c];
        s += d * d;
      }
      return -s * inv_h2;
    }
    case Metric::kDot:
    case Metric::kGaussian: {
      T s = T(0);
      for (int c = 0; c < m; ++c) s += xi[c] * xj[c];
      return s;
    }
    case Metric::kSymEmbeddedGaussian: {
      T s = T(0);
      for (int c = 0; c < l; ++c) s += ti[c] * tj[c];
      return s;
    }
    case Metric::kEmbeddedDot:
    case Metric::kEmbeddedGaussian: {
      T s = T(0);
      for (int c = 0; c < l; ++c) s += ti[c] * pj[c];
      return s;
    }
  }
  return T(0);
}

}  // namespace

template <typename T>
DenseTensor<T> extract_neighborhood(const DenseTensor<T>& features, NeighborhoodSpec spec) {
  if (features.rank() != 3) throw ShapeError("extract_neighborhood needs [m,H,W]");
  if (spec.q < 1 || spec.q % 2 == 0) throw ShapeError("neighborhood side q must be odd");
  const int m = features.dim(0), h = features.dim(1), w = features.dim(2);
  const Geometry geo = make_geometry(m, h, w, spec.q);
  DenseTensor<T> out({h, w, spec.q, spec.q, m});
  const std::size_t n = static_cast<std::size_t>(h) * w;
  T* dst = out.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int dy = 0; dy < spec.q; ++dy) {
        const int yy = geo.wrap_y[static_cast<std::size_t>(y) * spec.q + dy];
        for (int dx = 0; dx < spec.q; ++dx) {
          const int xx = geo.wrap_x[static_cast<std::size_t>(x) * spec.q + dx];
          const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
          for (int c = 0; c < m; ++c) {
            *dst++ = features[static_cast<std::size_t>(c) * n + j];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
CorrelationState<T> correlation_logits(const DenseTensor<T>& features,
                                       const NonLocalWeights<T>& weights, NeighborhoodSpec spec) {
  check_features(features, weights);
  const int m = weights.m(), l = weights.l();
  const int h = features.dim(1), w = features.dim(2);
  const Geometry geo = make_geometry(m, h, w, spec.q);

  DenseTensor<T> x_lm = to_location_major(features);
  DenseTensor<T> theta, psi;
  if (metric_uses_embeddings(weights.metric)) {
    theta = matmul(x_lm, weights.w_theta);
    if (weights.metric != Metric::kSymEmbeddedGaussian) psi = matmul(x_lm, weights.w_psi);
  }
  const T inv_h2 = T(1) / (weights.h * weights.h);

  CorrelationState<T> state = CorrelationState<T>::zeros(h, w, spec.q);
  T* out = state.logits.data();
  const std::size_t qq = static_cast<std::size_t>(spec.q) * spec.q;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const T* xi = x_lm.data() + i * m;
      const T* ti = theta.size() ? theta.data() + i * l : nullptr;
      T* row = out + i * qq;
      for (const auto& [dy, dx] : geo.active) {
        const std::size_t j =
            static_cast<std::size_t>(geo.wrap_y[static_cast<std::size_t>(y) * spec.q + dy]) * w +
            geo.wrap_x[static_cast<std::size_t>(x) * spec.q + dx];
        row[static_cast<std::size_t>(dy) * spec.q + dx] =
            metric_logit(weights.metric, xi, x_lm.data() + j * m, ti,
                         theta.size() ? theta.data() + j * l : nullptr,
                         psi.size() ? psi.data() + j * l : nullptr, m, l, inv_h2);
      }
    }
  }
  return state;
}

template <typename T>
NonLocalResult<T> nonlocal_forward(const DenseTensor<T>& features,
                                   const NonLocalWeights<T>& weights, NeighborhoodSpec spec,
                                   const CorrelationState<T>* prior, NonLocalTape<T>* tape) {
  check_features(features, weights);
  const int m = weights.m(), l = weights.l();
  const int h = features.dim(1), w = features.dim(2);
  const int q = spec.q;
  const Geometry geo = make_geometry(m, h, w, q);
  if (prior && (prior->height() != h || prior->width() != w || prior->q() != q)) {
    throw ShapeError("non-local prior state shape mismatch");
  }

  DenseTensor<T> x_lm = to_location_major(features);
  DenseTensor<T> theta, psi;
  if (metric_uses_embeddings(weights.metric)) {
    theta = matmul(x_lm, weights.w_theta);
    if (weights.metric != Metric::kSymEmbeddedGaussian) psi = matmul(x_lm, weights.w_psi);
  }
  DenseTensor<T> g_lm = matmul(x_lm, weights.w_g);
  const T inv_h2 = T(1) / (weights.h * weights.h);
  const bool softmax = metric_uses_softmax(weights.metric);
  const T inv_count = T(1) / static_cast<T>(geo.active.size());

  CorrelationState<T> emitted = CorrelationState<T>::zeros(h, w, q);
  DenseTensor<T> norm_weights({h, w, q, q});
  DenseTensor<T> out_lm = x_lm;  // skip connection

  const std::size_t qq = static_cast<std::size_t>(q) * q;
  std::vector<T> row(geo.active.size());
  std::vector<std::size_t> row_j(geo.active.size());

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const T* xi = x_lm.data() + i * m;
      const T* ti = theta.size() ? theta.data() + i * l : nullptr;
      T* emit_row = emitted.logits.data() + i * qq;
      T* weight_row = norm_weights.data() + i * qq;

      std::size_t a = 0;
      for (const auto& [dy, dx] : geo.active) {
        const std::size_t j =
            static_cast<std::size_t>(geo.wrap_y[static_cast<std::size_t>(y) * q + dy]) * w +
            geo.wrap_x[static_cast<std::size_t>(x) * q + dx];
        row_j[a] = j;
        T t = metric_logit(weights.metric, xi, x_lm.data() + j * m, ti,
                           theta.size() ? theta.data() + j * l : nullptr,
                           psi.size() ? psi.data() + j * l : nullptr, m, l, inv_h2);
        if (prior) t += prior->logits[i * qq + static_cast<std::size_t>(dy) * q + dx];
        emit_row[static_cast<std::size_t>(dy) * q + dx] = t;
        row[a++] = t;
      }

      if (softmax) {
        T mx = row[0];
        for (std::size_t k = 1; k < row.size(); ++k) mx = std::max(mx, row[k]);
        T sum = T(0);
        for (std::size_t k = 0; k < row.size(); ++k) {
          row[k] = std::exp(row[k] - mx);
          sum += row[k];
        }
        const T inv = T(1) / sum;
        for (std::size_t k = 0; k < row.size(); ++k) row[k] *= inv;
      } else {
        for (std::size_t k = 0; k < row.size(); ++k) row[k] *= inv_count;
      }

      T* out_i = out_lm.data() + i * m;
      a = 0;
      for (const auto& [dy, dx] : geo.active) {
        const T wgt = row[a];
        weight_row[static_cast<std::size_t>(dy) * q + dx] = wgt;
        const T* gj = g_lm.data() + row_j[a] * m;
        for (int c = 0; c < m; ++c) out_i[c] += wgt * gj[c];
        ++a;
      }
    }
  }

  NonLocalResult<T> result;
  result.output = to_channel_major(out_lm, m, h, w);
  result.emitted = std::move(emitted);
  if (tape) {
    tape->x_lm = std::move(x_lm);
    tape->theta = std::move(theta);
    tape->psi = std::move(psi);
    tape->g_lm = std::move(g_lm);
    tape->weights = std::move(norm_weights);
    tape->w_theta = weights.w_theta;
    tape->w_psi = weights.w_psi;
    tape->w_g = weights.w_g;
    tape->metric = weights.metric;
    tape->h = weights.h;
    tape->height = h;
    tape->width = w;
    tape->q = q;
    tape->used = false;
  }
  return result;
}

template <typename T>
NonLocalGrads<T> nonlocal_backward(NonLocalTape<T>& tape, const DenseTensor<T>& grad_output,
                                   const DenseTensor<T>* grad_emitted) {
  if (tape.used) throw NumericError("non-local tape reused");
  tape.used = true;

  const int h = tape.height, w = tape.width, q = tape.q;
  const int m = tape.w_g.dim(0);
  const int l = tape.w_theta.dim(1);
  if (grad_output.rank() != 3 || grad_output.dim(0) != m || grad_output.dim(1) != h ||
      grad_output.dim(2) != w) {
    throw ShapeError("nonlocal_backward grad_output shape mismatch");
  }
  if (grad_emitted &&
      !(grad_emitted->rank() == 4 && grad_emitted->dim(0) == h && grad_emitted->dim(1) == w &&
        grad_emitted->dim(2) == q && grad_emitted->dim(3) == q)) {
    throw ShapeError("nonlocal_backward grad_emitted shape mismatch");
  }

  const Geometry geo = make_geometry(m, h, w, q);
  const bool softmax = metric_uses_softmax(tape.metric);
  const bool embeds = metric_uses_embeddings(tape.metric);
  const bool has_psi = tape.psi.size() > 0;
  const T inv_count = T(1) / static_cast<T>(geo.active.size());
  const T inv_h2 = T(1) / (tape.h * tape.h);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  const std::size_t qq = static_cast<std::size_t>(q) * q;

  DenseTensor<T> go_lm = to_location_major(grad_output);
  DenseTensor<T> dx_lm = go_lm;  // skip connection
  DenseTensor<T> dg_lm({static_cast<int>(n), m});
  DenseTensor<T> dtheta, dpsi;
  if (embeds) {
    dtheta = DenseTensor<T>({static_cast<int>(n), l});
    if (has_psi) dpsi = DenseTensor<T>({static_cast<int>(n), l});
  }

  NonLocalGrads<T> grads;
  grads.prior_logits = DenseTensor<T>({h, w, q, q});

  std::vector<T> dw(geo.active.size());
  std::vector<T> dt(geo.active.size());
  std::vector<std::size_t> row_j(geo.active.size());

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const T* go_i = go_lm.data() + i * m;
      const T* weight_row = tape.weights.data() + i * qq;

      // dL/dw_ij = <grad_out_i, g_j>; also the aggregation path into g_j.
      std::size_t a = 0;
      for (const auto& [dy, dx] : geo.active) {
        const std::size_t j =
            static_cast<std::size_t>(geo.wrap_y[static_cast<std::size_t>(y) * q + dy]) * w +
            geo.wrap_x[static_cast<std::size_t>(x) * q + dx];
        row_j[a] = j;
        const T wgt = weight_row[static_cast<std::size_t>(dy) * q + dx];
        const T* gj = tape.g_lm.data() + j * m;
        T* dgj = dg_lm.data() + j * m;
        T dot = T(0);
        for (int c = 0; c < m; ++c) {
          dot += go_i[c] * gj[c];
          dgj[c] += wgt * go_i[c];
        }
        dw[a++] = dot;
      }

      // Normalization backward into the total logits.
      if (softmax) {
        T s = T(0);
        a = 0;
        for (const auto& [dy, dx] : geo.active) {
          s += dw[a++] * weight_row[static_cast<std::size_t>(dy) * q + dx];
        }
        a = 0;
        for (const auto& [dy, dx] : geo.active) {
          dt[a] = weight_row[static_cast<std::size_t>(dy) * q + dx] * (dw[a] - s);
          ++a;
        }
      } else {
        for (a = 0; a < dw.size(); ++a) dt[a] = dw[a] * inv_count;
      }
      if (grad_emitted) {
        a = 0;
        for (const auto& [dy, dx] : geo.active) {
          dt[a++] += (*grad_emitted)[i * qq + static_cast<std::size_t>(dy) * q + dx];
        }
      }

      // The additive prior passes the total-logit gradient through unchanged.
      a = 0;
      for (const auto& [dy, dx] : geo.active) {
        grads.prior_logits[i * qq + static_cast<std::size_t>(dy) * q + dx] = dt[a++];
      }

      // Metric backward.
      const T* xi = tape.x_lm.data() + i * m;
      switch (tape.metric) {
        case Metric::kEuclideanGaussian: {
          T* dxi = dx_lm.data() + i * m;
          for (a = 0; a < row_j.size(); ++a) {
            const T* xj = tape.x_lm.data() + row_j[a] * m;
            T* dxj = dx_lm.data() + row_j[a] * m;
            const T s = T(-2) * inv_h2 * dt[a];
            for (int c = 0; c < m; ++c) {
              const T d = xi[c] - xj[c];
              dxi[c] += s * d;
              dxj[c] -= s * d;
            }
          }
          break;
        }
        case Metric::kDot:
        case Metric::kGaussian: {
          T* dxi = dx_lm.data() + i * m;
          for (a = 0; a < row_j.size(); ++a) {
            const T* xj = tape.x_lm.data() + row_j[a] * m;
            T* dxj = dx_lm.data() + row_j[a] * m;
            const T s = dt[a];
            for (int c = 0; c < m; ++c) {
              dxi[c] += s * xj[c];
              dxj[c] += s * xi[c];
            }
          }
          break;
        }
        case Metric::kSymEmbeddedGaussian: {
          const T* ti = tape.theta.data() + i * l;
          T* dti = dtheta.data() + i * l;
          for (a = 0; a < row_j.size(); ++a) {
            const T* tj = tape.theta.data() + row_j[a] * l;
            T* dtj = dtheta.data() + row_j[a] * l;
            const T s = dt[a];
            for (int c = 0; c < l; ++c) {
              dti[c] += s * tj[c];
              dtj[c] += s * ti[c];
            }
          }
          break;
        }
        case Metric::kEmbeddedDot:
        case Metric::kEmbeddedGaussian: {
          const T* ti = tape.theta.data() + i * l;
          T* dti = dtheta.data() + i * l;
          for (a = 0; a < row_j.size(); ++a) {
            const T* pj = tape.psi.data() + row_j[a] * l;
            T* dpj = dpsi.data() + row_j[a] * l;
            const T s = dt[a];
            for (int c = 0; c < l; ++c) {
              dti[c] += s * pj[c];
              dpj[c] += s * ti[c];
            }
          }
          break;
        }
      }
    }
  }

  // Parameter gradients and the feature-path contributions of the embeddings.
  DenseTensor<T> x_t = transpose(tape.x_lm);
  grads.w_g = matmul(x_t, dg_lm);
  {
    DenseTensor<T> back = matmul(dg_lm, transpose(tape.w_g));
    for (std::size_t k = 0; k < dx_lm.size(); ++k) dx_lm[k] += back[k];
  }
  if (embeds) {
    grads.w_theta = matmul(x_t, dtheta);
    DenseTensor<T> back = matmul(dtheta, transpose(tape.w_theta));
    for (std::size_t k = 0; k < dx_lm.size(); ++k) dx_lm[k] += back[k];
    if (has_psi) {
      grads.w_psi = matmul(x_t, dpsi);
      DenseTensor<T> backp = matmul(dpsi, transpose(tape.w_psi));
      for (std::size_t k = 0; k < dx_lm.size(); ++k) dx_lm[k] += backp[k];
    } else {
      grads.w_psi = DenseTensor<T>::zeros_like(tape.w_psi);
    }
  } else {
    grads.w_theta = DenseTensor<T>::zeros_like(tape.w_theta);
    grads.w_psi = DenseTensor<T>::zeros_like(tape.w_psi);
  }
  grads.features = to_channel_major(dx_lm, m, h, w);
  return grads;
}

template <typename T>
DenseTensor<T> correlation_row_softmax(const CorrelationState<T>& state, int y, int x) {
  const int h = state.height(), w = state.width(), q = state.q();
  if (y < 0 || y >= h || x < 0 || x >= w) throw ShapeError("correlation row location out of bounds");
  const auto mask_y = canonical_axis_mask(q, h);
  const auto mask_x = canonical_axis_mask(q, w);
  const std::size_t qq = static_cast<std::size_t>(q) * q;
  const T* row = state.logits.data() + (static_cast<std::size_t>(y) * w + x) * qq;

  DenseTensor<T> out({q, q});
  T mx = T(0);
  bool first = true;
  for (int dy = 0; dy < q; ++dy)
    for (int dx = 0; dx < q; ++dx)
      if (mask_y[dy] && mask_x[dx]) {
        const T v = row[static_cast<std::size_t>(dy) * q + dx];
        mx = first ? v : std::max(mx, v);
        first = false;
      }
  T sum = T(0);
  for (int dy = 0; dy < q; ++dy)
    for (int dx = 0; dx < q; ++dx)
      if (mask_y[dy] && mask_x[dx]) {
        const T e = std::exp(row[static_cast<std::size_t>(dy) * q + dx] - mx);
        out.at(dy, dx) = e;
        sum += e;
      }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] /= sum;
  return out;
}

#define NLRN_INSTANTIATE_NONLOCAL(T)                                                          \
  template struct NonLocalWeights<T>;                                                         \
  template struct CorrelationState<T>;                                                        \
  template DenseTensor<T> extract_neighborhood(const DenseTensor<T>&, NeighborhoodSpec);      \
  template CorrelationState<T> correlation_logits(const DenseTensor<T>&,                      \
                                                  const NonLocalWeights<T>&,                  \
                                                  NeighborhoodSpec);                          \
  template NonLocalResult<T> nonlocal_forward(const DenseTensor<T>&,                          \
                                              const NonLocalWeights<T>&, NeighborhoodSpec,    \
                                              const CorrelationState<T>*, NonLocalTape<T>*);  \
  template NonLocalGrads<T> nonlocal_backward(NonLocalTape<T>&, const DenseTensor<T>&,        \
                                              const DenseTensor<T>*);                         \
  template DenseTensor<T> correlation_row_softmax(const CorrelationState<T>&, int, int);

NLRN_INSTANTIATE_NONLOCAL(float)
NLRN_INSTANTIATE_NONLOCAL(double)

#undef NLRN_INSTANTIATE_NONLOCAL

}  // namespace nlrn
