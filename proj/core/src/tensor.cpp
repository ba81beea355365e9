#include "nlrn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nlrn {

namespace {

std::size_t checked_element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 1) throw ShapeError("tensor extent must be >= 1, got " + std::to_string(e));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

}  // namespace

template <typename T>
DenseTensor<T>::DenseTensor(std::vector<int> shape, T fill)
    : shape_(std::move(shape)), data_(checked_element_count(shape_), fill) {}

template <typename T>
DenseTensor<T>::DenseTensor(std::vector<int> shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_element_count(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape");
  }
  if (!all_finite()) throw NumericError("tensor constructed with non-finite data");
}

template <typename T>
bool DenseTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename T>
static void check_same_shape(const DenseTensor<T>& a, const DenseTensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("elementwise op on mismatched shapes");
}

template <typename T>
DenseTensor<T> add(const DenseTensor<T>& a, const DenseTensor<T>& b) {
  check_same_shape(a, b);
  DenseTensor<T> out = DenseTensor<T>::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
DenseTensor<T> sub(const DenseTensor<T>& a, const DenseTensor<T>& b) {
  check_same_shape(a, b);
  DenseTensor<T> out = DenseTensor<T>::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
DenseTensor<T> mul(const DenseTensor<T>& a, const DenseTensor<T>& b) {
  check_same_shape(a, b);
  DenseTensor<T> out = DenseTensor<T>::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
DenseTensor<T> scale(const DenseTensor<T>& a, T factor) {
  DenseTensor<T> out = DenseTensor<T>::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

template <typename T>
DenseTensor<T> exp_elem(const DenseTensor<T>& a) {
  DenseTensor<T> out = DenseTensor<T>::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::exp(a[i]);
  return out;
}

template <typename T>
DenseTensor<T> max0(const DenseTensor<T>& a) {
  DenseTensor<T> out = DenseTensor<T>::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return out;
}

template <typename T>
DenseTensor<T> elementwise(ElemOp op, const DenseTensor<T>& a, const DenseTensor<T>* b,
                           T factor) {
  auto need_b = [&]() -> const DenseTensor<T>& {
    if (b == nullptr) throw ShapeError("binary elementwise op needs a second operand");
    return *b;
  };
  switch (op) {
    case ElemOp::kAdd: return add(a, need_b());
    case ElemOp::kSub: return sub(a, need_b());
    case ElemOp::kMul: return mul(a, need_b());
    case ElemOp::kScale: return scale(a, factor);
    case ElemOp::kExp: return exp_elem(a);
    case ElemOp::kMax0: return max0(a);
  }
  throw ShapeError("unknown elementwise op");
}

template <typename T>
DenseTensor<T> matmul(const DenseTensor<T>& a, const DenseTensor<T>& b) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul inner dimensions disagree: " + std::to_string(k) + " vs " +
                     std::to_string(b.rows()));
  }
  DenseTensor<T> out({n, m});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  // i-k-j order keeps the inner loop contiguous in both b and out.
  for (int i = 0; i < n; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const T aik = pa[static_cast<std::size_t>(i) * k + kk];
      const T* brow = pb + static_cast<std::size_t>(kk) * m;
      T* orow = po + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

template <typename T>
DenseTensor<T> transpose(const DenseTensor<T>& a) {
  const int n = a.rows(), m = a.cols();
  DenseTensor<T> out({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// --- sym_eig -----------------------------------------------------------------

namespace {

double offdiag_norm(const DenseTensor<double>& a) {
  const int n = a.rows();
  double s = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) s += a.at(i, j) * a.at(i, j);
  return std::sqrt(s);
}

}  // namespace

SymEigResult sym_eig(const DenseTensor<double>& m) {
  const int n = m.rows();
  if (m.cols() != n) throw ShapeError("sym_eig requires a square matrix");
  if (n > 256) throw ShapeError("sym_eig limited to K <= 256");
  double scale_norm = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-8) {
        throw NumericError("sym_eig input asymmetric at (" + std::to_string(i) + "," +
                           std::to_string(j) + ")");
      }
    }
    for (int j = 0; j < n; ++j) scale_norm += m.at(i, j) * m.at(i, j);
  }
  scale_norm = std::max(1.0, std::sqrt(scale_norm));

  DenseTensor<double> a = m;
  DenseTensor<double> v({n, n});
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

  const double tol = 1e-12 * scale_norm;
  bool converged = false;
  for (int sweep = 0; sweep < 100; ++sweep) {
    if (offdiag_norm(a) < tol) {
      converged = true;
      break;
    }
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a.at(i, p), aiq = a.at(i, q);
          a.at(i, p) = c * aip - s * aiq;
          a.at(i, q) = s * aip + c * aiq;
        }
        for (int j = 0; j < n; ++j) {
          const double apj = a.at(p, j), aqj = a.at(q, j);
          a.at(p, j) = c * apj - s * aqj;
          a.at(q, j) = s * apj + c * aqj;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v.at(i, p), viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  if (!converged && offdiag_norm(a) >= tol) {
    throw NumericError("sym_eig: Jacobi did not converge in 100 sweeps, off-norm " +
                       std::to_string(offdiag_norm(a)));
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return a.at(x, x) > a.at(y, y); });

  SymEigResult res;
  res.eigenvalues.resize(n);
  res.eigenvectors = DenseTensor<double>({n, n});
  for (int col = 0; col < n; ++col) {
    const int src = order[col];
    res.eigenvalues[col] = a.at(src, src);
    // Sign convention: first component with magnitude above 1e-12 positive.
    double sign = 1.0;
    for (int i = 0; i < n; ++i) {
      if (std::abs(v.at(i, src)) > 1e-12) {
        sign = v.at(i, src) > 0 ? 1.0 : -1.0;
        break;
      }
    }
    for (int i = 0; i < n; ++i) res.eigenvectors.at(i, col) = sign * v.at(i, src);
  }
  return res;
}

DenseTensor<double> dct1_basis(int n) {
  if (n < 1) throw ShapeError("dct1_basis needs n >= 1");
  DenseTensor<double> b({n, n});
  const double pi = std::acos(-1.0);
  for (int k = 0; k < n; ++k) {
    const double ck = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      b.at(k, i) = ck * std::cos(pi * (2.0 * i + 1.0) * k / (2.0 * n));
    }
  }
  return b;
}

DenseTensor<double> dct2_basis(int p) {
  if (p < 1 || p > 32) throw ShapeError("dct2_basis needs 1 <= p <= 32");
  DenseTensor<double> b1 = dct1_basis(p);
  DenseTensor<double> b({p * p, p * p});
  for (int k1 = 0; k1 < p; ++k1)
    for (int k2 = 0; k2 < p; ++k2)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          b.at(k1 * p + k2, y * p + x) = b1.at(k1, y) * b1.at(k2, x);
  return b;
}

// Explicit instantiations for the two supported precisions.
template class DenseTensor<float>;
template class DenseTensor<double>;

#define NLRN_INSTANTIATE_ELEMENTWISE(T)                                              \
  template DenseTensor<T> add(const DenseTensor<T>&, const DenseTensor<T>&);         \
  template DenseTensor<T> sub(const DenseTensor<T>&, const DenseTensor<T>&);         \
  template DenseTensor<T> mul(const DenseTensor<T>&, const DenseTensor<T>&);         \
  template DenseTensor<T> scale(const DenseTensor<T>&, T);                           \
  template DenseTensor<T> exp_elem(const DenseTensor<T>&);                           \
  template DenseTensor<T> max0(const DenseTensor<T>&);                               \
  template DenseTensor<T> elementwise(ElemOp, const DenseTensor<T>&,                 \
                                      const DenseTensor<T>*, T);                     \
  template DenseTensor<T> matmul(const DenseTensor<T>&, const DenseTensor<T>&);      \
  template DenseTensor<T> transpose(const DenseTensor<T>&);

NLRN_INSTANTIATE_ELEMENTWISE(float)
NLRN_INSTANTIATE_ELEMENTWISE(double)

#undef NLRN_INSTANTIATE_ELEMENTWISE

}  // namespace nlrn
