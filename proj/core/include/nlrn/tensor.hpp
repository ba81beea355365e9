#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlrn {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major n-dimensional array. The scalar type selects the
/// precision: double for verification and gradient checking, float for
/// training.
template <typename T>
class DenseTensor {
public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<int> shape, T fill = T(0));
  DenseTensor(std::vector<int> shape, std::vector<T> data);

  static DenseTensor zeros_like(const DenseTensor& other) {
    return DenseTensor(other.shape_);
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const DenseTensor& other) const { return shape_ == other.shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-checked convenience accessors for the common low ranks.
  T& at(int i) { return data_[idx1(i)]; }
  const T& at(int i) const { return data_[idx1(i)]; }
  T& at(int i, int j) { return data_[idx2(i, j)]; }
  const T& at(int i, int j) const { return data_[idx2(i, j)]; }
  T& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  T& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const T& at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  int rows() const { return require_rank2().shape_[0]; }
  int cols() const { return require_rank2().shape_[1]; }

  void fill(T value) { data_.assign(data_.size(), value); }
  bool all_finite() const;

  template <typename U>
  DenseTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return DenseTensor<U>(shape_, std::move(out));
  }

private:
  const DenseTensor& require_rank2() const {
    if (shape_.size() != 2) throw ShapeError("matrix operation on tensor of rank " + std::to_string(shape_.size()));
    return *this;
  }
  void require_rank(std::size_t n) const {
    if (shape_.size() != n) {
      throw ShapeError("indexed access with " + std::to_string(n) + " indices on rank-" +
                       std::to_string(shape_.size()) + " tensor");
    }
  }
  std::size_t idx1(int i) const {
    require_rank(1);
    return static_cast<std::size_t>(i);
  }
  std::size_t idx2(int i, int j) const {
    require_rank(2);
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    require_rank(3);
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    require_rank(4);
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor32 = DenseTensor<float>;
using Tensor64 = DenseTensor<double>;

// --- elementwise ------------------------------------------------------------

enum class ElemOp { kAdd, kSub, kMul, kScale, kExp, kMax0 };

template <typename T>
DenseTensor<T> add(const DenseTensor<T>& a, const DenseTensor<T>& b);
template <typename T>
DenseTensor<T> sub(const DenseTensor<T>& a, const DenseTensor<T>& b);
template <typename T>
DenseTensor<T> mul(const DenseTensor<T>& a, const DenseTensor<T>& b);
template <typename T>
DenseTensor<T> scale(const DenseTensor<T>& a, T factor);
template <typename T>
DenseTensor<T> exp_elem(const DenseTensor<T>& a);
template <typename T>
DenseTensor<T> max0(const DenseTensor<T>& a);

/// Enum-dispatched form. `kScale` reads `factor`; the other unary ops
/// (`kExp`, `kMax0`) ignore both `b` and `factor`.
template <typename T>
DenseTensor<T> elementwise(ElemOp op, const DenseTensor<T>& a,
                           const DenseTensor<T>* b = nullptr, T factor = T(0));

// --- linear algebra ---------------------------------------------------------

template <typename T>
DenseTensor<T> matmul(const DenseTensor<T>& a, const DenseTensor<T>& b);

template <typename T>
DenseTensor<T> transpose(const DenseTensor<T>& a);

/// Eigendecomposition of a small symmetric matrix, eigenvalues sorted
/// descending, eigenvector columns orthonormal with a deterministic sign
/// convention (first component of magnitude > 1e-12 is positive).
struct SymEigResult {
  std::vector<double> eigenvalues;
  DenseTensor<double> eigenvectors;  // columns
};

/// Cyclic Jacobi sweeps until the off-diagonal Frobenius norm drops below
/// 1e-12 relative to the input scale, capped at 100 sweeps.
SymEigResult sym_eig(const DenseTensor<double>& m);

/// Orthonormal 1D DCT-II basis; rows are the atoms.
DenseTensor<double> dct1_basis(int n);

/// Orthonormal 2D DCT-II basis for p x p patches; rows are the p^2 atoms,
/// columns index pixels in row-major order.
DenseTensor<double> dct2_basis(int p);

}  // namespace nlrn
