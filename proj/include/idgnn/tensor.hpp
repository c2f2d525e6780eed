#pragma once

// Dense and compressed-sparse-row matrices plus the handful of kernels the
// model needs: Z*A products, the Kronecker-structured layer operator, the
// induced infinity norm, spectral norm estimation and the row-wise l1 ball
// projection that realizes the infinity-norm constraint.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "idgnn/error.hpp"

namespace idgnn {

using Index = std::size_t;

namespace detail {

inline std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

}  // namespace detail

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<EigenRowMajor>;
  using ConstMap = Eigen::Map<const EigenRowMajor>;

  DenseMatrix() = default;
  DenseMatrix(Index rows, Index cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(Index rows, Index cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw DimensionError("DenseMatrix: " + std::to_string(values_.size()) +
                           " values for shape " + detail::shape_str(rows_, cols_));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("DenseMatrix: ragged initializer");
      values_.insert(values_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(Index n) {
    DenseMatrix m(n, n);
    for (Index i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }
  Index size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(Index i, Index j) noexcept { return values_[i * cols_ + j]; }
  double operator()(Index i, Index j) const noexcept { return values_[i * cols_ + j]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> row(Index i) noexcept { return {values_.data() + i * cols_, cols_}; }
  std::span<const double> row(Index i) const noexcept { return {values_.data() + i * cols_, cols_}; }

  Map map() noexcept { return Map(values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)); }
  ConstMap map() const noexcept {
    return ConstMap(values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool same_shape(const DenseMatrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    require_same_shape(o, "+=");
    for (Index k = 0; k < values_.size(); ++k) values_[k] += o.values_[k];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    require_same_shape(o, "-=");
    for (Index k = 0; k < values_.size(); ++k) values_[k] -= o.values_[k];
    return *this;
  }
  DenseMatrix& operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
  }
  /// this += s * o
  DenseMatrix& axpy(double s, const DenseMatrix& o) {
    require_same_shape(o, "axpy");
    for (Index k = 0; k < values_.size(); ++k) values_[k] += s * o.values_[k];
    return *this;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }
  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  void require_same_shape(const DenseMatrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw DimensionError(std::string("DenseMatrix ") + op + ": " + detail::shape_str(rows_, cols_) +
                           " vs " + detail::shape_str(o.rows_, o.cols_));
    }
  }

  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<double> values_;
};

inline DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols(), m.rows());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

/// Dense product a * b.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + detail::shape_str(a.rows(), a.cols()) + " * " +
                         detail::shape_str(b.rows(), b.cols()));
  }
  DenseMatrix c(a.rows(), b.cols());
  if (c.size() != 0 && a.cols() != 0) c.map().noalias() = a.map() * b.map();
  return c;
}

/// a * b^T
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + detail::shape_str(a.rows(), a.cols()) + " * (" +
                         detail::shape_str(b.rows(), b.cols()) + ")^T");
  }
  DenseMatrix c(a.rows(), b.rows());
  if (c.size() != 0 && a.cols() != 0) c.map().noalias() = a.map() * b.map().transpose();
  return c;
}

/// a^T * b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: (" + detail::shape_str(a.rows(), a.cols()) + ")^T * " +
                         detail::shape_str(b.rows(), b.cols()));
  }
  DenseMatrix c(a.cols(), b.cols());
  if (c.size() != 0 && a.rows() != 0) c.map().noalias() = a.map().transpose() * b.map();
  return c;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw DimensionError("hadamard: shape mismatch");
  DenseMatrix c(a.rows(), a.cols());
  for (Index k = 0; k < a.size(); ++k) c.data()[k] = a.data()[k] * b.data()[k];
  return c;
}

/// Frobenius inner product.
inline double frobenius_dot(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw DimensionError("frobenius_dot: shape mismatch");
  double s = 0.0;
  for (Index k = 0; k < a.size(); ++k) s += a.data()[k] * b.data()[k];
  return s;
}

/// Column-wise vectorization: entry (i, j) lands at i + j * rows.
inline std::vector<double> vec(const DenseMatrix& m) {
  std::vector<double> v(m.size());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) v[i + j * m.rows()] = m(i, j);
  return v;
}

inline DenseMatrix unvec(std::span<const double> v, Index rows, Index cols) {
  if (v.size() != rows * cols) throw DimensionError("unvec: length " + std::to_string(v.size()) +
                                                    " for shape " + detail::shape_str(rows, cols));
  DenseMatrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = v[i + j * rows];
  return m;
}

struct Triplet {
  Index row;
  Index col;
  double value;
};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within a row; every stored value is
/// finite. Construction validates both.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  SparseMatrix(Index rows, Index cols, std::vector<Index> offsets, std::vector<Index> columns,
               std::vector<double> values)
      : rows_(rows), cols_(cols), offsets_(std::move(offsets)), columns_(std::move(columns)),
        values_(std::move(values)) {
    validate();
  }

  /// Builds from unordered triplets; duplicate coordinates are summed.
  static SparseMatrix from_triplets(Index rows, Index cols, std::vector<Triplet> triplets) {
    for (const auto& t : triplets) {
      if (t.row >= rows || t.col >= cols) {
        throw DimensionError("SparseMatrix: entry (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                             ") outside " + detail::shape_str(rows, cols));
      }
    }
    std::sort(triplets.begin(), triplets.end(),
              [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
    std::vector<Index> offsets(rows + 1, 0);
    std::vector<Index> columns;
    std::vector<double> values;
    columns.reserve(triplets.size());
    values.reserve(triplets.size());
    for (Index k = 0; k < triplets.size(); ++k) {
      const auto& t = triplets[k];
      if (!columns.empty() && k > 0 && triplets[k - 1].row == t.row && triplets[k - 1].col == t.col) {
        values.back() += t.value;
        continue;
      }
      columns.push_back(t.col);
      values.push_back(t.value);
      offsets[t.row + 1] += 1;
    }
    for (Index r = 0; r < rows; ++r) offsets[r + 1] += offsets[r];
    return SparseMatrix(rows, cols, std::move(offsets), std::move(columns), std::move(values));
  }

  static SparseMatrix identity(Index n) {
    std::vector<Index> offsets(n + 1);
    std::vector<Index> columns(n);
    std::iota(offsets.begin(), offsets.end(), Index{0});
    std::iota(columns.begin(), columns.end(), Index{0});
    return SparseMatrix(n, n, std::move(offsets), std::move(columns), std::vector<double>(n, 1.0));
  }

  static SparseMatrix from_dense(const DenseMatrix& m) {
    std::vector<Triplet> t;
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j)
        if (m(i, j) != 0.0) t.push_back({i, j, m(i, j)});
    return from_triplets(m.rows(), m.cols(), std::move(t));
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }
  Index nnz() const noexcept { return values_.size(); }
  bool square() const noexcept { return rows_ == cols_; }

  std::span<const Index> offsets() const noexcept { return offsets_; }
  std::span<const Index> columns() const noexcept { return columns_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Value at (i, j), zero when not stored.
  double at(Index i, Index j) const {
    auto first = columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]);
    auto last = columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]);
    auto it = std::lower_bound(first, last, j);
    return (it != last && *it == j) ? values_[static_cast<Index>(it - columns_.begin())] : 0.0;
  }

  template <typename F>
  void for_each(F&& f) const {
    for (Index i = 0; i < rows_; ++i)
      for (Index k = offsets_[i]; k < offsets_[i + 1]; ++k) f(i, columns_[k], values_[k]);
  }

  std::vector<Triplet> triplets() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for_each([&](Index i, Index j, double v) { t.push_back({i, j, v}); });
    return t;
  }

  SparseMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for_each([&](Index i, Index j, double v) { t.push_back({j, i, v}); });
    return from_triplets(cols_, rows_, std::move(t));
  }

  DenseMatrix to_dense() const {
    DenseMatrix m(rows_, cols_);
    for_each([&](Index i, Index j, double v) { m(i, j) = v; });
    return m;
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  void validate() const {
    if (offsets_.size() != rows_ + 1) throw DimensionError("SparseMatrix: offsets length must be rows + 1");
    if (offsets_.front() != 0 || offsets_.back() != columns_.size() || columns_.size() != values_.size()) {
      throw DimensionError("SparseMatrix: inconsistent offsets/columns/values");
    }
    for (Index i = 0; i < rows_; ++i) {
      if (offsets_[i] > offsets_[i + 1]) throw InvalidArgument("SparseMatrix: offsets must be nondecreasing");
      for (Index k = offsets_[i]; k < offsets_[i + 1]; ++k) {
        if (columns_[k] >= cols_) throw DimensionError("SparseMatrix: column index out of range");
        if (k > offsets_[i] && columns_[k] <= columns_[k - 1]) {
          throw InvalidArgument("SparseMatrix: column indices must strictly increase within a row");
        }
        if (!std::isfinite(values_[k])) throw InvalidArgument("SparseMatrix: non-finite value");
      }
    }
  }

  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Index> offsets_{0};
  std::vector<Index> columns_;
  std::vector<double> values_;
};

/// Z * A for dense Z (d x n) and sparse A (n x m).
inline DenseMatrix spmm(const DenseMatrix& z, const SparseMatrix& a) {
  if (z.cols() != a.rows()) {
    throw DimensionError("spmm: " + detail::shape_str(z.rows(), z.cols()) + " * " +
                         detail::shape_str(a.rows(), a.cols()));
  }
  DenseMatrix out(z.rows(), a.cols());
  const auto off = a.offsets();
  const auto col = a.columns();
  const auto val = a.values();
  for (Index i = 0; i < z.rows(); ++i) {
    const double* zr = z.data() + i * z.cols();
    double* orow = out.data() + i * out.cols();
    for (Index k = 0; k < a.rows(); ++k) {
      const double zk = zr[k];
      if (zk == 0.0) continue;
      for (Index p = off[k]; p < off[k + 1]; ++p) orow[col[p]] += zk * val[p];
    }
  }
  return out;
}

/// Z * A^T for dense Z (d x m) and sparse A (n x m).
inline DenseMatrix spmm_transposed(const DenseMatrix& z, const SparseMatrix& a) {
  if (z.cols() != a.cols()) {
    throw DimensionError("spmm_transposed: " + detail::shape_str(z.rows(), z.cols()) + " * (" +
                         detail::shape_str(a.rows(), a.cols()) + ")^T");
  }
  DenseMatrix out(z.rows(), a.rows());
  const auto off = a.offsets();
  const auto col = a.columns();
  const auto val = a.values();
  for (Index i = 0; i < z.rows(); ++i) {
    const double* zr = z.data() + i * z.cols();
    double* orow = out.data() + i * out.cols();
    for (Index k = 0; k < a.rows(); ++k) {
      double s = 0.0;
      for (Index p = off[k]; p < off[k + 1]; ++p) s += zr[col[p]] * val[p];
      orow[k] = s;
    }
  }
  return out;
}

/// The layer operator M = A^T (x) W acting on vec(Z), kept in factored form.
struct LinearOperatorMt {
  const DenseMatrix& weight;     // d x d
  const SparseMatrix& adjacency;  // n x n
};

/// W * Z * A, i.e. unvec((A^T (x) W) vec(Z)).
inline DenseMatrix kron_apply(const LinearOperatorMt& op, const DenseMatrix& z) {
  if (op.weight.rows() != op.weight.cols() || op.weight.cols() != z.rows() || !op.adjacency.square() ||
      op.adjacency.rows() != z.cols()) {
    throw DimensionError("kron_apply: W " + detail::shape_str(op.weight.rows(), op.weight.cols()) + ", Z " +
                         detail::shape_str(z.rows(), z.cols()) + ", A " +
                         detail::shape_str(op.adjacency.rows(), op.adjacency.cols()));
  }
  return spmm(matmul(op.weight, z), op.adjacency);
}

/// Induced infinity norm: maximum absolute row sum.
inline double infinity_norm(const DenseMatrix& w) {
  double best = 0.0;
  for (Index i = 0; i < w.rows(); ++i) {
    double s = 0.0;
    for (double v : w.row(i)) s += std::abs(v);
    best = std::max(best, s);
  }
  return best;
}

struct PowerIterationOptions {
  double tol = 1e-7;
  int max_iter = 1000;
};

/// Largest singular value of a square sparse matrix by power iteration on
/// A^T A. Converged when successive estimates agree to relative `tol`.
inline double operator_norm(const SparseMatrix& a, PowerIterationOptions opt = {}) {
  if (!a.square()) throw DimensionError("operator_norm: matrix must be square");
  if (!(opt.tol > 0.0)) throw InvalidArgument("operator_norm: tol must be positive");
  const Index n = a.rows();
  if (n == 0 || a.nnz() == 0) return 0.0;

  const SparseMatrix at = a.transposed();
  auto apply = [](const SparseMatrix& m, const std::vector<double>& x) {
    std::vector<double> y(m.rows(), 0.0);
    m.for_each([&](Index i, Index j, double v) { y[i] += v * x[j]; });
    return y;
  };
  auto norm2 = [](const std::vector<double>& x) {
    return std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
  };

  // Deterministic, sign-varied start so no structured matrix is orthogonal to it by accident.
  std::vector<double> x(n);
  std::uint64_t state = 0x9E3779B97F4A7C15ULL;
  for (Index i = 0; i < n; ++i) {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    x[i] = 0.5 + static_cast<double>(state % 1000003) / 1000003.0;
    if (state & 1u) x[i] = -x[i];
  }
  double nx = norm2(x);
  for (double& v : x) v /= nx;

  double sigma = 0.0;
  std::vector<double> history;
  for (int it = 0; it < opt.max_iter; ++it) {
    std::vector<double> y = apply(at, apply(a, x));
    const double ny = norm2(y);
    if (ny == 0.0) return 0.0;
    const double next = std::sqrt(ny);
    for (Index i = 0; i < n; ++i) x[i] = y[i] / ny;
    history.push_back(next);
    if (it > 0 && std::abs(next - sigma) <= opt.tol * next) return next;
    sigma = next;
  }
  throw ConvergenceError("operator_norm: power iteration did not converge", std::move(history), sigma);
}

/// Euclidean projection of x onto {y : ||y||_1 <= radius}, sort-and-threshold.
inline void project_l1_ball(std::span<double> x, double radius) {
  if (!(radius > 0.0)) throw InvalidArgument("project_l1_ball: radius must be positive");
  double l1 = 0.0;
  for (double v : x) l1 += std::abs(v);
  if (l1 <= radius) return;

  std::vector<double> u(x.size());
  std::transform(x.begin(), x.end(), u.begin(), [](double v) { return std::abs(v); });
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (Index j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - radius) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) theta = candidate;
  }
  for (double& v : x) {
    const double shrunk = std::max(std::abs(v) - theta, 0.0);
    v = v < 0.0 ? -shrunk : shrunk;
  }
}

/// Projection onto {M : ||M||_inf <= radius}. The induced infinity-norm ball
/// is the product of row-wise l1 balls, so rows are projected independently.
inline DenseMatrix project_linf_ball(DenseMatrix w, double radius) {
  if (!(radius > 0.0)) throw InvalidArgument("project_linf_ball: radius must be positive");
  for (Index i = 0; i < w.rows(); ++i) project_l1_ball(w.row(i), radius);
  return w;
}

}  // namespace idgnn
