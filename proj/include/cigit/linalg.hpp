#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace cigit {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Labels = std::vector<std::int64_t>;
using Index = Eigen::Index;

/// Copies the listed rows of `m` into a new matrix, in order.
inline Matrix gather_rows(const Matrix& m, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

/// Writes the rows of `src` to `dst` at the listed positions.
inline void scatter_rows(Matrix& dst, const Matrix& src, std::span<const Index> rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) dst.row(rows[i]) = src.row(static_cast<Index>(i));
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Rounds every entry through single precision.
inline void round_to_float(Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

inline void round_to_float(Vector& v) {
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(v[i]));
}

}  // namespace cigit
