#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cigit {

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk data. `row`/`col` are -1 when not applicable.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, long row = -1, long col = -1)
      : std::runtime_error(describe(what, row, col)), row_(row), col_(col) {}

  long row() const noexcept { return row_; }
  long col() const noexcept { return col_; }

 private:
  static std::string describe(const std::string& what, long row, long col) {
    std::string s = what;
    if (row >= 0) s += " (row " + std::to_string(row);
    if (col >= 0) s += (row >= 0 ? ", column " : " (column ") + std::to_string(col);
    if (row >= 0 || col >= 0) s += ")";
    return s;
  }

  long row_;
  long col_;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A cluster whose soft frequency f_k reached zero.
class DegenerateCluster : public std::runtime_error {
 public:
  explicit DegenerateCluster(std::size_t cluster)
      : std::runtime_error("degenerate cluster " + std::to_string(cluster) +
                           ": soft frequency is zero"),
        cluster_(cluster) {}
  std::size_t cluster() const noexcept { return cluster_; }

 private:
  std::size_t cluster_;
};

struct InitializationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite loss during training.
class NumericAbort : public std::runtime_error {
 public:
  NumericAbort(const std::string& phase, long iteration, double value)
      : std::runtime_error("non-finite loss " + std::to_string(value) + " in phase '" + phase +
                           "' at iteration " + std::to_string(iteration)),
        phase_(phase),
        iteration_(iteration) {}
  const std::string& phase() const noexcept { return phase_; }
  long iteration() const noexcept { return iteration_; }

 private:
  std::string phase_;
  long iteration_;
};

/// Cluster collapse during training (a target distribution became undefined).
class CollapseAbort : public std::runtime_error {
 public:
  CollapseAbort(const std::string& where, long iteration, std::size_t cluster)
      : std::runtime_error("cluster collapse in " + where + " at iteration " +
                           std::to_string(iteration) + ": cluster " + std::to_string(cluster) +
                           " has zero soft frequency"),
        iteration_(iteration),
        cluster_(cluster) {}
  long iteration() const noexcept { return iteration_; }
  std::size_t cluster() const noexcept { return cluster_; }

 private:
  long iteration_;
  std::size_t cluster_;
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}
}  // namespace detail

}  // namespace cigit
