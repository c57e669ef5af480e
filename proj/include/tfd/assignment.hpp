#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace tfd {

/// g x q costs, row-major, g <= q.
class CostMatrix {
 public:
  CostMatrix(std::size_t rows, std::size_t cols);
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> costs);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& at(std::size_t r, std::size_t c) { return costs_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return costs_[r * cols_ + c]; }
  const std::vector<double>& costs() const { return costs_; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> costs_;
};

struct Assignment {
  /// (row, col), sorted by row; every row appears exactly once.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double total_cost = 0.0;

  /// Column assigned to `row`.
  std::size_t col_of(std::size_t row) const;
};

/// Minimum-cost assignment of every row to a distinct column (Kuhn-Munkres with
/// potentials, O(q^3)). Rectangular inputs are padded to q x q with zero-cost
/// dummy rows which are dropped from the result.
Assignment hungarian(const CostMatrix& costs);

/// Exhaustive minimum over all injections row -> col. Limited to g <= 8.
Assignment brute_force_assign(const CostMatrix& costs);

}  // namespace tfd
