#include "tfd/assignment.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tfd/errors.hpp"

namespace tfd {

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), costs_(rows * cols, 0.0) {}

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> costs)
    : rows_(rows), cols_(cols), costs_(std::move(costs)) {
  if (costs_.size() != rows_ * cols_) {
    throw DimensionError("cost matrix data length " + std::to_string(costs_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
  }
}

std::size_t Assignment::col_of(std::size_t row) const {
  for (const auto& [r, c] : pairs) {
    if (r == row) return c;
  }
  throw ContractError("row " + std::to_string(row) + " is not assigned");
}

namespace {

void validate(const CostMatrix& m) {
  if (m.rows() > m.cols()) {
    throw ContractError("assignment needs rows <= cols, got " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()));
  }
  for (double c : m.costs()) {
    if (!std::isfinite(c)) throw DomainError("cost matrix contains a non-finite entry");
  }
}

double total_of(const CostMatrix& m, const Assignment& a) {
  double total = 0.0;
  for (const auto& [r, c] : a.pairs) total += m.at(r, c);
  return total;
}

}  // namespace

Assignment hungarian(const CostMatrix& costs) {
  validate(costs);
  Assignment result;
  const std::size_t g = costs.rows();
  if (g == 0) return result;
  const std::size_t n = costs.cols();
  // 1-based arrays; row 0 / column 0 are sentinels. Rows g+1..n are zero dummies.
  auto cost = [&](std::size_t i, std::size_t j) {
    return i <= g ? costs.at(i - 1, j - 1) : 0.0;
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(g, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (match[j] >= 1 && match[j] <= g) col_of_row[match[j] - 1] = j - 1;
  }
  for (std::size_t r = 0; r < g; ++r) result.pairs.emplace_back(r, col_of_row[r]);
  result.total_cost = total_of(costs, result);
  return result;
}

Assignment brute_force_assign(const CostMatrix& costs) {
  if (costs.rows() > 8) {
    throw SizeError("brute-force assignment limited to 8 rows, got " +
                    std::to_string(costs.rows()));
  }
  validate(costs);
  const std::size_t g = costs.rows();
  const std::size_t q = costs.cols();
  Assignment best;
  if (g == 0) return best;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> current(g);
  std::vector<std::size_t> best_cols;
  std::vector<bool> taken(q, false);
  // Depth-first over injections in lexicographic column order; strict `<` keeps
  // the first optimum found.
  auto recurse = [&](auto&& self, std::size_t row, double partial) -> void {
    if (row == g) {
      if (partial < best_cost) {
        best_cost = partial;
        best_cols = current;
      }
      return;
    }
    for (std::size_t c = 0; c < q; ++c) {
      if (taken[c]) continue;
      taken[c] = true;
      current[row] = c;
      self(self, row + 1, partial + costs.at(row, c));
      taken[c] = false;
    }
  };
  recurse(recurse, 0, 0.0);
  for (std::size_t r = 0; r < g; ++r) best.pairs.emplace_back(r, best_cols[r]);
  best.total_cost = total_of(costs, best);
  return best;
}

}  // namespace tfd
