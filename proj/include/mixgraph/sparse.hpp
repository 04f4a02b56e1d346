#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mixgraph/error.hpp"

namespace mixgraph {

using Vector = std::vector<double>;

/* Compressed sparse row matrix of doubles. Rows are stored in ascending
 * column order with no duplicate (row, col) pairs. Immutable after
 * construction; all products are reentrant. */
class SparseMatrix {
 public:
  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };

  enum class Duplicates { kReject, kSum };

  SparseMatrix() : row_ptr_(1, 0) {}

  /// All-zero matrix of the given shape.
  SparseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries,
                                    Duplicates policy = Duplicates::kReject) {
    for (const auto& t : entries) {
      if (t.row >= rows || t.col >= cols) {
        throw InvalidArgument("triplet (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                              ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
      }
    }
    // Bucket by row, then sort each (short) row by column.
    std::vector<std::size_t> start(rows + 1, 0);
    for (const auto& t : entries) ++start[t.row + 1];
    for (std::size_t r = 0; r < rows; ++r) start[r + 1] += start[r];
    {
      std::vector<Triplet> bucketed(entries.size());
      std::vector<std::size_t> fill(start.begin(), start.end() - 1);
      for (const auto& t : entries) bucketed[fill[t.row]++] = t;
      entries.swap(bucketed);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      std::stable_sort(entries.begin() + static_cast<std::ptrdiff_t>(start[r]),
                       entries.begin() + static_cast<std::ptrdiff_t>(start[r + 1]),
                       [](const Triplet& a, const Triplet& b) { return a.col < b.col; });
    }

    SparseMatrix m(rows, cols);
    m.col_idx_.reserve(entries.size());
    m.values_.reserve(entries.size());
    std::size_t prev_row = rows, prev_col = cols;
    for (const auto& t : entries) {
      if (t.row == prev_row && t.col == prev_col) {
        if (policy == Duplicates::kReject) {
          throw InvalidArgument("duplicate entry (" + std::to_string(t.row) + ", " +
                                std::to_string(t.col) + ")");
        }
        m.values_.back() += t.value;
        continue;
      }
      m.col_idx_.push_back(t.col);
      m.values_.push_back(t.value);
      ++m.row_ptr_[t.row + 1];
      prev_row = t.row;
      prev_col = t.col;
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<Triplet> t;
    t.reserve(n);
    for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    return from_triplets(n, n, std::move(t));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  bool square() const { return rows_ == cols_; }

  std::span<const std::size_t> row_cols(std::size_t r) const {
    return {col_idx_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }

  /// Entry lookup by binary search within the row; 0 when absent.
  double at(std::size_t r, std::size_t c) const {
    auto cols = row_cols(r);
    auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return 0.0;
    return values_[row_ptr_[r] + static_cast<std::size_t>(it - cols.begin())];
  }

  /// y = A x
  void multiply(std::span<const double> x, std::span<double> y) const {
    detail::require_same_size(x.size(), cols_, "SparseMatrix::multiply input");
    detail::require_same_size(y.size(), rows_, "SparseMatrix::multiply output");
    for (std::size_t r = 0; r < rows_; ++r) {
      double acc = 0.0;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) acc += values_[k] * x[col_idx_[k]];
      y[r] = acc;
    }
  }

  Vector multiply(std::span<const double> x) const {
    Vector y(rows_);
    multiply(x, y);
    return y;
  }

  /// y = A^T x, by scattering rows.
  void multiply_transpose(std::span<const double> x, std::span<double> y) const {
    detail::require_same_size(x.size(), rows_, "SparseMatrix::multiply_transpose input");
    detail::require_same_size(y.size(), cols_, "SparseMatrix::multiply_transpose output");
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double xr = x[r];
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) y[col_idx_[k]] += values_[k] * xr;
    }
  }

  Vector multiply_transpose(std::span<const double> x) const {
    Vector y(cols_);
    multiply_transpose(x, y);
    return y;
  }

  SparseMatrix transpose() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for_each([&](std::size_t r, std::size_t c, double v) { t.push_back({c, r, v}); });
    return from_triplets(cols_, rows_, std::move(t));
  }

  /// A^T A, accumulated row by row so cost scales with the squared row fill.
  SparseMatrix gram() const {
    std::vector<Triplet> t;
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t a = row_ptr_[r]; a < row_ptr_[r + 1]; ++a) {
        for (std::size_t b = row_ptr_[r]; b < row_ptr_[r + 1]; ++b) {
          t.push_back({col_idx_[a], col_idx_[b], values_[a] * values_[b]});
        }
      }
    }
    return from_triplets(cols_, cols_, std::move(t), Duplicates::kSum).pruned();
  }

  /// Copy without stored exact zeros.
  SparseMatrix pruned() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for_each([&](std::size_t r, std::size_t c, double v) {
      if (v != 0.0) t.push_back({r, c, v});
    });
    return from_triplets(rows_, cols_, std::move(t));
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) fn(r, col_idx_[k], values_[k]);
    }
  }

  double row_sum(std::size_t r) const {
    double s = 0.0;
    for (double v : row_values(r)) s += v;
    return s;
  }

  /// max |A_ij - A_ji|; exact zero for matrices built symmetric.
  double asymmetry() const {
    if (!square()) return INFINITY;
    double worst = 0.0;
    for_each([&](std::size_t r, std::size_t c, double v) {
      worst = std::max(worst, std::abs(v - at(c, r)));
    });
    return worst;
  }

  std::vector<Vector> to_dense() const {
    std::vector<Vector> d(rows_, Vector(cols_, 0.0));
    for_each([&](std::size_t r, std::size_t c, double v) { d[r][c] = v; });
    return d;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_idx_;
  Vector values_;
};

}  // namespace mixgraph
