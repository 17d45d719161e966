#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "kgforge/errors.hpp"

namespace kgforge {

// CSR matrix for fixed graph structure (normalized adjacencies). Values are
// constants of the graph, never trained, so sparse ops only need a dense
// gradient for the right-hand operand.
struct SparseMatrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> indptr;  // n_rows + 1
  std::vector<std::size_t> indices;
  std::vector<double> values;

  static SparseMatrix from_coo(std::size_t n_rows, std::size_t n_cols,
                               std::vector<std::tuple<std::size_t, std::size_t, double>> coo) {
    // Duplicate coordinates sum; entries are sorted for deterministic layout.
    std::sort(coo.begin(), coo.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
      return std::get<1>(a) < std::get<1>(b);
    });
    SparseMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    m.indptr.assign(n_rows + 1, 0);
    std::size_t i = 0;
    while (i < coo.size()) {
      auto [r, c, v] = coo[i];
      double sum = v;
      std::size_t j = i + 1;
      while (j < coo.size() && std::get<0>(coo[j]) == r && std::get<1>(coo[j]) == c) {
        sum += std::get<2>(coo[j]);
        ++j;
      }
      if (r >= n_rows || c >= n_cols)
        throw ContractViolation("SparseMatrix::from_coo: index out of range");
      m.indices.push_back(c);
      m.values.push_back(sum);
      m.indptr[r + 1] = m.indices.size();
      i = j;
    }
    for (std::size_t r = 1; r <= n_rows; ++r)
      m.indptr[r] = std::max(m.indptr[r], m.indptr[r - 1]);
    return m;
  }

  SparseMatrix transposed() const {
    std::vector<std::tuple<std::size_t, std::size_t, double>> coo;
    coo.reserve(values.size());
    for (std::size_t r = 0; r < n_rows; ++r)
      for (std::size_t k = indptr[r]; k < indptr[r + 1]; ++k)
        coo.emplace_back(indices[k], r, values[k]);
    return from_coo(n_cols, n_rows, std::move(coo));
  }

  std::size_t nnz() const { return values.size(); }

  // y (n_rows x cols) += this * x (n_cols x cols), dense row-major.
  void multiply_into(const double* x, std::size_t cols, double* y) const {
    for (std::size_t r = 0; r < n_rows; ++r) {
      double* yr = y + r * cols;
      for (std::size_t k = indptr[r]; k < indptr[r + 1]; ++k) {
        const double v = values[k];
        const double* xr = x + indices[k] * cols;
        for (std::size_t c = 0; c < cols; ++c) yr[c] += v * xr[c];
      }
    }
  }
};

}  // namespace kgforge
