#pragma once

#include <iomanip>
#include <istream>
#include <ostream>
#include <vector>

#include "geolgm/errors.hpp"
#include "geolgm/fem.hpp"

namespace geolgm {

/// Coordinate text format: "rows cols nnz" then one "i j value" line per
/// stored entry, 0-based, column-major order.
inline void write_coo(std::ostream& os, const SparseMatrix& m) {
  os << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  os << std::setprecision(17);
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) {
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    }
  }
}

inline SparseMatrix read_coo(std::istream& is) {
  long long rows = -1, cols = -1, nnz = -1;
  if (!(is >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0) {
    throw FormatError("sparse header must read 'rows cols nnz'");
  }
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(nnz));
  for (long long k = 0; k < nnz; ++k) {
    long long i = 0, j = 0;
    double v = 0.0;
    if (!(is >> i >> j >> v)) throw FormatError("truncated sparse entry list");
    if (i < 0 || i >= rows || j < 0 || j >= cols) {
      throw FormatError("sparse entry index out of range");
    }
    t.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
  }
  SparseMatrix m(static_cast<int>(rows), static_cast<int>(cols));
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

}  // namespace geolgm
