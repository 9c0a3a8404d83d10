/*
 * Copyright (c) 2026 The lcp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "lcp/matrix.hpp"

#include <cmath>
#include <string>

#include "lcp/errors.hpp"

namespace lcp {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw InputError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw InputError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

void Matrix::resize(std::size_t rows, std::size_t cols) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, 0.0);
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  out.resize(n, m);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows()) throw ConfigError("matmul_at_b: row mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  out.resize(k, m);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* brow = pb + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      double* orow = po + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) throw ConfigError("matmul_a_bt: column mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  out.resize(n, m);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      po[i * m + j] = acc;
    }
  }
}

}  // namespace lcp
