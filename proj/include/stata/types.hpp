/* Copyright 2026 The StatA Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef STATA_TYPES_HPP_
#define STATA_TYPES_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stata {

// All internal arithmetic is double precision regardless of on-disk width;
// the covariance updates subtract large accumulators and need the headroom.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Row-stochastic soft assignments, N x K.
using AssignmentMatrix = Matrix;

inline constexpr double kRowNormSlack = 1e-3;       // accepted drift on stored rows
inline constexpr double kRenormalizeTol = 1e-6;     // rows further than this get rescaled
inline constexpr double kZeroNormThreshold = 1e-30;
inline constexpr double kVarianceFloor = 1e-12;

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Rescales every row to unit L2 norm. Rows already within kRenormalizeTol of
/// unit norm are left untouched so that a save/load cycle is bit-stable.
/// Throws DataError on non-finite entries or zero-norm rows.
inline void normalize_rows(Matrix& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) {
        throw DataError(std::string(what) + ": non-finite value at (" +
                        std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
    const double norm = m.row(i).norm();
    if (norm < kZeroNormThreshold) {
      throw DataError(std::string(what) + ": zero-norm row " + std::to_string(i));
    }
    if (std::abs(norm - 1.0) > kRenormalizeTol) m.row(i) /= norm;
  }
}

/// Unit-normalized query feature vectors, one row per sample.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;

  /// Validates and row-normalizes. Throws DataError on bad input.
  static EmbeddingSet from_rows(Matrix data) {
    if (data.rows() < 1 || data.cols() < 1) {
      throw DataError("embeddings: need at least one row and one column");
    }
    normalize_rows(data, "embeddings");
    EmbeddingSet e;
    e.data_ = std::move(data);
    return e;
  }

  Eigen::Index n() const { return data_.rows(); }
  Eigen::Index dim() const { return data_.cols(); }
  const Matrix& data() const { return data_; }

  /// New set holding the given rows, in order. Indices may repeat.
  EmbeddingSet subset(const std::vector<int64_t>& indices) const {
    Matrix out(static_cast<Eigen::Index>(indices.size()), data_.cols());
    for (size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] < 0 || indices[r] >= data_.rows()) {
        throw DataError("embeddings: subset index out of range: " +
                        std::to_string(indices[r]));
      }
      out.row(static_cast<Eigen::Index>(r)) = data_.row(indices[r]);
    }
    EmbeddingSet e;
    e.data_ = std::move(out);
    return e;
  }

 private:
  Matrix data_;
};

/// Unit-normalized class text embeddings, one row per class.
class AnchorSet {
 public:
  AnchorSet() = default;

  static AnchorSet from_rows(Matrix data) {
    if (data.rows() < 1 || data.cols() < 1) {
      throw DataError("anchors: need at least one row and one column");
    }
    normalize_rows(data, "anchors");
    AnchorSet a;
    a.data_ = std::move(data);
    return a;
  }

  Eigen::Index k() const { return data_.rows(); }
  Eigen::Index dim() const { return data_.cols(); }
  const Matrix& data() const { return data_; }

 private:
  Matrix data_;
};

/// Ground-truth class indices; used only for scoring, never by the solver.
struct LabelVector {
  std::vector<int32_t> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }

  LabelVector subset(const std::vector<int64_t>& indices) const {
    LabelVector out;
    out.labels.reserve(indices.size());
    for (int64_t idx : indices) {
      if (idx < 0 || idx >= size()) {
        throw DataError("labels: subset index out of range: " + std::to_string(idx));
      }
      out.labels.push_back(labels[static_cast<size_t>(idx)]);
    }
    return out;
  }
};

/// Index of the row maximum; ties break to the lowest index.
inline Eigen::Index argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

/// True when every row is nonnegative and sums to one within `tol`.
inline bool is_row_stochastic(const AssignmentMatrix& z, double tol = 1e-9) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (!(z(i, j) >= 0.0)) return false;
      s += z(i, j);
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace stata

#endif  // STATA_TYPES_HPP_
