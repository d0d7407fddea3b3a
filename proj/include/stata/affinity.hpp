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
#ifndef STATA_AFFINITY_HPP_
#define STATA_AFFINITY_HPP_

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "stata/types.hpp"

namespace stata {

enum class AffinityMode { kFull, kKnn };

/// Sparse row-wise affinity: per sample, its neighbors and the raw inner
/// products w_ij = f_i . f_j. Self-edges are never stored. knn(0) gives an
/// empty graph, which disables the Laplacian coupling entirely.
struct AffinityGraph {
  struct Edge {
    int32_t j;
    double w;
  };
  std::vector<std::vector<Edge>> rows;
  AffinityMode mode = AffinityMode::kKnn;
  int knn_k = 0;

  Eigen::Index n() const { return static_cast<Eigen::Index>(rows.size()); }
};

namespace affinity_detail {

inline bool edge_better(const AffinityGraph::Edge& a, const AffinityGraph::Edge& b) {
  return a.w > b.w || (a.w == b.w && a.j < b.j);
}

/// Exact top-k by double-precision row dots over the given candidates.
inline void rescore_and_keep(const Matrix& f, Eigen::Index i,
                             std::vector<AffinityGraph::Edge>& candidates, int k) {
  for (auto& e : candidates) e.w = f.row(i).dot(f.row(e.j));
  std::sort(candidates.begin(), candidates.end(), edge_better);
  if (static_cast<int>(candidates.size()) > k) candidates.resize(static_cast<size_t>(k));
}

}  // namespace affinity_detail

/// Builds the affinity graph. Full mode keeps every i != j pair. knn mode
/// keeps, per row, the min(k, N-1) largest-inner-product neighbors, ties
/// broken toward the lower index. Candidates are scored strip-by-strip with a
/// single-precision GEMM (the N x N product is never materialized), then the
/// survivors are rescored with double-precision dots, which also define the
/// stored weights. The float pass keeps a 1e-3 safety margin, orders of
/// magnitude above its rounding error for unit rows, so the selection matches
/// an exhaustive double-precision search; rows where the margin cannot be
/// certified fall back to a full rescan.
inline AffinityGraph build_affinity(const EmbeddingSet& features, AffinityMode mode,
                                    int k = 3) {
  const Eigen::Index n = features.n();
  AffinityGraph g;
  g.mode = mode;
  g.rows.resize(static_cast<size_t>(n));

  if (mode == AffinityMode::kKnn) {
    if (k < 0) throw std::invalid_argument("build_affinity: negative k");
    if (k >= n) {
      throw std::invalid_argument("build_affinity: knn k=" + std::to_string(k) +
                                  " must be < N=" + std::to_string(n));
    }
    g.knn_k = k;
    if (k == 0) return g;
  }

  const Matrix& f = features.data();
  const Eigen::Index strip = std::min<Eigen::Index>(n, 512);

  if (mode == AffinityMode::kFull) {
    Matrix scores(strip, n);
    for (Eigen::Index i0 = 0; i0 < n; i0 += strip) {
      const Eigen::Index rows_here = std::min(strip, n - i0);
      scores.topRows(rows_here).noalias() =
          f.middleRows(i0, rows_here) * f.transpose();
      for (Eigen::Index r = 0; r < rows_here; ++r) {
        const Eigen::Index i = i0 + r;
        auto& out = g.rows[static_cast<size_t>(i)];
        out.reserve(static_cast<size_t>(n - 1));
        for (Eigen::Index j = 0; j < n; ++j) {
          if (j != i) out.push_back({static_cast<int32_t>(j), scores(r, j)});
        }
      }
    }
    return g;
  }

  using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const MatrixF f32 = f.cast<float>();
  MatrixF scores(strip, n);
  constexpr float kMargin = 1e-3f;
  const int probe = k + 16;  // extra slots certify the margin in one pass
  std::vector<AffinityGraph::Edge> buf;

  for (Eigen::Index i0 = 0; i0 < n; i0 += strip) {
    const Eigen::Index rows_here = std::min(strip, n - i0);
    scores.topRows(rows_here).noalias() =
        f32.middleRows(i0, rows_here) * f32.transpose();
    for (Eigen::Index r = 0; r < rows_here; ++r) {
      const Eigen::Index i = i0 + r;
      buf.clear();
      const float* row = scores.row(r).data();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = static_cast<double>(row[j]);
        if (static_cast<int>(buf.size()) == probe && w <= buf.back().w) continue;
        AffinityGraph::Edge e{static_cast<int32_t>(j), w};
        buf.insert(std::upper_bound(buf.begin(), buf.end(), e,
                                    affinity_detail::edge_better),
                   e);
        if (static_cast<int>(buf.size()) > probe) buf.pop_back();
      }
      const bool certified =
          static_cast<int>(buf.size()) <= k ||
          static_cast<int>(buf.size()) < probe ||
          buf.back().w < buf[static_cast<size_t>(k) - 1].w - kMargin;
      if (!certified) {
        buf.clear();
        for (Eigen::Index j = 0; j < n; ++j) {
          if (j != i) buf.push_back({static_cast<int32_t>(j), 0.0});
        }
      }
      affinity_detail::rescore_and_keep(f, i, buf, k);
      g.rows[static_cast<size_t>(i)] = buf;
    }
  }
  return g;
}

/// M = W z with W given by the graph rows (Jacobi message for the z-update).
inline Matrix laplacian_message(const AffinityGraph& graph, const AssignmentMatrix& z) {
  if (graph.n() != z.rows()) {
    throw std::invalid_argument("laplacian_message: graph/z size mismatch");
  }
  Matrix m = Matrix::Zero(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < graph.n(); ++i) {
    for (const auto& e : graph.rows[static_cast<size_t>(i)]) {
      m.row(i) += e.w * z.row(e.j);
    }
  }
  return m;
}

}  // namespace stata

#endif  // STATA_AFFINITY_HPP_
