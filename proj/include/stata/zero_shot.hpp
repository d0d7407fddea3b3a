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
#ifndef STATA_ZERO_SHOT_HPP_
#define STATA_ZERO_SHOT_HPP_

#include <cmath>
#include <stdexcept>

#include "stata/types.hpp"

namespace stata {

struct ZeroShotConfig {
  // Softmax temperature on cosine similarities. 100 matches the logit scale
  // CLIP-style encoders are trained with; use 1 if the export already applied
  // logit scaling.
  double tau = 100.0;
};

/// In-place row softmax with max-subtraction.
inline void softmax_rows(Matrix& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

/// Text-driven softmax prediction: row i is softmax_k(tau * f_i . t_k).
inline AssignmentMatrix zero_shot_predict(const EmbeddingSet& features,
                                          const AnchorSet& anchors,
                                          const ZeroShotConfig& cfg = {}) {
  if (features.dim() != anchors.dim()) {
    throw std::invalid_argument("zero_shot_predict: dimension mismatch (" +
                                std::to_string(features.dim()) + " vs " +
                                std::to_string(anchors.dim()) + ")");
  }
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) {
    throw std::invalid_argument("zero_shot_predict: tau must be positive and finite");
  }
  Matrix logits = cfg.tau * (features.data() * anchors.data().transpose());
  softmax_rows(logits);
  return logits;
}

/// Fraction of rows whose argmax (ties to the lowest index) equals the label.
inline double zero_shot_accuracy(const AssignmentMatrix& pred, const LabelVector& labels) {
  if (pred.rows() != labels.size()) {
    throw std::invalid_argument("zero_shot_accuracy: shape mismatch");
  }
  int64_t hits = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (argmax_row(pred.row(i)) == labels.labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.rows());
}

}  // namespace stata

#endif  // STATA_ZERO_SHOT_HPP_
