#pragma once

// Output heads shared by the classifier and the energy model. Every function
// takes logits column-wise: one column per sample, one row per class.

#include "calico/core.hpp"

#include <cmath>
#include <span>

namespace calico {

/// log sum_y exp(l[y]) for every column, max-shifted.
template <typename Derived>
RowVectorX<typename Derived::Scalar> log_sum_exp(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  RowVectorX<Scalar> out(logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const Scalar m = logits.col(j).maxCoeff();
    out(j) = m + std::log((logits.col(j).array() - m).exp().sum());
  }
  return out;
}

/// Energy E(x) = -LogSumExp(f(x)), per column. The partition function is never formed.
template <typename Derived>
RowVectorX<typename Derived::Scalar> energy(const Eigen::MatrixBase<Derived>& logits) {
  return -log_sum_exp(logits);
}

/// Column-wise softmax via max-shifted exponentials.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const Scalar m = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

/// log p(y|x) = l[y] - LogSumExp(l), per column.
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  MatrixX<typename Derived::Scalar> out = logits;
  out.rowwise() -= log_sum_exp(logits);
  return out;
}

template <typename Scalar>
struct Confidence {
  Scalar value;
  Index cls;  // 0-based
};

/// Max posterior and its class; ties go to the lowest class index.
template <typename Derived>
Confidence<typename Derived::Scalar> confidence(const Eigen::MatrixBase<Derived>& probs) {
  static_assert(Derived::ColsAtCompileTime == 1 || Derived::ColsAtCompileTime == Eigen::Dynamic);
  Index best = 0;
  for (Index k = 1; k < probs.size(); ++k)
    if (probs(k) > probs(best)) best = k;
  return {probs(best), best};
}

/// Mean cross-entropy over columns with 0-based labels.
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logits, std::span<const int> labels) {
  using Scalar = typename Derived::Scalar;
  require(static_cast<Index>(labels.size()) == logits.cols(), "cross_entropy: label count mismatch");
  if (labels.empty()) return Scalar(0);
  const auto lse = log_sum_exp(logits);
  Scalar total = 0;
  for (Index j = 0; j < logits.cols(); ++j) total += lse(j) - logits(labels[j], j);
  return total / Scalar(logits.cols());
}

}  // namespace calico
