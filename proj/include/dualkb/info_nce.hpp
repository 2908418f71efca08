#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace dualkb {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct InfoNceTerms {
  Scalar loss{0};
  /// d loss / d similarity, positive first.
  Vector<Scalar> grad;
};

/// InfoNCE on one row of similarities `sims` (positive at index 0, then the
/// negatives). Uses the max-shifted log-sum-exp.
template <typename Derived>
InfoNceTerms<typename Derived::Scalar> info_nce_terms(const Eigen::MatrixBase<Derived>& sims,
                                                      typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  const Vector<Scalar> logits = sims / tau;
  const Scalar shift = logits.maxCoeff();
  const Vector<Scalar> shifted = (logits.array() - shift).exp().matrix();
  const Scalar partition = shifted.sum();
  InfoNceTerms<Scalar> out;
  out.loss = shift + std::log(partition) - logits(0);
  out.grad = shifted / partition;
  out.grad(0) -= Scalar(1);
  out.grad /= tau;
  return out;
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) return Scalar(0);
  return a.dot(b) / (na * nb);
}

}  // namespace dualkb
