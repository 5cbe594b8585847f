#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "xalign/error.hpp"
#include "xalign/space.hpp"

namespace xalign {

/**
 * Principal axes of a data matrix.
 *
 * `components` is k x d with orthonormal rows ordered by explained variance
 * (sample variance, divisor N - 1). Each component is sign-fixed so that its
 * entry of largest magnitude is non-negative.
 */
struct PcaModel {
  Eigen::VectorXd mean;                 // d
  RowMatrixD components;                // k x d
  Eigen::VectorXd explained_variance;   // k, non-increasing

  Index k() const { return components.rows(); }
  Index dim() const { return components.cols(); }
};

namespace detail {
inline void fix_component_sign(Eigen::Ref<Eigen::RowVectorXd> component) {
  Index arg = 0;
  component.cwiseAbs().maxCoeff(&arg);
  if (component(arg) < 0) component = -component;
}
}  // namespace detail

/// Numerical rank from singular values, using the usual max(N, d) * eps * s_max cutoff.
inline Index numerical_rank(const Eigen::VectorXd& singular_values, Index rows, Index cols) {
  if (singular_values.size() == 0 || singular_values(0) <= 0.0) return 0;
  const double cutoff =
      static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * singular_values(0);
  return (singular_values.array() > cutoff).count();
}

template <typename Derived>
PcaModel fit_pca(const Eigen::MatrixBase<Derived>& X, Index k) {
  const Index n = X.rows();
  const Index d = X.cols();
  if (k < 1 || k > std::min(n - 1, d)) {
    throw Error(ErrorKind::parameter, "PCA k=" + std::to_string(k) + " outside [1, min(N-1, d)] = [1, " +
                                          std::to_string(std::min(n - 1, d)) + "]");
  }

  PcaModel model;
  Eigen::MatrixXd centered = X.template cast<double>();
  model.mean = centered.colwise().mean().transpose();
  centered.rowwise() -= model.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const Index rank = numerical_rank(s, n, d);
  if (rank < k) {
    throw Error(ErrorKind::rank_deficiency, "centered data has rank " + std::to_string(rank) +
                                                ", cannot extract " + std::to_string(k) + " components");
  }

  model.components = svd.matrixV().leftCols(k).transpose();
  for (Index i = 0; i < k; ++i) detail::fix_component_sign(model.components.row(i));
  model.explained_variance = s.head(k).array().square() / static_cast<double>(n - 1);
  return model;
}

/// (X - mean) * components^T, in float64.
template <typename Derived>
RowMatrixD apply_pca(const PcaModel& model, const Eigen::MatrixBase<Derived>& X) {
  if (X.cols() != model.dim()) {
    throw Error(ErrorKind::shape, "PCA expects " + std::to_string(model.dim()) + " columns, got " +
                                      std::to_string(X.cols()));
  }
  RowMatrixD centered = X.template cast<double>();
  centered.rowwise() -= model.mean.transpose();
  return centered * model.components.transpose();
}

}  // namespace xalign
