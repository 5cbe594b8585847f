#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <string>

#include "xalign/error.hpp"
#include "xalign/space.hpp"

namespace xalign {

/// A d x d orthogonal matrix applied on the right: mapped = X * omega.
struct OrthogonalMap {
  RowMatrixD omega;

  Index dim() const { return omega.rows(); }

  /// max |omega^T omega - I|.
  double orthogonality_error() const {
    return (omega.transpose() * omega - Eigen::MatrixXd::Identity(dim(), dim())).cwiseAbs().maxCoeff();
  }
};

/**
 * Orthogonal Procrustes: the orthogonal Omega minimizing ||A Omega - B||_F for
 * row-paired A and B, i.e. Omega = U V^T with U S V^T the SVD of A^T B.
 *
 * When A^T B has repeated singular values U and V are not unique, but every
 * U V^T the SVD returns is a minimizer.
 */
template <typename DerivedA, typename DerivedB>
OrthogonalMap fit_procrustes(const Eigen::MatrixBase<DerivedA>& A, const Eigen::MatrixBase<DerivedB>& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw Error(ErrorKind::shape, "Procrustes needs equal shapes, got " + std::to_string(A.rows()) + "x" +
                                      std::to_string(A.cols()) + " and " + std::to_string(B.rows()) + "x" +
                                      std::to_string(B.cols()));
  }
  if (A.rows() < 1 || A.cols() < 1) throw Error(ErrorKind::insufficient, "Procrustes needs at least one pair");

  const Eigen::MatrixXd cross = A.template cast<double>().transpose() * B.template cast<double>();
  if (!cross.allFinite()) throw Error(ErrorKind::validation, "A^T B contains NaN or infinity");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return OrthogonalMap{svd.matrixU() * svd.matrixV().transpose()};
}

}  // namespace xalign
