#pragma once

#include <Eigen/SVD>

#include <cmath>
#include <string>

#include "heteo/common.hpp"

namespace heteo {

/// Principal-component model: `components` rows are orthonormal directions in
/// the input space, ordered by `explained_variance` (descending).
template <typename Scalar> struct PcaModel {
  VectorX<Scalar> mean;
  MatrixX<Scalar> components;  // k × D
  VectorX<Scalar> explained_variance;

  Eigen::Index k() const { return components.rows(); }
  Eigen::Index input_dim() const { return components.cols(); }
};

/// Mean-centred thin SVD; no per-column scaling. Component signs are fixed so
/// that the largest-magnitude loading of each component is positive.
template <typename Scalar, typename Derived>
PcaModel<Scalar> fit_pca(const Eigen::MatrixBase<Derived>& data, Eigen::Index k = 10) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (k < 1) throw RankError("PCA needs k >= 1");
  if (n < k) throw RankError("PCA with k=" + std::to_string(k) + " needs at least k rows, got " + std::to_string(n));
  if (d < k) throw RankError("PCA with k=" + std::to_string(k) + " exceeds input width " + std::to_string(d));
  if (n < 2) throw RankError("PCA needs at least two rows");
  if (!data.allFinite()) throw DomainError("PCA input has non-finite entries");

  PcaModel<Scalar> model;
  model.mean = data.colwise().mean().transpose().template cast<Scalar>();
  const MatrixX<Scalar> centered = data.template cast<Scalar>().rowwise() - model.mean.transpose();
  Eigen::BDCSVD<MatrixX<Scalar>> svd(centered, Eigen::ComputeThinV);
  model.components = svd.matrixV().leftCols(k).transpose();
  for (Eigen::Index r = 0; r < k; ++r) {
    Eigen::Index arg = 0;
    model.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (model.components(r, arg) < Scalar(0)) model.components.row(r) *= Scalar(-1);
  }
  model.explained_variance = svd.singularValues().head(k).array().square() / Scalar(n - 1);
  return model;
}

template <typename Scalar, typename Derived>
MatrixX<Scalar> apply_pca(const PcaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& data) {
  if (data.cols() != model.input_dim())
    throw ShapeError("PCA model expects width " + std::to_string(model.input_dim()) + ", got " +
                     std::to_string(data.cols()));
  return (data.template cast<Scalar>().rowwise() - model.mean.transpose()) * model.components.transpose();
}

/// Maps projected scores back into the input space.
template <typename Scalar, typename Derived>
MatrixX<Scalar> reconstruct_pca(const PcaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& scores) {
  return (scores.template cast<Scalar>() * model.components).rowwise() + model.mean.transpose();
}

}  // namespace heteo
