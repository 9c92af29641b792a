#pragma once

// Cholesky factorization of a symmetric matrix restricted to the subspace
// {x : C x = 0}. Constrained solves use conditioning by kriging.
//
// Dense path: factorizes H + kappa C'C, which is positive definite whenever H
// is positive definite on the constraint subspace and agrees with H there, so
// solves and log-determinants are exact.
//
// Sparse path: factorizes H + diag(jitter) with a fill-reducing ordering. The
// jitter only perturbs the subspace at O(jitter) relative size.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <memory>

namespace gcspatial {

class ConstrainedFactor {
 public:
  using SparseMatrix = Eigen::SparseMatrix<double>;

  static ConstrainedFactor dense(const Eigen::MatrixXd& h, const Eigen::MatrixXd& constraints);
  static ConstrainedFactor sparse(const SparseMatrix& h, const Eigen::MatrixXd& constraints,
                                  const Eigen::VectorXd& jitter);

  Eigen::Index dim() const { return dim_; }

  /// argmin 1/2 x'Hx - b'x subject to C x = 0.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

  /// log det(V'HV) for V an orthonormal basis of the constraint null space.
  double log_det() const { return log_det_; }

  /// Covariance of N(0, H^-1) conditioned on C x = 0.
  Eigen::MatrixXd covariance() const;

  /// Draw from the constrained Gaussian given i.i.d. standard normals z.
  Eigen::VectorXd sample(const Eigen::VectorXd& z) const;

 private:
  ConstrainedFactor() = default;
  void finish_constraints(const Eigen::MatrixXd& constraints);
  Eigen::VectorXd unconstrained_solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd unconstrained_solve(const Eigen::MatrixXd& b) const;
  void correct(Eigen::VectorXd& x) const;

  Eigen::Index dim_ = 0;
  std::shared_ptr<Eigen::LLT<Eigen::MatrixXd>> dense_;
  std::shared_ptr<Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>>
      sparse_;
  Eigen::MatrixXd constraints_;
  Eigen::MatrixXd kriging_;  // H^-1 C'
  Eigen::LLT<Eigen::MatrixXd> schur_;
  double log_det_ = 0.0;
};

}  // namespace gcspatial
