#include "gcspatial/factor.hpp"

#include <cmath>

#include "gcspatial/error.hpp"

namespace gcspatial {

namespace {

double llt_log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

ConstrainedFactor ConstrainedFactor::dense(const Eigen::MatrixXd& h,
                                           const Eigen::MatrixXd& constraints) {
  ConstrainedFactor f;
  f.dim_ = h.rows();
  Eigen::MatrixXd augmented = h;
  if (constraints.rows() > 0) {
    const double kappa = std::max(1.0, h.diagonal().cwiseAbs().mean());
    augmented.noalias() += kappa * constraints.transpose() * constraints;
  }
  f.dense_ = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(augmented);
  if (f.dense_->info() != Eigen::Success) {
    throw ConvergenceError("dense Cholesky factorization failed (matrix not positive definite)");
  }
  f.log_det_ = llt_log_det(*f.dense_);
  f.finish_constraints(constraints);
  return f;
}

ConstrainedFactor ConstrainedFactor::sparse(const SparseMatrix& h,
                                            const Eigen::MatrixXd& constraints,
                                            const Eigen::VectorXd& jitter) {
  ConstrainedFactor f;
  f.dim_ = h.rows();
  SparseMatrix work = h;
  if (jitter.size() == h.rows()) {
    for (Eigen::Index i = 0; i < jitter.size(); ++i) {
      if (jitter[i] != 0.0) work.coeffRef(i, i) += jitter[i];
    }
  }
  f.sparse_ = std::make_shared<
      Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>>();
  f.sparse_->compute(work);
  if (f.sparse_->info() != Eigen::Success) {
    throw ConvergenceError("sparse Cholesky factorization failed (matrix not positive definite)");
  }
  Eigen::VectorXd diag = f.sparse_->matrixL().nestedExpression().diagonal();
  f.log_det_ = 2.0 * diag.array().log().sum();
  f.finish_constraints(constraints);
  return f;
}

void ConstrainedFactor::finish_constraints(const Eigen::MatrixXd& constraints) {
  constraints_ = constraints;
  if (constraints.rows() == 0) return;
  kriging_ = unconstrained_solve(Eigen::MatrixXd(constraints.transpose()));
  const Eigen::MatrixXd schur = constraints * kriging_;
  schur_.compute(schur);
  if (schur_.info() != Eigen::Success) {
    throw ConvergenceError("constraint Schur complement is not positive definite");
  }
  Eigen::LLT<Eigen::MatrixXd> cc(constraints * constraints.transpose());
  if (cc.info() != Eigen::Success) {
    throw InputError("linear constraints are linearly dependent");
  }
  log_det_ += llt_log_det(schur_) - llt_log_det(cc);
}

Eigen::VectorXd ConstrainedFactor::unconstrained_solve(const Eigen::VectorXd& b) const {
  if (dense_) return dense_->solve(b);
  return sparse_->solve(b);
}

Eigen::MatrixXd ConstrainedFactor::unconstrained_solve(const Eigen::MatrixXd& b) const {
  if (dense_) return dense_->solve(b);
  return sparse_->solve(b);
}

// Two kriging passes: with a nearly singular H the first one leaves a
// residual of order cond(H) * eps in C x.
void ConstrainedFactor::correct(Eigen::VectorXd& x) const {
  if (constraints_.rows() == 0) return;
  for (int pass = 0; pass < 2; ++pass) x.noalias() -= kriging_ * schur_.solve(constraints_ * x);
}

Eigen::VectorXd ConstrainedFactor::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd x = unconstrained_solve(b);
  correct(x);
  return x;
}

Eigen::MatrixXd ConstrainedFactor::covariance() const {
  Eigen::MatrixXd cov = unconstrained_solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(dim_, dim_)));
  if (constraints_.rows() > 0) {
    cov.noalias() -= kriging_ * schur_.solve(kriging_.transpose());
  }
  return 0.5 * (cov + cov.transpose());
}

Eigen::VectorXd ConstrainedFactor::sample(const Eigen::VectorXd& z) const {
  Eigen::VectorXd x;
  if (dense_) {
    x = dense_->matrixU().solve(z);
  } else {
    const Eigen::VectorXd v = sparse_->matrixU().solve(z);
    x = sparse_->permutationPinv() * v;
  }
  correct(x);
  return x;
}

}  // namespace gcspatial
