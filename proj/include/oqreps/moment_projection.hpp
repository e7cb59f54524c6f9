#pragma once

#include <Eigen/Dense>

#include "oqreps/linear_mdp.hpp"

namespace oqreps {

struct MomentProjection {
  Eigen::VectorXd mu;
  double residual = 0.0;  // |Phi^T (diag mu - diag target) Phi|_F
  int iters = 0;
  bool converged = false;
};

/// Relative-entropy projection of `reference` onto the set of distributions
/// whose feature covariance equals that of `target`:
///
///   argmin_mu D(mu || reference)  s.t.  Phi^T diag(mu) Phi = Phi^T diag(target) Phi.
///
/// The minimizer has the form mu ∝ reference * exp(phi^T Y phi); Y is found by
/// damped Newton on the convex dual. Feature outer products are often linearly
/// dependent, so the Newton system is solved in the least-squares sense.
MomentProjection project_moments(const FeatureMatrix& phi, const Eigen::VectorXd& reference,
                                 const Eigen::VectorXd& target, double tol = 1e-13,
                                 int max_iters = 200);

}  // namespace oqreps
