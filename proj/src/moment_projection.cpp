#include "oqreps/moment_projection.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace oqreps {

namespace {

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

MomentProjection project_moments(const FeatureMatrix& phi, const Eigen::VectorXd& reference,
                                 const Eigen::VectorXd& target, double tol, int max_iters) {
  const Eigen::Index n = phi.rows();
  const Eigen::Index d = phi.cols();
  MomentProjection out;
  out.mu = Eigen::VectorXd::Zero(n);

  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (reference(i) > 0.0) {
      active.push_back(i);
    } else if (target(i) > 0.0) {
      out.residual = std::numeric_limits<double>::infinity();
      return out;
    }
  }
  const Eigen::Index na = static_cast<Eigen::Index>(active.size());
  const Eigen::Index p = d * (d + 1) / 2;

  // Upper-triangular coordinates of phi phi^T, off-diagonals doubled so that
  // <Y, phi phi^T> = f^T y for symmetric Y.
  Eigen::MatrixXd f(na, p);
  Eigen::VectorXd log_ref(na);
  Eigen::VectorXd tgt(na);
  for (Eigen::Index r = 0; r < na; ++r) {
    const auto row = phi.row(active[r]);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index k = j; k < d; ++k) f(r, c++) = (j == k ? 1.0 : 2.0) * row(j) * row(k);
    }
    log_ref(r) = std::log(reference(active[r]));
    tgt(r) = target(active[r]);
  }
  // Only f y matters, so work in an orthonormal basis of f's column space.
  // The original coordinates are heavily redundant and make Newton ill-conditioned.
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(f, Eigen::ComputeThinU);
  const Eigen::VectorXd& sv = svd.singularValues();
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > 1e-10 * sv(0)) ++rank;
  const Eigen::MatrixXd basis = svd.matrixU().leftCols(rank);
  const Eigen::VectorXd moments = basis.transpose() * tgt;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(rank);
  auto dual = [&](const Eigen::VectorXd& ww, Eigen::VectorXd& mu) {
    const Eigen::VectorXd logits = log_ref + basis * ww;
    const double lse = log_sum_exp(logits);
    mu = (logits.array() - lse).exp().matrix();
    return lse - ww.dot(moments);
  };

  Eigen::VectorXd mu;
  double value = dual(w, mu);
  for (out.iters = 0; out.iters < max_iters; ++out.iters) {
    const Eigen::VectorXd mean = basis.transpose() * mu;
    const Eigen::VectorXd grad = mean - moments;
    if (grad.lpNorm<Eigen::Infinity>() <= tol) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd hess = basis.transpose() * mu.asDiagonal() * basis - mean * mean.transpose();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(hess);
    cod.setThreshold(1e-12);
    Eigen::VectorXd step = -cod.solve(grad);
    const double slope = grad.dot(step);
    if (!(slope < 0.0)) break;
    // Bound the change in any logit so a poorly conditioned step cannot overflow.
    const double move = (basis * step).lpNorm<Eigen::Infinity>();
    double t = move > 10.0 ? 10.0 / move : 1.0;

    Eigen::VectorXd mu_trial;
    double trial = dual(w + t * step, mu_trial);
    // Near the optimum the decrease drops below rounding; a step that leaves
    // the value flat but shrinks the gradient is still progress.
    auto flat_progress = [&]() {
      return trial <= value + 1e-14 * (1.0 + std::abs(value)) &&
             (basis.transpose() * mu_trial - moments).norm() < grad.norm();
    };
    int halvings = 0;
    while (!(trial <= value + 1e-4 * t * slope) && !flat_progress() && halvings < 60) {
      t *= 0.5;
      trial = dual(w + t * step, mu_trial);
      ++halvings;
    }
    if (!(trial <= value + 1e-4 * t * slope) && !flat_progress()) break;
    w += t * step;
    value = trial;
    mu = std::move(mu_trial);
  }

  for (Eigen::Index r = 0; r < na; ++r) out.mu(active[r]) = mu(r);
  const Eigen::VectorXd diff = out.mu - target;
  out.residual = (phi.transpose() * diff.asDiagonal() * phi).norm();
  return out;
}

}  // namespace oqreps
