#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "oqreps/linear_mdp.hpp"

namespace oqreps {

/// Matrix Geometric Resampling: a truncated Neumann series for the inverse
/// feature covariance, with each factor built from a fresh simulated path.
struct MgrConfig {
  double beta = 0.5;
  int M = 0;
};

/// Per decision layer, the estimate beta I + beta sum_{i=1}^M C_i.
struct CovInverseEstimate {
  std::vector<Eigen::MatrixXd> sigma_plus;
};

/// Supplies simulated paths as one pair index per decision layer.
class PathSource {
 public:
  virtual ~PathSource() = default;
  virtual void next(std::vector<int>& pairs) = 0;
};

/// Each path draws its own exploration coin: with probability gamma it follows
/// pi_0 for the whole path, otherwise the learner policy. This is the
/// distribution the agent actually executes.
class MixedPolicySampler final : public PathSource {
 public:
  MixedPolicySampler(const LinearMdp& mdp, const Policy& learner, double gamma, Rng rng);
  void next(std::vector<int>& pairs) override;
  long paths_drawn() const { return paths_; }

 private:
  const LinearMdp* mdp_;
  double gamma_;
  // Per layer, row-major cumulative tables for actions and next states.
  std::vector<std::vector<double>> policy_cdf_;
  std::vector<std::vector<int>> policy_last_;
  std::vector<std::vector<double>> trans_cdf_;
  std::vector<std::vector<int>> trans_last_;
  Rng rng_;
  long paths_ = 0;
};

/// C_i = (I - beta B_i) C_{i-1}: the newest factor multiplies from the left,
/// which is the order the matrix-free recursion reproduces.
CovInverseEstimate mgr_naive(const LinearMdp& mdp, PathSource& paths, const MgrConfig& cfg);

/// q_h = Sigma_plus_h target_h without forming any d x d matrix:
/// Y_0 = target, Y_k = Y_{k-1} - beta <Y_{k-1}, phi_k> phi_k, q = beta sum_{k=0}^M Y_k.
std::vector<Eigen::VectorXd> mgr_fast(const LinearMdp& mdp, PathSource& paths, const MgrConfig& cfg,
                                      const std::vector<Eigen::VectorXd>& targets);

/// Raised when an estimate exceeds (M+1)/2 in absolute value at some pair,
/// which can only happen if beta > 1/(2 sigma^2) or features exceed sigma.
class EstimateBoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// theta_hat = q * r.
Eigen::VectorXd reward_estimate(const Eigen::VectorXd& q, double reward);
Eigen::VectorXd reward_estimate(const Eigen::MatrixXd& sigma_plus, const Eigen::VectorXd& phi_taken,
                                double reward);

/// max_{(x,a) in layer h} |<phi(x,a), theta_hat>|.
double max_abs_estimate(const LinearMdp& mdp, int h, const Eigen::VectorXd& theta_hat);

/// Throws EstimateBoundError if max_abs_estimate > (M+1)/2 + 1e-9.
void check_estimate_bound(const LinearMdp& mdp, int h, const Eigen::VectorXd& theta_hat, int M);

/// beta sum_{k=0}^M (I - beta Sigma)^k.
Eigen::MatrixXd expected_sigma_plus(const Eigen::MatrixXd& sigma, const MgrConfig& cfg);

struct EstimatorOracle {
  Eigen::VectorXd expected_theta;
  Eigen::VectorXd bias;       // E[theta_hat] - theta
  double bias_norm = 0.0;     // Euclidean norm of bias
  double reward_bias = 0.0;   // max_{x,a} |<phi(x,a), bias>|
};

/// Exact E[theta_hat_h] under the executed occupancy, enumerating the acting
/// step pair by pair and using the closed-form mean of Sigma_plus. With
/// `exact_inverse` the estimator uses the (pseudo-)inverse covariance instead.
EstimatorOracle exact_estimator_oracle(const LinearMdp& mdp, const OccupancyMeasure& executed,
                                       const Eigen::VectorXd& theta, int h, const MgrConfig& cfg,
                                       bool exact_inverse = false);

/// sigma R exp(-gamma beta lambda_min M).
double bias_bound(double sigma, double reward_bound, double gamma, double beta, double lambda_min,
                  int M);

}  // namespace oqreps
