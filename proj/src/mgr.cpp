#include "oqreps/mgr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace oqreps {

namespace {

// Cumulative sums of each row of a row-stochastic table, plus the last index
// with positive mass as a fallback for rounding at the top of the range.
void build_cdf(const Eigen::MatrixXd& table, std::vector<double>& cdf, std::vector<int>& last) {
  const Eigen::Index rows = table.rows();
  const Eigen::Index cols = table.cols();
  cdf.assign(rows * cols, 0.0);
  last.assign(rows, 0);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double p = table(r, c);
      if (p > 0.0) {
        acc += p;
        last[r] = static_cast<int>(c);
      }
      cdf[r * cols + c] = acc;
    }
  }
}

int draw(const double* cdf, int n, int fallback, double u) {
  for (int i = 0; i < n; ++i) {
    if (u < cdf[i]) return i;
  }
  return fallback;
}

}  // namespace

MixedPolicySampler::MixedPolicySampler(const LinearMdp& mdp, const Policy& learner, double gamma,
                                       Rng rng)
    : mdp_(&mdp), gamma_(gamma), rng_(std::move(rng)) {
  const int layers = mdp.num_decision_layers();
  policy_cdf_.resize(layers);
  policy_last_.resize(layers);
  trans_cdf_.resize(layers);
  trans_last_.resize(layers);
  for (int h = 0; h < layers; ++h) {
    build_cdf(learner.probs[h], policy_cdf_[h], policy_last_[h]);
    build_cdf(mdp.transitions(h), trans_cdf_[h], trans_last_[h]);
  }
}

void MixedPolicySampler::next(std::vector<int>& pairs) {
  const LinearMdp& mdp = *mdp_;
  const int k = mdp.num_actions();
  const int layers = mdp.num_decision_layers();
  pairs.resize(layers);
  const bool explore = bernoulli(rng_, gamma_);
  int x = 0;
  for (int h = 0; h < layers; ++h) {
    int a;
    if (explore) {
      a = std::min(static_cast<int>(uniform01(rng_) * k), k - 1);
    } else {
      a = draw(&policy_cdf_[h][x * k], k, policy_last_[h][x], uniform01(rng_));
    }
    const int pair = x * k + a;
    pairs[h] = pair;
    const int next_size = mdp.layer_size(h + 1);
    x = draw(&trans_cdf_[h][pair * next_size], next_size, trans_last_[h][pair], uniform01(rng_));
  }
  ++paths_;
}

CovInverseEstimate mgr_naive(const LinearMdp& mdp, PathSource& paths, const MgrConfig& cfg) {
  const int layers = mdp.num_decision_layers();
  const int d = mdp.dim();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  std::vector<Eigen::MatrixXd> c(layers, eye);
  CovInverseEstimate est;
  est.sigma_plus.assign(layers, cfg.beta * eye);
  std::vector<int> pairs;
  for (int i = 0; i < cfg.M; ++i) {
    paths.next(pairs);
    for (int h = 0; h < layers; ++h) {
      const Eigen::VectorXd phi = mdp.features(h).row(pairs[h]).transpose();
      const Eigen::MatrixXd factor = eye - cfg.beta * phi * phi.transpose();
      c[h] = factor * c[h];
      est.sigma_plus[h] += cfg.beta * c[h];
    }
  }
  return est;
}

std::vector<Eigen::VectorXd> mgr_fast(const LinearMdp& mdp, PathSource& paths, const MgrConfig& cfg,
                                      const std::vector<Eigen::VectorXd>& targets) {
  const int layers = mdp.num_decision_layers();
  const int d = mdp.dim();
  std::vector<Eigen::VectorXd> y = targets;
  std::vector<Eigen::VectorXd> sum = targets;
  std::vector<int> pairs;
  for (int k = 0; k < cfg.M; ++k) {
    paths.next(pairs);
    for (int h = 0; h < layers; ++h) {
      const double* phi = mdp.features(h).row(pairs[h]).data();
      double* yh = y[h].data();
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += yh[j] * phi[j];
      const double s = cfg.beta * dot;
      double* acc = sum[h].data();
      for (int j = 0; j < d; ++j) {
        yh[j] -= s * phi[j];
        acc[j] += yh[j];
      }
    }
  }
  for (auto& q : sum) q *= cfg.beta;
  return sum;
}

Eigen::VectorXd reward_estimate(const Eigen::VectorXd& q, double reward) { return q * reward; }

Eigen::VectorXd reward_estimate(const Eigen::MatrixXd& sigma_plus, const Eigen::VectorXd& phi_taken,
                                double reward) {
  return sigma_plus * phi_taken * reward;
}

double max_abs_estimate(const LinearMdp& mdp, int h, const Eigen::VectorXd& theta_hat) {
  return (mdp.features(h) * theta_hat).cwiseAbs().maxCoeff();
}

void check_estimate_bound(const LinearMdp& mdp, int h, const Eigen::VectorXd& theta_hat, int M) {
  const double worst = max_abs_estimate(mdp, h, theta_hat);
  const double limit = (M + 1) / 2.0 + 1e-9;
  if (!(worst <= limit)) {
    std::ostringstream s;
    s << "reward estimate " << worst << " at layer " << h << " exceeds (M+1)/2 = " << limit
      << "; check beta <= 1/(2 sigma^2)";
    throw EstimateBoundError(s.str());
  }
}

Eigen::MatrixXd expected_sigma_plus(const Eigen::MatrixXd& sigma, const MgrConfig& cfg) {
  const Eigen::Index d = sigma.rows();
  const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(d, d) - cfg.beta * sigma;
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd acc = power;
  for (int k = 1; k <= cfg.M; ++k) {
    power = step * power;
    acc += power;
  }
  return cfg.beta * acc;
}

EstimatorOracle exact_estimator_oracle(const LinearMdp& mdp, const OccupancyMeasure& executed,
                                       const Eigen::VectorXd& theta, int h, const MgrConfig& cfg,
                                       bool exact_inverse) {
  const FeatureMatrix& phi = mdp.features(h);
  const Eigen::MatrixXd sigma = covariance(mdp, executed, h);
  Eigen::MatrixXd inverse;
  if (exact_inverse) {
    // Relative cutoff: the default rank test can keep a round-off eigenvalue.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
    const Eigen::VectorXd ev = es.eigenvalues();
    const double cut = 1e-10 * std::max(ev.maxCoeff(), 0.0);
    Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(ev.size());
    for (int i = 0; i < ev.size(); ++i) {
      if (ev(i) > cut) inv_ev(i) = 1.0 / ev(i);
    }
    inverse = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  } else {
    inverse = expected_sigma_plus(sigma, cfg);
  }
  // E[phi r] over the acting step: sum_{x,a} occ(x,a) phi(x,a) <phi(x,a), theta>.
  Eigen::VectorXd mean_phi_r = Eigen::VectorXd::Zero(mdp.dim());
  for (int i = 0; i < mdp.num_pairs(h); ++i) {
    const double w = executed.dist[h](i);
    if (w == 0.0) continue;
    const Eigen::VectorXd f = phi.row(i).transpose();
    mean_phi_r += w * f * f.dot(theta);
  }
  EstimatorOracle out;
  out.expected_theta = inverse * mean_phi_r;
  out.bias = out.expected_theta - theta;
  out.bias_norm = out.bias.norm();
  out.reward_bias = (phi * out.bias).cwiseAbs().maxCoeff();
  return out;
}

double bias_bound(double sigma, double reward_bound, double gamma, double beta, double lambda_min,
                  int M) {
  return sigma * reward_bound * std::exp(-gamma * beta * lambda_min * M);
}

}  // namespace oqreps
