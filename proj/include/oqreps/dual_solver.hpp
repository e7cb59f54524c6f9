#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "oqreps/linear_mdp.hpp"

namespace oqreps {

/// Thrown when the dual objective leaves the finite range.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dual parameters Z = (Z_0, ..., Z_{H-2}), one d x d block per decision layer.
/// Only the symmetric part of a block affects the objective.
struct DualParams {
  std::vector<Eigen::MatrixXd> blocks;

  static DualParams zeros(const LinearMdp& mdp);
  double norm() const;  // Frobenius norm over all blocks
  DualParams& axpy(double scale, const DualParams& other);
};

/// Running sums of reward-parameter estimates, one d-vector per decision layer.
/// The estimated cumulative reward of (x, a) is <phi(x,a), theta_sums[h]>.
struct CumulativeRewards {
  std::vector<Eigen::VectorXd> theta_sums;

  static CumulativeRewards zeros(const LinearMdp& mdp);
  void add(const std::vector<Eigen::VectorXd>& theta);
};

/// V_Z on every layer (terminal value 0), the quadratic Q_Z per pair, and the
/// next-value weights w_h = M_h V_{h+1}, so that P_{x,a} V = <phi(x,a), w_h>.
struct ValueTable {
  std::vector<Eigen::VectorXd> values;
  std::vector<Eigen::VectorXd> q;
  std::vector<Eigen::VectorXd> next_value_weights;
};

double q_value(const LinearMdp& mdp, const DualParams& z, StateId x, int a);
/// Q_Z for every pair of layer h.
Eigen::VectorXd q_layer(const LinearMdp& mdp, const Eigen::MatrixXd& z_h, int h);

ValueTable value_table(const LinearMdp& mdp, const DualParams& z, double alpha);

double delta(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
             const ValueTable& vt, StateId x, int a);
/// Delta_Z for every pair of layer h.
Eigen::VectorXd delta_layer(const LinearMdp& mdp, const CumulativeRewards& cum,
                            const ValueTable& vt, int h);

/// pi_Z(a|x) = pi_0(a|x) exp(alpha (Q_Z(x,a) - V_Z(x))).
Policy extract_policy(const LinearMdp& mdp, const DualParams& z, double alpha);
Policy policy_from_values(const LinearMdp& mdp, const ValueTable& vt, double alpha);

/// mu_hat_h(x,a) proportional to mu_0(x,a) exp(eta Delta_Z(x,a)), normalized per layer.
OccupancyMeasure extract_mu(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
                            double eta, const ValueTable& vt);

/// The dual objective
///   G(Z) = sum_h (1/eta) log sum_{x,a} ref_h(x,a) exp(eta Delta_Z(x,a)) + V_Z(x_0)
/// for an arbitrary per-layer reference measure: the uniform-policy occupancy
/// for the exact objective, or an empirical measure for the sampled one.
/// Pairs with zero reference mass drop out of every sum.
class DualObjective {
 public:
  DualObjective(const LinearMdp& mdp, const CumulativeRewards& cum, double eta, double alpha,
                OccupancyMeasure reference);

  struct Evaluation {
    double value = 0.0;
    std::vector<double> layer_terms;  // (1/eta) log-sum-exp per decision layer
    ValueTable vt;
    OccupancyMeasure tilted;  // normalized ref * exp(eta Delta)
    DualParams gradient;      // filled only when requested
  };

  Evaluation evaluate(const DualParams& z, bool with_gradient = true) const;
  double value(const DualParams& z) const { return evaluate(z, false).value; }

  const LinearMdp& mdp() const { return *mdp_; }
  const CumulativeRewards& cum() const { return *cum_; }
  double eta() const { return eta_; }
  double alpha() const { return alpha_; }
  const OccupancyMeasure& reference() const { return reference_; }

 private:
  const LinearMdp* mdp_;
  const CumulativeRewards* cum_;
  double eta_;
  double alpha_;
  OccupancyMeasure reference_;
  std::vector<Eigen::VectorXd> log_reference_;
};

double objective(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum, double eta,
                 double alpha);
DualParams gradient(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
                    double eta, double alpha);

/// Per decision layer, a list of pair indices drawn i.i.d. from mu_0.
using LayerSamples = std::vector<std::vector<int>>;

/// N trajectories of the uniform policy, recorded pair by pair.
LayerSamples sample_reference_pairs(const LinearMdp& mdp, int n, Rng& rng);
/// Empirical measure (counts / N) of the samples.
OccupancyMeasure empirical_measure(const LinearMdp& mdp, const LayerSamples& samples);

/// sum_h (1/eta) log((1/N) sum_i exp(eta Delta_i)) + V_Z(x_0).
double empirical_objective(const LinearMdp& mdp, const LayerSamples& samples, const DualParams& z,
                           const CumulativeRewards& cum, double eta, double alpha);

struct PrimalValue {
  double value = 0.0;  // reward - D/eta - D_C/alpha; -inf on infinite divergence
  double reward = 0.0;
  double divergence = 0.0;              // D(mu || mu_0)
  double conditional_divergence = 0.0;  // D_C(u || mu_0)
  bool finite = true;
};

/// sum_h <mu_h, r_hat_h> - (1/eta) D(mu||mu_0) - (1/alpha) D_C(u||mu_0), with 0 log 0 = 0.
PrimalValue primal_value(const LinearMdp& mdp, const OccupancyMeasure& mu, const OccupancyMeasure& u,
                         const CumulativeRewards& cum, double eta, double alpha);

/// Largest |Phi_h^T (diag mu_h - diag u_h) Phi_h|_F over decision layers.
double covariance_mismatch(const LinearMdp& mdp, const OccupancyMeasure& mu,
                           const OccupancyMeasure& u);

struct GapCertificate {
  double dual_value = 0.0;
  double primal_lower = 0.0;  // value of a feasible primal pair
  double gap = 0.0;           // dual_value - primal_lower, clamped at 0
  double raw_gap = 0.0;
  double feasibility_residual = 0.0;
};

/// Suboptimality certificate for Z. Builds u from the policy pi_Z and the
/// feasible partner mu closest to mu_0 in relative entropy among measures with
/// u's feature covariance. The pair satisfies every primal constraint, so weak
/// duality gives G(Z) - min G <= gap. At the optimum the partner is mu_hat and
/// the gap closes.
GapCertificate duality_gap(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
                           double eta, double alpha);

enum class SolverMode { Exact, Sampled };

/// Newton uses a finite-difference Hessian of the analytic gradient over the
/// symmetric block coordinates and a pseudo-inverse for the flat directions
/// that rank-deficient features create. GradientDescent is the fixed-step
/// method with halving on objective increase.
enum class SolverMethod { Newton, GradientDescent };

struct SolverConfig {
  double eta = 1.0;
  double alpha = 1.0;
  double step_size = 0.0;  // <= 0 selects 0.5 / (eta sigma^4 H)
  int max_iters = 10000;
  double grad_tol = 1e-7;
  double target_gap = 0.0;  // > 0: also stop once the certified gap is below this
  int gap_check_every = 10;
  bool certify = true;  // compute gap_bound for the returned point
  SolverMode mode = SolverMode::Exact;
  SolverMethod method = SolverMethod::Newton;
  int num_samples = 1000;
};

struct SolveReport {
  DualParams z;
  double objective = 0.0;
  double grad_norm = 0.0;
  double gap_bound = 0.0;
  int iters = 0;
  bool converged = false;
  double step_size = 0.0;
};

double default_step_size(const LinearMdp& mdp, double eta);

/// Minimizes the dual from `warm_start` (zero if null).
/// In Sampled mode `reference` must hold the empirical measure to optimize
/// against; in Exact mode it is ignored and mu_0 is used. gap_bound is always
/// measured against the exact objective.
SolveReport minimize(const LinearMdp& mdp, const CumulativeRewards& cum, const SolverConfig& cfg,
                     const DualParams* warm_start = nullptr,
                     const OccupancyMeasure* reference = nullptr);

}  // namespace oqreps
