#pragma once

#include <Eigen/Dense>

#include <compare>
#include <functional>
#include <string>
#include <vector>

#include "oqreps/rng.hpp"

namespace oqreps {

/// Feature rows are stored row-major so a single (x, a) feature is contiguous.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A state addressed by its layer (0-based, layer 0 holds the initial state and
/// layer H-1 the terminal state) and its index within that layer.
struct StateId {
  int layer = 0;
  int index = 0;
  auto operator<=>(const StateId&) const = default;
};

/// Layered episodic MDP whose transitions are linear in a known feature map:
/// P(x'|x,a) = phi(x,a)^T M_h[:, x'] for x in layer h.
///
/// Only decision layers 0..H-2 carry actions, features and rewards. The
/// terminal layer is a single absorbing state with nothing attached.
///
/// Within a decision layer the (x, a) pair has row index x * K + a.
class LinearMdp {
 public:
  /// Throws std::invalid_argument on structural problems (shapes, singleton
  /// end layers). Semantic checks (norms, stochasticity) live in validate().
  LinearMdp(std::vector<int> layer_sizes, int num_actions, std::vector<FeatureMatrix> features,
            std::vector<Eigen::MatrixXd> measures, double sigma, double reward_bound);

  int horizon() const { return static_cast<int>(layer_sizes_.size()); }
  int num_decision_layers() const { return horizon() - 1; }
  int num_actions() const { return num_actions_; }
  int dim() const { return dim_; }
  int layer_size(int h) const { return layer_sizes_[h]; }
  int num_pairs(int h) const { return layer_sizes_[h] * num_actions_; }
  int pair_index(int x, int a) const { return x * num_actions_ + a; }
  const std::vector<int>& layer_sizes() const { return layer_sizes_; }

  /// Feature bound sigma and reward-parameter bound R (metadata only).
  double sigma() const { return sigma_; }
  double reward_bound() const { return reward_bound_; }
  void set_reward_bound(double r) { reward_bound_ = r; }

  const FeatureMatrix& features(int h) const { return features_[h]; }
  Eigen::VectorXd feature(int h, int x, int a) const {
    return features_[h].row(pair_index(x, a)).transpose();
  }
  /// d x |X_{h+1}| transition measure of layer h.
  const Eigen::MatrixXd& measure(int h) const { return measures_[h]; }

  /// Transition table, pairs x |X_{h+1}|, with float noise clamped.
  const Eigen::MatrixXd& transitions(int h) const { return transitions_[h]; }
  /// Phi_h M_h without clamping or renormalization.
  Eigen::MatrixXd raw_transitions(int h) const { return features_[h] * measures_[h]; }

 private:
  std::vector<int> layer_sizes_;
  int num_actions_;
  int dim_;
  std::vector<FeatureMatrix> features_;
  std::vector<Eigen::MatrixXd> measures_;
  std::vector<Eigen::MatrixXd> transitions_;
  double sigma_;
  double reward_bound_;
};

struct Violation {
  std::string check;
  int layer = -1;
  int state = -1;
  int action = -1;
  std::string detail;
};

std::vector<Violation> validate(const LinearMdp& mdp);
std::string describe(const Violation& v);

/// Per decision layer, an |X_h| x K row-stochastic matrix.
struct Policy {
  std::vector<Eigen::MatrixXd> probs;
  double prob(StateId x, int a) const { return probs[x.layer](x.index, a); }
};

Policy uniform_policy(const LinearMdp& mdp);

/// Per decision layer, a distribution over (x, a) pairs indexed as in LinearMdp.
struct OccupancyMeasure {
  std::vector<Eigen::VectorXd> dist;

  Eigen::VectorXd state_marginal(int h, int num_actions) const;
};

/// (1 - gamma) * u + gamma * mu0, layer by layer.
OccupancyMeasure mix(const OccupancyMeasure& u, const OccupancyMeasure& mu0, double gamma);

struct Trajectory {
  struct Step {
    StateId state;
    int action = 0;
    double reward = 0.0;
  };
  std::vector<Step> steps;
  StateId terminal;
};

/// Reward oracle queried at (layer, state index, action).
using RewardFn = std::function<double(int h, int x, int a)>;

/// Forward dynamic programming from the initial state.
OccupancyMeasure occupancy_of_policy(const LinearMdp& mdp, const Policy& policy);
OccupancyMeasure uniform_occupancy(const LinearMdp& mdp);

/// Largest per-state violation of the flow constraints
/// sum_a u_{h+1}(x', a) = sum_{x,a} P(x'|x,a) u_h(x,a), plus the initial-state
/// condition.
double flow_residual(const LinearMdp& mdp, const OccupancyMeasure& occ);

/// Phi_h^T diag(occ_h) Phi_h.
Eigen::MatrixXd covariance(const LinearMdp& mdp, const OccupancyMeasure& occ, int h);
Eigen::MatrixXd exact_covariance(const LinearMdp& mdp, const Policy& policy, int h);

struct MinEigReport {
  /// min over layers of the smallest eigenvalue of the uniform-policy covariance.
  double lambda_min = 0.0;
  /// Same, restricted to the span of each layer's features. This is the
  /// constant that controls estimator bias, because rewards only ever see
  /// feature directions.
  double lambda_min_on_span = 0.0;
  /// lambda_min <= 1e-10: the covariance is singular on R^d.
  bool rank_deficient = false;
  int worst_layer = 0;
};

MinEigReport min_eig_uniform(const LinearMdp& mdp);

/// One complete path with its probability: pair index per decision layer and
/// the state index per layer including the terminal one.
struct WeightedPath {
  double prob = 0.0;
  std::vector<int> pairs;
  std::vector<int> states;
};

/// Every positive-probability path of `policy`. Exponential in H; meant for
/// tiny instances and exact checks.
std::vector<WeightedPath> enumerate_paths(const LinearMdp& mdp, const Policy& policy);

Trajectory sample_trajectory(const LinearMdp& mdp, const Policy& policy, const RewardFn& reward,
                             Rng& rng);

/// Expected total reward sum_h <u_h, r_h> with rewards given per layer as pair vectors.
double expected_reward(const OccupancyMeasure& occ, const std::vector<Eigen::VectorXd>& rewards);

struct HindsightResult {
  Policy policy;
  double value = 0.0;
};

/// Best fixed policy for the summed reward tables (per layer, per pair).
/// Backward induction is exact since the objective is linear in occupancy.
HindsightResult best_in_hindsight(const LinearMdp& mdp,
                                  const std::vector<Eigen::VectorXd>& summed_rewards);

/// Tabular embedding: phi(x,a) = e_0 + e_{1 + global pair id}, so
/// d = 1 + sum of decision-layer pair counts and sigma = sqrt(2).
LinearMdp gen_tabular(const std::vector<int>& layers, int num_actions, Rng& rng);

/// phi(x,a) = (1, psi(x,a)) with psi uniform on the (d-1)-simplex. The first
/// measure coordinate is zero and the others are random next-layer
/// distributions, so every row is a convex combination. sigma = sqrt(2).
LinearMdp gen_simplex(const std::vector<int>& layers, int num_actions, int dim, Rng& rng);

}  // namespace oqreps
