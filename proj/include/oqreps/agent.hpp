#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "oqreps/dual_solver.hpp"
#include "oqreps/linear_mdp.hpp"
#include "oqreps/mgr.hpp"

namespace oqreps {

struct AgentParams {
  double eta = 0.1;
  double alpha = 0.1;
  double gamma = 0.1;
  double beta = 0.25;
  int M = 0;
  double epsilon_target = 1e-6;
  int T = 1;
  // Solver knobs.
  SolverMethod method = SolverMethod::Newton;
  SolverMode mode = SolverMode::Exact;
  int num_samples = 1000;
  double step_size = 0.0;
  double grad_tol = 1e-7;
  int max_iters = 200;
  bool certify = true;
};

struct DefaultParamsReport {
  AgentParams params;
  double lambda_min = 0.0;  // on the feature span; see MinEigReport
  double eta_cap = 0.0;     // 2 / ((M + 2) H)
  bool below_threshold = false;  // eta > eta_cap: T too small for the theorem's regime
  std::string note;
};

/// beta = 1/(2 sigma^2), M = ceil(2 sigma^2 log(T H sigma R) / (gamma lambda_min)),
/// eta = alpha = 1/sqrt(T d H), gamma = 1/sqrt(T H), with H the number of layers.
/// Throws std::invalid_argument if lambda_min <= 1e-10.
DefaultParamsReport default_params(const LinearMdp& mdp, int T);

/// Throws std::invalid_argument for beta > 1/(2 sigma^2), gamma outside (0, 1],
/// non-positive eta or alpha, or negative M.
void check_params(const LinearMdp& mdp, const AgentParams& params);

/// Wraps the environment's reward function and records every (h, x, a) read.
class BanditFeedback {
 public:
  explicit BanditFeedback(RewardFn reward) : reward_(std::move(reward)) {}
  double observe(int h, int x, int a);
  const std::vector<std::tuple<int, int, int>>& log() const { return log_; }
  void clear() { log_.clear(); }

 private:
  RewardFn reward_;
  std::vector<std::tuple<int, int, int>> log_;
};

struct MgrDiagnostics {
  int M = 0;
  long paths = 0;
  double max_abs_estimate = 0.0;  // max over h, x, a of |r_hat|
  double eta_max_abs_estimate = 0.0;
  double estimate_limit = 0.0;    // (M + 1) / 2
};

struct EpisodeResult {
  int episode = 0;  // 0-based
  Trajectory trajectory;
  bool explored = false;
  double realized_reward = 0.0;
  double expected_reward = 0.0;  // only when ledger rewards were supplied
  SolveReport solve;             // the solve that produced the next policy
  MgrDiagnostics estimator;
  std::vector<Eigen::VectorXd> theta_hat;
};

/// Online Q-REPS with bandit feedback. The environment streams (actions,
/// transitions), the exploration coin, MGR simulation and solver sampling each
/// draw from their own sub-stream of the master seed.
class OnlineQReps {
 public:
  OnlineQReps(const LinearMdp& mdp, AgentParams params, std::uint64_t seed);

  /// Runs one episode against `feedback`. If `ledger_rewards` is given (per
  /// layer pair rewards of this episode) the exact expected reward of the
  /// executed mixture is filled in; it never reaches the estimator.
  EpisodeResult run_episode(BanditFeedback& feedback,
                            const std::vector<Eigen::VectorXd>* ledger_rewards = nullptr);

  /// pi_t(a|x) in closed form from the features at x.
  double policy_prob(StateId x, int a) const;
  Policy current_policy() const;
  /// (1 - gamma) u_t + gamma mu_0.
  OccupancyMeasure executed_occupancy() const;

  const CumulativeRewards& cum() const { return cum_; }
  const DualParams& z() const { return z_; }
  const AgentParams& params() const { return params_; }
  int episode_index() const { return episode_; }
  const SolveReport& initial_solve() const { return initial_solve_; }

 private:
  SolverConfig solver_config() const;
  SolveReport solve(const DualParams* warm);

  const LinearMdp* mdp_;
  AgentParams params_;
  CumulativeRewards cum_;
  DualParams z_;
  SolveReport initial_solve_;
  int episode_ = 0;
  Rng env_rng_;
  Rng explore_rng_;
  Rng mgr_rng_;
  Rng sample_rng_;
};

}  // namespace oqreps
