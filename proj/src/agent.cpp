#include "oqreps/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace oqreps {

DefaultParamsReport default_params(const LinearMdp& mdp, int T) {
  if (T < 1) throw std::invalid_argument("T must be positive");
  const MinEigReport eig = min_eig_uniform(mdp);
  if (!(eig.lambda_min_on_span > 1e-10)) {
    throw std::invalid_argument("uniform-policy covariance has no positive eigenvalue on the feature span");
  }
  const double sigma = mdp.sigma();
  const double R = mdp.reward_bound();
  const double H = mdp.horizon();
  const double d = mdp.dim();
  DefaultParamsReport rep;
  rep.lambda_min = eig.lambda_min_on_span;
  AgentParams& p = rep.params;
  p.T = T;
  p.beta = 1.0 / (2.0 * sigma * sigma);
  p.eta = 1.0 / std::sqrt(T * d * H);
  p.alpha = p.eta;
  p.gamma = 1.0 / std::sqrt(T * H);
  const double m = std::ceil(2.0 * sigma * sigma * std::log(T * H * sigma * R) / (p.gamma * rep.lambda_min));
  p.M = static_cast<int>(std::clamp(m, 0.0, static_cast<double>(std::numeric_limits<int>::max())));
  rep.eta_cap = 2.0 / ((p.M + 2.0) * H);
  rep.below_threshold = p.eta > rep.eta_cap;
  std::ostringstream note;
  if (eig.rank_deficient) note << "covariance is singular on R^d; lambda_min taken on the feature span. ";
  if (rep.below_threshold) {
    note << "eta = " << p.eta << " exceeds 2/((M+2)H) = " << rep.eta_cap
         << "; T is below the regime where the regret bound applies.";
  }
  rep.note = note.str();
  return rep;
}

void check_params(const LinearMdp& mdp, const AgentParams& p) {
  const double beta_max = 1.0 / (2.0 * mdp.sigma() * mdp.sigma());
  std::ostringstream err;
  if (!(p.beta > 0.0) || p.beta > beta_max * (1.0 + 1e-12)) {
    err << "beta = " << p.beta << " must be in (0, 1/(2 sigma^2)] = (0, " << beta_max << "]";
  } else if (!(p.gamma > 0.0) || p.gamma > 1.0) {
    err << "gamma = " << p.gamma << " must be in (0, 1]";
  } else if (!(p.eta > 0.0) || !(p.alpha > 0.0)) {
    err << "eta and alpha must be positive";
  } else if (p.M < 0) {
    err << "M must be non-negative";
  } else if (p.T < 1) {
    err << "T must be positive";
  }
  if (!err.str().empty()) throw std::invalid_argument(err.str());
}

double BanditFeedback::observe(int h, int x, int a) {
  log_.emplace_back(h, x, a);
  return reward_(h, x, a);
}

OnlineQReps::OnlineQReps(const LinearMdp& mdp, AgentParams params, std::uint64_t seed)
    : mdp_(&mdp),
      params_(params),
      cum_(CumulativeRewards::zeros(mdp)),
      z_(DualParams::zeros(mdp)),
      env_rng_(make_stream(seed, "env")),
      explore_rng_(make_stream(seed, "explore")),
      mgr_rng_(make_stream(seed, "mgr")),
      sample_rng_(make_stream(seed, "solver-samples")) {
  check_params(mdp, params_);
  // Z_1 solves the zero-reward problem; its optimum is Z = 0 for the exact
  // objective, so there is nothing to sample.
  SolverConfig cfg = solver_config();
  cfg.mode = SolverMode::Exact;
  cfg.max_iters = 1;
  initial_solve_ = minimize(mdp, cum_, cfg);
  z_ = initial_solve_.z;
}

SolverConfig OnlineQReps::solver_config() const {
  SolverConfig cfg;
  cfg.eta = params_.eta;
  cfg.alpha = params_.alpha;
  cfg.step_size = params_.step_size;
  cfg.max_iters = params_.max_iters;
  cfg.grad_tol = params_.grad_tol;
  cfg.certify = params_.certify;
  cfg.method = params_.method;
  cfg.mode = params_.mode;
  cfg.num_samples = params_.num_samples;
  return cfg;
}

SolveReport OnlineQReps::solve(const DualParams* warm) {
  const SolverConfig cfg = solver_config();
  if (cfg.mode == SolverMode::Sampled) {
    const LayerSamples samples = sample_reference_pairs(*mdp_, cfg.num_samples, sample_rng_);
    const OccupancyMeasure ref = empirical_measure(*mdp_, samples);
    return minimize(*mdp_, cum_, cfg, warm, &ref);
  }
  return minimize(*mdp_, cum_, cfg, warm);
}

double OnlineQReps::policy_prob(StateId x, int a) const {
  const LinearMdp& mdp = *mdp_;
  const int k = mdp.num_actions();
  const Eigen::MatrixXd& zh = z_.blocks[x.layer];
  Eigen::VectorXd s(k);
  for (int b = 0; b < k; ++b) {
    const Eigen::VectorXd f = mdp.feature(x.layer, x.index, b);
    s(b) = params_.alpha * f.dot(zh * f);
  }
  const double m = s.maxCoeff();
  return std::exp(s(a) - m) / (s.array() - m).exp().sum();
}

Policy OnlineQReps::current_policy() const { return extract_policy(*mdp_, z_, params_.alpha); }

OccupancyMeasure OnlineQReps::executed_occupancy() const {
  return mix(occupancy_of_policy(*mdp_, current_policy()), uniform_occupancy(*mdp_), params_.gamma);
}

EpisodeResult OnlineQReps::run_episode(BanditFeedback& feedback,
                                       const std::vector<Eigen::VectorXd>* ledger_rewards) {
  const LinearMdp& mdp = *mdp_;
  const int layers = mdp.num_decision_layers();
  const int k = mdp.num_actions();
  const Policy pi = current_policy();

  EpisodeResult res;
  res.episode = episode_;
  if (ledger_rewards != nullptr) {
    res.expected_reward = expected_reward(executed_occupancy(), *ledger_rewards);
  }

  res.explored = bernoulli(explore_rng_, params_.gamma);
  const Policy acting = res.explored ? uniform_policy(mdp) : pi;
  int x = 0;
  std::vector<Eigen::VectorXd> targets(layers);
  std::vector<double> observed(layers);
  for (int h = 0; h < layers; ++h) {
    const Eigen::VectorXd probs = acting.probs[h].row(x).transpose();
    const int a = sample_categorical({probs.data(), static_cast<std::size_t>(k)}, env_rng_);
    observed[h] = feedback.observe(h, x, a);
    res.trajectory.steps.push_back({StateId{h, x}, a, observed[h]});
    res.realized_reward += observed[h];
    targets[h] = mdp.feature(h, x, a);
    const Eigen::VectorXd next = mdp.transitions(h).row(mdp.pair_index(x, a)).transpose();
    x = sample_categorical({next.data(), static_cast<std::size_t>(next.size())}, env_rng_);
  }
  res.trajectory.terminal = StateId{mdp.horizon() - 1, x};

  const MgrConfig mgr{params_.beta, params_.M};
  MixedPolicySampler sampler(mdp, pi, params_.gamma, Rng(mgr_rng_()));
  const std::vector<Eigen::VectorXd> q = mgr_fast(mdp, sampler, mgr, targets);
  res.estimator.M = params_.M;
  res.estimator.paths = sampler.paths_drawn();
  res.estimator.estimate_limit = (params_.M + 1) / 2.0;
  res.theta_hat.resize(layers);
  for (int h = 0; h < layers; ++h) {
    res.theta_hat[h] = reward_estimate(q[h], observed[h]);
    check_estimate_bound(mdp, h, res.theta_hat[h], params_.M);
    res.estimator.max_abs_estimate =
        std::max(res.estimator.max_abs_estimate, max_abs_estimate(mdp, h, res.theta_hat[h]));
  }
  res.estimator.eta_max_abs_estimate = params_.eta * res.estimator.max_abs_estimate;

  cum_.add(res.theta_hat);
  res.solve = solve(&z_);
  z_ = res.solve.z;
  ++episode_;
  return res;
}

}  // namespace oqreps
