// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "oqreps/adversary.hpp"
#include "oqreps/agent.hpp"
#include "oqreps/harness.hpp"
#include "oqreps/moment_projection.hpp"
#include "oracles.hpp"

using namespace oqreps;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

SolverConfig solver(double eta, double alpha) {
  SolverConfig c;
  c.eta = eta;
  c.alpha = alpha;
  c.grad_tol = 1e-7;
  c.max_iters = 500;
  return c;
}

// (eta, alpha, cum scale) triples for the solver criteria: a moderate setting
// and the theorem default for T = 500.
std::vector<std::array<double, 3>> solver_settings(const LinearMdp& mdp) {
  const double eta = default_params(mdp, 500).params.eta;
  return {{0.5, 0.5, 2.0}, {1.0, 0.3, 1.0}, {eta, eta, 20.0}};
}

LinearMdp two_branch() {
  Rng rng = make_stream(3, "instance");
  return gen_simplex({1, 1}, 2, 3, rng);
}

Eigen::MatrixXd mixture_covariance(const LinearMdp& mdp, const std::vector<oracle::PairPath>& paths, int h) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(mdp.dim(), mdp.dim());
  for (const auto& p : paths) {
    const Eigen::VectorXd f = mdp.features(h).row(p.pairs[h]).transpose();
    s += p.p * f * f.transpose();
  }
  return s;
}

Eigen::VectorXd mean_phi_r(const LinearMdp& mdp, const std::vector<oracle::PairPath>& paths, int h,
                           const Eigen::VectorXd& theta) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(mdp.dim());
  for (const auto& p : paths) {
    const Eigen::VectorXd f = mdp.features(h).row(p.pairs[h]).transpose();
    m += p.p * f * f.dot(theta);
  }
  return m;
}

// Orthogonal projector onto the row span of the layer's features.
Eigen::MatrixXd span_projector(const LinearMdp& mdp, int h) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(mdp.features(h)), Eigen::ComputeFullV);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i) rank += svd.singularValues()(i) > 1e-10;
  const Eigen::MatrixXd v = svd.matrixV().leftCols(rank);
  return v * v.transpose();
}

ExperimentConfig regret_config(int T) {
  ExperimentConfig c;
  c.T = T;
  c.output_dir = "";
  c.schedule.kind = "switching";
  return c;
}

Outcome dual_primal_consistency() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(101);
  double worst = 0.0;
  double worst_grad = 0.0;
  for (const auto& [eta, alpha, scale] : solver_settings(mdp)) {
    for (int draw = 0; draw < 3; ++draw) {
      const CumulativeRewards cum = oracle::random_cum(mdp, scale, rng);
      const SolveReport r = minimize(mdp, cum, solver(eta, alpha));
      if (!(r.grad_norm <= 1e-7)) return {false, "solver stopped at grad_norm " + num(r.grad_norm)};
      worst_grad = std::max(worst_grad, r.grad_norm);
      const ValueTable vt = value_table(mdp, r.z, alpha);
      const OccupancyMeasure mu = extract_mu(mdp, r.z, cum, eta, vt);
      const OccupancyMeasure u = occupancy_of_policy(mdp, extract_policy(mdp, r.z, alpha));
      const double primal = primal_value(mdp, mu, u, cum, eta, alpha).value;
      // The dual value is recomputed from the expanded formula.
      const double dual = oracle::objective(mdp, r.z, cum, eta, alpha);
      worst = std::max(worst, std::abs(primal - dual));
    }
  }
  return {worst <= 1e-4, "max |primal - dual| = " + num(worst) + " (limit 1e-4), max grad_norm " + num(worst_grad)};
}

Outcome covariance_matching() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(101);
  double worst = 0.0;
  for (const auto& [eta, alpha, scale] : solver_settings(mdp)) {
    for (int draw = 0; draw < 3; ++draw) {
      const CumulativeRewards cum = oracle::random_cum(mdp, scale, rng);
      const SolveReport r = minimize(mdp, cum, solver(eta, alpha));
      const OccupancyMeasure mu = extract_mu(mdp, r.z, cum, eta, value_table(mdp, r.z, alpha));
      // u from path enumeration of pi_Z rather than the library's forward pass.
      const Policy pi = extract_policy(mdp, r.z, alpha);
      const auto paths = oracle::trajectories(mdp, oracle::table(pi));
      for (int h = 0; h < 3; ++h) {
        const Eigen::MatrixXd diff = covariance(mdp, mu, h) - oracle::covariance(mdp, paths, h);
        worst = std::max(worst, diff.norm());
      }
    }
  }
  return {worst <= 1e-3, "max_h |Phi^T (diag mu - diag u) Phi|_F = " + num(worst) + " (limit 1e-3)"};
}

Outcome gradient_correctness() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(103);
  double worst = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    const double eta = 0.1 + 0.9 * uniform01(rng);
    const double alpha = 0.1 + 0.9 * uniform01(rng);
    const CumulativeRewards cum = oracle::random_cum(mdp, 1.0, rng);
    const DualParams z = oracle::random_z(mdp, 1.0, rng);
    const DualParams fd = oracle::fd_gradient(
        [&](const DualParams& p) { return oracle::objective(mdp, p, cum, eta, alpha); }, z, 1e-5);
    worst = std::max(worst, oracle::rel_error(gradient(mdp, z, cum, eta, alpha), fd));
  }
  return {worst <= 1e-5, "max relative error " + num(worst) + " over 20 draws (limit 1e-5)"};
}

Outcome neumann_identity() {
  const LinearMdp mdp = two_branch();
  Rng rng(104);
  const double beta = 1.0 / (2.0 * mdp.sigma() * mdp.sigma());
  double worst = 0.0;
  for (double gamma : {0.0, 0.3, 1.0}) {
    const Policy learner = oracle::random_policy(mdp, rng);
    const auto paths = oracle::mixture_paths(mdp, learner, gamma);
    const Eigen::MatrixXd sigma = mixture_covariance(mdp, paths, 0);
    for (int M : {0, 3, 10}) {
      const auto enumerated = oracle::expected_sigma_plus(mdp, paths, beta, M);
      const Eigen::MatrixXd closed = expected_sigma_plus(sigma, {beta, M});
      worst = std::max(worst, (enumerated[0] - closed).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-10, "max entry error " + num(worst) + " for M in {0, 3, 10} (limit 1e-10)"};
}

Outcome bias_bound_check() {
  const LinearMdp base = oracle::tiny();
  const double lambda = min_eig_uniform(base).lambda_min_on_span;
  const double beta = 1.0 / (2.0 * base.sigma() * base.sigma());
  Rng srng = make_stream(2, "schedule");
  const RewardSchedule sched = build_schedule(base, ScheduleKind::Switching, 500, srng);
  const double R = std::max(1.0, sched.R_effective);
  Rng rng(105);
  bool ok = true;
  bool monotone = true;
  double worst_ratio = 0.0;
  for (double gamma : {0.1, 0.5}) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto paths = oracle::mixture_paths(base, oracle::random_policy(base, rng), gamma);
      for (int h = 0; h < 3; ++h) {
        const Eigen::VectorXd& theta = sched.thetas[trial * 100][h];
        const Eigen::MatrixXd sigma = mixture_covariance(base, paths, h);
        const Eigen::MatrixXd proj = span_projector(base, h);
        double last = std::numeric_limits<double>::infinity();
        for (int M : {0, 10, 40}) {
          const Eigen::VectorXd expect = expected_sigma_plus(sigma, {beta, M}) * mean_phi_r(base, paths, h, theta);
          const Eigen::VectorXd bias = expect - theta;
          // Rewards are <phi, theta>, so only the span component of the bias is observable.
          const double reward_bias = (base.features(h) * bias).cwiseAbs().maxCoeff();
          const double span_bias = (proj * bias).norm();
          const double bound = bias_bound(base.sigma(), R, gamma, beta, lambda, M);
          ok = ok && reward_bias <= bound && span_bias <= bound;
          monotone = monotone && reward_bias <= last + 1e-12;
          last = reward_bias;
          worst_ratio = std::max(worst_ratio, std::max(reward_bias, span_bias) / bound);
        }
      }
    }
  }
  return {ok && monotone, "max bias / bound = " + num(worst_ratio) + ", non-increasing in M: " +
                              (monotone ? "yes" : "no") + " (lambda_min on span " + num(lambda) + ")"};
}

Outcome exact_inverse_unbiased() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(106);
  double worst = 0.0;
  for (double gamma : {0.1, 0.5}) {
    const auto paths = oracle::mixture_paths(mdp, oracle::random_policy(mdp, rng), gamma);
    for (int h = 0; h < 3; ++h) {
      const Eigen::MatrixXd sigma = mixture_covariance(mdp, paths, h);
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
      cod.setThreshold(1e-10);
      const Eigen::MatrixXd inv = cod.compute(sigma).pseudoInverse();
      const Eigen::MatrixXd proj = span_projector(mdp, h);
      for (int trial = 0; trial < 5; ++trial) {
        // theta on the feature span, where the covariance is invertible.
        const Eigen::VectorXd theta = proj * Eigen::VectorXd::Random(4);
        const Eigen::VectorXd expect = inv * mean_phi_r(mdp, paths, h, theta);
        worst = std::max(worst, (expect - theta).norm());
      }
    }
  }
  return {worst <= 1e-10, "max |E[theta~] - theta| = " + num(worst) + " (limit 1e-10)"};
}

Outcome estimate_boundedness() {
  ExperimentConfig cfg = regret_config(2000);
  const Setup setup = build_setup(cfg);
  const ReplicaResult r = run_replica(cfg, setup, 0);
  if (!r.ok) return {false, "run failed: " + r.error};
  const double limit = (setup.params.M + 1) / 2.0 + 1e-9;
  const bool ok = r.max_abs_estimate <= limit && r.max_eta_abs_estimate < 1.0;
  return {ok, "max |r_hat| = " + num(r.max_abs_estimate) + " (limit " + num(limit) + "), eta max |r_hat| = " +
                  num(r.max_eta_abs_estimate) + ", M = " + std::to_string(setup.params.M)};
}

Outcome fast_equals_naive() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(108);
  const double beta = 1.0 / (2.0 * mdp.sigma() * mdp.sigma());
  double worst = 0.0;
  for (int ep = 0; ep < 50; ++ep) {
    const Policy learner = oracle::random_policy(mdp, rng);
    const int M = static_cast<int>(uniform01(rng) * 200);
    const std::uint64_t stream = rng();
    std::vector<Eigen::VectorXd> targets;
    for (int h = 0; h < 3; ++h) {
      const int pair = static_cast<int>(uniform01(rng) * mdp.num_pairs(h));
      targets.push_back(mdp.features(h).row(pair).transpose());
    }
    MixedPolicySampler a(mdp, learner, 0.3, Rng(stream));
    MixedPolicySampler b(mdp, learner, 0.3, Rng(stream));
    const CovInverseEstimate naive = mgr_naive(mdp, a, {beta, M});
    const auto fast = mgr_fast(mdp, b, {beta, M}, targets);
    for (int h = 0; h < 3; ++h) worst = std::max(worst, (fast[h] - naive.sigma_plus[h] * targets[h]).norm());
  }
  return {worst <= 1e-10, "max per-layer |q - Sigma_plus phi| = " + num(worst) + " over 50 episodes (limit 1e-10)"};
}

Outcome error_propagation() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(109);
  const double eta = 0.5;
  double worst_slack = std::numeric_limits<double>::infinity();
  std::string where;
  for (double alpha : {0.5, 1.0}) {
    const CumulativeRewards cum = oracle::random_cum(mdp, 2.0, rng);
    const SolveReport opt = minimize(mdp, cum, solver(eta, alpha));
    const auto u_star = oracle::occupancy(mdp, oracle::trajectories(mdp, oracle::table(extract_policy(mdp, opt.z, alpha))));
    for (double eps : {1e-2, 1e-4}) {
      // Z_eps: the point on the segment from 0 to Z* where the certified gap first reaches eps.
      auto scaled = [&](double lam) {
        DualParams z = opt.z;
        for (auto& b : z.blocks) b *= lam;
        return z;
      };
      double lo = 0.0;
      double hi = 1.0;
      if (duality_gap(mdp, scaled(0.0), cum, eta, alpha).gap <= eps) hi = 0.0;
      for (int it = 0; it < 50 && hi > 0.0; ++it) {
        const double mid = 0.5 * (lo + hi);
        (duality_gap(mdp, scaled(mid), cum, eta, alpha).gap <= eps ? hi : lo) = mid;
      }
      const DualParams z_eps = scaled(hi);
      const double certified = duality_gap(mdp, z_eps, cum, eta, alpha).gap;
      if (certified > eps) return {false, "could not certify eps = " + num(eps)};
      const auto u_eps =
          oracle::occupancy(mdp, oracle::trajectories(mdp, oracle::table(extract_policy(mdp, z_eps, alpha))));
      const double limit = std::sqrt(2.0 * alpha * eps) + 1e-6;
      for (int h = 0; h < 3; ++h) {
        const double l1 = (u_star[h] - u_eps[h]).lpNorm<1>();
        if (limit - l1 < worst_slack) {
          worst_slack = limit - l1;
          where = "|u_h - u*_h|_1 = " + num(l1) + " vs " + num(limit) + " at eps " + num(eps) + ", alpha " +
                  num(alpha) + ", layer " + std::to_string(h);
        }
      }
    }
  }
  return {worst_slack >= 0.0, "tightest: " + where};
}

Outcome empirical_concentration() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(110);
  const double delta = 0.05;
  const double eta = 1.0;
  const double alpha = 1.0;
  std::vector<DualParams> zs;
  std::vector<CumulativeRewards> cums;
  std::vector<double> exact;
  for (int i = 0; i < 5; ++i) {
    zs.push_back(oracle::random_z(mdp, 0.5, rng));
    cums.push_back(oracle::random_cum(mdp, 1.0, rng));
    exact.push_back(objective(mdp, zs.back(), cums.back(), eta, alpha));
  }
  std::ostringstream detail;
  bool ok = true;
  for (int n : {100, 10000}) {
    const double bound = 56.0 * std::sqrt(std::log(1.0 / delta) / n);
    std::vector<int> within(5, 0);
    double worst_dev = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      const LayerSamples s = sample_reference_pairs(mdp, n, rng);
      for (int i = 0; i < 5; ++i) {
        const double dev = std::abs(empirical_objective(mdp, s, zs[i], cums[i], eta, alpha) - exact[i]);
        worst_dev = std::max(worst_dev, dev);
        if (dev <= bound) ++within[i];
      }
    }
    const int min_within = *std::min_element(within.begin(), within.end());
    ok = ok && min_within >= 95;
    if (!detail.str().empty()) detail << "; ";
    detail << "N=" << n << ": min coverage " << min_within << "/100, max deviation " << num(worst_dev)
           << " vs bound " << num(bound);
  }
  return {ok, detail.str()};
}

Outcome sublinear_regret() {
  const ExperimentConfig short_cfg = regret_config(500);
  const Setup short_setup = build_setup(short_cfg);
  const ReplicaResult short_run = run_replica(short_cfg, short_setup, 0);
  const ExperimentConfig long_cfg = regret_config(5000);
  const Setup long_setup = build_setup(long_cfg);
  const ReplicaResult long_run = run_replica(long_cfg, long_setup, 0);
  if (!short_run.ok || !long_run.ok) return {false, "run failed: " + short_run.error + long_run.error};
  const double r500 = short_run.ledger.regret_total();
  const double r5000 = long_run.ledger.regret_total();
  const double per500 = r500 / 500.0;
  const double per5000 = r5000 / 5000.0;
  const double d = long_setup.mdp.dim();
  const double H = long_setup.mdp.horizon();
  const double smoke = 20.0 * std::sqrt(d * H * 5000.0);
  const bool halved = per5000 <= 0.5 * per500;
  const bool bounded = r5000 <= smoke;
  std::ostringstream s;
  s << "R_500/500 = " << num(per500) << ", R_5000/5000 = " << num(per5000) << " (halving "
    << (halved ? "met" : "not met") << "); R_5000 = " << num(r5000) << " vs 20 sqrt(dHT) = " << num(smoke)
    << " (" << (bounded ? "met" : "not met") << "); prefix R_500/500 within the T=5000 run = "
    << num(long_run.ledger.rows[499].regret / 500.0);
  return {halved && bounded, s.str()};
}

Outcome zero_reward_fixed_point() {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(112);
  const double eta = default_params(mdp, 500).params.eta;
  double worst = 0.0;
  for (const auto& [e, a] : std::vector<std::pair<double, double>>{{eta, eta}, {0.5, 0.5}, {1.0, 0.2}}) {
    for (int start = 0; start < 3; ++start) {
      // Start away from the optimum so the solver has to travel back.
      const DualParams warm = oracle::random_z(mdp, 0.5 / a, rng);
      const SolveReport r = minimize(mdp, CumulativeRewards::zeros(mdp), solver(e, a), &warm);
      const Policy p = extract_policy(mdp, r.z, a);
      for (const auto& layer : p.probs) {
        for (int x = 0; x < layer.rows(); ++x) {
          worst = std::max(worst, 0.5 * (layer.row(x).array() - 0.5).abs().sum());
        }
      }
    }
  }
  return {worst <= 1e-6, "max per-state total variation to pi_0 = " + num(worst) + " (limit 1e-6)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "oqreps-acceptance-determinism";
  fs::remove_all(root);
  ExperimentConfig cfg = regret_config(200);
  cfg.replicas = 2;
  cfg.output_dir = (root / "run").string();
  // Both runs write to the same path so that config.json is comparable too.
  run(cfg);
  fs::rename(root / "run", root / "first");
  run(cfg);
  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "first")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "first");
    const fs::path other = root / "run" / rel;
    ++files;
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) return {false, "differs: " + rel.string()};
  }
  int second = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "run")) second += entry.is_regular_file();
  fs::remove_all(root);
  if (second != files) return {false, "file counts differ"};
  return {files >= 10, std::to_string(files) + " files byte-identical across two runs"};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::function<Outcome()> check;
    double time_limit;  // seconds; 0 means none
  };
  const std::vector<Criterion> criteria = {
      {"dual/primal consistency", dual_primal_consistency, 10.0},
      {"covariance matching", covariance_matching, 0.0},
      {"gradient correctness", gradient_correctness, 30.0},
      {"MGR Neumann identity", neumann_identity, 0.0},
      {"bias bound", bias_bound_check, 0.0},
      {"unbiased with exact inverse", exact_inverse_unbiased, 0.0},
      {"estimate boundedness", estimate_boundedness, 0.0},
      {"fast MGR equals naive", fast_equals_naive, 0.0},
      {"error propagation", error_propagation, 0.0},
      {"empirical-loss concentration", empirical_concentration, 60.0},
      {"sublinear regret", sublinear_regret, 600.0},
      {"zero-reward fixed point", zero_reward_fixed_point, 0.0},
      {"determinism", determinism, 0.0},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criteria[i].time_limit > 0.0 && secs > criteria[i].time_limit) {
      o.passed = false;
      o.detail += "; over the " + num(criteria[i].time_limit) + " s time limit";
    }
    if (!o.passed) ++failed;
    std::printf("%s %2zu %s: %s [%.1f s]\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
