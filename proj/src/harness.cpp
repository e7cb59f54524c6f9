#include "oqreps/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "oqreps/instance_io.hpp"

namespace oqreps {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

SolverMethod parse_method(const std::string& s) {
  if (s == "newton") return SolverMethod::Newton;
  if (s == "gd") return SolverMethod::GradientDescent;
  throw std::invalid_argument("unknown solver method: " + s);
}

SolverMode parse_mode(const std::string& s) {
  if (s == "exact") return SolverMode::Exact;
  if (s == "sampled") return SolverMode::Sampled;
  throw std::invalid_argument("unknown solver mode: " + s);
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["instance"] = {{"generator", c.instance.generator}, {"layers", c.instance.layers},
                   {"K", c.instance.K},                 {"d", c.instance.d},
                   {"seed", c.instance.seed},           {"path", c.instance.path}};
  j["schedule"] = {
      {"kind", c.schedule.kind}, {"seed", c.schedule.seed}, {"amplitude", c.schedule.amplitude}};
  j["T"] = c.T;
  j["seed"] = c.seed;
  j["replicas"] = c.replicas;
  j["output_dir"] = c.output_dir;
  j["record_wall_time"] = c.record_wall_time;
  const auto& a = c.agent;
  j["agent"] = {{"preset", a.preset},
                {"eta", opt_json(a.eta)},
                {"alpha", opt_json(a.alpha)},
                {"gamma", opt_json(a.gamma)},
                {"beta", opt_json(a.beta)},
                {"M", opt_json(a.M)},
                {"epsilon_target", a.epsilon_target},
                {"method", a.method},
                {"mode", a.mode},
                {"num_samples", a.num_samples},
                {"step_size", a.step_size},
                {"grad_tol", a.grad_tol},
                {"max_iters", a.max_iters},
                {"certify", a.certify}};
  j["audit"] = {{"episodes", c.audit.episodes}, {"seed", c.audit.seed}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("instance")) {
    const json& i = j.at("instance");
    read(i, "generator", c.instance.generator);
    read(i, "layers", c.instance.layers);
    read(i, "K", c.instance.K);
    read(i, "d", c.instance.d);
    read(i, "seed", c.instance.seed);
    read(i, "path", c.instance.path);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    read(s, "kind", c.schedule.kind);
    read(s, "seed", c.schedule.seed);
    read(s, "amplitude", c.schedule.amplitude);
  }
  read(j, "T", c.T);
  read(j, "seed", c.seed);
  read(j, "replicas", c.replicas);
  read(j, "output_dir", c.output_dir);
  read(j, "record_wall_time", c.record_wall_time);
  if (j.contains("agent")) {
    const json& a = j.at("agent");
    read(a, "preset", c.agent.preset);
    read_opt(a, "eta", c.agent.eta);
    read_opt(a, "alpha", c.agent.alpha);
    read_opt(a, "gamma", c.agent.gamma);
    read_opt(a, "beta", c.agent.beta);
    read_opt(a, "M", c.agent.M);
    read(a, "epsilon_target", c.agent.epsilon_target);
    read(a, "method", c.agent.method);
    read(a, "mode", c.agent.mode);
    read(a, "num_samples", c.agent.num_samples);
    read(a, "step_size", c.agent.step_size);
    read(a, "grad_tol", c.agent.grad_tol);
    read(a, "max_iters", c.agent.max_iters);
    read(a, "certify", c.agent.certify);
  }
  if (j.contains("audit")) {
    read(j.at("audit"), "episodes", c.audit.episodes);
    read(j.at("audit"), "seed", c.audit.seed);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return config_from_json(json::parse(in));
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw std::invalid_argument("empty key segment in override: " + assignment);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

Setup build_setup(const ExperimentConfig& cfg) {
  if (cfg.T < 1) throw std::invalid_argument("T must be positive");
  if (cfg.replicas < 1) throw std::invalid_argument("replicas must be positive");
  auto make_mdp = [&]() {
    Rng rng = make_stream(cfg.instance.seed, "instance");
    if (cfg.instance.generator == "simplex") {
      return gen_simplex(cfg.instance.layers, cfg.instance.K, cfg.instance.d, rng);
    }
    if (cfg.instance.generator == "tabular") return gen_tabular(cfg.instance.layers, cfg.instance.K, rng);
    if (cfg.instance.generator == "file") return load_instance(cfg.instance.path);
    throw std::invalid_argument("unknown instance generator: " + cfg.instance.generator);
  };
  LinearMdp mdp = make_mdp();
  const auto violations = validate(mdp);
  if (!violations.empty()) {
    throw std::invalid_argument("instance fails validation: " + describe(violations.front()));
  }
  Rng srng = make_stream(cfg.schedule.seed, "schedule");
  RewardSchedule schedule =
      build_schedule(mdp, parse_schedule_kind(cfg.schedule.kind), cfg.T, srng, cfg.schedule.amplitude);
  mdp.set_reward_bound(std::max(mdp.reward_bound(), schedule.R_effective));

  Setup setup{std::move(mdp), std::move(schedule), AgentParams{}, MinEigReport{}, 0.0, false, ""};
  setup.eig = min_eig_uniform(setup.mdp);
  const auto& a = cfg.agent;
  AgentParams& p = setup.params;
  if (a.preset == "theorem-defaults") {
    const DefaultParamsReport rep = default_params(setup.mdp, cfg.T);
    p = rep.params;
    setup.note = rep.note;
  } else if (a.preset != "manual") {
    throw std::invalid_argument("unknown agent preset: " + a.preset);
  }
  p.T = cfg.T;
  if (a.eta) p.eta = *a.eta;
  if (a.alpha) p.alpha = *a.alpha;
  if (a.gamma) p.gamma = *a.gamma;
  if (a.beta) p.beta = *a.beta;
  if (a.M) p.M = *a.M;
  p.epsilon_target = a.epsilon_target;
  p.method = parse_method(a.method);
  p.mode = parse_mode(a.mode);
  p.num_samples = a.num_samples;
  p.step_size = a.step_size;
  p.grad_tol = a.grad_tol;
  p.max_iters = a.max_iters;
  p.certify = a.certify;
  check_params(setup.mdp, p);
  setup.eta_cap = 2.0 / ((p.M + 2.0) * setup.mdp.horizon());
  setup.below_threshold = p.eta > setup.eta_cap;
  return setup;
}

bool RunResult::ok() const {
  return std::all_of(replicas.begin(), replicas.end(), [](const ReplicaResult& r) { return r.ok; });
}

ReplicaResult run_replica(const ExperimentConfig& cfg, const Setup& setup, int replica,
                          std::ostream* episodes_jsonl) {
  const LinearMdp& mdp = setup.mdp;
  const RewardSchedule& sched = setup.schedule;
  const int T = cfg.T;
  ReplicaResult res;
  res.replica = replica;

  const HindsightResult best = best_in_hindsight(mdp, summed_rewards(sched, mdp, 0, T));
  const OccupancyMeasure best_occ = occupancy_of_policy(mdp, best.policy);
  res.ledger.comparator_total = best.value;

  const std::uint64_t seed = derive_seed(cfg.seed, "replica/" + std::to_string(replica));
  try {
    OnlineQReps agent(mdp, setup.params, seed);
    std::vector<Eigen::VectorXd> prefix_sum(mdp.num_decision_layers(),
                                            Eigen::VectorXd::Zero(0));
    for (int h = 0; h < mdp.num_decision_layers(); ++h) {
      prefix_sum[h] = Eigen::VectorXd::Zero(mdp.num_pairs(h));
    }
    double cumulative = 0.0;
    double comparator = 0.0;
    double gap_sum = 0.0;
    const auto start = std::chrono::steady_clock::now();
    for (int t = 0; t < T; ++t) {
      const std::vector<Eigen::VectorXd> table = reward_tables(sched, mdp, t);
      BanditFeedback feedback(
          [&sched, &mdp, t](int h, int x, int a) { return reward_at(sched, mdp, t, h, x, a); });
      const EpisodeResult ep = agent.run_episode(feedback, &table);
      for (int h = 0; h < mdp.num_decision_layers(); ++h) prefix_sum[h] += table[h];

      LedgerRow row;
      row.t = t + 1;
      row.expected_reward = ep.expected_reward;
      cumulative += ep.expected_reward;
      comparator += expected_reward(best_occ, table);
      row.cumulative_reward = cumulative;
      row.comparator = comparator;
      row.regret = comparator - cumulative;
      row.prefix_best = best_in_hindsight(mdp, prefix_sum).value;
      row.realized_reward = ep.realized_reward;
      row.gap_bound = ep.solve.gap_bound;
      if (cfg.record_wall_time) {
        row.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
      res.ledger.rows.push_back(row);
      res.max_abs_estimate = std::max(res.max_abs_estimate, ep.estimator.max_abs_estimate);
      res.max_eta_abs_estimate = std::max(res.max_eta_abs_estimate, ep.estimator.eta_max_abs_estimate);
      res.max_gap = std::max(res.max_gap, ep.solve.gap_bound);
      gap_sum += ep.solve.gap_bound;

      if (episodes_jsonl != nullptr) {
        json rec;
        rec["t"] = row.t;
        rec["explored"] = ep.explored;
        std::vector<int> states;
        std::vector<int> actions;
        for (const auto& s : ep.trajectory.steps) {
          states.push_back(s.state.index);
          actions.push_back(s.action);
        }
        states.push_back(ep.trajectory.terminal.index);
        rec["states"] = states;
        rec["actions"] = actions;
        rec["realized_reward"] = ep.realized_reward;
        rec["expected_reward"] = ep.expected_reward;
        rec["regret"] = row.regret;
        rec["diagnostic_prefix_regret"] = row.prefix_best - cumulative;
        rec["solve"] = {{"objective", ep.solve.objective},
                        {"grad_norm", ep.solve.grad_norm},
                        {"gap_bound", ep.solve.gap_bound},
                        {"iters", ep.solve.iters},
                        {"converged", ep.solve.converged}};
        rec["mgr"] = {{"M", ep.estimator.M},
                      {"paths", ep.estimator.paths},
                      {"max_abs_estimate", ep.estimator.max_abs_estimate},
                      {"eta_max_abs_estimate", ep.estimator.eta_max_abs_estimate},
                      {"sigma_plus_norm_bound", setup.params.beta * (setup.params.M + 1)}};
        if (cfg.record_wall_time) rec["wall_time"] = row.wall_time;
        *episodes_jsonl << rec.dump() << '\n';
      }
    }
    res.mean_gap = T > 0 ? gap_sum / T : 0.0;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
    if (episodes_jsonl != nullptr) {
      *episodes_jsonl << json{{"error", e.what()}, {"episodes_completed", res.ledger.rows.size()}}.dump()
                      << '\n';
    }
  }
  return res;
}

void write_regret_csv(const RegretLedger& ledger, std::ostream& out) {
  out << "t,R_t,R_t_over_sqrt_t,eps_t\n";
  for (const auto& r : ledger.rows) {
    out << r.t << ',' << fmt(r.regret) << ',' << fmt(r.regret / std::sqrt(r.t)) << ','
        << fmt(r.gap_bound) << '\n';
  }
}

void emit_plotdata(const RegretLedger& ledger, int d, int H, std::ostream& out) {
  out << "t,R_t,R_t_over_sqrt_dHt,cumulative_eps\n";
  double eps = 0.0;
  for (const auto& r : ledger.rows) {
    eps += r.gap_bound;
    out << r.t << ',' << fmt(r.regret) << ',' << fmt(r.regret / std::sqrt(double(d) * H * r.t)) << ','
        << fmt(eps) << '\n';
  }
}

RegretLedger read_regret_csv(std::istream& in) {
  RegretLedger ledger;
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,R_t", 0) != 0) {
    throw std::runtime_error("not a regret.csv file");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4) throw std::runtime_error("malformed regret.csv row: " + line);
    LedgerRow r;
    r.t = std::stoi(cells[0]);
    r.regret = std::stod(cells[1]);
    r.gap_bound = std::stod(cells[3]);
    ledger.rows.push_back(r);
  }
  return ledger;
}

namespace {

json params_json(const Setup& s) {
  const AgentParams& p = s.params;
  return {{"beta", p.beta},
          {"M", p.M},
          {"eta", p.eta},
          {"alpha", p.alpha},
          {"gamma", p.gamma},
          {"lambda_min", s.eig.lambda_min},
          {"lambda_min_on_span", s.eig.lambda_min_on_span},
          {"rank_deficient", s.eig.rank_deficient},
          {"sigma", s.mdp.sigma()},
          {"R", s.mdp.reward_bound()},
          {"d", s.mdp.dim()},
          {"H", s.mdp.horizon()},
          {"K", s.mdp.num_actions()},
          {"eta_cap", s.eta_cap},
          {"below_threshold", s.below_threshold},
          {"note", s.note}};
}

json replica_json(const ReplicaResult& r) {
  json j;
  j["replica"] = r.replica;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  j["episodes"] = r.ledger.rows.size();
  j["comparator_total"] = r.ledger.comparator_total;
  j["regret_total"] = r.ledger.regret_total();
  if (!r.ledger.rows.empty()) {
    j["cumulative_reward"] = r.ledger.rows.back().cumulative_reward;
    j["R_T_over_T"] = r.ledger.regret_total() / r.ledger.rows.size();
  }
  j["max_abs_estimate"] = r.max_abs_estimate;
  j["max_eta_abs_estimate"] = r.max_eta_abs_estimate;
  j["max_gap"] = r.max_gap;
  j["mean_gap"] = r.mean_gap;
  return j;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

}  // namespace

RunResult run(const ExperimentConfig& cfg) {
  const Setup setup = build_setup(cfg);
  RunResult result;
  const bool write = !cfg.output_dir.empty();
  const fs::path root(cfg.output_dir);
  if (write) {
    fs::create_directories(root);
    write_text(root / "config.json", config_to_json(cfg).dump(2) + "\n");
    write_text(root / "instance.json", instance_to_json(setup.mdp).dump() + "\n");
    write_text(root / "schedule.json", schedule_to_json(setup.schedule).dump() + "\n");
  }
  json summary;
  summary["parameters"] = params_json(setup);
  summary["T"] = cfg.T;
  summary["replicas"] = json::array();
  for (int r = 0; r < cfg.replicas; ++r) {
    ReplicaResult rep;
    if (write) {
      const fs::path dir = root / ("replica-" + std::to_string(r));
      fs::create_directories(dir);
      std::ofstream episodes(dir / "episodes.jsonl", std::ios::binary);
      rep = run_replica(cfg, setup, r, &episodes);
      std::ofstream csv(dir / "regret.csv", std::ios::binary);
      write_regret_csv(rep.ledger, csv);
      json rs = replica_json(rep);
      rs["parameters"] = params_json(setup);
      write_text(dir / "summary.json", rs.dump(2) + "\n");
    } else {
      rep = run_replica(cfg, setup, r, nullptr);
    }
    summary["replicas"].push_back(replica_json(rep));
    result.replicas.push_back(std::move(rep));
  }
  summary["ok"] = result.ok();
  if (write) write_text(root / "summary.json", summary.dump(2) + "\n");
  return result;
}

bool AuditReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const AuditCheck& c) { return c.passed; });
}

json audit_to_json(const AuditReport& report) {
  json j;
  j["passed"] = report.passed();
  j["checks"] = json::array();
  for (const auto& c : report.checks) {
    j["checks"].push_back({{"name", c.name},
                           {"passed", c.passed},
                           {"measured", c.measured},
                           {"limit", c.limit},
                           {"slack", c.slack},
                           {"detail", c.detail}});
  }
  return j;
}

namespace {

AuditCheck at_most(std::string name, double measured, double limit, std::string detail = "") {
  AuditCheck c;
  c.name = std::move(name);
  c.measured = measured;
  c.limit = limit;
  c.slack = limit - measured;
  c.passed = measured <= limit;
  c.detail = std::move(detail);
  return c;
}

CumulativeRewards random_cum(const LinearMdp& mdp, double scale, Rng& rng) {
  CumulativeRewards cum = CumulativeRewards::zeros(mdp);
  for (auto& v : cum.theta_sums) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * (2.0 * uniform01(rng) - 1.0);
  }
  return cum;
}

DualParams random_z(const LinearMdp& mdp, double scale, Rng& rng) {
  DualParams z = DualParams::zeros(mdp);
  for (auto& b : z.blocks) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  }
  return z;
}

double policy_l1(const LinearMdp& mdp, const OccupancyMeasure& a, const OccupancyMeasure& b, int h) {
  (void)mdp;
  return (a.dist[h] - b.dist[h]).lpNorm<1>();
}

// Exact E[Sigma_plus] over all M-tuples of paths from `paths`, per layer.
std::vector<Eigen::MatrixXd> enumerate_sigma_plus(const LinearMdp& mdp,
                                                  const std::vector<WeightedPath>& paths,
                                                  const MgrConfig& cfg) {
  const int layers = mdp.num_decision_layers();
  const int d = mdp.dim();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  std::vector<Eigen::MatrixXd> out(layers, cfg.beta * eye);
  std::vector<Eigen::MatrixXd> c(layers, eye);
  std::function<void(int, double)> rec = [&](int depth, double prob) {
    if (depth == cfg.M) return;
    for (const auto& p : paths) {
      std::vector<Eigen::MatrixXd> saved = c;
      const double w = prob * p.prob;
      for (int h = 0; h < layers; ++h) {
        const Eigen::VectorXd f = mdp.features(h).row(p.pairs[h]).transpose();
        c[h] = (eye - cfg.beta * f * f.transpose()) * c[h];
        out[h] += w * cfg.beta * c[h];
      }
      rec(depth + 1, w);
      c = std::move(saved);
    }
  };
  rec(0, 1.0);
  return out;
}

}  // namespace

AuditReport audit(const ExperimentConfig& cfg) {
  const Setup setup = build_setup(cfg);
  const LinearMdp& mdp = setup.mdp;
  const AgentParams& p = setup.params;
  const int layers = mdp.num_decision_layers();
  const double eta = p.eta;
  const double alpha = p.alpha;
  const double scale = std::max(eta, alpha);
  AuditReport report;
  Rng rng = make_stream(cfg.audit.seed, "audit");

  {
    double worst = 0.0;
    const double step = 1e-5 / scale;
    for (int draw = 0; draw < 5; ++draw) {
      const CumulativeRewards cum = random_cum(mdp, 1.0 / eta, rng);
      const DualParams z = random_z(mdp, 0.5 / alpha, rng);
      const DualParams g = gradient(mdp, z, cum, eta, alpha);
      double num = 0.0;
      double den = 0.0;
      for (int h = 0; h < layers; ++h) {
        for (Eigen::Index i = 0; i < z.blocks[h].size(); ++i) {
          DualParams zp = z;
          DualParams zm = z;
          zp.blocks[h].data()[i] += step;
          zm.blocks[h].data()[i] -= step;
          const double fd =
              (objective(mdp, zp, cum, eta, alpha) - objective(mdp, zm, cum, eta, alpha)) / (2 * step);
          num += std::pow(fd - g.blocks[h].data()[i], 2);
          den += fd * fd;
        }
      }
      worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
    }
    report.checks.push_back(at_most("gradient_fd", worst, 1e-5, "relative error, 5 random (Z, cum)"));
  }

  const CumulativeRewards cum = random_cum(mdp, 0.5 / eta, rng);
  SolverConfig scfg;
  scfg.eta = eta;
  scfg.alpha = alpha;
  scfg.grad_tol = p.grad_tol;
  scfg.max_iters = std::max(p.max_iters, 200);
  const SolveReport opt = minimize(mdp, cum, scfg);
  const Policy pi_opt = extract_policy(mdp, opt.z, alpha);
  {
    const ValueTable vt = value_table(mdp, opt.z, alpha);
    const OccupancyMeasure mu = extract_mu(mdp, opt.z, cum, eta, vt);
    const OccupancyMeasure u = occupancy_of_policy(mdp, pi_opt);
    const double diff = std::abs(opt.objective - primal_value(mdp, mu, u, cum, eta, alpha).value);
    std::ostringstream detail;
    detail << "grad_norm " << opt.grad_norm << ", certified gap " << opt.gap_bound;
    report.checks.push_back(at_most("duality_gap", diff, 1e-4, detail.str()));
  }

  const OccupancyMeasure mu0 = uniform_occupancy(mdp);
  const OccupancyMeasure executed = mix(occupancy_of_policy(mdp, pi_opt), mu0, p.gamma);
  {
    std::vector<WeightedPath> paths;
    for (auto wp : enumerate_paths(mdp, pi_opt)) {
      wp.prob *= 1.0 - p.gamma;
      paths.push_back(std::move(wp));
    }
    for (auto wp : enumerate_paths(mdp, uniform_policy(mdp))) {
      wp.prob *= p.gamma;
      paths.push_back(std::move(wp));
    }
    double worst = 0.0;
    int checked_m = 0;
    for (int m = 0; m <= 3; ++m) {
      if (m > 0 && std::pow(static_cast<double>(paths.size()), m) > 2e5) break;
      const MgrConfig mc{p.beta, m};
      const auto expect = enumerate_sigma_plus(mdp, paths, mc);
      for (int h = 0; h < layers; ++h) {
        const Eigen::MatrixXd closed = expected_sigma_plus(covariance(mdp, executed, h), mc);
        worst = std::max(worst, (expect[h] - closed).cwiseAbs().maxCoeff());
      }
      checked_m = m;
    }
    report.checks.push_back(at_most("mgr_expectation", worst, 1e-10,
                                    "M = 0.." + std::to_string(checked_m) + " by path enumeration"));
  }

  {
    double worst_slack = std::numeric_limits<double>::infinity();
    double worst_bias = 0.0;
    double bound = bias_bound(mdp.sigma(), mdp.reward_bound(), p.gamma, p.beta,
                              setup.eig.lambda_min_on_span, p.M);
    for (int h = 0; h < layers; ++h) {
      const EstimatorOracle o =
          exact_estimator_oracle(mdp, executed, setup.schedule.thetas[0][h], h, MgrConfig{p.beta, p.M});
      if (bound + 1e-12 - o.reward_bias < worst_slack) {
        worst_slack = bound + 1e-12 - o.reward_bias;
        worst_bias = o.reward_bias;
      }
    }
    report.checks.push_back(
        at_most("bias_bound", worst_bias, bound + 1e-12, "max_{x,a} |<phi, E[theta_hat] - theta>|"));
  }

  {
    OnlineQReps agent(mdp, p, derive_seed(cfg.seed, "audit-agent"));
    double worst = 0.0;
    bool access_ok = true;
    std::string access_detail = "log equals visited pairs";
    const int episodes = std::min(cfg.audit.episodes, cfg.T);
    for (int t = 0; t < episodes; ++t) {
      BanditFeedback fb([&setup, &mdp, t](int h, int x, int a) {
        return reward_at(setup.schedule, mdp, t, h, x, a);
      });
      const EpisodeResult ep = agent.run_episode(fb);
      worst = std::max(worst, ep.estimator.max_abs_estimate);
      const auto& log = fb.log();
      if (log.size() != ep.trajectory.steps.size()) {
        access_ok = false;
        access_detail = "episode " + std::to_string(t) + ": log size mismatch";
      } else {
        for (std::size_t i = 0; i < log.size(); ++i) {
          const auto& s = ep.trajectory.steps[i];
          if (log[i] != std::make_tuple(s.state.layer, s.state.index, s.action)) {
            access_ok = false;
            access_detail = "episode " + std::to_string(t) + ": unvisited pair read";
          }
        }
      }
    }
    const double limit = (p.M + 1) / 2.0 + 1e-9;
    report.checks.push_back(at_most("estimate_bound", worst, limit,
                                    std::to_string(episodes) + " episodes, eta * max = " +
                                        fmt(eta * worst)));
    report.checks.push_back(at_most("eta_estimate_below_one", eta * worst, 1.0 - 1e-15));
    AuditCheck access;
    access.name = "bandit_feedback_access";
    access.passed = access_ok;
    access.measured = access_ok ? 0.0 : 1.0;
    access.limit = 0.0;
    access.slack = access_ok ? 0.0 : -1.0;
    access.detail = access_detail;
    report.checks.push_back(access);
  }

  {
    const OccupancyMeasure u_opt = occupancy_of_policy(mdp, pi_opt);
    double worst_slack = std::numeric_limits<double>::infinity();
    AuditCheck worst;
    for (double eps : {1e-2, 1e-4}) {
      // Smallest lambda along the segment to Z* whose certified gap is below eps.
      auto gap_at = [&](double lam) {
        DualParams z = opt.z;
        for (auto& b : z.blocks) b *= lam;
        return duality_gap(mdp, z, cum, eta, alpha).gap;
      };
      double lo = 0.0;
      double hi = 1.0;
      if (gap_at(0.0) <= eps) {
        hi = 0.0;
      } else {
        for (int it = 0; it < 50; ++it) {
          const double mid = 0.5 * (lo + hi);
          (gap_at(mid) <= eps ? hi : lo) = mid;
        }
      }
      DualParams z_eps = opt.z;
      for (auto& b : z_eps.blocks) b *= hi;
      const OccupancyMeasure u_eps = occupancy_of_policy(mdp, extract_policy(mdp, z_eps, alpha));
      const double limit = std::sqrt(2.0 * alpha * eps) + 1e-6;
      for (int h = 0; h < layers; ++h) {
        const double l1 = policy_l1(mdp, u_opt, u_eps, h);
        if (limit - l1 < worst_slack) {
          worst_slack = limit - l1;
          worst = at_most("propagation", l1, limit, "eps = " + fmt(eps) + ", layer " + std::to_string(h));
        }
      }
    }
    report.checks.push_back(worst);
  }
  return report;
}

}  // namespace oqreps
