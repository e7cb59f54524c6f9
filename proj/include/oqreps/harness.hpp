#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "oqreps/adversary.hpp"
#include "oqreps/agent.hpp"
#include "oqreps/linear_mdp.hpp"

namespace oqreps {

/// Experiment configuration. JSON schema, with every field optional and the
/// defaults shown:
///
///   {
///     "instance": {"generator": "simplex", "layers": [1, 3, 3, 1], "K": 2, "d": 4,
///                  "seed": 1, "path": ""},
///     "schedule": {"kind": "switching", "seed": 2, "amplitude": 1.0},
///     "T": 500,
///     "seed": 42,
///     "replicas": 1,
///     "output_dir": "oqreps-out",
///     "record_wall_time": false,
///     "agent": {"preset": "theorem-defaults", "eta": null, "alpha": null, "gamma": null,
///               "beta": null, "M": null, "epsilon_target": 1e-6, "method": "newton",
///               "mode": "exact", "num_samples": 1000, "step_size": 0, "grad_tol": 1e-7,
///               "max_iters": 200, "certify": true},
///     "audit": {"episodes": 20, "seed": 7}
///   }
///
/// generator is "simplex", "tabular" or "file" (then `path` names an instance
/// file). preset is "theorem-defaults" or "manual"; in both cases any non-null
/// agent field overrides the preset value.
struct ExperimentConfig {
  struct Instance {
    std::string generator = "simplex";
    std::vector<int> layers{1, 3, 3, 1};
    int K = 2;
    int d = 4;
    std::uint64_t seed = 1;
    std::string path;
  } instance;
  struct Schedule {
    std::string kind = "switching";
    std::uint64_t seed = 2;
    double amplitude = 1.0;
  } schedule;
  int T = 500;
  std::uint64_t seed = 42;
  int replicas = 1;
  std::string output_dir = "oqreps-out";
  bool record_wall_time = false;
  struct Agent {
    std::string preset = "theorem-defaults";
    std::optional<double> eta, alpha, gamma, beta;
    std::optional<int> M;
    double epsilon_target = 1e-6;
    std::string method = "newton";
    std::string mode = "exact";
    int num_samples = 1000;
    double step_size = 0.0;
    double grad_tol = 1e-7;
    int max_iters = 200;
    bool certify = true;
  } agent;
  struct Audit {
    int episodes = 20;
    std::uint64_t seed = 7;
  } audit;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Applies "a.b.c=value" to a config JSON. The value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// The instance, schedule and resolved agent parameters a config describes.
/// The instance's reward bound R is raised to the schedule's realized maximum
/// norm if that is larger.
struct Setup {
  LinearMdp mdp;
  RewardSchedule schedule;
  AgentParams params;
  MinEigReport eig;
  double eta_cap = 0.0;
  bool below_threshold = false;
  std::string note;
};

Setup build_setup(const ExperimentConfig& cfg);

struct LedgerRow {
  int t = 0;                     // 1-based episode count
  double expected_reward = 0.0;  // sum_h <executed mixture, r_{t,h}>
  double cumulative_reward = 0.0;
  double comparator = 0.0;         // full-horizon best policy on episodes 1..t
  double regret = 0.0;             // comparator - cumulative_reward
  double prefix_best = 0.0;        // diagnostic: best policy for episodes 1..t alone
  double realized_reward = 0.0;
  double gap_bound = 0.0;
  double wall_time = 0.0;          // seconds, 0 unless recorded
};

struct RegretLedger {
  std::vector<LedgerRow> rows;
  double comparator_total = 0.0;
  double regret_total() const { return rows.empty() ? 0.0 : rows.back().regret; }
};

struct ReplicaResult {
  int replica = 0;
  bool ok = true;
  std::string error;
  RegretLedger ledger;
  double max_abs_estimate = 0.0;
  double max_eta_abs_estimate = 0.0;
  double max_gap = 0.0;
  double mean_gap = 0.0;
};

struct RunResult {
  std::vector<ReplicaResult> replicas;
  bool ok() const;
};

/// Runs every replica and writes, under output_dir:
///   instance.json, schedule.json, config.json, summary.json and, per replica
///   r, replica-r/episodes.jsonl, replica-r/regret.csv, replica-r/summary.json.
/// When output_dir is empty nothing is written.
RunResult run(const ExperimentConfig& cfg);

/// Runs one replica against a prepared setup.
ReplicaResult run_replica(const ExperimentConfig& cfg, const Setup& setup, int replica,
                          std::ostream* episodes_jsonl = nullptr);

/// Header: t,R_t,R_t_over_sqrt_t,eps_t
void write_regret_csv(const RegretLedger& ledger, std::ostream& out);
/// Header: t,R_t,R_t_over_sqrt_dHt,cumulative_eps
void emit_plotdata(const RegretLedger& ledger, int d, int H, std::ostream& out);
/// Reads a regret.csv back into ledger rows (t, regret, gap only).
RegretLedger read_regret_csv(std::istream& in);

struct AuditCheck {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double limit = 0.0;
  double slack = 0.0;  // limit - measured
  std::string detail;
};

struct AuditReport {
  std::vector<AuditCheck> checks;
  bool passed() const;
};

/// Invariant suite on the configured instance and parameters: gradient vs
/// finite differences, duality gap, exact MGR expectation, bias bound,
/// estimate boundedness, gap-to-policy propagation and the bandit-feedback
/// access log. Throws std::invalid_argument if the parameters are rejected.
AuditReport audit(const ExperimentConfig& cfg);

nlohmann::json audit_to_json(const AuditReport& report);

}  // namespace oqreps
