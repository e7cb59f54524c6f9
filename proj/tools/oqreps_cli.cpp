#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "oqreps/harness.hpp"
#include "oqreps/instance_io.hpp"

namespace {

using nlohmann::json;
using namespace oqreps;

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string out;
  int replicas = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)");
  cmd->add_option("--override", f.overrides, "key=value, dotted keys, repeatable");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--replicas", f.replicas, "number of replicas");
}

ExperimentConfig resolve(const CommonFlags& f) {
  json j = config_to_json(ExperimentConfig{});
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw std::runtime_error("cannot open config " + f.config);
    j.merge_patch(json::parse(in));
  }
  for (const auto& o : f.overrides) apply_override(j, o);
  if (f.seed >= 0) j["seed"] = static_cast<std::uint64_t>(f.seed);
  if (!f.out.empty()) j["output_dir"] = f.out;
  if (f.replicas > 0) j["replicas"] = f.replicas;
  return config_from_json(j);
}

std::vector<int> parse_layers(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    out.push_back(std::stoi(s.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online Q-REPS experiments on layered linear MDPs"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "run the episode loop and write the regret ledger");
  add_common(run_cmd, run_flags);

  CommonFlags audit_flags;
  std::string audit_json;
  auto* audit_cmd = app.add_subcommand("audit", "check invariants on the configured instance");
  add_common(audit_cmd, audit_flags);
  audit_cmd->add_option("--json", audit_json, "also write the report to this file");

  std::string gen_kind = "simplex";
  std::string gen_layers = "1,3,3,1";
  int gen_k = 2;
  int gen_d = 4;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen", "generate an instance file");
  gen_cmd->add_option("--kind", gen_kind, "simplex or tabular");
  gen_cmd->add_option("--layers", gen_layers, "comma-separated layer sizes");
  gen_cmd->add_option("--K", gen_k, "actions per state");
  gen_cmd->add_option("--d", gen_d, "feature dimension (simplex only)");
  gen_cmd->add_option("--seed", gen_seed, "instance seed");
  gen_cmd->add_option("--out", gen_out, "output file")->required();

  std::string plot_run;
  int plot_replica = 0;
  std::string plot_out;
  auto* plot_cmd = app.add_subcommand("plotdata", "write t,R_t,R_t/sqrt(dHt),cumulative eps");
  plot_cmd->add_option("--run", plot_run, "output directory of a run")->required();
  plot_cmd->add_option("--replica", plot_replica, "replica index");
  plot_cmd->add_option("--out", plot_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const ExperimentConfig cfg = resolve(run_flags);
      const RunResult res = run(cfg);
      int failed = 0;
      for (const auto& r : res.replicas) {
        if (r.ok) {
          std::cout << "replica " << r.replica << ": R_T = " << r.ledger.regret_total()
                    << " over T = " << r.ledger.rows.size() << "\n";
        } else {
          ++failed;
          std::cout << "replica " << r.replica << ": FAILED: " << r.error << "\n";
        }
      }
      return failed == 0 ? 0 : 1;
    }
    if (*audit_cmd) {
      const ExperimentConfig cfg = resolve(audit_flags);
      const AuditReport rep = audit(cfg);
      for (const auto& c : rep.checks) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " measured=" << c.measured
                  << " limit=" << c.limit << " slack=" << c.slack;
        if (!c.detail.empty()) std::cout << " (" << c.detail << ")";
        std::cout << "\n";
      }
      if (!audit_json.empty()) std::ofstream(audit_json) << audit_to_json(rep).dump(2) << "\n";
      if (!rep.passed()) {
        for (const auto& c : rep.checks) {
          if (!c.passed) std::cerr << "audit failed: " << c.name << "\n";
        }
        return 1;
      }
      return 0;
    }
    if (*gen_cmd) {
      Rng rng = make_stream(gen_seed, "instance");
      const auto layers = parse_layers(gen_layers);
      if (gen_kind == "simplex") {
        save_instance(gen_simplex(layers, gen_k, gen_d, rng), gen_out);
      } else if (gen_kind == "tabular") {
        save_instance(gen_tabular(layers, gen_k, rng), gen_out);
      } else {
        throw std::invalid_argument("unknown kind: " + gen_kind);
      }
      return 0;
    }
    if (*plot_cmd) {
      const std::filesystem::path dir(plot_run);
      std::ifstream summary_in(dir / "summary.json");
      if (!summary_in) throw std::runtime_error("no summary.json in " + plot_run);
      const json summary = json::parse(summary_in);
      const int d = summary.at("parameters").at("d").get<int>();
      const int h = summary.at("parameters").at("H").get<int>();
      std::ifstream csv(dir / ("replica-" + std::to_string(plot_replica)) / "regret.csv");
      if (!csv) throw std::runtime_error("missing regret.csv for replica " + std::to_string(plot_replica));
      const RegretLedger ledger = read_regret_csv(csv);
      if (plot_out.empty()) {
        emit_plotdata(ledger, d, h, std::cout);
      } else {
        std::ofstream out(plot_out);
        emit_plotdata(ledger, d, h, out);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
