#include "oqreps/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace oqreps {

namespace {

double gaussian(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Eigen::VectorXd gaussian_vector(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = gaussian(rng);
  return v;
}

// Scale that maps `peak` to amplitude / 2; a zero peak means nothing to scale.
double calibrate(double peak, double amplitude) { return peak > 0.0 ? 0.5 * amplitude / peak : 0.0; }

Eigen::VectorXd with_offset(const Eigen::VectorXd& tilde) {
  Eigen::VectorXd theta(tilde.size() + 1);
  theta(0) = 0.5;
  theta.tail(tilde.size()) = tilde;
  return theta;
}

}  // namespace

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "fixed") return ScheduleKind::Fixed;
  if (name == "switching") return ScheduleKind::Switching;
  if (name == "sinusoidal") return ScheduleKind::Sinusoidal;
  if (name == "random-walk") return ScheduleKind::RandomWalk;
  throw std::invalid_argument("unknown schedule kind: " + name);
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Fixed: return "fixed";
    case ScheduleKind::Switching: return "switching";
    case ScheduleKind::Sinusoidal: return "sinusoidal";
    case ScheduleKind::RandomWalk: return "random-walk";
  }
  return "fixed";
}

RewardSchedule build_schedule(const LinearMdp& mdp, ScheduleKind kind, int T, Rng& rng,
                              double amplitude) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (amplitude < 0.0 || amplitude > 1.0) throw std::invalid_argument("amplitude must be in [0, 1]");
  const int layers = mdp.num_decision_layers();
  const int n = mdp.dim() - 1;
  RewardSchedule s;
  s.kind = kind;
  s.T = T;
  s.amplitude = amplitude;
  s.thetas.assign(T, std::vector<Eigen::VectorXd>(layers));

  for (int h = 0; h < layers; ++h) {
    const Eigen::MatrixXd psi = mdp.features(h).rightCols(n);
    switch (kind) {
      case ScheduleKind::Fixed: {
        Eigen::VectorXd a = gaussian_vector(n, rng);
        a *= calibrate(n > 0 ? (psi * a).cwiseAbs().maxCoeff() : 0.0, amplitude);
        for (int t = 0; t < T; ++t) s.thetas[t][h] = with_offset(a);
        break;
      }
      case ScheduleKind::Switching: {
        const Eigen::VectorXd a = gaussian_vector(n, rng);
        const Eigen::VectorXd b = gaussian_vector(n, rng);
        const double peak =
            n > 0 ? (0.5 * (psi * a).cwiseAbs() + (psi * b).cwiseAbs()).maxCoeff() : 0.0;
        const double c = calibrate(peak, amplitude);
        const int segment = std::max(1, (T + 9) / 10);
        for (int t = 0; t < T; ++t) {
          const double sign = (t / segment) % 2 == 0 ? 1.0 : -1.0;
          s.thetas[t][h] = with_offset(c * (0.5 * a + sign * b));
        }
        break;
      }
      case ScheduleKind::Sinusoidal: {
        const Eigen::VectorXd a = gaussian_vector(n, rng);
        const Eigen::VectorXd b = gaussian_vector(n, rng);
        const double peak =
            n > 0 ? ((psi * a).array().square() + (psi * b).array().square()).sqrt().maxCoeff()
                  : 0.0;
        const double c = calibrate(peak, amplitude);
        const double period = std::max(1.0, T / 5.0);
        for (int t = 0; t < T; ++t) {
          const double phase = 2.0 * std::numbers::pi * t / period;
          s.thetas[t][h] = with_offset(c * (std::cos(phase) * a + std::sin(phase) * b));
        }
        break;
      }
      case ScheduleKind::RandomWalk: {
        std::vector<Eigen::VectorXd> walk(T);
        walk[0] = gaussian_vector(n, rng);
        for (int t = 1; t < T; ++t) walk[t] = walk[t - 1] + 0.1 * gaussian_vector(n, rng);
        double peak = 0.0;
        if (n > 0) {
          for (const auto& w : walk) peak = std::max(peak, (psi * w).cwiseAbs().maxCoeff());
        }
        const double c = calibrate(peak, amplitude);
        for (int t = 0; t < T; ++t) s.thetas[t][h] = with_offset(c * walk[t]);
        break;
      }
    }
  }
  for (const auto& per_t : s.thetas) {
    for (const auto& theta : per_t) s.R_effective = std::max(s.R_effective, theta.norm());
  }
  return s;
}

double reward_at(const RewardSchedule& s, const LinearMdp& mdp, int t, int h, int x, int a) {
  return mdp.features(h).row(mdp.pair_index(x, a)).dot(s.thetas[t][h]);
}

Eigen::VectorXd reward_table(const RewardSchedule& s, const LinearMdp& mdp, int t, int h) {
  return mdp.features(h) * s.thetas[t][h];
}

std::vector<Eigen::VectorXd> reward_tables(const RewardSchedule& s, const LinearMdp& mdp, int t) {
  std::vector<Eigen::VectorXd> out;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) out.push_back(reward_table(s, mdp, t, h));
  return out;
}

std::vector<Eigen::VectorXd> summed_rewards(const RewardSchedule& s, const LinearMdp& mdp, int begin,
                                            int end) {
  std::vector<Eigen::VectorXd> theta_sum(mdp.num_decision_layers(),
                                         Eigen::VectorXd::Zero(mdp.dim()));
  for (int t = begin; t < end; ++t) {
    for (int h = 0; h < mdp.num_decision_layers(); ++h) theta_sum[h] += s.thetas[t][h];
  }
  std::vector<Eigen::VectorXd> out;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) out.push_back(mdp.features(h) * theta_sum[h]);
  return out;
}

nlohmann::json schedule_to_json(const RewardSchedule& s) {
  nlohmann::json j;
  j["format"] = "oqreps-reward-schedule";
  j["version"] = 1;
  j["kind"] = to_string(s.kind);
  j["T"] = s.T;
  j["amplitude"] = s.amplitude;
  j["R_effective"] = s.R_effective;
  nlohmann::json thetas = nlohmann::json::array();
  for (const auto& per_t : s.thetas) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& theta : per_t) row.push_back(std::vector<double>(theta.begin(), theta.end()));
    thetas.push_back(std::move(row));
  }
  j["thetas"] = std::move(thetas);
  return j;
}

RewardSchedule schedule_from_json(const nlohmann::json& j) {
  RewardSchedule s;
  s.kind = parse_schedule_kind(j.at("kind").get<std::string>());
  s.T = j.at("T").get<int>();
  s.amplitude = j.at("amplitude").get<double>();
  s.R_effective = j.at("R_effective").get<double>();
  for (const auto& row : j.at("thetas")) {
    std::vector<Eigen::VectorXd> per_t;
    for (const auto& theta : row) {
      const auto v = theta.get<std::vector<double>>();
      per_t.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    s.thetas.push_back(std::move(per_t));
  }
  return s;
}

}  // namespace oqreps
