#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

#include "oqreps/linear_mdp.hpp"

namespace oqreps {

enum class ScheduleKind { Fixed, Switching, Sinusoidal, RandomWalk };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Oblivious reward sequence r_{t,h}(x,a) = <theta_{t,h}, phi(x,a)>, fully
/// materialized before the first episode. Episodes are indexed t = 0..T-1.
///
/// Every theta has the form (1/2, theta~) so rewards are 1/2 + <theta~, psi>;
/// theta~ is scaled so that |<theta~, psi(x,a)>| <= amplitude / 2 at every pair,
/// which keeps rewards in [0, 1] without clipping.
struct RewardSchedule {
  ScheduleKind kind = ScheduleKind::Fixed;
  int T = 0;
  double amplitude = 1.0;
  std::vector<std::vector<Eigen::VectorXd>> thetas;  // [t][h]
  double R_effective = 0.0;                          // max_{t,h} |theta_{t,h}|
};

/// fixed: one theta~ per layer for all t.
/// switching: theta~_t = c (a / 2 + s_t b) where s_t flips sign every
///   ceil(T/10) episodes; the persistent part a gives the sequence a
///   non-trivial best fixed policy.
/// sinusoidal: theta~ rotates in the plane of two random directions with
///   period T/5.
/// random-walk: Gaussian increments, rescaled globally after generation.
RewardSchedule build_schedule(const LinearMdp& mdp, ScheduleKind kind, int T, Rng& rng,
                              double amplitude = 1.0);

double reward_at(const RewardSchedule& s, const LinearMdp& mdp, int t, int h, int x, int a);

/// Rewards of every pair of layer h in episode t.
Eigen::VectorXd reward_table(const RewardSchedule& s, const LinearMdp& mdp, int t, int h);
std::vector<Eigen::VectorXd> reward_tables(const RewardSchedule& s, const LinearMdp& mdp, int t);

/// sum_{t in [begin, end)} r_t, per layer.
std::vector<Eigen::VectorXd> summed_rewards(const RewardSchedule& s, const LinearMdp& mdp, int begin,
                                            int end);

nlohmann::json schedule_to_json(const RewardSchedule& s);
RewardSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace oqreps
