#include <doctest.h>

#include <cmath>

#include "oqreps/adversary.hpp"
#include "oracles.hpp"

using namespace oqreps;

namespace {

constexpr ScheduleKind kAllKinds[] = {ScheduleKind::Fixed, ScheduleKind::Switching, ScheduleKind::Sinusoidal,
                                      ScheduleKind::RandomWalk};

RewardSchedule schedule(const LinearMdp& mdp, ScheduleKind kind, int T, std::uint64_t seed, double amp = 1.0) {
  Rng rng = make_stream(seed, "schedule");
  return build_schedule(mdp, kind, T, rng, amp);
}

}  // namespace

TEST_CASE("schedule kinds parse and print") {
  for (ScheduleKind k : kAllKinds) CHECK(parse_schedule_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_schedule_kind("adaptive"), std::invalid_argument);
}

TEST_CASE("argument checks") {
  const LinearMdp mdp = oracle::tiny();
  Rng rng(1);
  CHECK_THROWS_AS(build_schedule(mdp, ScheduleKind::Fixed, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(mdp, ScheduleKind::Fixed, 5, rng, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(mdp, ScheduleKind::Fixed, 5, rng, -0.1), std::invalid_argument);
}

TEST_CASE("zero amplitude gives constant one half") {
  const LinearMdp mdp = oracle::tiny();
  for (ScheduleKind k : kAllKinds) {
    const RewardSchedule s = schedule(mdp, k, 13, 2, 0.0);
    for (int t = 0; t < 13; ++t) {
      for (int h = 0; h < 3; ++h) {
        CHECK((reward_table(s, mdp, t, h).array() - 0.5).abs().maxCoeff() <= 1e-15);
      }
    }
    CHECK(s.R_effective == doctest::Approx(0.5));
  }
}

TEST_CASE("rewards stay in [0, 1] and reach the amplitude") {
  const LinearMdp mdp = oracle::tiny();
  for (ScheduleKind k : kAllKinds) {
    for (double amp : {0.3, 1.0}) {
      const RewardSchedule s = schedule(mdp, k, 50, 3, amp);
      double peak = 0.0;
      double rmax = 0.0;
      for (int t = 0; t < 50; ++t) {
        for (int h = 0; h < 3; ++h) {
          const Eigen::VectorXd r = reward_table(s, mdp, t, h);
          CHECK(r.minCoeff() >= -1e-15);
          CHECK(r.maxCoeff() <= 1.0 + 1e-15);
          peak = std::max(peak, (r.array() - 0.5).abs().maxCoeff());
          rmax = std::max(rmax, s.thetas[t][h].norm());
          CHECK(s.thetas[t][h](0) == 0.5);
        }
      }
      CHECK(peak <= 0.5 * amp + 1e-12);
      CHECK(peak >= 0.1 * amp);
      CHECK(s.R_effective == rmax);
    }
  }
  SUBCASE("fixed and random-walk are calibrated to the exact peak") {
    for (ScheduleKind k : {ScheduleKind::Fixed, ScheduleKind::RandomWalk}) {
      const RewardSchedule s = schedule(mdp, k, 40, 4);
      for (int h = 0; h < 3; ++h) {
        double peak = 0.0;
        for (int t = 0; t < 40; ++t) peak = std::max(peak, (reward_table(s, mdp, t, h).array() - 0.5).abs().maxCoeff());
        CHECK(peak == doctest::Approx(0.5).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("tables agree with pointwise rewards and sums") {
  const LinearMdp mdp = oracle::tiny();
  for (ScheduleKind k : kAllKinds) {
    const RewardSchedule s = schedule(mdp, k, 30, 5);
    std::vector<Eigen::VectorXd> total(3);
    for (int h = 0; h < 3; ++h) total[h] = Eigen::VectorXd::Zero(mdp.num_pairs(h));
    for (int t = 0; t < 30; ++t) {
      const auto tables = reward_tables(s, mdp, t);
      for (int h = 0; h < 3; ++h) {
        for (int x = 0; x < mdp.layer_size(h); ++x) {
          for (int a = 0; a < 2; ++a) {
            double r = 0.0;
            for (int i = 0; i < 4; ++i) r += mdp.feature(h, x, a)(i) * s.thetas[t][h](i);
            CHECK(std::abs(reward_at(s, mdp, t, h, x, a) - r) <= 1e-15);
            CHECK(std::abs(tables[h](x * 2 + a) - r) <= 1e-15);
          }
        }
        total[h] += tables[h];
      }
    }
    const auto summed = summed_rewards(s, mdp, 0, 30);
    for (int h = 0; h < 3; ++h) CHECK((summed[h] - total[h]).cwiseAbs().maxCoeff() <= 1e-12);
    const auto none = summed_rewards(s, mdp, 7, 7);
    for (const auto& v : none) CHECK(v.norm() == 0.0);
  }
}

TEST_CASE("switching schedule") {
  const LinearMdp mdp = oracle::tiny();
  const int T = 47;
  const int segment = 5;
  const RewardSchedule s = schedule(mdp, ScheduleKind::Switching, T, 6);
  SUBCASE("direction flips every ceil(T/10) episodes") {
    for (int h = 0; h < 3; ++h) {
      for (int t = 1; t < T; ++t) {
        const bool boundary = t % segment == 0;
        const double diff = (s.thetas[t][h] - s.thetas[t - 1][h]).norm();
        if (boundary) {
          CHECK(diff > 1e-6);
        } else {
          CHECK(diff == 0.0);
        }
      }
      // The average of the two phases is the persistent part and stays put.
      const Eigen::VectorXd mid = 0.5 * (s.thetas[0][h] + s.thetas[segment][h]);
      CHECK((0.5 * (s.thetas[2 * segment][h] + s.thetas[3 * segment][h]) - mid).norm() <= 1e-15);
      CHECK((s.thetas[0][h] - s.thetas[2 * segment][h]).norm() == 0.0);
    }
  }
  SUBCASE("best fixed policy matches enumeration on a two-layer instance") {
    Rng rng = make_stream(8, "instance");
    const LinearMdp small = gen_simplex({1, 2, 1}, 2, 3, rng);
    const RewardSchedule sw = schedule(small, ScheduleKind::Switching, 20, 9);
    // Ten segments of length two: five of each sign, so the switching part cancels.
    std::vector<Eigen::VectorXd> closed;
    for (int h = 0; h < 2; ++h) {
      closed.push_back(10.0 * (reward_table(sw, small, 0, h) + reward_table(sw, small, 2, h)));
    }
    const auto summed = summed_rewards(sw, small, 0, 20);
    for (int h = 0; h < 2; ++h) CHECK((summed[h] - closed[h]).cwiseAbs().maxCoeff() <= 1e-12);

    double best = -1.0;
    oracle::for_each_deterministic_policy(small, [&](const Policy& p) {
      const auto paths = oracle::trajectories(small, oracle::table(p));
      const double v = oracle::value(small, paths, [&](int h, int x, int a) {
        double r = 0.0;
        for (int t = 0; t < 20; ++t) r += reward_at(sw, small, t, h, x, a);
        return r;
      });
      best = std::max(best, v);
    });
    CHECK(best_in_hindsight(small, summed).value == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("sinusoidal schedule has period T/5") {
  const LinearMdp mdp = oracle::tiny();
  const RewardSchedule s = schedule(mdp, ScheduleKind::Sinusoidal, 50, 10);
  for (int h = 0; h < 3; ++h) {
    for (int t = 0; t + 10 < 50; ++t) CHECK((s.thetas[t][h] - s.thetas[t + 10][h]).norm() <= 1e-12);
    CHECK((s.thetas[0][h] - s.thetas[5][h]).norm() > 1e-6);
  }
}

TEST_CASE("linearity in theta") {
  const LinearMdp mdp = oracle::tiny();
  const RewardSchedule s = schedule(mdp, ScheduleKind::RandomWalk, 10, 11);
  RewardSchedule mixed = s;
  for (int t = 0; t < 10; ++t) {
    for (int h = 0; h < 3; ++h) mixed.thetas[t][h] = 0.25 * s.thetas[t][h] + 0.75 * s.thetas[9 - t][h];
  }
  for (int t = 0; t < 10; ++t) {
    for (int h = 0; h < 3; ++h) {
      const Eigen::VectorXd expect = 0.25 * reward_table(s, mdp, t, h) + 0.75 * reward_table(s, mdp, 9 - t, h);
      CHECK((reward_table(mixed, mdp, t, h) - expect).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("determinism and serialization") {
  const LinearMdp mdp = oracle::tiny();
  for (ScheduleKind k : kAllKinds) {
    const RewardSchedule a = schedule(mdp, k, 25, 12);
    const RewardSchedule b = schedule(mdp, k, 25, 12);
    const RewardSchedule c = schedule(mdp, k, 25, 13);
    double diff_same = 0.0;
    double diff_other = 0.0;
    for (int t = 0; t < 25; ++t) {
      for (int h = 0; h < 3; ++h) {
        diff_same += (a.thetas[t][h] - b.thetas[t][h]).norm();
        diff_other += (a.thetas[t][h] - c.thetas[t][h]).norm();
      }
    }
    CHECK(diff_same == 0.0);
    CHECK(diff_other > 0.0);

    const nlohmann::json j = schedule_to_json(a);
    CHECK(j.at("format") == "oqreps-reward-schedule");
    const RewardSchedule back = schedule_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.kind == a.kind);
    CHECK(back.T == a.T);
    CHECK(back.amplitude == a.amplitude);
    CHECK(back.R_effective == a.R_effective);
    for (int t = 0; t < 25; ++t) {
      for (int h = 0; h < 3; ++h) CHECK((back.thetas[t][h] - a.thetas[t][h]).norm() == 0.0);
    }
  }
}
