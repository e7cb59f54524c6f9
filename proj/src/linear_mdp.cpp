#include "oqreps/linear_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace oqreps {

namespace {

constexpr double kClampTol = 1e-12;
constexpr double kRowSumTol = 1e-9;

Eigen::MatrixXd clamp_rows(Eigen::MatrixXd p) {
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) < 0.0) p(i, j) = 0.0;
    }
    const double s = p.row(i).sum();
    if (s > 0.0) p.row(i) /= s;
  }
  return p;
}

// Dirichlet(1, ..., 1) via normalized exponentials.
Eigen::VectorXd random_simplex_point(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = -std::log1p(-uniform01(rng));
  return v / v.sum();
}

void check_layers(const std::vector<int>& layers) {
  if (layers.size() < 2) throw std::invalid_argument("need at least two layers");
  if (layers.front() != 1) throw std::invalid_argument("first layer must be a singleton");
  if (layers.back() != 1) throw std::invalid_argument("last layer must be a singleton");
  for (int n : layers) {
    if (n < 1) throw std::invalid_argument("layer sizes must be positive");
  }
}

}  // namespace

LinearMdp::LinearMdp(std::vector<int> layer_sizes, int num_actions,
                     std::vector<FeatureMatrix> features, std::vector<Eigen::MatrixXd> measures,
                     double sigma, double reward_bound)
    : layer_sizes_(std::move(layer_sizes)),
      num_actions_(num_actions),
      dim_(0),
      features_(std::move(features)),
      measures_(std::move(measures)),
      sigma_(sigma),
      reward_bound_(reward_bound) {
  check_layers(layer_sizes_);
  if (num_actions_ < 1) throw std::invalid_argument("need at least one action");
  const int decision_layers = horizon() - 1;
  if (static_cast<int>(features_.size()) != decision_layers ||
      static_cast<int>(measures_.size()) != decision_layers) {
    throw std::invalid_argument("features and measures must cover every decision layer");
  }
  dim_ = static_cast<int>(features_[0].cols());
  if (dim_ < 1) throw std::invalid_argument("feature dimension must be positive");
  transitions_.reserve(decision_layers);
  for (int h = 0; h < decision_layers; ++h) {
    if (features_[h].rows() != num_pairs(h) || features_[h].cols() != dim_) {
      throw std::invalid_argument("feature matrix of layer " + std::to_string(h) +
                                  " has the wrong shape");
    }
    if (measures_[h].rows() != dim_ || measures_[h].cols() != layer_sizes_[h + 1]) {
      throw std::invalid_argument("transition measure of layer " + std::to_string(h) +
                                  " has the wrong shape");
    }
    transitions_.push_back(clamp_rows(features_[h] * measures_[h]));
  }
}

std::vector<Violation> validate(const LinearMdp& mdp) {
  std::vector<Violation> out;
  const double sigma = mdp.sigma();
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    const FeatureMatrix& phi = mdp.features(h);
    const Eigen::MatrixXd p = mdp.raw_transitions(h);
    for (int x = 0; x < mdp.layer_size(h); ++x) {
      for (int a = 0; a < mdp.num_actions(); ++a) {
        const int i = mdp.pair_index(x, a);
        if (!phi.row(i).allFinite() || !p.row(i).allFinite()) {
          out.push_back({"finite", h, x, a, "non-finite feature or transition entry"});
          continue;
        }
        if (phi(i, 0) != 1.0) {
          std::ostringstream s;
          s << "first feature coordinate is " << phi(i, 0) << ", expected 1";
          out.push_back({"constant_coordinate", h, x, a, s.str()});
        }
        const double norm = phi.row(i).norm();
        if (norm > sigma + 1e-12) {
          std::ostringstream s;
          s << "feature norm " << norm << " exceeds sigma " << sigma;
          out.push_back({"feature_norm", h, x, a, s.str()});
        }
        const double min_entry = p.row(i).minCoeff();
        if (min_entry < -kClampTol) {
          std::ostringstream s;
          s << "transition entry " << min_entry << " is negative";
          out.push_back({"nonnegative_row", h, x, a, s.str()});
        }
        const double row_sum = p.row(i).sum();
        if (std::abs(row_sum - 1.0) > kRowSumTol) {
          std::ostringstream s;
          s << "transition row sums to " << row_sum;
          out.push_back({"stochastic_row", h, x, a, s.str()});
        }
      }
    }
  }
  return out;
}

std::string describe(const Violation& v) {
  std::ostringstream s;
  s << v.check << " at (layer " << v.layer << ", state " << v.state << ", action " << v.action
    << "): " << v.detail;
  return s.str();
}

Policy uniform_policy(const LinearMdp& mdp) {
  Policy p;
  const int k = mdp.num_actions();
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    p.probs.push_back(Eigen::MatrixXd::Constant(mdp.layer_size(h), k, 1.0 / k));
  }
  return p;
}

Eigen::VectorXd OccupancyMeasure::state_marginal(int h, int num_actions) const {
  const Eigen::VectorXd& u = dist[h];
  const Eigen::Index n = u.size() / num_actions;
  Eigen::VectorXd m(n);
  for (Eigen::Index x = 0; x < n; ++x) m(x) = u.segment(x * num_actions, num_actions).sum();
  return m;
}

OccupancyMeasure mix(const OccupancyMeasure& u, const OccupancyMeasure& mu0, double gamma) {
  OccupancyMeasure out;
  out.dist.reserve(u.dist.size());
  for (std::size_t h = 0; h < u.dist.size(); ++h) {
    out.dist.push_back((1.0 - gamma) * u.dist[h] + gamma * mu0.dist[h]);
  }
  return out;
}

OccupancyMeasure occupancy_of_policy(const LinearMdp& mdp, const Policy& policy) {
  OccupancyMeasure occ;
  const int k = mdp.num_actions();
  Eigen::VectorXd states = Eigen::VectorXd::Ones(1);
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    Eigen::VectorXd u(mdp.num_pairs(h));
    for (int x = 0; x < mdp.layer_size(h); ++x) {
      for (int a = 0; a < k; ++a) u(mdp.pair_index(x, a)) = states(x) * policy.probs[h](x, a);
    }
    states = mdp.transitions(h).transpose() * u;
    occ.dist.push_back(std::move(u));
  }
  return occ;
}

OccupancyMeasure uniform_occupancy(const LinearMdp& mdp) {
  return occupancy_of_policy(mdp, uniform_policy(mdp));
}

double flow_residual(const LinearMdp& mdp, const OccupancyMeasure& occ) {
  const int k = mdp.num_actions();
  double worst = std::abs(occ.state_marginal(0, k)(0) - 1.0);
  for (int h = 0; h + 1 < mdp.num_decision_layers(); ++h) {
    const Eigen::VectorXd inflow = mdp.transitions(h).transpose() * occ.dist[h];
    const Eigen::VectorXd here = occ.state_marginal(h + 1, k);
    worst = std::max(worst, (inflow - here).cwiseAbs().maxCoeff());
  }
  return worst;
}

Eigen::MatrixXd covariance(const LinearMdp& mdp, const OccupancyMeasure& occ, int h) {
  const FeatureMatrix& phi = mdp.features(h);
  return phi.transpose() * occ.dist[h].asDiagonal() * phi;
}

Eigen::MatrixXd exact_covariance(const LinearMdp& mdp, const Policy& policy, int h) {
  return covariance(mdp, occupancy_of_policy(mdp, policy), h);
}

MinEigReport min_eig_uniform(const LinearMdp& mdp) {
  const OccupancyMeasure mu0 = uniform_occupancy(mdp);
  MinEigReport r;
  r.lambda_min = std::numeric_limits<double>::infinity();
  r.lambda_min_on_span = std::numeric_limits<double>::infinity();
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    const Eigen::MatrixXd sigma = covariance(mdp, mu0, h);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd ev = eig.eigenvalues();

    // Span of the features that carry positive reference mass.
    std::vector<int> rows;
    for (int i = 0; i < mdp.num_pairs(h); ++i) {
      if (mu0.dist[h](i) > 0.0) rows.push_back(i);
    }
    Eigen::MatrixXd reachable(rows.size(), mdp.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) reachable.row(i) = mdp.features(h).row(rows[i]);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(reachable);
    svd.setThreshold(1e-9);
    const int rank = static_cast<int>(svd.rank());
    const double on_span = rank > 0 ? ev(mdp.dim() - rank) : 0.0;

    if (ev(0) < r.lambda_min) {
      r.lambda_min = ev(0);
      r.worst_layer = h;
    }
    r.lambda_min_on_span = std::min(r.lambda_min_on_span, on_span);
  }
  r.rank_deficient = r.lambda_min <= 1e-10;
  return r;
}

std::vector<WeightedPath> enumerate_paths(const LinearMdp& mdp, const Policy& policy) {
  std::vector<WeightedPath> out;
  WeightedPath cur;
  const int k = mdp.num_actions();
  const int layers = mdp.num_decision_layers();
  std::function<void(int, int, double)> walk = [&](int h, int x, double prob) {
    cur.states.push_back(x);
    if (h == layers) {
      cur.prob = prob;
      out.push_back(cur);
    } else {
      for (int a = 0; a < k; ++a) {
        const double pa = policy.probs[h](x, a);
        if (pa <= 0.0) continue;
        const int pair = mdp.pair_index(x, a);
        cur.pairs.push_back(pair);
        const auto& trans = mdp.transitions(h);
        for (int y = 0; y < trans.cols(); ++y) {
          const double py = trans(pair, y);
          if (py > 0.0) walk(h + 1, y, prob * pa * py);
        }
        cur.pairs.pop_back();
      }
    }
    cur.states.pop_back();
  };
  walk(0, 0, 1.0);
  return out;
}

Trajectory sample_trajectory(const LinearMdp& mdp, const Policy& policy, const RewardFn& reward,
                             Rng& rng) {
  Trajectory traj;
  int x = 0;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    const Eigen::VectorXd probs = policy.probs[h].row(x).transpose();
    const int a = sample_categorical({probs.data(), static_cast<std::size_t>(probs.size())}, rng);
    const double r = reward ? reward(h, x, a) : 0.0;
    traj.steps.push_back({StateId{h, x}, a, r});
    const Eigen::VectorXd next = mdp.transitions(h).row(mdp.pair_index(x, a)).transpose();
    x = sample_categorical({next.data(), static_cast<std::size_t>(next.size())}, rng);
  }
  traj.terminal = StateId{mdp.horizon() - 1, x};
  return traj;
}

double expected_reward(const OccupancyMeasure& occ, const std::vector<Eigen::VectorXd>& rewards) {
  double total = 0.0;
  for (std::size_t h = 0; h < occ.dist.size(); ++h) total += occ.dist[h].dot(rewards[h]);
  return total;
}

HindsightResult best_in_hindsight(const LinearMdp& mdp,
                                  const std::vector<Eigen::VectorXd>& summed_rewards) {
  const int k = mdp.num_actions();
  const int layers = mdp.num_decision_layers();
  HindsightResult res;
  res.policy.probs.resize(layers);
  Eigen::VectorXd next_value = Eigen::VectorXd::Zero(1);
  for (int h = layers - 1; h >= 0; --h) {
    const Eigen::VectorXd q = summed_rewards[h] + mdp.transitions(h) * next_value;
    Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(mdp.layer_size(h), k);
    Eigen::VectorXd value(mdp.layer_size(h));
    for (int x = 0; x < mdp.layer_size(h); ++x) {
      int best = 0;
      for (int a = 1; a < k; ++a) {
        if (q(mdp.pair_index(x, a)) > q(mdp.pair_index(x, best))) best = a;
      }
      probs(x, best) = 1.0;
      value(x) = q(mdp.pair_index(x, best));
    }
    res.policy.probs[h] = std::move(probs);
    next_value = std::move(value);
  }
  res.value = next_value(0);
  return res;
}

LinearMdp gen_tabular(const std::vector<int>& layers, int num_actions, Rng& rng) {
  check_layers(layers);
  const int decision_layers = static_cast<int>(layers.size()) - 1;
  int total_pairs = 0;
  for (int h = 0; h < decision_layers; ++h) total_pairs += layers[h] * num_actions;
  const int d = 1 + total_pairs;

  std::vector<FeatureMatrix> features;
  std::vector<Eigen::MatrixXd> measures;
  int offset = 1;
  for (int h = 0; h < decision_layers; ++h) {
    const int pairs = layers[h] * num_actions;
    FeatureMatrix phi = FeatureMatrix::Zero(pairs, d);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, layers[h + 1]);
    for (int i = 0; i < pairs; ++i) {
      phi(i, 0) = 1.0;
      phi(i, offset + i) = 1.0;
      m.row(offset + i) = random_simplex_point(layers[h + 1], rng).transpose();
    }
    offset += pairs;
    features.push_back(std::move(phi));
    measures.push_back(std::move(m));
  }
  return LinearMdp(layers, num_actions, std::move(features), std::move(measures), std::sqrt(2.0),
                   1.0);
}

LinearMdp gen_simplex(const std::vector<int>& layers, int num_actions, int dim, Rng& rng) {
  check_layers(layers);
  if (dim < 2) throw std::invalid_argument("simplex features need d >= 2");
  const int decision_layers = static_cast<int>(layers.size()) - 1;
  std::vector<FeatureMatrix> features;
  std::vector<Eigen::MatrixXd> measures;
  for (int h = 0; h < decision_layers; ++h) {
    const int pairs = layers[h] * num_actions;
    FeatureMatrix phi(pairs, dim);
    for (int i = 0; i < pairs; ++i) {
      phi(i, 0) = 1.0;
      phi.row(i).tail(dim - 1) = random_simplex_point(dim - 1, rng).transpose();
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, layers[h + 1]);
    for (int j = 1; j < dim; ++j) m.row(j) = random_simplex_point(layers[h + 1], rng).transpose();
    features.push_back(std::move(phi));
    measures.push_back(std::move(m));
  }
  return LinearMdp(layers, num_actions, std::move(features), std::move(measures), std::sqrt(2.0),
                   1.0);
}

}  // namespace oqreps
