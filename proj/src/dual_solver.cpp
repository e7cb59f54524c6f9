#include "oqreps/dual_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "oqreps/moment_projection.hpp"

namespace oqreps {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log sum exp over entries, skipping -inf.
double log_sum_exp(const Eigen::VectorXd& v) {
  double m = kNegInf;
  for (Eigen::Index i = 0; i < v.size(); ++i) m = std::max(m, v(i));
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) != kNegInf) s += std::exp(v(i) - m);
  }
  return m + std::log(s);
}

Eigen::MatrixXd weighted_outer(const FeatureMatrix& phi, const Eigen::VectorXd& w) {
  return phi.transpose() * w.asDiagonal() * phi;
}

}  // namespace

DualParams DualParams::zeros(const LinearMdp& mdp) {
  DualParams z;
  z.blocks.assign(mdp.num_decision_layers(), Eigen::MatrixXd::Zero(mdp.dim(), mdp.dim()));
  return z;
}

double DualParams::norm() const {
  double s = 0.0;
  for (const auto& b : blocks) s += b.squaredNorm();
  return std::sqrt(s);
}

DualParams& DualParams::axpy(double scale, const DualParams& other) {
  for (std::size_t h = 0; h < blocks.size(); ++h) blocks[h] += scale * other.blocks[h];
  return *this;
}

CumulativeRewards CumulativeRewards::zeros(const LinearMdp& mdp) {
  CumulativeRewards c;
  c.theta_sums.assign(mdp.num_decision_layers(), Eigen::VectorXd::Zero(mdp.dim()));
  return c;
}

void CumulativeRewards::add(const std::vector<Eigen::VectorXd>& theta) {
  for (std::size_t h = 0; h < theta_sums.size(); ++h) theta_sums[h] += theta[h];
}

double q_value(const LinearMdp& mdp, const DualParams& z, StateId x, int a) {
  const Eigen::VectorXd phi = mdp.feature(x.layer, x.index, a);
  return phi.dot(z.blocks[x.layer] * phi);
}

Eigen::VectorXd q_layer(const LinearMdp& mdp, const Eigen::MatrixXd& z_h, int h) {
  const FeatureMatrix& phi = mdp.features(h);
  return (phi * z_h).cwiseProduct(phi).rowwise().sum();
}

ValueTable value_table(const LinearMdp& mdp, const DualParams& z, double alpha) {
  const int layers = mdp.num_decision_layers();
  const int k = mdp.num_actions();
  const double log_k = std::log(static_cast<double>(k));
  ValueTable vt;
  vt.values.resize(layers + 1);
  vt.q.resize(layers);
  vt.next_value_weights.resize(layers);
  vt.values[layers] = Eigen::VectorXd::Zero(1);
  for (int h = layers - 1; h >= 0; --h) {
    vt.next_value_weights[h] = mdp.measure(h) * vt.values[h + 1];
    vt.q[h] = q_layer(mdp, z.blocks[h], h);
    Eigen::VectorXd v(mdp.layer_size(h));
    for (int x = 0; x < mdp.layer_size(h); ++x) {
      const Eigen::VectorXd scaled = alpha * vt.q[h].segment(x * k, k);
      v(x) = (log_sum_exp(scaled) - log_k) / alpha;
    }
    vt.values[h] = std::move(v);
  }
  return vt;
}

Eigen::VectorXd delta_layer(const LinearMdp& mdp, const CumulativeRewards& cum,
                            const ValueTable& vt, int h) {
  return mdp.features(h) * (cum.theta_sums[h] + vt.next_value_weights[h]) - vt.q[h];
}

double delta(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
             const ValueTable& vt, StateId x, int a) {
  const Eigen::VectorXd phi = mdp.feature(x.layer, x.index, a);
  return phi.dot(cum.theta_sums[x.layer] + vt.next_value_weights[x.layer]) -
         q_value(mdp, z, x, a);
}

Policy policy_from_values(const LinearMdp& mdp, const ValueTable& vt, double alpha) {
  const int k = mdp.num_actions();
  Policy p;
  p.probs.resize(mdp.num_decision_layers());
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    Eigen::MatrixXd probs(mdp.layer_size(h), k);
    for (int x = 0; x < mdp.layer_size(h); ++x) {
      for (int a = 0; a < k; ++a) {
        probs(x, a) = std::exp(alpha * (vt.q[h](x * k + a) - vt.values[h](x))) / k;
      }
    }
    p.probs[h] = std::move(probs);
  }
  return p;
}

Policy extract_policy(const LinearMdp& mdp, const DualParams& z, double alpha) {
  return policy_from_values(mdp, value_table(mdp, z, alpha), alpha);
}

DualObjective::DualObjective(const LinearMdp& mdp, const CumulativeRewards& cum, double eta,
                             double alpha, OccupancyMeasure reference)
    : mdp_(&mdp), cum_(&cum), eta_(eta), alpha_(alpha), reference_(std::move(reference)) {
  if (!(eta > 0.0) || !(alpha > 0.0)) throw std::invalid_argument("eta and alpha must be positive");
  for (const auto& r : reference_.dist) {
    Eigen::VectorXd lr(r.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) lr(i) = r(i) > 0.0 ? std::log(r(i)) : kNegInf;
    log_reference_.push_back(std::move(lr));
  }
}

DualObjective::Evaluation DualObjective::evaluate(const DualParams& z, bool with_gradient) const {
  const LinearMdp& mdp = *mdp_;
  const int layers = mdp.num_decision_layers();
  Evaluation ev;
  ev.vt = value_table(mdp, z, alpha_);
  ev.layer_terms.resize(layers);
  ev.tilted.dist.resize(layers);
  double total = ev.vt.values[0](0);
  for (int h = 0; h < layers; ++h) {
    const Eigen::VectorXd d = delta_layer(mdp, *cum_, ev.vt, h);
    Eigen::VectorXd s(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      s(i) = log_reference_[h](i) == kNegInf ? kNegInf : eta_ * d(i) + log_reference_[h](i);
    }
    const double lse = log_sum_exp(s);
    ev.layer_terms[h] = lse / eta_;
    total += ev.layer_terms[h];
    Eigen::VectorXd t(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) t(i) = s(i) == kNegInf ? 0.0 : std::exp(s(i) - lse);
    ev.tilted.dist[h] = std::move(t);
  }
  if (!std::isfinite(total)) throw NumericalError("dual objective is not finite");
  ev.value = total;

  if (with_gradient) {
    const int k = mdp.num_actions();
    const Policy pi = policy_from_values(mdp, ev.vt, alpha_);
    ev.gradient.blocks.resize(layers);
    // State distribution reached from the tilted measure of the previous layer.
    Eigen::VectorXd reach = Eigen::VectorXd::Ones(1);
    for (int h = 0; h < layers; ++h) {
      if (h > 0) {
        const Eigen::VectorXd mean_phi = mdp.features(h - 1).transpose() * ev.tilted.dist[h - 1];
        reach = mdp.measure(h - 1).transpose() * mean_phi;
      }
      Eigen::VectorXd w(mdp.num_pairs(h));
      for (int x = 0; x < mdp.layer_size(h); ++x) {
        for (int a = 0; a < k; ++a) w(x * k + a) = reach(x) * pi.probs[h](x, a);
      }
      ev.gradient.blocks[h] = weighted_outer(mdp.features(h), w - ev.tilted.dist[h]);
    }
  }
  return ev;
}

double objective(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum, double eta,
                 double alpha) {
  return DualObjective(mdp, cum, eta, alpha, uniform_occupancy(mdp)).value(z);
}

DualParams gradient(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
                    double eta, double alpha) {
  return DualObjective(mdp, cum, eta, alpha, uniform_occupancy(mdp)).evaluate(z).gradient;
}

OccupancyMeasure extract_mu(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
                            double eta, const ValueTable& vt) {
  (void)z;  // vt already encodes Q_Z and V_Z
  const OccupancyMeasure mu0 = uniform_occupancy(mdp);
  OccupancyMeasure mu;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    const Eigen::VectorXd d = delta_layer(mdp, cum, vt, h);
    Eigen::VectorXd s(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      s(i) = mu0.dist[h](i) > 0.0 ? eta * d(i) + std::log(mu0.dist[h](i)) : kNegInf;
    }
    const double lse = log_sum_exp(s);
    Eigen::VectorXd m(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) m(i) = s(i) == kNegInf ? 0.0 : std::exp(s(i) - lse);
    mu.dist.push_back(std::move(m));
  }
  return mu;
}

LayerSamples sample_reference_pairs(const LinearMdp& mdp, int n, Rng& rng) {
  const Policy pi0 = uniform_policy(mdp);
  LayerSamples samples(mdp.num_decision_layers());
  for (auto& s : samples) s.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Trajectory traj = sample_trajectory(mdp, pi0, nullptr, rng);
    for (const auto& step : traj.steps) {
      samples[step.state.layer].push_back(mdp.pair_index(step.state.index, step.action));
    }
  }
  return samples;
}

OccupancyMeasure empirical_measure(const LinearMdp& mdp, const LayerSamples& samples) {
  OccupancyMeasure m;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(mdp.num_pairs(h));
    for (int i : samples[h]) counts(i) += 1.0;
    m.dist.push_back(counts / static_cast<double>(samples[h].size()));
  }
  return m;
}

double empirical_objective(const LinearMdp& mdp, const LayerSamples& samples, const DualParams& z,
                           const CumulativeRewards& cum, double eta, double alpha) {
  return DualObjective(mdp, cum, eta, alpha, empirical_measure(mdp, samples)).value(z);
}

PrimalValue primal_value(const LinearMdp& mdp, const OccupancyMeasure& mu, const OccupancyMeasure& u,
                         const CumulativeRewards& cum, double eta, double alpha) {
  const OccupancyMeasure mu0 = uniform_occupancy(mdp);
  const int k = mdp.num_actions();
  PrimalValue pv;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    pv.reward += mu.dist[h].dot(mdp.features(h) * cum.theta_sums[h]);
    for (int i = 0; i < mdp.num_pairs(h); ++i) {
      const double m = mu.dist[h](i);
      if (m <= 0.0) continue;
      if (mu0.dist[h](i) <= 0.0) {
        pv.finite = false;
        continue;
      }
      pv.divergence += m * std::log(m / mu0.dist[h](i));
    }
    const Eigen::VectorXd states = u.state_marginal(h, k);
    for (int x = 0; x < mdp.layer_size(h); ++x) {
      if (states(x) <= 0.0) continue;
      for (int a = 0; a < k; ++a) {
        const double ux = u.dist[h](x * k + a);
        if (ux > 0.0) pv.conditional_divergence += ux * std::log(k * ux / states(x));
      }
    }
  }
  pv.value = pv.finite ? pv.reward - pv.divergence / eta - pv.conditional_divergence / alpha
                       : -std::numeric_limits<double>::infinity();
  if (!pv.finite) pv.divergence = std::numeric_limits<double>::infinity();
  return pv;
}

double covariance_mismatch(const LinearMdp& mdp, const OccupancyMeasure& mu,
                           const OccupancyMeasure& u) {
  double worst = 0.0;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    const Eigen::VectorXd diff = mu.dist[h] - u.dist[h];
    worst = std::max(worst, weighted_outer(mdp.features(h), diff).norm());
  }
  return worst;
}

GapCertificate duality_gap(const LinearMdp& mdp, const DualParams& z, const CumulativeRewards& cum,
                           double eta, double alpha) {
  const OccupancyMeasure mu0 = uniform_occupancy(mdp);
  const DualObjective obj(mdp, cum, eta, alpha, mu0);
  const auto ev = obj.evaluate(z, false);
  const OccupancyMeasure u = occupancy_of_policy(mdp, policy_from_values(mdp, ev.vt, alpha));

  GapCertificate cert;
  cert.dual_value = ev.value;
  // mu = u is always feasible; the projection is feasible and better when it converges.
  double best = primal_value(mdp, u, u, cum, eta, alpha).value;
  OccupancyMeasure projected;
  double residual = 0.0;
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    MomentProjection proj = project_moments(mdp.features(h), mu0.dist[h], u.dist[h]);
    residual = std::max(residual, proj.residual);
    projected.dist.push_back(std::move(proj.mu));
  }
  if (residual <= 1e-9) {
    best = std::max(best, primal_value(mdp, projected, u, cum, eta, alpha).value);
    cert.feasibility_residual = residual;
  }
  cert.primal_lower = best;
  cert.raw_gap = cert.dual_value - best;
  cert.gap = std::max(0.0, cert.raw_gap);
  return cert;
}

double default_step_size(const LinearMdp& mdp, double eta) {
  const double s2 = mdp.sigma() * mdp.sigma();
  return 0.5 / (eta * s2 * s2 * mdp.horizon());
}

namespace {

// Coordinates of a symmetric block parametrization Z_h = sum_k c_k E_k, with
// E = e_i e_i^T on the diagonal and e_i e_j^T + e_j e_i^T above it.
struct SymCoords {
  int layers;
  int d;
  int per_layer() const { return d * (d + 1) / 2; }
  int size() const { return layers * per_layer(); }

  Eigen::VectorXd project(const DualParams& g) const {
    Eigen::VectorXd out(size());
    int k = 0;
    for (int h = 0; h < layers; ++h) {
      const Eigen::MatrixXd& b = g.blocks[h];
      for (int i = 0; i < d; ++i) {
        out(k++) = b(i, i);
        for (int j = i + 1; j < d; ++j) out(k++) = b(i, j) + b(j, i);
      }
    }
    return out;
  }

  void add(DualParams& z, const Eigen::VectorXd& c, double scale) const {
    int k = 0;
    for (int h = 0; h < layers; ++h) {
      Eigen::MatrixXd& b = z.blocks[h];
      for (int i = 0; i < d; ++i) {
        b(i, i) += scale * c(k++);
        for (int j = i + 1; j < d; ++j) {
          b(i, j) += scale * c(k);
          b(j, i) += scale * c(k);
          ++k;
        }
      }
    }
  }

  void add_unit(DualParams& z, int k, double scale) const {
    const int h = k / per_layer();
    int r = k % per_layer();
    for (int i = 0; i < d; ++i) {
      const int row = d - i;
      if (r < row) {
        const int j = i + r;
        z.blocks[h](i, j) += scale;
        if (j != i) z.blocks[h](j, i) += scale;
        return;
      }
      r -= row;
    }
  }
};

using Evaluation = DualObjective::Evaluation;

// One damped Newton step. Returns false when no trial point improves.
bool newton_step(const DualObjective& obj, DualParams& z, Evaluation& ev) {
  const LinearMdp& mdp = obj.mdp();
  const SymCoords coords{mdp.num_decision_layers(), mdp.dim()};
  const int n = coords.size();
  const double fd = 1e-5 / std::max(obj.eta(), obj.alpha());
  const Eigen::VectorXd g = coords.project(ev.gradient);

  Eigen::MatrixXd hess(n, n);
  for (int k = 0; k < n; ++k) {
    DualParams plus = z;
    DualParams minus = z;
    coords.add_unit(plus, k, fd);
    coords.add_unit(minus, k, -fd);
    hess.col(k) = (coords.project(obj.evaluate(plus, true).gradient) -
                   coords.project(obj.evaluate(minus, true).gradient)) /
                  (2.0 * fd);
  }
  hess = 0.5 * (hess + hess.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
  const Eigen::VectorXd& lam = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd coeff = eig.eigenvectors().transpose() * g;
  for (int k = 0; k < n; ++k) coeff(k) = lam(k) > cutoff ? coeff(k) / lam(k) : 0.0;
  const Eigen::VectorXd dir = -(eig.eigenvectors() * coeff);
  const double slope = g.dot(dir);
  if (!(slope < 0.0)) return false;

  const double grad_now = ev.gradient.norm();
  double t = 1.0;
  for (int tries = 0; tries < 40; ++tries, t *= 0.5) {
    DualParams trial = z;
    coords.add(trial, dir, t);
    Evaluation next;
    try {
      next = obj.evaluate(trial, true);
    } catch (const NumericalError&) {
      continue;
    }
    const bool armijo = next.value <= ev.value + 1e-4 * t * slope;
    const bool flat = next.value <= ev.value + 1e-13 * (1.0 + std::abs(ev.value)) &&
                      next.gradient.norm() < grad_now;
    if (armijo || flat) {
      z = std::move(trial);
      ev = std::move(next);
      return true;
    }
  }
  return false;
}

bool gradient_step(const DualObjective& obj, DualParams& z, Evaluation& ev, double& step) {
  DualParams trial = z;
  trial.axpy(-step, ev.gradient);
  auto next = obj.evaluate(trial, true);
  int halvings = 0;
  while (next.value > ev.value + 1e-15 * std::abs(ev.value)) {
    if (++halvings > 60) return false;
    step *= 0.5;
    trial = z;
    trial.axpy(-step, ev.gradient);
    next = obj.evaluate(trial, true);
  }
  z = std::move(trial);
  ev = std::move(next);
  return true;
}

}  // namespace

SolveReport minimize(const LinearMdp& mdp, const CumulativeRewards& cum, const SolverConfig& cfg,
                     const DualParams* warm_start, const OccupancyMeasure* reference) {
  OccupancyMeasure ref;
  if (cfg.mode == SolverMode::Sampled) {
    if (reference == nullptr) throw std::invalid_argument("sampled mode needs an empirical measure");
    ref = *reference;
  } else {
    ref = uniform_occupancy(mdp);
  }
  const DualObjective obj(mdp, cum, cfg.eta, cfg.alpha, std::move(ref));

  SolveReport rep;
  rep.z = warm_start != nullptr ? *warm_start : DualParams::zeros(mdp);
  rep.step_size = cfg.step_size > 0.0 ? cfg.step_size : default_step_size(mdp, cfg.eta);
  auto ev = obj.evaluate(rep.z, true);
  double certified = std::numeric_limits<double>::infinity();

  for (rep.iters = 0;; ++rep.iters) {
    rep.grad_norm = ev.gradient.norm();
    if (rep.grad_norm <= cfg.grad_tol) {
      rep.converged = true;
      break;
    }
    if (cfg.target_gap > 0.0 && rep.iters % std::max(1, cfg.gap_check_every) == 0) {
      certified = duality_gap(mdp, rep.z, cum, cfg.eta, cfg.alpha).gap;
      if (certified <= cfg.target_gap) {
        rep.converged = true;
        break;
      }
    }
    if (rep.iters >= cfg.max_iters) break;
    const bool moved = cfg.method == SolverMethod::Newton
                           ? newton_step(obj, rep.z, ev)
                           : gradient_step(obj, rep.z, ev, rep.step_size);
    if (!moved) break;
  }

  rep.objective = ev.value;
  if (cfg.certify) {
    rep.gap_bound = duality_gap(mdp, rep.z, cum, cfg.eta, cfg.alpha).gap;
  } else {
    rep.gap_bound = certified;  // infinity when never certified
  }
  return rep;
}

}  // namespace oqreps
