#include "bmt/choice_model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <random>
#include <set>

#include "bmt/math.hpp"

namespace bmt {

CompiledUtility compile_utility(const UtilitySpec& spec, const FeatureSchema& schema) {
  schema.validate();
  if (static_cast<int>(spec.alts.size()) != schema.n_alts())
    throw ValidationError("utility spec must cover every alternative");
  CompiledUtility cu;
  cu.hierarchical = spec.hierarchical;
  cu.gated_alt = schema.gated_alt();
  cu.alts.resize(spec.alts.size());

  std::map<std::string, int> beta_index;
  auto coef_idx = [&](const std::string& name) {
    auto it = beta_index.find(name);
    if (it != beta_index.end()) return it->second;
    int idx = static_cast<int>(cu.beta_names.size());
    beta_index.emplace(name, idx);
    cu.beta_names.push_back(name);
    return idx;
  };

  int n_no_asc = 0;
  for (int a = 0; a < schema.n_alts(); ++a) {
    const AltUtility& src = spec.alts[a];
    CompiledUtility::Alt& dst = cu.alts[a];
    if (!src.has_asc) {
      ++n_no_asc;
    } else if (a == cu.gated_alt && spec.hierarchical) {
      dst.asc = -2;
    } else {
      dst.asc = coef_idx("asc_" + schema.alternatives[a].name);
    }
    std::set<std::string> local;
    for (const auto& t : src.terms) {
      if (!local.insert(t.coef).second)
        throw ValidationError("utility for '" + schema.alternatives[a].name +
                              "': coefficient '" + t.coef + "' appears twice");
      CompiledUtility::Term ct;
      ct.beta_idx = coef_idx(t.coef);
      int ac = schema.alt_col(t.column);
      int pc = schema.person_col(t.column);
      if (ac >= 0) {
        ct.person = false;
        ct.col = ac;
      } else if (pc >= 0) {
        ct.person = true;
        ct.col = pc;
      } else {
        throw ValidationError("utility term references unknown column '" + t.column + "'");
      }
      dst.terms.push_back(ct);
    }
  }
  if (n_no_asc == 0)
    throw ValidationError("utility spec needs a reference alternative without a constant");
  return cu;
}

ParamLayout ParamLayout::of(const CompiledUtility& cu, int n_consider_nodes) {
  ParamLayout layout;
  layout.n_beta = cu.n_beta();
  layout.hierarchical = cu.hierarchical;
  layout.n_eta = cu.hierarchical ? n_consider_nodes : 0;
  return layout;
}

Eigen::VectorXd pack_params(const ChoiceParams& p, const ParamLayout& layout) {
  Eigen::VectorXd x(layout.dim());
  x.head(layout.n_beta) = p.beta;
  if (layout.hierarchical) {
    x[layout.n_beta] = p.asc_gated;
    x[layout.n_beta + 1] = p.log_sigma;
    x.tail(layout.n_eta) = p.eta;
  }
  return x;
}

ChoiceParams unpack_params(const Eigen::VectorXd& x, const ParamLayout& layout) {
  if (x.size() != layout.dim())
    throw ValidationError("parameter vector has wrong dimension");
  ChoiceParams p;
  p.beta = x.head(layout.n_beta);
  if (layout.hierarchical) {
    p.asc_gated = x[layout.n_beta];
    p.log_sigma = x[layout.n_beta + 1];
    p.eta = x.tail(layout.n_eta);
  } else {
    p.eta = Eigen::VectorXd();
  }
  return p;
}

std::vector<std::string> param_names(const CompiledUtility& cu, const ParamLayout& layout) {
  std::vector<std::string> names = cu.beta_names;
  if (layout.hierarchical) {
    names.push_back("asc_gated");
    names.push_back("log_sigma");
    for (int i = 0; i < layout.n_eta; ++i) names.push_back("eta_" + std::to_string(i));
  }
  return names;
}

int TreeBinding::n_consider() const {
  int n = 0;
  for (auto f : consider) n += f != 0;
  return n;
}

TreeBinding TreeBinding::make(const RuleList& rl, std::vector<std::uint8_t> consider_flags,
                              const BinnedMatrix& bm_all) {
  if (static_cast<int>(consider_flags.size()) != rl.n_nodes())
    throw ValidationError("consider flags must cover every node");
  TreeBinding tb;
  tb.list = rl;
  tb.consider = std::move(consider_flags);
  tb.eta_index.assign(tb.consider.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < tb.consider.size(); ++i)
    if (tb.consider[i]) tb.eta_index[i] = next++;
  tb.assignments.reserve(bm_all.n_rows());
  for (int i = 0; i < bm_all.n_rows(); ++i)
    tb.assignments.push_back(assign_node(rl, bm_all.rows[i]));
  return tb;
}

TreeBinding TreeBinding::single_node(int n_obs) {
  TreeBinding tb;
  tb.consider = {1};
  tb.eta_index = {0};
  tb.assignments.assign(n_obs, 0);
  return tb;
}

std::vector<std::uint8_t> consider_flags(const RuleList& rl, const BinnedMatrix& bm_subsample,
                                         const BinnedMatrix& bm_all, ConsiderPolicy policy) {
  std::vector<std::uint8_t> flags(rl.n_nodes(), 1);
  if (policy == ConsiderPolicy::AllConsider) return flags;
  NodeCounts sub = count_nodes(rl, bm_subsample);
  NodeCounts all = count_nodes(rl, bm_all);
  for (int i = 0; i < rl.n_nodes(); ++i) {
    flags[i] = sub.n1[i] > 0 ? 1 : 0;
    if (!flags[i] && all.n1[i] > 0) {
      // an observation outside the subsample chose the gated alternative
      // here; winnowing would make the likelihood identically zero
      flags[i] = 1;
    }
  }
  return flags;
}

Eigen::VectorXd utilities(const CompiledUtility& cu, const ChoiceParams& params,
                          const ChoiceObservation& obs, int node, const TreeBinding& tree) {
  if (node < 0 || node >= tree.n_nodes())
    throw ValidationError("node index out of range");
  Eigen::VectorXd v = Eigen::VectorXd::Constant(cu.n_alts(), kNegInf);
  for (int a = 0; a < cu.n_alts(); ++a) {
    if (!obs.available[a]) continue;
    if (cu.hierarchical && a == cu.gated_alt && !tree.consider[node]) continue;
    const auto& alt = cu.alts[a];
    double u = 0.0;
    if (alt.asc == -2) {
      u += params.asc_gated + params.sigma() * params.eta[tree.eta_index[node]];
    } else if (alt.asc >= 0) {
      u += params.beta[alt.asc];
    }
    for (const auto& t : alt.terms) {
      double xval = t.person ? obs.person[t.col] : obs.alt_attrs(a, t.col);
      u += params.beta[t.beta_idx] * xval;
    }
    v[a] = u;
  }
  return v;
}

Eigen::VectorXd choice_prob(const CompiledUtility& cu, const ChoiceParams& params,
                            const ChoiceObservation& obs, int node, const TreeBinding& tree) {
  Eigen::VectorXd v = utilities(cu, params, obs, node, tree);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(v.size());
  double vmax = kNegInf;
  for (int a = 0; a < v.size(); ++a) vmax = std::max(vmax, v[a]);
  if (vmax == kNegInf) return p;  // empty effective choice set
  double denom = 0.0;
  for (int a = 0; a < v.size(); ++a)
    if (v[a] > kNegInf) denom += std::exp(v[a] - vmax);
  for (int a = 0; a < v.size(); ++a)
    if (v[a] > kNegInf) p[a] = std::exp(v[a] - vmax) / denom;
  return p;
}

double log_likelihood(const CompiledUtility& cu, const ChoiceParams& params,
                      const ChoiceDataset& dataset, const TreeBinding& tree) {
  if (static_cast<int>(tree.assignments.size()) != dataset.n_obs())
    throw ValidationError("node assignments must cover every observation");
  double ll = 0.0;
  for (int n = 0; n < dataset.n_obs(); ++n) {
    const ChoiceObservation& obs = dataset.observations[n];
    if (obs.chosen < 0) throw ValidationError("obs " + std::to_string(obs.obs_id) +
                                              ": no chosen alternative for likelihood");
    const int node = tree.assignments[n];
    Eigen::VectorXd v = utilities(cu, params, obs, node, tree);
    if (v[obs.chosen] == kNegInf) return kNegInf;
    double vmax = v.maxCoeff();
    double denom = 0.0;
    for (int a = 0; a < v.size(); ++a)
      if (v[a] > kNegInf) denom += std::exp(v[a] - vmax);
    ll += v[obs.chosen] - vmax - std::log(denom);
  }
  return ll;
}

double log_prior_density(const ChoiceParams& params, const ParamLayout& layout,
                         const PriorSpec& prior) {
  const double v = prior.beta_variance;
  const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
  double lp = 0.0;
  for (int k = 0; k < params.beta.size(); ++k)
    lp += -0.5 * params.beta[k] * params.beta[k] / v - 0.5 * std::log(v) - half_log_2pi;
  if (layout.hierarchical) {
    lp += -0.5 * params.asc_gated * params.asc_gated / v - 0.5 * std::log(v) - half_log_2pi;
    // sigma ~ LogNormal(0, s); in terms of t = log sigma the change of
    // variables cancels the 1/sigma factor, leaving t ~ N(0, s^2)
    const double s = prior.lognormal_scale;
    lp += -0.5 * params.log_sigma * params.log_sigma / (s * s) - std::log(s) - half_log_2pi;
    for (int i = 0; i < params.eta.size(); ++i)
      lp += -0.5 * params.eta[i] * params.eta[i] - half_log_2pi;
  }
  return lp;
}

double log_posterior(const CompiledUtility& cu, const Eigen::VectorXd& x,
                     const ParamLayout& layout, const ChoiceDataset& dataset,
                     const TreeBinding& tree, const PriorSpec& prior) {
  ChoiceParams params = unpack_params(x, layout);
  double ll = log_likelihood(cu, params, dataset, tree);
  if (ll == kNegInf) return kNegInf;
  return ll + log_prior_density(params, layout, prior);
}

Eigen::VectorXd grad_log_posterior(const CompiledUtility& cu, const Eigen::VectorXd& x,
                                   const ParamLayout& layout, const ChoiceDataset& dataset,
                                   const TreeBinding& tree, const PriorSpec& prior) {
  ChoiceParams params = unpack_params(x, layout);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.dim());
  const double sigma = params.sigma();
  const int idx_asc = layout.n_beta;
  const int idx_logsig = layout.n_beta + 1;
  const int idx_eta0 = layout.n_beta + 2;

  for (int n = 0; n < dataset.n_obs(); ++n) {
    const ChoiceObservation& obs = dataset.observations[n];
    const int node = tree.assignments[n];
    Eigen::VectorXd v = utilities(cu, params, obs, node, tree);
    if (obs.chosen < 0 || v[obs.chosen] == kNegInf)
      throw EstimationError("gradient undefined: observation " + std::to_string(obs.obs_id) +
                            " has zero probability for its chosen alternative");
    double vmax = v.maxCoeff();
    double denom = 0.0;
    for (int a = 0; a < v.size(); ++a)
      if (v[a] > kNegInf) denom += std::exp(v[a] - vmax);
    for (int a = 0; a < v.size(); ++a) {
      if (v[a] == kNegInf) continue;
      const double residual = (a == obs.chosen ? 1.0 : 0.0) - std::exp(v[a] - vmax) / denom;
      if (residual == 0.0) continue;
      const auto& alt = cu.alts[a];
      if (alt.asc == -2) {
        const double eta_i = params.eta[tree.eta_index[node]];
        grad[idx_asc] += residual;
        grad[idx_logsig] += residual * sigma * eta_i;
        grad[idx_eta0 + tree.eta_index[node]] += residual * sigma;
      } else if (alt.asc >= 0) {
        grad[alt.asc] += residual;
      }
      for (const auto& t : alt.terms) {
        double xval = t.person ? obs.person[t.col] : obs.alt_attrs(a, t.col);
        grad[t.beta_idx] += residual * xval;
      }
    }
  }

  // prior contributions
  const double v = prior.beta_variance;
  for (int k = 0; k < layout.n_beta; ++k) grad[k] -= params.beta[k] / v;
  if (layout.hierarchical) {
    grad[idx_asc] -= params.asc_gated / v;
    const double s = prior.lognormal_scale;
    grad[idx_logsig] -= params.log_sigma / (s * s);
    for (int i = 0; i < layout.n_eta; ++i) grad[idx_eta0 + i] -= params.eta[i];
  }
  return grad;
}

namespace {

// BFGS with backtracking line search on the negative log posterior. The
// objective is smooth and (with proper priors) strictly concave in the
// common cases, so a dense inverse-Hessian update is plenty.
struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  int iterations = 0;
};

template <typename F, typename G>
BfgsResult bfgs_minimize(const Eigen::VectorXd& x0, F&& f, G&& g, int max_iter,
                         double grad_tol) {
  const int d = static_cast<int>(x0.size());
  BfgsResult res;
  res.x = x0;
  double fx = f(res.x);
  if (!std::isfinite(fx)) return res;
  Eigen::VectorXd grad = g(res.x);
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(d, d);
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it;
    res.grad_norm = grad.norm();
    if (res.grad_norm < grad_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -(h_inv * grad);
    double slope = grad.dot(dir);
    if (slope >= 0.0) {  // reset a corrupted approximation
      h_inv.setIdentity();
      dir = -grad;
      slope = grad.dot(dir);
    }
    double step = 1.0;
    double f_new = kPosInf;
    Eigen::VectorXd x_new;
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;  // no decrease along the direction
    Eigen::VectorXd grad_new = g(x_new);
    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = grad_new - grad;
    double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      Eigen::VectorXd hy = h_inv * y;
      double yhy = y.dot(hy);
      // BFGS inverse update
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose());
      h_inv -= (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    res.x = x_new;
    fx = f_new;
    grad = grad_new;
  }
  res.f = fx;
  res.grad_norm = grad.norm();
  if (res.grad_norm < grad_tol) res.converged = true;
  return res;
}

}  // namespace

std::pair<ChoiceParams, MapReport> map_estimate(const CompiledUtility& cu,
                                                const ChoiceDataset& dataset,
                                                const TreeBinding& tree, const PriorSpec& prior,
                                                const MapOptions& opts) {
  if (opts.starts < 1) throw ValidationError("map_estimate: starts must be >= 1");
  ParamLayout layout = ParamLayout::of(cu, tree.n_consider());
  auto f = [&](const Eigen::VectorXd& x) {
    return -log_posterior(cu, x, layout, dataset, tree, prior);
  };
  auto g = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(-grad_log_posterior(cu, x, layout, dataset, tree, prior));
  };

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> noise(0.0, opts.jitter_sd);
  BfgsResult best;
  bool have_best = false;
  int best_start = 0;
  std::string failures;
  for (int s = 0; s < opts.starts; ++s) {
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(layout.dim());
    if (s > 0)
      for (int i = 0; i < x0.size(); ++i) x0[i] = noise(rng);
    if (!std::isfinite(f(x0))) {
      failures += " start " + std::to_string(s) + ": non-finite objective;";
      continue;
    }
    BfgsResult r = bfgs_minimize(x0, f, g, opts.max_iterations, opts.grad_tol);
    if (!std::isfinite(r.f)) {
      failures += " start " + std::to_string(s) + ": diverged;";
      continue;
    }
    if (!have_best || r.f < best.f) {
      best = r;
      best_start = s;
      have_best = true;
    }
  }
  if (!have_best)
    throw EstimationError("map_estimate: every start failed:" + failures);
  if (!best.converged && best.grad_norm > 1e-3)
    throw EstimationError("map_estimate: no start converged (best gradient norm " +
                          std::to_string(best.grad_norm) + ")");
  MapReport report;
  report.converged = best.converged;
  report.grad_norm = best.grad_norm;
  report.log_post = -best.f;
  report.iterations = best.iterations;
  report.start_index = best_start;
  return {unpack_params(best.x, layout), report};
}

namespace {

Eigen::MatrixXd neg_hessian_log_posterior(const CompiledUtility& cu, const Eigen::VectorXd& x,
                                          const ParamLayout& layout, const ChoiceDataset& dataset,
                                          const TreeBinding& tree, const PriorSpec& prior) {
  // central differences of the analytic gradient
  const int d = static_cast<int>(x.size());
  Eigen::MatrixXd h(d, d);
  for (int j = 0; j < d; ++j) {
    const double hj = 1e-5 * (1.0 + std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += hj;
    xm[j] -= hj;
    Eigen::VectorXd gp = grad_log_posterior(cu, xp, layout, dataset, tree, prior);
    Eigen::VectorXd gm = grad_log_posterior(cu, xm, layout, dataset, tree, prior);
    h.col(j) = -(gp - gm) / (2.0 * hj);
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace

EvidenceEstimate estimate_evidence(const CompiledUtility& cu, const ChoiceDataset& dataset,
                                   const TreeBinding& tree, const PriorSpec& prior,
                                   const EvidenceOptions& opts) {
  if (opts.n_draws < 2) throw ValidationError("estimate_evidence: need at least 2 draws");
  ParamLayout layout = ParamLayout::of(cu, tree.n_consider());
  const int d = layout.dim();

  MapOptions map_opts = opts.map;
  map_opts.seed = derive_seed(opts.seed, 0xA11CE);
  auto [map_params, map_report] = map_estimate(cu, dataset, tree, prior, map_opts);
  Eigen::VectorXd mu = pack_params(map_params, layout);

  Eigen::MatrixXd hess = neg_hessian_log_posterior(cu, mu, layout, dataset, tree, prior);
  Eigen::LLT<Eigen::MatrixXd> llt(hess);
  bool regularized = false;
  if (llt.info() != Eigen::Success) {
    hess += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    llt.compute(hess);
    regularized = true;
    if (llt.info() != Eigen::Success)
      throw EstimationError(
          "estimate_evidence: Hessian at the mode is not positive definite even "
          "after diagonal regularization");
  }
  const Eigen::MatrixXd chol_l = llt.matrixL();  // hess = L L^T
  double log_det_sigma = 0.0;                    // sigma = hess^{-1}
  for (int i = 0; i < d; ++i) log_det_sigma -= 2.0 * std::log(chol_l(i, i));

  auto run_is = [&](double scale, std::uint64_t seed_stream) {
    EvidenceEstimate est;
    est.names = param_names(cu, layout);
    est.map_report = map_report;
    est.hessian_regularized = regularized;
    est.scale_inflation = scale;
    est.draws.resize(opts.n_draws, d);
    Eigen::VectorXd log_w(opts.n_draws);

    std::mt19937_64 rng(derive_seed(opts.seed, seed_stream));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::gamma_distribution<double> chi2(opts.df / 2.0, 2.0);

    const double df = opts.df;
    const double log_norm = std::lgamma((df + d) / 2.0) - std::lgamma(df / 2.0) -
                            0.5 * d * std::log(df * M_PI) - 0.5 * log_det_sigma -
                            d * std::log(scale);
    for (int s = 0; s < opts.n_draws; ++s) {
      Eigen::VectorXd z(d);
      for (int i = 0; i < d; ++i) z[i] = normal(rng);
      const double w_chi = chi2(rng);
      const double t_scale = std::sqrt(df / w_chi);
      // x = mu + scale * t_scale * L^{-T} z, so cov factor matches hess^{-1}
      Eigen::VectorXd delta =
          chol_l.transpose().triangularView<Eigen::Upper>().solve(z) * (scale * t_scale);
      Eigen::VectorXd x = mu + delta;
      const double qform = (delta.transpose() * hess * delta)(0) / (scale * scale);
      const double log_q = log_norm - 0.5 * (df + d) * std::log1p(qform / df);
      const double log_p = log_posterior(cu, x, layout, dataset, tree, prior);
      est.draws.row(s) = x;
      log_w[s] = log_p == kNegInf ? kNegInf : log_p - log_q;
    }

    const double lse = log_sum_exp(std::span<const double>(log_w.data(), log_w.size()));
    est.log_evidence = lse - std::log(static_cast<double>(opts.n_draws));
    // normalized weights, ESS, and a delta-method MC error for log evidence
    Eigen::VectorXd w_norm(opts.n_draws);
    const double wmax = log_w.maxCoeff();
    double sum_w = 0.0, sum_w2 = 0.0;
    for (int s = 0; s < opts.n_draws; ++s) {
      double w = log_w[s] == kNegInf ? 0.0 : std::exp(log_w[s] - wmax);
      w_norm[s] = w;
      sum_w += w;
      sum_w2 += w * w;
    }
    if (sum_w <= 0.0) throw EstimationError("estimate_evidence: all importance weights vanished");
    w_norm /= sum_w;
    est.weights = w_norm;
    est.effective_sample_size = sum_w * sum_w / sum_w2;
    const double mean_w = sum_w / opts.n_draws;
    double var_w = 0.0;
    for (int s = 0; s < opts.n_draws; ++s) {
      double w = log_w[s] == kNegInf ? 0.0 : std::exp(log_w[s] - wmax);
      var_w += (w - mean_w) * (w - mean_w);
    }
    var_w /= (opts.n_draws - 1.0);
    est.mc_standard_error = std::sqrt(var_w / opts.n_draws) / mean_w;
    return est;
  };

  EvidenceEstimate est = run_is(1.0, 0xD3A3);
  if (est.effective_sample_size < opts.ess_floor) {
    std::cerr << "warning: evidence ESS " << est.effective_sample_size << " below floor "
              << opts.ess_floor << "; retrying with a wider proposal\n";
    est = run_is(1.5, 0xD3A4);
    if (est.effective_sample_size < opts.ess_floor)
      throw EstimationError("estimate_evidence: effective sample size " +
                            std::to_string(est.effective_sample_size) +
                            " stayed below the configured floor after widening the proposal");
  }
  return est;
}

}  // namespace bmt
