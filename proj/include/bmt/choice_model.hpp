#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "bmt/core_data.hpp"
#include "bmt/rule_list.hpp"

namespace bmt {

// One linear term of a systematic utility: coefficient name times an
// attribute column. Terms in different alternatives sharing a coefficient
// name share the parameter.
struct UtilityTerm {
  std::string coef;
  std::string column;
};

struct AltUtility {
  bool has_asc = false;
  std::vector<UtilityTerm> terms;
};

// Systematic utility specification per alternative. When `hierarchical` is
// set, the gated alternative's constant is the partially pooled node constant
// asc_gated + sigma * eta_node instead of a plain coefficient.
struct UtilitySpec {
  std::vector<AltUtility> alts;
  bool hierarchical = true;
};

// UtilitySpec resolved against a schema: column lookups and the beta layout.
struct CompiledUtility {
  struct Term {
    int beta_idx;
    bool person;  // person column vs alternative-varying column
    int col;
  };
  struct Alt {
    // -1: no constant; -2: hierarchical gated constant; else beta index
    int asc = -1;
    std::vector<Term> terms;
  };

  std::vector<Alt> alts;
  std::vector<std::string> beta_names;
  int gated_alt = -1;
  bool hierarchical = true;

  int n_beta() const { return static_cast<int>(beta_names.size()); }
  int n_alts() const { return static_cast<int>(alts.size()); }
};

CompiledUtility compile_utility(const UtilitySpec& spec, const FeatureSchema& schema);

// Choice-model parameters in non-centered form. For non-hierarchical models
// only beta is populated.
struct ChoiceParams {
  Eigen::VectorXd beta;
  double asc_gated = 0.0;
  double log_sigma = 0.0;
  Eigen::VectorXd eta;

  double sigma() const { return std::exp(log_sigma); }
};

// Flat-vector layout: [beta..., asc_gated, log_sigma, eta...].
struct ParamLayout {
  int n_beta = 0;
  bool hierarchical = true;
  int n_eta = 0;

  int dim() const { return n_beta + (hierarchical ? 2 + n_eta : 0); }
  static ParamLayout of(const CompiledUtility& cu, int n_consider_nodes);
};

Eigen::VectorXd pack_params(const ChoiceParams& p, const ParamLayout& layout);
ChoiceParams unpack_params(const Eigen::VectorXd& x, const ParamLayout& layout);
std::vector<std::string> param_names(const CompiledUtility& cu, const ParamLayout& layout);

struct PriorSpec {
  double beta_variance = 4.0;     // N(0, v) on each beta entry and asc_gated
  double lognormal_scale = 2.0;   // sigma ~ LogNormal(0, scale); eta ~ N(0, 1)
};

// A rule list bound to per-node consider flags and (optionally) per-obs node
// assignments. eta_index maps node -> position in the eta vector, -1 for
// winnowed nodes.
struct TreeBinding {
  RuleList list;
  std::vector<std::uint8_t> consider;
  std::vector<int> eta_index;
  std::vector<int> assignments;

  int n_nodes() const { return static_cast<int>(consider.size()); }
  int n_consider() const;

  static TreeBinding make(const RuleList& rl, std::vector<std::uint8_t> consider_flags,
                          const BinnedMatrix& bm_all);
  // Single default node with the gated alternative considered; used by the
  // plain MNL baseline.
  static TreeBinding single_node(int n_obs);
};

// Consider-flag policy for fitted trees.
enum class ConsiderPolicy { DataDriven, AllConsider };

// Data-driven flags: a node winnows the gated alternative iff no subsample
// observation in it chose that alternative. Nodes where some observation of
// the full choice dataset chose the gated alternative are forced to consider
// so the likelihood stays finite.
std::vector<std::uint8_t> consider_flags(const RuleList& rl, const BinnedMatrix& bm_subsample,
                                         const BinnedMatrix& bm_all, ConsiderPolicy policy);

// Systematic utilities per alternative; -inf marks unavailable alternatives
// and the gated alternative in winnowed nodes.
Eigen::VectorXd utilities(const CompiledUtility& cu, const ChoiceParams& params,
                          const ChoiceObservation& obs, int node, const TreeBinding& tree);

// Softmax over the effective choice set with max-subtraction; excluded
// alternatives get probability 0.
Eigen::VectorXd choice_prob(const CompiledUtility& cu, const ChoiceParams& params,
                            const ChoiceObservation& obs, int node, const TreeBinding& tree);

// Sum over observations of log P(chosen); -inf when any chosen alternative
// has zero probability.
double log_likelihood(const CompiledUtility& cu, const ChoiceParams& params,
                      const ChoiceDataset& dataset, const TreeBinding& tree);

double log_prior_density(const ChoiceParams& params, const ParamLayout& layout,
                         const PriorSpec& prior);

double log_posterior(const CompiledUtility& cu, const Eigen::VectorXd& x,
                     const ParamLayout& layout, const ChoiceDataset& dataset,
                     const TreeBinding& tree, const PriorSpec& prior);

// Analytic gradient of the log posterior with respect to the packed vector.
// Throws when the likelihood is -inf.
Eigen::VectorXd grad_log_posterior(const CompiledUtility& cu, const Eigen::VectorXd& x,
                                   const ParamLayout& layout, const ChoiceDataset& dataset,
                                   const TreeBinding& tree, const PriorSpec& prior);

struct MapReport {
  bool converged = false;
  double grad_norm = 0.0;
  double log_post = 0.0;
  int iterations = 0;
  int start_index = 0;
};

struct MapOptions {
  int starts = 3;
  std::uint64_t seed = 0;
  int max_iterations = 500;
  double grad_tol = 1e-7;
  double jitter_sd = 0.5;
};

// Quasi-Newton (BFGS with backtracking) maximization of the log posterior
// from multiple jittered starts; returns the best converged run.
std::pair<ChoiceParams, MapReport> map_estimate(const CompiledUtility& cu,
                                                const ChoiceDataset& dataset,
                                                const TreeBinding& tree, const PriorSpec& prior,
                                                const MapOptions& opts);

struct EvidenceOptions {
  int n_draws = 2000;
  double df = 5.0;  // Student-t proposal degrees of freedom
  std::uint64_t seed = 0;
  double ess_floor = 25.0;
  MapOptions map;
};

struct EvidenceEstimate {
  double log_evidence = kNegInf;
  double mc_standard_error = 0.0;
  double effective_sample_size = 0.0;
  Eigen::MatrixXd draws;    // n_draws x dim
  Eigen::VectorXd weights;  // normalized, sums to 1
  std::vector<std::string> names;
  MapReport map_report;
  bool hessian_regularized = false;
  double scale_inflation = 1.0;  // > 1 when the proposal had to be widened
};

// MAP + Laplace-anchored self-normalized importance sampling with a
// multivariate Student-t proposal. The mean of the unnormalized weights
// estimates the evidence; the normalized draws approximate the posterior.
EvidenceEstimate estimate_evidence(const CompiledUtility& cu, const ChoiceDataset& dataset,
                                   const TreeBinding& tree, const PriorSpec& prior,
                                   const EvidenceOptions& opts);

}  // namespace bmt
