#pragma once

#include "bmt/choice_model.hpp"

namespace bmt {

// A rule list with fitted choice models: consider flags, posterior draws and
// the evidence estimate from the second stage, plus the first-stage scores
// needed for reweighting.
struct ModelTree {
  RuleList list;
  std::vector<std::uint8_t> flags;
  long sample_count = 0;  // S_m from the rule-stage chain
  double log_prior = 0.0;
  double log_marginal_labels = 0.0;
  EvidenceEstimate evidence;
};

// Weighted collection of fitted trees; weights are the recomposed posterior
// model probabilities over the selected subset.
struct TreePosterior {
  std::vector<ModelTree> trees;
  Eigen::VectorXd weights;
};

struct SelectionQuotas {
  int k = 10;
  double posterior_fraction = 0.3;   // top ceil(0.3 k) by log prior + marginal
  double likelihood_fraction = 0.3;  // top ceil(0.3 k) by log marginal
};

// Deduplicated union of the top trees by approximate log-posterior, the top
// trees by label marginal likelihood, and trees whose length is nearest the
// posterior mean length; invariant to the storage order of the sample.
std::vector<TreeSampleRecord> select_trees(const TreeSample& sample, const SelectionQuotas& q);

// Importance reweighting of the selected trees: the rule-stage chain is the
// proposal (mass S_m times label-marginal times prior), the full model is the
// target (choice evidence times prior). Weights are normalized over the
// selected set.
TreePosterior reweight_trees(std::vector<ModelTree> trees);

// Posterior predictive choice probabilities for one observation: per tree the
// weighted average over posterior draws, then averaged over trees by their
// posterior probabilities.
Eigen::VectorXd predict(const TreePosterior& tp, const CompiledUtility& cu,
                        const ChoiceObservation& obs, const FeatureSchema& schema,
                        const RequirementCatalog& catalog);

// P(model a | data) for two models with evidence estimates and prior P(a).
double posterior_model_prob(double log_ev_a, double log_ev_b, double prior_a);

// log P(data) under the recomposed tree model: evidences averaged over the
// selected trees with their normalized rule-stage sampling weights.
double evidence_of_tree_model(const std::vector<ModelTree>& trees);

}  // namespace bmt
