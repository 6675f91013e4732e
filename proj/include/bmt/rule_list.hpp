#pragma once

#include <cstdint>
#include <vector>

#include "bmt/rule_mining.hpp"

namespace bmt {

// Ordered antecedent list with first-match node assignment and an implicit
// default node at the end. Node i < length() is antecedent i; node length()
// is the default.
struct RuleList {
  std::vector<Conjunction> antecedents;

  int length() const { return static_cast<int>(antecedents.size()); }
  int n_nodes() const { return length() + 1; }
  bool operator==(const RuleList&) const = default;
};

// Canonical ordering: by length, then lexicographic over antecedent ids.
bool rule_list_less(const RuleList& a, const RuleList& b);

struct RuleListPrior {
  double lambda_len = 5.0;   // truncated-Poisson rate for list length
  double lambda_card = 2.0;  // truncated-Poisson rate for antecedent cardinality
  double beta_a = 1.0;       // Beta prior on per-node label probability
  double beta_b = 1.0;
  int max_length = 0;  // 0 = candidate-pool size capped at 20

  int effective_max_length(int pool_size) const;
};

struct NodeCounts {
  std::vector<long> n1;  // gated-alternative choosers per node
  std::vector<long> n0;
};

// Index of the first matching antecedent, or length() when none match.
int assign_node(const RuleList& rl, const std::vector<std::uint8_t>& row);

NodeCounts count_nodes(const RuleList& rl, const BinnedMatrix& bm);

// log p(list) under the sequential construction: truncated Poisson on the
// length, then per position a truncated Poisson over the cardinalities that
// still have unused antecedents and a uniform pick among the unused
// antecedents of the drawn cardinality. -inf for configurations the prior
// cannot produce; throws when an antecedent is not in the candidate set.
double log_prior(const RuleList& rl, const RuleListPrior& prior, const CandidateSet& cands);

// Beta-Bernoulli evidence of the label vector given the partition:
// sum over nodes of log B(a + n1_i, b + n0_i) - log B(a, b).
double log_marginal_labels(const RuleList& rl, const BinnedMatrix& bm,
                           const RuleListPrior& prior);

// Conjugate per-node posterior (a + n1_i, b + n0_i).
std::vector<std::pair<double, double>> node_label_posterior(const RuleList& rl,
                                                            const BinnedMatrix& bm,
                                                            const RuleListPrior& prior);

struct TreeSampleRecord {
  RuleList list;
  long count = 0;  // S_m
  double log_prior = 0.0;
  double log_marginal = 0.0;
};

struct TreeSample {
  std::vector<TreeSampleRecord> records;  // sorted by count desc, then canonical
  long total_count = 0;                   // sum of S_m
  long iterations = 0;
  long burn_in = 0;
  int thin = 1;
  double acceptance_rate = 0.0;
  std::uint64_t seed = 0;

  int n_distinct() const { return static_cast<int>(records.size()); }
};

struct ChainOptions {
  long iterations = 50'000;
  long burn_in = -1;  // -1 = 20% of iterations
  int thin = 1;
  std::uint64_t seed = 0;
  // proposal move weights {insert, remove, move}; renormalized over the moves
  // feasible in the current state
  double p_insert = 1.0 / 3.0, p_remove = 1.0 / 3.0, p_move = 1.0 / 3.0;
};

// Metropolis-Hastings over ordered antecedent lists with insert/remove/move
// proposals and exact proposal densities.
TreeSample sample_rule_lists(const BinnedMatrix& bm, const CandidateSet& cands,
                             const RuleListPrior& prior, const ChainOptions& opts);

// Independent chains with derived seeds, merged by summing visit counts.
TreeSample sample_rule_lists_chains(const BinnedMatrix& bm, const CandidateSet& cands,
                                    const RuleListPrior& prior, const ChainOptions& opts,
                                    int n_chains, int workers);

}  // namespace bmt
