#include "bmt/rule_list.hpp"

#include <algorithm>
#include <future>
#include <iostream>
#include <map>
#include <random>

#include "bmt/math.hpp"

namespace bmt {

bool rule_list_less(const RuleList& a, const RuleList& b) {
  if (a.length() != b.length()) return a.length() < b.length();
  for (int i = 0; i < a.length(); ++i) {
    if (a.antecedents[i].reqs != b.antecedents[i].reqs)
      return a.antecedents[i].reqs < b.antecedents[i].reqs;
  }
  return false;
}

int RuleListPrior::effective_max_length(int pool_size) const {
  if (max_length > 0) return std::min(max_length, pool_size);
  return std::min(pool_size, 20);
}

int assign_node(const RuleList& rl, const std::vector<std::uint8_t>& row) {
  for (int i = 0; i < rl.length(); ++i)
    if (matches(rl.antecedents[i], row)) return i;
  return rl.length();
}

NodeCounts count_nodes(const RuleList& rl, const BinnedMatrix& bm) {
  NodeCounts counts;
  counts.n1.assign(rl.n_nodes(), 0);
  counts.n0.assign(rl.n_nodes(), 0);
  for (int i = 0; i < bm.n_rows(); ++i) {
    int node = assign_node(rl, bm.rows[i]);
    if (bm.labels[i])
      counts.n1[node] += 1;
    else
      counts.n0[node] += 1;
  }
  return counts;
}

namespace {

// Shared by log_prior and the sampler: walks the sequential construction
// given only the cardinalities of the list's antecedents and the pool counts
// per cardinality.
double log_prior_from_cards(const std::vector<int>& cards, const RuleListPrior& prior,
                            const std::vector<int>& pool_by_card, int pool_size) {
  const int d_max = prior.effective_max_length(pool_size);
  const int d = static_cast<int>(cards.size());
  if (d > d_max) return kNegInf;
  double lp = log_trunc_poisson(d, prior.lambda_len, d_max);
  std::vector<int> avail = pool_by_card;  // index = cardinality
  for (int i = 0; i < d; ++i) {
    std::vector<int> support;
    for (int c = 1; c < static_cast<int>(avail.size()); ++c)
      if (avail[c] > 0) support.push_back(c);
    const int ci = cards[i];
    if (ci >= static_cast<int>(avail.size()) || avail[ci] <= 0) return kNegInf;
    lp += log_trunc_poisson(ci, prior.lambda_card, support);
    lp -= std::log(static_cast<double>(avail[ci]));
    avail[ci] -= 1;
  }
  return lp;
}

}  // namespace

double log_prior(const RuleList& rl, const RuleListPrior& prior, const CandidateSet& cands) {
  std::vector<int> cards;
  cards.reserve(rl.antecedents.size());
  for (const auto& a : rl.antecedents) {
    if (cands.find(a) < 0)
      throw ValidationError("rule list antecedent is not in the candidate set");
    cards.push_back(a.cardinality());
  }
  return log_prior_from_cards(cards, prior, cands.count_by_cardinality(), cands.size());
}

double log_marginal_labels(const RuleList& rl, const BinnedMatrix& bm,
                           const RuleListPrior& prior) {
  NodeCounts counts = count_nodes(rl, bm);
  const double lb0 = log_beta(prior.beta_a, prior.beta_b);
  double lm = 0.0;
  for (int i = 0; i < rl.n_nodes(); ++i)
    lm += log_beta(prior.beta_a + counts.n1[i], prior.beta_b + counts.n0[i]) - lb0;
  return lm;
}

std::vector<std::pair<double, double>> node_label_posterior(const RuleList& rl,
                                                            const BinnedMatrix& bm,
                                                            const RuleListPrior& prior) {
  NodeCounts counts = count_nodes(rl, bm);
  std::vector<std::pair<double, double>> post(rl.n_nodes());
  for (int i = 0; i < rl.n_nodes(); ++i)
    post[i] = {prior.beta_a + counts.n1[i], prior.beta_b + counts.n0[i]};
  return post;
}

namespace {

// Bitset-backed node counting. One word layout per candidate antecedent plus
// the label vector; evaluating a list is a handful of AND/ANDNOT/popcount
// passes instead of per-row scans.
class NodeCounter {
 public:
  NodeCounter(const BinnedMatrix& bm, const CandidateSet& cands)
      : n_rows_(bm.n_rows()), words_((bm.n_rows() + 63) / 64) {
    match_.assign(cands.size(), std::vector<std::uint64_t>(words_, 0));
    label_.assign(words_, 0);
    all_.assign(words_, 0);
    for (int i = 0; i < n_rows_; ++i) {
      all_[i / 64] |= 1ULL << (i % 64);
      if (bm.labels[i]) label_[i / 64] |= 1ULL << (i % 64);
      for (int c = 0; c < cands.size(); ++c)
        if (matches(cands.items[c].conj, bm.rows[i]))
          match_[c][i / 64] |= 1ULL << (i % 64);
    }
  }

  // Beta-Bernoulli evidence of the partition induced by the list (candidate
  // indices, in order) without materializing per-row assignments.
  double log_marginal(const std::vector<int>& list, double a, double b) const {
    const double lb0 = log_beta(a, b);
    std::vector<std::uint64_t> remaining = all_;
    double lm = 0.0;
    std::vector<std::uint64_t> node(words_);
    for (int idx : list) {
      const auto& m = match_[idx];
      long n = 0, n1 = 0;
      for (int w = 0; w < words_; ++w) {
        node[w] = remaining[w] & m[w];
        n += __builtin_popcountll(node[w]);
        n1 += __builtin_popcountll(node[w] & label_[w]);
        remaining[w] &= ~m[w];
      }
      lm += log_beta(a + n1, b + (n - n1)) - lb0;
    }
    long n = 0, n1 = 0;
    for (int w = 0; w < words_; ++w) {
      n += __builtin_popcountll(remaining[w]);
      n1 += __builtin_popcountll(remaining[w] & label_[w]);
    }
    lm += log_beta(a + n1, b + (n - n1)) - lb0;
    return lm;
  }

 private:
  int n_rows_;
  int words_;
  std::vector<std::vector<std::uint64_t>> match_;
  std::vector<std::uint64_t> label_;
  std::vector<std::uint64_t> all_;
};

enum class Move { Insert, Remove, Shift };

struct MoveProbs {
  double insert = 0.0, remove = 0.0, shift = 0.0;
  int n_feasible = 0;
};

MoveProbs move_probs(const ChainOptions& opts, int d, int unused, int d_max) {
  MoveProbs mp;
  const bool can_insert = unused > 0 && d < d_max;
  const bool can_remove = d > 0;
  const bool can_shift = d >= 2;
  double total = 0.0;
  if (can_insert) total += opts.p_insert;
  if (can_remove) total += opts.p_remove;
  if (can_shift) total += opts.p_move;
  if (total <= 0.0) return mp;
  if (can_insert) mp.insert = opts.p_insert / total;
  if (can_remove) mp.remove = opts.p_remove / total;
  if (can_shift) mp.shift = opts.p_move / total;
  mp.n_feasible = static_cast<int>(can_insert) + can_remove + can_shift;
  return mp;
}

}  // namespace

TreeSample sample_rule_lists(const BinnedMatrix& bm, const CandidateSet& cands,
                             const RuleListPrior& prior, const ChainOptions& opts) {
  if (cands.size() == 0) throw ValidationError("sampler: empty candidate set");
  const long burn_in = opts.burn_in >= 0 ? opts.burn_in : opts.iterations / 5;
  if (opts.iterations <= burn_in)
    throw ValidationError("sampler: iterations must exceed burn-in");
  if (opts.thin < 1) throw ValidationError("sampler: thin must be >= 1");

  const int pool = cands.size();
  const int d_max = prior.effective_max_length(pool);
  const std::vector<int> pool_by_card = cands.count_by_cardinality();
  std::vector<int> card_of(pool);
  for (int i = 0; i < pool; ++i) card_of[i] = cands.items[i].conj.cardinality();

  NodeCounter counter(bm, cands);
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // state: candidate indices in list order
  std::vector<int> state;
  std::vector<std::uint8_t> used(pool, 0);
  auto target = [&](const std::vector<int>& list) {
    std::vector<int> cards;
    cards.reserve(list.size());
    for (int idx : list) cards.push_back(card_of[idx]);
    double lp = log_prior_from_cards(cards, prior, pool_by_card, pool);
    if (lp == kNegInf) return kNegInf;
    return lp + counter.log_marginal(list, prior.beta_a, prior.beta_b);
  };
  double cur_target = target(state);

  std::map<std::vector<int>, long> visits;
  long accepted = 0;
  bool warned_stuck = false;

  for (long it = 0; it < opts.iterations; ++it) {
    const int d = static_cast<int>(state.size());
    const int unused = pool - d;
    MoveProbs mp = move_probs(opts, d, unused, d_max);
    if (mp.n_feasible == 0) {
      if (!warned_stuck) {
        std::cerr << "warning: no feasible proposal moves; chain is stuck at the "
                     "current list\n";
        warned_stuck = true;
      }
    } else {
      std::vector<int> proposal = state;
      double log_q_fwd = 0.0, log_q_rev = kNegInf;
      const double u = unif(rng);
      if (u < mp.insert) {
        // pick the k-th unused antecedent and an insertion position
        int k = static_cast<int>(unif(rng) * unused);
        k = std::min(k, unused - 1);
        int pick = -1;
        for (int i = 0, seen = 0; i < pool; ++i)
          if (!used[i] && seen++ == k) {
            pick = i;
            break;
          }
        int pos = std::min(static_cast<int>(unif(rng) * (d + 1)), d);
        proposal.insert(proposal.begin() + pos, pick);
        log_q_fwd = std::log(mp.insert) - std::log(static_cast<double>(unused)) -
                    std::log(static_cast<double>(d + 1));
        MoveProbs rev = move_probs(opts, d + 1, unused - 1, d_max);
        if (rev.remove > 0.0)
          log_q_rev = std::log(rev.remove) - std::log(static_cast<double>(d + 1));
      } else if (u < mp.insert + mp.remove) {
        int pos = std::min(static_cast<int>(unif(rng) * d), d - 1);
        proposal.erase(proposal.begin() + pos);
        log_q_fwd = std::log(mp.remove) - std::log(static_cast<double>(d));
        MoveProbs rev = move_probs(opts, d - 1, unused + 1, d_max);
        if (rev.insert > 0.0)
          log_q_rev = std::log(rev.insert) - std::log(static_cast<double>(unused + 1)) -
                      std::log(static_cast<double>(d));
      } else {
        int from = std::min(static_cast<int>(unif(rng) * d), d - 1);
        int to = std::min(static_cast<int>(unif(rng) * (d - 1)), d - 2);
        if (to >= from) ++to;  // uniform over positions != from
        int item = proposal[from];
        proposal.erase(proposal.begin() + from);
        proposal.insert(proposal.begin() + to, item);
        // same length and pool on both sides, so the move probabilities match
        log_q_fwd = std::log(mp.shift) - std::log(static_cast<double>(d)) -
                    std::log(static_cast<double>(d - 1));
        log_q_rev = log_q_fwd;
      }

      // irreversible proposals (possible only with custom move weights) have
      // log_q_rev = -inf and are always rejected
      const double prop_target = target(proposal);
      const double log_alpha = (prop_target - cur_target) + (log_q_rev - log_q_fwd);
      if (std::log(unif(rng)) < log_alpha) {
        for (int idx : state) used[idx] = 0;
        state = std::move(proposal);
        for (int idx : state) used[idx] = 1;
        cur_target = prop_target;
        ++accepted;
      }
    }
    if (it >= burn_in && (it - burn_in) % opts.thin == 0) visits[state] += 1;
  }

  TreeSample sample;
  sample.iterations = opts.iterations;
  sample.burn_in = burn_in;
  sample.thin = opts.thin;
  sample.seed = opts.seed;
  sample.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(opts.iterations);
  for (const auto& [list, count] : visits) {
    TreeSampleRecord rec;
    for (int idx : list) rec.list.antecedents.push_back(cands.items[idx].conj);
    rec.count = count;
    rec.log_prior = log_prior(rec.list, prior, cands);
    rec.log_marginal = log_marginal_labels(rec.list, bm, prior);
    sample.records.push_back(std::move(rec));
    sample.total_count += count;
  }
  std::sort(sample.records.begin(), sample.records.end(),
            [](const TreeSampleRecord& a, const TreeSampleRecord& b) {
              if (a.count != b.count) return a.count > b.count;
              return rule_list_less(a.list, b.list);
            });
  return sample;
}

TreeSample sample_rule_lists_chains(const BinnedMatrix& bm, const CandidateSet& cands,
                                    const RuleListPrior& prior, const ChainOptions& opts,
                                    int n_chains, int workers) {
  if (n_chains < 1) throw ValidationError("sampler: need at least one chain");
  std::vector<std::future<TreeSample>> futures;
  std::vector<TreeSample> chains(n_chains);
  const int pool_width = std::max(1, std::min(workers, n_chains));
  for (int start = 0; start < n_chains; start += pool_width) {
    const int stop = std::min(n_chains, start + pool_width);
    for (int c = start; c < stop; ++c) {
      ChainOptions chain_opts = opts;
      chain_opts.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(c));
      futures.push_back(std::async(std::launch::async, [&, chain_opts] {
        return sample_rule_lists(bm, cands, prior, chain_opts);
      }));
    }
    for (int c = start; c < stop; ++c) chains[c] = futures[c].get();
  }

  if (n_chains == 1) {
    TreeSample single = std::move(chains[0]);
    single.seed = opts.seed;
    return single;
  }
  TreeSample merged;
  merged.seed = opts.seed;
  merged.thin = opts.thin;
  std::map<RuleList, TreeSampleRecord, decltype(&rule_list_less)> by_list(&rule_list_less);
  double acc = 0.0;
  for (const auto& chain : chains) {
    merged.iterations += chain.iterations;
    merged.burn_in += chain.burn_in;
    merged.total_count += chain.total_count;
    acc += chain.acceptance_rate * static_cast<double>(chain.iterations);
    for (const auto& rec : chain.records) {
      auto it = by_list.find(rec.list);
      if (it == by_list.end())
        by_list.emplace(rec.list, rec);
      else
        it->second.count += rec.count;
    }
  }
  merged.acceptance_rate = acc / static_cast<double>(merged.iterations);
  for (auto& [list, rec] : by_list) merged.records.push_back(std::move(rec));
  std::sort(merged.records.begin(), merged.records.end(),
            [](const TreeSampleRecord& a, const TreeSampleRecord& b) {
              if (a.count != b.count) return a.count > b.count;
              return rule_list_less(a.list, b.list);
            });
  return merged;
}

}  // namespace bmt
