#include "bmt/rule_mining.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace bmt {

std::string Conjunction::label(const RequirementCatalog& catalog) const {
  std::string s;
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    if (i) s += " & ";
    if (reqs[i] < 0 || reqs[i] >= catalog.n_requirements())
      throw ValidationError("unknown requirement id " + std::to_string(reqs[i]));
    s += catalog.requirements[reqs[i]].label();
  }
  return s;
}

bool conjunction_less(const Conjunction& a, const Conjunction& b) {
  if (a.cardinality() != b.cardinality()) return a.cardinality() < b.cardinality();
  return a.reqs < b.reqs;
}

bool matches(const Conjunction& conj, const std::vector<std::uint8_t>& row) {
  for (int r : conj.reqs) {
    if (r < 0 || r >= static_cast<int>(row.size()))
      throw ValidationError("unknown requirement id " + std::to_string(r));
    if (!row[r]) return false;
  }
  return true;
}

std::vector<int> CandidateSet::count_by_cardinality() const {
  std::vector<int> counts(static_cast<std::size_t>(max_cardinality) + 1, 0);
  for (const auto& it : items) counts[it.conj.cardinality()] += 1;
  return counts;
}

int CandidateSet::find(const Conjunction& c) const {
  auto it = std::lower_bound(items.begin(), items.end(), c,
                             [](const CandidateItem& a, const Conjunction& b) {
                               return conjunction_less(a.conj, b);
                             });
  if (it != items.end() && it->conj == c) return static_cast<int>(it - items.begin());
  return -1;
}

namespace {

long count_support(const Conjunction& c, const BinnedMatrix& bm, std::uint8_t label) {
  long n = 0;
  for (int i = 0; i < bm.n_rows(); ++i)
    if (bm.labels[i] == label && matches(c, bm.rows[i])) ++n;
  return n;
}

// ----------------------------------------------------------------------
// FP-growth over one label class.
//
// Transactions are the binned rows restricted to one class; items are
// requirement ids. Items from the same feature group never co-occur (each row
// carries exactly one bit per group), so conjunctions violating the
// one-requirement-per-feature rule have zero support and are excluded by any
// positive minimum count.
// ----------------------------------------------------------------------

struct FPNode {
  int item = -1;
  long count = 0;
  int parent = -1;
  int header_next = -1;  // next node carrying the same item
};

class FPTree {
 public:
  FPTree(const std::vector<std::vector<int>>& transactions,
         const std::vector<long>& txn_counts, long minsup, int n_items)
      : minsup_(minsup) {
    // frequent items, ordered by descending count (ties by id) for insertion
    std::vector<long> freq(n_items, 0);
    for (std::size_t t = 0; t < transactions.size(); ++t)
      for (int it : transactions[t]) freq[it] += txn_counts[t];
    std::vector<int> order;
    for (int i = 0; i < n_items; ++i)
      if (freq[i] >= minsup_) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (freq[a] != freq[b]) return freq[a] > freq[b];
      return a < b;
    });
    rank_.assign(n_items, -1);
    for (std::size_t i = 0; i < order.size(); ++i) rank_[order[i]] = static_cast<int>(i);
    items_by_rank_ = order;
    header_.assign(order.size(), -1);
    item_total_.assign(order.size(), 0);
    nodes_.push_back(FPNode{});  // root

    std::vector<int> filtered;
    for (std::size_t t = 0; t < transactions.size(); ++t) {
      filtered.clear();
      for (int it : transactions[t])
        if (rank_[it] >= 0) filtered.push_back(it);
      std::sort(filtered.begin(), filtered.end(),
                [&](int a, int b) { return rank_[a] < rank_[b]; });
      insert(filtered, txn_counts[t]);
    }
  }

  // Emits every frequent itemset of size <= budget as suffix-extended sets.
  void mine(int budget, std::vector<int>& suffix,
            std::vector<std::vector<int>>& out) const {
    if (budget <= 0) return;
    // header ranks from least-frequent upward (classic bottom-up traversal)
    for (int r = static_cast<int>(items_by_rank_.size()) - 1; r >= 0; --r) {
      if (item_total_[r] < minsup_) continue;
      int item = items_by_rank_[r];
      suffix.push_back(item);
      out.push_back(suffix);
      if (budget > 1) {
        // conditional pattern base for this item
        std::vector<std::vector<int>> cond_txns;
        std::vector<long> cond_counts;
        for (int n = header_[r]; n >= 0; n = nodes_[n].header_next) {
          std::vector<int> path;
          for (int p = nodes_[n].parent; p > 0; p = nodes_[p].parent)
            path.push_back(nodes_[p].item);
          if (!path.empty()) {
            cond_txns.push_back(std::move(path));
            cond_counts.push_back(nodes_[n].count);
          }
        }
        if (!cond_txns.empty()) {
          FPTree cond(cond_txns, cond_counts, minsup_, static_cast<int>(rank_.size()));
          cond.mine(budget - 1, suffix, out);
        }
      }
      suffix.pop_back();
    }
  }

 private:
  void insert(const std::vector<int>& txn, long count) {
    int cur = 0;
    for (int item : txn) {
      int r = rank_[item];
      item_total_[r] += count;
      int child = -1;
      // linear scan over this node's children carrying `item`
      for (int n = header_[r]; n >= 0; n = nodes_[n].header_next)
        if (nodes_[n].parent == cur) {
          child = n;
          break;
        }
      if (child < 0) {
        child = static_cast<int>(nodes_.size());
        nodes_.push_back(FPNode{item, 0, cur, header_[r]});
        header_[r] = child;
      }
      nodes_[child].count += count;
      cur = child;
    }
  }

  long minsup_;
  std::vector<FPNode> nodes_;
  std::vector<int> header_;      // per rank: head of same-item chain
  std::vector<long> item_total_; // per rank: total count
  std::vector<int> rank_;        // item id -> rank or -1
  std::vector<int> items_by_rank_;
};

std::vector<std::vector<int>> frequent_itemsets(const BinnedMatrix& bm, std::uint8_t label,
                                                long minsup, int max_card) {
  std::vector<std::vector<int>> txns;
  for (int i = 0; i < bm.n_rows(); ++i) {
    if (bm.labels[i] != label) continue;
    std::vector<int> t;
    for (int r = 0; r < bm.catalog.n_requirements(); ++r)
      if (bm.rows[i][r]) t.push_back(r);
    txns.push_back(std::move(t));
  }
  std::vector<long> counts(txns.size(), 1);
  FPTree tree(txns, counts, minsup, bm.catalog.n_requirements());
  std::vector<std::vector<int>> out;
  std::vector<int> suffix;
  tree.mine(max_card, suffix, out);
  return out;
}

CandidateSet finalize(std::set<std::vector<int>>&& found, const BinnedMatrix& bm,
                      int max_card, long minsup_pos, long minsup_neg) {
  CandidateSet cs;
  cs.max_cardinality = max_card;
  for (const auto& ids : found) {
    CandidateItem item;
    item.conj.reqs = ids;
    item.support_pos = count_support(item.conj, bm, 1);
    item.support_neg = count_support(item.conj, bm, 0);
    if (item.support_pos >= minsup_pos || item.support_neg >= minsup_neg)
      cs.items.push_back(std::move(item));
  }
  std::sort(cs.items.begin(), cs.items.end(),
            [](const CandidateItem& a, const CandidateItem& b) {
              return conjunction_less(a.conj, b.conj);
            });
  return cs;
}

void check_mining_inputs(const BinnedMatrix& bm, int max_card, double min_support_pos,
                         double min_support_neg) {
  if (bm.n_rows() == 0) throw ValidationError("mining: empty matrix");
  if (max_card < 1) throw ValidationError("mining: max cardinality must be >= 1");
  if (!(min_support_pos > 0.0 && min_support_pos <= 1.0) ||
      !(min_support_neg > 0.0 && min_support_neg <= 1.0))
    throw ValidationError("mining: support thresholds must lie in (0, 1]");
  if (bm.n_pos() == 0 || bm.n_neg() == 0)
    throw ValidationError(
        "mining: need both positive and negative labels in the subsample; "
        "adjust the gated alternative or the subsample definition");
}

}  // namespace

CandidateSet mine_conjunctions(const BinnedMatrix& bm, int max_card,
                               double min_support_pos, double min_support_neg) {
  check_mining_inputs(bm, max_card, min_support_pos, min_support_neg);
  const long minsup_pos = min_support_count(min_support_pos, bm.n_pos());
  const long minsup_neg = min_support_count(min_support_neg, bm.n_neg());
  std::set<std::vector<int>> found;
  for (auto& ids : frequent_itemsets(bm, 1, minsup_pos, max_card)) {
    std::sort(ids.begin(), ids.end());
    found.insert(std::move(ids));
  }
  for (auto& ids : frequent_itemsets(bm, 0, minsup_neg, max_card)) {
    std::sort(ids.begin(), ids.end());
    found.insert(std::move(ids));
  }
  return finalize(std::move(found), bm, max_card, minsup_pos, minsup_neg);
}

CandidateSet brute_force_mine(const BinnedMatrix& bm, int max_card,
                              double min_support_pos, double min_support_neg,
                              long cap) {
  check_mining_inputs(bm, max_card, min_support_pos, min_support_neg);
  const long minsup_pos = min_support_count(min_support_pos, bm.n_pos());
  const long minsup_neg = min_support_count(min_support_neg, bm.n_neg());
  const auto& cat = bm.catalog;

  // count the enumeration before running it
  double total = 0.0;
  {
    // product over chosen feature subsets; DP over features of
    // (1 + group size) keeps this closed-form enough
    std::vector<double> per_card(static_cast<std::size_t>(max_card) + 1, 0.0);
    per_card[0] = 1.0;
    for (const auto& [begin, end] : cat.groups) {
      const double g = end - begin;
      for (int c = max_card; c >= 1; --c) per_card[c] += per_card[c - 1] * g;
    }
    for (int c = 1; c <= max_card; ++c) total += per_card[c];
    if (total > static_cast<double>(cap))
      throw ValidationError("brute_force_mine: enumeration of ~" +
                            std::to_string(static_cast<long>(total)) +
                            " conjunctions exceeds cap " + std::to_string(cap));
  }

  std::set<std::vector<int>> found;
  std::vector<int> current;
  // recursive enumeration over feature groups, at most one requirement each
  auto rec = [&](auto&& self, int feature) -> void {
    if (!current.empty()) found.insert(current);
    if (static_cast<int>(current.size()) == max_card) return;
    for (int f = feature; f < cat.n_features(); ++f) {
      auto [begin, end] = cat.groups[f];
      for (int r = begin; r < end; ++r) {
        current.push_back(r);
        self(self, f + 1);
        current.pop_back();
      }
    }
  };
  rec(rec, 0);
  return finalize(std::move(found), bm, max_card, minsup_pos, minsup_neg);
}

}  // namespace bmt
