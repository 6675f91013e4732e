#pragma once

#include <vector>

#include "bmt/core_data.hpp"

namespace bmt {

// A conjunction of requirements (logical AND), at most one per feature.
// Requirement ids are sorted ascending, which makes the id vector the
// canonical form.
struct Conjunction {
  std::vector<int> reqs;

  int cardinality() const { return static_cast<int>(reqs.size()); }
  bool operator==(const Conjunction&) const = default;
  std::string label(const RequirementCatalog& catalog) const;
};

bool conjunction_less(const Conjunction& a, const Conjunction& b);

// True iff every requirement bit of `conj` is set in `row`.
bool matches(const Conjunction& conj, const std::vector<std::uint8_t>& row);

struct CandidateItem {
  Conjunction conj;
  long support_pos = 0;
  long support_neg = 0;
};

// Mined antecedent pool in canonical order (cardinality, then lexicographic
// requirement ids).
struct CandidateSet {
  std::vector<CandidateItem> items;
  int max_cardinality = 0;

  int size() const { return static_cast<int>(items.size()); }
  // L_c for c = 1..max_cardinality (index 0 unused).
  std::vector<int> count_by_cardinality() const;
  int find(const Conjunction& c) const;  // index or -1
};

// All conjunctions of cardinality <= max_card whose support reaches
// min_support_pos among positive-label rows OR min_support_neg among
// negative-label rows. FP-growth over each label class, then exact support
// recount on the union.
CandidateSet mine_conjunctions(const BinnedMatrix& bm, int max_card,
                               double min_support_pos, double min_support_neg);

// Exhaustive-enumeration oracle with the same contract; refuses when the
// enumeration would exceed `cap` conjunctions.
CandidateSet brute_force_mine(const BinnedMatrix& bm, int max_card,
                              double min_support_pos, double min_support_neg,
                              long cap = 2'000'000);

}  // namespace bmt
