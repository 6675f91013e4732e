#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "bmt/error.hpp"
#include "bmt/math.hpp"

namespace bmt {

enum class ColumnRole { UtilityCovariate, TreeFeature, Both };

struct ColumnSpec {
  std::string name;
  std::string unit;  // descriptive only
  ColumnRole role = ColumnRole::UtilityCovariate;
};

struct Alternative {
  int id = 0;
  std::string name;
  bool always_available = true;
};

// Declares the alternatives, which CSV columns vary by alternative vs. by
// person, and which alternative the rule stage gates in and out of choice
// sets.
struct FeatureSchema {
  std::vector<Alternative> alternatives;
  std::string gated_name;
  std::vector<ColumnSpec> alt_columns;     // one value per (obs, alternative)
  std::vector<ColumnSpec> person_columns;  // one value per obs
  std::string subsample_column;  // optional boolean column restricting the
                                 // rule-estimation subsample; empty = all

  int n_alts() const { return static_cast<int>(alternatives.size()); }
  int gated_alt() const;                       // index; throws if unresolved
  int alt_col(const std::string& name) const;  // -1 when absent
  int person_col(const std::string& name) const;
  const ColumnSpec* find_column(const std::string& name) const;
  void validate() const;
};

struct ChoiceObservation {
  int obs_id = 0;
  int chosen = -1;  // alternative id; -1 for prediction-only rows
  std::vector<std::uint8_t> available;
  Eigen::MatrixXd alt_attrs;  // n_alts x n_alt_columns
  Eigen::VectorXd person;     // n_person_columns
};

struct ChoiceDataset {
  FeatureSchema schema;
  std::vector<ChoiceObservation> observations;

  int n_obs() const { return static_cast<int>(observations.size()); }
  // Indices of observations in the rule-estimation subsample (all when no
  // subsample column is configured).
  std::vector<int> tree_subsample() const;
};

// A primitive boolean test on one feature: interval membership (right-closed,
// with the leftmost interval closed on both ends) or membership in a set of
// category codes.
struct Requirement {
  std::string feature;
  double lo = kNegInf;
  double hi = kPosInf;
  bool lo_closed = false;
  bool is_category = false;
  std::vector<double> cats;  // sorted codes when is_category

  bool contains(double v) const;
  std::string label() const;  // e.g. "distance:(1.17,1.92]" or "topo:{0,2}"
};

// Bin layout for one tree feature: either interval edges (size >= 2, strictly
// increasing, outer edges may be +-inf) or disjoint groups of category codes.
struct FeatureBins {
  std::string feature;
  std::vector<double> edges;
  std::vector<std::vector<double>> cat_groups;

  bool categorical() const { return !cat_groups.empty(); }
  int n_bins() const;
  void validate() const;
};

using BinsSpec = std::vector<FeatureBins>;

// Flattened requirement pool induced by a BinsSpec; requirement ids are
// stable indices into `requirements`, grouped contiguously per feature.
struct RequirementCatalog {
  std::vector<Requirement> requirements;
  std::vector<std::pair<int, int>> groups;  // per feature: [begin, end)
  std::vector<std::string> features;

  int n_requirements() const { return static_cast<int>(requirements.size()); }
  int n_features() const { return static_cast<int>(features.size()); }
  int feature_of(int req_id) const;
  int find_by_label(const std::string& label) const;  // -1 when absent
  static RequirementCatalog build(const BinsSpec& bins);
};

// One row of binned tree features per selected observation plus the
// gated-alternative label. Every row has exactly one set bit per feature
// group.
struct BinnedMatrix {
  RequirementCatalog catalog;
  std::vector<std::vector<std::uint8_t>> rows;  // row x requirement
  std::vector<std::uint8_t> labels;             // gated alternative chosen
  std::vector<int> obs_index;                   // row -> dataset observation

  int n_rows() const { return static_cast<int>(rows.size()); }
  long n_pos() const;
  long n_neg() const;
};

ChoiceDataset load_dataset(const std::string& path, const FeatureSchema& schema,
                           bool require_chosen = true);
void write_dataset(const ChoiceDataset& dataset, const std::string& path,
                   const std::vector<std::string>& header_comments = {});

// Bins the tree features of the given observations (default: all). Values
// falling outside every bin of a feature are an error: bins must be
// exhaustive over the data.
BinnedMatrix discretize(const ChoiceDataset& dataset, const BinsSpec& bins,
                        const std::vector<int>& obs_rows);
BinnedMatrix discretize(const ChoiceDataset& dataset, const BinsSpec& bins);

// Bins a single observation's tree features against an existing catalog.
std::vector<std::uint8_t> bin_observation(const ChoiceObservation& obs,
                                          const FeatureSchema& schema,
                                          const RequirementCatalog& catalog);

// k quantile-based bins over the observed values of a numeric person column,
// extended to +-inf at the extremes. Tied quantiles collapse; a constant
// feature yields a single bin with a warning on stderr.
FeatureBins default_bins(const ChoiceDataset& dataset, const std::string& feature,
                         int k);

}  // namespace bmt
