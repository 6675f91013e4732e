#include "bmt/core_data.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace bmt {

namespace {

std::string fmt_double(double v) {
  if (v == kPosInf) return "inf";
  if (v == kNegInf) return "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& where) {
  std::string t = s;
  t.erase(0, t.find_first_not_of(" \t"));
  t.erase(t.find_last_not_of(" \t") + 1);
  if (t.empty()) throw ParseError(where + ": missing value");
  if (t == "inf" || t == "+inf") return kPosInf;
  if (t == "-inf") return kNegInf;
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size())
    throw ParseError(where + ": cannot parse number '" + t + "'");
  if (std::isnan(v)) throw ParseError(where + ": NaN value");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

int FeatureSchema::gated_alt() const {
  for (const auto& a : alternatives)
    if (a.name == gated_name) return a.id;
  throw ValidationError("schema: gated alternative '" + gated_name + "' is not declared");
}

int FeatureSchema::alt_col(const std::string& name) const {
  for (std::size_t i = 0; i < alt_columns.size(); ++i)
    if (alt_columns[i].name == name) return static_cast<int>(i);
  return -1;
}

int FeatureSchema::person_col(const std::string& name) const {
  for (std::size_t i = 0; i < person_columns.size(); ++i)
    if (person_columns[i].name == name) return static_cast<int>(i);
  return -1;
}

const ColumnSpec* FeatureSchema::find_column(const std::string& name) const {
  int a = alt_col(name);
  if (a >= 0) return &alt_columns[a];
  int p = person_col(name);
  if (p >= 0) return &person_columns[p];
  return nullptr;
}

void FeatureSchema::validate() const {
  if (alternatives.empty()) throw ValidationError("schema: no alternatives declared");
  std::set<int> ids;
  std::set<std::string> names;
  for (const auto& a : alternatives) {
    if (!ids.insert(a.id).second)
      throw ValidationError("schema: duplicate alternative id " + std::to_string(a.id));
    if (!names.insert(a.name).second)
      throw ValidationError("schema: duplicate alternative name '" + a.name + "'");
  }
  for (int i = 0; i < n_alts(); ++i)
    if (!ids.count(i))
      throw ValidationError("schema: alternative ids must be contiguous from 0");
  gated_alt();  // throws when unresolved
  std::set<std::string> cols;
  for (const auto& c : alt_columns)
    if (!cols.insert(c.name).second)
      throw ValidationError("schema: duplicate column '" + c.name + "'");
  for (const auto& c : person_columns)
    if (!cols.insert(c.name).second)
      throw ValidationError("schema: duplicate column '" + c.name + "'");
  if (!subsample_column.empty() && person_col(subsample_column) < 0)
    throw ValidationError("schema: subsample column '" + subsample_column +
                          "' is not a person column");
}

std::vector<int> ChoiceDataset::tree_subsample() const {
  std::vector<int> rows;
  if (schema.subsample_column.empty()) {
    rows.resize(observations.size());
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
  }
  int col = schema.person_col(schema.subsample_column);
  if (col < 0)
    throw ValidationError("subsample column '" + schema.subsample_column + "' not found");
  for (int i = 0; i < n_obs(); ++i)
    if (observations[i].person[col] != 0.0) rows.push_back(i);
  return rows;
}

bool Requirement::contains(double v) const {
  if (is_category) return std::binary_search(cats.begin(), cats.end(), v);
  if (lo_closed) return v >= lo && v <= hi;
  return v > lo && v <= hi;
}

std::string Requirement::label() const {
  std::string s = feature + ":";
  if (is_category) {
    s += "{";
    for (std::size_t i = 0; i < cats.size(); ++i) {
      if (i) s += ",";
      s += fmt_double(cats[i]);
    }
    s += "}";
    return s;
  }
  s += lo_closed ? "[" : "(";
  s += fmt_double(lo) + "," + fmt_double(hi) + "]";
  return s;
}

int FeatureBins::n_bins() const {
  if (categorical()) return static_cast<int>(cat_groups.size());
  return static_cast<int>(edges.size()) - 1;
}

void FeatureBins::validate() const {
  if (feature.empty()) throw ValidationError("bins: empty feature name");
  if (categorical()) {
    std::set<double> seen;
    for (const auto& g : cat_groups) {
      if (g.empty()) throw ValidationError("bins for '" + feature + "': empty category group");
      for (double c : g)
        if (!seen.insert(c).second)
          throw ValidationError("bins for '" + feature + "': category groups overlap");
    }
    return;
  }
  if (edges.size() < 2)
    throw ValidationError("bins for '" + feature + "': need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1]))
      throw ValidationError("bins for '" + feature + "': edges must be strictly increasing");
}

int RequirementCatalog::feature_of(int req_id) const {
  for (std::size_t f = 0; f < groups.size(); ++f)
    if (req_id >= groups[f].first && req_id < groups[f].second)
      return static_cast<int>(f);
  throw ValidationError("unknown requirement id " + std::to_string(req_id));
}

int RequirementCatalog::find_by_label(const std::string& label) const {
  for (int i = 0; i < n_requirements(); ++i)
    if (requirements[i].label() == label) return i;
  return -1;
}

RequirementCatalog RequirementCatalog::build(const BinsSpec& bins) {
  RequirementCatalog cat;
  std::set<std::string> seen;
  for (const auto& fb : bins) {
    fb.validate();
    if (!seen.insert(fb.feature).second)
      throw ValidationError("bins: feature '" + fb.feature + "' listed twice");
    int begin = cat.n_requirements();
    if (fb.categorical()) {
      for (const auto& g : fb.cat_groups) {
        Requirement r;
        r.feature = fb.feature;
        r.is_category = true;
        r.cats = g;
        std::sort(r.cats.begin(), r.cats.end());
        cat.requirements.push_back(std::move(r));
      }
    } else {
      for (std::size_t i = 0; i + 1 < fb.edges.size(); ++i) {
        Requirement r;
        r.feature = fb.feature;
        r.lo = fb.edges[i];
        r.hi = fb.edges[i + 1];
        r.lo_closed = (i == 0);
        cat.requirements.push_back(std::move(r));
      }
    }
    cat.groups.emplace_back(begin, cat.n_requirements());
    cat.features.push_back(fb.feature);
  }
  return cat;
}

long BinnedMatrix::n_pos() const {
  return std::count(labels.begin(), labels.end(), std::uint8_t{1});
}
long BinnedMatrix::n_neg() const {
  return static_cast<long>(labels.size()) - n_pos();
}

ChoiceDataset load_dataset(const std::string& path, const FeatureSchema& schema,
                           bool require_chosen) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file '" + path + "'");

  std::string line;
  // Skip leading comment lines (provenance headers written by the generator).
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw ParseError(path + ": missing header row");

  auto col_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };
  const int c_obs = col_index("obs_id");
  const int c_alt = col_index("alt_id");
  const int c_chosen = col_index("chosen");
  const int c_avail = col_index("available");
  if (c_obs < 0 || c_alt < 0 || c_chosen < 0 || c_avail < 0)
    throw ParseError(path + ": header must contain obs_id, alt_id, chosen, available");
  std::vector<int> alt_cols, person_cols;
  for (const auto& c : schema.alt_columns) {
    int idx = col_index(c.name);
    if (idx < 0) throw ParseError(path + ": missing attribute column '" + c.name + "'");
    alt_cols.push_back(idx);
  }
  for (const auto& c : schema.person_columns) {
    int idx = col_index(c.name);
    if (idx < 0) throw ParseError(path + ": missing attribute column '" + c.name + "'");
    person_cols.push_back(idx);
  }

  const int n_alts = schema.n_alts();
  ChoiceDataset ds;
  ds.schema = schema;

  // Rows may arrive in any order; group them by obs_id, preserving first
  // appearance order of observations.
  std::map<int, int> obs_slot;
  std::vector<std::vector<std::uint8_t>> seen_alt;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    const std::string where = path + ":" + std::to_string(line_no);
    int obs_id = static_cast<int>(parse_double(cells[c_obs], where + " obs_id"));
    int alt_id = static_cast<int>(parse_double(cells[c_alt], where + " alt_id"));
    if (alt_id < 0 || alt_id >= n_alts)
      throw ValidationError("obs " + std::to_string(obs_id) + ": unknown alternative id " +
                            std::to_string(alt_id));
    auto it = obs_slot.find(obs_id);
    if (it == obs_slot.end()) {
      it = obs_slot.emplace(obs_id, ds.n_obs()).first;
      ChoiceObservation o;
      o.obs_id = obs_id;
      o.available.assign(n_alts, 0);
      o.alt_attrs = Eigen::MatrixXd::Zero(n_alts, static_cast<int>(alt_cols.size()));
      o.person = Eigen::VectorXd::Zero(static_cast<int>(person_cols.size()));
      ds.observations.push_back(std::move(o));
      seen_alt.emplace_back(n_alts, 0);
    }
    ChoiceObservation& o = ds.observations[it->second];
    auto& seen = seen_alt[it->second];
    if (seen[alt_id])
      throw ValidationError("obs " + std::to_string(obs_id) + ": duplicate row for alternative " +
                            std::to_string(alt_id));
    seen[alt_id] = 1;
    double chosen = parse_double(cells[c_chosen], where + " chosen");
    double avail = parse_double(cells[c_avail], where + " available");
    if (chosen != 0.0) {
      if (o.chosen >= 0)
        throw ValidationError("obs " + std::to_string(obs_id) +
                              ": more than one chosen alternative");
      o.chosen = alt_id;
    }
    o.available[alt_id] = avail != 0.0 ? 1 : 0;
    for (std::size_t k = 0; k < alt_cols.size(); ++k)
      o.alt_attrs(alt_id, static_cast<int>(k)) =
          parse_double(cells[alt_cols[k]], where + " " + schema.alt_columns[k].name);
    // person attributes repeat on every row of an observation; enforce it
    const bool first_row = std::count(seen.begin(), seen.end(), 1) == 1;
    for (std::size_t k = 0; k < person_cols.size(); ++k) {
      double v = parse_double(cells[person_cols[k]], where + " " + schema.person_columns[k].name);
      if (first_row) {
        o.person[static_cast<int>(k)] = v;
      } else if (o.person[static_cast<int>(k)] != v) {
        throw ValidationError("obs " + std::to_string(obs_id) + ": person attribute '" +
                              schema.person_columns[k].name + "' differs across rows");
      }
    }
  }

  for (int i = 0; i < ds.n_obs(); ++i) {
    const ChoiceObservation& o = ds.observations[i];
    int rows = std::count(seen_alt[i].begin(), seen_alt[i].end(), 1);
    if (rows != n_alts)
      throw ValidationError("obs " + std::to_string(o.obs_id) + ": has " + std::to_string(rows) +
                            " rows, expected one per alternative (" + std::to_string(n_alts) + ")");
    if (std::find(o.available.begin(), o.available.end(), 1) == o.available.end())
      throw ValidationError("obs " + std::to_string(o.obs_id) + ": no available alternative");
    if (require_chosen && o.chosen < 0)
      throw ValidationError("obs " + std::to_string(o.obs_id) + ": no chosen alternative");
    if (o.chosen >= 0 && !o.available[o.chosen])
      throw ValidationError("obs " + std::to_string(o.obs_id) + ": chosen alternative '" +
                            schema.alternatives[o.chosen].name + "' is not available");
  }
  return ds;
}

void write_dataset(const ChoiceDataset& dataset, const std::string& path,
                   const std::vector<std::string>& header_comments) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  for (const auto& c : header_comments) out << "# " << c << "\n";
  out << "obs_id,alt_id,chosen,available";
  for (const auto& c : dataset.schema.alt_columns) out << "," << c.name;
  for (const auto& c : dataset.schema.person_columns) out << "," << c.name;
  out << "\n";
  for (const auto& o : dataset.observations) {
    for (int a = 0; a < dataset.schema.n_alts(); ++a) {
      out << o.obs_id << "," << a << "," << (o.chosen == a ? 1 : 0) << ","
          << (o.available[a] ? 1 : 0);
      for (int k = 0; k < o.alt_attrs.cols(); ++k) out << "," << fmt_double(o.alt_attrs(a, k));
      for (int k = 0; k < o.person.size(); ++k) out << "," << fmt_double(o.person[k]);
      out << "\n";
    }
  }
  if (!out) throw IoError("failed writing dataset file '" + path + "'");
}

namespace {

int bin_value(const RequirementCatalog& cat, int feature, double v,
              const std::string& where) {
  auto [begin, end] = cat.groups[feature];
  for (int r = begin; r < end; ++r)
    if (cat.requirements[r].contains(v)) return r;
  throw ValidationError(where + ": value " + fmt_double(v) + " of feature '" +
                        cat.features[feature] + "' falls outside every bin");
}

}  // namespace

BinnedMatrix discretize(const ChoiceDataset& dataset, const BinsSpec& bins,
                        const std::vector<int>& obs_rows) {
  BinnedMatrix bm;
  bm.catalog = RequirementCatalog::build(bins);
  const int gated = dataset.schema.gated_alt();
  std::vector<int> cols(bm.catalog.n_features());
  for (int f = 0; f < bm.catalog.n_features(); ++f) {
    const std::string& name = bm.catalog.features[f];
    int c = dataset.schema.person_col(name);
    if (c < 0)
      throw ValidationError("tree feature '" + name + "' is not a person column");
    ColumnRole role = dataset.schema.person_columns[c].role;
    if (role == ColumnRole::UtilityCovariate)
      throw ValidationError("column '" + name + "' is not declared as a tree feature");
    cols[f] = c;
  }
  bm.rows.reserve(obs_rows.size());
  for (int i : obs_rows) {
    const ChoiceObservation& o = dataset.observations[i];
    std::vector<std::uint8_t> row(bm.catalog.n_requirements(), 0);
    for (int f = 0; f < bm.catalog.n_features(); ++f) {
      int r = bin_value(bm.catalog, f, o.person[cols[f]], "obs " + std::to_string(o.obs_id));
      row[r] = 1;
    }
    bm.rows.push_back(std::move(row));
    bm.labels.push_back(o.chosen == gated ? 1 : 0);
    bm.obs_index.push_back(i);
  }
  return bm;
}

BinnedMatrix discretize(const ChoiceDataset& dataset, const BinsSpec& bins) {
  std::vector<int> all(dataset.n_obs());
  std::iota(all.begin(), all.end(), 0);
  return discretize(dataset, bins, all);
}

std::vector<std::uint8_t> bin_observation(const ChoiceObservation& obs,
                                          const FeatureSchema& schema,
                                          const RequirementCatalog& catalog) {
  std::vector<std::uint8_t> row(catalog.n_requirements(), 0);
  for (int f = 0; f < catalog.n_features(); ++f) {
    int c = schema.person_col(catalog.features[f]);
    if (c < 0)
      throw ValidationError("tree feature '" + catalog.features[f] + "' is not a person column");
    int r = bin_value(catalog, f, obs.person[c], "obs " + std::to_string(obs.obs_id));
    row[r] = 1;
  }
  return row;
}

FeatureBins default_bins(const ChoiceDataset& dataset, const std::string& feature, int k) {
  if (k < 1) throw ValidationError("default_bins: k must be >= 1");
  int c = dataset.schema.person_col(feature);
  if (c < 0) throw ValidationError("default_bins: unknown person column '" + feature + "'");
  std::vector<double> v;
  v.reserve(dataset.observations.size());
  for (const auto& o : dataset.observations) v.push_back(o.person[c]);
  if (v.empty()) throw ValidationError("default_bins: empty dataset");
  std::sort(v.begin(), v.end());

  FeatureBins fb;
  fb.feature = feature;
  fb.edges.push_back(kNegInf);
  // interior edges at quantiles i/k (linear interpolation between order stats)
  for (int i = 1; i < k; ++i) {
    double q = static_cast<double>(i) / k;
    double pos = q * (static_cast<double>(v.size()) - 1.0);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(lo);
    double edge = v[lo];
    if (lo + 1 < v.size()) edge += frac * (v[lo + 1] - v[lo]);
    if (edge > fb.edges.back()) fb.edges.push_back(edge);  // ties collapse
  }
  fb.edges.push_back(kPosInf);
  if (k > 1 && fb.edges.size() == 2)
    std::cerr << "warning: feature '" << feature << "' is constant; using a single bin\n";
  return fb;
}

}  // namespace bmt
