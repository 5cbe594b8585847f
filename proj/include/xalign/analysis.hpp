#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "xalign/error.hpp"
#include "xalign/retrieval.hpp"
#include "xalign/space.hpp"

namespace xalign {

struct DispersionRecord {
  std::string label;
  double value = 0.0;  // in [0, 2]
  Index n_items = 0;
};

/**
 * Mean pairwise cosine distance over all unordered pairs of rows.
 *
 * Uses the identity sum_{i<j} cos(u_i, u_j) = (|sum_i u_i|^2 - n) / 2 for unit
 * rows u_i, so the cost is linear in n.
 */
template <typename Derived>
double dispersion(const Eigen::MatrixBase<Derived>& vectors) {
  const Index n = vectors.rows();
  if (n < 2) throw Error(ErrorKind::insufficient, "dispersion needs at least 2 vectors, got " + std::to_string(n));
  Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(vectors.cols());
  for (Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd row = vectors.row(i).template cast<double>();
    const double norm = row.norm();
    if (!(norm > 0.0)) throw Error(ErrorKind::degenerate, "zero vector at row " + std::to_string(i));
    total += row / norm;
  }
  const double nd = static_cast<double>(n);
  const double mean_cos = (total.squaredNorm() - nd) / (nd * (nd - 1.0));
  return std::clamp(1.0 - mean_cos, 0.0, 2.0);
}

/// Dispersion per group, where `groups` maps each row label of `items` to a group label.
inline std::vector<DispersionRecord> group_dispersion(const EmbeddingSpace& items,
                                                      const std::vector<std::pair<std::string, std::string>>& groups) {
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& [item, group] : groups) members[group].push_back(item);
  std::vector<DispersionRecord> out;
  for (const auto& [group, labels] : members) {
    out.push_back({group, dispersion(items.select(labels)), static_cast<Index>(labels.size())});
  }
  return out;
}

using LabelBins = std::array<std::vector<std::string>, 3>;

/**
 * Rank-based tertiles (low, medium, high): sort by value then label, and cut
 * into three bins whose sizes differ by at most one, lower bins taking the
 * remainder.
 */
inline LabelBins tertile_bins(std::vector<std::pair<std::string, double>> values) {
  if (values.size() < 3) {
    throw Error(ErrorKind::insufficient, "tertile binning needs at least 3 values, got " + std::to_string(values.size()));
  }
  std::set<std::string> seen;
  for (const auto& [label, _] : values) {
    if (!seen.insert(label).second) throw Error(ErrorKind::validation, "label '" + label + "' appears twice");
  }
  std::sort(values.begin(), values.end(), [](const auto& a, const auto& b) {
    return a.second < b.second || (a.second == b.second && a.first < b.first);
  });
  const std::size_t n = values.size();
  LabelBins bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t size = n / 3 + (b < n % 3 ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) bins[b].push_back(values[pos++].first);
  }
  return bins;
}

inline constexpr std::array<const char*, 3> kTertileNames{"low", "medium", "high"};
inline constexpr std::array<const char*, 3> kPolysemyNames{"1", "2-3", "4+"};

/// Aliases binned by meaning count: "1", "2-3", "4+".
inline LabelBins polysemy_bins(const std::vector<std::pair<std::string, std::int64_t>>& counts) {
  LabelBins bins;
  for (const auto& [alias, count] : counts) {
    if (count < 1) throw Error(ErrorKind::validation, "alias '" + alias + "' has meaning count < 1");
    bins[count == 1 ? 0 : (count <= 3 ? 1 : 2)].push_back(alias);
  }
  return bins;
}

enum class BinKind : std::uint8_t { dispersion_tertile, polysemy };
enum class BinMode : std::uint8_t { concept_level, per_alias };

inline const char* to_string(BinKind k) { return k == BinKind::dispersion_tertile ? "dispersion_tertile" : "polysemy"; }
inline const char* to_string(BinMode m) { return m == BinMode::concept_level ? "concept" : "per-alias"; }

inline BinMode parse_bin_mode(std::string_view text) {
  if (text == "concept" || text == "concept_level") return BinMode::concept_level;
  if (text == "per-alias" || text == "per_alias") return BinMode::per_alias;
  throw Error(ErrorKind::parameter, "unknown mode '" + std::string(text) + "'");
}

/// One query inside a bin, with the gold candidates that count for this bin.
struct BinMember {
  Index query = 0;
  std::vector<Index> gold;
};

struct Bin {
  std::string label;
  std::vector<BinMember> members;
};

struct BinRow {
  std::string label;
  double query_count = 0;  // averaged across folds in mean reports
  double pair_count = 0;
  std::vector<double> precision;  // percent, aligned with BinnedReport::ks
};

struct BinnedReport {
  BinKind kind = BinKind::dispersion_tertile;
  BinMode mode = BinMode::concept_level;
  std::vector<Index> ks;
  std::vector<BinRow> rows;
  double uncovered = 0;  // items without a bin (e.g. aliases lacking polysemy counts)
};

/**
 * Bins keyed by query label: each member keeps its full gold set. Unknown
 * labels raise a lookup error.
 */
inline std::vector<Bin> bins_by_query(const LabelBins& labels, const std::array<const char*, 3>& names,
                                      const std::vector<std::string>& queries, const GoldSets& gold) {
  std::map<std::string, Index> slot;
  for (std::size_t i = 0; i < queries.size(); ++i) slot.emplace(queries[i], static_cast<Index>(i));
  std::vector<Bin> bins;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    Bin bin{names[b], {}};
    for (const auto& label : labels[b]) {
      auto it = slot.find(label);
      if (it == slot.end()) throw Error(ErrorKind::lookup, "binned label '" + label + "' has no retrieval results");
      bin.members.push_back({it->second, gold[static_cast<std::size_t>(it->second)]});
    }
    bins.push_back(std::move(bin));
  }
  return bins;
}

/**
 * Bins keyed by alias (candidate) label: a query joins a bin with the subset
 * of its gold candidates whose labels fall in that bin. Gold candidates in no
 * bin are counted in `uncovered`.
 */
inline std::vector<Bin> bins_by_alias(const LabelBins& labels, const std::array<const char*, 3>& names,
                                      const GoldSets& gold, const EmbeddingSpace& candidates,
                                      std::size_t* uncovered = nullptr) {
  std::map<std::string, std::size_t> which;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    for (const auto& l : labels[b]) which.emplace(l, b);
  }
  std::vector<Bin> bins;
  for (std::size_t b = 0; b < labels.size(); ++b) bins.push_back({names[b], {}});
  std::size_t missing = 0;
  for (std::size_t q = 0; q < gold.size(); ++q) {
    std::array<std::vector<Index>, 3> split;
    for (Index g : gold[q]) {
      auto it = which.find(candidates.label(g));
      if (it == which.end()) {
        ++missing;
      } else {
        split[it->second].push_back(g);
      }
    }
    for (std::size_t b = 0; b < 3; ++b) {
      if (!split[b].empty()) bins[b].members.push_back({static_cast<Index>(q), std::move(split[b])});
    }
  }
  if (uncovered) *uncovered = missing;
  return bins;
}

/**
 * P@k per bin. concept_level: share of members whose top k meets their gold.
 * per_alias: mean over members of |gold within top k| / |gold|.
 */
inline BinnedReport binned_report(BinKind kind, const std::vector<Bin>& bins, const RankedRetrieval& results,
                                  const std::vector<Index>& ks, BinMode mode) {
  BinnedReport report;
  report.kind = kind;
  report.mode = mode;
  report.ks = ks;
  for (Index k : ks) {
    if (k < 1 || k > results.k_max) throw Error(ErrorKind::parameter, "k exceeds k_max");
  }
  for (const auto& bin : bins) {
    BinRow row{bin.label, static_cast<double>(bin.members.size()), 0, {}};
    RankedRetrieval sub{results.k_max, results.n_candidates, {}};
    GoldSets gold;
    for (const auto& m : bin.members) {
      if (m.query < 0 || m.query >= results.queries()) {
        throw Error(ErrorKind::lookup, "bin member references query " + std::to_string(m.query));
      }
      sub.lists.push_back(results.lists[static_cast<std::size_t>(m.query)]);
      gold.push_back(m.gold);
      row.pair_count += static_cast<double>(m.gold.size());
    }
    if (bin.members.empty()) {
      row.precision.assign(ks.size(), 0.0);
    } else if (mode == BinMode::concept_level) {
      row.precision = precision_at_k(sub, gold, ks);
    } else {
      for (Index k : ks) {
        const auto fractions = per_alias_precision(sub, gold, k);
        double sum = 0.0;
        for (double f : fractions) sum += f;
        row.precision.push_back(100.0 * sum / static_cast<double>(fractions.size()));
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

/// Arithmetic mean over folds of every numeric field; labels and ks must agree.
inline BinnedReport mean_over_folds(const std::vector<BinnedReport>& folds) {
  if (folds.empty()) throw Error(ErrorKind::insufficient, "no fold reports to average");
  BinnedReport mean = folds.front();
  const double n = static_cast<double>(folds.size());
  for (auto& row : mean.rows) {
    row.query_count = row.pair_count = 0;
    std::fill(row.precision.begin(), row.precision.end(), 0.0);
  }
  mean.uncovered = 0;
  for (const auto& f : folds) {
    if (f.ks != mean.ks || f.rows.size() != mean.rows.size()) {
      throw Error(ErrorKind::consistency, "fold reports have different layouts");
    }
    mean.uncovered += f.uncovered / n;
    for (std::size_t r = 0; r < f.rows.size(); ++r) {
      auto& m = mean.rows[r];
      if (f.rows[r].label != m.label) throw Error(ErrorKind::consistency, "fold reports have different bins");
      m.query_count += f.rows[r].query_count / n;
      m.pair_count += f.rows[r].pair_count / n;
      for (std::size_t i = 0; i < m.precision.size(); ++i) m.precision[i] += f.rows[r].precision[i] / n;
    }
  }
  return mean;
}

}  // namespace xalign
