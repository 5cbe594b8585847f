#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xalign/detail/tsv.hpp"
#include "xalign/error.hpp"
#include "xalign/log.hpp"
#include "xalign/rng.hpp"

namespace xalign {

/// One concept class: a source-side row (class_id) and its target-side aliases.
struct ConceptClass {
  std::string class_id;
  std::vector<std::string> aliases;
  std::int64_t image_count = 0;
  std::vector<std::int64_t> alias_corpus_counts;                 // one per alias
  std::vector<std::optional<std::int64_t>> polysemy_counts;      // empty, or one per alias
};

struct BimodalDictionary {
  std::vector<ConceptClass> classes;
  std::size_t pair_count = 0;

  std::vector<std::string> class_ids() const {
    std::vector<std::string> ids;
    ids.reserve(classes.size());
    for (const auto& c : classes) ids.push_back(c.class_id);
    return ids;
  }
};

inline BimodalDictionary make_dictionary(std::vector<ConceptClass> classes) {
  BimodalDictionary dict;
  std::set<std::string> seen;
  for (const auto& c : classes) {
    if (!seen.insert(c.class_id).second) throw Error(ErrorKind::validation, "duplicate class '" + c.class_id + "'");
    if (c.aliases.empty()) throw Error(ErrorKind::validation, "class '" + c.class_id + "' has no aliases");
    if (c.alias_corpus_counts.size() != c.aliases.size()) {
      throw Error(ErrorKind::consistency, "class '" + c.class_id + "': alias counts do not match aliases");
    }
    if (std::set<std::string>(c.aliases.begin(), c.aliases.end()).size() != c.aliases.size()) {
      throw Error(ErrorKind::validation, "class '" + c.class_id + "' lists an alias twice");
    }
    dict.pair_count += c.aliases.size();
  }
  dict.classes = std::move(classes);
  return dict;
}

/**
 * Keeps classes with strictly more than `min_images` images; within them, keeps
 * aliases seen at least `min_alias_count` times; drops classes left without
 * aliases. An empty result is returned with a warning.
 */
inline BimodalDictionary filter_dictionary(const std::vector<ConceptClass>& raw, std::int64_t min_images,
                                           std::int64_t min_alias_count) {
  if (min_images < 0 || min_alias_count < 0) {
    throw Error(ErrorKind::parameter, "filter thresholds must be non-negative");
  }
  std::vector<ConceptClass> kept;
  for (const auto& c : raw) {
    if (c.image_count <= min_images) continue;
    ConceptClass out{c.class_id, {}, c.image_count, {}, {}};
    for (std::size_t i = 0; i < c.aliases.size(); ++i) {
      if (c.alias_corpus_counts.at(i) < min_alias_count) continue;
      out.aliases.push_back(c.aliases[i]);
      out.alias_corpus_counts.push_back(c.alias_corpus_counts[i]);
      if (!c.polysemy_counts.empty()) out.polysemy_counts.push_back(c.polysemy_counts.at(i));
    }
    if (!out.aliases.empty()) kept.push_back(std::move(out));
  }
  if (kept.empty()) warn("dictionary is empty after filtering");
  return make_dictionary(std::move(kept));
}

enum class Split : std::uint8_t { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw Error(ErrorKind::format, "unknown split '" + std::string(text) + "'");
}

struct SplitAssignment {
  std::uint64_t fold_seed = 0;
  int fold_index = 0;
  std::vector<std::string> train, val, test;  // each sorted

  const std::vector<std::string>& part(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    return test;
  }

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

using SplitRatios = std::array<double, 3>;

/// Split sizes by the floor rule: floor(r0*N), floor(r1*N), remainder to test.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
  // 0.29 * 100 evaluates to 28.999999999999996; the epsilon floors it to 29.
  const auto cut = [n](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
  const std::size_t train = cut(ratios[0]);
  const std::size_t val = std::min(cut(ratios[1]), n - train);
  return {train, val, n - train - val};
}

/**
 * Deterministic class-level splits. Class ids are sorted, then fold f shuffles
 * them with Xoshiro256(seed, stream = f) and cuts by `split_sizes`.
 */
inline std::vector<SplitAssignment> assign_splits(const BimodalDictionary& dict, const SplitRatios& ratios,
                                                  std::uint64_t seed, int folds) {
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorKind::parameter, "split ratios must lie in [0, 1]");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw Error(ErrorKind::parameter, "split ratios must sum to 1");
  }
  if (folds < 1) throw Error(ErrorKind::parameter, "folds must be >= 1");
  auto ids = dict.class_ids();
  if (ids.size() < 3) {
    throw Error(ErrorKind::insufficient, "need at least 3 classes to split, have " + std::to_string(ids.size()));
  }
  std::sort(ids.begin(), ids.end());
  const auto sizes = split_sizes(ids.size(), ratios);

  std::vector<SplitAssignment> out;
  for (int f = 0; f < folds; ++f) {
    auto order = ids;
    Xoshiro256 rng(seed, static_cast<std::uint64_t>(f));
    shuffle(std::span<std::string>(order), rng);
    SplitAssignment a;
    a.fold_seed = seed;
    a.fold_index = f;
    const auto b0 = order.begin();
    const auto b1 = b0 + static_cast<std::ptrdiff_t>(sizes[0]);
    const auto b2 = b1 + static_cast<std::ptrdiff_t>(sizes[1]);
    a.train.assign(b0, b1);
    a.val.assign(b1, b2);
    a.test.assign(b2, order.end());
    std::sort(a.train.begin(), a.train.end());
    std::sort(a.val.begin(), a.val.end());
    std::sort(a.test.begin(), a.test.end());
    out.push_back(std::move(a));
  }
  return out;
}

using LabelPair = std::pair<std::string, std::string>;  // (source_label, target_label)

/// Class-alias pairs for the given classes, in dictionary order.
inline std::vector<LabelPair> pairs_for(const BimodalDictionary& dict, const std::vector<std::string>& class_ids) {
  const std::set<std::string> wanted(class_ids.begin(), class_ids.end());
  std::vector<LabelPair> pairs;
  for (const auto& c : dict.classes) {
    if (!wanted.contains(c.class_id)) continue;
    for (const auto& alias : c.aliases) pairs.emplace_back(c.class_id, alias);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// TSV I/O

/// Raw dictionary: class_id, image_count, alias, alias_corpus_count.
inline std::vector<ConceptClass> read_raw_dictionary(const std::filesystem::path& path) {
  const auto rows = detail::read_tsv(path, 4, "class_id");
  std::vector<ConceptClass> classes;
  std::unordered_map<std::string, std::size_t> where;
  for (const auto& row : rows) {
    const auto& f = row.fields;
    if (f[0].empty() || f[2].empty()) {
      throw Error(ErrorKind::format, path.string() + ":" + std::to_string(row.line_no) + ": empty class_id or alias");
    }
    const auto images = detail::parse_int(f[1], path, row.line_no);
    const auto count = detail::parse_int(f[3], path, row.line_no);
    if (images < 0 || count < 0) {
      throw Error(ErrorKind::validation, path.string() + ":" + std::to_string(row.line_no) + ": negative count");
    }
    auto [it, inserted] = where.emplace(f[0], classes.size());
    if (inserted) classes.push_back(ConceptClass{f[0], {}, images, {}, {}});
    auto& c = classes[it->second];
    if (c.image_count != images) {
      throw Error(ErrorKind::consistency, path.string() + ":" + std::to_string(row.line_no) +
                                              ": image_count differs between rows of class '" + f[0] + "'");
    }
    if (std::find(c.aliases.begin(), c.aliases.end(), f[2]) != c.aliases.end()) {
      throw Error(ErrorKind::validation, path.string() + ":" + std::to_string(row.line_no) + ": alias '" + f[2] +
                                             "' repeated in class '" + f[0] + "'");
    }
    c.aliases.push_back(f[2]);
    c.alias_corpus_counts.push_back(count);
  }
  return classes;
}

inline void write_raw_dictionary(const std::vector<ConceptClass>& classes, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "class_id\timage_count\talias\talias_corpus_count\n";
  for (const auto& c : classes) {
    for (std::size_t i = 0; i < c.aliases.size(); ++i) {
      out << c.class_id << '\t' << c.image_count << '\t' << c.aliases[i] << '\t' << c.alias_corpus_counts[i] << '\n';
    }
  }
}

/// Polysemy table: alias, meaning_count (>= 1).
inline std::map<std::string, std::int64_t> read_polysemy(const std::filesystem::path& path) {
  std::map<std::string, std::int64_t> table;
  for (const auto& row : detail::read_tsv(path, 2, "alias")) {
    const auto n = detail::parse_int(row.fields[1], path, row.line_no);
    if (n < 1) {
      throw Error(ErrorKind::validation, path.string() + ":" + std::to_string(row.line_no) + ": meaning count < 1");
    }
    if (!table.emplace(row.fields[0], n).second) {
      throw Error(ErrorKind::validation, path.string() + ": alias '" + row.fields[0] + "' listed twice");
    }
  }
  return table;
}

/// Fills each class's polysemy_counts from the table; aliases missing from it stay empty.
inline void attach_polysemy(BimodalDictionary& dict, const std::map<std::string, std::int64_t>& table) {
  for (auto& c : dict.classes) {
    c.polysemy_counts.clear();
    for (const auto& alias : c.aliases) {
      auto it = table.find(alias);
      c.polysemy_counts.push_back(it == table.end() ? std::nullopt : std::optional<std::int64_t>(it->second));
    }
  }
}

/// Split output: class_id, fold_index, split. Rows grouped by fold, class ids sorted.
inline void write_splits(const std::vector<SplitAssignment>& folds, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "class_id\tfold_index\tsplit\n";
  for (const auto& a : folds) {
    std::vector<std::pair<std::string, Split>> rows;
    for (Split s : {Split::train, Split::val, Split::test}) {
      for (const auto& id : a.part(s)) rows.emplace_back(id, s);
    }
    std::sort(rows.begin(), rows.end());
    for (const auto& [id, s] : rows) out << id << '\t' << a.fold_index << '\t' << to_string(s) << '\n';
  }
}

inline std::vector<SplitAssignment> read_splits(const std::filesystem::path& path, std::uint64_t seed = 0) {
  std::map<int, SplitAssignment> folds;
  for (const auto& row : detail::read_tsv(path, 3, "class_id")) {
    const int fold = static_cast<int>(detail::parse_int(row.fields[1], path, row.line_no));
    auto& a = folds[fold];
    a.fold_index = fold;
    a.fold_seed = seed;
    switch (parse_split(row.fields[2])) {
      case Split::train: a.train.push_back(row.fields[0]); break;
      case Split::val: a.val.push_back(row.fields[0]); break;
      case Split::test: a.test.push_back(row.fields[0]); break;
    }
  }
  std::vector<SplitAssignment> out;
  for (auto& [_, a] : folds) {
    std::sort(a.train.begin(), a.train.end());
    std::sort(a.val.begin(), a.val.end());
    std::sort(a.test.begin(), a.test.end());
    out.push_back(std::move(a));
  }
  return out;
}

/// Pairs file: source_label, target_label.
inline std::vector<LabelPair> read_pairs(const std::filesystem::path& path) {
  std::vector<LabelPair> pairs;
  for (auto& row : detail::read_tsv(path, 2, "source_label")) {
    if (row.fields[0].empty() || row.fields[1].empty()) {
      throw Error(ErrorKind::format, path.string() + ":" + std::to_string(row.line_no) + ": empty label");
    }
    pairs.emplace_back(std::move(row.fields[0]), std::move(row.fields[1]));
  }
  return pairs;
}

inline void write_pairs(const std::vector<LabelPair>& pairs, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  for (const auto& [s, t] : pairs) out << s << '\t' << t << '\n';
}

}  // namespace xalign
