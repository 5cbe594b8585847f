#pragma once

// Report emitters: evaluation JSON, per-query TSV, binned tables (TSV + JSON).
// Numbers are written in shortest round-trip form.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "xalign/analysis.hpp"
#include "xalign/detail/tsv.hpp"
#include "xalign/evaluate.hpp"

namespace xalign {

inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

/// Fold index, or the "mean" marker for averaged reports.
using FoldTag = std::variant<int, std::string>;

struct EvalReport {
  Metric metric = Metric::csls;
  Index csls_k = 10;
  std::vector<Index> ks;
  std::vector<double> precision;
  Index n_queries = 0;
  Index n_candidates = 0;
  FoldTag fold = 0;
  std::uint64_t seed = 0;
};

inline EvalReport make_eval_report(const EvalResult& r, const EvalOptions& opts, FoldTag fold, std::uint64_t seed) {
  return {opts.metric, opts.csls.K, r.ks, r.precision, static_cast<Index>(r.queries.size()),
          r.candidates.rows(), std::move(fold), seed};
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["metric"] = to_string(r.metric);
  j["csls_k"] = r.csls_k;
  j["ks"] = r.ks;
  nlohmann::ordered_json precision = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) precision[std::to_string(r.ks[i])] = r.precision[i];
  j["precision"] = precision;
  j["n_queries"] = r.n_queries;
  j["n_candidates"] = r.n_candidates;
  std::visit([&](const auto& f) { j["fold"] = f; }, r.fold);
  j["seed"] = r.seed;
  return j;
}

/// Arithmetic mean of precision and counts across folds.
inline EvalReport mean_eval_report(const std::vector<EvalReport>& folds) {
  if (folds.empty()) throw Error(ErrorKind::insufficient, "no fold reports to average");
  EvalReport mean = folds.front();
  mean.fold = std::string("mean");
  const double n = static_cast<double>(folds.size());
  std::fill(mean.precision.begin(), mean.precision.end(), 0.0);
  double queries = 0;
  for (const auto& f : folds) {
    if (f.ks != mean.ks) throw Error(ErrorKind::consistency, "fold reports use different ks");
    for (std::size_t i = 0; i < f.precision.size(); ++i) mean.precision[i] += f.precision[i] / n;
    queries += static_cast<double>(f.n_queries) / n;
  }
  mean.n_queries = static_cast<Index>(std::llround(queries));
  return mean;
}

inline void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << j.dump(2) << '\n';
}

/// query_label, rank_of_best_gold (0 = not within the retrieved list), hit@1, hit@10, hit@100.
inline void write_query_dump(const EvalResult& r, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "query_label\trank_of_best_gold\thit@1\thit@10\thit@100\n";
  for (std::size_t q = 0; q < r.queries.size(); ++q) {
    const Index rank = rank_of_best_gold(r.ranked.lists[q], r.gold[q]);
    const auto hit = [rank](Index k) { return rank >= 1 && rank <= k ? 1 : 0; };
    out << r.queries[q] << '\t' << rank << '\t' << hit(1) << '\t' << hit(10) << '\t' << hit(100) << '\n';
  }
}

inline nlohmann::ordered_json to_json(const BinnedReport& r) {
  nlohmann::ordered_json j;
  j["bin_kind"] = to_string(r.kind);
  j["mode"] = to_string(r.mode);
  j["ks"] = r.ks;
  j["bins"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json b;
    b["label"] = row.label;
    b["query_count"] = row.query_count;
    b["pair_count"] = row.pair_count;
    nlohmann::ordered_json p = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < r.ks.size(); ++i) p[std::to_string(r.ks[i])] = row.precision[i];
    b["precision"] = p;
    j["bins"].push_back(b);
  }
  j["uncovered"] = r.uncovered;
  return j;
}

/// Table with one row per bin: bin, queries, pairs, P@k...
inline void write_binned_tsv(const BinnedReport& r, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << "bin\tqueries\tpairs";
  for (Index k : r.ks) out << "\tP@" << k;
  out << '\n';
  for (const auto& row : r.rows) {
    out << row.label << '\t' << format_number(row.query_count) << '\t' << format_number(row.pair_count);
    for (double p : row.precision) out << '\t' << format_number(p);
    out << '\n';
  }
}

/// Writes `<stem>.tsv` and its `<stem>.json` twin.
inline void write_binned_report(const BinnedReport& r, const std::filesystem::path& tsv_path) {
  write_binned_tsv(r, tsv_path);
  auto json_path = tsv_path;
  json_path.replace_extension(".json");
  write_json(to_json(r), json_path);
}

}  // namespace xalign
