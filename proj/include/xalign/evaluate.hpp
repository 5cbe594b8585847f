#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "xalign/align.hpp"
#include "xalign/retrieval.hpp"
#include "xalign/space.hpp"

namespace xalign {

/// Which mapped-source rows define r_S for CSLS.
enum class CslsReference : std::uint8_t { eval_queries, all_sources };

struct EvalOptions {
  Metric metric = Metric::csls;
  CslsParams csls;
  std::vector<Index> ks{1, 10, 100};
  CslsReference reference = CslsReference::eval_queries;
  RetrievalOptions retrieval;
};

struct EvalResult {
  std::vector<std::string> queries;  // source labels, first-appearance order in the pairs
  EmbeddingSpace candidates;         // in the common space
  GoldSets gold;
  RankedRetrieval ranked;
  std::vector<Index> ks;             // clamped to the candidate count
  std::vector<double> precision;     // percent, aligned with ks
};

/**
 * Maps the held-out sources, builds the candidate vocabulary (target rows,
 * then `extra` rows with new labels; the union is preprocessed jointly) and
 * retrieves at least the top 100 so per-query dumps can report hit@100.
 */
inline EvalResult evaluate(const AlignmentModel& model, const EmbeddingSpace& source, const EmbeddingSpace& target,
                           const std::optional<EmbeddingSpace>& extra, const std::vector<LabelPair>& eval_pairs,
                           const EvalOptions& options) {
  if (eval_pairs.empty()) throw Error(ErrorKind::insufficient, "no evaluation pairs");
  auto queries = query_labels(eval_pairs);
  for (const auto& q : queries) {
    if (!source.find(q)) throw Error(ErrorKind::lookup, "source label '" + q + "' not in source space");
  }

  const auto mapped_all = apply_map(model, source);
  const auto candidates = apply_target(model, extra ? union_spaces(target, *extra) : target);
  auto gold = gold_sets(queries, eval_pairs, candidates);
  const RowMatrixF query_rows = mapped_all.select(queries);

  const Index C = candidates.rows();
  std::vector<Index> ks;
  for (Index k : options.ks) ks.push_back(std::min(k, C));
  const Index k_max = std::min<Index>(C, std::max<Index>(100, *std::max_element(ks.begin(), ks.end())));

  RankedRetrieval ranked;
  if (options.metric == Metric::cosine) {
    ranked = topk_cosine(query_rows, candidates.vectors(), k_max, options.retrieval);
  } else if (options.reference == CslsReference::all_sources) {
    ranked = topk_csls(query_rows, candidates.vectors(), k_max, options.csls, options.retrieval,
                       Eigen::Ref<const RowMatrixF>(mapped_all.vectors()));
  } else {
    ranked = topk_csls(query_rows, candidates.vectors(), k_max, options.csls, options.retrieval);
  }
  auto precision = precision_at_k(ranked, gold, ks);
  return {std::move(queries), candidates, std::move(gold), std::move(ranked), std::move(ks), std::move(precision)};
}

}  // namespace xalign
