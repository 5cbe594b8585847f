#pragma once

// Exact cosine / CSLS nearest-neighbour retrieval and precision metrics.
//
// Similarities are float32 products of unit-normalized rows; neighbourhood
// means (r_T, r_S) and CSLS keys are accumulated in float64. Candidates are
// processed in fixed-size blocks, so results do not depend on the worker count.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <atomic>
#include <barrier>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "xalign/dictionary.hpp"
#include "xalign/error.hpp"
#include "xalign/space.hpp"

namespace xalign {

struct Neighbor {
  Index index = 0;
  float score = 0.0f;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Per-query candidate lists, best first (score descending, index ascending on ties).
struct RankedRetrieval {
  Index k_max = 0;
  Index n_candidates = 0;
  std::vector<std::vector<Neighbor>> lists;

  Index queries() const { return static_cast<Index>(lists.size()); }
};

struct CslsParams {
  Index K = 10;
};

enum class Metric : std::uint8_t { cosine, csls };

inline const char* to_string(Metric m) { return m == Metric::cosine ? "cosine" : "csls"; }

inline Metric parse_metric(std::string_view text) {
  if (text == "cosine") return Metric::cosine;
  if (text == "csls") return Metric::csls;
  throw Error(ErrorKind::parameter, "unknown metric '" + std::string(text) + "'");
}

struct RetrievalOptions {
  int workers = 0;  // 0: XALIGN_THREADS if set, else hardware concurrency
};

/// Worker count from XALIGN_THREADS (a cap), falling back to hardware concurrency.
inline int default_workers() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("XALIGN_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) return cap;
  }
  return hw;
}

/// Rows scaled to unit L2 norm (norm taken in float64). Zero rows are rejected.
inline RowMatrixF normalize_rows(const Eigen::Ref<const RowMatrixF>& m, const char* what) {
  RowMatrixF out(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).cast<double>().norm();
    if (!(norm > 0.0)) {
      throw Error(ErrorKind::degenerate, std::string(what) + " row " + std::to_string(r) + " has zero norm");
    }
    out.row(r) = (m.row(r).cast<double>() / norm).cast<float>();
  }
  return out;
}

namespace detail {

struct Keyed {
  double key;
  Index index;
};

// Strict total order: higher key first, lower index on ties.
inline bool better(const Keyed& a, const Keyed& b) {
  return a.key > b.key || (a.key == b.key && a.index < b.index);
}

// Fixed-capacity heap of the best `cap` entries; heap top is the worst kept.
// `threshold` mirrors the top key once full (-inf before), letting callers
// skip the heap for entries that cannot enter.
inline void offer(Keyed* heap, Index cap, Index& size, double& threshold, const Keyed& item) {
  if (size < cap) {
    heap[size++] = item;
    std::push_heap(heap, heap + size, better);
  } else if (better(item, heap[0])) {
    std::pop_heap(heap, heap + size, better);
    heap[size - 1] = item;
    std::push_heap(heap, heap + size, better);
  } else {
    return;
  }
  if (size == cap) threshold = heap[0].key;
}

// Min-heap of the `cap` largest values, same threshold convention.
inline void offer_value(float* heap, Index cap, Index& size, float& threshold, float value) {
  if (size < cap) {
    heap[size++] = value;
    std::push_heap(heap, heap + size, std::greater<float>());
  } else if (value > heap[0]) {
    std::pop_heap(heap, heap + size, std::greater<float>());
    heap[size - 1] = value;
    std::push_heap(heap, heap + size, std::greater<float>());
  } else {
    return;
  }
  if (size == cap) threshold = heap[0];
}

// Mean of values already reduced to the top K, summed largest first.
inline double ordered_mean(std::vector<float>& values) {
  std::sort(values.begin(), values.end(), std::greater<float>());
  double sum = 0.0;
  for (float v : values) sum += static_cast<double>(v);
  return sum / static_cast<double>(values.size());
}

inline double mean_of_top(const float* begin, Index n, Index K, std::vector<float>& scratch) {
  scratch.resize(static_cast<std::size_t>(K));
  Index size = 0;
  float threshold = -std::numeric_limits<float>::infinity();
  for (Index i = 0; i < n; ++i) {
    if (begin[i] > threshold || size < K) offer_value(scratch.data(), K, size, threshold, begin[i]);
  }
  return ordered_mean(scratch);
}

constexpr Index kQueryChunk = 128;

// Candidate block width: fixed for a given query count, never for a worker count.
inline Index candidate_block(Index queries) {
  const Index budget = Index{1} << 19;  // floats per similarity block
  return std::clamp<Index>(budget / std::max<Index>(queries, 1), 32, 256);
}

inline void run_blocks(Index blocks, int workers, const std::function<void(int, Index)>& body) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(blocks)));
  if (workers == 1) {
    for (Index b = 0; b < blocks; ++b) body(0, b);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index b = next++; b < blocks && !failed; b = next++) body(w, b);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline int resolve_workers(const RetrievalOptions& opts) {
  return opts.workers > 0 ? opts.workers : default_workers();
}

struct ScanResult {
  RankedRetrieval ranked;
  std::vector<double> r_target;  // per query, CSLS only
  std::vector<double> r_source;  // per candidate, CSLS only
};

/**
 * One pass over candidate blocks, all workers moving through the blocks in
 * lockstep. For each block: (1) similarities for fixed query chunks, (2) r_S
 * per candidate column, (3) per-query top-k updates, each query owned by one
 * worker. Chunk and block boundaries depend only on the problem size, so every
 * similarity value, and therefore the result, is independent of the worker count.
 *
 * For CSLS the ranking key is 2 cos - r_S; the per-query r_T is subtracted
 * afterwards, which cannot change the order. `given_r_source` substitutes a
 * precomputed r_S (reference batch).
 */
inline ScanResult scan(const RowMatrixF& qn, const RowMatrixF& cn, Index k, Metric metric, Index K,
                       const std::vector<double>* given_r_source, int workers) {
  const Index Q = qn.rows();
  const Index C = cn.rows();
  const bool csls = metric == Metric::csls;
  const bool compute_rs = csls && !given_r_source;
  const Index block = candidate_block(Q);
  const Index blocks = (C + block - 1) / block;
  const Index chunk = kQueryChunk;
  const Index chunks = (Q + chunk - 1) / chunk;
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max(chunks, Index{1}))));

  ScanResult result;
  if (csls) result.r_source = given_r_source ? *given_r_source : std::vector<double>(static_cast<std::size_t>(C), 0.0);

  constexpr double kNone = -std::numeric_limits<double>::infinity();
  std::vector<Keyed> top(static_cast<std::size_t>(Q * k));
  std::vector<Index> top_size(static_cast<std::size_t>(Q), 0);
  std::vector<double> top_thr(static_cast<std::size_t>(Q), kNone);
  std::vector<float> rt(static_cast<std::size_t>(csls ? Q * K : 0));
  std::vector<Index> rt_size(static_cast<std::size_t>(Q), 0);
  std::vector<float> rt_thr(static_cast<std::size_t>(Q), -std::numeric_limits<float>::infinity());
  std::array<Eigen::MatrixXf, 2> sims;  // column-major Q x block, double-buffered
  for (auto& m : sims) m.resize(Q, block);
  std::vector<std::vector<float>> scratch(static_cast<std::size_t>(workers));
  std::barrier sync(workers);

  const auto work = [&](int w) {
    for (Index b = 0; b < blocks; ++b) {
      const Index start = b * block;
      const Index len = std::min(block, C - start);
      auto& S = sims[static_cast<std::size_t>(b % 2)];
      for (Index c = w; c < chunks; c += workers) {
        const Index q0 = c * chunk;
        const Index qn_len = std::min(chunk, Q - q0);
        S.block(q0, 0, qn_len, len).noalias() = qn.middleRows(q0, qn_len) * cn.middleRows(start, len).transpose();
      }
      sync.arrive_and_wait();
      if (compute_rs) {
        for (Index j = w; j < len; j += workers) {
          result.r_source[static_cast<std::size_t>(start + j)] =
              mean_of_top(S.col(j).data(), Q, K, scratch[static_cast<std::size_t>(w)]);
        }
        sync.arrive_and_wait();
      }
      for (Index c = w; c < chunks; c += workers) {
        const Index q0 = c * chunk;
        const Index q1 = std::min(Q, q0 + chunk);
        for (Index j = 0; j < len; ++j) {
          const Index cand = start + j;
          const float* col = S.col(j).data();
          const double penalty = csls ? result.r_source[static_cast<std::size_t>(cand)] : 0.0;
          // Candidates arrive in increasing index order, so a key equal to the
          // threshold loses the tie and strict > is exact.
          for (Index q = q0; q < q1; ++q) {
            const auto qi = static_cast<std::size_t>(q);
            const float cs = col[q];
            if (csls && cs > rt_thr[qi]) offer_value(rt.data() + q * K, K, rt_size[qi], rt_thr[qi], cs);
            const double key = csls ? 2.0 * static_cast<double>(cs) - penalty : static_cast<double>(cs);
            if (key > top_thr[qi]) offer(top.data() + q * k, k, top_size[qi], top_thr[qi], {key, cand});
          }
        }
      }
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  result.ranked.k_max = k;
  result.ranked.n_candidates = C;
  result.ranked.lists.resize(static_cast<std::size_t>(Q));
  if (csls) result.r_target.assign(static_cast<std::size_t>(Q), 0.0);
  std::vector<Keyed> sorted;
  std::vector<float> values;
  for (Index q = 0; q < Q; ++q) {
    const auto qi = static_cast<std::size_t>(q);
    sorted.assign(top.begin() + q * k, top.begin() + q * k + top_size[qi]);
    std::sort(sorted.begin(), sorted.end(), better);
    double r_t = 0.0;
    if (csls) {
      values.assign(rt.begin() + q * K, rt.begin() + (q + 1) * K);
      r_t = ordered_mean(values);
      result.r_target[qi] = r_t;
    }
    auto& list = result.ranked.lists[qi];
    list.reserve(sorted.size());
    for (const auto& item : sorted) list.push_back({item.index, static_cast<float>(item.key - r_t)});
  }
  return result;
}

inline void check_retrieval_shapes(const Eigen::Ref<const RowMatrixF>& queries,
                                   const Eigen::Ref<const RowMatrixF>& candidates, Index k) {
  if (queries.rows() < 1 || candidates.rows() < 1) throw Error(ErrorKind::insufficient, "empty query or candidate set");
  if (queries.cols() != candidates.cols()) {
    throw Error(ErrorKind::shape, "queries have dimension " + std::to_string(queries.cols()) + ", candidates " +
                                      std::to_string(candidates.cols()));
  }
  if (k < 1 || k > candidates.rows()) {
    throw Error(ErrorKind::parameter, "k=" + std::to_string(k) + " outside [1, " + std::to_string(candidates.rows()) + "]");
  }
}

}  // namespace detail

/// Top-k candidates per query by cosine similarity.
inline RankedRetrieval topk_cosine(const Eigen::Ref<const RowMatrixF>& queries,
                                   const Eigen::Ref<const RowMatrixF>& candidates, Index k,
                                   const RetrievalOptions& opts = {}) {
  detail::check_retrieval_shapes(queries, candidates, k);
  const auto qn = normalize_rows(queries, "query");
  const auto cn = normalize_rows(candidates, "candidate");
  return detail::scan(qn, cn, k, Metric::cosine, 0, nullptr, detail::resolve_workers(opts)).ranked;
}

/**
 * For each anchor, the mean cosine to its K most similar rows of `others`.
 * With anchors = mapped queries and others = candidates this is r_T; with the
 * roles swapped it is r_S.
 */
inline std::vector<double> mean_topk_similarity(const Eigen::Ref<const RowMatrixF>& anchors,
                                                const Eigen::Ref<const RowMatrixF>& others, Index K,
                                                const RetrievalOptions& opts = {}) {
  if (anchors.cols() != others.cols()) throw Error(ErrorKind::shape, "anchors and others differ in dimension");
  if (K < 1 || K > others.rows()) {
    throw Error(ErrorKind::parameter, "K=" + std::to_string(K) + " outside [1, " + std::to_string(others.rows()) + "]");
  }
  const auto an = normalize_rows(anchors, "anchor");
  const auto on = normalize_rows(others, "other");
  constexpr Index block = 64;
  const Index blocks = (an.rows() + block - 1) / block;
  const int workers = std::max(1, std::min<int>(detail::resolve_workers(opts), static_cast<int>(blocks)));
  std::vector<double> out(static_cast<std::size_t>(an.rows()));
  std::vector<RowMatrixF> sims(static_cast<std::size_t>(workers));
  std::vector<std::vector<float>> scratch(static_cast<std::size_t>(workers));
  detail::run_blocks(blocks, workers, [&](int w, Index b) {
    const Index start = b * block;
    const Index len = std::min(block, an.rows() - start);
    auto& s = sims[static_cast<std::size_t>(w)];
    s.noalias() = an.middleRows(start, len) * on.transpose();
    for (Index i = 0; i < len; ++i) {
      out[static_cast<std::size_t>(start + i)] =
          detail::mean_of_top(s.row(i).data(), s.cols(), K, scratch[static_cast<std::size_t>(w)]);
    }
  });
  return out;
}

/**
 * Top-k candidates per query by CSLS:
 *   CSLS(q, t) = 2 cos(q, t) - r_T(q) - r_S(t)
 * r_T(q) averages q's K best candidate cosines; r_S(t) averages t's K best
 * cosines over `reference` (the query batch itself when not given).
 */
inline RankedRetrieval topk_csls(const Eigen::Ref<const RowMatrixF>& queries,
                                 const Eigen::Ref<const RowMatrixF>& candidates, Index k, const CslsParams& params,
                                 const RetrievalOptions& opts = {},
                                 std::optional<Eigen::Ref<const RowMatrixF>> reference = std::nullopt) {
  detail::check_retrieval_shapes(queries, candidates, k);
  if (params.K < 1 || params.K > candidates.rows()) {
    throw Error(ErrorKind::parameter, "CSLS K=" + std::to_string(params.K) + " outside [1, " +
                                          std::to_string(candidates.rows()) + "]");
  }
  const Index reference_rows = reference ? reference->rows() : queries.rows();
  if (params.K > reference_rows) {
    throw Error(ErrorKind::parameter, "CSLS K=" + std::to_string(params.K) + " exceeds the " +
                                          std::to_string(reference_rows) + " rows that define r_S");
  }
  const auto qn = normalize_rows(queries, "query");
  const auto cn = normalize_rows(candidates, "candidate");
  const int workers = detail::resolve_workers(opts);
  if (reference) {
    const auto r_source = mean_topk_similarity(candidates, *reference, params.K, opts);
    return detail::scan(qn, cn, k, Metric::csls, params.K, &r_source, workers).ranked;
  }
  return detail::scan(qn, cn, k, Metric::csls, params.K, nullptr, workers).ranked;
}

inline RankedRetrieval retrieve(const Eigen::Ref<const RowMatrixF>& queries,
                                const Eigen::Ref<const RowMatrixF>& candidates, Index k, Metric metric,
                                const CslsParams& params, const RetrievalOptions& opts = {}) {
  return metric == Metric::cosine ? topk_cosine(queries, candidates, k, opts)
                                  : topk_csls(queries, candidates, k, params, opts);
}

/// How many queries list each candidate within their top k.
inline std::vector<Index> neighbor_indegree(const RankedRetrieval& results, Index k) {
  if (k < 1 || k > results.k_max) throw Error(ErrorKind::parameter, "k exceeds k_max");
  std::vector<Index> counts(static_cast<std::size_t>(results.n_candidates), 0);
  for (const auto& list : results.lists) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
    for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(list[i].index)];
  }
  return counts;
}

using GoldSets = std::vector<std::vector<Index>>;

namespace detail {
inline void check_gold(const RankedRetrieval& results, const GoldSets& gold) {
  if (gold.size() != results.lists.size()) {
    throw Error(ErrorKind::shape, "gold sets for " + std::to_string(gold.size()) + " queries, results for " +
                                      std::to_string(results.lists.size()));
  }
  for (std::size_t q = 0; q < gold.size(); ++q) {
    if (gold[q].empty()) throw Error(ErrorKind::validation, "empty gold set for query " + std::to_string(q));
    for (Index g : gold[q]) {
      if (g < 0 || g >= results.n_candidates) {
        throw Error(ErrorKind::validation, "gold index " + std::to_string(g) + " out of range");
      }
    }
  }
}

inline bool hit_within(const std::vector<Neighbor>& list, const std::vector<Index>& gold, Index k) {
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (std::find(gold.begin(), gold.end(), list[i].index) != gold.end()) return true;
  }
  return false;
}
}  // namespace detail

/// 1-based rank of the first gold candidate, or 0 if none is within k_max.
inline Index rank_of_best_gold(const std::vector<Neighbor>& list, const std::vector<Index>& gold) {
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (std::find(gold.begin(), gold.end(), list[i].index) != gold.end()) return static_cast<Index>(i + 1);
  }
  return 0;
}

/**
 * Percentage of queries whose top k contains any of their gold candidates, for
 * each k in `ks` (same order).
 */
inline std::vector<double> precision_at_k(const RankedRetrieval& results, const GoldSets& gold,
                                          const std::vector<Index>& ks) {
  detail::check_gold(results, gold);
  std::vector<double> out;
  for (Index k : ks) {
    if (k < 1 || k > results.k_max) {
      throw Error(ErrorKind::parameter, "k=" + std::to_string(k) + " exceeds k_max=" + std::to_string(results.k_max));
    }
    std::size_t hits = 0;
    for (std::size_t q = 0; q < gold.size(); ++q) hits += detail::hit_within(results.lists[q], gold[q], k) ? 1 : 0;
    out.push_back(gold.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(gold.size()));
  }
  return out;
}

/// Per query, the fraction of its gold candidates found in the top k.
inline std::vector<double> per_alias_precision(const RankedRetrieval& results, const GoldSets& alias_gold, Index k) {
  detail::check_gold(results, alias_gold);
  if (k < 1 || k > results.k_max) throw Error(ErrorKind::parameter, "k exceeds k_max");
  std::vector<double> out;
  out.reserve(alias_gold.size());
  for (std::size_t q = 0; q < alias_gold.size(); ++q) {
    const auto& list = results.lists[q];
    const std::set<Index> gold(alias_gold[q].begin(), alias_gold[q].end());
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
    std::size_t found = 0;
    for (std::size_t i = 0; i < n; ++i) found += gold.contains(list[i].index) ? 1 : 0;
    out.push_back(static_cast<double>(found) / static_cast<double>(gold.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidate sets

/// Target-side candidate vocabulary with per-query gold indices.
struct CandidateSet {
  EmbeddingSpace space;
  GoldSets gold;
};

/// Rows of `primary`, then rows of `extra` whose labels are not already present.
inline EmbeddingSpace union_spaces(const EmbeddingSpace& primary, const EmbeddingSpace& extra) {
  if (primary.dim() != extra.dim()) {
    throw Error(ErrorKind::shape, "candidate spaces differ in dimension (" + std::to_string(primary.dim()) + " vs " +
                                      std::to_string(extra.dim()) + ")");
  }
  std::vector<Index> keep;
  for (Index r = 0; r < extra.rows(); ++r) {
    if (!primary.find(extra.label(r))) keep.push_back(r);
  }
  RowMatrixF vectors(primary.rows() + static_cast<Index>(keep.size()), primary.dim());
  vectors.topRows(primary.rows()) = primary.vectors();
  auto labels = primary.labels();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    vectors.row(primary.rows() + static_cast<Index>(i)) = extra.vectors().row(keep[i]);
    labels.push_back(extra.label(keep[i]));
  }
  return EmbeddingSpace(std::move(labels), std::move(vectors));
}

/// Distinct source labels of `pairs`, in first-appearance order.
inline std::vector<std::string> query_labels(const std::vector<LabelPair>& pairs) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& [s, _] : pairs) {
    if (seen.insert(s).second) out.push_back(s);
  }
  return out;
}

/// Gold candidate indices for each query: every target label paired with it.
inline GoldSets gold_sets(const std::vector<std::string>& queries, const std::vector<LabelPair>& pairs,
                          const EmbeddingSpace& candidates) {
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < queries.size(); ++i) slot.emplace(queries[i], i);
  GoldSets gold(queries.size());
  for (const auto& [s, t] : pairs) {
    auto it = slot.find(s);
    if (it == slot.end()) continue;
    const auto idx = candidates.find(t);
    if (!idx) throw Error(ErrorKind::lookup, "target label '" + t + "' not among candidates");
    auto& g = gold[it->second];
    if (std::find(g.begin(), g.end(), *idx) == g.end()) g.push_back(*idx);
  }
  return gold;
}

}  // namespace xalign
