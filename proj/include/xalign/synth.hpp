#pragma once

// Seeded synthetic embedding spaces with known ground truth.
//
// Streams of Xoshiro256(seed, stream): 0 source rows, 1 rotation, 2 target
// noise, 3 independent target rows. Matrices are filled row-major.

#include <Eigen/Core>
#include <Eigen/QR>

#include <cstdint>
#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "xalign/dictionary.hpp"
#include "xalign/error.hpp"
#include "xalign/procrustes.hpp"
#include "xalign/rng.hpp"
#include "xalign/space.hpp"

namespace xalign {

enum class Relation : std::uint8_t { isomorphic, unrelated, hubby };

inline const char* to_string(Relation r) {
  switch (r) {
    case Relation::isomorphic: return "isomorphic";
    case Relation::unrelated: return "unrelated";
    case Relation::hubby: return "hubby";
  }
  return "?";
}

inline Relation parse_relation(std::string_view text) {
  if (text == "isomorphic") return Relation::isomorphic;
  if (text == "unrelated") return Relation::unrelated;
  if (text == "hubby") return Relation::hubby;
  throw Error(ErrorKind::parameter, "unknown relation '" + std::string(text) + "'");
}

struct SynthConfig {
  Index n = 1000;
  Index d_source = 64;
  Index d_target = 64;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  Relation relation = Relation::isomorphic;
};

struct SynthSpaces {
  EmbeddingSpace source;
  EmbeddingSpace target;
  std::vector<LabelPair> pairs;
  std::optional<OrthogonalMap> rotation;  // ground truth for isomorphic spaces
};

namespace detail {

inline RowMatrixD gaussian(Index rows, Index cols, Xoshiro256& rng) {
  RowMatrixD m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with R's
// diagonal signs folded into Q.
inline OrthogonalMap haar_orthogonal(Index d, Xoshiro256& rng) {
  const Eigen::MatrixXd g = gaussian(d, d, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return OrthogonalMap{q};
}

inline std::vector<std::string> synth_labels(Index n, const char* prefix) {
  int width = 5;
  for (Index m = n - 1; m >= 100000; m /= 10) ++width;
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto digits = std::to_string(i);
    labels.push_back(prefix + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(width, digits.size()), '0') + digits);
  }
  return labels;
}

inline std::vector<LabelPair> identity_pairs(const std::vector<std::string>& labels) {
  std::vector<LabelPair> pairs;
  pairs.reserve(labels.size());
  for (const auto& l : labels) pairs.emplace_back(l, l);
  return pairs;
}

inline void check_config(const SynthConfig& c) {
  if (c.n < 1 || c.d_source < 1 || c.d_target < 1) throw Error(ErrorKind::parameter, "n and dimensions must be >= 1");
  if (!(c.noise_sigma >= 0.0)) throw Error(ErrorKind::parameter, "noise_sigma must be >= 0");
}

}  // namespace detail

inline OrthogonalMap random_orthogonal(Index d, std::uint64_t seed) {
  if (d < 1) throw Error(ErrorKind::parameter, "dimension must be >= 1");
  Xoshiro256 rng(seed, 0);
  return detail::haar_orthogonal(d, rng);
}

/**
 * Target = source * Q + noise, with Q Haar-random at d_source. When
 * d_target < d_source the rotated rows are truncated to their first d_target
 * coordinates. Labels coincide on both sides and pairs are the identity.
 */
inline SynthSpaces gen_paired_spaces(const SynthConfig& config) {
  detail::check_config(config);
  if (config.relation != Relation::isomorphic) throw Error(ErrorKind::parameter, "gen_paired_spaces needs relation=isomorphic");
  if (config.d_target > config.d_source) {
    throw Error(ErrorKind::parameter, "isomorphic generation needs d_source >= d_target");
  }
  Xoshiro256 src_rng(config.seed, 0), rot_rng(config.seed, 1), noise_rng(config.seed, 2);
  const RowMatrixD source = detail::gaussian(config.n, config.d_source, src_rng);
  auto rotation = detail::haar_orthogonal(config.d_source, rot_rng);
  RowMatrixD target = (source * rotation.omega).leftCols(config.d_target);
  if (config.noise_sigma > 0.0) target += config.noise_sigma * detail::gaussian(config.n, config.d_target, noise_rng);

  auto labels = detail::synth_labels(config.n, "c");
  auto pairs = detail::identity_pairs(labels);
  return {EmbeddingSpace(labels, source.cast<float>()), EmbeddingSpace(labels, target.cast<float>()),
          std::move(pairs), std::move(rotation)};
}

/// Independent Gaussian spaces; the identity pairing carries no signal.
inline SynthSpaces gen_unrelated_spaces(const SynthConfig& config) {
  detail::check_config(config);
  if (config.relation != Relation::unrelated) throw Error(ErrorKind::parameter, "gen_unrelated_spaces needs relation=unrelated");
  Xoshiro256 src_rng(config.seed, 0), tgt_rng(config.seed, 3);
  const RowMatrixD source = detail::gaussian(config.n, config.d_source, src_rng);
  const RowMatrixD target = detail::gaussian(config.n, config.d_target, tgt_rng);
  auto labels = detail::synth_labels(config.n, "c");
  auto pairs = detail::identity_pairs(labels);
  return {EmbeddingSpace(labels, source.cast<float>()), EmbeddingSpace(labels, target.cast<float>()),
          std::move(pairs), std::nullopt};
}

/**
 * A hub instance in one shared space (d_source; no map needed). Queries form
 * a cluster q_i = c + z_i / 2 around a random centre c; each query's gold
 * candidate is q_i + noise_sigma * eta_i, and one extra candidate labelled
 * "hub" sits at the query centroid.
 */
inline SynthSpaces gen_hubby_spaces(const SynthConfig& config) {
  detail::check_config(config);
  if (config.relation != Relation::hubby) throw Error(ErrorKind::parameter, "gen_hubby_spaces needs relation=hubby");
  const Index n = config.n;
  const Index d = config.d_source;
  Xoshiro256 src_rng(config.seed, 0), noise_rng(config.seed, 2);
  const RowMatrixD centre = detail::gaussian(1, d, src_rng);
  RowMatrixD queries = 0.5 * detail::gaussian(n, d, src_rng);
  queries.rowwise() += centre.row(0);

  RowMatrixD candidates(n + 1, d);
  candidates.topRows(n) = queries;
  if (config.noise_sigma > 0.0) candidates.topRows(n) += config.noise_sigma * detail::gaussian(n, d, noise_rng);
  candidates.row(n) = queries.colwise().mean();

  auto labels = detail::synth_labels(n, "c");
  auto cand_labels = labels;
  cand_labels.emplace_back("hub");
  auto pairs = detail::identity_pairs(labels);
  return {EmbeddingSpace(labels, queries.cast<float>()), EmbeddingSpace(cand_labels, candidates.cast<float>()),
          std::move(pairs), std::nullopt};
}

inline SynthSpaces generate(const SynthConfig& config) {
  switch (config.relation) {
    case Relation::isomorphic: return gen_paired_spaces(config);
    case Relation::unrelated: return gen_unrelated_spaces(config);
    case Relation::hubby: return gen_hubby_spaces(config);
  }
  throw Error(ErrorKind::parameter, "unknown relation");
}

/// A dictionary that trivially passes the default filters: one alias per class.
inline std::vector<ConceptClass> synth_dictionary(const std::vector<LabelPair>& pairs, std::int64_t count = 1000) {
  std::vector<ConceptClass> classes;
  for (const auto& [s, t] : pairs) classes.push_back({s, {t}, count, {count}, {}});
  return classes;
}

}  // namespace xalign
