#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xalign/detail/binary_io.hpp"
#include "xalign/dictionary.hpp"
#include "xalign/error.hpp"
#include "xalign/log.hpp"
#include "xalign/pca.hpp"
#include "xalign/procrustes.hpp"
#include "xalign/space.hpp"

namespace xalign {

/**
 * Source-to-target mapping: preprocessing, optional PCA on the larger side,
 * then the orthogonal map in the common space. At most one PCA is present.
 */
struct AlignmentModel {
  std::optional<PcaModel> source_pca;
  std::optional<PcaModel> target_pca;
  OrthogonalMap map;
  Preprocessing preprocessing = Preprocessing::unit_l2;
  Index common_dim = 0;

  Index source_dim() const { return source_pca ? source_pca->dim() : common_dim; }
  Index target_dim() const { return target_pca ? target_pca->dim() : common_dim; }
};

/// Which rows the larger side's PCA is fitted on.
enum class PcaFit : std::uint8_t { train_rows, all_rows };

/// How a class with several aliases contributes Procrustes rows.
enum class MultiAlias : std::uint8_t {
  repeat,   // one row per class-alias pair, the source vector repeated
  average   // one row per class, target = mean of its alias vectors
};

struct AlignOptions {
  PcaFit pca_fit = PcaFit::train_rows;
  MultiAlias multi_alias = MultiAlias::repeat;
  bool request_pca = false;  // has no effect when dimensions already agree
};

namespace detail {

constexpr Index kApplyBlockRows = 512;

// Fixed row blocks keep per-row results independent of how callers batch.
inline RowMatrixF project_rows(const RowMatrixF& in, const PcaModel* pca, const RowMatrixD* omega) {
  const Index out_dim = omega ? omega->cols() : (pca ? pca->k() : in.cols());
  RowMatrixF out(in.rows(), out_dim);
  for (Index start = 0; start < in.rows(); start += kApplyBlockRows) {
    const Index len = std::min(kApplyBlockRows, in.rows() - start);
    RowMatrixD block = in.middleRows(start, len).cast<double>();
    if (pca) block = apply_pca(*pca, block);
    if (omega) block = block * *omega;
    out.middleRows(start, len) = block.cast<float>();
  }
  return out;
}

}  // namespace detail

/// Preprocessing, source PCA (if any), then Omega. Labels are unchanged.
inline EmbeddingSpace apply_map(const AlignmentModel& model, const EmbeddingSpace& space) {
  if (space.dim() != model.source_dim()) {
    throw Error(ErrorKind::shape, "model expects source dimension " + std::to_string(model.source_dim()) +
                                      ", space has " + std::to_string(space.dim()));
  }
  const auto prepared = preprocess(space, model.preprocessing);
  const PcaModel* pca = model.source_pca ? &*model.source_pca : nullptr;
  return EmbeddingSpace(space.labels(), detail::project_rows(prepared.vectors(), pca, &model.map.omega));
}

/// Brings a target-side space (e.g. the candidate vocabulary) into the common space.
inline EmbeddingSpace apply_target(const AlignmentModel& model, const EmbeddingSpace& space) {
  if (space.dim() != model.target_dim()) {
    throw Error(ErrorKind::shape, "model expects target dimension " + std::to_string(model.target_dim()) +
                                      ", space has " + std::to_string(space.dim()));
  }
  auto prepared = preprocess(space, model.preprocessing);
  if (!model.target_pca) return prepared;
  return EmbeddingSpace(space.labels(), detail::project_rows(prepared.vectors(), &*model.target_pca, nullptr));
}

/**
 * Fits the full alignment from labeled pairs.
 *
 * Both spaces are preprocessed whole, then the paired rows are gathered. If
 * the dimensions differ, the larger side is reduced by PCA to the smaller
 * dimension, fitted on the distinct training rows of that side (or on all of
 * its rows with PcaFit::all_rows). Omega is fitted on the resulting pairs.
 */
inline AlignmentModel fit_alignment(const EmbeddingSpace& source, const EmbeddingSpace& target,
                                    const std::vector<LabelPair>& pairs, Preprocessing preprocessing,
                                    const AlignOptions& options = {}) {
  if (pairs.size() < 2) {
    throw Error(ErrorKind::parameter, "alignment needs at least 2 pairs, got " + std::to_string(pairs.size()));
  }
  for (const auto& [s, t] : pairs) {
    if (!source.find(s)) throw Error(ErrorKind::lookup, "source label '" + s + "' not in source space");
    if (!target.find(t)) throw Error(ErrorKind::lookup, "target label '" + t + "' not in target space");
  }

  const auto src = preprocess(source, preprocessing);
  const auto tgt = preprocess(target, preprocessing);

  // Gather paired rows.
  std::vector<std::string> src_rows;
  std::vector<std::vector<std::string>> tgt_groups;
  if (options.multi_alias == MultiAlias::repeat) {
    for (const auto& [s, t] : pairs) {
      src_rows.push_back(s);
      tgt_groups.push_back({t});
    }
  } else {
    std::map<std::string, std::size_t> slot;
    for (const auto& [s, t] : pairs) {
      auto [it, inserted] = slot.emplace(s, src_rows.size());
      if (inserted) {
        src_rows.push_back(s);
        tgt_groups.emplace_back();
      }
      tgt_groups[it->second].push_back(t);
    }
  }

  const Index n = static_cast<Index>(src_rows.size());
  RowMatrixD A(n, src.dim());
  RowMatrixD B(n, tgt.dim());
  for (Index i = 0; i < n; ++i) {
    A.row(i) = src.vectors().row(src.index_of(src_rows[static_cast<std::size_t>(i)])).cast<double>();
    B.row(i).setZero();
    const auto& group = tgt_groups[static_cast<std::size_t>(i)];
    for (const auto& t : group) B.row(i) += tgt.vectors().row(tgt.index_of(t)).cast<double>();
    B.row(i) /= static_cast<double>(group.size());
  }

  AlignmentModel model;
  model.preprocessing = preprocessing;
  model.common_dim = std::min(src.dim(), tgt.dim());

  const auto fit_side_pca = [&](const EmbeddingSpace& side, const std::vector<std::string>& train_labels) {
    if (options.pca_fit == PcaFit::all_rows) return fit_pca(side.vectors(), model.common_dim);
    std::vector<std::string> distinct;
    std::set<std::string> seen;
    for (const auto& l : train_labels) {
      if (seen.insert(l).second) distinct.push_back(l);
    }
    return fit_pca(side.select(distinct), model.common_dim);
  };

  if (src.dim() > tgt.dim()) {
    model.source_pca = fit_side_pca(src, src_rows);
    A = apply_pca(*model.source_pca, A);
  } else if (tgt.dim() > src.dim()) {
    std::vector<std::string> tgt_labels;
    for (const auto& [s, t] : pairs) tgt_labels.push_back(t);
    model.target_pca = fit_side_pca(tgt, tgt_labels);
    B = apply_pca(*model.target_pca, B);
  } else if (options.request_pca) {
    warn("source and target dimensions agree (" + std::to_string(src.dim()) + "); PCA request ignored");
  }

  model.map = fit_procrustes(A, B);
  return model;
}

// ---------------------------------------------------------------------------
// Model file, little-endian:
//   "MAP1" | u32 common_dim | u8 flags
//   flags: bit0 source PCA present, bit1 target PCA present, bits2-3 preprocessing
//   each present PCA: u32 k | u32 d | mean f64[d] | components f64[k*d] | variances f64[k]
//   omega f64[common_dim^2], row-major

namespace detail {

inline void write_pca(std::ostream& out, const PcaModel& pca) {
  write_le(out, static_cast<std::uint32_t>(pca.k()));
  write_le(out, static_cast<std::uint32_t>(pca.dim()));
  for (Index i = 0; i < pca.dim(); ++i) write_f64(out, pca.mean(i));
  for (Index r = 0; r < pca.k(); ++r) {
    for (Index c = 0; c < pca.dim(); ++c) write_f64(out, pca.components(r, c));
  }
  for (Index i = 0; i < pca.k(); ++i) write_f64(out, pca.explained_variance(i));
}

inline PcaModel read_pca(std::istream& in) {
  const auto k = read_le<std::uint32_t>(in, "PCA k");
  const auto d = read_le<std::uint32_t>(in, "PCA d");
  if (k == 0 || d == 0 || k > d) throw Error(ErrorKind::format, "invalid PCA block shape");
  PcaModel pca;
  pca.mean.resize(d);
  for (Index i = 0; i < d; ++i) pca.mean(i) = read_f64(in, "PCA mean");
  pca.components.resize(k, d);
  for (Index r = 0; r < k; ++r) {
    for (Index c = 0; c < d; ++c) pca.components(r, c) = read_f64(in, "PCA components");
  }
  pca.explained_variance.resize(k);
  for (Index i = 0; i < k; ++i) pca.explained_variance(i) = read_f64(in, "PCA variances");
  return pca;
}

}  // namespace detail

inline void save_model(const AlignmentModel& model, const std::filesystem::path& path) {
  if (model.source_pca && model.target_pca) {
    throw Error(ErrorKind::validation, "alignment model may reduce at most one side");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write("MAP1", 4);
  detail::write_le(out, static_cast<std::uint32_t>(model.common_dim));
  std::uint8_t flags = static_cast<std::uint8_t>(static_cast<unsigned>(model.preprocessing) << 2);
  if (model.source_pca) flags |= 0x1;
  if (model.target_pca) flags |= 0x2;
  detail::write_le(out, flags);
  if (model.source_pca) detail::write_pca(out, *model.source_pca);
  if (model.target_pca) detail::write_pca(out, *model.target_pca);
  for (Index r = 0; r < model.common_dim; ++r) {
    for (Index c = 0; c < model.common_dim; ++c) detail::write_f64(out, model.map.omega(r, c));
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

inline AlignmentModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  detail::expect_magic(in, "MAP1", path.string());
  AlignmentModel model;
  model.common_dim = detail::read_le<std::uint32_t>(in, "common_dim");
  const auto flags = detail::read_le<std::uint8_t>(in, "flags");
  if ((flags & 0xF0) != 0 || (flags & 0x3) == 0x3 || ((flags >> 2) & 0x3) == 3) {
    throw Error(ErrorKind::format, path.string() + ": invalid flags byte");
  }
  if (model.common_dim == 0) throw Error(ErrorKind::format, path.string() + ": common_dim is 0");
  model.preprocessing = static_cast<Preprocessing>((flags >> 2) & 0x3);
  if (flags & 0x1) model.source_pca = detail::read_pca(in);
  if (flags & 0x2) model.target_pca = detail::read_pca(in);
  for (const auto* pca : {model.source_pca ? &*model.source_pca : nullptr,
                          model.target_pca ? &*model.target_pca : nullptr}) {
    if (pca && pca->k() != model.common_dim) {
      throw Error(ErrorKind::consistency, path.string() + ": PCA k does not match common_dim");
    }
  }
  model.map.omega.resize(model.common_dim, model.common_dim);
  for (Index r = 0; r < model.common_dim; ++r) {
    for (Index c = 0; c < model.common_dim; ++c) model.map.omega(r, c) = detail::read_f64(in, "omega");
  }
  detail::expect_eof(in, path.string());
  if (!model.map.omega.allFinite()) throw Error(ErrorKind::validation, path.string() + ": non-finite omega");
  return model;
}

}  // namespace xalign
