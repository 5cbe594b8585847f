#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xalign/error.hpp"

namespace xalign {

using Index = Eigen::Index;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/**
 * A labeled N x d matrix of float32 row vectors.
 *
 * Invariants are checked at construction: N > 0, d > 0, labels unique and
 * non-empty, every value finite. Instances are immutable.
 */
class EmbeddingSpace {
 public:
  EmbeddingSpace(std::vector<std::string> labels, RowMatrixF vectors)
      : labels_(std::move(labels)), vectors_(std::move(vectors)) {
    if (vectors_.rows() == 0 || vectors_.cols() == 0) {
      throw Error(ErrorKind::validation, "embedding space must have N > 0 and d > 0");
    }
    if (static_cast<Index>(labels_.size()) != vectors_.rows()) {
      throw Error(ErrorKind::consistency, std::to_string(labels_.size()) + " labels for " +
                                              std::to_string(vectors_.rows()) + " rows");
    }
    index_.reserve(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty()) throw Error(ErrorKind::validation, "empty label at row " + std::to_string(i));
      if (!index_.emplace(labels_[i], static_cast<Index>(i)).second) {
        throw Error(ErrorKind::validation, "duplicate label '" + labels_[i] + "'");
      }
    }
    for (Index r = 0; r < vectors_.rows(); ++r) {
      if (!vectors_.row(r).allFinite()) {
        throw Error(ErrorKind::validation, "non-finite value in row '" + labels_[r] + "'");
      }
    }
  }

  Index rows() const { return vectors_.rows(); }
  Index dim() const { return vectors_.cols(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(Index row) const { return labels_[static_cast<std::size_t>(row)]; }
  const RowMatrixF& vectors() const { return vectors_; }

  std::optional<Index> find(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Index index_of(std::string_view label) const {
    if (auto row = find(label)) return *row;
    throw Error(ErrorKind::lookup, "unknown label '" + std::string(label) + "'");
  }

  /// Rows for the given labels, in order.
  RowMatrixF select(const std::vector<std::string>& labels) const {
    RowMatrixF out(static_cast<Index>(labels.size()), dim());
    for (std::size_t i = 0; i < labels.size(); ++i) out.row(static_cast<Index>(i)) = vectors_.row(index_of(labels[i]));
    return out;
  }

  friend bool operator==(const EmbeddingSpace& a, const EmbeddingSpace& b) {
    return a.labels_ == b.labels_ && a.vectors_.rows() == b.vectors_.rows() &&
           a.vectors_.cols() == b.vectors_.cols() && a.vectors_ == b.vectors_;
  }

 private:
  std::vector<std::string> labels_;
  RowMatrixF vectors_;
  std::unordered_map<std::string, Index> index_;
};

enum class Preprocessing : std::uint8_t { none = 0, unit_l2 = 1, center_unit_l2 = 2 };

inline const char* to_string(Preprocessing mode) {
  switch (mode) {
    case Preprocessing::none: return "none";
    case Preprocessing::unit_l2: return "unit";
    case Preprocessing::center_unit_l2: return "center-unit";
  }
  return "?";
}

inline Preprocessing parse_preprocessing(std::string_view text) {
  if (text == "none") return Preprocessing::none;
  if (text == "unit" || text == "unit-l2") return Preprocessing::unit_l2;
  if (text == "center-unit" || text == "center-then-unit-l2") return Preprocessing::center_unit_l2;
  throw Error(ErrorKind::parameter, "unknown preprocessing mode '" + std::string(text) + "'");
}

/**
 * Row normalization in float64, rounded back to float32.
 *
 * center_unit_l2 subtracts the column mean of `space` itself before
 * normalizing. A row that is exactly zero when normalization is due raises a
 * degenerate-input error naming the row's label.
 */
inline EmbeddingSpace preprocess(const EmbeddingSpace& space, Preprocessing mode) {
  if (mode == Preprocessing::none) return space;

  const RowMatrixF& in = space.vectors();
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(in.cols());
  if (mode == Preprocessing::center_unit_l2) {
    for (Index r = 0; r < in.rows(); ++r) mean += in.row(r).cast<double>();
    mean /= static_cast<double>(in.rows());
  }

  RowMatrixF out(in.rows(), in.cols());
  Eigen::RowVectorXd row(in.cols());
  for (Index r = 0; r < in.rows(); ++r) {
    row = in.row(r).cast<double>() - mean;
    const double norm = row.norm();
    if (!(norm > 0.0)) {
      throw Error(ErrorKind::degenerate, "zero vector in row '" + space.label(r) + "' cannot be unit-normalized");
    }
    out.row(r) = (row / norm).cast<float>();
  }
  return EmbeddingSpace(space.labels(), std::move(out));
}

}  // namespace xalign
