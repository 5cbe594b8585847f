#pragma once

// Embedding interchange format.
//
//   <name>.emb        "EMB1" | u32 N | u32 d | N*d float32, row-major, little-endian
//   <name>.vocab.tsv  exactly N lines, line i = label of row i
//
// Both files are required; together they define one EmbeddingSpace.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "xalign/detail/binary_io.hpp"
#include "xalign/error.hpp"
#include "xalign/space.hpp"

namespace xalign {

inline std::filesystem::path vocab_path_for(const std::filesystem::path& emb_path) {
  auto p = emb_path;
  p.replace_extension(".vocab.tsv");
  return p;
}

inline void save_space(const EmbeddingSpace& space, const std::filesystem::path& path) {
  for (const auto& label : space.labels()) {
    if (label.find_first_of("\t\n\r") != std::string::npos) {
      throw Error(ErrorKind::validation, "label contains a tab or newline: '" + label + "'");
    }
  }
  if (space.rows() > std::numeric_limits<std::uint32_t>::max() ||
      space.dim() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::validation, "space too large for u32 header");
  }

  std::ofstream emb(path, std::ios::binary | std::ios::trunc);
  if (!emb) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  emb.write("EMB1", 4);
  detail::write_le(emb, static_cast<std::uint32_t>(space.rows()));
  detail::write_le(emb, static_cast<std::uint32_t>(space.dim()));
  const RowMatrixF& v = space.vectors();
  for (Index i = 0; i < v.size(); ++i) detail::write_f32(emb, v.data()[i]);
  if (!emb) throw Error(ErrorKind::io, "write failed for " + path.string());

  const auto vocab = vocab_path_for(path);
  std::ofstream voc(vocab, std::ios::binary | std::ios::trunc);
  if (!voc) throw Error(ErrorKind::io, "cannot open " + vocab.string() + " for writing");
  for (const auto& label : space.labels()) voc << label << '\n';
  if (!voc) throw Error(ErrorKind::io, "write failed for " + vocab.string());
}

inline EmbeddingSpace load_space(const std::filesystem::path& path) {
  std::ifstream emb(path, std::ios::binary);
  if (!emb) throw Error(ErrorKind::io, "cannot open " + path.string());
  detail::expect_magic(emb, "EMB1", path.string());
  const auto n = detail::read_le<std::uint32_t>(emb, "row count");
  const auto d = detail::read_le<std::uint32_t>(emb, "dimension");
  if (n == 0 || d == 0) throw Error(ErrorKind::format, path.string() + ": header declares N=0 or d=0");

  const auto file_size = std::filesystem::file_size(path);
  const auto expected = 12ULL + 4ULL * static_cast<unsigned long long>(n) * d;
  if (file_size != expected) {
    throw Error(ErrorKind::format, path.string() + ": size " + std::to_string(file_size) +
                                       " bytes, header implies " + std::to_string(expected));
  }

  RowMatrixF vectors(static_cast<Index>(n), static_cast<Index>(d));
  std::vector<unsigned char> raw(4ULL * n * d);
  emb.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (emb.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw Error(ErrorKind::format, path.string() + ": truncated payload");
  }
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) {
    const std::uint32_t bits = std::uint32_t{raw[4 * i]} | (std::uint32_t{raw[4 * i + 1]} << 8) |
                               (std::uint32_t{raw[4 * i + 2]} << 16) | (std::uint32_t{raw[4 * i + 3]} << 24);
    vectors.data()[i] = std::bit_cast<float>(bits);
  }

  const auto vocab = vocab_path_for(path);
  std::ifstream voc(vocab, std::ios::binary);
  if (!voc) throw Error(ErrorKind::io, "cannot open vocab sidecar " + vocab.string());
  const std::string text((std::istreambuf_iterator<char>(voc)), std::istreambuf_iterator<char>());
  std::vector<std::string> labels;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    labels.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (labels.size() != n) {
    throw Error(ErrorKind::consistency, vocab.string() + " has " + std::to_string(labels.size()) +
                                            " lines, header declares N=" + std::to_string(n));
  }
  for (const auto& label : labels) {
    if (label.find('\t') != std::string::npos) {
      throw Error(ErrorKind::format, vocab.string() + ": label contains a tab: '" + label + "'");
    }
  }

  for (Index i = 0; i < vectors.size(); ++i) {
    if (!std::isfinite(vectors.data()[i])) {
      throw Error(ErrorKind::validation, path.string() + ": NaN or infinity in row '" +
                                             labels[static_cast<std::size_t>(i / d)] + "'");
    }
  }
  return EmbeddingSpace(std::move(labels), std::move(vectors));
}

}  // namespace xalign
