#include <gtest/gtest.h>

#include <Eigen/LU>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xalign/align.hpp"
#include "xalign/evaluate.hpp"
#include "xalign/synth.hpp"

using namespace xalign;
using testutil::TempDir;

namespace {

RowMatrixD to_row(const oracle::Matrix& m) { return m; }

double frob_residual(const RowMatrixD& A, const RowMatrixD& omega, const RowMatrixD& B) {
  return (A * omega - B).norm();
}

EmbeddingSpace space_from(const RowMatrixD& m, const char* prefix = "w") {
  return EmbeddingSpace(detail::synth_labels(m.rows(), prefix), m.cast<float>());
}

std::vector<LabelPair> first_pairs(const std::vector<LabelPair>& pairs, std::size_t n) {
  return {pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

// ---------------------------------------------------------------------------
// PCA

TEST(Pca, CollinearPointsGiveTheDiagonal) {
  RowMatrixD x(5, 2);
  for (int t = 0; t < 5; ++t) x.row(t) << t, t;
  const auto pca = fit_pca(x, 1);
  EXPECT_NEAR(pca.components(0, 0), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(pca.components(0, 1), std::sqrt(0.5), 1e-12);
  // projections sqrt(2) * (t - 2); sample variance 2 * 10 / 4
  EXPECT_NEAR(pca.explained_variance(0), 5.0, 1e-12);
  EXPECT_NEAR(pca.mean(0), 2.0, 1e-12);
}

TEST(Pca, CollinearPointsCannotGiveTwoComponents) {
  RowMatrixD x(5, 2);
  for (int t = 0; t < 5; ++t) x.row(t) << t, t;
  EXPECT_XALIGN_ERROR(fit_pca(x, 2), ErrorKind::rank_deficiency);
}

TEST(Pca, KOutsideRangeIsAParameterError) {
  std::mt19937_64 gen(1);
  const RowMatrixD x = to_row(oracle::gaussian(6, 10, gen));
  EXPECT_XALIGN_ERROR(fit_pca(x, 0), ErrorKind::parameter);
  EXPECT_XALIGN_ERROR(fit_pca(x, 6), ErrorKind::parameter);  // N - 1 = 5
  const auto pca = fit_pca(x, 5);
  EXPECT_XALIGN_ERROR(apply_pca(pca, RowMatrixD::Zero(2, 9)), ErrorKind::shape);
}

TEST(Pca, ComponentsAreOrthonormalAndSignFixed) {
  std::mt19937_64 gen(2);
  const RowMatrixD x = to_row(oracle::gaussian(80, 12, gen));
  const auto pca = fit_pca(x, 7);
  EXPECT_LT((pca.components * pca.components.transpose() - RowMatrixD::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-12);
  for (Index r = 0; r < 7; ++r) {
    Index arg = 0;
    pca.components.row(r).cwiseAbs().maxCoeff(&arg);
    EXPECT_GE(pca.components(r, arg), 0.0);
  }
  for (Index i = 1; i < 7; ++i) EXPECT_GE(pca.explained_variance(i - 1), pca.explained_variance(i));
}

TEST(Pca, ProjectedTrainingDataIsCenteredWithDiagonalCovariance) {
  std::mt19937_64 gen(3);
  RowMatrixD x = to_row(oracle::gaussian(200, 10, gen));
  for (Index c = 0; c < 10; ++c) x.col(c) *= 1.0 + c;
  x.rowwise() += Eigen::RowVectorXd::LinSpaced(10, -5, 5);
  const auto pca = fit_pca(x, 6);
  const RowMatrixD z = apply_pca(pca, x);
  EXPECT_LT(z.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  const RowMatrixD cov = z.transpose() * z / 199.0;
  for (Index i = 0; i < 6; ++i) {
    for (Index j = 0; j < 6; ++j) {
      const double expected = i == j ? pca.explained_variance(i) : 0.0;
      EXPECT_NEAR(cov(i, j), expected, 1e-9 * pca.explained_variance(0));
    }
  }
}

TEST(Pca, FullRankProjectionIsAnIsometry) {
  std::mt19937_64 gen(4);
  const RowMatrixD x = to_row(oracle::gaussian(30, 5, gen));
  const auto pca = fit_pca(x, 5);
  const RowMatrixD z = apply_pca(pca, x);
  for (int i = 0; i < 30; ++i) {
    for (int j = i + 1; j < 30; ++j) EXPECT_NEAR((z.row(i) - z.row(j)).norm(), (x.row(i) - x.row(j)).norm(), 1e-10);
  }
}

TEST(Pca, RetainsMoreVarianceThanRandomProjections) {
  std::mt19937_64 gen(5);
  RowMatrixD x = to_row(oracle::gaussian(300, 20, gen));
  for (Index c = 0; c < 20; ++c) x.col(c) *= 0.2 + 0.15 * c;
  x = x * to_row(oracle::random_orthonormal(20, 20, gen));
  const auto pca = fit_pca(x, 8);
  const double kept = apply_pca(pca, x).squaredNorm();
  RowMatrixD centered = x;
  centered.rowwise() -= x.colwise().mean();
  for (int trial = 0; trial < 100; ++trial) {
    const RowMatrixD basis = to_row(oracle::random_orthonormal(20, 8, gen));
    EXPECT_GT(kept, (centered * basis).squaredNorm());
  }
}

// ---------------------------------------------------------------------------
// Procrustes

TEST(Procrustes, IdenticalInputsGiveTheIdentity) {
  std::mt19937_64 gen(6);
  const RowMatrixD a = to_row(oracle::gaussian(20, 4, gen));
  const auto omega = fit_procrustes(a, a).omega;
  EXPECT_LT((omega - RowMatrixD::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Procrustes, RecoversAQuarterTurn) {
  std::mt19937_64 gen(7);
  const RowMatrixD a = to_row(oracle::gaussian(10, 2, gen));
  RowMatrixD r(2, 2);
  r << 0, 1, -1, 0;
  const auto omega = fit_procrustes(a, RowMatrixD(a * r)).omega;
  EXPECT_LT((omega - r).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Procrustes, RecoversReflections) {
  std::mt19937_64 gen(8);
  const RowMatrixD a = to_row(oracle::gaussian(30, 5, gen));
  RowMatrixD r = RowMatrixD::Identity(5, 5);
  r(4, 4) = -1;
  const auto omega = fit_procrustes(a, RowMatrixD(a * r)).omega;
  EXPECT_LT((omega - r).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(omega.determinant(), -1.0, 1e-12);
}

TEST(Procrustes, RecoversAHighDimensionalRotation) {
  std::mt19937_64 gen(9);
  const RowMatrixD a = to_row(oracle::gaussian(500, 64, gen));
  const RowMatrixD q = to_row(oracle::random_orthonormal(64, 64, gen));
  const auto map = fit_procrustes(a, RowMatrixD(a * q));
  EXPECT_LT((map.omega - q).norm(), 1e-6);
  EXPECT_LT(map.orthogonality_error(), 1e-10);
}

TEST(Procrustes, NeverBeatenByRandomOrthogonalMaps) {
  std::mt19937_64 gen(10);
  for (int instance = 0; instance < 25; ++instance) {
    const int d = 1 + static_cast<int>(gen() % 8);
    const int n = d + static_cast<int>(gen() % (51 - d));
    const RowMatrixD a = to_row(oracle::gaussian(n, d, gen));
    const RowMatrixD b = to_row(oracle::gaussian(n, d, gen));
    const auto omega = fit_procrustes(a, b).omega;
    const double best = frob_residual(a, omega, b);
    for (int trial = 0; trial < 200; ++trial) {
      const RowMatrixD r = to_row(oracle::random_orthonormal(d, d, gen));
      EXPECT_LE(best, frob_residual(a, r, b) + 1e-9);
    }
  }
}

TEST(Procrustes, InputErrors) {
  RowMatrixD a = RowMatrixD::Ones(4, 3);
  EXPECT_XALIGN_ERROR(fit_procrustes(a, RowMatrixD::Ones(4, 2)), ErrorKind::shape);
  EXPECT_XALIGN_ERROR(fit_procrustes(a, RowMatrixD::Ones(3, 3)), ErrorKind::shape);
  a(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_XALIGN_ERROR(fit_procrustes(a, RowMatrixD::Ones(4, 3)), ErrorKind::validation);
}

// ---------------------------------------------------------------------------
// End-to-end alignment

TEST(Alignment, SameSpaceGivesIdentityMap) {
  const auto s = generate({100, 8, 8, 0.0, 1, Relation::unrelated});
  const auto model = fit_alignment(s.source, s.source, s.pairs, Preprocessing::unit_l2);
  const auto mapped = apply_map(model, s.source);
  const auto unit = preprocess(s.source, Preprocessing::unit_l2);
  EXPECT_LT((mapped.vectors() - unit.vectors()).cwiseAbs().maxCoeff(), 1e-5f);
  EXPECT_EQ(mapped.labels(), s.source.labels());
}

TEST(Alignment, MappingPreservesCosines) {
  const auto s = generate({200, 16, 16, 0.5, 2, Relation::isomorphic});
  const auto model = fit_alignment(s.source, s.target, s.pairs, Preprocessing::unit_l2);
  const auto mapped = apply_map(model, s.source);
  const auto unit = preprocess(s.source, Preprocessing::unit_l2);
  for (Index i = 0; i < 20; ++i) {
    for (Index j = 20; j < 40; ++j) {
      EXPECT_NEAR(oracle::cosine(mapped.vectors().row(i).cast<double>().transpose(),
                                 mapped.vectors().row(j).cast<double>().transpose()),
                  oracle::cosine(unit.vectors().row(i).cast<double>().transpose(),
                                 unit.vectors().row(j).cast<double>().transpose()),
                  1e-5);
    }
  }
}

TEST(Alignment, LargerSourceIsReducedByPca) {
  const auto s = generate({300, 16, 8, 0.0, 3, Relation::isomorphic});
  const auto model = fit_alignment(s.source, s.target, s.pairs, Preprocessing::unit_l2);
  ASSERT_TRUE(model.source_pca.has_value());
  EXPECT_FALSE(model.target_pca.has_value());
  EXPECT_EQ(model.source_pca->k(), 8);
  EXPECT_EQ(model.common_dim, 8);
  EXPECT_EQ(apply_map(model, s.source).dim(), 8);
}

TEST(Alignment, LargerTargetIsReducedByPca) {
  const auto s = generate({300, 16, 8, 0.0, 3, Relation::isomorphic});
  const auto model = fit_alignment(s.target, s.source, s.pairs, Preprocessing::unit_l2);
  ASSERT_TRUE(model.target_pca.has_value());
  EXPECT_EQ(apply_target(model, s.source).dim(), 8);
}

TEST(Alignment, PcaFitOnTrainingRowsOnlyByDefault) {
  const auto s = generate({300, 16, 8, 0.0, 3, Relation::isomorphic});
  const auto train = first_pairs(s.pairs, 100);
  const auto on_train = fit_alignment(s.source, s.target, train, Preprocessing::unit_l2);
  AlignOptions all;
  all.pca_fit = PcaFit::all_rows;
  const auto on_all = fit_alignment(s.source, s.target, train, Preprocessing::unit_l2, all);
  const auto unit = preprocess(s.source, Preprocessing::unit_l2);
  const auto direct = fit_pca(unit.select(s.source.labels()), 8);
  EXPECT_LT((on_all.source_pca->components - direct.components).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((on_train.source_pca->components - direct.components).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Alignment, AveragedAliasesGiveOneRowPerClass) {
  const auto s = generate({50, 4, 4, 0.0, 5, Relation::isomorphic});
  auto pairs = s.pairs;
  pairs.emplace_back(s.pairs[0].first, s.pairs[1].second);
  AlignOptions avg;
  avg.multi_alias = MultiAlias::average;
  const auto repeat = fit_alignment(s.source, s.target, pairs, Preprocessing::unit_l2);
  const auto averaged = fit_alignment(s.source, s.target, pairs, Preprocessing::unit_l2, avg);
  EXPECT_GT((repeat.map.omega - averaged.map.omega).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(averaged.map.orthogonality_error(), 1e-10);
}

TEST(Alignment, RowScalingDoesNotChangeTheMap) {
  const auto s = generate({200, 8, 8, 0.3, 6, Relation::isomorphic});
  RowMatrixF scaled = s.source.vectors();
  for (Index r = 0; r < scaled.rows(); ++r) scaled.row(r) *= std::ldexp(1.0f, static_cast<int>(r % 7) - 3);
  const EmbeddingSpace rescaled(s.source.labels(), scaled);
  const auto a = fit_alignment(s.source, s.target, s.pairs, Preprocessing::unit_l2);
  const auto b = fit_alignment(rescaled, s.target, s.pairs, Preprocessing::unit_l2);
  EXPECT_LT((a.map.omega - b.map.omega).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Alignment, InputErrors) {
  const auto s = generate({20, 4, 4, 0.0, 7, Relation::isomorphic});
  EXPECT_XALIGN_ERROR(fit_alignment(s.source, s.target, first_pairs(s.pairs, 1), Preprocessing::unit_l2),
                      ErrorKind::parameter);
  auto pairs = first_pairs(s.pairs, 5);
  pairs.emplace_back("c00001", "nope");
  EXPECT_XALIGN_ERROR(fit_alignment(s.source, s.target, pairs, Preprocessing::unit_l2), ErrorKind::lookup);
  const auto model = fit_alignment(s.source, s.target, s.pairs, Preprocessing::unit_l2);
  const auto wide = generate({20, 6, 6, 0.0, 7, Relation::isomorphic});
  EXPECT_XALIGN_ERROR(apply_map(model, wide.source), ErrorKind::shape);
}

TEST(Alignment, PcaRequestWithEqualDimensionsWarns) {
  const auto s = generate({30, 4, 4, 0.0, 8, Relation::isomorphic});
  std::vector<std::string> warnings;
  const auto previous = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  AlignOptions opts;
  opts.request_pca = true;
  const auto model = fit_alignment(s.source, s.target, s.pairs, Preprocessing::unit_l2, opts);
  set_warning_sink(previous);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_FALSE(model.source_pca || model.target_pca);
}

// ---------------------------------------------------------------------------
// Model file

TEST(ModelFile, RoundTripIsExact) {
  TempDir dir;
  const auto s = generate({300, 16, 8, 0.1, 10, Relation::isomorphic});
  const auto model = fit_alignment(s.source, s.target, s.pairs, Preprocessing::center_unit_l2);
  save_model(model, dir / "m.map");
  const auto back = load_model(dir / "m.map");
  EXPECT_EQ(back.common_dim, 8);
  EXPECT_EQ(back.preprocessing, Preprocessing::center_unit_l2);
  EXPECT_EQ(back.map.omega, model.map.omega);
  ASSERT_TRUE(back.source_pca.has_value());
  EXPECT_EQ(back.source_pca->components, model.source_pca->components);
  EXPECT_EQ(back.source_pca->mean, model.source_pca->mean);
  EXPECT_EQ(back.source_pca->explained_variance, model.source_pca->explained_variance);
  save_model(back, dir / "again.map");
  EXPECT_EQ(testutil::read_bytes(dir / "m.map"), testutil::read_bytes(dir / "again.map"));
}

TEST(ModelFile, CorruptFilesAreRejected) {
  TempDir dir;
  const auto s = generate({40, 4, 4, 0.0, 11, Relation::isomorphic});
  save_model(fit_alignment(s.source, s.target, s.pairs, Preprocessing::unit_l2), dir / "m.map");
  const auto good = testutil::read_bytes(dir / "m.map");

  auto bytes = good;
  bytes[0] = 'X';
  testutil::write_bytes(dir / "bad.map", bytes);
  EXPECT_XALIGN_ERROR(load_model(dir / "bad.map"), ErrorKind::format);

  testutil::write_bytes(dir / "bad.map", good.substr(0, good.size() - 3));
  EXPECT_XALIGN_ERROR(load_model(dir / "bad.map"), ErrorKind::format);

  testutil::write_bytes(dir / "bad.map", good + "x");
  EXPECT_XALIGN_ERROR(load_model(dir / "bad.map"), ErrorKind::format);

  bytes = good;
  bytes[8] = static_cast<char>(0x03);
  testutil::write_bytes(dir / "bad.map", bytes);
  EXPECT_XALIGN_ERROR(load_model(dir / "bad.map"), ErrorKind::format);

  EXPECT_XALIGN_ERROR(load_model(dir / "missing.map"), ErrorKind::io);
}
