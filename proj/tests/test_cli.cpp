#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "cli.hpp"
#include "test_util.hpp"
#include "xalign/xalign.hpp"

using namespace xalign;
using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) { return cli::dispatch(args); }

std::string p(const TempDir& dir, const std::string& name) { return (dir / name).string(); }

/// synth + split --emit-pairs + fit into `dir`, all with noise 0.
void prepare(const TempDir& dir, const std::string& n = "400") {
  ASSERT_EQ(run({"synth", "--n", n, "--dim-src", "16", "--dim-tgt", "16", "--seed", "1", "--out-prefix",
                 p(dir, "syn")}),
            0);
  ASSERT_EQ(run({"split", "--dict", p(dir, "syn.dict.tsv"), "--emit-pairs", "--out", p(dir, "splits.tsv")}), 0);
  ASSERT_EQ(run({"fit", "--src", p(dir, "syn.src.emb"), "--tgt", p(dir, "syn.tgt.emb"), "--pairs",
                 p(dir, "splits.fold0.train.pairs.tsv"), "--out", p(dir, "m.map")}),
            0);
}

std::vector<std::string> eval_args(const TempDir& dir, const std::string& report) {
  return {"eval", "--map", p(dir, "m.map"), "--src", p(dir, "syn.src.emb"), "--tgt", p(dir, "syn.tgt.emb"),
          "--pairs", p(dir, "splits.fold0.test.pairs.tsv"), "--report", p(dir, report)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = testutil::read_bytes(e.path());
  return out;
}

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(testutil::read_bytes(path)); }

}  // namespace

TEST(CliSupport, Sha256KnownAnswer) {
  TempDir dir;
  testutil::write_bytes(dir / "abc", "abc");
  EXPECT_EQ(cli::sha256_file(dir / "abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  testutil::write_bytes(dir / "empty", "");
  EXPECT_EQ(cli::sha256_file(dir / "empty"), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(CliSupport, ConfigParsing) {
  TempDir dir;
  testutil::write_bytes(dir / "a.conf", "# comment\n\nsource = x.emb\n  seed=4  \nks = 1, 10\n");
  const auto kv = cli::read_config(dir / "a.conf");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"source", "x.emb"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"seed", "4"}));
  EXPECT_EQ(kv[2].second, "1, 10");
  testutil::write_bytes(dir / "b.conf", "source x.emb\n");
  EXPECT_XALIGN_ERROR(cli::read_config(dir / "b.conf"), ErrorKind::format);
  testutil::write_bytes(dir / "c.conf", "seed = 1\nseed = 2\n");
  EXPECT_XALIGN_ERROR(cli::read_config(dir / "c.conf"), ErrorKind::format);
}

TEST(CliSupport, ManifestJsonRoundTrip) {
  const cli::RunManifest m{"analyze polysemy", {{"map", "/a/m.map"}, {"force-free", ""}}, {{"/a/x", "00ff"}}, "0.3.0",
                           {7}};
  EXPECT_EQ(cli::manifest_from_json(cli::to_json(m)), m);
  EXPECT_EQ(cli::manifest_path_for("/a/r.json"), fs::path("/a/r.json.manifest.json"));
}

TEST(Cli, SyntheticPipelineIsPerfectAtZeroNoise) {
  TempDir dir;
  prepare(dir);
  ASSERT_EQ(run(eval_args(dir, "r.json")), 0);
  const auto report = read_json(dir / "r.json");
  EXPECT_EQ(report["precision"]["1"], 100.0);
  EXPECT_EQ(report["n_queries"], 60);
  EXPECT_EQ(report["n_candidates"], 400);
  EXPECT_TRUE(fs::exists(dir / "r.queries.tsv"));
  for (const char* f : {"syn.src.vocab.tsv", "syn.pairs.tsv", "syn.config.json", "syn.manifest.json",
                        "splits.tsv.manifest.json", "m.map.manifest.json", "r.json.manifest.json",
                        "splits.fold4.val.pairs.tsv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
}

TEST(Cli, ManifestRecordsFlagsInputsAndDigests) {
  TempDir dir;
  prepare(dir);
  const auto m = cli::read_manifest(dir / "m.map.manifest.json");
  EXPECT_EQ(m.subcommand, "fit");
  EXPECT_EQ(m.version, XALIGN_VERSION);
  std::map<std::string, std::string> flags(m.flags.begin(), m.flags.end());
  EXPECT_EQ(flags.at("src"), p(dir, "syn.src.emb"));
  EXPECT_EQ(flags.at("preprocess"), "unit");
  EXPECT_EQ(flags.count("force"), 0u);
  ASSERT_EQ(m.inputs.size(), 5u);  // two spaces with sidecars, one pairs file
  for (const auto& [path, digest] : m.inputs) {
    EXPECT_TRUE(fs::path(path).is_absolute());
    EXPECT_EQ(digest, cli::sha256_file(path));
  }
}

TEST(Cli, UsageErrorsExitOne) {
  TempDir dir;
  prepare(dir);
  auto args = eval_args(dir, "r.json");
  args.erase(args.begin() + 1, args.begin() + 3);  // drop --map
  EXPECT_EQ(run(args), 1);
  args = eval_args(dir, "r.json");
  args.insert(args.end(), {"--csls-k", "0"});
  EXPECT_EQ(run(args), 1);
  args = eval_args(dir, "r.json");
  args.insert(args.end(), {"--metric", "euclid"});
  EXPECT_EQ(run(args), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"synth", "--relation", "affine", "--out-prefix", p(dir, "z")}), 1);
  EXPECT_EQ(run({"split", "--dict", p(dir, "syn.dict.tsv"), "--ratios", "0.5,0.5,0.5", "--out", p(dir, "s2.tsv")}),
            1);
  EXPECT_FALSE(fs::exists(dir / "r.json"));
}

TEST(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(run({"--version"}), 0);
  EXPECT_EQ(run({"fit", "--help"}), 0);
}

TEST(Cli, MalformedInputsExitTwo) {
  TempDir dir;
  prepare(dir);
  auto bytes = testutil::read_bytes(dir / "syn.src.emb");
  bytes[0] = 'X';
  testutil::write_bytes(dir / "bad.src.emb", bytes);
  fs::copy_file(dir / "syn.src.vocab.tsv", dir / "bad.src.vocab.tsv");
  auto args = eval_args(dir, "r.json");
  args[4] = p(dir, "bad.src.emb");
  EXPECT_EQ(run(args), 2);

  fs::copy_file(dir / "syn.src.emb", dir / "short.src.emb");
  testutil::write_bytes(dir / "short.src.vocab.tsv", testutil::read_bytes(dir / "syn.src.vocab.tsv") + "extra\n");
  args[4] = p(dir, "short.src.emb");
  EXPECT_EQ(run(args), 2);

  args[4] = p(dir, "missing.src.emb");
  EXPECT_EQ(run(args), 2);
  EXPECT_FALSE(fs::exists(dir / "r.json"));
}

TEST(Cli, ExistingOutputsNeedForce) {
  TempDir dir;
  prepare(dir);
  const std::vector<std::string> fit{"fit", "--src", p(dir, "syn.src.emb"), "--tgt", p(dir, "syn.tgt.emb"),
                                     "--pairs", p(dir, "splits.fold1.train.pairs.tsv"), "--out", p(dir, "m.map")};
  const auto before = testutil::read_bytes(dir / "m.map");
  EXPECT_EQ(run(fit), 2);
  EXPECT_EQ(testutil::read_bytes(dir / "m.map"), before);
  auto forced = fit;
  forced.emplace_back("--force");
  EXPECT_EQ(run(forced), 0);
  EXPECT_NE(testutil::read_bytes(dir / "m.map"), before);
}

TEST(Cli, OutputMayNotOverwriteAnInput) {
  TempDir dir;
  prepare(dir);
  EXPECT_EQ(run({"fit", "--src", p(dir, "syn.src.emb"), "--tgt", p(dir, "syn.tgt.emb"), "--pairs",
                 p(dir, "syn.pairs.tsv"), "--out", p(dir, "syn.pairs.tsv"), "--force"}),
            1);
}

TEST(Cli, RankDeficientPcaExitsThree) {
  TempDir dir;
  RowMatrixF line(20, 8);
  for (Index r = 0; r < 20; ++r) line.row(r) = Eigen::RowVectorXf::Constant(8, static_cast<float>(r + 1));
  const auto labels = detail::synth_labels(20, "c");
  save_space(EmbeddingSpace(labels, line), dir / "line.emb");
  save_space(generate({20, 4, 4, 0.0, 1, Relation::unrelated}).target, dir / "t.emb");
  write_pairs(detail::identity_pairs(labels), dir / "pairs.tsv");
  EXPECT_EQ(run({"fit", "--src", p(dir, "line.emb"), "--tgt", p(dir, "t.emb"), "--pairs", p(dir, "pairs.tsv"),
                 "--preprocess", "none", "--out", p(dir, "m.map")}),
            3);
  EXPECT_FALSE(fs::exists(dir / "m.map"));
}

TEST(Cli, AnalyzeDispersionAndPolysemy) {
  TempDir dir;
  prepare(dir);
  std::string values = "label\tdispersion\n";
  std::string poly = "alias\tmeaning_count\n";
  const auto labels = load_space(dir / "syn.src.emb").labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    values += labels[i] + "\t" + std::to_string(0.001 * static_cast<double>(i)) + "\n";
    if (i % 5 != 0) poly += labels[i] + "\t" + std::to_string(1 + i % 6) + "\n";
  }
  testutil::write_bytes(dir / "values.tsv", values);
  testutil::write_bytes(dir / "meanings.tsv", poly);

  auto args = eval_args(dir, "disp.tsv");
  args[0] = "dispersion";
  args.insert(args.begin(), "analyze");
  args.insert(args.end(), {"--values", p(dir, "values.tsv")});
  ASSERT_EQ(run(args), 0);
  const auto disp = read_json(dir / "disp.json");
  ASSERT_EQ(disp["bins"].size(), 3u);
  EXPECT_EQ(disp["bins"][0]["label"], "low");
  EXPECT_EQ(disp["bins"][0]["query_count"], 20.0);
  EXPECT_EQ(disp["bins"][2]["precision"]["1"], 100.0);

  args = eval_args(dir, "polyrep.tsv");
  args[0] = "polysemy";
  args.insert(args.begin(), "analyze");
  args.insert(args.end(), {"--polysemy", p(dir, "meanings.tsv")});
  ASSERT_EQ(run(args), 0);
  const auto rep = read_json(dir / "polyrep.json");
  EXPECT_EQ(rep["mode"], "per-alias");
  EXPECT_GT(rep["uncovered"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(dir / "polyrep.tsv.manifest.json"));
}

TEST(Cli, DispersionFromItemVectors) {
  TempDir dir;
  prepare(dir);
  const auto src = load_space(dir / "syn.src.emb");
  save_space(src, dir / "items.emb");
  // Pairs of consecutive items share a group.
  std::string groups = "item\tgroup\n";
  for (std::size_t i = 0; i + 1 < src.labels().size(); i += 2) {
    groups += src.labels()[i] + "\t" + src.labels()[i] + "\n";
    groups += src.labels()[i + 1] + "\t" + src.labels()[i] + "\n";
  }
  testutil::write_bytes(dir / "groups.tsv", groups);
  auto args = eval_args(dir, "d.tsv");
  args[0] = "dispersion";
  args.insert(args.begin(), "analyze");
  args.insert(args.end(), {"--items", p(dir, "items.emb"), "--groups", p(dir, "groups.tsv")});
  ASSERT_EQ(run(args), 0);
  const auto written = testutil::read_bytes(dir / "d.values.tsv");
  EXPECT_EQ(written.substr(0, written.find('\n')), "label\tdispersion\tn_items");
  EXPECT_TRUE(fs::exists(dir / "d.json"));

  args.insert(args.end(), {"--values", p(dir, "d.values.tsv")});
  EXPECT_EQ(run(args), 1);
}

TEST(Cli, ReplayReproducesOutputs) {
  TempDir dir;
  prepare(dir);
  ASSERT_EQ(run(eval_args(dir, "r.json")), 0);
  const auto model = testutil::read_bytes(dir / "m.map");
  const auto report = testutil::read_bytes(dir / "r.json");
  EXPECT_EQ(run({"replay", "--manifest", p(dir, "m.map.manifest.json")}), 2);  // outputs exist
  EXPECT_EQ(run({"replay", "--manifest", p(dir, "m.map.manifest.json"), "--force"}), 0);
  EXPECT_EQ(run({"replay", "--manifest", p(dir, "r.json.manifest.json"), "--force"}), 0);
  EXPECT_EQ(testutil::read_bytes(dir / "m.map"), model);
  EXPECT_EQ(testutil::read_bytes(dir / "r.json"), report);
}

TEST(Cli, ReplayRejectsChangedInputs) {
  TempDir dir;
  prepare(dir);
  testutil::write_bytes(dir / "splits.fold0.train.pairs.tsv",
                        testutil::read_bytes(dir / "splits.fold0.train.pairs.tsv") + "c00000\tc00001\n");
  EXPECT_EQ(run({"replay", "--manifest", p(dir, "m.map.manifest.json"), "--force"}), 2);
  fs::remove(dir / "splits.fold0.train.pairs.tsv");
  EXPECT_EQ(run({"replay", "--manifest", p(dir, "m.map.manifest.json"), "--force"}), 2);
  EXPECT_EQ(run({"replay", "--manifest", p(dir, "nope.json")}), 2);
}

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(run({"synth", "--n", "2000", "--noise", "0", "--seed", "1", "--out-prefix", p(dir_, "syn")}), 0);
    testutil::write_bytes(dir_ / "exp.conf",
                          "# synthetic experiment\n"
                          "source = syn.src.emb\n"
                          "target = syn.tgt.emb\n"
                          "dictionary = syn.dict.tsv\n"
                          "folds = 5\n"
                          "seed = 1\n");
  }
  TempDir dir_;
};

TEST_F(CliRun, NoiselessRunIsPerfectAndReproducible) {
  ASSERT_EQ(run({"run", "--config", p(dir_, "exp.conf")}), 0);
  const fs::path out = dir_ / "exp.out";
  const auto mean = read_json(out / "mean.eval.json");
  EXPECT_EQ(mean["precision"]["1"], 100.0);
  EXPECT_EQ(mean["fold"], "mean");
  for (int f = 0; f < 5; ++f) EXPECT_TRUE(fs::exists(out / ("fold" + std::to_string(f) + ".eval.json")));
  EXPECT_TRUE(fs::exists(out / "run.manifest.json"));
  EXPECT_FALSE(fs::exists(out / "PARTIAL"));

  const auto first = snapshot(out);
  EXPECT_EQ(run({"run", "--config", p(dir_, "exp.conf")}), 2);  // out_dir not empty
  ASSERT_EQ(run({"run", "--config", p(dir_, "exp.conf"), "--force"}), 0);
  EXPECT_EQ(snapshot(out), first);

  fs::remove_all(out);
  ASSERT_EQ(run({"replay", "--manifest", (out / "run.manifest.json").string()}), 2);  // manifest gone with out
}

TEST_F(CliRun, ReplayOfARunMatches) {
  ASSERT_EQ(run({"run", "--config", p(dir_, "exp.conf"), "--folds", "2", "--out-dir", p(dir_, "a")}), 0);
  const auto first = snapshot(dir_ / "a");
  ASSERT_EQ(run({"replay", "--manifest", p(dir_, "a/run.manifest.json"), "--force"}), 0);
  EXPECT_EQ(snapshot(dir_ / "a"), first);
  const auto m = cli::read_manifest(dir_ / "a" / "run.manifest.json");
  std::map<std::string, std::string> flags(m.flags.begin(), m.flags.end());
  EXPECT_EQ(flags.at("folds"), "2");
  EXPECT_EQ(flags.at("metric"), "csls");
}

TEST_F(CliRun, MissingInputFailsBeforeAnyOutput) {
  testutil::write_bytes(dir_ / "bad.conf", testutil::read_bytes(dir_ / "exp.conf") + "polysemy = none.tsv\n");
  EXPECT_EQ(run({"run", "--config", p(dir_, "bad.conf")}), 2);
  EXPECT_FALSE(fs::exists(dir_ / "bad.out"));
}

TEST_F(CliRun, ConfigParameterErrorsExitOne) {
  testutil::write_bytes(dir_ / "typo.conf", testutil::read_bytes(dir_ / "exp.conf") + "fold = 3\n");
  EXPECT_EQ(run({"run", "--config", p(dir_, "typo.conf")}), 1);
  testutil::write_bytes(dir_ / "neg.conf", testutil::read_bytes(dir_ / "exp.conf") + "csls_k = -2\n");
  EXPECT_EQ(run({"run", "--config", p(dir_, "neg.conf")}), 1);
  EXPECT_FALSE(fs::exists(dir_ / "typo.out"));
}

TEST_F(CliRun, StageFailureLeavesAPartialMarker) {
  testutil::write_bytes(dir_ / "tiny.tsv", "class_id\timage_count\talias\talias_corpus_count\n"
                                           "c00000\t500\tc00000\t50\nc00001\t500\tc00001\t50\n");
  EXPECT_EQ(run({"run", "--config", p(dir_, "exp.conf"), "--dictionary", p(dir_, "tiny.tsv")}), 2);
  const auto marker = testutil::read_bytes(dir_ / "exp.out" / "PARTIAL");
  EXPECT_EQ(marker.substr(0, marker.find('\n')), "stage\tsplit");
  EXPECT_FALSE(fs::exists(dir_ / "exp.out" / "run.manifest.json"));
}
