#include "cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "xalign/xalign.hpp"

namespace xalign::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

nlohmann::ordered_json to_json(const RunManifest& m) {
  Json j;
  j["subcommand"] = m.subcommand;
  Json flags = Json::object();
  for (const auto& [k, v] : m.flags) flags[k] = v;
  j["flags"] = flags;
  Json inputs = Json::array();
  for (const auto& [path, digest] : m.inputs) {
    Json entry;
    entry["path"] = path;
    entry["sha256"] = digest;
    inputs.push_back(entry);
  }
  j["inputs"] = inputs;
  j["version"] = m.version;
  j["seeds"] = m.seeds;
  return j;
}

RunManifest manifest_from_json(const nlohmann::ordered_json& j) {
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  for (const auto& [k, v] : j.at("flags").items()) m.flags.emplace_back(k, v.get<std::string>());
  for (const auto& entry : j.at("inputs")) {
    m.inputs.emplace_back(entry.at("path").get<std::string>(), entry.at("sha256").get<std::string>());
  }
  m.version = j.at("version").get<std::string>();
  m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  return m;
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  try {
    return manifest_from_json(nlohmann::ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": malformed manifest: " + e.what());
  }
}

fs::path manifest_path_for(const fs::path& primary) { return fs::path(primary.string() + ".manifest.json"); }

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error(ErrorKind::io, "SHA-256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_on(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(trim(text.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::format, where + ": expected key = value");
    auto key = trim(std::string_view(t).substr(0, eq));
    auto value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::format, where + ": empty key");
    if (!seen.insert(key).second) throw Error(ErrorKind::format, where + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

namespace {

fs::path absolute_path(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw Error(ErrorKind::parameter, key + ": not a valid number: '" + text + "'");
  return value;
}

std::vector<Index> parse_ks(const std::string& text) {
  std::vector<Index> ks;
  for (const auto& part : split_on(text, ',')) {
    const auto k = parse_number<long long>("k", part);
    if (k < 1) throw Error(ErrorKind::parameter, "k must be >= 1, got " + part);
    ks.push_back(static_cast<Index>(k));
  }
  return ks;
}

SplitRatios parse_ratios(const std::string& text) {
  const auto parts = split_on(text, ',');
  if (parts.size() != 3) throw Error(ErrorKind::parameter, "ratios need three comma-separated values");
  return {parse_number<double>("ratios", parts[0]), parse_number<double>("ratios", parts[1]),
          parse_number<double>("ratios", parts[2])};
}

CslsReference parse_reference(const std::string& text) {
  if (text == "eval") return CslsReference::eval_queries;
  if (text == "all") return CslsReference::all_sources;
  throw Error(ErrorKind::parameter, "unknown CSLS reference '" + text + "'");
}

PcaFit parse_pca_fit(const std::string& text) {
  if (text == "train") return PcaFit::train_rows;
  if (text == "all") return PcaFit::all_rows;
  throw Error(ErrorKind::parameter, "unknown pca-fit '" + text + "'");
}

MultiAlias parse_multi_alias(const std::string& text) {
  if (text == "repeat") return MultiAlias::repeat;
  if (text == "average") return MultiAlias::average;
  throw Error(ErrorKind::parameter, "unknown multi-alias mode '" + text + "'");
}

// State of one subcommand invocation: recorded inputs, claimed outputs, manifest.
struct Invocation {
  std::string subcommand;
  bool force = false;
  std::vector<std::pair<std::string, std::string>> flags;
  std::vector<std::pair<std::string, std::string>> digests;
  std::vector<fs::path> inputs;
  std::vector<std::uint64_t> seeds;

  void input(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw Error(ErrorKind::io, "input file not found: " + p.string());
    const auto abs = absolute_path(p);
    if (std::find(inputs.begin(), inputs.end(), abs) != inputs.end()) return;
    inputs.push_back(abs);
    digests.emplace_back(abs.string(), sha256_file(abs));
  }

  void space_input(const fs::path& p) {
    input(p);
    input(vocab_path_for(p));
  }

  // Outputs are write-once: existing files need --force, inputs are never targets.
  void claim(const std::vector<fs::path>& paths) const {
    for (const auto& p : paths) {
      const auto abs = absolute_path(p);
      if (std::find(inputs.begin(), inputs.end(), abs) != inputs.end()) {
        throw Error(ErrorKind::parameter, "output " + p.string() + " is also an input");
      }
      if (fs::exists(abs) && !force) throw Error(ErrorKind::io, p.string() + " exists; pass --force to overwrite");
    }
    for (const auto& p : paths) {
      const auto parent = absolute_path(p).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
    }
  }

  void write_manifest(const fs::path& path) const {
    const RunManifest m{subcommand, flags, digests, XALIGN_VERSION, seeds};
    write_json(to_json(m), path);
  }
};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::set<std::string> paths;  // option names holding file paths
  std::function<int(Invocation&)> run;
};

CLI::Option* path_option(Command& c, const std::string& flag, std::string& var, const std::string& desc) {
  c.paths.insert(flag.substr(2));
  return c.app->add_option(flag, var, desc);
}

// Flags as parsed, defaults included, paths made absolute. Empty values are
// recorded only for switches.
std::vector<std::pair<std::string, std::string>> resolved_flags(const Command& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const CLI::Option* opt : c.app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "force") continue;
    if (opt->get_type_size_max() == 0) {
      if (opt->count() > 0) out.emplace_back(name, "");
      continue;
    }
    std::string value = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
    if (value.empty()) continue;
    if (c.paths.contains(name)) value = absolute_path(value).string();
    out.emplace_back(name, value);
  }
  return out;
}

void log_precision(const std::string& prefix, const std::vector<Index>& ks, const std::vector<double>& precision) {
  std::cerr << prefix;
  for (std::size_t i = 0; i < ks.size(); ++i) std::cerr << " P@" << ks[i] << '=' << format_number(precision[i]);
  std::cerr << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation and binning shared by eval, analyze and run

struct EvalArgs {
  std::string map, src, tgt, candidates, pairs;
  std::string metric = "csls";
  Index csls_k = 10;
  std::string ks = "1,10,100";
  std::string csls_reference = "eval";
};

void add_eval_options(Command& c, EvalArgs& a) {
  path_option(c, "--map", a.map, "Alignment model (.map)")->required();
  path_option(c, "--src", a.src, "Source space (.emb)")->required();
  path_option(c, "--tgt", a.tgt, "Target space (.emb)")->required();
  path_option(c, "--candidates", a.candidates, "Extra candidate vocabulary (.emb), joined with the target");
  path_option(c, "--pairs", a.pairs, "Evaluation pairs TSV")->required();
  c.app->add_option("--metric", a.metric, "Retrieval score")->check(CLI::IsMember({"cosine", "csls"}));
  c.app->add_option("--csls-k", a.csls_k, "CSLS neighbourhood size K")->check(CLI::PositiveNumber);
  c.app->add_option("--k", a.ks, "Comma-separated cut-offs for P@k");
  c.app->add_option("--csls-reference", a.csls_reference, "Rows defining r_S: eval queries or all sources")
      ->check(CLI::IsMember({"eval", "all"}));
}

EvalOptions eval_options(const std::string& metric, Index csls_k, const std::string& ks, const std::string& reference) {
  EvalOptions o;
  o.metric = parse_metric(metric);
  if (csls_k < 1) throw Error(ErrorKind::parameter, "CSLS K must be >= 1");
  o.csls.K = csls_k;
  o.ks = parse_ks(ks);
  o.reference = parse_reference(reference);
  return o;
}

EvalOptions eval_options(const EvalArgs& a) { return eval_options(a.metric, a.csls_k, a.ks, a.csls_reference); }

void register_eval_inputs(Invocation& inv, const EvalArgs& a) {
  inv.input(a.map);
  inv.space_input(a.src);
  inv.space_input(a.tgt);
  if (!a.candidates.empty()) inv.space_input(a.candidates);
  inv.input(a.pairs);
}

EvalResult evaluate_files(const EvalArgs& a, const EvalOptions& o) {
  const auto model = load_model(a.map);
  std::optional<EmbeddingSpace> extra;
  if (!a.candidates.empty()) extra = load_space(a.candidates);
  return evaluate(model, load_space(a.src), load_space(a.tgt), extra, read_pairs(a.pairs), o);
}

std::set<std::string> gold_labels(const EvalResult& r) {
  std::set<std::string> out;
  for (const auto& g : r.gold) {
    for (Index i : g) out.insert(r.candidates.label(i));
  }
  return out;
}

/**
 * Tertiles of the values that belong to this evaluation: query labels when
 * keyed by concept, gold aliases when keyed by alias. Unvalued items are
 * reported as uncovered.
 */
BinnedReport dispersion_report(const EvalResult& r, const std::vector<std::pair<std::string, double>>& values,
                               bool by_alias, BinMode mode) {
  std::set<std::string> wanted;
  if (by_alias) {
    wanted = gold_labels(r);
  } else {
    wanted.insert(r.queries.begin(), r.queries.end());
  }
  std::vector<std::pair<std::string, double>> kept;
  for (const auto& v : values) {
    if (wanted.contains(v.first)) kept.push_back(v);
  }
  const auto bins = tertile_bins(kept);
  std::size_t uncovered = 0;
  std::vector<Bin> members;
  if (by_alias) {
    members = bins_by_alias(bins, kTertileNames, r.gold, r.candidates, &uncovered);
  } else {
    members = bins_by_query(bins, kTertileNames, r.queries, r.gold);
    uncovered = r.queries.size() - kept.size();
  }
  auto report = binned_report(BinKind::dispersion_tertile, members, r.ranked, r.ks, mode);
  report.uncovered = static_cast<double>(uncovered);
  return report;
}

BinnedReport polysemy_report(const EvalResult& r, const std::map<std::string, std::int64_t>& table, BinMode mode) {
  const auto wanted = gold_labels(r);
  std::vector<std::pair<std::string, std::int64_t>> counts;
  for (const auto& [alias, count] : table) {
    if (wanted.contains(alias)) counts.emplace_back(alias, count);
  }
  std::size_t uncovered = 0;
  const auto bins = bins_by_alias(polysemy_bins(counts), kPolysemyNames, r.gold, r.candidates, &uncovered);
  auto report = binned_report(BinKind::polysemy, bins, r.ranked, r.ks, mode);
  report.uncovered = static_cast<double>(uncovered);
  return report;
}

std::vector<std::pair<std::string, double>> read_values(const fs::path& path) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& row : detail::read_tsv(path, 2, "label")) {
    out.emplace_back(row.fields[0], detail::parse_double(row.fields[1], path, row.line_no));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_groups(const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& row : detail::read_tsv(path, 2, "item")) out.emplace_back(row.fields[0], row.fields[1]);
  return out;
}

void write_dispersion_values(const std::vector<DispersionRecord>& records, const fs::path& path) {
  auto out = detail::open_for_write(path);
  out << "label\tdispersion\tn_items\n";
  for (const auto& r : records) out << r.label << '\t' << format_number(r.value) << '\t' << r.n_items << '\n';
}

fs::path json_twin(fs::path tsv) { return tsv.replace_extension(".json"); }

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  std::string relation = "isomorphic";
  Index n = 1000;
  Index dim_src = 64;
  Index dim_tgt = 64;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out_prefix;
};

int run_synth(Invocation& inv, const SynthArgs& a) {
  const SynthConfig config{a.n, a.dim_src, a.dim_tgt, a.noise, a.seed, parse_relation(a.relation)};
  const fs::path src = a.out_prefix + ".src.emb";
  const fs::path tgt = a.out_prefix + ".tgt.emb";
  const fs::path pairs = a.out_prefix + ".pairs.tsv";
  const fs::path dict = a.out_prefix + ".dict.tsv";
  const fs::path cfg = a.out_prefix + ".config.json";
  const auto manifest = manifest_path_for(a.out_prefix);
  inv.seeds = {a.seed};
  inv.claim({src, vocab_path_for(src), tgt, vocab_path_for(tgt), pairs, dict, cfg, manifest});

  const auto spaces = generate(config);
  save_space(spaces.source, src);
  save_space(spaces.target, tgt);
  write_pairs(spaces.pairs, pairs);
  write_raw_dictionary(synth_dictionary(spaces.pairs), dict);
  Json c;
  c["relation"] = to_string(config.relation);
  c["n"] = config.n;
  c["d_source"] = config.d_source;
  c["d_target"] = config.d_target;
  c["noise_sigma"] = config.noise_sigma;
  c["seed"] = config.seed;
  c["version"] = XALIGN_VERSION;
  write_json(c, cfg);
  inv.write_manifest(manifest);
  std::cerr << "synth: " << spaces.source.rows() << "x" << spaces.source.dim() << " source, " << spaces.target.rows()
            << "x" << spaces.target.dim() << " target\n";
  return 0;
}

struct SplitArgs {
  std::string dict, out;
  std::string ratios = "0.7,0.15,0.15";
  std::uint64_t seed = 0;
  int folds = 5;
  std::int64_t min_images = 100;
  std::int64_t min_alias_count = 5;
  bool emit_pairs = false;
};

fs::path fold_pairs_path(const fs::path& out, int fold, Split s) {
  return out.parent_path() /
         (out.stem().string() + ".fold" + std::to_string(fold) + "." + to_string(s) + ".pairs.tsv");
}

int run_split(Invocation& inv, const SplitArgs& a) {
  const auto ratios = parse_ratios(a.ratios);
  inv.seeds = {a.seed};
  inv.input(a.dict);
  std::vector<fs::path> outputs{a.out, manifest_path_for(a.out)};
  if (a.emit_pairs) {
    for (int f = 0; f < a.folds; ++f) {
      for (Split s : {Split::train, Split::val, Split::test}) outputs.push_back(fold_pairs_path(a.out, f, s));
    }
  }
  inv.claim(outputs);

  const auto dict = filter_dictionary(read_raw_dictionary(a.dict), a.min_images, a.min_alias_count);
  const auto folds = assign_splits(dict, ratios, a.seed, a.folds);
  write_splits(folds, a.out);
  if (a.emit_pairs) {
    for (const auto& f : folds) {
      for (Split s : {Split::train, Split::val, Split::test}) {
        write_pairs(pairs_for(dict, f.part(s)), fold_pairs_path(a.out, f.fold_index, s));
      }
    }
  }
  inv.write_manifest(manifest_path_for(a.out));
  const auto& first = folds.front();
  std::cerr << "split: " << dict.classes.size() << " classes, " << dict.pair_count << " pairs; " << first.train.size()
            << "/" << first.val.size() << "/" << first.test.size() << " per fold, " << folds.size() << " folds\n";
  return 0;
}

struct FitArgs {
  std::string src, tgt, pairs, out;
  std::string preprocess = "unit";
  std::string pca_fit = "train";
  std::string multi_alias = "repeat";
  bool pca = false;
};

int run_fit(Invocation& inv, const FitArgs& a) {
  const auto mode = parse_preprocessing(a.preprocess);
  const AlignOptions opts{parse_pca_fit(a.pca_fit), parse_multi_alias(a.multi_alias), a.pca};
  inv.space_input(a.src);
  inv.space_input(a.tgt);
  inv.input(a.pairs);
  inv.claim({a.out, manifest_path_for(a.out)});

  const auto model = fit_alignment(load_space(a.src), load_space(a.tgt), read_pairs(a.pairs), mode, opts);
  save_model(model, a.out);
  inv.write_manifest(manifest_path_for(a.out));
  std::cerr << "fit: common_dim=" << model.common_dim << " source_pca=" << (model.source_pca ? "yes" : "no")
            << " target_pca=" << (model.target_pca ? "yes" : "no")
            << " orthogonality_error=" << model.map.orthogonality_error() << '\n';
  return 0;
}

struct EvalCmdArgs {
  EvalArgs eval;
  std::string report;
  int fold = 0;
  std::uint64_t seed = 0;
};

fs::path query_dump_path(fs::path report) { return report.replace_extension(".queries.tsv"); }

int run_eval(Invocation& inv, const EvalCmdArgs& a) {
  const auto opts = eval_options(a.eval);
  inv.seeds = {a.seed};
  register_eval_inputs(inv, a.eval);
  inv.claim({a.report, query_dump_path(a.report), manifest_path_for(a.report)});

  const auto result = evaluate_files(a.eval, opts);
  write_json(to_json(make_eval_report(result, opts, a.fold, a.seed)), a.report);
  write_query_dump(result, query_dump_path(a.report));
  inv.write_manifest(manifest_path_for(a.report));
  log_precision("eval: " + std::to_string(result.queries.size()) + " queries, " +
                    std::to_string(result.candidates.rows()) + " candidates;",
                result.ks, result.precision);
  return 0;
}

struct AnalyzeArgs {
  EvalArgs eval;
  std::string mode;
  std::string report;
  std::string values, items, groups;
  std::string keyed_by = "concept";
  std::string polysemy;
};

int run_analyze_dispersion(Invocation& inv, const AnalyzeArgs& a) {
  const auto opts = eval_options(a.eval);
  const auto mode = parse_bin_mode(a.mode.empty() ? "concept" : a.mode);
  const bool from_items = a.values.empty();
  if (from_items && (a.items.empty() || a.groups.empty())) {
    throw Error(ErrorKind::parameter, "dispersion needs --values, or --items with --groups");
  }
  if (!from_items && !(a.items.empty() && a.groups.empty())) {
    throw Error(ErrorKind::parameter, "--values excludes --items/--groups");
  }
  register_eval_inputs(inv, a.eval);
  if (from_items) {
    inv.space_input(a.items);
    inv.input(a.groups);
  } else {
    inv.input(a.values);
  }
  const fs::path report = a.report;
  fs::path values_out = report;
  values_out.replace_extension(".values.tsv");
  std::vector<fs::path> outputs{report, json_twin(report), manifest_path_for(report)};
  if (from_items) outputs.push_back(values_out);
  inv.claim(outputs);

  std::vector<std::pair<std::string, double>> values;
  if (from_items) {
    const auto records = group_dispersion(load_space(a.items), read_groups(a.groups));
    write_dispersion_values(records, values_out);
    for (const auto& r : records) values.emplace_back(r.label, r.value);
  } else {
    values = read_values(a.values);
  }
  const auto result = evaluate_files(a.eval, opts);
  const auto binned = dispersion_report(result, values, a.keyed_by == "alias", mode);
  write_binned_report(binned, report);
  inv.write_manifest(manifest_path_for(report));
  for (const auto& row : binned.rows) log_precision("analyze: bin " + row.label + ";", binned.ks, row.precision);
  return 0;
}

int run_analyze_polysemy(Invocation& inv, const AnalyzeArgs& a) {
  const auto opts = eval_options(a.eval);
  const auto mode = parse_bin_mode(a.mode.empty() ? "per-alias" : a.mode);
  register_eval_inputs(inv, a.eval);
  inv.input(a.polysemy);
  const fs::path report = a.report;
  inv.claim({report, json_twin(report), manifest_path_for(report)});

  const auto result = evaluate_files(a.eval, opts);
  const auto binned = polysemy_report(result, read_polysemy(a.polysemy), mode);
  write_binned_report(binned, report);
  inv.write_manifest(manifest_path_for(report));
  for (const auto& row : binned.rows) log_precision("analyze: bin " + row.label + ";", binned.ks, row.precision);
  if (binned.uncovered > 0) std::cerr << "analyze: " << binned.uncovered << " gold aliases without meaning counts\n";
  return 0;
}

// ---------------------------------------------------------------------------
// run: the whole pipeline from one config

struct Setting {
  const char* key;
  const char* fallback;
  bool is_path;
};

constexpr Setting kRunSettings[] = {
    {"source", "", true},
    {"target", "", true},
    {"dictionary", "", true},
    {"candidates", "", true},
    {"polysemy", "", true},
    {"dispersion", "", true},
    {"out_dir", "", true},
    {"folds", "5", false},
    {"seed", "0", false},
    {"ratios", "0.7,0.15,0.15", false},
    {"min_images", "100", false},
    {"min_alias_count", "5", false},
    {"preprocess", "unit", false},
    {"pca_fit", "train", false},
    {"multi_alias", "repeat", false},
    {"metric", "csls", false},
    {"csls_k", "10", false},
    {"ks", "1,10,100", false},
    {"csls_reference", "eval", false},
    {"eval_split", "test", false},
    {"dispersion_keyed_by", "concept", false},
    {"dispersion_mode", "concept", false},
    {"polysemy_mode", "per-alias", false},
};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

struct RunArgs {
  std::string config;
  std::map<std::string, std::string> overrides;  // keyed by setting
};

int run_pipeline(Invocation& inv, const RunArgs& a, const CLI::App& app) {
  const fs::path config = absolute_path(a.config);
  inv.input(config);

  std::map<std::string, std::string> settings;
  std::map<std::string, const Setting*> schema;
  for (const auto& s : kRunSettings) {
    settings[s.key] = s.fallback;
    schema[s.key] = &s;
  }
  for (const auto& [key, value] : read_config(config)) {
    auto it = schema.find(key);
    if (it == schema.end()) throw Error(ErrorKind::parameter, config.string() + ": unknown key '" + key + "'");
    settings[key] = it->second->is_path && !value.empty() ? (config.parent_path() / value).lexically_normal().string()
                                                         : value;
  }
  for (const auto& s : kRunSettings) {
    if (app.get_option("--" + flag_name(s.key))->count() == 0) continue;
    const auto& value = a.overrides.at(s.key);
    settings[s.key] = s.is_path && !value.empty() ? absolute_path(value).string() : value;
  }
  for (const char* key : {"source", "target", "dictionary"}) {
    if (settings[key].empty()) throw Error(ErrorKind::parameter, "config does not name '" + std::string(key) + "'");
  }
  if (settings["out_dir"].empty()) {
    settings["out_dir"] = (config.parent_path() / (config.stem().string() + ".out")).string();
  }

  // Parameters first (usage errors), then inputs (data errors), then compute.
  const int folds = parse_number<int>("folds", settings["folds"]);
  const auto seed = parse_number<std::uint64_t>("seed", settings["seed"]);
  const auto ratios = parse_ratios(settings["ratios"]);
  const auto min_images = parse_number<std::int64_t>("min_images", settings["min_images"]);
  const auto min_alias_count = parse_number<std::int64_t>("min_alias_count", settings["min_alias_count"]);
  const auto preprocessing = parse_preprocessing(settings["preprocess"]);
  const AlignOptions align_opts{parse_pca_fit(settings["pca_fit"]), parse_multi_alias(settings["multi_alias"]), false};
  const auto eval_opts = eval_options(settings["metric"], parse_number<Index>("csls_k", settings["csls_k"]),
                                      settings["ks"], settings["csls_reference"]);
  const auto eval_split = parse_split(settings["eval_split"]);
  const bool disp_by_alias = settings["dispersion_keyed_by"] == "alias";
  if (!disp_by_alias && settings["dispersion_keyed_by"] != "concept") {
    throw Error(ErrorKind::parameter, "dispersion_keyed_by must be concept or alias");
  }
  const auto disp_mode = parse_bin_mode(settings["dispersion_mode"]);
  const auto poly_mode = parse_bin_mode(settings["polysemy_mode"]);
  if (folds < 1) throw Error(ErrorKind::parameter, "folds must be >= 1");

  inv.space_input(settings["source"]);
  inv.space_input(settings["target"]);
  inv.input(settings["dictionary"]);
  if (!settings["candidates"].empty()) inv.space_input(settings["candidates"]);
  if (!settings["polysemy"].empty()) inv.input(settings["polysemy"]);
  if (!settings["dispersion"].empty()) inv.input(settings["dispersion"]);

  inv.seeds = {seed};
  inv.flags = {{"config", config.string()}};
  for (const auto& s : kRunSettings) {
    if (!settings[s.key].empty()) inv.flags.emplace_back(flag_name(s.key), settings[s.key]);
  }

  const fs::path out_dir = settings["out_dir"];
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !inv.force) {
    throw Error(ErrorKind::io, out_dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(out_dir);
  const fs::path marker = out_dir / "PARTIAL";
  fs::remove(marker);

  std::string stage = "load";
  try {
    const auto source = load_space(settings["source"]);
    const auto target = load_space(settings["target"]);
    std::optional<EmbeddingSpace> extra;
    if (!settings["candidates"].empty()) extra = load_space(settings["candidates"]);
    std::optional<std::map<std::string, std::int64_t>> polysemy;
    if (!settings["polysemy"].empty()) polysemy = read_polysemy(settings["polysemy"]);
    std::optional<std::vector<std::pair<std::string, double>>> dispersion_values;
    if (!settings["dispersion"].empty()) dispersion_values = read_values(settings["dispersion"]);

    stage = "split";
    const auto dict = filter_dictionary(read_raw_dictionary(settings["dictionary"]), min_images, min_alias_count);
    const auto assignments = assign_splits(dict, ratios, seed, folds);
    write_splits(assignments, out_dir / "splits.tsv");

    std::vector<EvalReport> eval_reports;
    std::vector<BinnedReport> poly_reports, disp_reports;
    for (const auto& fold : assignments) {
      const std::string tag = "fold" + std::to_string(fold.fold_index);
      stage = tag + " fit";
      const auto model =
          fit_alignment(source, target, pairs_for(dict, fold.train), preprocessing, align_opts);
      save_model(model, out_dir / (tag + ".map"));

      stage = tag + " eval";
      const auto result = evaluate(model, source, target, extra, pairs_for(dict, fold.part(eval_split)), eval_opts);
      eval_reports.push_back(make_eval_report(result, eval_opts, fold.fold_index, seed));
      write_json(to_json(eval_reports.back()), out_dir / (tag + ".eval.json"));
      write_query_dump(result, out_dir / (tag + ".queries.tsv"));
      log_precision("run: " + tag + ";", result.ks, result.precision);

      stage = tag + " analyze";
      if (polysemy) {
        poly_reports.push_back(polysemy_report(result, *polysemy, poly_mode));
        write_binned_report(poly_reports.back(), out_dir / (tag + ".polysemy.tsv"));
      }
      if (dispersion_values) {
        disp_reports.push_back(dispersion_report(result, *dispersion_values, disp_by_alias, disp_mode));
        write_binned_report(disp_reports.back(), out_dir / (tag + ".dispersion.tsv"));
      }
    }

    stage = "mean";
    const auto mean = mean_eval_report(eval_reports);
    write_json(to_json(mean), out_dir / "mean.eval.json");
    if (!poly_reports.empty()) write_binned_report(mean_over_folds(poly_reports), out_dir / "mean.polysemy.tsv");
    if (!disp_reports.empty()) write_binned_report(mean_over_folds(disp_reports), out_dir / "mean.dispersion.tsv");
    inv.write_manifest(manifest_path_for(out_dir / "run"));
    log_precision("run: mean;", mean.ks, mean.precision);
  } catch (const std::exception& e) {
    std::ofstream out(marker);
    out << "stage\t" << stage << "\nerror\t" << e.what() << '\n';
    throw;
  }
  return 0;
}

int run_replay(const std::string& manifest_path, bool force) {
  const auto m = read_manifest(manifest_path);
  if (m.version != XALIGN_VERSION) warn("manifest written by version " + m.version + ", running " + XALIGN_VERSION);
  for (const auto& [path, digest] : m.inputs) {
    if (!fs::is_regular_file(path)) throw Error(ErrorKind::io, "recorded input missing: " + path);
    if (sha256_file(path) != digest) throw Error(ErrorKind::consistency, "recorded input changed: " + path);
  }
  std::vector<std::string> args;
  std::istringstream words(m.subcommand);
  for (std::string w; words >> w;) args.push_back(w);
  for (const auto& [k, v] : m.flags) {
    args.push_back("--" + k);
    if (!v.empty()) args.push_back(v);
  }
  if (force) args.emplace_back("--force");
  return dispatch(args);
}

// ---------------------------------------------------------------------------

class Cli {
 public:
  Cli() {
    app_.option_defaults()->always_capture_default();
    app_.require_subcommand(1);
    app_.failure_message(CLI::FailureMessage::help);
    app_.set_version_flag("--version", XALIGN_VERSION);

    {
      auto& c = add("synth", app_.add_subcommand("synth", "Generate synthetic spaces with known ground truth"));
      c.app->add_option("--relation", synth_.relation, "isomorphic, unrelated or hubby")
          ->check(CLI::IsMember({"isomorphic", "unrelated", "hubby"}));
      c.app->add_option("--n", synth_.n, "Rows per space")->check(CLI::PositiveNumber);
      c.app->add_option("--dim-src", synth_.dim_src, "Source dimension")->check(CLI::PositiveNumber);
      c.app->add_option("--dim-tgt", synth_.dim_tgt, "Target dimension")->check(CLI::PositiveNumber);
      c.app->add_option("--noise", synth_.noise, "Gaussian noise sigma on the target")->check(CLI::NonNegativeNumber);
      c.app->add_option("--seed", synth_.seed, "Seed");
      path_option(c, "--out-prefix", synth_.out_prefix, "Output path prefix")->required();
      c.run = [this](Invocation& inv) { return run_synth(inv, synth_); };
    }
    {
      auto& c = add("split", app_.add_subcommand("split", "Filter a dictionary and assign train/val/test folds"));
      path_option(c, "--dict", split_.dict, "Raw dictionary TSV")->required();
      c.app->add_option("--ratios", split_.ratios, "train,val,test fractions");
      c.app->add_option("--seed", split_.seed, "Seed");
      c.app->add_option("--folds", split_.folds, "Number of folds")->check(CLI::PositiveNumber);
      c.app->add_option("--min-images", split_.min_images, "Keep classes with more images than this");
      c.app->add_option("--min-alias-count", split_.min_alias_count, "Keep aliases seen at least this often");
      c.app->add_flag("--emit-pairs", split_.emit_pairs, "Also write per-fold pair files");
      path_option(c, "--out", split_.out, "Split TSV")->required();
      c.run = [this](Invocation& inv) { return run_split(inv, split_); };
    }
    {
      auto& c = add("fit", app_.add_subcommand("fit", "Fit PCA + orthogonal Procrustes from training pairs"));
      path_option(c, "--src", fit_.src, "Source space (.emb)")->required();
      path_option(c, "--tgt", fit_.tgt, "Target space (.emb)")->required();
      path_option(c, "--pairs", fit_.pairs, "Training pairs TSV")->required();
      c.app->add_option("--preprocess", fit_.preprocess, "none, unit or center-unit")
          ->check(CLI::IsMember({"none", "unit", "center-unit"}));
      c.app->add_option("--pca-fit", fit_.pca_fit, "Rows the PCA is fitted on")->check(CLI::IsMember({"train", "all"}));
      c.app->add_option("--multi-alias", fit_.multi_alias, "Rows per multi-alias class")
          ->check(CLI::IsMember({"repeat", "average"}));
      c.app->add_flag("--pca", fit_.pca, "Request PCA (ignored with a warning when dimensions agree)");
      path_option(c, "--out", fit_.out, "Model file (.map)")->required();
      c.run = [this](Invocation& inv) { return run_fit(inv, fit_); };
    }
    {
      auto& c = add("eval", app_.add_subcommand("eval", "Retrieve mapped queries and score P@k"));
      add_eval_options(c, eval_.eval);
      path_option(c, "--report", eval_.report, "Report JSON; a .queries.tsv dump is written beside it")->required();
      c.app->add_option("--fold", eval_.fold, "Fold index recorded in the report");
      c.app->add_option("--seed", eval_.seed, "Seed recorded in the report");
      c.run = [this](Invocation& inv) { return run_eval(inv, eval_); };
    }
    {
      auto* analyze = app_.add_subcommand("analyze", "Binned P@k reports");
      analyze->require_subcommand(1);
      auto& d = add("analyze dispersion", analyze->add_subcommand("dispersion", "P@k by dispersion tertile"));
      add_eval_options(d, disp_.eval);
      d.app->add_option("--mode", disp_.mode, "concept (default) or per-alias")
          ->check(CLI::IsMember({"concept", "per-alias"}));
      path_option(d, "--values", disp_.values, "Precomputed dispersion TSV: label, value");
      path_option(d, "--items", disp_.items, "Item vectors (.emb) to compute dispersion from");
      path_option(d, "--groups", disp_.groups, "TSV: item label, group label");
      d.app->add_option("--keyed-by", disp_.keyed_by, "Values belong to concepts (queries) or aliases")
          ->check(CLI::IsMember({"concept", "alias"}));
      path_option(d, "--report", disp_.report, "Report TSV; a JSON twin is written beside it")->required();
      d.run = [this](Invocation& inv) { return run_analyze_dispersion(inv, disp_); };

      auto& p = add("analyze polysemy", analyze->add_subcommand("polysemy", "P@k by alias meaning count"));
      add_eval_options(p, poly_.eval);
      p.app->add_option("--mode", poly_.mode, "per-alias (default) or concept")
          ->check(CLI::IsMember({"concept", "per-alias"}));
      path_option(p, "--polysemy", poly_.polysemy, "TSV: alias, meaning_count")->required();
      path_option(p, "--report", poly_.report, "Report TSV; a JSON twin is written beside it")->required();
      p.run = [this](Invocation& inv) { return run_analyze_polysemy(inv, poly_); };
    }
    {
      auto& c = add("run", app_.add_subcommand("run", "Split, fit, eval and analyze every fold from a config"));
      path_option(c, "--config", run_.config, "key = value config file")->required();
      for (const auto& s : kRunSettings) {
        c.app->add_option("--" + flag_name(s.key), run_.overrides[s.key], std::string("Override '") + s.key + "'");
      }
      run_app_ = c.app;
      c.run = [this](Invocation& inv) { return run_pipeline(inv, run_, *run_app_); };
    }
    {
      auto& c = add("replay", app_.add_subcommand("replay", "Re-run a recorded manifest"));
      path_option(c, "--manifest", replay_manifest_, "Manifest JSON")->required();
      c.run = [this](Invocation& inv) { return run_replay(replay_manifest_, inv.force); };
    }
  }

  int dispatch(std::vector<std::string> args) {
    std::reverse(args.begin(), args.end());
    try {
      app_.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e, std::cout, std::cerr);
      return code == 0 ? 0 : 1;
    }
    Command* chosen = nullptr;
    for (auto& c : commands_) {
      if (c->app->parsed()) chosen = c.get();
    }
    if (!chosen) {
      std::cerr << app_.help();
      return 1;
    }
    Invocation inv;
    inv.subcommand = chosen->name;
    inv.force = force_;
    try {
      inv.flags = resolved_flags(*chosen);
      return chosen->run(inv);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_code_for(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
  }

 private:
  Command& add(std::string name, CLI::App* app) {
    auto c = std::make_unique<Command>();
    c->name = std::move(name);
    c->app = app;
    app->add_flag("--force", force_, "Overwrite existing outputs");
    commands_.push_back(std::move(c));
    return *commands_.back();
  }

  CLI::App app_{"Embedding-space alignment and retrieval toolkit", "xalign"};
  std::vector<std::unique_ptr<Command>> commands_;
  bool force_ = false;
  SynthArgs synth_;
  SplitArgs split_;
  FitArgs fit_;
  EvalCmdArgs eval_;
  AnalyzeArgs disp_, poly_;
  RunArgs run_;
  CLI::App* run_app_ = nullptr;
  std::string replay_manifest_;
};

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  Cli cli;
  return cli.dispatch(args);
}

}  // namespace xalign::cli
