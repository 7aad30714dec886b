#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>

#include "hyperx/commands.hpp"

using namespace hyperx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hyperx_cli_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

struct Result {
  int code = -1;
  std::string output;
};

/// Runs a shell command line and captures stdout+stderr.
Result run(const std::string& cmdline, const fs::path& scratch) {
  const fs::path log = scratch / "cmd.log";
  const int status = std::system((cmdline + " > '" + log.string() + "' 2>&1").c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = slurp(log);
  fs::remove(log);
  return r;
}

std::string hyperx_cmd(const std::string& args) { return std::string("'") + HYPERX_CLI_PATH + "' " + args; }

/// Narrow model and short runs so every CLI path executes in seconds.
constexpr const char* kSmallConfig = R"({
  "model": {"eeg": {"n": 10, "hidden": 10, "embed": 20}, "ecg": {"n": 3, "hidden": 6, "embed": 12},
            "eye": {"n": 4, "hidden": 8, "embed": 16}, "gsr_width": 4, "fusion_widths": [16, 16, 8],
            "segment_seconds": 2.0, "dropout": 0.1},
  "train": {"epochs": 3, "patience": 3, "batch_size": 8, "max_lr": 0.01, "train_frac": 0.75}
})";

/// Shared small raw dataset plus config file, created once.
class CliRuns : public ::testing::Test {
 protected:
  static inline std::unique_ptr<TempDir> dir;
  static void SetUpTestSuite() {
    dir = std::make_unique<TempDir>("suite");
    std::ofstream(dir->path / "small.json") << kSmallConfig;
    const auto r = run(hyperx_cmd("synth --out '" + (dir->path / "raw").string() +
                                  "' --subjects 2 --trials 9 --trial-seconds 12 --noise 0.2 --seed 3"),
                       dir->path);
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() { dir.reset(); }
  static std::string raw() { return "'" + (dir->path / "raw").string() + "'"; }
  static std::string config() { return "'" + (dir->path / "small.json").string() + "'"; }
};

}  // namespace

// ---------------------------------------------------------------------------
// Helpers

TEST(GitBlobSha1, MatchesGitHashObject) {
  // Reference digests from `git hash-object`.
  EXPECT_EQ(cli::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(cli::git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(cli::git_blob_sha1(std::string("a\0b", 3)), cli::git_blob_sha1(std::string("a\0b", 3)));
  EXPECT_NE(cli::git_blob_sha1("a"), cli::git_blob_sha1("b"));
}

TEST(GitBlobSha1, AgreesWithGitWhenAvailable) {
  TempDir d("sha");
  const std::string content = "{\"schema\": \"x\"}\n\x01\x02 binary tail";
  std::ofstream(d.path / "f", std::ios::binary) << content;
  const auto r = run("git hash-object '" + (d.path / "f").string() + "'", d.path);
  if (r.code != 0) GTEST_SKIP() << "git not available";
  EXPECT_EQ(r.output.substr(0, 40), cli::git_blob_sha1(content));
}

TEST(ResolveThreads, EnvironmentCapsTheRequest) {
  unsetenv("HYPERX_THREADS");
  EXPECT_EQ(cli::resolve_threads(3), 3u);
  EXPECT_GE(cli::resolve_threads(std::nullopt), 1u);
  setenv("HYPERX_THREADS", "2", 1);
  EXPECT_EQ(cli::resolve_threads(8), 2u);
  EXPECT_EQ(cli::resolve_threads(1), 1u);
  setenv("HYPERX_THREADS", "zero", 1);
  EXPECT_THROW(cli::resolve_threads(4), cli::UsageError);
  setenv("HYPERX_THREADS", "0", 1);
  EXPECT_THROW(cli::resolve_threads(4), cli::UsageError);
  unsetenv("HYPERX_THREADS");
}

TEST(PrepareOutputDir, NonEmptyNeedsForce) {
  TempDir d("prep");
  const fs::path out = d.path / "out";
  cli::prepare_output_dir(out, false);
  EXPECT_TRUE(fs::is_directory(out));
  cli::prepare_output_dir(out, false);  // empty is fine
  std::ofstream(out / "stale.txt") << "x";
  EXPECT_THROW(cli::prepare_output_dir(out, false), cli::UsageError);
  cli::prepare_output_dir(out, true);
  EXPECT_TRUE(fs::is_empty(out));
  std::ofstream(d.path / "file") << "x";
  EXPECT_THROW(cli::prepare_output_dir(d.path / "file", true), cli::UsageError);
}

TEST(ParseSeedList, AcceptsCommaSeparatedIntegers) {
  EXPECT_EQ(cli::parse_seed_list("1,2,3,4,5"), (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(cli::parse_seed_list("42"), (std::vector<std::uint64_t>{42}));
  EXPECT_THROW(cli::parse_seed_list(""), cli::UsageError);
  EXPECT_THROW(cli::parse_seed_list("1,,2"), cli::UsageError);
  EXPECT_THROW(cli::parse_seed_list("1,-2"), cli::UsageError);
}

TEST(ResolveConfig, FlagsOverrideFileOverrideDefaults) {
  TempDir d("cfg");
  std::ofstream(d.path / "c.json") << R"({"model": {"variant": "conv", "dropout": 0.25},
                                        "train": {"epochs": 20, "patience": 5, "max_lr": 0.001}})";
  const auto r = cli::resolve_config(d.path / "c.json", {{"variant", "phm"}}, {{"epochs", 30}});
  EXPECT_EQ(r.model.variant, EncoderVariant::phm);  // flag beats file
  EXPECT_EQ(r.model.dropout, 0.25);                 // file beats default
  EXPECT_EQ(r.train.epochs, 30);
  EXPECT_EQ(r.train.patience, 5);
  EXPECT_EQ(r.train.max_lr, 0.001);
  EXPECT_EQ(r.train.batch_size, TrainConfig{}.batch_size);  // default survives
  EXPECT_FALSE(r.seed_given);
  EXPECT_TRUE(cli::resolve_config(d.path / "c.json", {}, {{"seed", 3}}).seed_given);

  std::ofstream(d.path / "bad.json") << R"({"model": {}, "optimizer": {}})";
  EXPECT_THROW(cli::resolve_config(d.path / "bad.json", {}, {}), ConfigError);
  std::ofstream(d.path / "broken.json") << "{";
  EXPECT_THROW(cli::resolve_config(d.path / "broken.json", {}, {}), ConfigError);
}

TEST(RunGuarded, MapsErrorsToExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(cli::run_guarded([] { return 0; }, err), cli::kOk);
  EXPECT_EQ(cli::run_guarded([]() -> int { throw cli::UsageError("u"); }, err), cli::kUsage);
  EXPECT_EQ(cli::run_guarded([]() -> int { throw ConfigError("c"); }, err), cli::kUsage);
  EXPECT_EQ(cli::run_guarded([]() -> int { throw FormatError("f"); }, err), cli::kDataError);
  EXPECT_EQ(cli::run_guarded([]() -> int { throw IntegrityError("i"); }, err), cli::kDataError);
  EXPECT_EQ(cli::run_guarded([]() -> int { throw NumericError("n"); }, err), cli::kDataError);
  EXPECT_NE(err.str().find("error: f"), std::string::npos);
}

// ---------------------------------------------------------------------------
// synth / preprocess

TEST(CliSynth, DefaultSizeAndByteIdenticalRerun) {
  TempDir d("synth");
  const std::string a = (d.path / "a").string(), b = (d.path / "b").string();
  auto r = run(hyperx_cmd("synth --subjects 27 --trials 20 --seed 1 --out '" + a + "'"), d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("540 raw trials"), std::string::npos) << r.output;
  EXPECT_EQ(load_dataset(a).trials.size(), 540u);
  r = run(hyperx_cmd("synth --subjects 27 --trials 20 --seed 1 --out '" + b + "'"), d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(fs::path(a) / "manifest.json"), slurp(fs::path(b) / "manifest.json"));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(b) / fs::relative(e.path(), a))) << e.path();
  }
  EXPECT_EQ(files, 541u);

  // Existing output without --force is a usage error; --force regenerates.
  r = run(hyperx_cmd("synth --subjects 1 --trials 3 --out '" + a + "'"), d.path);
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.output.find("--force"), std::string::npos);
  r = run(hyperx_cmd("synth --subjects 1 --trials 3 --out '" + a + "' --force"), d.path);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(load_dataset(a).trials.size(), 3u);
}

TEST(CliSynth, ZeroNoiseDatasetScoresPerfectlyWithTheOracle) {
  TempDir d("oracle");
  const std::string out = (d.path / "clean").string();
  auto r = run(hyperx_cmd("synth --subjects 3 --trials 9 --noise 0 --out '" + out + "'"), d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  r = run(std::string("'") + HYPERX_ORACLE_PATH + "' --data '" + out + "' --min-accuracy 1", d.path);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("arousal 100.00%, valence 100.00%"), std::string::npos) << r.output;
}

TEST(CliSynth, InvalidSpecIsAUsageError) {
  TempDir d("badspec");
  EXPECT_EQ(run(hyperx_cmd("synth --subjects 0 --out '" + (d.path / "x").string() + "'"), d.path).code, cli::kUsage);
  EXPECT_EQ(run(hyperx_cmd("synth --noise -1 --out '" + (d.path / "y").string() + "'"), d.path).code, cli::kUsage);
  EXPECT_EQ(run(hyperx_cmd("synth"), d.path).code, cli::kUsage);
  EXPECT_EQ(run(hyperx_cmd("frobnicate"), d.path).code, cli::kUsage);
}

TEST_F(CliRuns, PreprocessMatchesTheLibraryAndRejectsPreprocessedInput) {
  TempDir d("pre");
  const std::string out = (d.path / "pre").string();
  auto r = run(hyperx_cmd("preprocess --data " + raw() + " --out '" + out + "' --threads 2"), d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  // Same bytes as the library path with one worker.
  save_dataset(preprocess_dataset(load_dataset(dir->path / "raw"), PreprocessConfig{}, 1), d.path / "lib");
  for (const auto& e : fs::recursive_directory_iterator(d.path / "lib"))
    if (e.is_regular_file())
      EXPECT_EQ(slurp(e.path()), slurp(fs::path(out) / fs::relative(e.path(), d.path / "lib"))) << e.path();
  EXPECT_EQ(load_dataset(out).stage, Stage::preprocessed);
  r = run(hyperx_cmd("preprocess --data '" + out + "' --out '" + (d.path / "again").string() + "'"), d.path);
  EXPECT_EQ(r.code, cli::kDataError);
  r = run(hyperx_cmd("preprocess --data '" + (d.path / "missing").string() + "' --out '" + (d.path / "z").string() +
                     "'"),
          d.path);
  EXPECT_EQ(r.code, cli::kDataError);
}

TEST_F(CliRuns, InvalidThreadCapIsAUsageError) {
  TempDir d("envcap");
  const auto r = run("HYPERX_THREADS=abc " +
                         hyperx_cmd("preprocess --data " + raw() + " --out '" + (d.path / "p").string() + "'"),
                     d.path);
  EXPECT_EQ(r.code, cli::kUsage) << r.output;
}

// ---------------------------------------------------------------------------
// train / eval

TEST_F(CliRuns, TrainWritesReportsAndEvalReproducesThem) {
  TempDir d("train");
  const fs::path out = d.path / "run";
  auto r = run(hyperx_cmd("train --data " + raw() + " --out '" + out.string() + "' --config " + config() +
                          " --variant phc --target arousal --seed 4"),
               d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* header : {"Params", "F1-score", "Accuracy"}) EXPECT_NE(r.output.find(header), std::string::npos);

  const fs::path seed_dir = out / "phc" / "seed-4";
  const auto report = nlohmann::json::parse(slurp(seed_dir / "report.json"));
  EXPECT_EQ(report.at("schema_version"), cli::kReportSchemaVersion);
  EXPECT_TRUE(report.at("test").contains("macro_f1"));
  EXPECT_TRUE(report.at("test").contains("accuracy"));
  EXPECT_GT(report.at("params").at("total").get<std::size_t>(), 0u);
  EXPECT_EQ(report.at("history").size(), 3u);
  EXPECT_EQ(report.at("split").at("unit"), "segment");

  const auto runj = nlohmann::json::parse(slurp(out / "run.json"));
  EXPECT_EQ(runj.at("schema_version"), cli::kReportSchemaVersion);
  EXPECT_EQ(runj.at("dataset").at("manifest_sha1"),
            cli::git_blob_sha1(slurp(dir->path / "raw" / "manifest.json")));
  EXPECT_EQ(runj.at("dataset").at("stage"), "raw");
  EXPECT_EQ(runj.at("model").at("variant"), "phc");
  EXPECT_EQ(runj.at("train").at("epochs"), 3);  // from the config file
  EXPECT_EQ(runj.at("train").at("seed"), 4);    // from the flag

  // eval on the same split reproduces the best-epoch test metrics exactly.
  r = run(hyperx_cmd("eval --checkpoint '" + (seed_dir / "checkpoint.h2ck").string() + "' --data " + raw() +
                     " --out '" + (d.path / "ev").string() + "' --emit-embeddings '" +
                     (d.path / "emb.csv").string() + "'"),
          d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto ev = nlohmann::json::parse(slurp(d.path / "ev" / "eval.json"));
  EXPECT_EQ(ev.at("metrics").at("macro_f1").get<double>(), report.at("test").at("macro_f1").get<double>());
  EXPECT_EQ(ev.at("metrics").at("accuracy").get<double>(), report.at("test").at("accuracy").get<double>());
  EXPECT_EQ(ev.at("metrics").at("confusion"), report.at("test").at("confusion"));
  EXPECT_TRUE(fs::exists(d.path / "ev" / "confusion.csv"));

  // One CSV row per test segment; fusion-input width plus a label column.
  const ModelConfig mc = model_config_from_json(nlohmann::json::parse(kSmallConfig).at("model"));
  std::ifstream emb(d.path / "emb.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(emb, line);
  EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1, mc.fusion_input() + 1);
  EXPECT_TRUE(line.ends_with(",label"));
  while (std::getline(emb, line)) {
    ++rows;
    EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1, mc.fusion_input() + 1);
  }
  EXPECT_EQ(rows, report.at("split").at("test").get<std::size_t>());

  // --split all covers every segment; target override is honoured.
  r = run(hyperx_cmd("eval --checkpoint '" + (seed_dir / "checkpoint.h2ck").string() + "' --data " + raw() +
                     " --split all --target valence --out '" + (d.path / "ev_all").string() + "'"),
          d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto all = nlohmann::json::parse(slurp(d.path / "ev_all" / "eval.json"));
  EXPECT_EQ(all.at("metrics").at("total"), 18u * 6u);
  EXPECT_EQ(all.at("target"), "valence");
}

TEST_F(CliRuns, EvalWithMissingCheckpointFailsClearly) {
  TempDir d("evmiss");
  const auto r = run(hyperx_cmd("eval --checkpoint '" + (d.path / "none.h2ck").string() + "' --data " + raw()), d.path);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("does not exist"), std::string::npos) << r.output;
}

TEST_F(CliRuns, IdenticalFlagsGiveIdenticalHistoryAndCheckpointBytes) {
  TempDir d("det");
  for (const char* name : {"a", "b"}) {
    const auto r = run(hyperx_cmd("train --quiet --data " + raw() + " --out '" + (d.path / name).string() +
                                  "' --config " + config() + " --seed 9"),
                       d.path);
    ASSERT_EQ(r.code, 0) << r.output;
  }
  for (const char* file : {"history.csv", "checkpoint.h2ck"}) {
    const auto a = slurp(d.path / "a" / "phc" / "seed-9" / file), b = slurp(d.path / "b" / "phc" / "seed-9" / file);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, b) << file;
  }
}

TEST_F(CliRuns, SweepProducesOneRowPerVariantWithSeedStatistics) {
  TempDir d("sweep");
  const fs::path out = d.path / "sweep";
  const auto r = run(hyperx_cmd("train --quiet --data " + raw() + " --out '" + out.string() + "' --config " +
                                config() + " --sweep-variants --seeds 1,2 --epochs 1 --patience 1"),
                     d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  ASSERT_EQ(summary.at("rows").size(), 4u);
  std::vector<std::string> order;
  for (const auto& row : summary.at("rows")) {
    order.push_back(row.at("variant"));
    EXPECT_EQ(row.at("runs").size(), 2u);
  }
  EXPECT_EQ(order, (std::vector<std::string>{"linear", "phm", "conv", "phc"}));
  // Table rows print mean ± std over the seeds.
  const std::regex row_re(R"((linear|phm|conv|phc)\s+\d+\s+\d\.\d{4} ± \d\.\d{4}\s+\d\.\d{4} ± \d\.\d{4})");
  std::size_t table_rows = 0;
  for (std::sregex_iterator it(r.output.begin(), r.output.end(), row_re), end; it != end; ++it) ++table_rows;
  EXPECT_EQ(table_rows, 4u) << r.output;
  const std::string csv = slurp(out / "summary.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  for (const char* v : {"linear", "phm", "conv", "phc"})
    for (int s : {1, 2}) EXPECT_TRUE(fs::exists(out / v / ("seed-" + std::to_string(s)) / "checkpoint.h2ck"));
}

TEST_F(CliRuns, WithoutSeedFlagsFiveSeedsRun) {
  TempDir d("fiveseeds");
  const fs::path out = d.path / "run";
  const auto r = run(hyperx_cmd("train --quiet --data " + raw() + " --out '" + out.string() + "' --config " +
                                config() + " --epochs 1 --patience 1"),
                     d.path);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  ASSERT_EQ(summary.at("rows").size(), 1u);
  EXPECT_EQ(summary.at("rows")[0].at("runs").size(), 5u);
  for (int s = 1; s <= 5; ++s) EXPECT_TRUE(fs::exists(out / "phc" / ("seed-" + std::to_string(s)) / "report.json"));
}

TEST_F(CliRuns, TrainRejectsBadInvocations) {
  TempDir d("badtrain");
  auto out = [&](const char* n) { return " --out '" + (d.path / n).string() + "'"; };
  auto r = run(hyperx_cmd("train --data " + raw() + out("a") + " --variant quaternion"), d.path);
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.output.find("quaternion"), std::string::npos);
  std::ofstream(d.path / "div.json") << R"({"model": {"eeg": {"hidden": 7}}})";
  r = run(hyperx_cmd("train --data " + raw() + out("b") + " --config '" + (d.path / "div.json").string() + "'"),
          d.path);
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.output.find("pick a multiple of 10"), std::string::npos) << r.output;
  r = run(hyperx_cmd("train --data " + raw() + out("c") + " --sweep-variants --variant phc"), d.path);
  EXPECT_EQ(r.code, cli::kUsage);
  r = run(hyperx_cmd("train --data " + raw() + out("d") + " --seed 1 --seeds 1,2"), d.path);
  EXPECT_EQ(r.code, cli::kUsage);
  r = run(hyperx_cmd("train --data '" + (d.path / "nothing").string() + "'" + out("e")), d.path);
  EXPECT_EQ(r.code, cli::kDataError);
}

TEST_F(CliRuns, DivergedRunKeepsLastGoodCheckpointAndExitsWithDataError) {
  TempDir d("diverge");
  const fs::path out = d.path / "run";
  const auto r = run(hyperx_cmd("train --quiet --data " + raw() + " --out '" + out.string() + "' --config " +
                                config() + " --max-lr 1e200 --seed 2"),
                     d.path);
  EXPECT_EQ(r.code, cli::kDataError) << r.output;
  EXPECT_NE(r.output.find("diverged"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(out / "phc" / "seed-2" / "report.json"));
  EXPECT_EQ(report.at("stop_reason"), "diverged");
  const auto ck = load_checkpoint(out / "phc" / "seed-2" / "checkpoint.h2ck");
  for (const auto& t : ck.tensors)
    for (double v : t.tensor.data()) ASSERT_TRUE(std::isfinite(v)) << t.name;
}

// ---------------------------------------------------------------------------
// gradcheck

TEST(CliGradcheck, LayerChecksPassAndWriteJson) {
  TempDir d("gc");
  const auto r = run(hyperx_cmd("gradcheck --layer phc --json '" + (d.path / "gc.json").string() + "'"), d.path);
  EXPECT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(d.path / "gc.json"));
  EXPECT_EQ(j.at("schema_version"), cli::kReportSchemaVersion);
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_EQ(j.at("checks").size(), 5u);  // n = 1..5
}

TEST(CliGradcheck, BrokenBackwardIsCaught) {
  TempDir d("gcbreak");
  const auto r = run(hyperx_cmd("gradcheck --layer dense --break-backward"), d.path);
  EXPECT_EQ(r.code, cli::kCheckFailed) << r.output;
  EXPECT_NE(r.output.find("[FAIL]"), std::string::npos);
}

TEST(CliGradcheck, HamiltonQuaternionOracle) {
  TempDir d("gcham");
  const auto r = run(hyperx_cmd("gradcheck --layer phm --n 4 --hamilton"), d.path);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("[PASS] phm n=4 hamilton vs quaternion product (1000 pairs)"), std::string::npos)
      << r.output;
}

TEST(CliGradcheck, UsageErrors) {
  TempDir d("gcuse");
  EXPECT_EQ(run(hyperx_cmd("gradcheck --layer lstm"), d.path).code, cli::kUsage);
  EXPECT_EQ(run(hyperx_cmd("gradcheck --layer phc --hamilton"), d.path).code, cli::kUsage);
  EXPECT_EQ(run(hyperx_cmd("gradcheck --layer phm --n 0"), d.path).code, cli::kUsage);
}

TEST(RunGradchecks, BreakFlagIsRestoredAfterwards) {
  cli::GradcheckOptions o;
  o.layer = "dense";
  o.break_backward = true;
  const auto checks = cli::run_gradchecks(o);
  ASSERT_EQ(checks.size(), 1u);
  EXPECT_FALSE(checks[0].passed);
  EXPECT_FALSE(debug::corrupt_backward().load());
  o.break_backward = false;
  EXPECT_TRUE(cli::run_gradchecks(o)[0].passed);
}
