// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mata/commands.hpp"

#ifndef MATA_CLI_PATH
#error "MATA_CLI_PATH must point at the mata executable"
#endif

namespace mata::cli {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("mata_cli_test_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  Result mata(const std::string& args, const std::string& env = "") {
    const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" MATA_CLI_PATH "' " + args + " > out.txt 2> err.txt";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir / "out.txt"), slurp(dir / "err.txt")};
  }

  /// A small synthetic pair under dir/syn.
  void small_pair() {
    ASSERT_EQ(mata("synth --out syn --per-class 20 --dim1 16 --dim2 16 --seed 3").code, 0);
  }

  fs::path write_config(const std::string& runs, const std::string& extra = "") {
    const auto path = dir / "exp.json";
    spit(path, R"({"output": "out", "seed": 5, "sources": {"m1": "syn/synthetic_m1", "m2": "syn/synthetic_m2"},
                   "train": {"epochs": 3}, )" +
                   extra + runs + "}");
    return path;
  }

  fs::path dir;
};

void expect_single_line_diagnostic(const Result& r, const char* kind) {
  ASSERT_FALSE(r.err.empty());
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1) << r.err;
  auto j = Json::parse(r.err);
  EXPECT_EQ(j["kind"], kind) << r.err;
  EXPECT_EQ(j["exit"], r.code);
  EXPECT_FALSE(j["message"].get<std::string>().empty());
}

TEST_F(Cli, SynthIsDeterministic) {
  ASSERT_EQ(mata("synth --out a --classes 4 --per-class 100 --seed 7").code, 0);
  auto r = mata("synth --out b --classes 4 --per-class 100 --seed 7");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("nearest-mean accuracy"), std::string::npos);
  for (const char* f : {"synthetic_m1.emb", "synthetic_m1.manifest.json", "synthetic_m2.emb", "synthetic_m2.manifest.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  EXPECT_EQ(data::read_dataset(dir / "a/synthetic_m2").records.size(), 400u);
}

TEST_F(Cli, SynthRejectsBadSpec) {
  auto r = mata("synth --classes 1");
  EXPECT_EQ(r.code, exit_usage);
  expect_single_line_diagnostic(r, "usage");
  EXPECT_EQ(mata("synth --merge1 0,9").code, exit_usage);
  EXPECT_EQ(mata("synth --sigma 0").code, exit_usage);
  EXPECT_EQ(mata("synth --per-class many").code, exit_usage);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(mata("").code, exit_usage);
  EXPECT_EQ(mata("frobnicate").code, exit_usage);
  EXPECT_EQ(mata("run").code, exit_usage);
}

TEST_F(Cli, InspectFreshAndTruncated) {
  small_pair();
  auto ok = mata("inspect syn/synthetic_m1.emb");
  EXPECT_EQ(ok.code, 0);
  EXPECT_NE(ok.out.find("records   80"), std::string::npos) << ok.out;
  EXPECT_NE(ok.out.find("all checks passed"), std::string::npos);
  const auto emb = dir / "syn/synthetic_m1.emb";
  const auto bytes = slurp(emb);
  spit(emb, bytes.substr(0, bytes.size() - 64));
  auto bad = mata("inspect syn/synthetic_m1");
  EXPECT_EQ(bad.code, exit_data);
  expect_single_line_diagnostic(bad, "data");
  EXPECT_NE(bad.err.find("row count mismatch"), std::string::npos) << bad.err;
}

TEST_F(Cli, InspectListsViolations) {
  data::EmbeddingDataset ds{"d", "m", 2, {"a", "b"}, {{"x", 0, {1, 2}}, {"y", 1, {3, 4}}}};
  data::write_dataset(ds, dir / "v");
  auto j = Json::parse(slurp(dir / "v.manifest.json"));
  j["records"][1]["sampleId"] = "x";
  j["records"][0]["labelIndex"] = 5;
  spit(dir / "v.manifest.json", j.dump());
  auto r = mata("inspect v");
  EXPECT_EQ(r.code, exit_data);
  EXPECT_NE(r.out.find("violation: record 0"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("duplicate sample id"), std::string::npos) << r.out;
}

TEST_F(Cli, InspectSixClassDataset) {
  data::EmbeddingDataset ds{"jnv-like", "m", 8, {"a", "b", "c", "d", "e", "f"}, {}};
  for (int i = 0; i < 420; ++i) ds.records.push_back({"clip" + std::to_string(i), i % 6, std::vector<float>(8, 0.5f)});
  data::write_dataset(ds, dir / "jnv");
  auto r = mata("inspect jnv");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("records   420"), std::string::npos);
  EXPECT_NE(r.out.find("classes   6"), std::string::npos);
}

TEST_F(Cli, RunWritesFiveFoldsAndIsReproducible) {
  small_pair();
  write_config(R"("run": {"name": "solo", "variant": "individual", "sources": ["m1"]})");
  auto first = mata("run exp.json");
  ASSERT_EQ(first.code, 0) << first.err;
  const std::string report = slurp(dir / "out/report.json");
  auto j = Json::parse(report);
  ASSERT_EQ(j["runs"].size(), 1u);
  EXPECT_EQ(j["runs"][0]["folds"].size(), 5u);
  for (const char* f : {"report.txt", "report.csv", "confusion_solo.csv", "curves_solo.csv", "checkpoint_solo_fold4.bin"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  auto model = checkpoint::read<float>((dir / "out/checkpoint_solo_fold0.bin").string());
  EXPECT_EQ(model.spec().variant, Variant::Individual);

  ASSERT_EQ(mata("run exp.json --set output=out2", "MATA_THREADS=3").code, 0);
  EXPECT_EQ(slurp(dir / "out2/report.json"), report);
  ASSERT_EQ(mata("run exp.json --set output=out3", "MATA_THREADS=1").code, 0);
  EXPECT_EQ(slurp(dir / "out3/report.json"), report);
  EXPECT_EQ(slurp(dir / "out3/report.csv"), slurp(dir / "out/report.csv"));
}

TEST_F(Cli, RunFusionOnDisjointIdsIsDataError) {
  small_pair();
  auto ds = data::read_dataset(dir / "syn/synthetic_m2");
  for (auto& r : ds.records) r.sample_id = "other_" + r.sample_id;
  data::write_dataset(ds, dir / "syn/synthetic_m2");
  write_config(R"("run": {"variant": "mata", "sources": ["m1", "m2"]})");
  auto r = mata("run exp.json");
  EXPECT_EQ(r.code, exit_data);
  expect_single_line_diagnostic(r, "data");
  EXPECT_NE(r.err.find("no overlap"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigErrors) {
  small_pair();
  write_config(R"("run": {"variant": "mata", "sources": ["m1"]})");
  auto r = mata("run exp.json");
  EXPECT_EQ(r.code, exit_config);
  expect_single_line_diagnostic(r, "config");
  EXPECT_EQ(mata("run missing.json").code, exit_config);
  write_config(R"("run": {"variant": "individual", "sources": ["nope"]})");
  EXPECT_EQ(mata("run exp.json").code, exit_config);
  write_config(R"("run": {"variant": "individual", "sources": ["m1"]})");
  EXPECT_EQ(mata("run exp.json --set train.validationFraction=0.7").code, exit_config);
  EXPECT_EQ(mata("run exp.json --set sinkhorn.epsilon=-1").code, exit_config);
  EXPECT_EQ(mata("run exp.json --set sources.m1=gone").code, exit_config);
  EXPECT_EQ(mata("run exp.json", "MATA_THREADS=zero").code, exit_config);
  EXPECT_EQ(mata("run exp.json --set novalue").code, exit_usage);
}

TEST_F(Cli, CompareGroupsFiveRunsOnOneSplit) {
  small_pair();
  write_config(R"("runs": [
      {"name": "m1", "variant": "individual", "sources": ["m1"]},
      {"name": "m2", "variant": "individual", "sources": ["m2"]},
      {"name": "cat", "variant": "concat", "sources": ["m1", "m2"]},
      {"name": "ot", "variant": "ot", "sources": ["m1", "m2"]},
      {"name": "mata", "variant": "mata", "sources": ["m1", "m2"]}])",
               R"("checkpoints": false, "folds": 4, )");
  auto r = mata("compare exp.json");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(dir / "out/report.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1, 2u + 2u * 4u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 6u);
  const std::string text = slurp(dir / "out/report.txt");
  for (const char* regime : {"Individual Representations", "Fusion with Concatenation", "Fusion with OT",
                             "Fusion with MATA"})
    EXPECT_NE(text.find(regime), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out/checkpoint_m1_fold0.bin"));
  // Every run was tested on the same ids, fold by fold.
  auto j = Json::parse(slurp(dir / "out/report.json"));
  for (const auto& run : j["runs"])
    for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(run["folds"][f]["testSize"], j["runs"][0]["folds"][f]["testSize"]);
}

TEST_F(Cli, SinkhornLogHasOneLinePerSolve) {
  small_pair();
  write_config(R"("run": {"variant": "ot", "sources": ["m1", "m2"]})", R"("checkpoints": false, )");
  ASSERT_EQ(mata("run exp.json --set train.epochs=1 --sinkhorn-log sk.jsonl").code, 0);
  std::istringstream in(slurp(dir / "sk.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    auto j = Json::parse(line);
    EXPECT_TRUE(j["converged"].get<bool>());
    ++n;
  }
  EXPECT_GT(n, 0u);
}

TEST(Overrides, DottedPathsAndTypes) {
  Json doc = Json::parse(R"({"train": {"epochs": 50}, "runs": [{"variant": "mata"}]})");
  detail::apply_override(doc, "train.epochs=7");
  detail::apply_override(doc, "runs.0.variant=ot");
  detail::apply_override(doc, "sinkhorn.logDomain=false");
  detail::apply_override(doc, "output=some/dir");
  EXPECT_EQ(doc["train"]["epochs"], 7);
  EXPECT_EQ(doc["runs"][0]["variant"], "ot");
  EXPECT_EQ(doc["sinkhorn"]["logDomain"], false);
  EXPECT_EQ(doc["output"], "some/dir");
  EXPECT_THROW(detail::apply_override(doc, "runs.3.variant=ot"), UsageError);
  EXPECT_THROW(detail::apply_override(doc, "train.epochs.x=1"), UsageError);
  EXPECT_THROW(detail::apply_override(doc, "=1"), UsageError);
}

TEST(Report, PercentRounding) {
  EXPECT_EQ(report::percent(0.764705), "76.47");
  EXPECT_EQ(report::percent(0.7035), "70.35");
  EXPECT_EQ(report::percent(1.0), "100.00");
  EXPECT_EQ(report::percent(0.0), "0.00");
}

eval::RunResult stored_run(const std::string& name, Variant v, double acc, double f1, std::size_t k) {
  eval::RunResult r;
  r.name = name;
  r.spec.variant = v;
  r.label_names = {"a", "b"};
  for (std::size_t f = 0; f < k; ++f) {
    eval::FoldResult fold;
    fold.metrics.accuracy = acc;
    fold.metrics.macro_f1 = f1;
    fold.metrics.confusion = {{1, 0}, {0, 1}};
    r.folds.push_back(fold);
  }
  r.mean_accuracy = acc;
  r.mean_macro_f1 = f1;
  return r;
}

TEST(Report, StoredRowRendersLikeTheTable) {
  std::vector<eval::RunResult> runs = {stored_run("LB+IB", Variant::MATA, 0.7647, 0.7035, 5),
                                       stored_run("LB", Variant::Individual, 0.70, 0.60, 5)};
  const std::string text = report::text(runs);
  EXPECT_NE(text.find("LB+IB"), std::string::npos);
  const auto row = text.substr(text.find("LB+IB"));
  EXPECT_NE(row.find("76.47"), std::string::npos);
  EXPECT_NE(row.find("70.35"), std::string::npos);
  // Individual rows come first whatever the input order.
  EXPECT_LT(text.find("Individual Representations"), text.find("Fusion with MATA"));
  EXPECT_EQ(report::file_stem("LB+IB"), "LB_IB");
}

TEST(Report, CsvHasTwoPlusTwoKColumns) {
  for (std::size_t k : {2u, 5u, 10u}) {
    std::istringstream csv(report::csv({stored_run("x", Variant::OTFusion, 0.5, 0.4, k)}));
    std::string line;
    while (std::getline(csv, line))
      EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1, 2 + 2 * k);
  }
}

TEST(Report, ConfusionSumsFolds) {
  const std::string c = report::confusion_csv(stored_run("x", Variant::MATA, 1, 1, 3));
  EXPECT_EQ(c, "true\\predicted,a,b\na,3,0\nb,0,3\n");
}

}  // namespace
}  // namespace mata::cli
