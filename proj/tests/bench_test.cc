#include "attriq/bench.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "attriq/data_io.hpp"

namespace attriq {
namespace {

namespace fs = std::filesystem;

const std::string kFixtures = ATTRIQ_FIXTURE_DIR;

fs::path Scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "attriq_bench_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Writes a config next to nothing in particular: model/data paths are absolute.
std::string WriteConfig(const fs::path& dir, const std::string& body) {
  const std::string path = (dir / "config.json").string();
  WriteFile(path, body);
  return path;
}

std::string IrisConfig(const std::string& extra, const std::string& model = "iris_linear.json") {
  return R"({"model": ")" + kFixtures + "/" + model + R"(", "data": ")" + kFixtures +
         R"(/iris_like.csv", "label_column": "species", "task": "multiclass-classification", )" +
         extra + "}";
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome Invoke(Command cmd, const std::string& config, const fs::path& out_dir,
            std::optional<int> jobs = 1) {
  RunOptions opt;
  opt.out_dir = out_dir.string();
  opt.jobs = jobs;
  std::ostringstream out, err;
  const int code = RunCommand(cmd, config, opt, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> ReadCsvCells(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(ReadFile(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

TEST(RunConfigTest, ParsesFixtureConfigs) {
  for (const char* name : {"iris_explain.json", "iris_evaluate.json", "iris_benchmark.json",
                           "iris_forest_benchmark.json", "bars_benchmark.json"}) {
    EXPECT_NO_THROW(LoadRunConfig(kFixtures + "/" + name)) << name;
  }
  const RunConfig c = LoadRunConfig(kFixtures + "/iris_benchmark.json");
  EXPECT_EQ(c.explainers.size(), 7u);
  EXPECT_EQ(c.explainers[1].tabular.n_coalitions, 64);
  EXPECT_EQ(c.explainers[2].tabular.lime.n_samples, 1000);
  EXPECT_EQ(c.tabular.infidelity_draws, 32);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.formats, (std::vector<ReportFormat>{ReportFormat::kCsv, ReportFormat::kMarkdown}));
  EXPECT_EQ(c.model_path, kFixtures + "/iris_mlp.json");
}

TEST(RunConfigTest, ErrorsNameTheKey) {
  auto expect = [](const std::string& body, const std::string& fragment) {
    try {
      ParseRunConfig(body);
      ADD_FAILURE() << "accepted: " << body;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kConfig);
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  const std::string base = R"("model": "m", "data": "d", "task": "regression")";
  expect("{" + base + R"(, "explainers": ["lime"], "colour": 1})", "colour: unknown key");
  expect(R"({"model": "m", "data": "d", "explainers": ["lime"]})", "task: required");
  expect("{" + base + R"(, "explainers": []})", "explainers: expected a non-empty array");
  expect("{" + base + R"(, "explainers": ["lime", "lime"]})", "duplicate label 'lime'");
  expect("{" + base + R"(, "explainers": [{"method": "lime", "n_samples": 0}]})",
         "explainers[0].n_samples: must be an integer >= 1");
  expect("{" + base + R"(, "explainers": ["lime"], "seed": -1})", "seed must be non-negative");
  expect("{" + base + R"(, "explainers": ["lime"], "topk": 0})", "topk");
  expect("{" + base + R"(, "explainers": ["lime"], "instances": {"indices": [1, -2]}})",
         "instances.indices[1]");
  expect("{" + base + R"(, "explainers": ["lime"], "output": {"formats": ["xml"]}})",
         "unknown format 'xml'");
  expect(R"({"model": "m", "data": "d", "task": "classification", "explainers": ["lime"]})",
         "unknown task 'classification'");
  expect("{" + base + R"(, "explainers": ["lime"], "perturbation": {"faithfulness": "zero"}})",
         "perturbation.faithfulness");
  expect("{not json", "not valid JSON");
}

TEST(RunConfigTest, TaskMismatch) {
  EXPECT_FALSE(TaskMismatch(Task::kMulticlassClassification, 3));
  EXPECT_FALSE(TaskMismatch(Task::kBinaryClassification, 2));
  EXPECT_FALSE(TaskMismatch(Task::kRegression, 1));
  EXPECT_TRUE(TaskMismatch(Task::kBinaryClassification, 3));
  EXPECT_TRUE(TaskMismatch(Task::kRegression, 2));
  EXPECT_TRUE(TaskMismatch(Task::kMulticlassClassification, 2));
}

TEST(RunConfigTest, JobsResolution) {
  EXPECT_EQ(ResolveJobs(3), 3);
  EXPECT_THROW(ResolveJobs(0), Error);
  setenv("ATTRIQ_JOBS", "5", 1);
  EXPECT_EQ(ResolveJobs(std::nullopt), 5);
  setenv("ATTRIQ_JOBS", "many", 1);
  EXPECT_THROW(ResolveJobs(std::nullopt), Error);
  unsetenv("ATTRIQ_JOBS");
  EXPECT_EQ(ResolveJobs(std::nullopt), 1);
}

TEST(ValidateTest, ExitCodes) {
  const fs::path dir = Scratch("validate");
  EXPECT_EQ(Invoke(Command::kValidate, kFixtures + "/iris_explain.json", dir).code, kExitOk);
  EXPECT_TRUE(fs::is_empty(dir)) << "validate must not write outputs";

  const Outcome bad_method =
      Invoke(Command::kValidate, WriteConfig(dir, IrisConfig(R"("seed": 1, "explainers": ["shap"])")),
          dir);
  EXPECT_EQ(bad_method.code, kExitConfig);
  EXPECT_NE(bad_method.err.find("unknown method 'shap'"), std::string::npos) << bad_method.err;
  EXPECT_NE(bad_method.err.find("exact_shapley, kernel_shap, lime"), std::string::npos);

  const Outcome wrong_option = Invoke(
      Command::kValidate,
      WriteConfig(dir, IrisConfig(R"("seed": 1, "explainers": [{"method": "saliency", "steps": 3}])")),
      dir);
  EXPECT_EQ(wrong_option.code, kExitConfig);
  EXPECT_NE(wrong_option.err.find("explainers[0].steps"), std::string::npos) << wrong_option.err;

  const Outcome bad_metric = Invoke(
      Command::kValidate,
      WriteConfig(dir, IrisConfig(R"("seed": 1, "explainers": ["lime"], "metrics": ["mprt"])")), dir);
  EXPECT_EQ(bad_metric.code, kExitConfig);
  EXPECT_NE(bad_metric.err.find("unknown tabular metric 'mprt'"), std::string::npos);

  const Outcome no_seed =
      Invoke(Command::kValidate, WriteConfig(dir, IrisConfig(R"("explainers": ["lime"])")), dir);
  EXPECT_EQ(no_seed.code, kExitConfig);
  EXPECT_NE(no_seed.err.find("seed"), std::string::npos);

  const Outcome missing_model = Invoke(
      Command::kValidate,
      WriteConfig(dir, IrisConfig(R"("seed": 1, "explainers": ["lime"])", "nope.json")), dir);
  EXPECT_EQ(missing_model.code, kExitIo);
  EXPECT_NE(missing_model.err.find("nope.json"), std::string::npos);

  EXPECT_EQ(Invoke(Command::kValidate, (dir / "absent.json").string(), dir).code, kExitIo);
  WriteFile((dir / "broken.json").string(), "{\"model\": ");
  EXPECT_EQ(Invoke(Command::kValidate, (dir / "broken.json").string(), dir).code, kExitConfig);

  const Outcome shape = Invoke(
      Command::kValidate,
      WriteConfig(dir, R"({"model": ")" + kFixtures + R"(/bars_cnn.json", "data": ")" + kFixtures +
                           R"(/iris_like.csv", "task": "multiclass-classification", "seed": 1,
                           "explainers": ["saliency"]})"),
      dir);
  EXPECT_EQ(shape.code, kExitIo) << shape.err;
}

TEST(ExplainTest, OutOfRangeIndexNamesTheIndex) {
  const fs::path dir = Scratch("explain_range");
  const Outcome o = Invoke(
      Command::kExplain,
      WriteConfig(dir, IrisConfig(R"("seed": 1, "explainers": ["lime"], "instances": {"indices": [2, 30]})")),
      dir / "out");
  EXPECT_EQ(o.code, kExitConfig);
  EXPECT_NE(o.err.find("index 30 out of range"), std::string::npos) << o.err;
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(ExplainTest, TwoExplainersTwoFilesPerInstance) {
  const fs::path dir = Scratch("explain_two");
  const Outcome o = Invoke(Command::kExplain, kFixtures + "/iris_explain.json", dir);
  ASSERT_EQ(o.code, kExitOk) << o.err;
  for (int id : {0, 12, 25}) {
    for (const char* m : {"exact_shapley", "kernel_shap"}) {
      const auto rows = ReadCsvCells(
          (dir / ("explain_" + std::string(m) + "_" + std::to_string(id) + ".csv")).string());
      ASSERT_EQ(rows.size(), 5u);
      EXPECT_EQ(rows[0], (std::vector<std::string>{"idx", "feature", "value", "attribution"}));
    }
  }
}

TEST(ExplainTest, CompletenessAgainstMeanBaseline) {
  const fs::path dir = Scratch("explain_complete");
  ASSERT_EQ(Invoke(Command::kExplain, kFixtures + "/iris_explain.json", dir).code, kExitOk);
  const Model model = LoadModel(kFixtures + "/iris_linear.json");
  CsvOptions opt;
  opt.label_column = "species";
  const TabularDataset ds = LoadCsv(kFixtures + "/iris_like.csv", opt);
  const Vector baseline = ds.features.colwise().mean().transpose();
  for (int id : {0, 12, 25}) {
    const Vector x = ds.features.row(id).transpose();
    const Vector px = Predict(model, x).scores;
    int target = 0;
    px.maxCoeff(&target);
    const Scalar expected = px(target) - Predict(model, baseline).scores(target);
    const auto rows =
        ReadCsvCells((dir / ("explain_exact_shapley_" + std::to_string(id) + ".csv")).string());
    Scalar sum = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      sum += std::stod(rows[r][3]);
      EXPECT_EQ(std::stod(rows[r][2]), x(std::stoi(rows[r][0])));
    }
    EXPECT_NEAR(sum, expected, 1e-9);
  }
}

TEST(ExplainTest, FailuresKeepPartialOutputs) {
  const fs::path dir = Scratch("explain_fail");
  const Outcome o = Invoke(
      Command::kExplain,
      WriteConfig(dir, IrisConfig(R"("seed": 1, "explainers": ["exact_shapley", "saliency"],
                                   "instances": {"head": 2})",
                                  "iris_forest.json")),
      dir / "out");
  EXPECT_EQ(o.code, kExitComputation);
  EXPECT_TRUE(fs::exists(dir / "out" / "explain_exact_shapley_1.csv"));
  EXPECT_FALSE(fs::exists(dir / "out" / "explain_saliency_0.csv"));
  const auto manifest = nlohmann::json::parse(ReadFile((dir / "out" / "manifest.json").string()));
  EXPECT_EQ(manifest["failures"].size(), 2u);
  EXPECT_EQ(manifest["failures"][0]["explainer"], "saliency");
  EXPECT_EQ(manifest["status"], "partial");
  EXPECT_EQ(manifest["exit_code"], kExitComputation);
}

TEST(ExplainTest, ImageMapsAndPgm) {
  const fs::path dir = Scratch("explain_image");
  const Outcome o = Invoke(
      Command::kExplain,
      WriteConfig(dir, R"({"model": ")" + kFixtures + R"(/bars_cnn.json", "data": ")" + kFixtures +
                           R"(/bars_8x8.npy", "task": "multiclass-classification", "seed": 1,
                           "explainers": ["grad_cam"], "instances": {"head": 1}})"),
      dir / "out");
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const auto rows = ReadCsvCells((dir / "out" / "explain_grad_cam_0.csv").string());
  EXPECT_EQ(rows.size(), 65u);
  const std::string pgm = ReadFile((dir / "out" / "explain_grad_cam_0.pgm").string());
  EXPECT_EQ(pgm.substr(0, 11), "P5\n8 8\n255\n");
}

TEST(EvaluateTest, CanonicalHeaderAndValues) {
  const fs::path dir = Scratch("evaluate");
  const Outcome o = Invoke(Command::kEvaluate, kFixtures + "/iris_evaluate.json", dir);
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const auto rows = ReadCsvCells((dir / "evaluate_exact_shapley.csv").string());
  ASSERT_EQ(rows.size(), 2u);
  const std::string text = ReadFile((dir / "evaluate_exact_shapley.csv").string());
  EXPECT_EQ(text.substr(0, text.find('\n') + 1),
            "faithfulness,infidelity,sensitivity,comprehensiveness,sufficiency,monotonicity,"
            "complexity,sparseness\n");
  EXPECT_EQ(rows[1][6], "4.0");
  EXPECT_EQ(rows[1][7], "0.0");
  const auto inst = ReadCsvCells((dir / "evaluate_exact_shapley_instances.csv").string());
  EXPECT_EQ(inst.size(), 31u);
  EXPECT_EQ(inst[0].front(), "instance");
  EXPECT_EQ(inst[0].back(), "error");
}

TEST(EvaluateTest, SubsetAndDeterminism) {
  const fs::path dir = Scratch("evaluate_subset");
  const std::string cfg = WriteConfig(
      dir, IrisConfig(R"("seed": 9, "explainers": [{"method": "lime", "n_samples": 500}],
                       "metrics": ["sparseness", "sensitivity", "faithfulness"],
                       "output": {"formats": ["csv", "json", "markdown"]})"));
  ASSERT_EQ(Invoke(Command::kEvaluate, cfg, dir / "a").code, kExitOk);
  ASSERT_EQ(Invoke(Command::kEvaluate, cfg, dir / "b", 4).code, kExitOk);
  const std::string agg = ReadFile((dir / "a" / "evaluate_lime.csv").string());
  EXPECT_EQ(agg.substr(0, agg.find('\n')), "faithfulness,sensitivity,sparseness");
  for (const char* f : {"evaluate_lime.csv", "evaluate_lime.json", "evaluate_lime.md",
                        "evaluate_lime_instances.csv"}) {
    EXPECT_EQ(ReadFile((dir / "a" / f).string()), ReadFile((dir / "b" / f).string())) << f;
  }
}

TEST(BenchmarkTest, MatrixShapeAndProvenance) {
  const fs::path dir = Scratch("bench_matrix");
  const std::string cfg = WriteConfig(
      dir, IrisConfig(R"("seed": 2, "explainers": ["exact_shapley", "feature_ablation"],
                       "metrics": ["complexity", "faithfulness", "monotonicity"],
                       "instances": {"head": 6})"));
  ASSERT_EQ(Invoke(Command::kBenchmark, cfg, dir / "out").code, kExitOk);
  const auto matrix = ReadCsvCells((dir / "out" / "benchmark.csv").string());
  ASSERT_EQ(matrix.size(), 3u);
  EXPECT_EQ(matrix[0], (std::vector<std::string>{"explainer", "faithfulness", "monotonicity",
                                                 "complexity"}));
  const auto cells = ReadCsvCells((dir / "out" / "benchmark_cells.csv").string());
  ASSERT_EQ(cells.size(), 7u);
  for (std::size_t r = 1; r < cells.size(); ++r) EXPECT_EQ(cells[r][3], "6");
}

TEST(BenchmarkTest, FailingExplainerIsolatedAndFlagged) {
  const fs::path dir = Scratch("bench_fail");
  const Outcome o = Invoke(Command::kBenchmark, kFixtures + "/iris_forest_benchmark.json", dir);
  EXPECT_EQ(o.code, kExitOk);
  EXPECT_NE(o.err.find("warning: task 'binary-classification'"), std::string::npos) << o.err;
  const auto manifest = nlohmann::json::parse(ReadFile((dir / "manifest.json").string()));
  EXPECT_EQ(manifest["status"], "partial");
  EXPECT_EQ(manifest["failures"].size(), 12u);
  EXPECT_EQ(manifest["warnings"].size(), 2u);
  const auto cells = ReadCsvCells((dir / "benchmark_cells.csv").string());
  for (const auto& row : cells) {
    if (row[0] == "integrated_gradients") {
      EXPECT_EQ(row[2], "undefined");
      EXPECT_EQ(row[5], "12");
    } else if (row[0] == "exact_shapley") {
      EXPECT_EQ(row[5], "0");
    }
  }
}

TEST(BenchmarkTest, CellsEqualIsolatedEvaluate) {
  const fs::path dir = Scratch("bench_compose");
  const std::string both = WriteConfig(
      dir, IrisConfig(R"("seed": 5, "explainers": ["kernel_shap", {"method": "lime", "n_samples": 400}],
                       "instances": {"head": 8})",
                      "iris_mlp.json"));
  ASSERT_EQ(Invoke(Command::kBenchmark, both, dir / "bench").code, kExitOk);
  const auto matrix = ReadCsvCells((dir / "bench" / "benchmark.csv").string());
  for (std::size_t e = 1; e < matrix.size(); ++e) {
    const std::string label = matrix[e][0];
    const fs::path sub = dir / label;
    fs::create_directories(sub);
    const std::string method = label == "lime" ? R"({"method": "lime", "n_samples": 400})"
                                               : "\"" + label + "\"";
    const std::string single = WriteConfig(
        sub, IrisConfig(R"("seed": 5, "explainers": [)" + method + R"(], "instances": {"head": 8})",
                        "iris_mlp.json"));
    ASSERT_EQ(Invoke(Command::kEvaluate, single, sub / "out").code, kExitOk);
    const auto agg = ReadCsvCells((sub / "out" / ("evaluate_" + label + ".csv")).string());
    ASSERT_EQ(agg[0].size() + 1, matrix[0].size());
    for (std::size_t m = 0; m < agg[0].size(); ++m) {
      EXPECT_EQ(agg[0][m], matrix[0][m + 1]);
      EXPECT_EQ(agg[1][m], matrix[e][m + 1]) << label << " " << agg[0][m];
    }
  }
}

TEST(BenchmarkTest, JobsDoNotChangeBytes) {
  const fs::path dir = Scratch("bench_jobs");
  const std::string cfg = kFixtures + "/bars_benchmark.json";
  ASSERT_EQ(Invoke(Command::kBenchmark, cfg, dir / "j1", 1).code, kExitOk);
  ASSERT_EQ(Invoke(Command::kBenchmark, cfg, dir / "j8", 8).code, kExitOk);
  for (const auto& entry : fs::directory_iterator(dir / "j1")) {
    const std::string name = entry.path().filename().string();
    std::string a = ReadFile(entry.path().string());
    std::string b = ReadFile((dir / "j8" / name).string());
    if (name == "manifest.json") {
      auto ja = nlohmann::json::parse(a), jb = nlohmann::json::parse(b);
      ja.erase("wall_time_seconds");
      jb.erase("wall_time_seconds");
      EXPECT_EQ(ja, jb);
    } else {
      EXPECT_EQ(a, b) << name;
    }
  }
}

}  // namespace
}  // namespace attriq
