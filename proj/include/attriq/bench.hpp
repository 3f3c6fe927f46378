// Batch runner behind the attriq CLI: explain, evaluate, benchmark and
// validate, driven by a JSON run config.
//
// Exit codes: 0 ok, 1 internal bug, 2 config, 3 IO, 4 computation.

#ifndef ATTRIQ_BENCH_HPP
#define ATTRIQ_BENCH_HPP

#include "attriq/attrib_image.hpp"
#include "attriq/attrib_tabular.hpp"
#include "attriq/core.hpp"
#include "attriq/metrics_image.hpp"
#include "attriq/metrics_tabular.hpp"
#include "attriq/model.hpp"
#include "attriq/report.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace attriq {

enum class Command { kExplain, kEvaluate, kBenchmark, kValidate };
enum class Task { kBinaryClassification, kMulticlassClassification, kRegression };
enum class Modality { kTabular, kImage };

inline constexpr int kExitOk = 0;
inline constexpr int kExitBug = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitComputation = 4;

std::string_view TaskName(Task task);
std::optional<Task> ParseTask(std::string_view name);

// Warning text when the task does not fit the model's class count.
std::optional<std::string> TaskMismatch(Task task, int n_classes);

struct ExplainerSpec {
  std::string label;  // output file stem; defaults to the method name
  std::string method;
  TabularExplainerOptions tabular;
  ImageExplainerOptions image;
  std::vector<std::string> option_keys;  // checked against the method once modality is known
};

struct InstanceSelection {
  enum class Kind { kAll, kIndices, kHead };
  Kind kind = Kind::kAll;
  std::vector<int> indices;
  int head = 0;
};

struct RunConfig {
  std::string model_path;  // resolved against the config file directory
  std::string data_path;
  // "data": every data row; "mean": the single column-mean row; else a CSV path.
  std::string background = "data";
  std::optional<std::string> label_column;
  bool csv_header = true;
  bool allow_missing = false;
  std::optional<Modality> modality;  // default: from the model input shape
  Task task = Task::kMulticlassClassification;
  ScoreMode score_mode = ScoreMode::kProbability;
  std::vector<ExplainerSpec> explainers;
  std::vector<std::string> metrics;  // empty: every metric of the modality
  TabularMetricsConfig tabular;      // perturbation defaults and top-k
  RegionSpec regions;
  std::optional<int> target_class;
  std::optional<std::uint64_t> seed;  // required here or via --seed
  std::string out_dir = "attriq-out";  // output.dir is relative to the config file
  std::vector<ReportFormat> formats{ReportFormat::kCsv};
  InstanceSelection instances;
  std::uint64_t config_hash = 0;  // FNV-1a of the config text
};

// Throws Error(kConfig) with the offending key path.
RunConfig ParseRunConfig(std::string_view json_text, const std::string& base_dir = ".");
RunConfig LoadRunConfig(const std::string& path);  // kIo when unreadable

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<ReportFormat> format;
  std::optional<int> jobs;  // falls back to ATTRIQ_JOBS, then 1
  bool verbose = false;
};

int ResolveJobs(const std::optional<int>& jobs);

// Runs one command end to end and returns the exit code; diagnostics go to
// `err`, the list of written files to `out`.
int RunCommand(Command command, const std::string& config_path, const RunOptions& options,
               std::ostream& out, std::ostream& err);

}  // namespace attriq

#endif  // ATTRIQ_BENCH_HPP
