#include "attriq/bench.hpp"

#include "attriq/data_io.hpp"
#include "attriq/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#ifndef ATTRIQ_VERSION
#define ATTRIQ_VERSION "0.0.0"
#endif

namespace attriq {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void ConfigFail(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::kConfig, (path.empty() ? "<root>" : path) + ": " + msg);
}

std::string Join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

std::string Child(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string Index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void CheckKeys(const json& obj, const std::string& path,
               const std::vector<std::string>& allowed) {
  if (!obj.is_object()) ConfigFail(path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      ConfigFail(Child(path, it.key()), "unknown key (valid: " + Join(allowed) + ")");
    }
  }
}

int GetInt(const json& v, const std::string& path, int lo) {
  if (!v.is_number_integer()) ConfigFail(path, "expected an integer");
  const auto x = v.get<long long>();
  if (x < lo || x > std::numeric_limits<int>::max()) {
    ConfigFail(path, "must be an integer >= " + std::to_string(lo));
  }
  return static_cast<int>(x);
}

Scalar GetNumber(const json& v, const std::string& path) {
  if (!v.is_number()) ConfigFail(path, "expected a number");
  const Scalar x = v.get<Scalar>();
  if (!std::isfinite(x)) ConfigFail(path, "must be finite");
  return x;
}

Scalar GetNonNegative(const json& v, const std::string& path) {
  const Scalar x = GetNumber(v, path);
  if (x < 0) ConfigFail(path, "must be >= 0");
  return x;
}

Scalar GetPositive(const json& v, const std::string& path) {
  const Scalar x = GetNumber(v, path);
  if (x <= 0) ConfigFail(path, "must be > 0");
  return x;
}

bool GetBool(const json& v, const std::string& path) {
  if (!v.is_boolean()) ConfigFail(path, "expected true or false");
  return v.get<bool>();
}

std::string GetString(const json& v, const std::string& path) {
  if (!v.is_string()) ConfigFail(path, "expected a string");
  return v.get<std::string>();
}

Vector GetVector(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) ConfigFail(path, "expected a non-empty array of numbers");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(i) = GetNumber(v[i], Index(path, i));
  return out;
}

std::uint64_t GetSeed(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) ConfigFail(path, "seed must be non-negative");
  ConfigFail(path, "expected an unsigned integer");
}

std::string ResolvePath(const std::string& base_dir, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path.lexically_normal().string();
  return (fs::path(base_dir) / path).lexically_normal().string();
}

// Option keys each method accepts, per modality.
const std::map<std::string, std::vector<std::string>>& TabularOptionKeys() {
  static const std::map<std::string, std::vector<std::string>> keys{
      {"exact_shapley", {}},
      {"kernel_shap", {"n_coalitions"}},
      {"lime", {"n_samples", "kernel_width", "ridge"}},
      {"integrated_gradients", {"steps", "baseline"}},
      {"saliency", {}},
      {"grad_x_input", {}},
      {"feature_ablation", {"baseline"}},
  };
  return keys;
}

const std::map<std::string, std::vector<std::string>>& ImageOptionKeys() {
  static const std::map<std::string, std::vector<std::string>> keys{
      {"saliency", {}},
      {"grad_x_input", {}},
      {"integrated_gradients", {"steps", "baseline"}},
      {"smoothgrad", {"n_samples", "sigma"}},
      {"occlusion", {"patch", "stride", "baseline_value"}},
      {"grad_cam", {"layer", "upsampling"}},
  };
  return keys;
}

bool SafeLabel(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

ExplainerSpec ParseExplainer(const json& v, const std::string& path) {
  ExplainerSpec spec;
  if (v.is_string()) {
    spec.method = spec.label = v.get<std::string>();
    return spec;
  }
  CheckKeys(v, path,
            {"method", "label", "n_coalitions", "n_samples", "kernel_width", "ridge", "steps",
             "baseline", "sigma", "patch", "stride", "baseline_value", "layer", "upsampling"});
  if (!v.contains("method")) ConfigFail(Child(path, "method"), "required");
  spec.method = GetString(v["method"], Child(path, "method"));
  spec.label = v.contains("label") ? GetString(v["label"], Child(path, "label")) : spec.method;
  for (auto it = v.begin(); it != v.end(); ++it) {
    const std::string& key = it.key();
    const std::string p = Child(path, key);
    const json& x = it.value();
    if (key == "method" || key == "label") continue;
    spec.option_keys.push_back(key);
    if (key == "n_coalitions") {
      spec.tabular.n_coalitions = GetInt(x, p, 1);
    } else if (key == "n_samples") {
      spec.tabular.lime.n_samples = spec.image.smoothgrad_samples = GetInt(x, p, 1);
    } else if (key == "kernel_width") {
      spec.tabular.lime.kernel_width = GetPositive(x, p);
    } else if (key == "ridge") {
      spec.tabular.lime.ridge = GetNonNegative(x, p);
    } else if (key == "steps") {
      spec.tabular.ig_steps = spec.image.ig_steps = GetInt(x, p, 1);
    } else if (key == "baseline") {
      spec.tabular.baseline = spec.image.baseline = GetVector(x, p);
    } else if (key == "sigma") {
      spec.image.smoothgrad_sigma = GetNonNegative(x, p);
    } else if (key == "patch") {
      spec.image.occlusion_patch = GetInt(x, p, 1);
    } else if (key == "stride") {
      spec.image.occlusion_stride = GetInt(x, p, 1);
    } else if (key == "baseline_value") {
      spec.image.occlusion_baseline = GetNumber(x, p);
    } else if (key == "layer") {
      spec.image.gradcam_layer = GetInt(x, p, 0);
    } else if (key == "upsampling") {
      const std::string u = GetString(x, p);
      if (u == "bilinear") {
        spec.image.gradcam_upsampling = Upsampling::kBilinear;
      } else if (u == "nearest") {
        spec.image.gradcam_upsampling = Upsampling::kNearest;
      } else {
        ConfigFail(p, "unknown upsampling '" + u + "' (valid: bilinear, nearest)");
      }
    }
  }
  return spec;
}

void ParsePerturbation(const json& v, const std::string& path, TabularMetricsConfig& t) {
  CheckKeys(v, path,
            {"faithfulness", "faithfulness_sigma_scale", "infidelity_sigma_scale",
             "infidelity_draws", "sensitivity_sigma_scale", "sufficiency", "baseline",
             "zero_tol"});
  for (auto it = v.begin(); it != v.end(); ++it) {
    const std::string& key = it.key();
    const std::string p = Child(path, key);
    const json& x = it.value();
    if (key == "faithfulness") {
      const std::string s = GetString(x, p);
      if (s == "baseline") {
        t.faithfulness_perturbation = PerturbationKind::kBaselineReplace;
      } else if (s == "gaussian") {
        t.faithfulness_perturbation = PerturbationKind::kGaussianNoise;
      } else {
        ConfigFail(p, "unknown perturbation '" + s + "' (valid: baseline, gaussian)");
      }
    } else if (key == "faithfulness_sigma_scale") {
      t.faithfulness_sigma_scale = GetNonNegative(x, p);
    } else if (key == "infidelity_sigma_scale") {
      t.infidelity_sigma_scale = GetNonNegative(x, p);
    } else if (key == "infidelity_draws") {
      t.infidelity_draws = GetInt(x, p, 1);
    } else if (key == "sensitivity_sigma_scale") {
      t.sensitivity_sigma_scale = GetNonNegative(x, p);
    } else if (key == "sufficiency") {
      const std::string s = GetString(x, p);
      if (s != "baseline" && s != "zero") {
        ConfigFail(p, "unknown sufficiency mode '" + s + "' (valid: baseline, zero)");
      }
      t.sufficiency_zero_baseline = s == "zero";
    } else if (key == "baseline") {
      t.baseline = GetVector(x, p);
    } else if (key == "zero_tol") {
      t.zero_tol = GetNonNegative(x, p);
    }
  }
}

void ParseRegions(const json& v, const std::string& path, RegionSpec& r) {
  CheckKeys(v, path, {"patch", "perturbation", "sigma", "max_regions", "exhaustive"});
  for (auto it = v.begin(); it != v.end(); ++it) {
    const std::string& key = it.key();
    const std::string p = Child(path, key);
    const json& x = it.value();
    if (key == "patch") {
      if (x.is_array()) {
        if (x.size() != 2) ConfigFail(p, "expected [height, width]");
        r.patch_h = GetInt(x[0], Index(p, 0), 1);
        r.patch_w = GetInt(x[1], Index(p, 1), 1);
      } else {
        r.patch_h = r.patch_w = GetInt(x, p, 1);
      }
    } else if (key == "perturbation") {
      const std::string s = GetString(x, p);
      if (s == "black") {
        r.perturbation = RegionPerturbation::kBlack;
      } else if (s == "mean") {
        r.perturbation = RegionPerturbation::kMean;
      } else if (s == "gaussian") {
        r.perturbation = RegionPerturbation::kGaussian;
      } else {
        ConfigFail(p, "unknown perturbation '" + s + "' (valid: black, mean, gaussian)");
      }
    } else if (key == "sigma") {
      r.sigma = GetNonNegative(x, p);
    } else if (key == "max_regions") {
      r.max_regions = GetInt(x, p, 1);
    } else if (key == "exhaustive") {
      r.exhaustive = GetBool(x, p);
    }
  }
}

InstanceSelection ParseInstances(const json& v, const std::string& path) {
  InstanceSelection sel;
  if (v.is_string()) {
    if (v.get<std::string>() != "all") ConfigFail(path, "expected \"all\", {\"indices\": [...]} or {\"head\": N}");
    return sel;
  }
  if (!v.is_object() || v.size() != 1) {
    ConfigFail(path, "expected \"all\", {\"indices\": [...]} or {\"head\": N}");
  }
  if (v.contains("indices")) {
    const json& idx = v["indices"];
    const std::string p = Child(path, "indices");
    if (!idx.is_array() || idx.empty()) ConfigFail(p, "expected a non-empty array of row indices");
    sel.kind = InstanceSelection::Kind::kIndices;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      sel.indices.push_back(GetInt(idx[i], Index(p, i), 0));
    }
  } else if (v.contains("head")) {
    sel.kind = InstanceSelection::Kind::kHead;
    sel.head = GetInt(v["head"], Child(path, "head"), 1);
  } else {
    ConfigFail(Child(path, v.begin().key()), "unknown key (valid: indices, head)");
  }
  return sel;
}

std::string Hex(std::uint64_t v) {
  char buf[17];
  const auto res = std::to_chars(buf, buf + 16, v, 16);
  std::string s(buf, res.ptr);
  return std::string(16 - s.size(), '0') + s;
}

// ---- run state ----

struct MetricCell {
  std::string name;
  Scalar value = kUndefined;
  int n_undefined = 0;
};

struct Evaluation {
  std::vector<MetricCell> cells;
  ReportTable aggregate;
  ReportTable instances;
  std::vector<std::pair<int, std::string>> failures;  // (instance id, message)
  int n_errors = 0;
};

struct Failure {
  std::string explainer;
  std::optional<int> instance;
  std::string error;
};

struct Run {
  RunConfig config;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::optional<Model> model;
  Modality modality = Modality::kTabular;
  Matrix data;
  std::vector<std::string> feature_names;
  std::vector<int> ids;
  Matrix instances;
  Background background;
  std::vector<TabularMetric> tabular_metrics;
  std::vector<ImageMetric> image_metrics;
  std::vector<TabularExplainer> tabular_explainers;
  std::vector<ImageExplainer> image_explainers;
  std::vector<std::string> warnings;
  std::vector<Failure> failures;
  std::vector<std::string> outputs;
};

void LoadInputs(Run& run) {
  const RunConfig& c = run.config;
  run.model = LoadModel(c.model_path).WithScoreMode(c.score_mode);
  const Shape shape = run.model->input_shape();
  run.modality = c.modality.value_or(shape.is_image() ? Modality::kImage : Modality::kTabular);
  if (run.modality == Modality::kImage && !shape.is_image()) {
    ConfigFail("modality", "image modality needs a model with a (C, H, W) input");
  }
  const int n = run.model->n_features();

  if (run.modality == Modality::kTabular) {
    CsvOptions opt;
    opt.has_header = c.csv_header;
    opt.label_column = c.label_column;
    opt.allow_missing = c.allow_missing;
    TabularDataset ds = LoadCsv(c.data_path, opt);
    if (ds.n_features() != n) {
      throw Error(ErrorKind::kShapeMismatch,
                  c.data_path + ": " + std::to_string(ds.n_features()) +
                      " feature columns, model expects " + std::to_string(n));
    }
    run.data = std::move(ds.features);
    run.feature_names = std::move(ds.feature_names);
    if (c.background == "data") {
      run.background = Background::FromSamples(run.data);
    } else if (c.background == "mean") {
      run.background = Background::FromBaseline(run.data.colwise().mean().transpose());
    } else {
      TabularDataset bg = LoadCsv(c.background, opt);
      if (bg.n_features() != n) {
        throw Error(ErrorKind::kShapeMismatch,
                    c.background + ": " + std::to_string(bg.n_features()) +
                        " feature columns, model expects " + std::to_string(n));
      }
      run.background = Background::FromSamples(std::move(bg.features));
    }
  } else {
    const TensorFile t = LoadTensor(c.data_path);
    const std::vector<std::int64_t> chw{shape.channels(), shape.height(), shape.width()};
    const bool batch = t.shape.size() == 4 && std::equal(chw.begin(), chw.end(), t.shape.begin() + 1);
    const bool single = t.shape == chw;
    if (!batch && !single) {
      std::string got;
      for (auto d : t.shape) got += (got.empty() ? "" : ", ") + std::to_string(d);
      throw Error(ErrorKind::kShapeMismatch,
                  c.data_path + ": tensor shape (" + got + ") does not hold (N, " +
                      std::to_string(chw[0]) + ", " + std::to_string(chw[1]) + ", " +
                      std::to_string(chw[2]) + ") images");
    }
    run.data = TensorRows(t, n);
  }
  if (run.data.rows() == 0) throw Error(ErrorKind::kEmptyDataset, c.data_path + ": no rows");
}

void ResolveIdentifiers(Run& run) {
  RunConfig& c = run.config;
  const Model& model = *run.model;
  const int n = model.n_features();
  const bool tabular = run.modality == Modality::kTabular;
  const auto& option_keys = tabular ? TabularOptionKeys() : ImageOptionKeys();

  for (std::size_t i = 0; i < c.explainers.size(); ++i) {
    const ExplainerSpec& spec = c.explainers[i];
    const std::string path = Index("explainers", i);
    const auto allowed = option_keys.find(spec.method);
    if (allowed == option_keys.end()) {
      const auto valid = tabular ? TabularMethodNames() : ImageMethodNames();
      ConfigFail(path, "unknown method '" + spec.method + "' for " +
                           (tabular ? "tabular" : "image") + " models (valid: " + Join(valid) +
                           ")");
    }
    for (const auto& key : spec.option_keys) {
      if (std::find(allowed->second.begin(), allowed->second.end(), key) ==
          allowed->second.end()) {
        ConfigFail(Child(path, key), "not an option of " + spec.method +
                                         (allowed->second.empty()
                                              ? " (it takes none)"
                                              : " (valid: " + Join(allowed->second) + ")"));
      }
    }
    const auto& baseline = tabular ? spec.tabular.baseline : spec.image.baseline;
    if (baseline && baseline->size() != n) {
      ConfigFail(Child(path, "baseline"), "has " + std::to_string(baseline->size()) +
                                              " values, model takes " + std::to_string(n));
    }
    if (tabular) {
      run.tabular_explainers.emplace_back(*ParseTabularMethod(spec.method), spec.tabular);
    } else {
      run.image_explainers.emplace_back(*ParseImageMethod(spec.method), spec.image);
    }
  }

  std::vector<std::string> valid_metrics;
  if (tabular) {
    for (auto m : kAllTabularMetrics) valid_metrics.emplace_back(TabularMetricName(m));
  } else {
    for (auto m : kAllImageMetrics) valid_metrics.emplace_back(ImageMetricName(m));
  }
  const std::vector<std::string> names = c.metrics.empty() ? valid_metrics : c.metrics;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (tabular) {
      const auto m = ParseTabularMetric(names[i]);
      if (!m) {
        ConfigFail(Index("metrics", i), "unknown tabular metric '" + names[i] +
                                            "' (valid: " + Join(valid_metrics) + ")");
      }
      run.tabular_metrics.push_back(*m);
    } else {
      const auto m = ParseImageMetric(names[i]);
      if (!m) {
        ConfigFail(Index("metrics", i), "unknown image metric '" + names[i] +
                                            "' (valid: " + Join(valid_metrics) + ")");
      }
      run.image_metrics.push_back(*m);
    }
  }

  if (c.target_class && *c.target_class >= model.n_classes()) {
    ConfigFail("target_class", "class " + std::to_string(*c.target_class) +
                                   " out of range: model has " +
                                   std::to_string(model.n_classes()) + " classes");
  }
  if (tabular) {
    if (c.tabular.top_k && *c.tabular.top_k > n) {
      ConfigFail("topk", "k = " + std::to_string(*c.tabular.top_k) + " exceeds the " +
                             std::to_string(n) + " features");
    }
    if (c.tabular.baseline && c.tabular.baseline->size() != n) {
      ConfigFail("perturbation.baseline", "has " + std::to_string(c.tabular.baseline->size()) +
                                              " values, model takes " + std::to_string(n));
    }
  } else {
    try {
      c.regions.Validate(model.input_shape());
    } catch (const Error& e) {
      ConfigFail("regions", e.detail());
    }
  }

  const int rows = static_cast<int>(run.data.rows());
  switch (c.instances.kind) {
    case InstanceSelection::Kind::kAll:
      for (int i = 0; i < rows; ++i) run.ids.push_back(i);
      break;
    case InstanceSelection::Kind::kHead:
      for (int i = 0; i < std::min(rows, c.instances.head); ++i) run.ids.push_back(i);
      break;
    case InstanceSelection::Kind::kIndices:
      for (std::size_t j = 0; j < c.instances.indices.size(); ++j) {
        const int idx = c.instances.indices[j];
        if (idx >= rows) {
          ConfigFail(Index("instances.indices", j),
                     "index " + std::to_string(idx) + " out of range: dataset has " +
                         std::to_string(rows) + " rows");
        }
        run.ids.push_back(idx);
      }
      break;
  }
  run.instances.resize(static_cast<Eigen::Index>(run.ids.size()), run.data.cols());
  for (std::size_t i = 0; i < run.ids.size(); ++i) {
    run.instances.row(static_cast<Eigen::Index>(i)) = run.data.row(run.ids[i]);
  }

  if (auto warning = TaskMismatch(c.task, model.n_classes())) run.warnings.push_back(*warning);
}

class Writer {
 public:
  Writer(Run& run) : run_(run), dir_(run.config.out_dir) { fs::create_directories(dir_); }

  void Table(const std::string& stem, const ReportTable& table) {
    for (ReportFormat f : run_.config.formats) {
      Raw(stem + "." + std::string(ReportFormatExtension(f)), RenderReport(table, f));
    }
  }

  void Raw(const std::string& name, const std::string& contents) {
    WriteFile((dir_ / name).string(), contents);
    run_.outputs.push_back(name);
  }

 private:
  Run& run_;
  fs::path dir_;
};

std::uint64_t ExplainerSeed(const Run& run, std::size_t position, std::string_view method) {
  return DeriveSeed(run.seed, position, HashName(method));
}

// Image maps reuse the attribution table: one row per pixel, value = channel mean.
Attribution PixelAttribution(const AttributionMap& map, ConstVectorRef x, const Shape& shape,
                             Vector& pixel_values) {
  const int h = shape.height(), w = shape.width(), c = shape.channels();
  Attribution a;
  a.values.resize(h * w);
  pixel_values.resize(h * w);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      const int p = y * w + xx;
      a.values(p) = map.values(y, xx);
      Scalar sum = 0;
      for (int ch = 0; ch < c; ++ch) sum += x(ch * h * w + p);
      pixel_values(p) = sum / c;
      a.feature_names.push_back("y" + std::to_string(y) + "_x" + std::to_string(xx));
    }
  }
  a.target_class = map.target_class;
  a.method = map.method;
  return a;
}

int CmdExplain(Run& run, Writer& writer, std::ostream& err) {
  const std::size_t n = run.ids.size();
  const Model& model = *run.model;
  const auto& t = run.config.target_class;
  for (std::size_t e = 0; e < run.config.explainers.size(); ++e) {
    const std::string& label = run.config.explainers[e].label;
    std::vector<std::optional<Attribution>> attributions(n);
    std::vector<Vector> pixel_values(n);
    std::vector<std::optional<AttributionMap>> maps(n);
    std::vector<std::string> errors(n);
    if (run.modality == Modality::kTabular) {
      const TabularExplainer& ex = run.tabular_explainers[e];
      ParallelFor(n, run.jobs, [&](std::size_t i) {
        try {
          attributions[i] = ex.Explain(model, run.instances.row(i).transpose(), run.background,
                                       t, ExplainerSeed(run, i, ex.name()), run.feature_names);
        } catch (const Error& ex_err) {
          errors[i] = ex_err.what();
        }
      });
    } else {
      const ImageExplainer& ex = run.image_explainers[e];
      const Shape shape = model.input_shape();
      ParallelFor(n, run.jobs, [&](std::size_t i) {
        try {
          const Vector x = run.instances.row(i).transpose();
          maps[i] = ex.Explain(model, x, t, ExplainerSeed(run, i, ex.name()));
          attributions[i] = PixelAttribution(*maps[i], x, shape, pixel_values[i]);
        } catch (const Error& ex_err) {
          errors[i] = ex_err.what();
        }
      });
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::string stem = "explain_" + label + "_" + std::to_string(run.ids[i]);
      if (!attributions[i]) {
        run.failures.push_back({label, run.ids[i], errors[i]});
        err << "attriq: " << label << " failed on instance " << run.ids[i] << ": " << errors[i]
            << "\n";
        continue;
      }
      for (const auto& w : attributions[i]->warnings) {
        run.warnings.push_back(label + " instance " + std::to_string(run.ids[i]) + ": " + w);
      }
      if (run.modality == Modality::kTabular) {
        writer.Table(stem, AttributionTable(*attributions[i], run.instances.row(i).transpose()));
      } else {
        writer.Table(stem, AttributionTable(*attributions[i], pixel_values[i]));
        writer.Raw(stem + ".pgm", EncodePgm(maps[i]->values));
      }
    }
  }
  return run.failures.empty() ? kExitOk : kExitComputation;
}

Evaluation Evaluate(const Run& run, std::size_t e) {
  Evaluation out;
  const Model& model = *run.model;
  auto collect_failures = [&](const auto& instances) {
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (instances[i].error) out.failures.emplace_back(run.ids[i], *instances[i].error);
    }
  };
  if (run.modality == Modality::kTabular) {
    TabularMetricsConfig mc = run.config.tabular;
    mc.metrics = run.tabular_metrics;
    mc.target_class = run.config.target_class;
    mc.seed = run.seed;
    mc.jobs = run.jobs;
    const TabularMetricsResult r =
        CalculateMetrics(model, run.tabular_explainers[e], run.instances, run.background, mc);
    for (TabularMetric m : CanonicalOrder(run.tabular_metrics)) {
      out.cells.push_back({std::string(TabularMetricName(m)), r.aggregate[m],
                           r.n_excluded[static_cast<std::size_t>(m)]});
    }
    out.aggregate = TabularAggregateTable(r.aggregate, run.tabular_metrics);
    out.instances = TabularInstanceTable(r, run.ids, run.tabular_metrics);
    out.n_errors = r.n_errors;
    collect_failures(r.instances);
  } else {
    ImageMetricsConfig mc;
    mc.metrics = run.image_metrics;
    mc.regions = run.config.regions;
    mc.target_class = run.config.target_class;
    mc.seed = run.seed;
    mc.jobs = run.jobs;
    const ImageMetricsResult r =
        CalculateImageMetrics(model, run.image_explainers[e], run.instances, mc);
    for (ImageMetric m : CanonicalOrder(run.image_metrics)) {
      out.cells.push_back({std::string(ImageMetricName(m)), r.aggregate[m],
                           r.n_excluded[static_cast<std::size_t>(m)]});
    }
    out.aggregate = ImageAggregateTable(r.aggregate, run.image_metrics);
    out.instances = ImageInstanceTable(r, run.ids, run.image_metrics);
    out.n_errors = r.n_errors;
    collect_failures(r.instances);
  }
  return out;
}

std::vector<std::string> MetricNames(const Run& run) {
  std::vector<std::string> names;
  if (run.modality == Modality::kTabular) {
    for (auto m : CanonicalOrder(run.tabular_metrics)) names.emplace_back(TabularMetricName(m));
  } else {
    for (auto m : CanonicalOrder(run.image_metrics)) names.emplace_back(ImageMetricName(m));
  }
  return names;
}

void RecordFailures(Run& run, const std::string& label, const Evaluation& ev, std::ostream& err) {
  for (const auto& [id, msg] : ev.failures) {
    run.failures.push_back({label, id, msg});
    err << "attriq: " << label << " failed on instance " << id << ": " << msg << "\n";
  }
}

int CmdEvaluate(Run& run, Writer& writer, std::ostream& err) {
  for (std::size_t e = 0; e < run.config.explainers.size(); ++e) {
    const std::string& label = run.config.explainers[e].label;
    try {
      const Evaluation ev = Evaluate(run, e);
      RecordFailures(run, label, ev, err);
      writer.Table("evaluate_" + label, ev.aggregate);
      writer.Table("evaluate_" + label + "_instances", ev.instances);
    } catch (const Error& ex) {
      if (ex.kind() == ErrorKind::kIo) throw;
      run.failures.push_back({label, std::nullopt, ex.what()});
      err << "attriq: " << label << " failed: " << ex.what() << "\n";
    }
  }
  return run.failures.empty() ? kExitOk : kExitComputation;
}

int CmdBenchmark(Run& run, Writer& writer, std::ostream& err) {
  const std::vector<std::string> metric_names = MetricNames(run);
  ReportTable matrix;
  matrix.columns.push_back("explainer");
  for (const auto& m : metric_names) matrix.columns.push_back(m);
  ReportTable cells;
  cells.columns = {"explainer", "metric", "value", "n_instances", "n_undefined", "n_errors"};
  const auto n_instances = static_cast<std::int64_t>(run.ids.size());

  for (std::size_t e = 0; e < run.config.explainers.size(); ++e) {
    const std::string& label = run.config.explainers[e].label;
    std::vector<ReportCell> row{label};
    try {
      const Evaluation ev = Evaluate(run, e);
      RecordFailures(run, label, ev, err);
      for (const auto& cell : ev.cells) {
        row.emplace_back(cell.value);
        cells.rows.push_back({label, cell.name, cell.value, n_instances,
                              std::int64_t{cell.n_undefined}, std::int64_t{ev.n_errors}});
      }
      writer.Table("benchmark_" + label + "_instances", ev.instances);
    } catch (const Error& ex) {
      if (ex.kind() == ErrorKind::kIo) throw;
      run.failures.push_back({label, std::nullopt, ex.what()});
      err << "attriq: " << label << " failed: " << ex.what() << "\n";
      const std::string cell = "error: " + std::string(ErrorKindName(ex.kind()));
      for (const auto& m : metric_names) {
        row.emplace_back(cell);
        cells.rows.push_back({label, m, cell, n_instances, n_instances, n_instances});
      }
    }
    matrix.rows.push_back(std::move(row));
  }
  writer.Table("benchmark", matrix);
  writer.Table("benchmark_cells", cells);
  if (!run.failures.empty()) {
    run.warnings.push_back(std::to_string(run.failures.size()) +
                           " explainer failure(s); affected cells exclude them");
  }
  return kExitOk;
}

std::string_view CommandName(Command c) {
  switch (c) {
    case Command::kExplain:
      return "explain";
    case Command::kEvaluate:
      return "evaluate";
    case Command::kBenchmark:
      return "benchmark";
    case Command::kValidate:
      return "validate";
  }
  return "unknown";
}

std::string EigenVersion() {
  return std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
         std::to_string(EIGEN_MINOR_VERSION);
}

void WriteManifest(Run& run, Command command, int exit_code, double wall_seconds) {
  ordered_json m;
  m["tool"] = "attriq";
  m["version"] = ATTRIQ_VERSION;
  m["eigen"] = EigenVersion();
  m["command"] = CommandName(command);
  m["config_hash"] = Hex(run.config.config_hash);
  m["seed"] = run.seed;
  m["modality"] = run.modality == Modality::kTabular ? "tabular" : "image";
  m["task"] = TaskName(run.config.task);
  m["score_mode"] = run.config.score_mode == ScoreMode::kProbability ? "probability" : "logit";
  m["instances"] = run.ids;
  m["explainers"] = ordered_json::array();
  for (const auto& e : run.config.explainers) m["explainers"].push_back(e.label);
  m["outputs"] = run.outputs;
  m["failures"] = ordered_json::array();
  for (const auto& f : run.failures) {
    ordered_json j;
    j["explainer"] = f.explainer;
    j["instance"] = f.instance ? ordered_json(*f.instance) : ordered_json(nullptr);
    j["error"] = f.error;
    m["failures"].push_back(std::move(j));
  }
  m["warnings"] = run.warnings;
  m["status"] = run.failures.empty() ? "ok" : "partial";
  m["exit_code"] = exit_code;
  m["wall_time_seconds"] = wall_seconds;
  WriteFile((fs::path(run.config.out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

}  // namespace

std::string_view TaskName(Task task) {
  switch (task) {
    case Task::kBinaryClassification:
      return "binary-classification";
    case Task::kMulticlassClassification:
      return "multiclass-classification";
    case Task::kRegression:
      return "regression";
  }
  return "unknown";
}

std::optional<Task> ParseTask(std::string_view name) {
  for (Task t : {Task::kBinaryClassification, Task::kMulticlassClassification,
                 Task::kRegression}) {
    if (TaskName(t) == name) return t;
  }
  return std::nullopt;
}

std::optional<std::string> TaskMismatch(Task task, int n_classes) {
  const bool ok = task == Task::kRegression ? n_classes == 1
                  : task == Task::kBinaryClassification ? n_classes <= 2
                                                         : n_classes >= 3;
  if (ok) return std::nullopt;
  return "task '" + std::string(TaskName(task)) + "' does not match a model with " +
         std::to_string(n_classes) + " output(s)";
}

RunConfig ParseRunConfig(std::string_view json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  CheckKeys(doc, "",
            {"model", "data", "background", "label_column", "csv_header", "allow_missing",
             "modality", "task", "score_mode", "explainers", "metrics", "topk", "perturbation",
             "regions", "target_class", "seed", "output", "instances"});
  RunConfig c;
  c.config_hash = HashName(json_text);
  for (const char* key : {"model", "data", "task", "explainers"}) {
    if (!doc.contains(key)) ConfigFail(key, "required");
  }
  c.model_path = ResolvePath(base_dir, GetString(doc["model"], "model"));
  c.data_path = ResolvePath(base_dir, GetString(doc["data"], "data"));
  if (doc.contains("background")) {
    const std::string b = GetString(doc["background"], "background");
    c.background = b == "data" || b == "mean" ? b : ResolvePath(base_dir, b);
  }
  if (doc.contains("label_column")) c.label_column = GetString(doc["label_column"], "label_column");
  if (doc.contains("csv_header")) c.csv_header = GetBool(doc["csv_header"], "csv_header");
  if (doc.contains("allow_missing")) c.allow_missing = GetBool(doc["allow_missing"], "allow_missing");
  if (doc.contains("modality")) {
    const std::string m = GetString(doc["modality"], "modality");
    if (m == "tabular") {
      c.modality = Modality::kTabular;
    } else if (m == "image") {
      c.modality = Modality::kImage;
    } else {
      ConfigFail("modality", "unknown modality '" + m + "' (valid: tabular, image)");
    }
  }
  {
    const std::string t = GetString(doc["task"], "task");
    const auto task = ParseTask(t);
    if (!task) {
      ConfigFail("task", "unknown task '" + t +
                             "' (valid: binary-classification, multiclass-classification, "
                             "regression)");
    }
    c.task = *task;
  }
  if (doc.contains("score_mode")) {
    const std::string s = GetString(doc["score_mode"], "score_mode");
    if (s == "probability") {
      c.score_mode = ScoreMode::kProbability;
    } else if (s == "logit") {
      c.score_mode = ScoreMode::kLogit;
    } else {
      ConfigFail("score_mode", "unknown score mode '" + s + "' (valid: probability, logit)");
    }
  }
  const json& ex = doc["explainers"];
  if (!ex.is_array() || ex.empty()) ConfigFail("explainers", "expected a non-empty array");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ExplainerSpec spec = ParseExplainer(ex[i], Index("explainers", i));
    if (!SafeLabel(spec.label)) {
      ConfigFail(Index("explainers", i), "label '" + spec.label +
                                             "' must use only letters, digits, '_', '-', '.'");
    }
    if (!labels.insert(spec.label).second) {
      ConfigFail(Index("explainers", i),
                 "duplicate label '" + spec.label + "'; set \"label\" to tell them apart");
    }
    c.explainers.push_back(std::move(spec));
  }
  if (doc.contains("metrics")) {
    const json& m = doc["metrics"];
    if (!m.is_array() || m.empty()) ConfigFail("metrics", "expected a non-empty array of names");
    for (std::size_t i = 0; i < m.size(); ++i) {
      c.metrics.push_back(GetString(m[i], Index("metrics", i)));
    }
  }
  if (doc.contains("topk")) c.tabular.top_k = GetInt(doc["topk"], "topk", 1);
  if (doc.contains("perturbation")) ParsePerturbation(doc["perturbation"], "perturbation", c.tabular);
  if (doc.contains("regions")) ParseRegions(doc["regions"], "regions", c.regions);
  if (doc.contains("target_class")) c.target_class = GetInt(doc["target_class"], "target_class", 0);
  if (doc.contains("seed")) c.seed = GetSeed(doc["seed"], "seed");
  if (doc.contains("output")) {
    const json& o = doc["output"];
    CheckKeys(o, "output", {"dir", "formats"});
    if (o.contains("dir")) c.out_dir = ResolvePath(base_dir, GetString(o["dir"], "output.dir"));
    if (o.contains("formats")) {
      const json& f = o["formats"];
      if (!f.is_array() || f.empty()) ConfigFail("output.formats", "expected a non-empty array");
      c.formats.clear();
      for (std::size_t i = 0; i < f.size(); ++i) {
        const std::string p = Index("output.formats", i);
        const std::string name = GetString(f[i], p);
        const auto fmt = ParseReportFormat(name);
        if (!fmt) ConfigFail(p, "unknown format '" + name + "' (valid: csv, json, markdown)");
        if (std::find(c.formats.begin(), c.formats.end(), *fmt) == c.formats.end()) {
          c.formats.push_back(*fmt);
        }
      }
    }
  }
  if (doc.contains("instances")) c.instances = ParseInstances(doc["instances"], "instances");
  return c;
}

RunConfig LoadRunConfig(const std::string& path) {
  const std::string text = ReadFile(path);
  const std::string dir = fs::path(path).parent_path().string();
  try {
    return ParseRunConfig(text, dir.empty() ? "." : dir);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.detail());
  }
}

int ResolveJobs(const std::optional<int>& jobs) {
  if (jobs) {
    if (*jobs < 1) throw Error(ErrorKind::kConfig, "--jobs must be >= 1");
    return *jobs;
  }
  const char* env = std::getenv("ATTRIQ_JOBS");
  if (env == nullptr || *env == '\0') return 1;
  int v = 0;
  const std::string_view s(env);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1) {
    throw Error(ErrorKind::kConfig, "ATTRIQ_JOBS='" + std::string(s) + "' is not a positive integer");
  }
  return v;
}

int RunCommand(Command command, const std::string& config_path, const RunOptions& options,
               std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  auto fail = [&](const std::exception& e, int code) {
    err << "attriq: " << e.what() << "\n";
    return code;
  };
  try {
    Run run;
    try {
      run.config = LoadRunConfig(config_path);
      if (options.seed) run.config.seed = options.seed;
      if (options.out_dir) run.config.out_dir = *options.out_dir;
      if (options.format) run.config.formats = {*options.format};
      if (!run.config.seed) {
        throw Error(ErrorKind::kConfig, config_path + ": seed: required (or pass --seed)");
      }
      run.seed = *run.config.seed;
      run.jobs = ResolveJobs(options.jobs);
    } catch (const Error& e) {
      return fail(e, e.kind() == ErrorKind::kIo ? kExitIo : kExitConfig);
    }
    try {
      LoadInputs(run);
    } catch (const Error& e) {
      return fail(e, e.kind() == ErrorKind::kConfig ? kExitConfig : kExitIo);
    }
    try {
      ResolveIdentifiers(run);
    } catch (const Error& e) {
      return fail(e, kExitConfig);
    }
    for (const auto& w : run.warnings) err << "attriq: warning: " << w << "\n";
    if (options.verbose) {
      err << "attriq: " << CommandName(command) << ": " << run.ids.size() << " instance(s), "
          << run.config.explainers.size() << " explainer(s), jobs " << run.jobs << "\n";
    }
    if (command == Command::kValidate) {
      out << "config ok: " << run.ids.size() << " instance(s), "
          << (run.modality == Modality::kTabular ? "tabular" : "image") << " model with "
          << run.model->n_features() << " inputs and " << run.model->n_classes()
          << " output(s)\n";
      return kExitOk;
    }

    const std::size_t n_warnings = run.warnings.size();
    int code = kExitOk;
    try {
      Writer writer(run);
      switch (command) {
        case Command::kExplain:
          code = CmdExplain(run, writer, err);
          break;
        case Command::kEvaluate:
          code = CmdEvaluate(run, writer, err);
          break;
        case Command::kBenchmark:
          code = CmdBenchmark(run, writer, err);
          break;
        case Command::kValidate:
          break;
      }
      for (std::size_t i = n_warnings; i < run.warnings.size(); ++i) {
        err << "attriq: warning: " << run.warnings[i] << "\n";
      }
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      WriteManifest(run, command, code, wall);
      run.outputs.push_back("manifest.json");
    } catch (const Error& e) {
      return fail(e, e.kind() == ErrorKind::kIo ? kExitIo : kExitComputation);
    } catch (const fs::filesystem_error& e) {
      return fail(e, kExitIo);
    }
    const fs::path dir(run.config.out_dir);
    for (const auto& name : run.outputs) out << (dir / name).string() << "\n";
    return code;
  } catch (const std::exception& e) {
    return fail(e, kExitBug);
  }
}

}  // namespace attriq
