#include "attriq/metrics_tabular.hpp"

#include "attriq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace attriq {
namespace {

void CheckAttribution(const Model& model, ConstVectorRef x, const Attribution& a) {
  if (x.size() != model.n_features() || a.values.size() != x.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "attribution has " + std::to_string(a.values.size()) +
                    " values, input " + std::to_string(x.size()) + ", model " +
                    std::to_string(model.n_features()));
  }
}

void CheckTopK(int k, int n) {
  if (k < 1 || k > n) {
    throw Error(ErrorKind::kInvalidArgument,
                "top-k needs 1 <= k <= " + std::to_string(n) + ", got " +
                    std::to_string(k));
  }
}

// |f(x) - f(x_i')| for every feature i.
Vector PerFeatureDeltas(const Model& model, ConstVectorRef x, int target,
                        const PerturbationSpec& pspec) {
  const int n = static_cast<int>(x.size());
  pspec.Validate(n);
  const Scalar fx = TargetScore(model, x, target);
  Vector noise = Vector::Zero(n);
  if (pspec.kind == PerturbationKind::kGaussianNoise) {
    Rng rng(pspec.seed);
    FillGaussian(rng, noise, pspec.noise_sigma);
  }
  Vector deltas(n);
  Vector z = x;
  for (int i = 0; i < n; ++i) {
    z(i) = pspec.kind == PerturbationKind::kBaselineReplace ? pspec.baseline(i)
                                                            : x(i) + noise(i);
    deltas(i) = std::abs(fx - TargetScore(model, z, target));
    z(i) = x(i);
  }
  return deltas;
}

Scalar Pearson(const Vector& u, const Vector& v) {
  const Vector cu = u.array() - u.mean();
  const Vector cv = v.array() - v.mean();
  const Scalar su = cu.squaredNorm(), sv = cv.squaredNorm();
  if (su == 0.0 || sv == 0.0) return kUndefined;
  return std::clamp(cu.dot(cv) / std::sqrt(su * sv), -1.0, 1.0);
}

Vector Masked(ConstVectorRef x, ConstVectorRef baseline, const std::vector<int>& idx,
              bool replace_selected) {
  Vector z = replace_selected ? Vector(x) : Vector(baseline);
  for (int i : idx) z(i) = replace_selected ? baseline(i) : x(i);
  return z;
}

int Sign(Scalar v) { return (v > 0.0) - (v < 0.0); }

// Per-feature noise scale for the defaulted gaussian metrics; constant
// background columns fall back to 1.0, as in LIME sampling.
Vector NoiseScale(const Background& background) {
  Vector s = background.FeatureStd();
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    if (!(s(j) > 0.0)) s(j) = 1.0;
  }
  return s;
}

}  // namespace

PerturbationSpec PerturbationSpec::BaselineReplace(Vector baseline) {
  PerturbationSpec p;
  p.kind = PerturbationKind::kBaselineReplace;
  p.baseline = std::move(baseline);
  return p;
}

PerturbationSpec PerturbationSpec::Gaussian(Vector sigma, std::uint64_t seed) {
  PerturbationSpec p;
  p.kind = PerturbationKind::kGaussianNoise;
  p.noise_sigma = std::move(sigma);
  p.seed = seed;
  return p;
}

void PerturbationSpec::Validate(int n_features) const {
  if (kind == PerturbationKind::kBaselineReplace) {
    if (baseline.size() != n_features) {
      throw Error(ErrorKind::kInvalidArgument,
                  "perturbation baseline has " + std::to_string(baseline.size()) +
                      " values, expected " + std::to_string(n_features));
    }
    if (!AllFinite(baseline)) {
      throw Error(ErrorKind::kNonFiniteInput, "perturbation baseline is not finite");
    }
    return;
  }
  if (noise_sigma.size() != n_features) {
    throw Error(ErrorKind::kInvalidArgument,
                "noise sigma has " + std::to_string(noise_sigma.size()) +
                    " values, expected " + std::to_string(n_features));
  }
  if (!AllFinite(noise_sigma) || (noise_sigma.array() < 0.0).any()) {
    throw Error(ErrorKind::kInvalidArgument, "noise sigma must be finite and >= 0");
  }
}

std::vector<int> TopKFeatures(ConstVectorRef attribution, int k) {
  const int n = static_cast<int>(attribution.size());
  CheckTopK(k, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    return std::abs(attribution(i)) > std::abs(attribution(j));
  });
  order.resize(k);
  return order;
}

Scalar Faithfulness(const Model& model, ConstVectorRef x, const Attribution& a,
                    const PerturbationSpec& pspec) {
  CheckAttribution(model, x, a);
  if (x.size() < 2) return kUndefined;
  const Vector deltas = PerFeatureDeltas(model, x, a.target_class, pspec);
  return Pearson(a.values.cwiseAbs(), deltas);
}

Scalar FaithfulnessProduct(const Model& model, ConstVectorRef x,
                           const Attribution& a, const PerturbationSpec& pspec) {
  CheckAttribution(model, x, a);
  const Vector deltas = PerFeatureDeltas(model, x, a.target_class, pspec);
  return deltas.cwiseProduct(a.values.cwiseAbs()).mean();
}

Scalar Infidelity(const Model& model, ConstVectorRef x, const Attribution& a,
                  const PerturbationSpec& pspec, int n_draws) {
  CheckAttribution(model, x, a);
  if (pspec.kind != PerturbationKind::kGaussianNoise) {
    throw Error(ErrorKind::kInvalidArgument, "infidelity needs a gaussian perturbation");
  }
  pspec.Validate(static_cast<int>(x.size()));
  if (n_draws < 1) throw Error(ErrorKind::kInvalidArgument, "n_draws must be >= 1");
  const Scalar fx = TargetScore(model, x, a.target_class);
  Rng rng(pspec.seed);
  Vector noise(x.size());
  Scalar total = 0.0;
  for (int d = 0; d < n_draws; ++d) {
    FillGaussian(rng, noise, pspec.noise_sigma);
    const Scalar r = noise.dot(a.values) - (fx - TargetScore(model, x - noise, a.target_class));
    total += r * r;
  }
  return total / n_draws;
}

Scalar Sensitivity(const ExplainFn& explain, ConstVectorRef x,
                   const PerturbationSpec& pspec) {
  if (pspec.kind != PerturbationKind::kGaussianNoise) {
    throw Error(ErrorKind::kInvalidArgument, "sensitivity needs a gaussian perturbation");
  }
  pspec.Validate(static_cast<int>(x.size()));
  const Vector a = explain(x);
  Rng rng(pspec.seed);
  Vector noise(x.size());
  FillGaussian(rng, noise, pspec.noise_sigma);
  const Vector b = explain(x + noise);
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kShapeMismatch, "explainer output size changed under perturbation");
  }
  return (a - b).cwiseAbs().mean();
}

Scalar Sensitivity(const TabularExplainer& explainer, const Model& model,
                   ConstVectorRef x, const Background& background,
                   int target_class, std::uint64_t explainer_seed,
                   const PerturbationSpec& pspec) {
  return Sensitivity(
      [&](ConstVectorRef z) {
        return explainer.Explain(model, z, background, target_class, explainer_seed).values;
      },
      x, pspec);
}

Scalar Comprehensiveness(const Model& model, ConstVectorRef x,
                         const Attribution& a, int k, ConstVectorRef baseline) {
  CheckAttribution(model, x, a);
  if (baseline.size() != x.size()) {
    throw Error(ErrorKind::kShapeMismatch, "baseline size differs from input");
  }
  const std::vector<int> top = TopKFeatures(a.values, k);
  return TargetScore(model, x, a.target_class) -
         TargetScore(model, Masked(x, baseline, top, true), a.target_class);
}

Scalar Sufficiency(const Model& model, ConstVectorRef x, const Attribution& a,
                   int k, ConstVectorRef baseline) {
  CheckAttribution(model, x, a);
  if (baseline.size() != x.size()) {
    throw Error(ErrorKind::kShapeMismatch, "baseline size differs from input");
  }
  const std::vector<int> top = TopKFeatures(a.values, k);
  return TargetScore(model, x, a.target_class) -
         TargetScore(model, Masked(x, baseline, top, false), a.target_class);
}

Scalar Monotonicity(ConstVectorRef attribution) {
  const Eigen::Index n = attribution.size();
  if (n < 2) return kUndefined;
  int agree = 0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    agree += Sign(attribution(i)) == Sign(attribution(i + 1));
  }
  return static_cast<Scalar>(agree) / static_cast<Scalar>(n - 1);
}

Scalar Complexity(ConstVectorRef attribution, Scalar zero_tol) {
  return static_cast<Scalar>((attribution.array().abs() > zero_tol).count());
}

Scalar Sparseness(ConstVectorRef attribution, Scalar zero_tol) {
  if (attribution.size() == 0) return kUndefined;
  return 1.0 - Complexity(attribution, zero_tol) / static_cast<Scalar>(attribution.size());
}

namespace {

constexpr std::array<std::string_view, 8> kTabularMetricNames{
    "faithfulness", "infidelity",   "sensitivity", "comprehensiveness",
    "sufficiency",  "monotonicity", "complexity",  "sparseness",
};

}  // namespace

std::string_view TabularMetricName(TabularMetric metric) {
  return kTabularMetricNames[static_cast<int>(metric)];
}

std::optional<TabularMetric> ParseTabularMetric(std::string_view name) {
  for (std::size_t i = 0; i < kTabularMetricNames.size(); ++i) {
    if (kTabularMetricNames[i] == name) return kAllTabularMetrics[i];
  }
  return std::nullopt;
}

TabularMetricsResult CalculateMetrics(const Model& model,
                                      const TabularExplainer& explainer,
                                      const Matrix& instances,
                                      const Background& background,
                                      const TabularMetricsConfig& config) {
  const int n_rows = static_cast<int>(instances.rows());
  const int n = model.n_features();
  if (n_rows == 0) throw Error(ErrorKind::kEmptyDataset, "no instances to evaluate");
  if (instances.cols() != n) {
    throw Error(ErrorKind::kShapeMismatch,
                "dataset has " + std::to_string(instances.cols()) +
                    " columns, model expects " + std::to_string(n));
  }
  if (background.n_features() != n) {
    throw Error(ErrorKind::kShapeMismatch, "background width differs from model");
  }
  const int k = config.top_k.value_or(DefaultTopK(n));
  CheckTopK(k, n);
  const Vector baseline = config.baseline.value_or(background.baseline);
  if (baseline.size() != n) {
    throw Error(ErrorKind::kShapeMismatch, "metric baseline size differs from model");
  }
  const Vector sufficiency_baseline =
      config.sufficiency_zero_baseline ? Vector::Zero(n) : baseline;
  const Vector scale = NoiseScale(background);
  const std::uint64_t explainer_id = HashName(explainer.name());

  TabularMetricsResult result;
  result.instances.resize(n_rows);
  ParallelFor(n_rows, config.jobs, [&](std::size_t row) {
    InstanceMetrics& out = result.instances[row];
    const Vector x = instances.row(row).transpose();
    auto seed_for = [&](std::uint64_t id) {
      return DeriveSeed(config.seed, row, id);
    };
    Attribution a;
    try {
      const int target = config.target_class.value_or(Predict(model, x).predicted_class);
      a = explainer.Explain(model, x, background, target, seed_for(explainer_id));
    } catch (const Error& e) {
      out.error = e.what();
      return;
    }
    for (TabularMetric m : config.metrics) {
      const std::uint64_t mseed = seed_for(HashName(TabularMetricName(m)));
      try {
        switch (m) {
          case TabularMetric::kFaithfulness: {
            const PerturbationSpec p =
                config.faithfulness_perturbation == PerturbationKind::kBaselineReplace
                    ? PerturbationSpec::BaselineReplace(baseline)
                    : PerturbationSpec::Gaussian(config.faithfulness_sigma_scale * scale, mseed);
            out.row[m] = Faithfulness(model, x, a, p);
            break;
          }
          case TabularMetric::kInfidelity:
            out.row[m] = Infidelity(
                model, x, a,
                PerturbationSpec::Gaussian(config.infidelity_sigma_scale * scale, mseed),
                config.infidelity_draws);
            break;
          case TabularMetric::kSensitivity:
            out.row[m] = Sensitivity(
                explainer, model, x, background, a.target_class, seed_for(explainer_id),
                PerturbationSpec::Gaussian(config.sensitivity_sigma_scale * scale, mseed));
            break;
          case TabularMetric::kComprehensiveness:
            out.row[m] = Comprehensiveness(model, x, a, k, baseline);
            break;
          case TabularMetric::kSufficiency:
            out.row[m] = Sufficiency(model, x, a, k, sufficiency_baseline);
            break;
          case TabularMetric::kMonotonicity:
            out.row[m] = Monotonicity(a.values);
            break;
          case TabularMetric::kComplexity:
            out.row[m] = Complexity(a.values, config.zero_tol);
            break;
          case TabularMetric::kSparseness:
            out.row[m] = Sparseness(a.values, config.zero_tol);
            break;
        }
      } catch (const Error& e) {
        if (!out.error) out.error = e.what();
      }
    }
  });

  for (std::size_t j = 0; j < kAllTabularMetrics.size(); ++j) {
    Scalar sum = 0.0;
    int defined = 0;
    for (const InstanceMetrics& im : result.instances) {
      const Scalar v = im.row.values[j];
      if (std::isnan(v)) continue;
      sum += v;
      ++defined;
    }
    result.aggregate.values[j] = defined > 0 ? sum / defined : kUndefined;
    result.n_excluded[j] = n_rows - defined;
  }
  for (const InstanceMetrics& im : result.instances) result.n_errors += im.error.has_value();
  return result;
}

}  // namespace attriq
