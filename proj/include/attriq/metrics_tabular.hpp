// Explanation quality metrics for tabular attributions.
//
// Conventions that differ from a literal reading of the usual formulas:
//  * faithfulness is the Pearson correlation between |a_i| and the output
//    change from perturbing feature i; the mean-product form is available as
//    FaithfulnessProduct.
//  * complexity is a count of non-negligible attributions, not a fraction;
//    sparseness = 1 - complexity / n.
//  * comprehensiveness and sufficiency report the raw output change
//    f(x) - f(x_masked) for the top-k set.
//  * monotonicity compares signs of adjacent features in column order.

#ifndef ATTRIQ_METRICS_TABULAR_HPP
#define ATTRIQ_METRICS_TABULAR_HPP

#include "attriq/attrib_tabular.hpp"
#include "attriq/core.hpp"
#include "attriq/model.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace attriq {

enum class PerturbationKind { kBaselineReplace, kGaussianNoise };

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kBaselineReplace;
  Vector noise_sigma;  // per feature, gaussian only
  Vector baseline;     // per feature, baseline-replace only
  std::uint64_t seed = 0;

  static PerturbationSpec BaselineReplace(Vector baseline);
  static PerturbationSpec Gaussian(Vector sigma, std::uint64_t seed);

  // Throws InvalidArgument when this does not fit n features. Zero sigma
  // is accepted (it makes every perturbation the identity).
  void Validate(int n_features) const;
};

// Indices of the k largest |a_i|, ties broken by ascending index.
std::vector<int> TopKFeatures(ConstVectorRef attribution, int k);

// Pearson correlation of |a_i| with |f(x) - f(x_i')|; NaN when either side
// has zero variance or n < 2.
Scalar Faithfulness(const Model& model, ConstVectorRef x, const Attribution& a,
                    const PerturbationSpec& pspec);

// (1/n) sum |f(x) - f(x_i')| |a_i|
Scalar FaithfulnessProduct(const Model& model, ConstVectorRef x,
                           const Attribution& a, const PerturbationSpec& pspec);

// Mean over draws of (I.a - (f(x) - f(x - I)))^2, I ~ N(0, diag(sigma^2)).
Scalar Infidelity(const Model& model, ConstVectorRef x, const Attribution& a,
                  const PerturbationSpec& pspec, int n_draws);

using ExplainFn = std::function<Vector(ConstVectorRef)>;

// (1/n) sum |a_i - a'_i| with a' = explain(x + noise).
Scalar Sensitivity(const ExplainFn& explain, ConstVectorRef x,
                   const PerturbationSpec& pspec);

// Re-runs `explainer` with the same seed and target class on the perturbed
// input.
Scalar Sensitivity(const TabularExplainer& explainer, const Model& model,
                   ConstVectorRef x, const Background& background,
                   int target_class, std::uint64_t explainer_seed,
                   const PerturbationSpec& pspec);

// f(x) - f(x with top-k features set to baseline)
Scalar Comprehensiveness(const Model& model, ConstVectorRef x,
                         const Attribution& a, int k, ConstVectorRef baseline);

// f(x) - f(x with all but the top-k features set to baseline)
Scalar Sufficiency(const Model& model, ConstVectorRef x, const Attribution& a,
                   int k, ConstVectorRef baseline);

Scalar Monotonicity(ConstVectorRef attribution);

Scalar Complexity(ConstVectorRef attribution, Scalar zero_tol = 1e-12);

Scalar Sparseness(ConstVectorRef attribution, Scalar zero_tol = 1e-12);

enum class TabularMetric {
  kFaithfulness,
  kInfidelity,
  kSensitivity,
  kComprehensiveness,
  kSufficiency,
  kMonotonicity,
  kComplexity,
  kSparseness,
};

inline constexpr std::array<TabularMetric, 8> kAllTabularMetrics{
    TabularMetric::kFaithfulness,      TabularMetric::kInfidelity,
    TabularMetric::kSensitivity,       TabularMetric::kComprehensiveness,
    TabularMetric::kSufficiency,       TabularMetric::kMonotonicity,
    TabularMetric::kComplexity,        TabularMetric::kSparseness,
};

std::string_view TabularMetricName(TabularMetric metric);
std::optional<TabularMetric> ParseTabularMetric(std::string_view name);

// One value per metric in report column order; NaN = undefined or not
// computed.
struct MetricRow {
  std::array<Scalar, 8> values;

  MetricRow() { values.fill(kUndefined); }
  Scalar& operator[](TabularMetric m) { return values[static_cast<int>(m)]; }
  Scalar operator[](TabularMetric m) const { return values[static_cast<int>(m)]; }
};

struct TabularMetricsConfig {
  std::vector<TabularMetric> metrics{kAllTabularMetrics.begin(),
                                     kAllTabularMetrics.end()};
  std::optional<int> top_k;  // default ceil(n / 4)
  PerturbationKind faithfulness_perturbation = PerturbationKind::kBaselineReplace;
  Scalar faithfulness_sigma_scale = 0.1;  // x feature std, gaussian mode
  Scalar infidelity_sigma_scale = 0.1;
  int infidelity_draws = 64;
  Scalar sensitivity_sigma_scale = 0.01;
  std::optional<Vector> baseline;  // default: background mean
  bool sufficiency_zero_baseline = false;
  Scalar zero_tol = 1e-12;
  std::optional<int> target_class;  // default: predicted class per instance
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct InstanceMetrics {
  MetricRow row;
  std::optional<std::string> error;  // explainer/metric failure for this instance
};

struct TabularMetricsResult {
  std::vector<InstanceMetrics> instances;
  MetricRow aggregate;                 // arithmetic mean of defined values
  std::array<int, 8> n_excluded{};     // undefined or failed, per metric
  int n_errors = 0;
};

// Per-instance RNG streams are derived from (seed, instance index, method or
// metric name), so the result does not depend on config.jobs.
TabularMetricsResult CalculateMetrics(const Model& model,
                                      const TabularExplainer& explainer,
                                      const Matrix& instances,
                                      const Background& background,
                                      const TabularMetricsConfig& config);

inline int DefaultTopK(int n_features) { return (n_features + 3) / 4; }

}  // namespace attriq

#endif  // ATTRIQ_METRICS_TABULAR_HPP
