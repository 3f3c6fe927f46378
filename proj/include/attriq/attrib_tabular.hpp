// Per-feature attribution methods for a single tabular instance.

#ifndef ATTRIQ_ATTRIB_TABULAR_HPP
#define ATTRIQ_ATTRIB_TABULAR_HPP

#include "attriq/core.hpp"
#include "attriq/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace attriq {

struct Attribution {
  Vector values;  // signed, one per feature
  std::vector<std::string> feature_names;
  int target_class = 0;
  std::string method;
  std::vector<std::string> warnings;
};

// Reference instances for coalition values and perturbation scales.
struct Background {
  Matrix samples;  // one reference instance per row
  Vector baseline;

  // baseline = per-feature mean of `samples`.
  static Background FromSamples(Matrix samples);
  // Single reference row; coalition values then use this point only.
  static Background FromBaseline(ConstVectorRef baseline);

  int n_features() const { return static_cast<int>(samples.cols()); }
  Vector FeatureStd() const;  // population standard deviation per column
};

inline constexpr int kMaxExactShapleyFeatures = 15;

// Interventional Shapley values by full 2^n coalition enumeration.
// v(S) = mean over background rows of f(x_S, b_{~S}).
Attribution ExactShapley(const Model& model, ConstVectorRef x,
                         const Background& background, int target_class);

// Shapley-kernel weighted least squares. When n_coalitions covers all
// 2^n - 2 proper coalitions they are enumerated and the result is exact;
// otherwise coalitions are sampled (paired with their complements).
Attribution KernelShap(const Model& model, ConstVectorRef x,
                       const Background& background, int target_class,
                       int n_coalitions, std::uint64_t seed);

// Shapley kernel weight (M-1) / (C(M,s) s (M-s)) for a coalition of size s.
Scalar ShapleyKernelWeight(int n_features, int coalition_size);

struct LimeOptions {
  int n_samples = 5000;
  std::optional<Scalar> kernel_width;  // default 0.75 * sqrt(n_features)
  Scalar ridge = 1.0;
};

Attribution LimeTabular(const Model& model, ConstVectorRef x,
                        const Background& background, int target_class,
                        const LimeOptions& options, std::uint64_t seed);

// Midpoint Riemann sum along the straight path baseline -> x.
Attribution IntegratedGradients(const Model& model, ConstVectorRef x,
                                ConstVectorRef baseline, int target_class,
                                int steps);

Attribution Saliency(const Model& model, ConstVectorRef x, int target_class);

Attribution GradXInput(const Model& model, ConstVectorRef x, int target_class);

// a_i = f(x) - f(x with x_i replaced by baseline_i).
Attribution FeatureAblation(const Model& model, ConstVectorRef x,
                            ConstVectorRef baseline, int target_class);

enum class TabularMethod {
  kExactShapley,
  kKernelShap,
  kLime,
  kIntegratedGradients,
  kSaliency,
  kGradXInput,
  kFeatureAblation,
};

std::string_view TabularMethodName(TabularMethod method);
std::optional<TabularMethod> ParseTabularMethod(std::string_view name);
std::vector<std::string> TabularMethodNames();

struct TabularExplainerOptions {
  int n_coalitions = 2048;
  LimeOptions lime;
  int ig_steps = 64;
  std::optional<Vector> baseline;  // default: background mean
};

// A configured method that can be re-run on perturbed inputs. The target
// class defaults to the model's predicted class for `x`.
class TabularExplainer {
 public:
  explicit TabularExplainer(TabularMethod method,
                            TabularExplainerOptions options = {})
      : method_(method), options_(std::move(options)) {}

  Attribution Explain(const Model& model, ConstVectorRef x,
                      const Background& background,
                      std::optional<int> target_class, std::uint64_t seed,
                      const std::vector<std::string>& feature_names = {}) const;

  TabularMethod method() const { return method_; }
  std::string_view name() const { return TabularMethodName(method_); }
  const TabularExplainerOptions& options() const { return options_; }

 private:
  TabularMethod method_;
  TabularExplainerOptions options_;
};

std::vector<std::string> DefaultFeatureNames(int n);

}  // namespace attriq

#endif  // ATTRIQ_ATTRIB_TABULAR_HPP
