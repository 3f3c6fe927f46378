#include "attriq/attrib_tabular.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>

namespace attriq {
namespace {

void CheckFeatures(const Model& model, ConstVectorRef x,
                   const Background& background) {
  if (x.size() != model.n_features()) {
    throw Error(ErrorKind::kShapeMismatch,
                "instance has " + std::to_string(x.size()) +
                    " features, model expects " +
                    std::to_string(model.n_features()));
  }
  if (background.samples.rows() == 0) {
    throw Error(ErrorKind::kInvalidArgument, "background is empty");
  }
  if (background.n_features() != x.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "background column count differs from instance");
  }
}

void CheckDifferentiable(const Model& model) {
  if (!model.differentiable()) {
    throw Error(ErrorKind::kNotDifferentiable,
                std::string(model.family_name()) + " has no input gradient");
  }
}

Attribution Make(Vector values, int target_class, std::string_view method) {
  Attribution a;
  a.values = std::move(values);
  a.target_class = target_class;
  a.method = std::string(method);
  return a;
}

// Mean target score over background rows with features in `present` taken
// from x. `present` has one flag per feature.
Scalar CoalitionValue(const Model& model, ConstVectorRef x,
                      const Background& background, int target_class,
                      const std::vector<char>& present) {
  Vector z(x.size());
  Scalar sum = 0.0;
  const Eigen::Index rows = background.samples.rows();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      z(j) = present[j] ? x(j) : background.samples(r, j);
    }
    sum += TargetScore(model, z, target_class);
  }
  return sum / static_cast<Scalar>(rows);
}

std::vector<char> MaskToFlags(std::uint64_t mask, int n) {
  std::vector<char> flags(n);
  for (int j = 0; j < n; ++j) flags[j] = static_cast<char>((mask >> j) & 1U);
  return flags;
}

Scalar Binomial(int n, int k) {
  Scalar r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

Background Background::FromSamples(Matrix samples) {
  Background b;
  b.baseline = samples.colwise().mean().transpose();
  b.samples = std::move(samples);
  return b;
}

Background Background::FromBaseline(ConstVectorRef baseline) {
  Background b;
  b.baseline = baseline;
  b.samples = baseline.transpose();
  return b;
}

Vector Background::FeatureStd() const {
  const Matrix centered = samples.rowwise() - baseline.transpose();
  return (centered.colwise().squaredNorm().transpose() /
          static_cast<Scalar>(samples.rows()))
      .cwiseSqrt();
}

std::vector<std::string> DefaultFeatureNames(int n) {
  std::vector<std::string> names;
  names.reserve(n);
  for (int i = 0; i < n; ++i) names.push_back("x" + std::to_string(i));
  return names;
}

Attribution ExactShapley(const Model& model, ConstVectorRef x,
                         const Background& background, int target_class) {
  CheckFeatures(model, x, background);
  const int n = static_cast<int>(x.size());
  if (n > kMaxExactShapleyFeatures) {
    throw Error(ErrorKind::kTooManyFeatures,
                std::to_string(n) + " features; exact enumeration supports at most " +
                    std::to_string(kMaxExactShapleyFeatures));
  }
  const std::uint64_t n_masks = std::uint64_t{1} << n;
  std::vector<Scalar> value(n_masks);
  for (std::uint64_t mask = 0; mask < n_masks; ++mask) {
    value[mask] =
        CoalitionValue(model, x, background, target_class, MaskToFlags(mask, n));
  }
  // weight[s] = s! (n - s - 1)! / n!
  std::vector<Scalar> weight(n);
  for (int s = 0; s < n; ++s) weight[s] = 1.0 / (n * Binomial(n - 1, s));

  Vector phi = Vector::Zero(n);
  for (std::uint64_t mask = 0; mask < n_masks; ++mask) {
    const int size = std::popcount(mask);
    for (int i = 0; i < n; ++i) {
      if (mask & (std::uint64_t{1} << i)) continue;
      phi(i) += weight[size] * (value[mask | (std::uint64_t{1} << i)] - value[mask]);
    }
  }
  return Make(std::move(phi), target_class, "exact_shapley");
}

Scalar ShapleyKernelWeight(int n_features, int coalition_size) {
  const int m = n_features, s = coalition_size;
  if (s <= 0 || s >= m) return 0.0;  // enforced as constraints instead
  return (m - 1) / (Binomial(m, s) * s * (m - s));
}

Attribution KernelShap(const Model& model, ConstVectorRef x,
                       const Background& background, int target_class,
                       int n_coalitions, std::uint64_t seed) {
  CheckFeatures(model, x, background);
  const int m = static_cast<int>(x.size());
  if (n_coalitions < m + 2) {
    throw Error(ErrorKind::kInvalidArgument,
                "kernel_shap needs at least n_features + 2 coalitions");
  }
  const Scalar v_empty =
      CoalitionValue(model, x, background, target_class, std::vector<char>(m, 0));
  const Scalar v_full = TargetScore(model, x, target_class);
  const Scalar total = v_full - v_empty;
  if (m == 1) return Make(Vector::Constant(1, total), target_class, "kernel_shap");

  std::vector<std::vector<char>> coalitions;
  std::vector<Scalar> weights;
  const bool enumerate =
      m < 31 && static_cast<std::uint64_t>(n_coalitions) >=
                    (std::uint64_t{1} << m) - 2;
  if (enumerate) {
    const std::uint64_t n_masks = std::uint64_t{1} << m;
    for (std::uint64_t mask = 1; mask + 1 < n_masks; ++mask) {
      coalitions.push_back(MaskToFlags(mask, m));
      weights.push_back(ShapleyKernelWeight(m, std::popcount(mask)));
    }
  } else {
    // Sizes are drawn proportional to the total kernel mass of each size, so
    // every sampled row carries unit weight.
    std::vector<Scalar> size_mass(m - 1);
    for (int s = 1; s < m; ++s) size_mass[s - 1] = (m - 1.0) / (s * (m - s));
    std::discrete_distribution<int> pick_size(size_mass.begin(), size_mass.end());
    Rng rng(seed);
    std::vector<int> order(m);
    while (static_cast<int>(coalitions.size()) + 2 <= n_coalitions) {
      const int s = pick_size(rng) + 1;
      std::iota(order.begin(), order.end(), 0);
      std::vector<char> flags(m, 0);
      for (int k = 0; k < s; ++k) {
        std::uniform_int_distribution<int> pick(k, m - 1);
        std::swap(order[k], order[pick(rng)]);
        flags[order[k]] = 1;
      }
      std::vector<char> complement(m);
      for (int j = 0; j < m; ++j) complement[j] = static_cast<char>(!flags[j]);
      coalitions.push_back(std::move(flags));
      coalitions.push_back(std::move(complement));
      weights.push_back(1.0);
      weights.push_back(1.0);
    }
  }

  // Eliminate the last feature through the efficiency constraint
  // sum(phi) = total, then solve the weighted least squares in m-1 unknowns.
  const Eigen::Index rows = static_cast<Eigen::Index>(coalitions.size());
  Matrix design(rows, m - 1);
  Vector target(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& z = coalitions[r];
    const Scalar w = std::sqrt(weights[r]);
    const Scalar last = z[m - 1];
    for (int j = 0; j < m - 1; ++j) design(r, j) = w * (z[j] - last);
    const Scalar y =
        CoalitionValue(model, x, background, target_class, z) - v_empty;
    target(r) = w * (y - last * total);
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  if (qr.rank() < m - 1) {
    throw Error(ErrorKind::kSingularSystem,
                "sampled coalitions do not span all features; use more coalitions");
  }
  const Vector head = qr.solve(target);
  Vector phi(m);
  phi.head(m - 1) = head;
  phi(m - 1) = total - head.sum();
  return Make(std::move(phi), target_class, "kernel_shap");
}

Attribution LimeTabular(const Model& model, ConstVectorRef x,
                        const Background& background, int target_class,
                        const LimeOptions& options, std::uint64_t seed) {
  CheckFeatures(model, x, background);
  const int n = static_cast<int>(x.size());
  if (options.n_samples < 10 * n) {
    throw Error(ErrorKind::kInvalidArgument,
                "lime needs at least 10 samples per feature");
  }
  if (!(options.ridge >= 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "ridge must be non-negative");
  }
  const Scalar width = options.kernel_width.value_or(0.75 * std::sqrt(Scalar(n)));
  if (!(width > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "kernel_width must be positive");
  }

  std::vector<std::string> warnings;
  Vector scale = background.FeatureStd();
  for (int j = 0; j < n; ++j) {
    if (!(scale(j) > 0.0)) {
      scale(j) = 1.0;
      warnings.push_back("ZeroVariance: feature " + std::to_string(j) +
                         " is constant in the background; perturbation scale 1.0");
    }
  }

  const int rows = options.n_samples;
  Matrix samples(rows, n);
  Vector response(rows);
  Vector weight(rows);
  Rng rng(seed);
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  Vector unit(n);
  for (int r = 0; r < rows; ++r) {
    // The first sample is the instance itself.
    for (int j = 0; j < n; ++j) unit(j) = r == 0 ? 0.0 : normal(rng);
    samples.row(r) = (x + unit.cwiseProduct(scale)).transpose();
    response(r) = TargetScore(model, samples.row(r).transpose(), target_class);
    weight(r) = std::exp(-unit.squaredNorm() / (width * width));
  }

  // Weighted ridge with an unpenalized intercept: center by weighted means.
  const Scalar wsum = weight.sum();
  const Vector mean_x = (samples.transpose() * weight) / wsum;
  const Scalar mean_y = weight.dot(response) / wsum;
  const Matrix centered = samples.rowwise() - mean_x.transpose();
  const Vector centered_y = response.array() - mean_y;
  Matrix gram = centered.transpose() * weight.asDiagonal() * centered;
  gram.diagonal().array() += options.ridge;
  const Vector rhs = centered.transpose() * weight.cwiseProduct(centered_y);
  Vector coef = gram.ldlt().solve(rhs);
  if (!AllFinite(coef)) {
    throw Error(ErrorKind::kSingularSystem, "lime surrogate system is singular");
  }
  Attribution a = Make(std::move(coef), target_class, "lime");
  a.warnings = std::move(warnings);
  return a;
}

Attribution IntegratedGradients(const Model& model, ConstVectorRef x,
                                ConstVectorRef baseline, int target_class,
                                int steps) {
  CheckDifferentiable(model);
  if (steps < 8) {
    throw Error(ErrorKind::kInvalidArgument, "integrated gradients needs >= 8 steps");
  }
  if (baseline.size() != x.size()) {
    throw Error(ErrorKind::kShapeMismatch, "baseline length differs from input");
  }
  const Vector delta = x - baseline;
  Vector grad_sum = Vector::Zero(x.size());
  for (int k = 0; k < steps; ++k) {
    const Scalar alpha = (k + 0.5) / steps;
    grad_sum += InputGradient(model, baseline + alpha * delta, target_class);
  }
  return Make(delta.cwiseProduct(grad_sum) / steps, target_class,
              "integrated_gradients");
}

Attribution Saliency(const Model& model, ConstVectorRef x, int target_class) {
  CheckDifferentiable(model);
  return Make(InputGradient(model, x, target_class).cwiseAbs(), target_class,
              "saliency");
}

Attribution GradXInput(const Model& model, ConstVectorRef x, int target_class) {
  CheckDifferentiable(model);
  return Make(InputGradient(model, x, target_class).cwiseProduct(x),
              target_class, "grad_x_input");
}

Attribution FeatureAblation(const Model& model, ConstVectorRef x,
                            ConstVectorRef baseline, int target_class) {
  if (baseline.size() != x.size()) {
    throw Error(ErrorKind::kShapeMismatch, "baseline length differs from input");
  }
  const Scalar fx = TargetScore(model, x, target_class);
  Vector values(x.size());
  Vector z = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    z(i) = baseline(i);
    values(i) = fx - TargetScore(model, z, target_class);
    z(i) = x(i);
  }
  return Make(std::move(values), target_class, "feature_ablation");
}

namespace {

constexpr std::array<std::pair<TabularMethod, std::string_view>, 7> kMethodNames{{
    {TabularMethod::kExactShapley, "exact_shapley"},
    {TabularMethod::kKernelShap, "kernel_shap"},
    {TabularMethod::kLime, "lime"},
    {TabularMethod::kIntegratedGradients, "integrated_gradients"},
    {TabularMethod::kSaliency, "saliency"},
    {TabularMethod::kGradXInput, "grad_x_input"},
    {TabularMethod::kFeatureAblation, "feature_ablation"},
}};

}  // namespace

std::string_view TabularMethodName(TabularMethod method) {
  for (const auto& [m, name] : kMethodNames) {
    if (m == method) return name;
  }
  return "unknown";
}

std::optional<TabularMethod> ParseTabularMethod(std::string_view name) {
  for (const auto& [m, n] : kMethodNames) {
    if (n == name) return m;
  }
  return std::nullopt;
}

std::vector<std::string> TabularMethodNames() {
  std::vector<std::string> names;
  for (const auto& [m, n] : kMethodNames) names.emplace_back(n);
  return names;
}

Attribution TabularExplainer::Explain(
    const Model& model, ConstVectorRef x, const Background& background,
    std::optional<int> target_class, std::uint64_t seed,
    const std::vector<std::string>& feature_names) const {
  const int target =
      target_class.has_value() ? *target_class : Predict(model, x).predicted_class;
  const Vector baseline = options_.baseline.value_or(background.baseline);
  Attribution a;
  switch (method_) {
    case TabularMethod::kExactShapley:
      a = ExactShapley(model, x, background, target);
      break;
    case TabularMethod::kKernelShap:
      a = KernelShap(model, x, background, target, options_.n_coalitions, seed);
      break;
    case TabularMethod::kLime:
      a = LimeTabular(model, x, background, target, options_.lime, seed);
      break;
    case TabularMethod::kIntegratedGradients:
      a = IntegratedGradients(model, x, baseline, target, options_.ig_steps);
      break;
    case TabularMethod::kSaliency:
      a = Saliency(model, x, target);
      break;
    case TabularMethod::kGradXInput:
      a = GradXInput(model, x, target);
      break;
    case TabularMethod::kFeatureAblation:
      a = FeatureAblation(model, x, baseline, target);
      break;
  }
  a.feature_names = feature_names.empty()
                        ? DefaultFeatureNames(static_cast<int>(x.size()))
                        : feature_names;
  return a;
}

}  // namespace attriq
