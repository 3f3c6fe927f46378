// Region-perturbation metrics for image attribution maps.
//
// The image is tiled into non-overlapping regions (pixels or patches, edge
// tiles clipped). Each metric perturbs one region at a time across all
// channels and compares f(x) with f(x_i'). A region's attribution is the sum
// of the map over its pixels.

#ifndef ATTRIQ_METRICS_IMAGE_HPP
#define ATTRIQ_METRICS_IMAGE_HPP

#include "attriq/attrib_image.hpp"
#include "attriq/core.hpp"
#include "attriq/model.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace attriq {

enum class RegionPerturbation { kBlack, kMean, kGaussian };

struct RegionSpec {
  int patch_h = 4;  // 1 x 1 = pixel granularity
  int patch_w = 4;
  RegionPerturbation perturbation = RegionPerturbation::kBlack;
  Scalar sigma = 0.1;  // gaussian only
  int max_regions = 256;
  bool exhaustive = false;
  std::uint64_t seed = 0;

  static RegionSpec Pixel() {
    RegionSpec r;
    r.patch_h = r.patch_w = 1;
    return r;
  }
  static RegionSpec Patch(int h, int w) {
    RegionSpec r;
    r.patch_h = h;
    r.patch_w = w;
    return r;
  }

  void Validate(const Shape& image) const;
};

struct Region {
  int y0, x0, y1, x1;  // half-open pixel box
};

// Every tile of the grid in row-major order.
std::vector<Region> TileRegions(const Shape& image, int patch_h, int patch_w);

// The tiles actually evaluated: all of them when exhaustive or when they fit
// under max_regions, otherwise a seeded sample without replacement, sorted
// back into row-major order.
std::vector<Region> SelectRegions(const Shape& image, const RegionSpec& rspec);

// x with one region replaced according to `perturbation`. Gaussian noise for
// region i is drawn from a stream keyed on (seed, i), so a region sees the
// same noise whether or not other regions were sampled.
Vector PerturbRegion(ConstVectorRef x, const Shape& image, const Region& region,
                     int region_index, const RegionSpec& rspec);

struct RegionDeltas {
  std::vector<Region> regions;
  std::vector<int> tile_index;  // position of each region in TileRegions
  Vector abs_delta;             // |f(x) - f(x_i')|
};

RegionDeltas ComputeRegionDeltas(const Model& model, ConstVectorRef x,
                                 int target_class, const RegionSpec& rspec,
                                 int jobs = 1);

// a_i = sum of the map over region i.
Vector RegionAttributions(const Matrix& map, const std::vector<Region>& regions);

// sum |delta_i| |a_i| / sum |a_i|; NaN when the map sums to zero in |.|.
Scalar FaithfulnessCorrelation(const Model& model, ConstVectorRef x,
                               const AttributionMap& map, const RegionSpec& rspec);

Scalar MaxSensitivity(const Model& model, ConstVectorRef x, int target_class,
                      const RegionSpec& rspec);

Scalar AvgSensitivity(const Model& model, ConstVectorRef x, int target_class,
                      const RegionSpec& rspec);

// Mean |delta_i|. Not the parameter-randomization test of the same name.
Scalar Mprt(const Model& model, ConstVectorRef x, int target_class,
            const RegionSpec& rspec);

// mean |delta_i| / (1 + |a_i|)
Scalar SmoothMprt(const Model& model, ConstVectorRef x, const AttributionMap& map,
                  const RegionSpec& rspec);

// mean |delta_i| |a_i| with the region set to black, whatever rspec says.
Scalar FaithfulnessEstimate(const Model& model, ConstVectorRef x,
                            const AttributionMap& map, const RegionSpec& rspec);

// Metric formulas over precomputed deltas; the functions above wrap these.
Scalar FaithfulnessCorrelationFrom(const Vector& abs_delta, const Vector& region_attr);
Scalar SmoothMprtFrom(const Vector& abs_delta, const Vector& region_attr);
Scalar FaithfulnessEstimateFrom(const Vector& abs_delta, const Vector& region_attr);

enum class ImageMetric {
  kFaithfulnessCorrelation,
  kMaxSensitivity,
  kMprt,
  kSmoothMprt,
  kAvgSensitivity,
  kFaithfulnessEstimate,
};

inline constexpr std::array<ImageMetric, 6> kAllImageMetrics{
    ImageMetric::kFaithfulnessCorrelation, ImageMetric::kMaxSensitivity,
    ImageMetric::kMprt,                    ImageMetric::kSmoothMprt,
    ImageMetric::kAvgSensitivity,          ImageMetric::kFaithfulnessEstimate,
};

std::string_view ImageMetricName(ImageMetric metric);
std::optional<ImageMetric> ParseImageMetric(std::string_view name);

struct ImageMetricRow {
  std::array<Scalar, 6> values;

  ImageMetricRow() { values.fill(kUndefined); }
  Scalar& operator[](ImageMetric m) { return values[static_cast<int>(m)]; }
  Scalar operator[](ImageMetric m) const { return values[static_cast<int>(m)]; }
};

struct ImageMetricsConfig {
  std::vector<ImageMetric> metrics{kAllImageMetrics.begin(), kAllImageMetrics.end()};
  RegionSpec regions;  // regions.seed is replaced per image
  std::optional<int> target_class;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct ImageInstanceMetrics {
  ImageMetricRow row;
  std::optional<std::string> error;
};

struct ImageMetricsResult {
  std::vector<ImageInstanceMetrics> instances;
  ImageMetricRow aggregate;
  std::array<int, 6> n_excluded{};
  int n_errors = 0;
};

// `images` holds one flattened (C, H, W) image per row.
ImageMetricsResult CalculateImageMetrics(const Model& model,
                                         const ImageExplainer& explainer,
                                         const Matrix& images,
                                         const ImageMetricsConfig& config);

}  // namespace attriq

#endif  // ATTRIQ_METRICS_IMAGE_HPP
