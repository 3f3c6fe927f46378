#include "attriq/metrics_image.hpp"

#include "attriq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace attriq {
namespace {

Shape ImageInputShape(const Model& model, ConstVectorRef x) {
  const Shape shape = model.input_shape();
  if (!shape.is_image()) {
    throw Error(ErrorKind::kShapeMismatch, "image metrics need a (C, H, W) model input");
  }
  if (x.size() != shape.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "image has " + std::to_string(x.size()) + " values, model expects " +
                    shape.ToString());
  }
  return shape;
}

void CheckMap(const AttributionMap& map, const Shape& shape) {
  if (map.values.rows() != shape.height() || map.values.cols() != shape.width()) {
    throw Error(ErrorKind::kShapeMismatch, "attribution map size differs from image");
  }
}

RegionSpec WithBlack(RegionSpec r) {
  r.perturbation = RegionPerturbation::kBlack;
  return r;
}

}  // namespace

void RegionSpec::Validate(const Shape& image) const {
  if (patch_h < 1 || patch_w < 1) {
    throw Error(ErrorKind::kInvalidArgument, "region patch dims must be >= 1");
  }
  if (patch_h > image.height() || patch_w > image.width()) {
    throw Error(ErrorKind::kPatchLargerThanImage,
                "region " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                    " exceeds image " + image.ToString());
  }
  if (max_regions < 1) throw Error(ErrorKind::kInvalidArgument, "max_regions must be >= 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorKind::kInvalidArgument, "region sigma must be finite and >= 0");
  }
}

std::vector<Region> TileRegions(const Shape& image, int patch_h, int patch_w) {
  std::vector<Region> out;
  for (int y = 0; y < image.height(); y += patch_h) {
    for (int x = 0; x < image.width(); x += patch_w) {
      out.push_back({y, x, std::min(y + patch_h, image.height()),
                     std::min(x + patch_w, image.width())});
    }
  }
  return out;
}

namespace {

std::vector<int> SelectTileIndices(const Shape& image, const RegionSpec& rspec) {
  rspec.Validate(image);
  const int total = static_cast<int>(TileRegions(image, rspec.patch_h, rspec.patch_w).size());
  std::vector<int> all(total);
  std::iota(all.begin(), all.end(), 0);
  if (rspec.exhaustive || total <= rspec.max_regions) return all;
  std::vector<int> picked;
  picked.reserve(rspec.max_regions);
  Rng rng(DeriveSeed(rspec.seed, HashName("regions")));
  // selection sampling keeps the chosen indices in ascending order
  std::sample(all.begin(), all.end(), std::back_inserter(picked), rspec.max_regions, rng);
  return picked;
}

}  // namespace

std::vector<Region> SelectRegions(const Shape& image, const RegionSpec& rspec) {
  const std::vector<Region> tiles = TileRegions(image, rspec.patch_h, rspec.patch_w);
  std::vector<Region> out;
  for (int i : SelectTileIndices(image, rspec)) out.push_back(tiles[i]);
  return out;
}

Vector PerturbRegion(ConstVectorRef x, const Shape& image, const Region& region,
                     int region_index, const RegionSpec& rspec) {
  const int C = image.channels(), H = image.height(), W = image.width();
  Vector z = x;
  Rng rng(DeriveSeed(rspec.seed, HashName("region-noise"), region_index));
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  for (int c = 0; c < C; ++c) {
    Scalar fill = 0.0;
    if (rspec.perturbation == RegionPerturbation::kMean) {
      fill = x.segment(c * H * W, H * W).mean();
    }
    for (int y = region.y0; y < region.y1; ++y) {
      for (int xx = region.x0; xx < region.x1; ++xx) {
        Scalar& v = z((c * H + y) * W + xx);
        v = rspec.perturbation == RegionPerturbation::kGaussian
                ? v + rspec.sigma * normal(rng)
                : fill;
      }
    }
  }
  return z;
}

RegionDeltas ComputeRegionDeltas(const Model& model, ConstVectorRef x,
                                 int target_class, const RegionSpec& rspec, int jobs) {
  const Shape shape = ImageInputShape(model, x);
  const std::vector<Region> tiles = TileRegions(shape, rspec.patch_h, rspec.patch_w);
  RegionDeltas out;
  out.tile_index = SelectTileIndices(shape, rspec);
  for (int i : out.tile_index) out.regions.push_back(tiles[i]);
  const Scalar fx = TargetScore(model, x, target_class);
  out.abs_delta.resize(static_cast<Eigen::Index>(out.regions.size()));
  ParallelFor(out.regions.size(), jobs, [&](std::size_t r) {
    const Vector z = PerturbRegion(x, shape, out.regions[r], out.tile_index[r], rspec);
    out.abs_delta(r) = std::abs(fx - TargetScore(model, z, target_class));
  });
  return out;
}

Vector RegionAttributions(const Matrix& map, const std::vector<Region>& regions) {
  Vector a(static_cast<Eigen::Index>(regions.size()));
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const Region& r = regions[i];
    a(i) = map.block(r.y0, r.x0, r.y1 - r.y0, r.x1 - r.x0).sum();
  }
  return a;
}

Scalar FaithfulnessCorrelationFrom(const Vector& abs_delta, const Vector& region_attr) {
  const Vector w = region_attr.cwiseAbs();
  const Scalar total = w.sum();
  if (!(total > 0.0)) return kUndefined;
  return abs_delta.dot(w) / total;
}

Scalar SmoothMprtFrom(const Vector& abs_delta, const Vector& region_attr) {
  return (abs_delta.array() / (1.0 + region_attr.array().abs())).mean();
}

Scalar FaithfulnessEstimateFrom(const Vector& abs_delta, const Vector& region_attr) {
  return abs_delta.cwiseProduct(region_attr.cwiseAbs()).mean();
}

Scalar FaithfulnessCorrelation(const Model& model, ConstVectorRef x,
                               const AttributionMap& map, const RegionSpec& rspec) {
  CheckMap(map, ImageInputShape(model, x));
  const RegionDeltas d = ComputeRegionDeltas(model, x, map.target_class, rspec);
  return FaithfulnessCorrelationFrom(d.abs_delta, RegionAttributions(map.values, d.regions));
}

Scalar MaxSensitivity(const Model& model, ConstVectorRef x, int target_class,
                      const RegionSpec& rspec) {
  return ComputeRegionDeltas(model, x, target_class, rspec).abs_delta.maxCoeff();
}

Scalar AvgSensitivity(const Model& model, ConstVectorRef x, int target_class,
                      const RegionSpec& rspec) {
  return ComputeRegionDeltas(model, x, target_class, rspec).abs_delta.mean();
}

Scalar Mprt(const Model& model, ConstVectorRef x, int target_class,
            const RegionSpec& rspec) {
  return ComputeRegionDeltas(model, x, target_class, rspec).abs_delta.mean();
}

Scalar SmoothMprt(const Model& model, ConstVectorRef x, const AttributionMap& map,
                  const RegionSpec& rspec) {
  CheckMap(map, ImageInputShape(model, x));
  const RegionDeltas d = ComputeRegionDeltas(model, x, map.target_class, rspec);
  return SmoothMprtFrom(d.abs_delta, RegionAttributions(map.values, d.regions));
}

Scalar FaithfulnessEstimate(const Model& model, ConstVectorRef x,
                            const AttributionMap& map, const RegionSpec& rspec) {
  CheckMap(map, ImageInputShape(model, x));
  const RegionDeltas d = ComputeRegionDeltas(model, x, map.target_class, WithBlack(rspec));
  return FaithfulnessEstimateFrom(d.abs_delta, RegionAttributions(map.values, d.regions));
}

namespace {

constexpr std::array<std::string_view, 6> kImageMetricNames{
    "faithfulness_correlation", "max_sensitivity", "mprt",
    "smooth_mprt",              "avg_sensitivity", "faithfulness_estimate",
};

}  // namespace

std::string_view ImageMetricName(ImageMetric metric) {
  return kImageMetricNames[static_cast<int>(metric)];
}

std::optional<ImageMetric> ParseImageMetric(std::string_view name) {
  for (std::size_t i = 0; i < kImageMetricNames.size(); ++i) {
    if (kImageMetricNames[i] == name) return kAllImageMetrics[i];
  }
  return std::nullopt;
}

ImageMetricsResult CalculateImageMetrics(const Model& model,
                                         const ImageExplainer& explainer,
                                         const Matrix& images,
                                         const ImageMetricsConfig& config) {
  const int n_rows = static_cast<int>(images.rows());
  if (n_rows == 0) throw Error(ErrorKind::kEmptyDataset, "no images to evaluate");
  const Shape shape = model.input_shape();
  if (!shape.is_image() || images.cols() != shape.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "image rows have " + std::to_string(images.cols()) +
                    " values, model expects " + shape.ToString());
  }
  config.regions.Validate(shape);
  const std::uint64_t explainer_id = HashName(explainer.name());

  ImageMetricsResult result;
  result.instances.resize(n_rows);
  ParallelFor(n_rows, config.jobs, [&](std::size_t row) {
    ImageInstanceMetrics& out = result.instances[row];
    const Vector x = images.row(row).transpose();
    RegionSpec rspec = config.regions;
    rspec.seed = DeriveSeed(config.seed, row, HashName("regions"));
    try {
      const int target = config.target_class.value_or(Predict(model, x).predicted_class);
      const AttributionMap map =
          explainer.Explain(model, x, target, DeriveSeed(config.seed, row, explainer_id));
      const RegionDeltas d = ComputeRegionDeltas(model, x, target, rspec);
      const Vector a = RegionAttributions(map.values, d.regions);
      std::optional<Vector> black;
      auto black_deltas = [&]() -> const Vector& {
        if (!black) {
          black = rspec.perturbation == RegionPerturbation::kBlack
                      ? d.abs_delta
                      : ComputeRegionDeltas(model, x, target, WithBlack(rspec)).abs_delta;
        }
        return *black;
      };
      for (ImageMetric m : config.metrics) {
        switch (m) {
          case ImageMetric::kFaithfulnessCorrelation:
            out.row[m] = FaithfulnessCorrelationFrom(d.abs_delta, a);
            break;
          case ImageMetric::kMaxSensitivity:
            out.row[m] = d.abs_delta.maxCoeff();
            break;
          case ImageMetric::kMprt:
          case ImageMetric::kAvgSensitivity:
            out.row[m] = d.abs_delta.mean();
            break;
          case ImageMetric::kSmoothMprt:
            out.row[m] = SmoothMprtFrom(d.abs_delta, a);
            break;
          case ImageMetric::kFaithfulnessEstimate:
            out.row[m] = FaithfulnessEstimateFrom(black_deltas(), a);
            break;
        }
      }
    } catch (const Error& e) {
      out.error = e.what();
    }
  });

  for (std::size_t j = 0; j < kAllImageMetrics.size(); ++j) {
    Scalar sum = 0.0;
    int defined = 0;
    for (const ImageInstanceMetrics& im : result.instances) {
      const Scalar v = im.row.values[j];
      if (std::isnan(v)) continue;
      sum += v;
      ++defined;
    }
    result.aggregate.values[j] = defined > 0 ? sum / defined : kUndefined;
    result.n_excluded[j] = n_rows - defined;
  }
  for (const ImageInstanceMetrics& im : result.instances) result.n_errors += im.error.has_value();
  return result;
}

}  // namespace attriq
