// Per-pixel attribution maps for image classifiers.
//
// Images are flat (C, H, W) vectors matching the model's input shape. Every
// method returns an H x W map; channel reduction is summation for signed
// methods and max-|.| for saliency.

#ifndef ATTRIQ_ATTRIB_IMAGE_HPP
#define ATTRIQ_ATTRIB_IMAGE_HPP

#include "attriq/core.hpp"
#include "attriq/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace attriq {

struct AttributionMap {
  Matrix values;  // H x W
  int target_class = 0;
  std::string method;
  Shape input_shape;
};

enum class ChannelReduction { kSum, kMaxAbs };

// Collapses a flat (C, H, W) tensor to an H x W matrix.
Matrix ReduceChannels(ConstVectorRef values, const Shape& shape,
                      ChannelReduction reduction);

AttributionMap SaliencyMap(const Model& model, ConstVectorRef x, int target_class);

AttributionMap GradInputMap(const Model& model, ConstVectorRef x, int target_class);

AttributionMap IntegratedGradientsMap(const Model& model, ConstVectorRef x,
                                      ConstVectorRef baseline, int steps,
                                      int target_class);

// Mean saliency map over Gaussian-noised copies of x, noise std =
// sigma * (max(x) - min(x)).
AttributionMap SmoothGrad(const Model& model, ConstVectorRef x, int target_class,
                          int n_samples, Scalar sigma, std::uint64_t seed);

// Top-left corners of patch positions along one axis: 0, stride, ... plus a
// final flush position so every cell is covered.
std::vector<int> PatchOffsets(int extent, int patch, int stride);

AttributionMap OcclusionSensitivity(const Model& model, ConstVectorRef x,
                                    int target_class, int patch_size, int stride,
                                    Scalar baseline_value = 0.0);

enum class Upsampling { kBilinear, kNearest };

// Resizes with half-pixel centres (the convention of most image libraries).
Matrix Resize(const Matrix& src, int height, int width, Upsampling mode);

// conv_layer_idx defaults to the last conv layer.
AttributionMap GradCam(const Model& model, ConstVectorRef x, int target_class,
                       std::optional<int> conv_layer_idx = std::nullopt,
                       Upsampling upsampling = Upsampling::kBilinear);

enum class ImageMethod {
  kSaliency,
  kGradInput,
  kIntegratedGradients,
  kSmoothGrad,
  kOcclusion,
  kGradCam,
};

std::string_view ImageMethodName(ImageMethod method);
std::optional<ImageMethod> ParseImageMethod(std::string_view name);
std::vector<std::string> ImageMethodNames();

struct ImageExplainerOptions {
  int ig_steps = 64;
  std::optional<Vector> baseline;  // default: black image
  int smoothgrad_samples = 32;
  Scalar smoothgrad_sigma = 0.15;
  int occlusion_patch = 4;
  int occlusion_stride = 4;
  Scalar occlusion_baseline = 0.0;
  std::optional<int> gradcam_layer;
  Upsampling gradcam_upsampling = Upsampling::kBilinear;
};

class ImageExplainer {
 public:
  explicit ImageExplainer(ImageMethod method, ImageExplainerOptions options = {})
      : method_(method), options_(std::move(options)) {}

  // Target defaults to the predicted class.
  AttributionMap Explain(const Model& model, ConstVectorRef x,
                         std::optional<int> target_class,
                         std::uint64_t seed) const;

  ImageMethod method() const { return method_; }
  std::string_view name() const { return ImageMethodName(method_); }
  const ImageExplainerOptions& options() const { return options_; }

 private:
  ImageMethod method_;
  ImageExplainerOptions options_;
};

}  // namespace attriq

#endif  // ATTRIQ_ATTRIB_IMAGE_HPP
