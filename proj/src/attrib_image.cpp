#include "attriq/attrib_image.hpp"

#include "attriq/attrib_tabular.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace attriq {
namespace {

const Shape& ImageShape(const Model& model, ConstVectorRef x) {
  const SequentialNet* net = model.net();
  if (net == nullptr || !net->input_shape().is_image()) {
    throw Error(ErrorKind::kShapeMismatch,
                "image attribution needs a network with (C, H, W) input");
  }
  if (x.size() != net->input_shape().size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "image has " + std::to_string(x.size()) + " values, model expects " +
                    net->input_shape().ToString());
  }
  return net->input_shape();
}

AttributionMap MakeMap(Matrix values, int target_class, std::string_view method,
                       const Shape& shape) {
  return AttributionMap{std::move(values), target_class, std::string(method), shape};
}

}  // namespace

Matrix ReduceChannels(ConstVectorRef values, const Shape& shape,
                      ChannelReduction reduction) {
  const int C = shape.channels(), H = shape.height(), W = shape.width();
  Matrix out(H, W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      Scalar acc = reduction == ChannelReduction::kSum ? 0.0 : -1.0;
      for (int c = 0; c < C; ++c) {
        const Scalar v = values((c * H + y) * W + x);
        acc = reduction == ChannelReduction::kSum ? acc + v
                                                  : std::max(acc, std::abs(v));
      }
      out(y, x) = acc;
    }
  }
  return out;
}

AttributionMap SaliencyMap(const Model& model, ConstVectorRef x, int target_class) {
  const Shape& shape = ImageShape(model, x);
  return MakeMap(ReduceChannels(InputGradient(model, x, target_class), shape,
                                ChannelReduction::kMaxAbs),
                 target_class, "saliency", shape);
}

AttributionMap GradInputMap(const Model& model, ConstVectorRef x, int target_class) {
  const Shape& shape = ImageShape(model, x);
  const Vector gxi = InputGradient(model, x, target_class).cwiseProduct(x);
  return MakeMap(ReduceChannels(gxi, shape, ChannelReduction::kSum), target_class,
                 "grad_x_input", shape);
}

AttributionMap IntegratedGradientsMap(const Model& model, ConstVectorRef x,
                                      ConstVectorRef baseline, int steps,
                                      int target_class) {
  const Shape& shape = ImageShape(model, x);
  if (baseline.size() != x.size()) {
    throw Error(ErrorKind::kShapeMismatch, "baseline image shape differs from input");
  }
  const Attribution a = IntegratedGradients(model, x, baseline, target_class, steps);
  return MakeMap(ReduceChannels(a.values, shape, ChannelReduction::kSum),
                 target_class, "integrated_gradients", shape);
}

AttributionMap SmoothGrad(const Model& model, ConstVectorRef x, int target_class,
                          int n_samples, Scalar sigma, std::uint64_t seed) {
  const Shape& shape = ImageShape(model, x);
  if (n_samples < 1 || !(sigma >= 0.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                "smoothgrad needs n_samples >= 1 and sigma >= 0");
  }
  const Scalar std_dev = sigma * (x.maxCoeff() - x.minCoeff());
  Rng rng(seed);
  Vector noise(x.size());
  const Vector scale = Vector::Constant(x.size(), std_dev);
  Matrix mean = Matrix::Zero(shape.height(), shape.width());
  for (int k = 1; k <= n_samples; ++k) {
    FillGaussian(rng, noise, scale);
    const Matrix sal = ReduceChannels(InputGradient(model, x + noise, target_class),
                                      shape, ChannelReduction::kMaxAbs);
    // Running mean: identical samples leave the mean bit-for-bit unchanged.
    mean += (sal - mean) / static_cast<Scalar>(k);
  }
  return MakeMap(std::move(mean), target_class, "smoothgrad", shape);
}

std::vector<int> PatchOffsets(int extent, int patch, int stride) {
  std::vector<int> offsets;
  for (int o = 0; o + patch <= extent; o += stride) offsets.push_back(o);
  if (offsets.empty() || offsets.back() + patch < extent) {
    offsets.push_back(extent - patch);
  }
  return offsets;
}

AttributionMap OcclusionSensitivity(const Model& model, ConstVectorRef x,
                                    int target_class, int patch_size, int stride,
                                    Scalar baseline_value) {
  const Shape& shape = ImageShape(model, x);
  const int C = shape.channels(), H = shape.height(), W = shape.width();
  if (patch_size < 1 || stride < 1) {
    throw Error(ErrorKind::kInvalidArgument, "patch_size and stride must be >= 1");
  }
  if (patch_size > H || patch_size > W) {
    throw Error(ErrorKind::kPatchLargerThanImage,
                "patch " + std::to_string(patch_size) + " exceeds image " +
                    std::to_string(H) + "x" + std::to_string(W));
  }
  const Scalar fx = TargetScore(model, x, target_class);
  Matrix sum = Matrix::Zero(H, W);
  Matrix count = Matrix::Zero(H, W);
  Vector occluded = x;
  for (int oy : PatchOffsets(H, patch_size, stride)) {
    for (int ox : PatchOffsets(W, patch_size, stride)) {
      for (int c = 0; c < C; ++c)
        for (int y = oy; y < oy + patch_size; ++y)
          for (int xx = ox; xx < ox + patch_size; ++xx)
            occluded((c * H + y) * W + xx) = baseline_value;
      const Scalar delta = fx - TargetScore(model, occluded, target_class);
      sum.block(oy, ox, patch_size, patch_size).array() += delta;
      count.block(oy, ox, patch_size, patch_size).array() += 1.0;
      for (int c = 0; c < C; ++c)
        for (int y = oy; y < oy + patch_size; ++y)
          for (int xx = ox; xx < ox + patch_size; ++xx)
            occluded((c * H + y) * W + xx) = x((c * H + y) * W + xx);
    }
  }
  const Matrix avg = (count.array() > 0.0).select(sum.array() / count.array(), 0.0);
  return MakeMap(avg, target_class, "occlusion", shape);
}

Matrix Resize(const Matrix& src, int height, int width, Upsampling mode) {
  const int h = static_cast<int>(src.rows()), w = static_cast<int>(src.cols());
  Matrix out(height, width);
  const Scalar sy = static_cast<Scalar>(h) / height;
  const Scalar sx = static_cast<Scalar>(w) / width;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (mode == Upsampling::kNearest) {
        const int iy = std::min(h - 1, static_cast<int>(std::floor(y * sy)));
        const int ix = std::min(w - 1, static_cast<int>(std::floor(x * sx)));
        out(y, x) = src(iy, ix);
        continue;
      }
      const Scalar fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
      const Scalar fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int y0 = static_cast<int>(std::floor(fy));
      const int x0 = static_cast<int>(std::floor(fx));
      const int y1 = std::min(y0 + 1, h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const Scalar ty = fy - y0, tx = fx - x0;
      out(y, x) = (1 - ty) * ((1 - tx) * src(y0, x0) + tx * src(y0, x1)) +
                  ty * ((1 - tx) * src(y1, x0) + tx * src(y1, x1));
    }
  }
  return out;
}

AttributionMap GradCam(const Model& model, ConstVectorRef x, int target_class,
                       std::optional<int> conv_layer_idx, Upsampling upsampling) {
  const Shape& shape = ImageShape(model, x);
  int layer = 0;
  if (conv_layer_idx.has_value()) {
    layer = *conv_layer_idx;
  } else if (auto last = model.net()->last_conv_layer()) {
    layer = *last;
  } else {
    throw Error(ErrorKind::kLayerNotConvolutional, "network has no conv2d layer");
  }
  const ActivationResult fwd = ForwardWithActivations(model, x, layer);
  const Vector grad = ActivationGradient(model, x, layer, target_class);
  const Shape& as = fwd.activation_shape;
  const int C = as.channels(), h = as.height(), w = as.width();
  const int plane = h * w;

  Matrix cam = Matrix::Zero(h, w);
  for (int c = 0; c < C; ++c) {
    const Scalar weight = grad.segment(c * plane, plane).mean();
    cam += weight * Eigen::Map<const RowMatrix>(fwd.activation.data() + c * plane, h, w);
  }
  cam = cam.cwiseMax(0.0);
  Matrix up = Resize(cam, shape.height(), shape.width(), upsampling);
  const Scalar peak = up.maxCoeff();
  if (peak > 0.0) up /= peak;
  return MakeMap(std::move(up), target_class, "grad_cam", shape);
}

namespace {

constexpr std::array<std::pair<ImageMethod, std::string_view>, 6> kImageMethods{{
    {ImageMethod::kSaliency, "saliency"},
    {ImageMethod::kGradInput, "grad_x_input"},
    {ImageMethod::kIntegratedGradients, "integrated_gradients"},
    {ImageMethod::kSmoothGrad, "smoothgrad"},
    {ImageMethod::kOcclusion, "occlusion"},
    {ImageMethod::kGradCam, "grad_cam"},
}};

}  // namespace

std::string_view ImageMethodName(ImageMethod method) {
  for (const auto& [m, name] : kImageMethods) {
    if (m == method) return name;
  }
  return "unknown";
}

std::optional<ImageMethod> ParseImageMethod(std::string_view name) {
  for (const auto& [m, n] : kImageMethods) {
    if (n == name) return m;
  }
  return std::nullopt;
}

std::vector<std::string> ImageMethodNames() {
  std::vector<std::string> names;
  for (const auto& [m, n] : kImageMethods) names.emplace_back(n);
  return names;
}

AttributionMap ImageExplainer::Explain(const Model& model, ConstVectorRef x,
                                       std::optional<int> target_class,
                                       std::uint64_t seed) const {
  const int target =
      target_class.has_value() ? *target_class : Predict(model, x).predicted_class;
  switch (method_) {
    case ImageMethod::kSaliency:
      return SaliencyMap(model, x, target);
    case ImageMethod::kGradInput:
      return GradInputMap(model, x, target);
    case ImageMethod::kIntegratedGradients: {
      const Vector baseline = options_.baseline.value_or(Vector::Zero(x.size()));
      return IntegratedGradientsMap(model, x, baseline, options_.ig_steps, target);
    }
    case ImageMethod::kSmoothGrad:
      return SmoothGrad(model, x, target, options_.smoothgrad_samples,
                        options_.smoothgrad_sigma, seed);
    case ImageMethod::kOcclusion:
      return OcclusionSensitivity(model, x, target, options_.occlusion_patch,
                                  options_.occlusion_stride,
                                  options_.occlusion_baseline);
    case ImageMethod::kGradCam:
      return GradCam(model, x, target, options_.gradcam_layer,
                     options_.gradcam_upsampling);
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown image method");
}

}  // namespace attriq
