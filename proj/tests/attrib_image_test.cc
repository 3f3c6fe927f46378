#include "attriq/attrib_image.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace attriq {
namespace {

using testing::RandomConvNet;
using testing::RandomVector;

// flatten -> dense(n_classes) over a (C, H, W) image.
Model FlatDense(const Matrix& w, int c, int h, int width) {
  return Model(SequentialNet(Shape::Image(c, h, width),
                             {FlattenLayer{}, DenseLayer{w, Vector::Zero(w.rows())}}));
}

Matrix AsImage(const Vector& v, int h, int w) {
  return Eigen::Map<const RowMatrix>(v.data(), h, w);
}

// Reads only pixel (0, 0) of channel 0.
Model CornerModel(int h, int w) {
  Matrix weights = Matrix::Zero(1, h * w);
  weights(0, 0) = 2.0;
  return FlatDense(weights, 1, h, w);
}

TEST(SaliencyMapTest, FlattenDenseGivesAbsWeights) {
  Rng rng(1);
  const Matrix w = testing::RandomMatrix(rng, 2, 2 * 3 * 4);
  const Model m = FlatDense(w, 2, 3, 4);
  const AttributionMap map = SaliencyMap(m, RandomVector(rng, 24), 1);
  const Vector row = w.row(1).transpose();
  const Matrix expected =
      AsImage(row.head(12), 3, 4).cwiseAbs().cwiseMax(AsImage(row.tail(12), 3, 4).cwiseAbs());
  EXPECT_EQ(map.values, expected);
  EXPECT_EQ(map.input_shape, Shape::Image(2, 3, 4));
}

TEST(IntegratedGradientsMapTest, BlackBaselineOnLinearIsInputTimesWeight) {
  Rng rng(2);
  const Matrix w = testing::RandomMatrix(rng, 1, 16);
  const Model m = FlatDense(w, 1, 4, 4);
  const Vector x = RandomVector(rng, 16);
  const AttributionMap map = IntegratedGradientsMap(m, x, Vector::Zero(16), 16, 0);
  const Vector expected = x.cwiseProduct(w.row(0).transpose());
  EXPECT_LT((map.values - AsImage(expected, 4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IntegratedGradientsMapTest, CompletenessOnTwoConvNet) {
  Rng rng(3);
  const Model m = RandomConvNet(rng, 1, 16, 3, true);
  const Vector x = RandomVector(rng, 256, 0, 1);
  const Vector black = Vector::Zero(256);
  const AttributionMap map = IntegratedGradientsMap(m, x, black, 512, 2);
  const Scalar gap =
      std::abs(map.values.sum() - (TargetScore(m, x, 2) - TargetScore(m, black, 2)));
  EXPECT_LT(gap, 1e-3);
}

TEST(GradInputMapTest, SumsChannels) {
  Rng rng(4);
  const Matrix w = testing::RandomMatrix(rng, 1, 2 * 2 * 2);
  const Model m = FlatDense(w, 2, 2, 2);
  const Vector x = RandomVector(rng, 8);
  const Vector gx = x.cwiseProduct(w.row(0).transpose());
  const Matrix expected = AsImage(gx.head(4), 2, 2) + AsImage(gx.tail(4), 2, 2);
  EXPECT_LT((GradInputMap(m, x, 0).values - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SmoothGradTest, ZeroSigmaEqualsSaliencyBitForBit) {
  Rng rng(5);
  const Model m = RandomConvNet(rng, 2, 8, 3, true);
  const Vector x = RandomVector(rng, 128);
  const Matrix sal = SaliencyMap(m, x, 1).values;
  for (int n : {1, 3, 7}) {
    const Matrix sg = SmoothGrad(m, x, 1, n, 0.0, 99).values;
    EXPECT_EQ(0, std::memcmp(sal.data(), sg.data(), sizeof(Scalar) * sal.size()));
  }
}

TEST(SmoothGradTest, SeededDeterminism) {
  Rng rng(6);
  const Model m = RandomConvNet(rng, 1, 8, 2, true);
  const Vector x = RandomVector(rng, 64);
  EXPECT_EQ(SmoothGrad(m, x, 0, 8, 0.2, 1).values, SmoothGrad(m, x, 0, 8, 0.2, 1).values);
  EXPECT_NE(SmoothGrad(m, x, 0, 8, 0.2, 1).values, SmoothGrad(m, x, 0, 8, 0.2, 2).values);
}

TEST(SmoothGradTest, MonteCarloVarianceShrinksWithSamples) {
  Rng rng(7);
  const Model m = RandomConvNet(rng, 1, 8, 2, false);
  const Vector x = RandomVector(rng, 64);
  auto spread = [&](int n) {
    // mean over pixels of the across-seed variance
    const int seeds = 24;
    std::vector<Matrix> maps;
    for (int s = 0; s < seeds; ++s) maps.push_back(SmoothGrad(m, x, 0, n, 0.3, 1000 + s).values);
    Matrix mean = Matrix::Zero(8, 8);
    for (const auto& mp : maps) mean += mp / seeds;
    Scalar var = 0.0;
    for (const auto& mp : maps) var += (mp - mean).squaredNorm();
    return var / (seeds - 1) / 64.0;
  };
  const Scalar v4 = spread(4), v8 = spread(8), v16 = spread(16);
  EXPECT_LT(v8, v4);
  EXPECT_LT(v16, v8);
}

TEST(OcclusionTest, OnlyPatchesCoveringTheReadPixelContribute) {
  const Model m = CornerModel(6, 6);
  Vector x = Vector::Constant(36, 0.5);
  const AttributionMap map = OcclusionSensitivity(m, x, 0, 2, 2, 0.0);
  // the (0,0) patch drops f by 2 * 0.5; every other cell is untouched
  EXPECT_DOUBLE_EQ(map.values(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(map.values(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(map.values.sum(), 4.0);
}

TEST(OcclusionTest, ConstantModelGivesZeroMap) {
  const Model m = FlatDense(Matrix::Zero(1, 25), 1, 5, 5);
  Rng rng(8);
  EXPECT_TRUE(OcclusionSensitivity(m, RandomVector(rng, 25), 0, 3, 1).values.isZero(0.0));
}

TEST(OcclusionTest, WholeImagePatchIsUniform) {
  Rng rng(9);
  const Model m = RandomConvNet(rng, 1, 6, 2, true);
  const Vector x = RandomVector(rng, 36);
  const Scalar expected = TargetScore(m, x, 0) - TargetScore(m, Vector::Zero(36), 0);
  for (int stride : {1, 3, 10}) {
    const Matrix v = OcclusionSensitivity(m, x, 0, 6, stride).values;
    EXPECT_TRUE((v.array() == expected).all());
  }
}

TEST(OcclusionTest, NonOverlappingEqualsPerPatchAblation) {
  Rng rng(10);
  const Model m = RandomConvNet(rng, 2, 8, 3, true);
  const Vector x = RandomVector(rng, 128);
  const Matrix map = OcclusionSensitivity(m, x, 1, 4, 4, -0.25).values;
  const Scalar fx = TargetScore(m, x, 1);
  for (int py = 0; py < 8; py += 4) {
    for (int px = 0; px < 8; px += 4) {
      Vector z = x;
      for (int c = 0; c < 2; ++c)
        for (int y = py; y < py + 4; ++y)
          for (int xx = px; xx < px + 4; ++xx) z((c * 8 + y) * 8 + xx) = -0.25;
      const Scalar delta = fx - TargetScore(m, z, 1);
      EXPECT_TRUE((map.block(py, px, 4, 4).array() == delta).all());
    }
  }
}

TEST(OcclusionTest, OverlappingPatchesAverage) {
  const Model m = CornerModel(4, 4);
  const Vector x = Vector::Constant(16, 1.0);
  // patch 2, stride 1: cell (0,0) covered by one patch (delta 2), cell (1,1)
  // by four patches of which one has delta 2.
  const Matrix v = OcclusionSensitivity(m, x, 0, 2, 1).values;
  EXPECT_DOUBLE_EQ(v(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(v(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(v(1, 1), 0.5);
  EXPECT_DOUBLE_EQ(v(3, 3), 0.0);
}

TEST(OcclusionTest, PatchLargerThanImage) {
  try {
    OcclusionSensitivity(CornerModel(4, 4), Vector::Zero(16), 0, 5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPatchLargerThanImage);
  }
  EXPECT_EQ(PatchOffsets(7, 3, 3), (std::vector<int>{0, 3, 4}));
  EXPECT_EQ(PatchOffsets(6, 6, 2), (std::vector<int>{0}));
}

TEST(GradCamTest, ContractOnRandomNets) {
  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    const Model m = RandomConvNet(rng, 1 + t % 3, 12, 3, t % 2 == 0);
    const Vector x = RandomVector(rng, m.n_features());
    const AttributionMap map = GradCam(m, x, t % 3);
    EXPECT_EQ(map.values.rows(), 12);
    EXPECT_EQ(map.values.cols(), 12);
    EXPECT_GE(map.values.minCoeff(), 0.0);
    EXPECT_LE(map.values.maxCoeff(), 1.0);
  }
}

TEST(GradCamTest, ZeroDownstreamWeightsGiveZeroMap) {
  Rng rng(12);
  Conv2dLayer conv = testing::RandomConv(rng, 1, 2, 3, 1, 1);
  DenseLayer head = testing::RandomDense(rng, 2, 2 * 6 * 6);
  head.weights.row(0).setZero();
  const Model m(SequentialNet(Shape::Image(1, 6, 6),
                              {conv, ReluLayer{}, FlattenLayer{}, head}));
  EXPECT_TRUE(GradCam(m, RandomVector(rng, 36), 0).values.isZero(0.0));
}

TEST(GradCamTest, OneByOneConvReplay) {
  Rng rng(13);
  Conv2dLayer conv;
  conv.in_channels = 2;
  conv.out_channels = 2;
  conv.kernel_h = conv.kernel_w = 1;
  conv.weights = Vector::Zero(4);
  conv.weights(0) = conv.weights(3) = 1.0;  // identity mixing
  conv.bias = Vector::Zero(2);
  DenseLayer head = testing::RandomDense(rng, 2, 2 * 4 * 4);
  const Model m(SequentialNet(Shape::Image(2, 4, 4), {conv, FlattenLayer{}, head}));
  const Vector x = RandomVector(rng, 32);
  // Hand replay: activations == x, gradient == dense row, weights = mean.
  const Vector g = head.weights.row(1).transpose();
  const Scalar w0 = g.head(16).mean(), w1 = g.tail(16).mean();
  Matrix cam = (w0 * AsImage(x.head(16), 4, 4) + w1 * AsImage(x.tail(16), 4, 4)).cwiseMax(0.0);
  if (cam.maxCoeff() > 0) cam /= cam.maxCoeff();
  const Matrix got = GradCam(m, x, 1, 0).values;
  EXPECT_LT((got - cam).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GradCamTest, RejectsNonConvLayer) {
  Rng rng(14);
  const Model m = RandomConvNet(rng, 1, 6, 2, false);
  EXPECT_THROW(GradCam(m, Vector::Zero(36), 0, 1), Error);
  const Model noconv = CornerModel(3, 3);
  EXPECT_THROW(GradCam(noconv, Vector::Zero(9), 0), Error);
}

TEST(ResizeTest, BilinearAndNearest) {
  Matrix src(2, 2);
  src << 0, 1, 2, 3;
  EXPECT_EQ(Resize(src, 2, 2, Upsampling::kBilinear), src);
  const Matrix up = Resize(src, 4, 4, Upsampling::kBilinear);
  EXPECT_DOUBLE_EQ(up(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(up(3, 3), 3.0);
  EXPECT_DOUBLE_EQ(up(1, 1), 0.75);  // (0.25, 0.25) inside the source grid
  const Matrix nn = Resize(src, 4, 4, Upsampling::kNearest);
  EXPECT_DOUBLE_EQ(nn(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(nn(2, 3), 3.0);
}

TEST(ImageExplainerTest, DispatchAndNames) {
  Rng rng(15);
  const Model m = RandomConvNet(rng, 1, 8, 2, true);
  const Vector x = RandomVector(rng, 64);
  for (const auto& name : ImageMethodNames()) {
    const ImageExplainer ex(*ParseImageMethod(name));
    const AttributionMap map = ex.Explain(m, x, std::nullopt, 3);
    EXPECT_EQ(map.method, name);
    EXPECT_EQ(map.target_class, Predict(m, x).predicted_class);
    EXPECT_TRUE(map.values.array().isFinite().all());
  }
}

}  // namespace
}  // namespace attriq
