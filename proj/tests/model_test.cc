#include "attriq/model.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace attriq {
namespace {

using testing::FiniteDifference;
using testing::NearKink;
using testing::MakeLinear;
using testing::RandomConvNet;
using testing::RandomMlp;
using testing::RandomVector;
using testing::RelativeError;

Vector Vec(std::initializer_list<Scalar> v) {
  Vector out(v.size());
  Eigen::Index i = 0;
  for (Scalar s : v) out(i++) = s;
  return out;
}

Model Stump() {
  TreeEnsemble ens;
  ens.n_features = 1;
  ens.n_classes = 1;
  DecisionTree tree;
  tree.nodes.resize(3);
  tree.nodes[0].feature = 0;
  tree.nodes[0].threshold = 0.5;
  tree.nodes[0].left = 1;
  tree.nodes[0].right = 2;
  tree.nodes[1].value = Vec({0.0});
  tree.nodes[2].value = Vec({1.0});
  ens.trees.push_back(tree);
  return Model(std::move(ens));
}

TEST(PredictTest, LinearDotProduct) {
  const Model m = MakeLinear({1, 2}, 0.5);
  EXPECT_DOUBLE_EQ(Predict(m, Vec({1, 1})).scores(0), 3.5);
}

TEST(PredictTest, DecisionStump) {
  EXPECT_DOUBLE_EQ(Predict(Stump(), Vec({0.7})).scores(0), 1.0);
  EXPECT_DOUBLE_EQ(Predict(Stump(), Vec({0.5})).scores(0), 0.0);
}

TEST(PredictTest, IdentityDenseSoftmaxIsUniform) {
  std::vector<Layer> layers{DenseLayer{Matrix::Identity(2, 2), Vector::Zero(2)},
                            SoftmaxLayer{}};
  const Model m(SequentialNet(Shape::Flat(2), layers));
  const ModelOutput out = Predict(m, Vec({0, 0}));
  EXPECT_DOUBLE_EQ(out.scores(0), 0.5);
  EXPECT_DOUBLE_EQ(out.scores(1), 0.5);
  EXPECT_EQ(out.predicted_class, 0);  // tie -> lowest index
}

TEST(PredictTest, ErrorsOnBadInput) {
  const Model m = MakeLinear({1, 2}, 0.0);
  try {
    Predict(m, Vec({1, 2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShapeMismatch);
  }
  try {
    Predict(m, Vec({1, std::nan("")}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFiniteInput);
  }
}

TEST(PredictTest, DeterministicAndSoftmaxNormalized) {
  Rng rng(7);
  const Model m = RandomMlp(rng, 5, 8, 3, /*softmax=*/true);
  for (int t = 0; t < 50; ++t) {
    const Vector x = RandomVector(rng, 5, -3, 3);
    const ModelOutput a = Predict(m, x);
    const ModelOutput b = Predict(m, x);
    EXPECT_EQ(0, std::memcmp(a.scores.data(), b.scores.data(),
                             sizeof(Scalar) * a.scores.size()));
    EXPECT_NEAR(a.scores.sum(), 1.0, 1e-6);
    EXPECT_TRUE((a.scores.array() >= 0).all() && (a.scores.array() <= 1).all());
  }
}

TEST(PredictTest, TreeEnsembleMatchesPerTreeOracle) {
  Rng rng(11);
  for (Aggregation agg : {Aggregation::kMean, Aggregation::kSum}) {
    TreeEnsemble ens;
    ens.n_features = 4;
    ens.n_classes = 3;
    ens.aggregation = agg;
    for (int t = 0; t < 5; ++t) ens.trees.push_back(testing::RandomTree(rng, 4, 3, 3));
    const Model m(ens);
    for (int k = 0; k < 30; ++k) {
      const Vector x = RandomVector(rng, 4);
      Vector expected = Vector::Zero(3);
      for (const auto& tree : ens.trees) {
        // independent traversal
        int i = 0;
        while (tree.nodes[i].feature >= 0) {
          i = x(tree.nodes[i].feature) <= tree.nodes[i].threshold
                  ? tree.nodes[i].left
                  : tree.nodes[i].right;
        }
        expected += tree.nodes[i].value;
      }
      if (agg == Aggregation::kMean) expected /= 5.0;
      EXPECT_LT((Predict(m, x).scores - expected).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(TargetScoreTest, SelectsClass) {
  LinearModel lin;
  lin.weights = Matrix::Zero(3, 1);
  lin.bias = Vec({0.2, 0.5, 0.3});
  const Model m(lin);
  EXPECT_DOUBLE_EQ(TargetScore(m, Vec({1}), 2), 0.3);
  EXPECT_DOUBLE_EQ(TargetScore(MakeLinear({1, 2}, 0.5), Vec({1, 1}), 0), 3.5);
  lin.weights = Matrix::Zero(2, 1);
  lin.bias = Vec({0.3, 0.7});
  EXPECT_DOUBLE_EQ(TargetScore(Model(lin), Vec({0}), 1), 0.7);
  try {
    TargetScore(m, Vec({1}), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kClassOutOfRange);
  }
}

TEST(InputGradientTest, LinearIsWeights) {
  const Model m = MakeLinear({1, 2}, 0.5);
  const Vector g = InputGradient(m, Vec({-4, 9}), 0);
  EXPECT_DOUBLE_EQ(g(0), 1.0);
  EXPECT_DOUBLE_EQ(g(1), 2.0);
}

TEST(InputGradientTest, TreesAreNotDifferentiable) {
  try {
    InputGradient(Stump(), Vec({0.1}), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNotDifferentiable);
  }
}

TEST(InputGradientTest, AllActiveReluNetIsWeightProduct) {
  // Positive weights and inputs keep every pre-activation > 0.
  DenseLayer l1{(Matrix(2, 2) << 1, 2, 3, 4).finished(), Vec({0.1, 0.1})};
  DenseLayer l2{(Matrix(1, 2) << 0.5, -1.5).finished(), Vec({0})};
  const Model m(SequentialNet(Shape::Flat(2), {l1, ReluLayer{}, l2}));
  const Vector g = InputGradient(m, Vec({1, 1}), 0);
  const Vector expected = (l2.weights * l1.weights).transpose();
  EXPECT_LT((g - expected).norm(), 1e-12);
  auto f = [&](const Vector& z) { return TargetScore(m, z, 0); };
  EXPECT_LT(RelativeError(g, FiniteDifference(f, Vec({1, 1}))), 1e-4);
}

TEST(InputGradientTest, LogisticSoftmaxMatchesFiniteDifferences) {
  Rng rng(3);
  const Model m = testing::RandomLinear(rng, 4, 3, /*softmax=*/true);
  for (int t = 0; t < 20; ++t) {
    const Vector x = RandomVector(rng, 4);
    for (int c = 0; c < 3; ++c) {
      auto f = [&](const Vector& z) { return TargetScore(m, z, c); };
      EXPECT_LT(RelativeError(InputGradient(m, x, c), FiniteDifference(f, x)), 1e-4);
    }
  }
}

TEST(InputGradientTest, MaxPoolRoutesToArgmax) {
  // 1x2x2 image -> maxpool(2) -> flatten -> identity dense.
  std::vector<Layer> layers{MaxPoolLayer{2, 2}, FlattenLayer{},
                            DenseLayer{Matrix::Identity(1, 1), Vec({0})}};
  const Model m(SequentialNet(Shape::Image(1, 2, 2), layers));
  Vector g = InputGradient(m, Vec({0.1, 0.9, 0.3, 0.2}), 0);
  EXPECT_EQ(g, Vec({0, 1, 0, 0}));
  // ties go to the first row-major maximum
  g = InputGradient(m, Vec({0.5, 0.9, 0.9, 0.2}), 0);
  EXPECT_EQ(g, Vec({0, 1, 0, 0}));
}

TEST(InputGradientTest, ReluSubgradientAtZeroIsZero) {
  std::vector<Layer> layers{DenseLayer{Matrix::Identity(1, 1), Vec({0})},
                            ReluLayer{},
                            DenseLayer{Matrix::Identity(1, 1), Vec({0})}};
  const Model m(SequentialNet(Shape::Flat(1), layers));
  EXPECT_EQ(InputGradient(m, Vec({0.0}), 0)(0), 0.0);
}

TEST(InputGradientTest, NetsMatchFiniteDifferencesAwayFromKinks) {
  Rng rng(21);
  const Model mlp = RandomMlp(rng, 6, 10, 3, true, 2);
  const Model cnn = RandomConvNet(rng, 1, 6, 2, true);
  for (const Model* m : {&mlp, &cnn}) {
    int checked = 0;
    while (checked < 30) {
      const Vector x = RandomVector(rng, m->n_features());
      if (NearKink(*m, x)) continue;
      const int c = checked % m->n_classes();
      auto f = [&](const Vector& z) { return TargetScore(*m, z, c); };
      EXPECT_LT(RelativeError(InputGradient(*m, x, c), FiniteDifference(f, x)), 1e-4);
      ++checked;
    }
  }
}

TEST(ActivationTest, IdentityKernelReproducesPaddedImpulse) {
  Conv2dLayer conv;
  conv.in_channels = conv.out_channels = 1;
  conv.kernel_h = conv.kernel_w = 3;
  conv.padding = 1;
  conv.weights = Vector::Zero(9);
  conv.weights(4) = 1.0;  // centre tap
  conv.bias = Vec({0});
  std::vector<Layer> layers{conv, FlattenLayer{},
                            DenseLayer{Matrix::Ones(1, 16), Vec({0})}};
  const Model m(SequentialNet(Shape::Image(1, 4, 4), layers));
  Vector x = Vector::Zero(16);
  x(5) = 1.0;
  const ActivationResult r = ForwardWithActivations(m, x, 0);
  EXPECT_EQ(r.activation, x);
  EXPECT_EQ(r.activation_shape, Shape::Image(1, 4, 4));
}

TEST(ActivationTest, ShapeFollowsStrideAndPadding) {
  Rng rng(5);
  for (auto [k, s, p] : {std::tuple{3, 1, 0}, {3, 2, 1}, {2, 2, 0}, {5, 1, 2}}) {
    Conv2dLayer conv = testing::RandomConv(rng, 2, 3, k, s, p);
    const int out = (9 + 2 * p - k) / s + 1;
    std::vector<Layer> layers{conv, FlattenLayer{},
                              testing::RandomDense(rng, 2, 3 * out * out)};
    const Model m(SequentialNet(Shape::Image(2, 9, 9), layers));
    const ActivationResult r = ForwardWithActivations(m, RandomVector(rng, 162), 0);
    EXPECT_EQ(r.activation_shape, Shape::Image(3, out, out));
    EXPECT_EQ(r.activation.size(), 3 * out * out);
  }
}

TEST(ActivationTest, OutputMatchesPredict) {
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const Model m = RandomConvNet(rng, 2, 8, 3, t % 2 == 0);
    const Vector x = RandomVector(rng, m.n_features());
    const ActivationResult r = ForwardWithActivations(m, x, 2);
    const ModelOutput p = Predict(m, x);
    EXPECT_EQ(r.output.scores, p.scores);
    EXPECT_EQ(r.output.predicted_class, p.predicted_class);
  }
}

TEST(ActivationTest, RejectsNonConvLayers) {
  Rng rng(1);
  const Model m = RandomConvNet(rng, 1, 6, 2, false);
  for (int layer : {1, 4, 99, -1}) {
    try {
      ForwardWithActivations(m, Vector::Zero(36), layer);
      FAIL() << layer;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kLayerNotConvolutional);
    }
  }
  try {
    ActivationGradient(MakeLinear({1}, 0), Vec({1}), 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLayerNotConvolutional);
  }
}

TEST(ActivationGradientTest, LinearHeadGivesReshapedWeights) {
  Rng rng(13);
  Conv2dLayer conv = testing::RandomConv(rng, 1, 2, 3, 1, 1);
  DenseLayer head = testing::RandomDense(rng, 3, 2 * 5 * 5);
  const Model m(SequentialNet(Shape::Image(1, 5, 5), {conv, FlattenLayer{}, head}));
  for (int c = 0; c < 3; ++c) {
    const Vector g = ActivationGradient(m, RandomVector(rng, 25), 0, c);
    EXPECT_LT((g - head.weights.row(c).transpose()).norm(), 1e-15);
  }
}

TEST(ActivationGradientTest, MatchesTailReplayFiniteDifferences) {
  Rng rng(17);
  int checked = 0;
  while (checked < 10) {
    const Model m = RandomConvNet(rng, 1, 8, 3, true);
    const Vector x = RandomVector(rng, 64);
    if (NearKink(m, x)) continue;
    const int layer = 2;
    const Vector act = ForwardWithActivations(m, x, layer).activation;
    auto tail = [&](const Vector& a) { return ForwardFromLayer(m, a, layer)(1); };
    const Vector fd = FiniteDifference(tail, act);
    EXPECT_LT(RelativeError(ActivationGradient(m, x, layer, 1), fd), 1e-4);
    ++checked;
  }
}

TEST(ActivationGradientTest, DisconnectedClassHasZeroGradient) {
  Rng rng(19);
  Conv2dLayer conv = testing::RandomConv(rng, 1, 2, 3, 1, 1);
  DenseLayer head = testing::RandomDense(rng, 2, 2 * 4 * 4);
  head.weights.row(1).setZero();
  const Model m(SequentialNet(Shape::Image(1, 4, 4),
                              {conv, ReluLayer{}, FlattenLayer{}, head}));
  const Vector g = ActivationGradient(m, RandomVector(rng, 16), 0, 1);
  EXPECT_TRUE(g.isZero(0.0));
}

TEST(ScoreModeTest, LogitModeSkipsSoftmax) {
  Rng rng(2);
  const Model m = RandomMlp(rng, 3, 4, 2, true);
  const Model logits = m.WithScoreMode(ScoreMode::kLogit);
  const Vector x = RandomVector(rng, 3);
  EXPECT_LT((Softmax(Predict(logits, x).scores) - Predict(m, x).scores).norm(), 1e-15);
}

TEST(ValidationTest, RejectsMalformedStructures) {
  TreeEnsemble ens;
  ens.n_features = 1;
  DecisionTree tree;
  tree.nodes.resize(2);
  tree.nodes[0].feature = 0;
  tree.nodes[0].left = 1;
  tree.nodes[0].right = 0;  // cycle back to root
  tree.nodes[1].value = Vec({1});
  ens.trees.push_back(tree);
  EXPECT_THROW(Model{ens}, Error);

  ens.trees[0].nodes[0].right = 1;  // shared child
  EXPECT_THROW(Model{ens}, Error);

  ens.trees[0].nodes.resize(3);
  ens.trees[0].nodes[0].right = 2;
  ens.trees[0].nodes[0].feature = 3;  // out of range
  ens.trees[0].nodes[2].value = Vec({0});
  EXPECT_THROW(Model{ens}, Error);

  // softmax only as the final layer
  EXPECT_THROW(SequentialNet(Shape::Flat(2),
                             {SoftmaxLayer{},
                              DenseLayer{Matrix::Identity(2, 2), Vector::Zero(2)}}),
               Error);
  // dense after conv without flatten
  Rng rng(1);
  EXPECT_THROW(SequentialNet(Shape::Image(1, 3, 3),
                             {testing::RandomConv(rng, 1, 1, 3, 1, 1),
                              testing::RandomDense(rng, 1, 9)}),
               Error);
}

}  // namespace
}  // namespace attriq
