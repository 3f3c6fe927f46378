// The three native model families and the evaluation/differentiation surface
// every attribution method works against.
//
// All inputs are flat vectors. Image inputs are stored channel-major
// (c, h, w) row-major, the same layout a NumPy C-order array of shape
// (C, H, W) has on disk.

#ifndef ATTRIQ_MODEL_HPP
#define ATTRIQ_MODEL_HPP

#include "attriq/core.hpp"

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace attriq {

struct Shape {
  std::vector<int> dims;  // {n} or {channels, height, width}

  static Shape Flat(int n) { return Shape{{n}}; }
  static Shape Image(int c, int h, int w) { return Shape{{c, h, w}}; }

  bool is_image() const { return dims.size() == 3; }
  int size() const;
  int channels() const { return is_image() ? dims[0] : 1; }
  int height() const { return is_image() ? dims[1] : 1; }
  int width() const { return is_image() ? dims[2] : 1; }
  std::string ToString() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Multiclass logistic regression or plain affine regression.
struct LinearModel {
  Matrix weights;  // n_classes x n_features
  Vector bias;     // n_classes
  bool softmax = false;

  int n_features() const { return static_cast<int>(weights.cols()); }
  int n_classes() const { return static_cast<int>(weights.rows()); }
};

enum class Aggregation { kSum, kMean };

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  Scalar threshold = 0.0;
  int left = -1;  // taken when x[feature] <= threshold
  int right = -1;
  Vector value;  // per-class leaf value; empty for internal nodes

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // root is nodes[0]
};

struct TreeEnsemble {
  std::vector<DecisionTree> trees;
  Aggregation aggregation = Aggregation::kMean;
  int n_features = 0;
  int n_classes = 1;
};

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;
};

struct Conv2dLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int padding = 0;
  Vector weights;  // (out, in, kh, kw) row-major
  Vector bias;     // out

  Scalar kernel(int o, int i, int ky, int kx) const {
    return weights(((o * in_channels + i) * kernel_h + ky) * kernel_w + kx);
  }
};

struct ReluLayer {};
struct MaxPoolLayer {
  int kernel = 2;
  int stride = 2;
};
struct FlattenLayer {};
struct SoftmaxLayer {};

using Layer = std::variant<DenseLayer, Conv2dLayer, ReluLayer, MaxPoolLayer,
                           FlattenLayer, SoftmaxLayer>;

std::string_view LayerKindName(const Layer& layer);

class SequentialNet {
 public:
  // Validates that layer shapes compose; throws SchemaViolation otherwise.
  SequentialNet(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  // output_shape(i) is the shape produced by layers()[i].
  const Shape& output_shape(std::size_t i) const { return shapes_[i + 1]; }
  int n_classes() const { return shapes_.back().size(); }
  bool ends_with_softmax() const;
  std::optional<int> last_conv_layer() const;

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;  // shapes_[0] is the input
};

// Classifiers report probabilities by default; kLogit drops the final
// softmax so metrics and gradients act on pre-normalization scores.
enum class ScoreMode { kProbability, kLogit };

class Model {
 public:
  using Family = std::variant<LinearModel, TreeEnsemble, SequentialNet>;

  // Each constructor validates its family's invariants.
  explicit Model(LinearModel m);
  explicit Model(TreeEnsemble m);
  explicit Model(SequentialNet m);

  const Family& family() const { return family_; }
  std::string_view family_name() const;
  ScoreMode score_mode() const { return score_mode_; }
  Model WithScoreMode(ScoreMode mode) const;

  Shape input_shape() const;
  int n_features() const { return input_shape().size(); }
  int n_classes() const;
  bool differentiable() const {
    return !std::holds_alternative<TreeEnsemble>(family_);
  }

  const LinearModel* linear() const { return std::get_if<LinearModel>(&family_); }
  const TreeEnsemble* trees() const { return std::get_if<TreeEnsemble>(&family_); }
  const SequentialNet* net() const { return std::get_if<SequentialNet>(&family_); }

 private:
  Family family_;
  ScoreMode score_mode_ = ScoreMode::kProbability;
};

struct ModelOutput {
  Vector scores;
  int predicted_class = 0;  // argmax, lowest index on ties
};

ModelOutput Predict(const Model& model, ConstVectorRef x);

Scalar TargetScore(const Model& model, ConstVectorRef x, int class_idx);

// Reverse-mode gradient of TargetScore with respect to x.
Vector InputGradient(const Model& model, ConstVectorRef x, int class_idx);

struct ActivationResult {
  ModelOutput output;
  Vector activation;  // flat, shape = net.output_shape(layer_idx)
  Shape activation_shape;
};

// layer_idx must address a Conv2dLayer.
ActivationResult ForwardWithActivations(const Model& model, ConstVectorRef x,
                                        int layer_idx);

// Gradient of TargetScore with respect to the conv layer's output.
Vector ActivationGradient(const Model& model, ConstVectorRef x, int layer_idx,
                          int class_idx);

// Evaluates the layers after `layer_idx` on a given activation of that layer.
// Used to replay the tail of a network from a modified activation.
Vector ForwardFromLayer(const Model& model, ConstVectorRef activation,
                        int layer_idx);

// Every intermediate value of a sequential net: element 0 is x, element i+1
// the output of layer i (layers skipped under ScoreMode::kLogit are omitted).
std::vector<Vector> LayerOutputs(const Model& model, ConstVectorRef x);

// Single tree evaluation; exposed for cross-checks.
Vector EvaluateTree(const DecisionTree& tree, ConstVectorRef x);

// Throws SchemaViolation naming the first problem.
void ValidateTree(const DecisionTree& tree, int n_features, int n_classes,
                  const std::string& path);

Vector Softmax(ConstVectorRef logits);

}  // namespace attriq

#endif  // ATTRIQ_MODEL_HPP
