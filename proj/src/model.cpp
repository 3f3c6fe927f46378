#include "attriq/model.hpp"

#include <sstream>

namespace attriq {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void Schema(const std::string& msg) {
  throw Error(ErrorKind::kSchemaViolation, msg);
}

bool Finite(const Matrix& m) { return m.array().isFinite().all(); }

int ConvOut(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// Shape produced by `layer` on `in`; validates composition.
Shape OutputShape(const Layer& layer, const Shape& in, std::size_t idx,
                  std::size_t n_layers) {
  const std::string at = "layers[" + std::to_string(idx) + "]";
  return std::visit(
      Overloaded{
          [&](const DenseLayer& d) {
            if (in.is_image()) Schema(at + ": dense layer needs a flat input");
            if (d.weights.cols() != in.size())
              Schema(at + ": dense weights have " +
                     std::to_string(d.weights.cols()) + " columns, input has " +
                     std::to_string(in.size()));
            if (d.bias.size() != d.weights.rows())
              Schema(at + ": dense bias length mismatch");
            if (!Finite(d.weights) || !Finite(d.bias))
              Schema(at + ": non-finite parameter");
            return Shape::Flat(static_cast<int>(d.weights.rows()));
          },
          [&](const Conv2dLayer& c) {
            if (!in.is_image()) Schema(at + ": conv2d needs an image input");
            if (c.in_channels != in.channels())
              Schema(at + ": conv2d in_channels mismatch");
            if (c.out_channels <= 0 || c.kernel_h <= 0 || c.kernel_w <= 0 ||
                c.stride <= 0 || c.padding < 0)
              Schema(at + ": conv2d geometry must be positive");
            if (c.weights.size() != static_cast<Eigen::Index>(c.out_channels) *
                                        c.in_channels * c.kernel_h * c.kernel_w)
              Schema(at + ": conv2d kernel size mismatch");
            if (c.bias.size() != c.out_channels)
              Schema(at + ": conv2d bias length mismatch");
            if (!Finite(c.weights) || !Finite(c.bias))
              Schema(at + ": non-finite parameter");
            const int h = ConvOut(in.height(), c.kernel_h, c.stride, c.padding);
            const int w = ConvOut(in.width(), c.kernel_w, c.stride, c.padding);
            if (h <= 0 || w <= 0) Schema(at + ": conv2d output is empty");
            return Shape::Image(c.out_channels, h, w);
          },
          [&](const ReluLayer&) { return in; },
          [&](const MaxPoolLayer& p) {
            if (!in.is_image()) Schema(at + ": maxpool needs an image input");
            if (p.kernel <= 0 || p.stride <= 0)
              Schema(at + ": maxpool geometry must be positive");
            const int h = ConvOut(in.height(), p.kernel, p.stride, 0);
            const int w = ConvOut(in.width(), p.kernel, p.stride, 0);
            if (h <= 0 || w <= 0) Schema(at + ": maxpool output is empty");
            return Shape::Image(in.channels(), h, w);
          },
          [&](const FlattenLayer&) { return Shape::Flat(in.size()); },
          [&](const SoftmaxLayer&) {
            if (idx + 1 != n_layers) Schema(at + ": softmax must be the last layer");
            if (in.is_image()) Schema(at + ": softmax needs a flat input");
            return in;
          },
      },
      layer);
}

Vector ConvForward(const Conv2dLayer& c, const Shape& in_s, const Shape& out_s,
                   const Vector& in) {
  const int H = in_s.height(), W = in_s.width();
  const int OH = out_s.height(), OW = out_s.width();
  Vector out(out_s.size());
  for (int o = 0; o < c.out_channels; ++o) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        Scalar acc = c.bias(o);
        for (int i = 0; i < c.in_channels; ++i) {
          for (int ky = 0; ky < c.kernel_h; ++ky) {
            const int y = oy * c.stride - c.padding + ky;
            if (y < 0 || y >= H) continue;
            for (int kx = 0; kx < c.kernel_w; ++kx) {
              const int x = ox * c.stride - c.padding + kx;
              if (x < 0 || x >= W) continue;
              acc += c.kernel(o, i, ky, kx) * in((i * H + y) * W + x);
            }
          }
        }
        out((o * OH + oy) * OW + ox) = acc;
      }
    }
  }
  return out;
}

Vector ConvBackward(const Conv2dLayer& c, const Shape& in_s, const Shape& out_s,
                    const Vector& grad_out) {
  const int H = in_s.height(), W = in_s.width();
  const int OH = out_s.height(), OW = out_s.width();
  Vector grad_in = Vector::Zero(in_s.size());
  for (int o = 0; o < c.out_channels; ++o) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const Scalar g = grad_out((o * OH + oy) * OW + ox);
        if (g == 0.0) continue;
        for (int i = 0; i < c.in_channels; ++i) {
          for (int ky = 0; ky < c.kernel_h; ++ky) {
            const int y = oy * c.stride - c.padding + ky;
            if (y < 0 || y >= H) continue;
            for (int kx = 0; kx < c.kernel_w; ++kx) {
              const int x = ox * c.stride - c.padding + kx;
              if (x < 0 || x >= W) continue;
              grad_in((i * H + y) * W + x) += c.kernel(o, i, ky, kx) * g;
            }
          }
        }
      }
    }
  }
  return grad_in;
}

// Flat index of the first (row-major) maximum inside one pooling window.
int PoolArgmax(const MaxPoolLayer& p, const Shape& in_s, const Vector& in,
               int ch, int oy, int ox) {
  const int H = in_s.height(), W = in_s.width();
  int best = -1;
  for (int ky = 0; ky < p.kernel; ++ky) {
    for (int kx = 0; kx < p.kernel; ++kx) {
      const int idx = (ch * H + oy * p.stride + ky) * W + ox * p.stride + kx;
      if (best < 0 || in(idx) > in(best)) best = idx;
    }
  }
  return best;
}

Vector LayerForward(const Layer& layer, const Shape& in_s, const Shape& out_s,
                    const Vector& in) {
  return std::visit(
      Overloaded{
          [&](const DenseLayer& d) -> Vector { return d.weights * in + d.bias; },
          [&](const Conv2dLayer& c) -> Vector {
            return ConvForward(c, in_s, out_s, in);
          },
          [&](const ReluLayer&) -> Vector { return in.cwiseMax(0.0); },
          [&](const MaxPoolLayer& p) -> Vector {
            Vector out(out_s.size());
            const int OH = out_s.height(), OW = out_s.width();
            for (int ch = 0; ch < out_s.channels(); ++ch)
              for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox)
                  out((ch * OH + oy) * OW + ox) =
                      in(PoolArgmax(p, in_s, in, ch, oy, ox));
            return out;
          },
          [&](const FlattenLayer&) -> Vector { return in; },
          [&](const SoftmaxLayer&) -> Vector { return Softmax(in); },
      },
      layer);
}

Vector LayerBackward(const Layer& layer, const Shape& in_s, const Shape& out_s,
                     const Vector& in, const Vector& out,
                     const Vector& grad_out) {
  return std::visit(
      Overloaded{
          [&](const DenseLayer& d) -> Vector {
            return d.weights.transpose() * grad_out;
          },
          [&](const Conv2dLayer& c) -> Vector {
            return ConvBackward(c, in_s, out_s, grad_out);
          },
          [&](const ReluLayer&) -> Vector {
            // subgradient 0 at exactly 0
            return (in.array() > 0.0).select(grad_out, 0.0);
          },
          [&](const MaxPoolLayer& p) -> Vector {
            Vector grad_in = Vector::Zero(in_s.size());
            const int OH = out_s.height(), OW = out_s.width();
            for (int ch = 0; ch < out_s.channels(); ++ch)
              for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox)
                  grad_in(PoolArgmax(p, in_s, in, ch, oy, ox)) +=
                      grad_out((ch * OH + oy) * OW + ox);
            return grad_in;
          },
          [&](const FlattenLayer&) -> Vector { return grad_out; },
          [&](const SoftmaxLayer&) -> Vector {
            return out.cwiseProduct(grad_out - Vector::Constant(
                                                   out.size(), out.dot(grad_out)));
          },
      },
      layer);
}

// Number of layers evaluated under the model's score mode.
int ActiveLayers(const SequentialNet& net, ScoreMode mode) {
  const int n = static_cast<int>(net.layers().size());
  return (mode == ScoreMode::kLogit && net.ends_with_softmax()) ? n - 1 : n;
}

const Shape& ShapeBefore(const SequentialNet& net, int layer) {
  return layer == 0 ? net.input_shape() : net.output_shape(layer - 1);
}

// acts[0] = x, acts[i + 1] = output of layer i.
std::vector<Vector> ForwardAll(const SequentialNet& net, ScoreMode mode,
                               const Vector& x) {
  const int n = ActiveLayers(net, mode);
  std::vector<Vector> acts;
  acts.reserve(n + 1);
  acts.push_back(x);
  for (int i = 0; i < n; ++i) {
    acts.push_back(LayerForward(net.layers()[i], ShapeBefore(net, i),
                                net.output_shape(i), acts.back()));
  }
  return acts;
}

// Backpropagates a unit seed on `class_idx` down to the output of layer
// `stop` (stop = -1 means the network input).
Vector Backward(const SequentialNet& net, const std::vector<Vector>& acts,
                int class_idx, int stop) {
  const int n = static_cast<int>(acts.size()) - 1;
  Vector grad = Vector::Zero(acts.back().size());
  grad(class_idx) = 1.0;
  for (int i = n - 1; i > stop; --i) {
    grad = LayerBackward(net.layers()[i], ShapeBefore(net, i),
                         net.output_shape(i), acts[i], acts[i + 1], grad);
  }
  return grad;
}

ModelOutput MakeOutput(Vector scores) {
  ModelOutput out;
  out.predicted_class = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i) {
    if (scores(i) > scores(out.predicted_class)) {
      out.predicted_class = static_cast<int>(i);
    }
  }
  out.scores = std::move(scores);
  return out;
}

void CheckInput(const Model& model, ConstVectorRef x) {
  if (x.size() != model.n_features()) {
    throw Error(ErrorKind::kShapeMismatch,
                "input has " + std::to_string(x.size()) +
                    " values, model expects " + model.input_shape().ToString());
  }
  if (!AllFinite(x)) {
    throw Error(ErrorKind::kNonFiniteInput, "input contains NaN or Inf");
  }
}

void CheckClass(const Model& model, int class_idx) {
  if (class_idx < 0 || class_idx >= model.n_classes()) {
    throw Error(ErrorKind::kClassOutOfRange,
                "class " + std::to_string(class_idx) + " not in [0, " +
                    std::to_string(model.n_classes()) + ")");
  }
}

const SequentialNet& ConvNet(const Model& model, int layer_idx) {
  const SequentialNet* net = model.net();
  if (net == nullptr) {
    throw Error(ErrorKind::kLayerNotConvolutional,
                "activations are only available for sequential nets");
  }
  if (layer_idx < 0 || layer_idx >= static_cast<int>(net->layers().size()) ||
      !std::holds_alternative<Conv2dLayer>(net->layers()[layer_idx])) {
    throw Error(ErrorKind::kLayerNotConvolutional,
                "layer " + std::to_string(layer_idx) + " is not conv2d");
  }
  return *net;
}

}  // namespace

int Shape::size() const {
  int n = 1;
  for (int d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

std::string Shape::ToString() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << ')';
  return os.str();
}

std::string_view LayerKindName(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const DenseLayer&) { return "dense"; },
                        [](const Conv2dLayer&) { return "conv2d"; },
                        [](const ReluLayer&) { return "relu"; },
                        [](const MaxPoolLayer&) { return "maxpool"; },
                        [](const FlattenLayer&) { return "flatten"; },
                        [](const SoftmaxLayer&) { return "softmax"; },
                    },
                    layer);
}

Vector Softmax(ConstVectorRef logits) {
  const Scalar m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

SequentialNet::SequentialNet(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (input_shape_.dims.size() != 1 && input_shape_.dims.size() != 3) {
    Schema("input_shape must have 1 or 3 dims");
  }
  for (int d : input_shape_.dims) {
    if (d <= 0) Schema("input_shape dims must be positive");
  }
  if (layers_.empty()) Schema("layers must not be empty");
  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shapes_.push_back(OutputShape(layers_[i], shapes_.back(), i, layers_.size()));
  }
  if (shapes_.back().is_image()) Schema("network output must be flat");
}

bool SequentialNet::ends_with_softmax() const {
  return std::holds_alternative<SoftmaxLayer>(layers_.back());
}

std::optional<int> SequentialNet::last_conv_layer() const {
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    if (std::holds_alternative<Conv2dLayer>(layers_[i])) return i;
  }
  return std::nullopt;
}

Model::Model(LinearModel m) : family_(std::move(m)) {
  const auto& lin = std::get<LinearModel>(family_);
  if (lin.weights.rows() == 0 || lin.weights.cols() == 0)
    Schema("linear: weights must be non-empty");
  if (lin.bias.size() != lin.weights.rows())
    Schema("linear: bias length must equal class count");
  if (!Finite(lin.weights) || !Finite(lin.bias))
    Schema("linear: non-finite parameter");
}

Model::Model(TreeEnsemble m) : family_(std::move(m)) {
  const auto& ens = std::get<TreeEnsemble>(family_);
  if (ens.trees.empty()) Schema("trees: ensemble must contain a tree");
  if (ens.n_features <= 0 || ens.n_classes <= 0)
    Schema("trees: n_features and n_classes must be positive");
  for (std::size_t t = 0; t < ens.trees.size(); ++t) {
    ValidateTree(ens.trees[t], ens.n_features, ens.n_classes,
                 "trees[" + std::to_string(t) + "]");
  }
}

Model::Model(SequentialNet m) : family_(std::move(m)) {}

std::string_view Model::family_name() const {
  return std::visit(Overloaded{
                        [](const LinearModel&) { return "linear"; },
                        [](const TreeEnsemble&) { return "tree-ensemble"; },
                        [](const SequentialNet&) { return "sequential-net"; },
                    },
                    family_);
}

Model Model::WithScoreMode(ScoreMode mode) const {
  Model copy = *this;
  copy.score_mode_ = mode;
  return copy;
}

Shape Model::input_shape() const {
  return std::visit(
      Overloaded{
          [](const LinearModel& m) { return Shape::Flat(m.n_features()); },
          [](const TreeEnsemble& m) { return Shape::Flat(m.n_features); },
          [](const SequentialNet& m) { return m.input_shape(); },
      },
      family_);
}

int Model::n_classes() const {
  return std::visit(Overloaded{
                        [](const LinearModel& m) { return m.n_classes(); },
                        [](const TreeEnsemble& m) { return m.n_classes; },
                        [](const SequentialNet& m) { return m.n_classes(); },
                    },
                    family_);
}

void ValidateTree(const DecisionTree& tree, int n_features, int n_classes,
                  const std::string& path) {
  const int n = static_cast<int>(tree.nodes.size());
  if (n == 0) Schema(path + ".nodes: tree has no nodes");
  // Every node must be reached exactly once from the root; this rejects
  // cycles, shared children and unreachable nodes.
  std::vector<int> seen(n, 0);
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    const std::string at = path + ".nodes[" + std::to_string(i) + "]";
    if (seen[i]++) Schema(at + ": node reached twice (cycle or shared child)");
    const TreeNode& node = tree.nodes[i];
    if (node.is_leaf()) {
      if (node.value.size() != n_classes)
        Schema(at + ".value: expected " + std::to_string(n_classes) + " entries");
      if (!AllFinite(node.value)) Schema(at + ".value: non-finite");
      continue;
    }
    if (node.feature >= n_features)
      Schema(at + ".feature: index " + std::to_string(node.feature) +
             " >= n_features " + std::to_string(n_features));
    if (!std::isfinite(node.threshold)) Schema(at + ".threshold: non-finite");
    for (int child : {node.left, node.right}) {
      if (child < 0 || child >= n) Schema(at + ": child index out of range");
      stack.push_back(child);
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!seen[i]) Schema(path + ".nodes[" + std::to_string(i) + "]: unreachable");
  }
}

Vector EvaluateTree(const DecisionTree& tree, ConstVectorRef x) {
  int i = 0;
  while (!tree.nodes[i].is_leaf()) {
    const TreeNode& node = tree.nodes[i];
    i = x(node.feature) <= node.threshold ? node.left : node.right;
  }
  return tree.nodes[i].value;
}

ModelOutput Predict(const Model& model, ConstVectorRef x) {
  CheckInput(model, x);
  const Vector xv = x;
  return std::visit(
      Overloaded{
          [&](const LinearModel& m) {
            Vector z = m.weights * xv + m.bias;
            if (m.softmax && model.score_mode() == ScoreMode::kProbability) {
              z = Softmax(z);
            }
            return MakeOutput(std::move(z));
          },
          [&](const TreeEnsemble& m) {
            Vector acc = Vector::Zero(m.n_classes);
            for (const auto& tree : m.trees) acc += EvaluateTree(tree, xv);
            if (m.aggregation == Aggregation::kMean) {
              acc /= static_cast<Scalar>(m.trees.size());
            }
            return MakeOutput(std::move(acc));
          },
          [&](const SequentialNet& m) {
            auto acts = ForwardAll(m, model.score_mode(), xv);
            return MakeOutput(std::move(acts.back()));
          },
      },
      model.family());
}

Scalar TargetScore(const Model& model, ConstVectorRef x, int class_idx) {
  CheckClass(model, class_idx);
  return Predict(model, x).scores(class_idx);
}

Vector InputGradient(const Model& model, ConstVectorRef x, int class_idx) {
  CheckInput(model, x);
  CheckClass(model, class_idx);
  const Vector xv = x;
  return std::visit(
      Overloaded{
          [&](const LinearModel& m) -> Vector {
            if (!m.softmax || model.score_mode() == ScoreMode::kLogit) {
              return m.weights.row(class_idx).transpose();
            }
            const Vector p = Softmax(m.weights * xv + m.bias);
            Vector seed = -p(class_idx) * p;
            seed(class_idx) += p(class_idx);
            return m.weights.transpose() * seed;
          },
          [&](const TreeEnsemble&) -> Vector {
            throw Error(ErrorKind::kNotDifferentiable,
                        "tree ensembles have no input gradient");
          },
          [&](const SequentialNet& m) -> Vector {
            const auto acts = ForwardAll(m, model.score_mode(), xv);
            return Backward(m, acts, class_idx, -1);
          },
      },
      model.family());
}

ActivationResult ForwardWithActivations(const Model& model, ConstVectorRef x,
                                        int layer_idx) {
  const SequentialNet& net = ConvNet(model, layer_idx);
  CheckInput(model, x);
  auto acts = ForwardAll(net, model.score_mode(), x);
  ActivationResult result;
  result.activation = acts[layer_idx + 1];
  result.activation_shape = net.output_shape(layer_idx);
  result.output = MakeOutput(std::move(acts.back()));
  return result;
}

Vector ActivationGradient(const Model& model, ConstVectorRef x, int layer_idx,
                          int class_idx) {
  const SequentialNet& net = ConvNet(model, layer_idx);
  CheckInput(model, x);
  CheckClass(model, class_idx);
  const auto acts = ForwardAll(net, model.score_mode(), x);
  return Backward(net, acts, class_idx, layer_idx);
}

std::vector<Vector> LayerOutputs(const Model& model, ConstVectorRef x) {
  const SequentialNet* net = model.net();
  if (net == nullptr) {
    throw Error(ErrorKind::kInvalidArgument, "layer outputs need a sequential net");
  }
  CheckInput(model, x);
  return ForwardAll(*net, model.score_mode(), x);
}

Vector ForwardFromLayer(const Model& model, ConstVectorRef activation,
                        int layer_idx) {
  const SequentialNet* net = model.net();
  if (net == nullptr || layer_idx < -1 ||
      layer_idx >= static_cast<int>(net->layers().size())) {
    throw Error(ErrorKind::kInvalidArgument, "invalid layer for tail replay");
  }
  const Shape& shape = layer_idx < 0 ? net->input_shape()
                                     : net->output_shape(layer_idx);
  if (activation.size() != shape.size()) {
    throw Error(ErrorKind::kShapeMismatch, "activation size mismatch");
  }
  Vector cur = activation;
  const int n = ActiveLayers(*net, model.score_mode());
  for (int i = layer_idx + 1; i < n; ++i) {
    cur = LayerForward(net->layers()[i], ShapeBefore(*net, i),
                       net->output_shape(i), cur);
  }
  return cur;
}

}  // namespace attriq
