#include "attriq/data_io.hpp"

#include <json.hpp>

#include <set>

namespace attriq {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void Violation(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::kSchemaViolation, (path.empty() ? "<root>" : path) + ": " + msg);
}

std::string Join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string Index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void CheckKeys(const json& obj, const std::string& path,
               const std::set<std::string>& allowed) {
  if (!obj.is_object()) Violation(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) Violation(Join(path, key), "unknown field");
  }
}

const json& Require(const json& obj, const std::string& path, const std::string& key) {
  const auto it = obj.find(key);
  if (it == obj.end()) Violation(Join(path, key), "missing required field");
  return *it;
}

int GetInt(const json& v, const std::string& path) {
  if (!v.is_number_integer()) Violation(path, "expected an integer");
  const auto i = v.get<std::int64_t>();
  if (i < -(1LL << 30) || i > (1LL << 30)) Violation(path, "integer out of range");
  return static_cast<int>(i);
}

Scalar GetNumber(const json& v, const std::string& path) {
  if (!v.is_number()) Violation(path, "expected a number");
  return v.get<Scalar>();
}

std::string GetString(const json& v, const std::string& path) {
  if (!v.is_string()) Violation(path, "expected a string");
  return v.get<std::string>();
}

Vector GetVector(const json& v, const std::string& path) {
  if (!v.is_array()) Violation(path, "expected an array of numbers");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(i) = GetNumber(v[i], Index(path, i));
  return out;
}

Matrix GetMatrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) Violation(path, "expected a non-empty array of rows");
  const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
  Matrix out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < v.size(); ++r) {
    const Vector row = GetVector(v[r], Index(path, r));
    if (static_cast<std::size_t>(row.size()) != cols) {
      Violation(Index(path, r), "row has " + std::to_string(row.size()) +
                                    " entries, expected " + std::to_string(cols));
    }
    out.row(r) = row.transpose();
  }
  return out;
}

LinearModel ParseLinear(const json& doc) {
  CheckKeys(doc, "", {"schema_version", "family", "weights", "bias", "softmax"});
  LinearModel m;
  m.weights = GetMatrix(Require(doc, "", "weights"), "weights");
  m.bias = GetVector(Require(doc, "", "bias"), "bias");
  if (doc.contains("softmax")) {
    if (!doc["softmax"].is_boolean()) Violation("softmax", "expected true or false");
    m.softmax = doc["softmax"].get<bool>();
  }
  return m;
}

TreeEnsemble ParseTrees(const json& doc) {
  CheckKeys(doc, "", {"schema_version", "family", "n_features", "n_classes",
                      "aggregation", "trees"});
  TreeEnsemble ens;
  ens.n_features = GetInt(Require(doc, "", "n_features"), "n_features");
  ens.n_classes = GetInt(Require(doc, "", "n_classes"), "n_classes");
  if (doc.contains("aggregation")) {
    const std::string agg = GetString(doc["aggregation"], "aggregation");
    if (agg == "mean") {
      ens.aggregation = Aggregation::kMean;
    } else if (agg == "sum") {
      ens.aggregation = Aggregation::kSum;
    } else {
      Violation("aggregation", "expected \"mean\" or \"sum\", got \"" + agg + "\"");
    }
  }
  const json& trees = Require(doc, "", "trees");
  if (!trees.is_array()) Violation("trees", "expected an array");
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const std::string tpath = Index("trees", t);
    CheckKeys(trees[t], tpath, {"nodes"});
    const json& nodes = Require(trees[t], tpath, "nodes");
    const std::string npath = Join(tpath, "nodes");
    if (!nodes.is_array()) Violation(npath, "expected an array");
    DecisionTree tree;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const std::string p = Index(npath, i);
      const json& node = nodes[i];
      TreeNode n;
      if (node.is_object() && node.contains("value")) {
        CheckKeys(node, p, {"value"});
        n.value = GetVector(node["value"], Join(p, "value"));
      } else {
        CheckKeys(node, p, {"feature", "threshold", "left", "right"});
        n.feature = GetInt(Require(node, p, "feature"), Join(p, "feature"));
        if (n.feature < 0) Violation(Join(p, "feature"), "must be >= 0");
        n.threshold = GetNumber(Require(node, p, "threshold"), Join(p, "threshold"));
        n.left = GetInt(Require(node, p, "left"), Join(p, "left"));
        n.right = GetInt(Require(node, p, "right"), Join(p, "right"));
      }
      tree.nodes.push_back(std::move(n));
    }
    ens.trees.push_back(std::move(tree));
  }
  return ens;
}

Layer ParseLayer(const json& v, const std::string& p) {
  if (!v.is_object()) Violation(p, "expected an object");
  const std::string type = GetString(Require(v, p, "type"), Join(p, "type"));
  if (type == "dense") {
    CheckKeys(v, p, {"type", "weights", "bias"});
    return DenseLayer{GetMatrix(Require(v, p, "weights"), Join(p, "weights")),
                      GetVector(Require(v, p, "bias"), Join(p, "bias"))};
  }
  if (type == "conv2d") {
    CheckKeys(v, p, {"type", "in_channels", "out_channels", "kernel_h", "kernel_w",
                     "stride", "padding", "weights", "bias"});
    Conv2dLayer c;
    c.in_channels = GetInt(Require(v, p, "in_channels"), Join(p, "in_channels"));
    c.out_channels = GetInt(Require(v, p, "out_channels"), Join(p, "out_channels"));
    c.kernel_h = GetInt(Require(v, p, "kernel_h"), Join(p, "kernel_h"));
    c.kernel_w = GetInt(Require(v, p, "kernel_w"), Join(p, "kernel_w"));
    if (v.contains("stride")) c.stride = GetInt(v["stride"], Join(p, "stride"));
    if (v.contains("padding")) c.padding = GetInt(v["padding"], Join(p, "padding"));
    c.weights = GetVector(Require(v, p, "weights"), Join(p, "weights"));
    c.bias = GetVector(Require(v, p, "bias"), Join(p, "bias"));
    return c;
  }
  if (type == "maxpool") {
    CheckKeys(v, p, {"type", "kernel", "stride"});
    MaxPoolLayer m;
    if (v.contains("kernel")) m.kernel = GetInt(v["kernel"], Join(p, "kernel"));
    if (v.contains("stride")) m.stride = GetInt(v["stride"], Join(p, "stride"));
    return m;
  }
  if (type != "relu" && type != "flatten" && type != "softmax") {
    Violation(Join(p, "type"),
              "unknown layer type \"" + type +
                  "\" (expected dense, conv2d, relu, maxpool, flatten or softmax)");
  }
  CheckKeys(v, p, {"type"});
  if (type == "relu") return ReluLayer{};
  if (type == "flatten") return FlattenLayer{};
  return SoftmaxLayer{};
}

SequentialNet ParseNet(const json& doc) {
  CheckKeys(doc, "", {"schema_version", "family", "input_shape", "layers"});
  const json& shape = Require(doc, "", "input_shape");
  if (!shape.is_array() || (shape.size() != 1 && shape.size() != 3)) {
    Violation("input_shape", "expected [n] or [channels, height, width]");
  }
  Shape in;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const int d = GetInt(shape[i], Index("input_shape", i));
    if (d <= 0) Violation(Index("input_shape", i), "must be positive");
    in.dims.push_back(d);
  }
  const json& layers = Require(doc, "", "layers");
  if (!layers.is_array() || layers.empty()) Violation("layers", "expected a non-empty array");
  std::vector<Layer> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back(ParseLayer(layers[i], Index("layers", i)));
  }
  return SequentialNet(std::move(in), std::move(out));
}

ordered_json VectorJson(const Vector& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

ordered_json MatrixJson(const Matrix& m) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(VectorJson(m.row(r).transpose()));
  return a;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ordered_json LayerJson(const Layer& layer) {
  ordered_json j;
  j["type"] = std::string(LayerKindName(layer));
  std::visit(Overloaded{
                 [&](const DenseLayer& d) {
                   j["weights"] = MatrixJson(d.weights);
                   j["bias"] = VectorJson(d.bias);
                 },
                 [&](const Conv2dLayer& c) {
                   j["in_channels"] = c.in_channels;
                   j["out_channels"] = c.out_channels;
                   j["kernel_h"] = c.kernel_h;
                   j["kernel_w"] = c.kernel_w;
                   j["stride"] = c.stride;
                   j["padding"] = c.padding;
                   j["weights"] = VectorJson(c.weights);
                   j["bias"] = VectorJson(c.bias);
                 },
                 [&](const MaxPoolLayer& m) {
                   j["kernel"] = m.kernel;
                   j["stride"] = m.stride;
                 },
                 [](const auto&) {},
             },
             layer);
  return j;
}

}  // namespace

Model ParseModelDocument(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParseError, std::string("model document: ") + e.what());
  }
  if (!doc.is_object()) Violation("", "model document must be a JSON object");
  const int version = GetInt(Require(doc, "", "schema_version"), "schema_version");
  if (version != kModelSchemaVersion) {
    Violation("schema_version", "unsupported version " + std::to_string(version) +
                                    " (expected " + std::to_string(kModelSchemaVersion) + ")");
  }
  const std::string family = GetString(Require(doc, "", "family"), "family");
  if (family == "linear") return Model(ParseLinear(doc));
  if (family == "tree-ensemble") return Model(ParseTrees(doc));
  if (family == "sequential-net") return Model(ParseNet(doc));
  Violation("family", "unknown family \"" + family +
                          "\" (expected linear, tree-ensemble or sequential-net)");
}

std::string ModelDocument(const Model& model) {
  ordered_json doc;
  doc["schema_version"] = kModelSchemaVersion;
  doc["family"] = std::string(model.family_name());
  if (const LinearModel* m = model.linear()) {
    doc["weights"] = MatrixJson(m->weights);
    doc["bias"] = VectorJson(m->bias);
    doc["softmax"] = m->softmax;
  } else if (const TreeEnsemble* e = model.trees()) {
    doc["n_features"] = e->n_features;
    doc["n_classes"] = e->n_classes;
    doc["aggregation"] = e->aggregation == Aggregation::kMean ? "mean" : "sum";
    ordered_json trees = ordered_json::array();
    for (const DecisionTree& t : e->trees) {
      ordered_json nodes = ordered_json::array();
      for (const TreeNode& n : t.nodes) {
        ordered_json node;
        if (n.is_leaf()) {
          node["value"] = VectorJson(n.value);
        } else {
          node["feature"] = n.feature;
          node["threshold"] = n.threshold;
          node["left"] = n.left;
          node["right"] = n.right;
        }
        nodes.push_back(std::move(node));
      }
      trees.push_back(ordered_json{{"nodes", std::move(nodes)}});
    }
    doc["trees"] = std::move(trees);
  } else {
    const SequentialNet& net = *model.net();
    doc["input_shape"] = net.input_shape().dims;
    ordered_json layers = ordered_json::array();
    for (const Layer& l : net.layers()) layers.push_back(LayerJson(l));
    doc["layers"] = std::move(layers);
  }
  return doc.dump(2) + "\n";
}

Model LoadModel(const std::string& path) {
  const std::string text = ReadFile(path);
  try {
    return ParseModelDocument(text);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.detail());
  }
}

void SaveModel(const Model& model, const std::string& path) {
  WriteFile(path, ModelDocument(model));
}

}  // namespace attriq
