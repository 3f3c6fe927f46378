"""Regenerates the files under fixtures/. Output is deterministic."""

import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
rng = np.random.default_rng(7)


def write_json(name, obj):
    (OUT / name).write_text(json.dumps(obj, indent=2) + "\n")


def rounded(a, digits=4):
    return [round(float(v), digits) for v in np.ravel(a)]


# Iris-like table: 3 classes, 10 rows each, 4 measurements.
means = np.array([[5.0, 3.4, 1.5, 0.25], [5.9, 2.8, 4.3, 1.3], [6.6, 3.0, 5.5, 2.0]])
spread = np.array([0.35, 0.35, 0.3, 0.15])
lines = ["sepal_length,sepal_width,petal_length,petal_width,species"]
rows = []
for cls in range(3):
    for _ in range(10):
        x = np.round(means[cls] + spread * rng.standard_normal(4), 1)
        x = np.maximum(x, 0.1)
        rows.append(x)
        lines.append(",".join(f"{v:.1f}" for v in x) + f",{cls}")
(OUT / "iris_like.csv").write_text("\n".join(lines) + "\n")
X = np.array(rows)
col_mean = X.mean(axis=0)
assert not np.any(np.isclose(X, col_mean, atol=1e-9)), "a cell equals its column mean"

write_json("iris_linear.json", {
    "schema_version": 1,
    "family": "linear",
    "weights": [[0.42, 1.38, -2.21, -0.96],
                [0.41, -1.46, 0.53, -1.21],
                [-0.83, 0.08, 1.68, 2.17]],
    "bias": [0.26, 1.09, -1.35],
    "softmax": True,
})

write_json("iris_forest.json", {
    "schema_version": 1,
    "family": "tree-ensemble",
    "n_features": 4,
    "n_classes": 3,
    "aggregation": "mean",
    "trees": [
        {"nodes": [
            {"feature": 2, "threshold": 2.45, "left": 1, "right": 2},
            {"value": [1.0, 0.0, 0.0]},
            {"feature": 3, "threshold": 1.75, "left": 3, "right": 4},
            {"value": [0.0, 0.9, 0.1]},
            {"value": [0.0, 0.05, 0.95]},
        ]},
        {"nodes": [
            {"feature": 3, "threshold": 0.8, "left": 1, "right": 2},
            {"value": [1.0, 0.0, 0.0]},
            {"feature": 2, "threshold": 4.95, "left": 3, "right": 4},
            {"value": [0.0, 0.85, 0.15]},
            {"value": [0.0, 0.1, 0.9]},
        ]},
        {"nodes": [
            {"feature": 0, "threshold": 5.45, "left": 1, "right": 2},
            {"value": [0.8, 0.2, 0.0]},
            {"feature": 1, "threshold": 3.05, "left": 3, "right": 4},
            {"value": [0.05, 0.5, 0.45]},
            {"value": [0.4, 0.2, 0.4]},
        ]},
    ],
})

w1 = rng.normal(0, 0.6, (6, 4))
b1 = rng.normal(0, 0.2, 6)
w2 = rng.normal(0, 0.6, (3, 6))
b2 = rng.normal(0, 0.2, 3)
write_json("iris_mlp.json", {
    "schema_version": 1,
    "family": "sequential-net",
    "input_shape": [4],
    "layers": [
        {"type": "dense", "weights": [rounded(r) for r in w1], "bias": rounded(b1)},
        {"type": "relu"},
        {"type": "dense", "weights": [rounded(r) for r in w2], "bias": rounded(b2)},
        {"type": "softmax"},
    ],
})

# 8x8 single-channel "digits": a bright bar whose orientation sets the class.
images = np.zeros((6, 1, 8, 8))
for i in range(6):
    cls = i % 3
    img = 0.1 * rng.random((8, 8))
    pos = 2 + i // 3 * 3
    if cls == 0:
        img[pos, 1:7] += 0.9
    elif cls == 1:
        img[1:7, pos] += 0.9
    else:
        np.fill_diagonal(img, img.diagonal() + 0.9)
    images[i, 0] = img
np.save(OUT / "bars_8x8.npy", images.astype("<f8"))

conv_w = rng.normal(0, 0.5, (2, 1, 3, 3))
conv_b = rng.normal(0, 0.1, 2)
dense_w = rng.normal(0, 0.4, (3, 2 * 4 * 4))
dense_b = rng.normal(0, 0.1, 3)
write_json("bars_cnn.json", {
    "schema_version": 1,
    "family": "sequential-net",
    "input_shape": [1, 8, 8],
    "layers": [
        {"type": "conv2d", "in_channels": 1, "out_channels": 2, "kernel_h": 3,
         "kernel_w": 3, "stride": 1, "padding": 1,
         "weights": rounded(conv_w), "bias": rounded(conv_b)},
        {"type": "relu"},
        {"type": "maxpool", "kernel": 2, "stride": 2},
        {"type": "flatten"},
        {"type": "dense", "weights": [rounded(r) for r in dense_w], "bias": rounded(dense_b)},
        {"type": "softmax"},
    ],
})
