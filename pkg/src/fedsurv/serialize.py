"""Model-state interchange format.

Every model family serializes to a versioned JSON blob that round-trips
bit-exactly: floats are emitted with Python's shortest-repr rule, which
reconstructs the identical IEEE double on load. Transient training
diagnostics (loss histories) are not model state and are not included.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .core import CumulativeHazardCurve
from .cox import CoxModel
from .forest import SurvivalForest, SurvivalTree
from .neural import NeuralRiskModel

FORMAT_VERSION = 1


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def _cox_payload(model: CoxModel) -> dict:
    return {
        "beta": _floats(model.beta),
        "feature_means": _floats(model.feature_means),
        "feature_scales": _floats(model.feature_scales),
        "converged": bool(model.converged),
        "baseline_times": _floats(model.baseline.times),
        "baseline_values": _floats(model.baseline.values),
    }


def _neural_payload(model: NeuralRiskModel) -> dict:
    return {
        "layer_specs": [[din, dout, act] for din, dout, act in model.layer_specs],
        "dropout_rate": float(model.dropout_rate),
        "feature_means": _floats(model.feature_means),
        "feature_scales": _floats(model.feature_scales),
        "flat_weights": _floats(model.flatten_weights()),
        "norm_means": None if model.norm_means is None else [_floats(m) for m in model.norm_means],
        "norm_vars": None if model.norm_vars is None else [_floats(v) for v in model.norm_vars],
    }


def _tree_nodes(tree: SurvivalTree) -> list:
    """Preorder node list: ["s", feature, threshold] or ["l", times, values]."""
    nodes = []

    def walk(i: int):
        if tree.feature[i] >= 0:
            nodes.append(["s", int(tree.feature[i]), float(tree.threshold[i])])
            walk(int(tree.children_left[i]))
            walk(int(tree.children_right[i]))
        else:
            curve = tree.leaf_curves[int(tree.leaf_index[i])]
            nodes.append(["l", _floats(curve.times), _floats(curve.values)])

    walk(0)
    return nodes


def _forest_payload(forest: SurvivalForest) -> dict:
    return {
        "grid": _floats(forest.grid),
        "n_features": forest.n_features,
        "trees": [
            {
                "nodes": _tree_nodes(tr),
                "bootstrap_seed": int(tr.bootstrap_seed),
                "client_tag": tr.client_tag,
                "importance": None if tr.importance is None else float(tr.importance),
            }
            for tr in forest.trees
        ],
    }


def serialize_model(model) -> str:
    """Serialize a fitted model to its interchange blob."""
    if isinstance(model, CoxModel):
        family, payload = "cox", _cox_payload(model)
    elif isinstance(model, NeuralRiskModel):
        family, payload = model.variant, _neural_payload(model)
    elif isinstance(model, SurvivalForest):
        family, payload = "rsf", _forest_payload(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    blob = {"format_version": FORMAT_VERSION, "family": family}
    blob.update(payload)
    return json.dumps(blob, separators=(",", ":"))


def _rebuild_tree(entry: dict, n_features: int) -> SurvivalTree:
    nodes = entry["nodes"]
    feature, threshold = [], []
    left, right, leaf_index = [], [], []
    curves = []
    pos = 0

    def read() -> int:
        nonlocal pos
        node = len(feature)
        item = nodes[pos]
        pos += 1
        if item[0] == "s":
            feature.append(item[1])
            threshold.append(item[2])
            left.append(-1)
            right.append(-1)
            leaf_index.append(-1)
            left[node] = read()
            right[node] = read()
        else:
            feature.append(-1)
            threshold.append(float("nan"))
            left.append(-1)
            right.append(-1)
            leaf_index.append(len(curves))
            curves.append(CumulativeHazardCurve(np.array(item[1]), np.array(item[2])))
        return node

    read()
    if pos != len(nodes):
        raise ValueError("malformed tree: trailing nodes")
    return SurvivalTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        children_left=np.array(left, dtype=np.int64),
        children_right=np.array(right, dtype=np.int64),
        leaf_index=np.array(leaf_index, dtype=np.int64),
        leaf_curves=tuple(curves),
        n_features=n_features,
        bootstrap_seed=entry["bootstrap_seed"],
        client_tag=entry["client_tag"],
        importance=entry["importance"],
    )


def deserialize_model(blob: str):
    """Rebuild a model from :func:`serialize_model` output."""
    data = json.loads(blob)
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version!r}")
    family = data.get("family")
    if family == "cox":
        return CoxModel(
            beta=np.array(data["beta"]),
            baseline=CumulativeHazardCurve(
                np.array(data["baseline_times"]), np.array(data["baseline_values"])
            ),
            feature_means=np.array(data["feature_means"]),
            feature_scales=np.array(data["feature_scales"]),
            converged=data["converged"],
        )
    if family in ("deepsurv", "coxnnet", "linear"):
        specs = tuple((int(a), int(b), str(c)) for a, b, c in data["layer_specs"])
        model = NeuralRiskModel(
            variant=family,
            layer_specs=specs,
            weights=[np.zeros((din, dout)) for din, dout, _ in specs],
            biases=[np.zeros(dout) for _, dout, _ in specs],
            feature_means=np.array(data["feature_means"]),
            feature_scales=np.array(data["feature_scales"]),
            dropout_rate=data["dropout_rate"],
            norm_means=None if data["norm_means"] is None else [np.array(m) for m in data["norm_means"]],
            norm_vars=None if data["norm_vars"] is None else [np.array(v) for v in data["norm_vars"]],
        )
        model.set_flat_weights(np.array(data["flat_weights"]))
        return model
    if family == "rsf":
        n_features = int(data["n_features"])
        trees = tuple(_rebuild_tree(entry, n_features) for entry in data["trees"])
        return SurvivalForest(trees, np.array(data["grid"]))
    raise ValueError(f"unknown model family {family!r}")


def snapshot_id(model) -> str:
    """Short content hash of a model's serialized state."""
    return hashlib.sha256(serialize_model(model).encode("utf-8")).hexdigest()[:12]
