"""Self-describing JSON model files.

One document per model, discriminated by ``model_kind``
(``sequential_net``, ``linear``, ``tree``, ``forest``). Floats are written
with Python's shortest round-trip repr, which reproduces every double
bit-for-bit on load. Malformed documents raise ``ModelFormatError`` naming
the offending field path, e.g. ``spec.layers[1].units``.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from battrul.baselines import ForestModel, LinearModel, TreeModel
from battrul.errors import ModelFormatError, ModelVersionError
from battrul.features import Normalizer
from battrul.net import Network, NetworkSpec

FORMAT_VERSION = 1
LABEL_KEYS = ("rated_capacity_ah", "eol_threshold", "rul_denominator", "capacity_overshoot_factor")


def _get(doc, key, path, kind=None):
    if not isinstance(doc, dict):
        raise ModelFormatError(path or "<root>", "expected an object")
    full = f"{path}.{key}" if path else key
    if key not in doc:
        raise ModelFormatError(full, "missing field")
    value = doc[key]
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool)):
        raise ModelFormatError(full, f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _array(value, path, ndim, shape=None, dtype=np.float64):
    try:
        arr = np.array(value, dtype=dtype)
    except (TypeError, ValueError):
        raise ModelFormatError(path, "not a numeric array") from None
    if arr.ndim != ndim and not (arr.size == 0 and ndim > 1):
        raise ModelFormatError(path, f"expected a {ndim}-d array")
    if shape is not None and arr.shape != tuple(shape):
        raise ModelFormatError(path, f"expected shape {tuple(shape)}, got {arr.shape}")
    if dtype == np.float64 and not np.all(np.isfinite(arr)):
        raise ModelFormatError(path, "non-finite values")
    return arr


def _normalizer_doc(norm):
    if norm is None:
        return None
    return {"mode": norm.mode, "mins": norm.mins.tolist(), "maxes": norm.maxes.tolist()}


def _load_normalizer(doc, path):
    if doc is None:
        return None
    mins = _array(_get(doc, "mins", path, list), f"{path}.mins", 1)
    maxes = _array(_get(doc, "maxes", path, list), f"{path}.maxes", 1)
    try:
        return Normalizer(mins, maxes, _get(doc, "mode", path, str))
    except ValueError as exc:
        raise ModelFormatError(path, str(exc)) from None


def _load_labels(doc, path):
    if doc is None:
        return None
    return {k: float(_get(doc, k, path, (int, float))) for k in LABEL_KEYS}


def to_document(model) -> dict:
    if isinstance(model, Network):
        spec = model.spec
        body = {
            "model_kind": "sequential_net",
            "spec": {
                "input_dim": spec.input_dim,
                "layers": [{"units": u, "activation": a} for u, a in spec.layers],
                "dropout": list(spec.dropout),
                "seed": spec.seed,
            },
            "weights": [W.tolist() for W in model.weights],
            "biases": [b.tolist() for b in model.biases],
        }
    elif isinstance(model, LinearModel):
        body = {"model_kind": "linear", "coef": model.coef.tolist(), "intercept": model.intercept.tolist(),
                "ridge_used": model.ridge_used}
    elif isinstance(model, TreeModel):
        body = {"model_kind": "tree", "tree": _tree_doc(model)}
    elif isinstance(model, ForestModel):
        body = {"model_kind": "forest", "feature_fraction": model.feature_fraction, "bootstrap": model.bootstrap,
                "seeds": [str(s) for s in model.seeds], "trees": [_tree_doc(t) for t in model.trees]}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    doc = {"format_version": FORMAT_VERSION}
    doc.update(body)
    doc["normalizer"] = _normalizer_doc(model.normalizer)
    doc["labels"] = dict(model.labels) if model.labels is not None else None
    doc["training"] = model.training
    return doc


def _tree_doc(t: TreeModel) -> dict:
    return {
        "n_features": t.n_features,
        "max_depth": t.max_depth,
        "min_samples_leaf": t.min_samples_leaf,
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "n_samples": t.n_samples.tolist(),
    }


def _load_tree(doc, path) -> TreeModel:
    feature = _array(_get(doc, "feature", path, list), f"{path}.feature", 1, dtype=np.int64)
    m = feature.shape[0]
    if m == 0:
        raise ModelFormatError(f"{path}.feature", "tree has no nodes")
    value = _array(_get(doc, "value", path, list), f"{path}.value", 2)
    if value.shape[0] != m:
        raise ModelFormatError(f"{path}.value", f"expected {m} rows")
    n_features = _get(doc, "n_features", path, int)
    tree = TreeModel(
        feature=feature,
        threshold=_array(_get(doc, "threshold", path, list), f"{path}.threshold", 1, (m,)),
        left=_array(_get(doc, "left", path, list), f"{path}.left", 1, (m,), np.int64),
        right=_array(_get(doc, "right", path, list), f"{path}.right", 1, (m,), np.int64),
        value=value,
        n_samples=_array(_get(doc, "n_samples", path, list), f"{path}.n_samples", 1, (m,), np.int64),
        n_features=n_features,
        max_depth=doc.get("max_depth"),
        min_samples_leaf=_get(doc, "min_samples_leaf", path, int),
    )
    internal = tree.feature >= 0
    if np.any(tree.feature >= n_features):
        raise ModelFormatError(f"{path}.feature", "feature index out of range")
    for side in ("left", "right"):
        child = getattr(tree, side)[internal]
        if np.any(child <= np.flatnonzero(internal)) or np.any(child >= m):
            raise ModelFormatError(f"{path}.{side}", "child index out of range")
    return tree


def from_document(doc):
    if not isinstance(doc, dict):
        raise ModelFormatError("<root>", "expected an object")
    version = _get(doc, "format_version", "", int)
    if version != FORMAT_VERSION:
        raise ModelVersionError("format_version", f"unsupported version {version}, expected {FORMAT_VERSION}")
    kind = _get(doc, "model_kind", "", str)
    normalizer = _load_normalizer(doc.get("normalizer"), "normalizer")
    labels = _load_labels(doc.get("labels"), "labels")
    training = doc.get("training") or {}
    if kind == "sequential_net":
        sdoc = _get(doc, "spec", "", dict)
        layers = []
        for i, layer in enumerate(_get(sdoc, "layers", "spec", list)):
            p = f"spec.layers[{i}]"
            layers.append((_get(layer, "units", p, int), _get(layer, "activation", p, str)))
        try:
            spec = NetworkSpec(_get(sdoc, "input_dim", "spec", int), tuple(layers),
                               tuple(_get(sdoc, "dropout", "spec", list)), _get(sdoc, "seed", "spec", int))
        except (ValueError, TypeError) as exc:
            raise ModelFormatError("spec", str(exc)) from None
        wdoc = _get(doc, "weights", "", list)
        bdoc = _get(doc, "biases", "", list)
        if len(wdoc) != len(layers) or len(bdoc) != len(layers):
            raise ModelFormatError("weights", f"expected {len(layers)} layers")
        weights = [_array(w, f"weights[{i}]", 2, (fo, fi)) for i, (w, (fi, fo)) in enumerate(zip(wdoc, spec.fan()))]
        biases = [_array(b, f"biases[{i}]", 1, (fo,)) for i, (b, (_, fo)) in enumerate(zip(bdoc, spec.fan()))]
        return Network(spec, weights, biases, normalizer, labels, training)
    if kind == "linear":
        coef = _array(_get(doc, "coef", "", list), "coef", 2)
        intercept = _array(_get(doc, "intercept", "", list), "intercept", 1, (coef.shape[0],))
        return LinearModel(coef, intercept, bool(doc.get("ridge_used", False)), normalizer, labels, training)
    if kind == "tree":
        tree = _load_tree(_get(doc, "tree", "", dict), "tree")
        tree.normalizer, tree.labels, tree.training = normalizer, labels, training
        return tree
    if kind == "forest":
        tdocs = _get(doc, "trees", "", list)
        if not tdocs:
            raise ModelFormatError("trees", "forest has no trees")
        trees = [_load_tree(t, f"trees[{i}]") for i, t in enumerate(tdocs)]
        seeds = [int(s) for s in _get(doc, "seeds", "", list)]
        return ForestModel(trees, seeds, float(_get(doc, "feature_fraction", "", (int, float))),
                           bool(doc.get("bootstrap", True)), normalizer, labels, training)
    raise ModelFormatError("model_kind", f"unknown model kind {kind!r}")


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=False, allow_nan=False) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model, path) -> None:
    atomic_write_text(path, dumps(to_document(model)))


def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError("<root>", f"invalid JSON: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ModelFormatError("<root>", f"not UTF-8 text: {exc}") from None
    return from_document(doc)
