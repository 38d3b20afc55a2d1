"""Sequential dense network trained with backpropagation and Adam.

Default architecture: 5 inputs -> Dense(10, relu) -> Dropout(0.2) ->
Dense(7, relu) -> Dropout(0.2) -> Dense(3, identity), 161 trainable
parameters. Everything here is plain numpy; the matrices are small enough that
BLAS matmuls dominate and a JIT buys nothing.

Conventions: weight matrices are ``(units_out, units_in)``, inputs are batches
of row vectors, loss is MSE averaged over every entry of the batch, dropout is
inverted (survivors scaled by ``1/(1-p)`` at training time, identity at
inference). ``relu'(0)`` is taken as 0.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from battrul.errors import CacheError, DivergedError
from battrul.features import Normalizer, apply_normalizer, decode_targets

ACTIVATIONS = ("tanh", "sigmoid", "relu", "identity")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activation(kind: str, x):
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "identity":
        return np.asarray(x, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind: str, z):
    """Derivative of ``activation(kind, .)`` evaluated at pre-activation ``z``."""
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "identity":
        return np.ones_like(z, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 5
    layers: tuple[tuple[int, str], ...] = ((10, "relu"), (7, "relu"), (3, "identity"))
    dropout: tuple[float, ...] = (0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((int(u), str(a)) for u, a in self.layers))
        object.__setattr__(self, "dropout", tuple(float(p) for p in self.dropout))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for units, act in self.layers:
            if units < 1:
                raise ValueError(f"layer units must be positive, got {units}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if len(self.dropout) != len(self.layers) - 1:
            raise ValueError(f"expected {len(self.layers) - 1} dropout rates, got {len(self.dropout)}")
        if any(not 0 <= p < 1 for p in self.dropout):
            raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0]

    def fan(self):
        dims = [self.input_dim] + [u for u, _ in self.layers]
        return list(zip(dims[:-1], dims[1:]))


def make_spec(units: Sequence[int] = (10, 7, 3), activation: str = "relu", dropout: float = 0.2,
              output_activation: str = "identity", input_dim: int = 5, seed: int = 0) -> NetworkSpec:
    """Uniform hidden activation and dropout; the final layer gets ``output_activation``."""
    units = list(units)
    layers = [(u, activation) for u in units[:-1]] + [(units[-1], output_activation)]
    return NetworkSpec(input_dim, tuple(layers), tuple([dropout] * (len(units) - 1)), seed)


def layer_param_counts(spec: NetworkSpec) -> list[int]:
    return [fin * fout + fout for fin, fout in spec.fan()]


def param_count(spec: NetworkSpec) -> int:
    return sum(layer_param_counts(spec))


class Network:
    def __init__(self, spec: NetworkSpec, weights, biases, normalizer: Normalizer | None = None,
                 labels: dict | None = None, training: dict | None = None):
        if len(weights) != len(spec.layers) or len(biases) != len(spec.layers):
            raise ValueError("weights/biases do not match the layer count")
        for (fin, fout), W, b in zip(spec.fan(), weights, biases):
            if W.shape != (fout, fin) or b.shape != (fout,):
                raise ValueError(f"expected W {(fout, fin)} and b {(fout,)}, got {W.shape} and {b.shape}")
        self.spec = spec
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.normalizer = normalizer
        self.labels = labels
        self.training = training or {}
        self.version = 0

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.spec == other.spec
                and all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))
                and self.normalizer == other.normalizer and self.labels == other.labels)

    __hash__ = None


def init_network(spec: NetworkSpec) -> Network:
    """Glorot-uniform weights drawn from PCG64(spec.seed); zero biases."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    weights, biases = [], []
    for fin, fout in spec.fan():
        limit = math.sqrt(6.0 / (fin + fout))
        weights.append(rng.uniform(-limit, limit, size=(fout, fin)))
        biases.append(np.zeros(fout))
    return Network(spec, weights, biases)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    zs: list
    acts: list                     # post-activation, post-dropout outputs per layer
    masks: list                    # per non-final layer: scaled keep mask or None
    net_id: int
    version: int


def forward(net: Network, x, mode: str = "inference", masks=None, rng: np.random.Generator | None = None):
    """Run the network on a vector or a batch of row vectors.

    In ``training`` mode dropout masks are taken from ``masks`` (one boolean
    array per non-final layer, or None to skip a layer) or drawn from ``rng``.
    Returns ``(output, cache)``; output keeps the dimensionality of ``x``.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    A = X[None, :] if single else X
    if A.ndim != 2 or A.shape[1] != net.spec.input_dim:
        raise ValueError(f"expected input width {net.spec.input_dim}, got shape {X.shape}")
    if mode not in ("inference", "training"):
        raise ValueError(f"unknown mode {mode!r}")
    n_layers = len(net.spec.layers)
    zs, acts, used = [], [], []
    for li, (W, b, (_, kind)) in enumerate(zip(net.weights, net.biases, net.spec.layers)):
        Z = A @ W.T + b
        A = activation(kind, Z)
        scale = None
        if mode == "training" and li < n_layers - 1:
            p = net.spec.dropout[li]
            if masks is not None:
                keep = masks[li]
            elif p > 0:
                if rng is None:
                    raise ValueError("training-mode dropout needs masks or an rng")
                keep = rng.random(A.shape) >= p
            else:
                keep = None
            if keep is not None:
                scale = np.broadcast_to(keep, A.shape).astype(np.float64) / (1.0 - p)
                A = A * scale
        zs.append(Z)
        acts.append(A)
        used.append(scale)
    cache = ForwardCache(X[None, :] if single else X, zs, acts, used, id(net), net.version)
    return (A[0] if single else A), cache


def loss_mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def backward(net: Network, cache: ForwardCache | None, target) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients ``[(dW, db), ...]`` of the batch MSE through the cached dropout masks."""
    if cache is None:
        raise CacheError("backward called without a forward cache")
    if cache.net_id != id(net) or cache.version != net.version:
        raise CacheError("forward cache is stale: network weights changed since the forward pass")
    Y = cache.acts[-1]
    T = np.asarray(target, dtype=np.float64).reshape(Y.shape)
    dA = 2.0 * (Y - T) / Y.size
    grads = []
    for li in range(len(net.weights) - 1, -1, -1):
        if cache.masks[li] is not None:
            dA = dA * cache.masks[li]
        dZ = dA * activation_grad(net.spec.layers[li][1], cache.zs[li])
        prev = cache.inputs if li == 0 else cache.acts[li - 1]
        grads.append((dZ.T @ prev, dZ.sum(axis=0)))
        dA = dZ @ net.weights[li]
    grads.reverse()
    return grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    loss: str = "mse"
    metric: str = "mae"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.loss != "mse" or self.metric != "mae":
            raise ValueError("only loss='mse' with metric='mae' is supported")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, config: TrainConfig,
              t: int | None = None) -> list[np.ndarray]:
    """One bias-corrected Adam update applied in place; returns ``params``.

    ``t`` defaults to ``state.t + 1``; ``state.t`` is set to the step used.
    """
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    state.t = t
    return params


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_mae: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def rows(self):
        has_val = bool(self.val_loss)
        for i in range(len(self)):
            yield (i + 1, self.train_loss[i], self.val_loss[i] if has_val else None,
                   self.train_mae[i], self.val_mae[i] if has_val else None)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,train_mae,val_mae"]
        for row in self.rows():
            lines.append(",".join("" if v is None else repr(v) for v in row))
        return "\n".join(lines) + "\n"


def train(net: Network, features, targets, config: TrainConfig,
          validation: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[Network, TrainHistory]:
    """Mini-batch Adam on the MSE loss; returns a trained copy and its per-epoch history.

    Each epoch shuffles the rows, walks them in batches of ``batch_size`` (the
    last batch may be short) and records inference-mode loss and MAE over the
    full training set and, when given, the validation pair. Row shuffling and
    dropout masks share one PCG64 stream seeded with ``config.seed``.
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    if Y.shape != (X.shape[0], net.spec.output_dim):
        raise ValueError(f"targets must have shape {(X.shape[0], net.spec.output_dim)}, got {Y.shape}")
    net = net.copy()
    history = TrainHistory()
    if config.epochs == 0:
        return net, history
    n = X.shape[0]
    bs = min(config.batch_size, n)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    state = AdamState.zeros_like(net.params())
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            for bi, start in enumerate(range(0, n, bs)):
                idx = order[start:start + bs]
                out, cache = forward(net, X[idx], mode="training", rng=rng)
                batch_loss = float(np.mean((out - Y[idx]) ** 2))
                if not math.isfinite(batch_loss):
                    raise DivergedError(epoch, bi, batch_loss)
                grads = backward(net, cache, Y[idx])
                adam_step(net.params(), [g for pair in grads for g in pair], state, config)
                net.version += 1
            pred, _ = forward(net, X)
            tl = loss_mse(pred, Y)
            if not math.isfinite(tl):
                raise DivergedError(epoch, bi, tl)
            history.train_loss.append(tl)
            history.train_mae.append(loss_mae(pred, Y))
            if validation is not None:
                vpred, _ = forward(net, validation[0])
                history.val_loss.append(loss_mse(vpred, validation[1]))
                history.val_mae.append(loss_mae(vpred, validation[1]))
    return net, history


class Prediction(NamedTuple):
    outputs: np.ndarray
    capacity_ah: np.ndarray | None
    soh: np.ndarray | None
    rul_cycles: np.ndarray | None


def predict(net: Network, features) -> Prediction:
    """Inference-mode outputs for scaled features, plus decoded heads when labels are attached."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != net.spec.input_dim:
        raise ValueError(f"expected {net.spec.input_dim} feature columns, got {X.shape[1]}")
    out, _ = forward(net, X)
    if net.labels is None or net.spec.output_dim != 3:
        return Prediction(out, None, None, None)
    dec = decode_targets(out, net.labels)
    return Prediction(out, dec[:, 0], dec[:, 1], dec[:, 2])


def predict_raw(net: Network, raw_features) -> Prediction:
    if net.normalizer is None:
        raise ValueError("network has no attached normalizer")
    return predict(net, apply_normalizer(net.normalizer, np.atleast_2d(raw_features)))
