"""Uniform fit/predict wrappers over the network and the baselines.

Estimators fit on a ``SupervisedSet`` so the fitted model carries the
normalizer and label constants it was trained with. A model factory in the
evaluation code is any callable ``seed -> estimator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from battrul import baselines
from battrul.features import SupervisedSet
from battrul.net import TrainConfig, TrainHistory, init_network, make_spec, predict, train
from battrul.seeding import derive_seed


@dataclass
class NetRegressor:
    units: tuple = (10, 7, 3)
    activation: str = "relu"
    dropout: float = 0.2
    output_activation: str = "identity"
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    kind = "net"
    model: object = field(default=None, repr=False)
    history: TrainHistory | None = field(default=None, repr=False)

    def config(self) -> dict:
        return {"model_kind": self.kind, "units": list(self.units), "activation": self.activation,
                "dropout": self.dropout, "output_activation": self.output_activation,
                "learning_rate": self.learning_rate, "batch_size": self.batch_size,
                "epochs": self.epochs, "seed": self.seed}

    def fit(self, data: SupervisedSet, validation: SupervisedSet | None = None) -> "NetRegressor":
        spec = make_spec(self.units, self.activation, self.dropout, self.output_activation,
                         input_dim=data.features.shape[1], seed=derive_seed(self.seed, 0))
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                          epochs=self.epochs, seed=derive_seed(self.seed, 1))
        val = (validation.features, validation.targets) if validation is not None else None
        net, hist = train(init_network(spec), data.features, data.targets, cfg, validation=val)
        net.normalizer = data.normalizer
        net.labels = data.label_constants()
        net.training = {"seed": self.seed, "epochs": self.epochs, "batch_size": self.batch_size,
                        "learning_rate": self.learning_rate, "config": self.config()}
        self.model, self.history = net, hist
        return self

    def predict(self, features) -> np.ndarray:
        return predict(self.model, features).outputs


class _BaselineRegressor:
    kind = ""

    def _attach(self, model, data: SupervisedSet):
        model.normalizer = data.normalizer
        model.labels = data.label_constants()
        model.training = {"seed": getattr(self, "seed", 0), "config": self.config()}
        self.model = model
        self.history = None
        return self

    def config(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("model", "history")}
        return {"model_kind": self.kind, **d}

    def predict(self, features) -> np.ndarray:
        return self.model.predict(features)


@dataclass
class LinearRegressor(_BaselineRegressor):
    seed: int = 0
    kind = "linear"
    model: object = field(default=None, repr=False)

    def fit(self, data: SupervisedSet, validation=None):
        return self._attach(baselines.linreg_fit(data.features, data.targets), data)


@dataclass
class TreeRegressor(_BaselineRegressor):
    max_depth: int | None = baselines.DEFAULT_MAX_DEPTH
    min_samples_leaf: int = baselines.DEFAULT_MIN_SAMPLES_LEAF
    seed: int = 0
    kind = "tree"
    model: object = field(default=None, repr=False)

    def fit(self, data: SupervisedSet, validation=None):
        return self._attach(baselines.tree_fit(data.features, data.targets, self.max_depth,
                                               self.min_samples_leaf, self.seed), data)


@dataclass
class ForestRegressor(_BaselineRegressor):
    n_trees: int = baselines.DEFAULT_N_TREES
    max_depth: int | None = baselines.DEFAULT_MAX_DEPTH
    feature_fraction: float = baselines.DEFAULT_FEATURE_FRACTION
    min_samples_leaf: int = baselines.DEFAULT_MIN_SAMPLES_LEAF
    seed: int = 0
    kind = "forest"
    model: object = field(default=None, repr=False)

    def fit(self, data: SupervisedSet, validation=None):
        return self._attach(baselines.forest_fit(data.features, data.targets, self.n_trees, self.max_depth,
                                                 self.feature_fraction, self.seed, self.min_samples_leaf), data)


class MeanRegressor(_BaselineRegressor):
    """Predicts the training mean of every target; the r2 = 0 reference."""

    kind = "mean"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.model = None

    def config(self):
        return {"model_kind": self.kind, "seed": self.seed}

    def fit(self, data: SupervisedSet, validation=None):
        self.mean_ = data.targets.mean(axis=0)
        return self

    def predict(self, features):
        return np.tile(self.mean_, (np.atleast_2d(features).shape[0], 1))


ESTIMATORS = {"net": NetRegressor, "linear": LinearRegressor, "tree": TreeRegressor, "forest": ForestRegressor}
