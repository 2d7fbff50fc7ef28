"""Gradient-boosted regression trees for binary (logistic) and multiclass (softmax) labels."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

MODEL_FORMAT_VERSION = 1
L2_REG = 1.0
MIN_SPLIT_GAIN = 1e-12


class ModelError(Exception):
    pass


class SchemaError(ModelError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    """The twelve tunable settings, grouped by pipeline stage.

    encoder: encoder_kind, tokenizer_min_len, segment_window_before/after
    reduction: reduction_dims
    aggregation: aggregate_set_id
    trees: n_rounds, max_depth, learning_rate, min_samples_leaf,
    subsample_fraction, class_weighting
    """

    n_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 1
    subsample_fraction: float = 1.0
    segment_window_before: int = 2
    segment_window_after: int = 1
    reduction_dims: int = 2
    aggregate_set_id: str = "full"
    encoder_kind: str = "tfidf"
    tokenizer_min_len: int = 2
    class_weighting: str = "none"

    def __post_init__(self):
        checks = [
            (1 <= self.n_rounds <= 5000, "n_rounds in [1, 5000]"),
            (1 <= self.max_depth <= 12, "max_depth in [1, 12]"),
            (0.0 < self.learning_rate <= 1.0, "learning_rate in (0, 1]"),
            (self.min_samples_leaf >= 1, "min_samples_leaf >= 1"),
            (0.0 < self.subsample_fraction <= 1.0, "subsample_fraction in (0, 1]"),
            (0 <= self.segment_window_before <= 10, "segment_window_before in [0, 10]"),
            (0 <= self.segment_window_after <= 10, "segment_window_after in [0, 10]"),
            (1 <= self.reduction_dims <= 16, "reduction_dims in [1, 16]"),
            (self.aggregate_set_id in ("full", "central"), "aggregate_set_id in {full, central}"),
            (self.encoder_kind in ("tfidf", "embedding"), "encoder_kind in {tfidf, embedding}"),
            (1 <= self.tokenizer_min_len <= 10, "tokenizer_min_len in [1, 10]"),
            (self.class_weighting in ("none", "balanced"), "class_weighting in {none, balanced}"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ValueError(f"invalid hyperparameters: expected {rule}")

    @classmethod
    def from_dict(cls, obj: dict) -> "Hyperparameters":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValueError(f"unknown hyperparameters {unknown}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "Hyperparameters":
        d = self.to_dict()
        d.update(kw)
        return Hyperparameters(**d)


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold, dtype=float)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        active = feat[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, feat[nd]] <= thr[nd]
            node[r] = np.where(go_left, left[nd], right[nd])
            active = feat[node] >= 0
        return np.asarray(self.value, dtype=float)[node]

    def scale(self, factor: float) -> None:
        self.value = [v * factor for v in self.value]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        return cls(**obj)


def _best_split(X, g, h, idx, min_leaf):
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + L2_REG)
    best = (MIN_SPLIT_GAIN, -1, 0.0)
    n = len(idx)
    if n < 2 * min_leaf:
        return best
    for f in range(X.shape[1]):
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        gl = np.cumsum(g[idx][order])[:-1]
        hl = np.cumsum(h[idx][order])[:-1]
        gr, hr = G - gl, H - hl
        gain = gl * gl / (hl + L2_REG) + gr * gr / (hr + L2_REG) - parent
        pos = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (pos >= min_leaf) & (n - pos >= min_leaf)
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            best = (float(gain[k]), f, float((xs[k] + xs[k + 1]) / 2.0))
    return best


def fit_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, idx: np.ndarray,
             max_depth: int, min_leaf: int) -> Tree:
    """Second-order regression tree: leaf value ``-G / (H + lambda)``."""
    tree = Tree()

    def grow(rows, depth):
        node = tree._add(float(-g[rows].sum() / (h[rows].sum() + L2_REG)))
        if depth >= max_depth:
            return node
        gain, f, thr = _best_split(X, g, h, rows, min_leaf)
        if f < 0:
            return node
        mask = X[rows, f] <= thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = grow(rows[mask], depth + 1)
        tree.right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(idx, 0)
    return tree


def _softmax(F: np.ndarray) -> np.ndarray:
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TrainedModel:
    classes: list[str]
    feature_schema: list[str]
    hyperparameters: Hyperparameters
    seed: int
    base_score: list[float]
    trees: list[list[Tree]]  # rounds x score columns
    training_loss: list[float] = field(default_factory=list)
    preprocessor: dict | None = None

    @property
    def binary(self) -> bool:
        return len(self.classes) == 2

    @property
    def n_scores(self) -> int:
        return 1 if self.binary else len(self.classes)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        F = np.tile(np.asarray(self.base_score, dtype=float), (X.shape[0], 1))
        for round_trees in self.trees:
            for k, t in enumerate(round_trees):
                F[:, k] += t.predict(X)
        return F

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.feature_schema):
            raise SchemaError(f"expected {len(self.feature_schema)} features, got {X.shape[1]}")
        F = self.raw_scores(X)
        if self.binary:
            p1 = _sigmoid(F[:, 0])
            return np.column_stack([1.0 - p1, p1])
        return _softmax(F)

    def predict_labels(self, X, threshold: float = 0.5) -> list[str]:
        P = self.predict_proba(X)
        if self.binary:
            return [self.classes[1] if p >= threshold else self.classes[0] for p in P[:, 1]]
        return [self.classes[i] for i in np.argmax(P, axis=1)]

    def to_json(self) -> dict:
        return {
            "format": "ccref-model",
            "version": MODEL_FORMAT_VERSION,
            "classes": self.classes,
            "feature_schema": self.feature_schema,
            "hyperparameters": self.hyperparameters.to_dict(),
            "seed": self.seed,
            "base_score": self.base_score,
            "trees": [[t.to_json() for t in rnd] for rnd in self.trees],
            "training_loss": self.training_loss,
            "preprocessor": self.preprocessor,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedModel":
        if obj.get("format") != "ccref-model" or obj.get("version") != MODEL_FORMAT_VERSION:
            raise ModelError("not a supported model file")
        m = cls(
            classes=list(obj["classes"]),
            feature_schema=list(obj["feature_schema"]),
            hyperparameters=Hyperparameters.from_dict(obj["hyperparameters"]),
            seed=obj["seed"],
            base_score=list(obj["base_score"]),
            trees=[[Tree.from_json(t) for t in rnd] for rnd in obj["trees"]],
            training_loss=list(obj.get("training_loss", [])),
            preprocessor=obj.get("preprocessor"),
        )
        for rnd in m.trees:
            for t in rnd:
                if any(f >= len(m.feature_schema) for f in t.feature):
                    raise ModelError("tree references a feature outside the schema")
        return m

    @classmethod
    def loads(cls, text: str) -> "TrainedModel":
        return cls.from_json(json.loads(text))


def _as_matrix(features) -> tuple[np.ndarray, list[str] | None]:
    if len(features) and hasattr(features[0], "schema"):
        schema = list(features[0].schema)
        for i, f in enumerate(features):
            if list(f.schema) != schema:
                raise SchemaError(f"row {i} has a different feature schema")
        return np.vstack([f.values for f in features]).astype(float), schema
    return np.asarray(features, dtype=float), None


def _loss(Y: np.ndarray, F: np.ndarray, w: np.ndarray, binary: bool) -> float:
    if binary:
        z = F[:, 0]
        y = Y[:, 1]
        per = np.logaddexp(0.0, z) - y * z
    else:
        Z = F - F.max(axis=1, keepdims=True)
        per = np.log(np.exp(Z).sum(axis=1)) - (Y * Z).sum(axis=1)
    return float((w * per).sum() / w.sum())


def train(features, labels: Sequence[str], hp: Hyperparameters = Hyperparameters(), seed: int = 0,
          feature_schema: Sequence[str] | None = None) -> TrainedModel:
    """Fit a boosted ensemble.

    Each round fits one tree per score column to the gradient/hessian of the
    loss. If a round's step would raise the (full-sample) training loss, its
    leaf values are halved until it does not, so training loss never increases.
    """
    X, schema = _as_matrix(features)
    if feature_schema is not None:
        schema = list(feature_schema)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ModelError("features and labels differ in length")
    if schema is None:
        schema = [f"f{i}" for i in range(X.shape[1])]
    if len(schema) != X.shape[1]:
        raise SchemaError("feature schema does not match the number of columns")
    bad = np.where(~np.all(np.isfinite(X), axis=1))[0]
    if len(bad):
        raise ModelError(f"non-finite feature value in row {int(bad[0])}")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ModelError("training needs at least two classes")

    n = X.shape[0]
    y = np.array([classes.index(c) for c in labels])
    Y = np.eye(len(classes))[y]
    counts = Y.sum(axis=0)
    if hp.class_weighting == "balanced":
        w = (n / (len(classes) * counts))[y]
    else:
        w = np.ones(n)
    prior = (w[:, None] * Y).sum(axis=0) / w.sum()
    binary = len(classes) == 2
    if binary:
        base = [float(np.log(prior[1] / prior[0]))]
    else:
        logp = np.log(prior)
        base = [float(v - logp.mean()) for v in logp]
    F = np.tile(np.array(base), (n, 1))

    rng = np.random.default_rng(seed)
    n_sub = max(1, int(round(hp.subsample_fraction * n)))
    rounds: list[list[Tree]] = []
    losses = [_loss(Y, F, w, binary)]
    for _ in range(hp.n_rounds):
        idx = np.sort(rng.choice(n, size=n_sub, replace=False)) if n_sub < n else np.arange(n)
        if binary:
            p = _sigmoid(F[:, 0])
            G = ((p - Y[:, 1]) * w)[:, None]
            Hs = (np.maximum(p * (1 - p), 1e-16) * w)[:, None]
        else:
            P = _softmax(F)
            G = (P - Y) * w[:, None]
            Hs = np.maximum(P * (1 - P), 1e-16) * w[:, None]
        trees = [fit_tree(X, G[:, k], Hs[:, k], idx, hp.max_depth, hp.min_samples_leaf)
                 for k in range(F.shape[1])]
        for t in trees:
            t.scale(hp.learning_rate)
        step = np.column_stack([t.predict(X) for t in trees])
        loss = _loss(Y, F + step, w, binary)
        halvings = 0
        while loss > losses[-1] and halvings < 30:
            for t in trees:
                t.scale(0.5)
            step *= 0.5
            loss = _loss(Y, F + step, w, binary)
            halvings += 1
        if loss > losses[-1]:
            for t in trees:
                t.scale(0.0)
            step[:] = 0.0
            loss = losses[-1]
        F = F + step
        rounds.append(trees)
        losses.append(loss)

    return TrainedModel(classes, list(schema), hp, seed, base, rounds, losses)


def predict(m: TrainedModel, x, threshold: float = 0.5) -> tuple[str, dict[str, float]]:
    """Class and per-class probabilities for one feature row (``EdgeFeatures`` or array)."""
    if hasattr(x, "schema"):
        if list(x.schema) != m.feature_schema:
            raise SchemaError("feature schema does not match the model")
        x = x.values
    p = m.predict_proba(np.asarray(x, dtype=float))[0]
    return m.predict_labels(np.asarray(x, dtype=float)[None, :], threshold)[0], dict(zip(m.classes, map(float, p)))
