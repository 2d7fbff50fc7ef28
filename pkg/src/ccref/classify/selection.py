"""Stratified splitting, k-fold cross-validation and stage-wise hyperparameter search."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .boosting import Hyperparameters, train
from .metrics import weighted_f1

# (hp, train_idx, test_idx) -> (X_train, X_test)
Featurizer = Callable[[Hyperparameters, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

STAGE_PARAMS: dict[str, tuple[str, ...]] = {
    "encoder": ("encoder_kind", "tokenizer_min_len", "segment_window_before", "segment_window_after"),
    "reduction": ("reduction_dims",),
    "aggregation": ("aggregate_set_id",),
    "trees": ("n_rounds", "max_depth", "learning_rate", "min_samples_leaf", "subsample_fraction",
              "class_weighting"),
}

DEFAULT_STAGES: dict[str, dict[str, list]] = {
    "encoder": {"segment_window_before": [1, 2, 3], "segment_window_after": [0, 1, 2]},
    "reduction": {"reduction_dims": [2, 3]},
    "aggregation": {"aggregate_set_id": ["full", "central"]},
    "trees": {"n_rounds": [50, 100], "max_depth": [2, 3, 4], "learning_rate": [0.1, 0.3]},
}


class FoldError(ValueError):
    pass


def stratified_folds(labels: Sequence, k: int, seed: int) -> list[np.ndarray]:
    """Deal each class's shuffled indices round-robin over ``k`` folds."""
    if k < 2:
        raise FoldError("need at least 2 folds")
    if k > len(labels):
        raise FoldError(f"{k} folds for {len(labels)} samples")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for c in sorted(set(labels)):
        idx = np.array([i for i, l in enumerate(labels) if l == c])
        for i in rng.permutation(idx):
            folds[slot % k].append(int(i))
            slot += 1
    return [np.array(sorted(f), dtype=int) for f in folds]


def _folds_cover_classes(labels, folds) -> bool:
    classes = set(labels)
    n = len(labels)
    for f in folds:
        test = set(f.tolist())
        if {labels[i] for i in range(n) if i not in test} != classes:
            return False
    return True


def checked_folds(labels: Sequence, k: int, seed: int) -> list[np.ndarray]:
    """Folds whose training parts contain every class; re-stratifies once before giving up."""
    for attempt in (seed, seed + 1):
        folds = stratified_folds(labels, k, attempt)
        if _folds_cover_classes(labels, folds):
            return folds
    raise FoldError("cannot build folds whose training parts contain every class")


def stratified_split(labels: Sequence, fraction: float = 0.5, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified split into (train, evaluation) index arrays."""
    rng = np.random.default_rng(seed)
    tr, ev = [], []
    carry = 0.0
    for c in sorted(set(labels)):
        idx = rng.permutation([i for i, l in enumerate(labels) if l == c])
        exact = fraction * len(idx) + carry
        n_tr = int(np.floor(exact + 1e-9))
        carry = exact - n_tr
        tr.extend(idx[:n_tr].tolist())
        ev.extend(idx[n_tr:].tolist())
    return np.array(sorted(tr), dtype=int), np.array(sorted(ev), dtype=int)


@dataclass
class CVResult:
    hyperparameters: Hyperparameters
    fold_scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores))


def _matrix_featurizer(X: np.ndarray) -> Featurizer:
    return lambda hp, tr, te: (X[tr], X[te])


def cross_validate(features, labels: Sequence, grid: Sequence[Hyperparameters], k: int = 5, seed: int = 0,
                   featurize: Featurizer | None = None) -> tuple[Hyperparameters, list[CVResult]]:
    """Mean weighted F1 over stratified folds for each config; returns the best.

    Ties on the mean go to fewer rounds, then shallower trees, then grid order.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    labels = list(labels)
    if featurize is None:
        featurize = _matrix_featurizer(np.asarray(features, dtype=float))
    folds = checked_folds(labels, k, seed)
    results = []
    for hp in grid:
        scores = []
        for f, test in enumerate(folds):
            train_idx = np.setdiff1d(np.arange(len(labels)), test)
            Xtr, Xte = featurize(hp, train_idx, test)
            model = train(Xtr, [labels[i] for i in train_idx], hp, seed + f)
            scores.append(weighted_f1([labels[i] for i in test], model.predict_labels(Xte)))
        results.append(CVResult(hp, scores))
    best = min(range(len(results)), key=lambda i: (-round(results[i].mean, 12),
                                                     results[i].hyperparameters.n_rounds,
                                                     results[i].hyperparameters.max_depth, i))
    return results[best].hyperparameters, results


def expand_grid(base: Hyperparameters, params: Mapping[str, Sequence]) -> list[Hyperparameters]:
    names = sorted(params)
    return [base.replace(**dict(zip(names, combo))) for combo in itertools.product(*(params[n] for n in names))]


def staged_search(features, labels: Sequence, incumbent: Hyperparameters = Hyperparameters(),
                  stages: Mapping[str, Mapping[str, Sequence]] | None = None, k: int = 5, seed: int = 0,
                  featurize: Featurizer | None = None) -> tuple[Hyperparameters, dict[str, list[CVResult]]]:
    """Tune one stage at a time, holding every other stage at its incumbent value."""
    stages = DEFAULT_STAGES if stages is None else stages
    history: dict[str, list[CVResult]] = {}
    for stage in ("encoder", "reduction", "aggregation", "trees"):
        params = stages.get(stage)
        if not params:
            continue
        stray = set(params) - set(STAGE_PARAMS[stage])
        if stray:
            raise ValueError(f"stage {stage!r} cannot tune {sorted(stray)}")
        grid = expand_grid(incumbent, params)
        incumbent, history[stage] = cross_validate(features, labels, grid, k, seed, featurize)
    return incumbent, history
