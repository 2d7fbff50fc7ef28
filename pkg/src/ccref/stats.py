"""Rank statistics and survival estimates used by the analyses."""
from __future__ import annotations

import itertools
import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats as _st

EXACT_MAX_N = 8
ASYMPTOTIC_MIN_N = 31
PERMUTATION_DRAWS = 100_000


class SpearmanResult(NamedTuple):
    rho: float
    p_value: float
    n: int
    method: str
    seed: int | None


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(x, dtype=float)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(len(a))
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    return float((a @ b) / math.sqrt((a @ a) * (b @ b)))


def _tail(null: np.ndarray, rho: float, alternative: str) -> np.ndarray:
    eps = 1e-12
    if alternative == "greater":
        return null >= rho - eps
    if alternative == "less":
        return null <= rho + eps
    return np.abs(null) >= abs(rho) - eps


def spearman(x: Sequence[float], y: Sequence[float], alternative: str = "two-sided",
             seed: int = 0, draws: int = PERMUTATION_DRAWS) -> SpearmanResult:
    """Spearman's rho with a p-value.

    For n > 30 the p-value uses the t approximation with n - 2 degrees of
    freedom. Smaller samples use a permutation null: exhaustive for n <= 8,
    otherwise ``draws`` seeded random permutations.
    """
    if alternative not in ("greater", "less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 pairs")
    rx, ry = average_ranks(x), average_ranks(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ValueError("constant input; rank correlation undefined")
    rho = _pearson(rx, ry)

    if n >= ASYMPTOTIC_MIN_N:
        if abs(rho) >= 1.0:
            t = math.copysign(math.inf, rho)
        else:
            t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        df = n - 2
        if alternative == "greater":
            p = _st.t.sf(t, df)
        elif alternative == "less":
            p = _st.t.cdf(t, df)
        else:
            p = 2.0 * _st.t.sf(abs(t), df)
        return SpearmanResult(rho, float(min(p, 1.0)), n, "t-approximation", None)

    cx = rx - rx.mean()
    cy = ry - ry.mean()
    denom = math.sqrt((cx @ cx) * (cy @ cy))
    if n <= EXACT_MAX_N:
        perms = np.array(list(itertools.permutations(range(n))))
        null = (cy[perms] @ cx) / denom
        return SpearmanResult(rho, float(_tail(null, rho, alternative).mean()), n, "exact-permutation", None)
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((draws, n)), axis=1)
    null = (cy[perms] @ cx) / denom
    hits = int(_tail(null, rho, alternative).sum())
    return SpearmanResult(rho, (hits + 1) / (draws + 1), n, "monte-carlo-permutation", seed)


def kaplan_meier(durations: Sequence[float], observed: Sequence[bool]) -> list[tuple[float, float]]:
    """Product-limit survival curve as (time, S(time)) steps, starting at (0, 1)."""
    d = np.asarray(durations, dtype=float)
    e = np.asarray(observed, dtype=bool)
    points = [(0.0, 1.0)]
    s = 1.0
    for t in np.unique(d[e]):
        at_risk = int((d >= t).sum())
        events = int(((d == t) & e).sum())
        if at_risk:
            s *= 1.0 - events / at_risk
        points.append((float(t), s))
    return points


def ecdf(values: Sequence[float]) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    out = []
    for i, x in enumerate(v):
        if i + 1 < n and v[i + 1] == x:
            continue
        out.append((float(x), (i + 1) / n))
    return out
