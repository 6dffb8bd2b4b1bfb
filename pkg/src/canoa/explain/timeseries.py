"""TiME: per-time-step saliency from contiguous windowed sub-samples.

Each sub-sample keeps a few non-touching windows of the series and fills
the rest (straight-line interpolation by default, so the filled spans do not
add steps the model could react to). A time step's score is the average
target confidence over the sub-samples that kept it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    ExplainError, SaliencyMap, as_blackbox, check_class, check_input, minmax, symmetric_scale,
)

FILL_MODES = ("interpolate", "mean")


@dataclass(frozen=True)
class TimeParams:
    n_samples: int = 1000
    min_len: int | None = None   # default ceil(T / 16)
    max_len: int | None = None   # default ceil(T / 4)
    max_windows: int = 3
    fill: str = "interpolate"
    seed: int = 0
    max_retries: int | None = None  # coverage retries, default T

    def resolved(self, T: int) -> "TimeParams":
        p = replace(self,
                    min_len=self.min_len or math.ceil(T / 16),
                    max_len=self.max_len or math.ceil(T / 4),
                    max_retries=T if self.max_retries is None else self.max_retries)
        if p.max_len > T:
            raise ExplainError("series too short")
        if not 1 <= p.min_len <= p.max_len:
            raise ExplainError("need 1 <= min_len <= max_len")
        if p.n_samples < 1 or p.max_windows < 1:
            raise ExplainError("n_samples and max_windows must be >= 1")
        if p.fill not in FILL_MODES:
            raise ExplainError(f"unknown fill mode {p.fill!r}")
        return p


def draw_keep_mask(rng: np.random.Generator, T: int, n: int, lo: int, hi: int,
                   attempts: int = 50) -> np.ndarray:
    """Union of up to n separate windows with lengths in [lo, hi].

    Windows that would overlap or touch an earlier one are redrawn so every
    run of ones stays within the length bounds.
    """
    keep = np.zeros(T, dtype=bool)
    placed = 0
    for _ in range(n):
        for _ in range(attempts):
            L = int(rng.integers(lo, hi + 1))
            s = int(rng.integers(0, T - L + 1))
            if not keep[max(0, s - 1):min(T, s + L + 1)].any():
                keep[s:s + L] = True
                placed += 1
                break
    if placed == 0:  # only possible if T < lo, which callers exclude
        raise ExplainError("series too short")
    return keep


def fill_masked(series: np.ndarray, keep: np.ndarray, mode: str = "interpolate") -> np.ndarray:
    if mode == "mean":
        return np.where(keep, series, series.mean())
    idx = np.flatnonzero(keep)
    t = np.arange(len(series))
    # np.interp holds the end values past the outermost kept samples
    return np.interp(t, idx, series[idx])


def runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as (start, stop) pairs."""
    m = np.concatenate([[False], np.asarray(mask, bool), [False]])
    d = np.diff(m.astype(int))
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


@dataclass
class TimeResult:
    """Raw accumulators for one run, before normalization."""

    masks: np.ndarray     # (K', T) bool, coverage retries appended
    probs: np.ndarray     # (K', C) scorer outputs
    coverage: np.ndarray  # (T,) times each step was kept
    n_retries: int

    def raw(self, target: int) -> np.ndarray:
        num = self.probs[:, target] @ self.masks
        return num / np.maximum(self.coverage, 1)


def sample_and_score(scorer, series, params: TimeParams = TimeParams(), n_jobs: int = 1,
                     target_check: tuple[int, ...] = ()) -> TimeResult:
    series = check_input(series)
    if series.ndim != 1:
        raise ExplainError("series must be one-dimensional")
    T = len(series)
    p = params.resolved(T)
    bb = as_blackbox(scorer, n_jobs)
    for c in target_check:
        check_class(bb, series, c)
    bb.evals = 0  # count sub-sample evaluations only
    rng = np.random.default_rng(p.seed)

    masks = []
    for _ in range(p.n_samples):
        n = int(rng.integers(1, p.max_windows + 1))
        masks.append(draw_keep_mask(rng, T, n, p.min_len, p.max_len))
    coverage = np.sum(masks, axis=0)

    retries = 0
    while not coverage.all():
        if retries >= p.max_retries:
            raise ExplainError("insufficient coverage")
        t = int(rng.choice(np.flatnonzero(coverage == 0)))
        L = int(rng.integers(p.min_len, p.max_len + 1))
        starts = np.arange(max(0, t - L + 1), min(t, T - L) + 1)
        # prefer windows that add only uncovered steps
        fresh = [s for s in starts if not coverage[s:s + L].any()]
        s = int(rng.choice(fresh if fresh else starts))
        m = np.zeros(T, dtype=bool)
        m[s:s + L] = True
        masks.append(m)
        coverage = coverage + m
        retries += 1

    masks = np.array(masks)
    probs = bb.many([fill_masked(series, m, p.fill) for m in masks])
    return TimeResult(masks, probs, masks.sum(axis=0), retries)


def time_explain(scorer, series, target_class: int, params: TimeParams = TimeParams(),
                 n_jobs: int = 1) -> SaliencyMap:
    res = sample_and_score(scorer, series, params, n_jobs, (target_class,))
    return SaliencyMap(minmax(res.raw(target_class)))


def contrastive_explain(scorer, series, class_pos: int, class_neg: int,
                        params: TimeParams = TimeParams(), n_jobs: int = 1) -> SaliencyMap:
    """Signed map in [-1, 1]: positive where steps favour class_pos over class_neg.

    Both classes are scored from the same sub-samples, so a class contrasted
    with itself gives exactly zero.
    """
    res = sample_and_score(scorer, series, params, n_jobs, (class_pos, class_neg))
    d = res.raw(class_pos) - res.raw(class_neg)
    return SaliencyMap(symmetric_scale(d), signed=True, classes=(class_pos, class_neg))


def top_signed(sal: SaliencyMap, k: int = 5) -> list[tuple[int, float]]:
    """The k time steps with the largest |score|, as (index, signed score)."""
    s = sal.scores.ravel()
    idx = np.argsort(-np.abs(s), kind="stable")[:k]
    return [(int(i), float(s[i])) for i in idx]
