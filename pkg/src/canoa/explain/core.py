"""Shared pieces for the black-box explainers."""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np


class ExplainError(ValueError):
    pass


class Scorer(Protocol):
    def __call__(self, x: np.ndarray) -> np.ndarray: ...


class BlackBox:
    """Forward-only access to a model: input in, class probabilities out.

    This is the only handle explainers get on the model. It validates the
    output distribution and counts evaluations.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n_jobs: int = 1):
        self._fn = fn
        self.n_jobs = n_jobs
        self.evals = 0
        self._lock = threading.Lock()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        p = np.asarray(self._fn(x), dtype=float)
        with self._lock:
            self.evals += 1
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ExplainError("scorer must return a probability vector")
        return p

    def many(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        """Evaluate a batch; row order follows input order whatever n_jobs is."""
        if self.n_jobs > 1 and len(xs) > 1:
            with ThreadPoolExecutor(self.n_jobs) as ex:
                rows = list(ex.map(self, xs))
        else:
            rows = [self(x) for x in xs]
        return np.vstack(rows)

    def n_classes(self, x: np.ndarray) -> int:
        return len(self(x))


def as_blackbox(scorer, n_jobs: int = 1) -> BlackBox:
    if isinstance(scorer, BlackBox):
        scorer.n_jobs = n_jobs
        return scorer
    return BlackBox(scorer, n_jobs)


def check_class(bb: BlackBox, x: np.ndarray, target: int) -> np.ndarray:
    p = bb(x)
    if not (0 <= int(target) < len(p)) or int(target) != target:
        raise ExplainError("class out of range")
    return p


def check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise ExplainError("invalid input")
    return x


def minmax(s: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; constant maps become all zeros."""
    s = np.asarray(s, dtype=float)
    lo, hi = float(s.min()), float(s.max())
    # ratio estimators of a constant weight differ by a few ulps across elements
    if hi - lo <= 1e-9 * max(1.0, abs(hi)):
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def symmetric_scale(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    m = float(np.max(np.abs(d)))
    if m <= 1e-12:
        return np.zeros_like(d)
    return d / m


@dataclass
class SaliencyMap:
    scores: np.ndarray
    signed: bool = False
    classes: tuple[int, ...] = ()

    @property
    def shape(self):
        return self.scores.shape

    def argmax(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(np.argmax(self.scores), self.shape))

    def top(self, q: float = 0.1) -> np.ndarray:
        """Flat indices of the top fraction q of elements, best first."""
        k = max(1, int(round(q * self.scores.size)))
        return np.argsort(-self.scores.ravel(), kind="stable")[:k]


def top_fraction(s: np.ndarray, q: float) -> frozenset[int]:
    k = max(1, int(round(q * s.size)))
    return frozenset(np.argsort(-s.ravel(), kind="stable")[:k].tolist())


def write_saliency(sal: SaliencyMap, path: str | Path, summary: dict | None = None) -> None:
    """Score file (header + one value per line) and a JSON summary next to it."""
    path = Path(path)
    head = f"# shape={'x'.join(map(str, sal.shape))}"
    if sal.signed:
        head += " signed=1 classes=" + ",".join(map(str, sal.classes))
    with open(path, "w") as fh:
        fh.write(head + "\n")
        np.savetxt(fh, sal.scores.ravel(), fmt="%.9f")
    info = {"shape": list(sal.shape), "argmax": list(sal.argmax()),
            "top_q": sorted(int(i) for i in sal.top(0.1))}
    if sal.signed:
        info["classes"] = list(sal.classes)
    info.update(summary or {})
    path.with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def read_saliency(path: str | Path) -> SaliencyMap:
    with open(path) as fh:
        head = fh.readline()
        meta = dict(tok.split("=", 1) for tok in head[1:].split())
        vals = np.loadtxt(fh, ndmin=1)
    shape = tuple(int(v) for v in meta["shape"].split("x"))
    classes = tuple(int(c) for c in meta.get("classes", "").split(",") if c)
    return SaliencyMap(vals.reshape(shape), meta.get("signed") == "1", classes)


def write_plot_csv(series: np.ndarray, scores: np.ndarray, path: str | Path,
                   t: np.ndarray | None = None) -> None:
    series = np.asarray(series, float).ravel()
    scores = np.asarray(scores, float).ravel()
    t = np.arange(len(series)) if t is None else np.asarray(t, float)
    with open(path, "w") as fh:
        fh.write("t,value,score\n")
        for a, b, c in zip(t, series, scores):
            fh.write(f"{a:.9g},{b:.9g},{c:.9g}\n")
