"""Class-preserving variants of a salient region from a linear latent model.

The latent model is a principal subspace over short signal windows. The
salient span is regenerated from codes near the average code of the two
windows flanking it; variants that keep the model's verdict are accepted,
and the spread of accepted codes measures how much the explanation can vary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ExplainError, as_blackbox, check_input


@dataclass
class LatentModel:
    window: int
    mean: np.ndarray          # (L,)
    components: np.ndarray    # (d, L), orthonormal rows
    variances: np.ndarray     # (d,), non-increasing

    @property
    def dims(self) -> int:
        return len(self.variances)

    def encode(self, w: np.ndarray) -> np.ndarray:
        return self.components @ (np.asarray(w, float) - self.mean)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(z, float) @ self.components

    def project(self, w: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(w))


def sliding_windows(series: np.ndarray, L: int, stride: int) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if len(series) < L:
        return np.empty((0, L))
    return np.lib.stride_tricks.sliding_window_view(series, L)[::stride]


def _power_iteration(C: np.ndarray, v: np.ndarray, basis: list[np.ndarray],
                     max_iter: int, tol: float) -> np.ndarray:
    def orth(u):
        for b in basis:
            u = u - (b @ u) * b
        n = np.linalg.norm(u)
        return u / n if n > 0 else u

    v = orth(v)
    for _ in range(max_iter):
        u = orth(C @ v)
        if np.linalg.norm(u) == 0:  # null space: any orthonormal completion will do
            return v
        if 1.0 - abs(u @ v) < tol:
            return u
        v = u
    return v


def fit_latent(corpus: Sequence[np.ndarray], L: int, d: int, seed: int = 0,
               max_iter: int = 5000, tol: float = 1e-14) -> LatentModel:
    """Top-d principal directions of the corpus windows by deflated power iteration."""
    if not 1 <= d <= L:
        raise ExplainError("need 1 <= d <= L")
    stride = max(1, L // 2)
    W = [sliding_windows(s, L, stride) for s in corpus]
    W = np.vstack(W) if W else np.empty((0, L))
    if len(W) < 10 * d:
        raise ExplainError("corpus too small")
    mean = W.mean(axis=0)
    X = W - mean
    C = X.T @ X / len(X)
    rng = np.random.default_rng(seed)

    comps, variances = [], []
    A = C.copy()
    for _ in range(d):
        v = _power_iteration(A, rng.normal(size=L), comps, max_iter, tol)
        lam = float(v @ C @ v)
        comps.append(v)
        variances.append(max(lam, 0.0))
        A = A - lam * np.outer(v, v)
    order = np.argsort(-np.array(variances), kind="stable")
    return LatentModel(L, mean, np.array(comps)[order], np.array(variances)[order])


@dataclass
class Variant:
    series: np.ndarray
    z: np.ndarray
    context_distance: float
    confidence: float
    predicted: int
    accepted: bool


@dataclass
class Region:
    start: int   # bounding span of the salient set
    stop: int
    margin: int  # crossfade width on each side

    @property
    def touched(self) -> tuple[int, int]:
        return self.start - self.margin, self.stop + self.margin


def salient_region(saliency, threshold: float, T: int, L: int) -> Region:
    s = np.asarray(getattr(saliency, "scores", saliency), dtype=float).ravel()
    if len(s) != T:
        raise ExplainError("saliency length does not match series")
    idx = np.flatnonzero(s >= threshold)
    if len(idx) == 0:
        raise ExplainError("nothing to reconstruct")
    a, b = int(idx[0]), int(idx[-1]) + 1
    if a - L < 0 or b + L > T:
        raise ExplainError("region too large")
    return Region(a, b, max(1, L // 8))


def _ramp(c: int) -> np.ndarray:
    return np.arange(1, c + 1) / (c + 1)


def render(series: np.ndarray, region: Region, window: np.ndarray) -> np.ndarray:
    """Tile `window` over the region and crossfade it into the series.

    Tiles start at the region start and advance by L - c, overlapping by c
    samples that are crossfaded; the outer margins blend with the original.
    """
    L = len(window)
    c = region.margin
    a, b = region.start, region.stop
    lo, hi = region.touched
    step = L - c
    n_tiles = max(1, math.ceil((b - a - L) / step) + 1) if step > 0 else 1
    t = np.arange(lo, hi)
    recon = np.zeros(len(t))
    weight = np.zeros(len(t))
    for j in range(n_tiles):
        anchor = a + j * step
        w = np.ones(len(t))
        if j > 0:  # fade in over the overlap with the previous tile
            w[t < anchor] = 0.0
            ov = (t >= anchor) & (t < anchor + c)
            w[ov] = _ramp(c)[: ov.sum()]
        if j < n_tiles - 1:  # fade out over the overlap with the next tile
            nxt = anchor + step
            w[t >= nxt + c] = 0.0
            ov = (t >= nxt) & (t < nxt + c)
            w[ov] *= 1.0 - _ramp(c)[: ov.sum()]
        recon += w * window[(t - anchor) % L]
        weight += w
    recon /= np.where(weight > 0, weight, 1.0)

    beta = np.ones(len(t))
    beta[:c] = _ramp(c)
    beta[len(t) - c:] = 1.0 - _ramp(c)
    out = np.array(series, dtype=float, copy=True)
    out[lo:hi] = (1.0 - beta) * out[lo:hi] + beta * recon
    return out


def context_code(series: np.ndarray, region: Region, model: LatentModel) -> np.ndarray:
    L = model.window
    left = series[region.start - L:region.start]
    right = series[region.stop:region.stop + L]
    return 0.5 * (model.encode(left) + model.encode(right))


def reconstruct_variants(series, saliency, model: LatentModel, scorer, k_variants: int = 16,
                         sigma: float = 0.5, threshold: float = 0.5, max_drop: float = 0.1,
                         seed: int = 0, n_jobs: int = 1) -> list[Variant]:
    series = check_input(series)
    bb = as_blackbox(scorer, n_jobs)
    p0 = bb(series)
    cls = int(np.argmax(p0))
    region = salient_region(saliency, threshold, len(series), model.window)
    z_ctx = context_code(series, region, model)

    rng = np.random.default_rng(seed)
    eps = rng.normal(size=(k_variants, model.dims)) * (sigma * np.sqrt(model.variances))
    eps[0] = 0.0
    zs = z_ctx + eps
    xs = [render(series, region, model.decode(z)) for z in zs]
    probs = bb.many(xs)
    scale = math.sqrt(float(model.variances.sum())) or 1.0
    out = []
    for z, x, p in zip(zs, xs, probs):
        pred = int(np.argmax(p))
        ok = pred == cls and p0[cls] - p[cls] <= max_drop
        out.append(Variant(x, z, float(np.linalg.norm(z - z_ctx)) / scale, float(p[cls]),
                           pred, bool(ok)))
    return out


def variation_score(variants: Sequence[Variant], variances: np.ndarray) -> float:
    """Mean pairwise distance of accepted codes over sqrt(total latent variance)."""
    Z = np.array([v.z for v in variants if v.accepted])
    if len(Z) == 0:
        raise ExplainError("no variation measurable")
    if len(Z) == 1:
        return 0.0
    total = float(np.sum(variances))
    if total <= 0:
        return 0.0
    i, j = np.triu_indices(len(Z), k=1)
    dist = np.linalg.norm(Z[i] - Z[j], axis=1)
    return float(dist.mean() / math.sqrt(total))


def format_bundle(series: np.ndarray, region: Region, variants: Sequence[Variant],
                  score: float | None) -> str:
    """Structured text document: original, region, per-variant records, score."""
    doc = {
        "format": "canoa-variants/1",
        "original": [float(v) for v in series],
        "region": {"start": region.start, "stop": region.stop, "margin": region.margin},
        "variants": [{"z": [float(a) for a in v.z], "accepted": v.accepted,
                      "confidence": v.confidence, "context_distance": v.context_distance,
                      "series": [float(a) for a in v.series]} for v in variants],
        "variation_score": score,
    }
    return json.dumps(doc, indent=1) + "\n"
