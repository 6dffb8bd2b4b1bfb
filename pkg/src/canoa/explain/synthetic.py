"""Analytic scorers with known discriminative regions.

These stand in for trained models when an explainer needs a ground truth:
the region that drives each class is fixed by construction.
"""

from __future__ import annotations

import numpy as np


def reference_series(T: int = 128, seed: int = 0) -> np.ndarray:
    """Zero-mean-ish series whose every sample sits at least 1 away from the mean."""
    rng = np.random.default_rng(seed)
    x = rng.choice([-1.0, 1.0], size=T) * (1.0 + np.abs(rng.normal(size=T)))
    return x - x.mean()


class KeyedScorer:
    """Class-1 confidence = mean retained fraction of `reference` over `region`.

    Retained fraction at t is 1 - |x(t) - ref(t)| / |ref(t) - mean(ref)|,
    clipped to [0, 1]; a soft mask m applied against the mean baseline gives
    exactly m(t).
    """

    def __init__(self, reference: np.ndarray, region: tuple[int, int] = (40, 60)):
        self.reference = np.asarray(reference, dtype=float)
        self.region = region
        self.fill = float(self.reference.mean())
        self._scale = np.abs(self.reference - self.fill)

    def retained(self, x: np.ndarray) -> np.ndarray:
        a, b = self.region
        x = np.asarray(x, dtype=float)
        r = 1.0 - np.abs(x[a:b] - self.reference[a:b]) / self._scale[a:b]
        return np.clip(r, 0.0, 1.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        c = float(self.retained(x).mean())
        return np.array([1.0 - c, c])


class TwoKeyScorer:
    """Three classes: class 0 keyed to `region_a`, class 1 to `region_b`."""

    def __init__(self, reference: np.ndarray, region_a=(40, 60), region_b=(80, 100)):
        self.a = KeyedScorer(reference, region_a)
        self.b = KeyedScorer(reference, region_b)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        ca = float(self.a.retained(x).mean())
        cb = float(self.b.retained(x).mean())
        return np.array([ca / 2, cb / 2, 1.0 - (ca + cb) / 2])


class ConstantScorer:
    def __init__(self, probs=(0.3, 0.7)):
        self.probs = np.asarray(probs, dtype=float)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.probs.copy()


class TwinScorer:
    """Wraps a two-class scorer into three classes where 1 and 2 always agree."""

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, x):
        p = self.inner(x)
        return np.array([p[0], p[1] / 2, p[1] / 2])


# Texture task ----------------------------------------------------------------

TEXTURE_FREQS = (2 / 16, 3 / 16, 4 / 16)


def texture_series(T: int = 128, rng=None, noise: float = 0.05) -> np.ndarray:
    """Sum of fixed-frequency cosines with random phase and amplitude."""
    rng = np.random.default_rng(rng)
    t = np.arange(T)
    x = np.zeros(T)
    for f in TEXTURE_FREQS:
        x += rng.uniform(0.6, 1.2) * np.cos(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return x + noise * rng.normal(size=T)


def texture_corpus(n: int = 200, T: int = 128, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [texture_series(T, rng) for _ in range(n)]


class TextureScorer:
    """Class-1 confidence from oscillation energy inside `region`.

    Energy is the summed squared second difference, which is zero for the
    straight-line fills used when masking; `floor` sets how much energy
    counts as evidence.
    """

    def __init__(self, region: tuple[int, int] = (40, 60), floor: float | None = None):
        self.region = region
        if floor is None:
            ref = np.mean([self.energy(s) for s in texture_corpus(50, seed=12345)])
            floor = ref / 50.0
        self.floor = floor

    def energy(self, x: np.ndarray) -> float:
        a, b = self.region
        x = np.asarray(x, dtype=float)
        lo, hi = max(a, 1), min(b, len(x) - 1)
        d2 = x[lo - 1:hi - 1] - 2 * x[lo:hi] + x[lo + 1:hi + 1]
        return float(d2 @ d2)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        e = self.energy(x)
        c = e / (e + self.floor)
        return np.array([1.0 - c, c])
