"""Saliency by iterative optimization of a keep-probability mask.

Each iteration draws a batch of random binary masks from the current
keep probabilities, scores the masked inputs, and moves the mask toward
the confidence-weighted average of the masks that kept each element.
An L1 shrinkage step pulls uninformative elements down, so elements that
keep paying off for the target class are retained and spread to their
neighbours by the smoothing kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.ndimage import uniform_filter

from .core import ExplainError, SaliencyMap, as_blackbox, check_class, check_input, minmax, top_fraction


@dataclass(frozen=True)
class MaskOptParams:
    batch: int = 64
    max_iter: int = 50
    p_min: float = 0.1
    p_max: float = 0.9
    kernel: int = 3
    shrink: float = 0.01
    rate: float = 0.3
    patience: int = 5
    top_q: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.p_min < self.p_max < 1:
            raise ValueError("need 0 < p_min < p_max < 1")
        if not 0 < self.rate <= 1:
            raise ValueError("rate must be in (0, 1]")
        if self.shrink < 0:
            raise ValueError("shrink must be non-negative")
        if self.batch < 1 or self.max_iter < 1 or self.kernel < 1 or self.patience < 1:
            raise ValueError("batch, max_iter, kernel and patience must be positive")


def baseline_for(x: np.ndarray, corpus_mean: np.ndarray | None = None) -> np.ndarray:
    if corpus_mean is not None:
        return np.broadcast_to(np.asarray(corpus_mean, dtype=float), x.shape)
    return np.full(x.shape, float(x.mean()))


def draw_masks(rng: np.random.Generator, keep: np.ndarray, batch: int, kernel: int) -> np.ndarray:
    """Binary masks with per-element keep probability, box-smoothed."""
    m = (rng.random((batch,) + keep.shape) < keep).astype(float)
    if kernel > 1:
        size = (1,) + (kernel,) * keep.ndim
        m = uniform_filter(m, size=size, mode="nearest")
    return m


def batch_estimate(bb, x, baseline, target, masks) -> np.ndarray:
    """Confidence-weighted mean of the masks, per element."""
    xs = [m * x + (1.0 - m) * baseline for m in masks]
    w = bb.many(xs)[:, target]
    num = np.tensordot(w, masks, axes=1)
    return num / np.maximum(masks.sum(axis=0), 1.0)


def optimize_mask(scorer, x, target_class: int, params: MaskOptParams = MaskOptParams(),
                  corpus_mean=None, n_jobs: int = 1,
                  callback: Callable[[int, np.ndarray, int], None] | None = None
                  ) -> tuple[SaliencyMap, int]:
    """Return (normalized saliency, number of scorer evaluations).

    `callback(iteration, mask, evals)` is invoked after each update; the
    evaluation count excludes the single validation call on the raw input.
    """
    x = check_input(x)
    bb = as_blackbox(scorer, n_jobs)
    check_class(bb, x, target_class)
    bb.evals = 0
    baseline = baseline_for(x, corpus_mean)
    rng = np.random.default_rng(params.seed)

    # start flat at 0.5: a random start would survive into the output and
    # break the exact null result for scorers that ignore their input
    s = np.full(x.shape, 0.5)
    top = top_fraction(s, params.top_q)
    stable = 0
    for it in range(params.max_iter):
        keep = np.clip(s, params.p_min, params.p_max)
        masks = draw_masks(rng, keep, params.batch, params.kernel)
        est = batch_estimate(bb, x, baseline, target_class, masks)
        s = (1.0 - params.rate) * s + params.rate * est
        s = np.clip(np.maximum(s - params.shrink, 0.0), 0.0, 1.0)
        if callback is not None:
            callback(it, s, bb.evals)
        new_top = top_fraction(s, params.top_q)
        stable = stable + 1 if new_top == top else 0
        top = new_top
        if stable >= params.patience:
            break
    return SaliencyMap(minmax(s)), bb.evals


def single_pass_saliency(scorer, x, target_class: int, n_masks: int, p: float = 0.5,
                         kernel: int = 3, seed: int = 0, corpus_mean=None,
                         n_jobs: int = 1) -> tuple[SaliencyMap, int]:
    """Fixed-probability randomized estimate: one batch, no iteration."""
    x = check_input(x)
    bb = as_blackbox(scorer, n_jobs)
    check_class(bb, x, target_class)
    bb.evals = 0
    rng = np.random.default_rng(seed)
    masks = draw_masks(rng, np.full(x.shape, p), n_masks, kernel)
    est = batch_estimate(bb, x, baseline_for(x, corpus_mean), target_class, masks)
    return SaliencyMap(minmax(est)), bb.evals


def raw_estimate(scorer, x, target_class, masks, corpus_mean=None) -> np.ndarray:
    bb = as_blackbox(scorer)
    x = check_input(x)
    if masks.shape[1:] != x.shape:
        raise ExplainError("mask shape mismatch")
    return batch_estimate(bb, x, baseline_for(x, corpus_mean), target_class, masks)
