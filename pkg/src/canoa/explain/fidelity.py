"""Deletion and insertion curves for saliency maps."""

from __future__ import annotations

import numpy as np

from .core import ExplainError, as_blackbox, check_class, check_input
from .mask import baseline_for


def _auc(y: np.ndarray) -> float:
    f = np.linspace(0.0, 1.0, len(y))
    return float(np.sum((y[1:] + y[:-1]) * np.diff(f)) / 2.0)


def deletion_insertion(scorer, x, saliency, target_class: int, steps: int = 33,
                       corpus_mean=None) -> dict[str, float]:
    """Trapezoidal AUC of target confidence as top-salient elements are removed / restored.

    Step i handles round(i / (steps - 1) * N) elements, most salient first.
    """
    if steps < 2:
        raise ExplainError("too few steps")
    x = check_input(x)
    sal = np.asarray(getattr(saliency, "scores", saliency), dtype=float)
    if sal.shape != x.shape:
        raise ExplainError("saliency shape does not match input")
    bb = as_blackbox(scorer)
    check_class(bb, x, target_class)
    base = baseline_for(x, corpus_mean)
    order = np.argsort(-sal.ravel(), kind="stable")
    n = x.size
    dels, ins = [], []
    for i in range(steps):
        k = int(round(i / (steps - 1) * n))
        idx = order[:k]
        d = x.ravel().copy()
        d[idx] = base.ravel()[idx]
        r = base.ravel().copy()
        r[idx] = x.ravel()[idx]
        dels.append(bb(d.reshape(x.shape))[target_class])
        ins.append(bb(r.reshape(x.shape))[target_class])
    return {"deletion_auc": _auc(np.array(dels)), "insertion_auc": _auc(np.array(ins)),
            "deletion_curve": dels, "insertion_curve": ins}
