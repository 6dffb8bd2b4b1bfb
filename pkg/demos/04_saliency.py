# Black-box saliency on an analytic scorer whose answer is known: class 1
# depends only on samples 40..59 of a 128-sample series.

import numpy as np

from canoa.explain.fidelity import deletion_insertion
from canoa.explain.mask import MaskOptParams, optimize_mask, single_pass_saliency
from canoa.explain.synthetic import KeyedScorer, TwoKeyScorer, reference_series
from canoa.explain.timeseries import TimeParams, contrastive_explain, time_explain, top_signed

x = reference_series(128, seed=3)
scorer = KeyedScorer(x)


def bar(s, width=64):
    # one character per two samples
    levels = " .:-=+*#%@"
    s = np.asarray(s).reshape(-1, len(s) // width).mean(axis=1)
    return "".join(levels[min(int(v * 10), 9)] for v in s)


mask, evals = optimize_mask(scorer, x, 1, MaskOptParams(seed=3))
print(f"mask optimizer ({evals} evaluations), argmax {mask.argmax()[0]}")
print("  |" + bar(mask.scores) + "|")

rise, n = single_pass_saliency(scorer, x, 1, 256, seed=3)
print(f"single pass ({n} evaluations), argmax {rise.argmax()[0]}")
print("  |" + bar(rise.scores) + "|")

tm = time_explain(scorer, x, 1, TimeParams(seed=3))
print(f"windowed sub-samples, argmax {tm.argmax()[0]}")
print("  |" + bar(tm.scores) + "|")
print("                     ^ 40          ^ 60")

# Fidelity: deleting the most salient samples first should kill the score fast.
for name, sal in (("mask", mask.scores), ("time", tm.scores), ("random", np.random.default_rng(0).random(128))):
    r = deletion_insertion(scorer, x, sal, 1)
    print(f"{name:7s} deletion AUC {r['deletion_auc']:.3f}  insertion AUC {r['insertion_auc']:.3f}")

# Contrast two classes keyed to different spans.
two = TwoKeyScorer(x, (40, 60), (80, 100))
c = contrastive_explain(two, x, 0, 1, TimeParams(seed=3))
print("contrastive 0 vs 1, strongest points:", [(i, round(v, 2)) for i, v in top_signed(c, 5)])
same = contrastive_explain(two, x, 0, 0, TimeParams(seed=3, n_samples=200))
print("class against itself is all zero:", not same.scores.any())
