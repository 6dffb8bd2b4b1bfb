import numpy as np
import pytest

from canoa.explain.core import ExplainError
from canoa.explain.synthetic import ConstantScorer, KeyedScorer, TwinScorer, TwoKeyScorer, reference_series
from canoa.explain.timeseries import (
    TimeParams, contrastive_explain, draw_keep_mask, fill_masked, runs, sample_and_score,
    time_explain, top_signed,
)

X = reference_series(128, 0)


def test_runs():
    assert runs(np.array([0, 1, 1, 0, 1], bool)) == [(1, 3), (4, 5)]
    assert runs(np.zeros(4, bool)) == []


def test_every_mask_is_well_formed():
    p = TimeParams(n_samples=300, seed=5).resolved(128)
    res = sample_and_score(KeyedScorer(X), X, TimeParams(n_samples=300, seed=5))
    base = res.masks[:300]
    for m in base:
        rs = runs(m)
        assert 1 <= len(rs) <= p.max_windows
        assert all(p.min_len <= b - a <= p.max_len for a, b in rs)
    for m in res.masks[300:]:  # coverage retries add one window each
        (a, b), = runs(m)
        assert p.min_len <= b - a <= p.max_len
    assert res.coverage.min() >= 1


def test_draw_keep_mask_never_merges():
    rng = np.random.default_rng(0)
    for _ in range(500):
        m = draw_keep_mask(rng, 40, 3, 4, 12)
        assert all(4 <= b - a <= 12 for a, b in runs(m))


def test_fill_modes():
    x = np.array([0.0, 5.0, 5.0, 3.0, 9.0])
    keep = np.array([1, 0, 0, 1, 0], bool)
    np.testing.assert_allclose(fill_masked(x, keep), [0, 1, 2, 3, 3])
    np.testing.assert_allclose(fill_masked(x, keep, "mean"), [0, 4.4, 4.4, 3, 4.4])


def test_constant_scorer_zero():
    sal = time_explain(ConstantScorer(), X, 1, TimeParams(n_samples=200))
    assert np.all(sal.scores == 0.0)


def test_keyed_region_dominates():
    sal = time_explain(KeyedScorer(X), X, 1, TimeParams(n_samples=1000, seed=1))
    inside = sal.scores[40:60].mean()
    outside = np.r_[sal.scores[:40], sal.scores[60:]].mean()
    assert inside >= 3 * outside
    assert sal.scores.min() == 0.0 and sal.scores.max() == 1.0


def test_single_window_scores_its_weight():
    p = TimeParams(n_samples=1, min_len=10, max_len=10, max_windows=1, seed=3)
    res = sample_and_score(KeyedScorer(X), X, p)
    first = res.masks[0]
    (a, b), = runs(first)
    raw = res.raw(1)
    # steps kept only by the first draw score exactly its weight
    only = first & (res.coverage == 1)
    np.testing.assert_allclose(raw[only], res.probs[0, 1])
    assert res.n_retries > 0 and res.coverage.min() >= 1
    # independent ratio computation
    num = res.probs[:, 1] @ res.masks
    np.testing.assert_allclose(raw, num / res.coverage)


def test_deterministic_and_threads():
    p = TimeParams(n_samples=200, seed=9)
    a = time_explain(KeyedScorer(X), X, 1, p)
    b = time_explain(KeyedScorer(X), X, 1, p, n_jobs=4)
    np.testing.assert_allclose(a.scores, b.scores, atol=1e-9)
    c = time_explain(KeyedScorer(X), X, 1, p)
    assert np.array_equal(a.scores, c.scores)


def test_contrastive_two_key():
    sal = contrastive_explain(TwoKeyScorer(X), X, 0, 1, TimeParams(n_samples=1000, seed=2))
    d = sal.scores
    assert sal.signed and sal.classes == (0, 1)
    assert d[40:60].mean() > 0 and d[80:100].mean() < 0
    keyed = np.abs(np.r_[d[40:60], d[80:100]]).mean()
    rest = np.abs(np.r_[d[:40], d[60:80], d[100:]]).mean()
    assert keyed >= 3 * rest
    assert np.abs(d).max() == pytest.approx(1.0)
    top = top_signed(sal, 5)
    assert len(top) == 5 and all(abs(v) <= 1 for _, v in top)


def test_contrastive_identical_classes_is_zero():
    sal = contrastive_explain(TwinScorer(KeyedScorer(X)), X, 1, 2, TimeParams(n_samples=300))
    assert np.all(sal.scores == 0.0)
    sal = contrastive_explain(KeyedScorer(X), X, 1, 1, TimeParams(n_samples=100))
    assert np.all(sal.scores == 0.0)


def test_errors():
    with pytest.raises(ExplainError, match="series too short"):
        time_explain(KeyedScorer(X), X[:20], 1, TimeParams(max_len=32))
    with pytest.raises(ExplainError, match="insufficient coverage"):
        time_explain(KeyedScorer(X), X, 1, TimeParams(n_samples=1, max_retries=0))
    with pytest.raises(ExplainError, match="class out of range"):
        time_explain(KeyedScorer(X), X, 5)
    with pytest.raises(ExplainError):
        time_explain(KeyedScorer(X), X, 1, TimeParams(fill="zero"))


def test_ratio_non_decreasing_in_samples():
    def ratio(K, seed):
        s = time_explain(KeyedScorer(X), X, 1, TimeParams(n_samples=K, seed=seed)).scores
        return s[40:60].mean() / np.r_[s[:40], s[60:]].mean()

    means = [np.mean([ratio(K, seed) for seed in range(20)]) for K in (100, 500, 2000)]
    assert means[0] <= means[1] <= means[2]
