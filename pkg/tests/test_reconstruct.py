import json
import math

import numpy as np
import pytest

from canoa.explain.core import ExplainError
from canoa.explain.reconstruct import (
    LatentModel, Region, Variant, fit_latent, format_bundle, reconstruct_variants, render,
    salient_region, sliding_windows, variation_score,
)
from canoa.explain.synthetic import KeyedScorer, reference_series

from oracles import subspace_angle


def _two_factor_corpus(L=16, n=40, T=64, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(L, 2)))
    u, v = q[:, 0], q[:, 1]
    corpus = []
    for _ in range(n):
        tiles = [3 * rng.normal() * u + rng.normal() * v for _ in range(T // L)]
        corpus.append(np.concatenate(tiles))
    return corpus, u, v


def test_matches_eigendecomposition():
    rng = np.random.default_rng(1)
    corpus = [np.cumsum(rng.normal(size=200)) for _ in range(5)]
    m = fit_latent(corpus, 12, 4, seed=0)
    W = np.vstack([sliding_windows(s, 12, 6) for s in corpus])
    C = np.cov(W.T, bias=True)
    vals, vecs = np.linalg.eigh(C)
    np.testing.assert_allclose(m.variances, vals[::-1][:4], rtol=1e-6)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(4), atol=1e-6)
    assert np.all(np.diff(m.variances) <= 0)
    assert subspace_angle(m.components.T, vecs[:, ::-1][:, :4]) < 1e-4


def test_subspace_recovery():
    corpus, u, v = _two_factor_corpus()
    m = fit_latent(corpus, 16, 2)
    assert subspace_angle(m.components.T, np.c_[u, v]) < 1e-3


def test_constant_corpus():
    m = fit_latent([np.full(100, 2.5)] * 3, 8, 2)
    np.testing.assert_allclose(m.mean, 2.5)
    assert np.all(m.variances == 0)


def test_complete_basis_and_error_monotone():
    rng = np.random.default_rng(2)
    corpus = [rng.normal(size=120) for _ in range(4)]
    W = np.vstack([sliding_windows(s, 6, 3) for s in corpus])
    errs = []
    for d in range(1, 7):
        m = fit_latent(corpus, 6, d)
        errs.append(np.mean([np.sum((w - m.project(w)) ** 2) for w in W]))
    assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-12


def test_projection_residual_orthogonal():
    corpus, _, _ = _two_factor_corpus(seed=3)
    m = fit_latent(corpus, 16, 3)
    w = np.random.default_rng(4).normal(size=16)
    r = (w - m.mean) - (m.project(w) - m.mean)
    assert np.abs(m.components @ r).max() < 1e-6


def test_corpus_too_small():
    with pytest.raises(ExplainError, match="corpus too small"):
        fit_latent([np.zeros(20)], 8, 2)


def test_region_checks():
    s = np.zeros(64)
    with pytest.raises(ExplainError, match="nothing to reconstruct"):
        salient_region(s, 0.5, 64, 8)
    s[2:5] = 1
    with pytest.raises(ExplainError, match="region too large"):
        salient_region(s, 0.5, 64, 8)
    s[:] = 0
    s[20:30] = 1
    r = salient_region(s, 0.5, 64, 8)
    assert (r.start, r.stop, r.margin) == (20, 30, 1)


def test_render_only_touches_region():
    rng = np.random.default_rng(0)
    x = rng.normal(size=100)
    reg = Region(30, 61, 2)
    y = render(x, reg, rng.normal(size=16))
    lo, hi = reg.touched
    assert np.array_equal(y[:lo], x[:lo]) and np.array_equal(y[hi:], x[hi:])
    assert not np.allclose(y[reg.start:reg.stop], x[reg.start:reg.stop])


def test_self_reconstruction():
    # every length-16 window of a period-8 sinusoid lies in span{cos, sin}
    rng = np.random.default_rng(5)
    t = np.arange(128)
    w = 2 * np.pi / 8
    corpus = [rng.uniform(0.5, 2) * np.cos(w * t + rng.uniform(0, 2 * np.pi)) for _ in range(20)]
    m = fit_latent(corpus, 16, 2)
    x = 1.3 * np.cos(w * t + 0.4)
    sal = np.zeros(128)
    sal[48:64] = 1.0
    vs = reconstruct_variants(x, sal, m, KeyedScorer(x + 0.01 * np.sign(x), (48, 64)),
                              k_variants=4, sigma=0.0)
    np.testing.assert_allclose(vs[0].series, x, atol=1e-9)
    assert vs[0].accepted and vs[0].context_distance == 0.0


def test_scorer_keyed_outside_accepts_all():
    x = reference_series(128, 1)
    rng = np.random.default_rng(1)
    m = fit_latent([rng.normal(size=128) for _ in range(20)], 16, 4)
    sal = np.zeros(128)
    sal[60:80] = 1.0
    vs = reconstruct_variants(x, sal, m, KeyedScorer(x, (0, 20)), k_variants=8, sigma=1.0, seed=3)
    assert all(v.accepted for v in vs)
    lo, hi = 60 - 2, 80 + 2
    for v in vs:
        assert np.array_equal(v.series[:lo], x[:lo]) and np.array_equal(v.series[hi:], x[hi:])


def test_determinism():
    x = reference_series(128, 1)
    rng = np.random.default_rng(1)
    m = fit_latent([rng.normal(size=128) for _ in range(20)], 16, 4)
    sal = np.zeros(128)
    sal[60:80] = 1.0
    a = reconstruct_variants(x, sal, m, KeyedScorer(x), seed=4)
    b = reconstruct_variants(x, sal, m, KeyedScorer(x), seed=4, n_jobs=3)
    for va, vb in zip(a, b):
        assert np.array_equal(va.series, vb.series) and va.accepted == vb.accepted


def _variant(z, ok=True):
    return Variant(np.zeros(3), np.asarray(z, float), 0.0, 1.0, 0, ok)


def test_variation_score_closed_forms():
    d = 5
    assert variation_score([_variant(np.zeros(d))], np.ones(d)) == 0.0
    e1 = np.eye(d)[0]
    score = variation_score([_variant(np.zeros(d)), _variant(e1)], np.ones(d))
    assert score == pytest.approx(1 / math.sqrt(d))
    assert variation_score([_variant(np.zeros(d)), _variant(e1, False)], np.ones(d)) == 0.0
    with pytest.raises(ExplainError, match="no variation measurable"):
        variation_score([_variant(e1, False)], np.ones(d))


def test_bundle_document():
    x = np.arange(4.0)
    doc = json.loads(format_bundle(x, Region(1, 2, 1), [_variant([0.5, 1.0])], 0.0))
    assert doc["format"] == "canoa-variants/1"
    assert doc["region"] == {"start": 1, "stop": 2, "margin": 1}
    assert doc["variants"][0]["accepted"] is True and doc["variants"][0]["z"] == [0.5, 1.0]
