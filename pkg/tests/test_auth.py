import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from canoa.auth import (
    ALERT, AUTHENTIC, FEATURE_NAMES, AuthError, AuthVerdict, DegenerateLabels, Metrics,
    Standardizer, UnknownId, authenticate, decide, evaluate, extract_features,
    extract_features_batch, fit, fit_classifier, format_verdicts, load_models, parse_verdicts,
    roc, save_models,
)
from canoa.bus import Interval
from canoa.can import CanFrame, serialize_frame
from canoa.power import PowerParams, synthesize
from oracles import naive_band_energy, naive_moments


class TestFeatures:
    def test_constant(self):
        f = dict(zip(FEATURE_NAMES, extract_features([3.0] * 16)))
        assert f["mean"] == 3.0 and f["std"] == 0 and f["peak_to_peak"] == 0
        assert f["skewness"] == 0 and f["kurtosis"] == 0
        assert f["rms"] == pytest.approx(3.0)

    def test_low_band_sinusoid(self):
        n = 96
        x = np.sin(2 * np.pi * 3 * np.arange(n) / n)
        f = dict(zip(FEATURE_NAMES, extract_features(x)))
        assert f["band_energy_low"] > 1e6 * (f["band_energy_mid"] + f["band_energy_high"] + 1e-30)

    def test_too_short(self):
        with pytest.raises(AuthError, match="insufficient samples"):
            extract_features([1.0] * 7)

    @settings(max_examples=60)
    @given(arrays(float, st.integers(8, 64), elements=st.floats(-1e3, 1e3)))
    def test_moments_match_naive(self, x):
        f = dict(zip(FEATURE_NAMES, extract_features(x)))
        ref = naive_moments(x)
        if ref["std"] < 1e-6 * max(1.0, abs(ref["mean"])):
            return  # near-constant windows: higher moments are ill-conditioned
        for k, v in ref.items():
            assert f[k] == pytest.approx(v, rel=1e-9, abs=1e-9 * max(1.0, abs(ref["mean"])))

    def test_band_energy_matches_direct_dft(self):
        rng = np.random.default_rng(1)
        for n in (8, 31, 250):
            x = rng.normal(size=n)
            f = extract_features(x)
            np.testing.assert_allclose(f[6:], naive_band_energy(x), rtol=1e-9)

    def test_batch_matches_single(self):
        W = np.random.default_rng(2).normal(size=(5, 40))
        B = extract_features_batch(W)
        for i in range(5):
            np.testing.assert_array_equal(B[i], extract_features(W[i]))


class TestStandardizer:
    def test_idempotent_and_invertible(self):
        rng = np.random.default_rng(0)
        X = rng.normal(3, 2, size=(100, 4))
        X[:, 2] = 5.0  # constant column is dropped
        s = Standardizer.fit(X)
        assert list(s.mask) == [True, True, False, True]
        Z = s.transform(X)
        np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(Z.std(axis=0), 1)
        s2 = Standardizer.fit(Z)
        np.testing.assert_allclose(s2.transform(Z), Z, atol=1e-12)
        np.testing.assert_allclose(s.inverse(Z), X)
        assert np.all(s.std > 0)


class TestFit:
    def test_separable(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 2))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
        X[y == 1] += 0.5
        m = fit_classifier(X, y)
        acc = np.mean((m.predict_proba(X) > 0.5) == y)
        assert acc == 1.0

    def test_loss_monotone(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(300, 9)) * [1, 10, 100, 1, 1, 1, 1e3, 1, 1]
        y = (X[:, 0] + rng.normal(size=300) > 0).astype(float)
        m = fit_classifier(X, y)
        h = np.array(m.loss_history)
        assert np.all(np.diff(h) <= 1e-12)
        assert h[-1] < h[0]

    def test_shuffled_labels_chance(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(2000, 9))
        y = (X[:, 0] > 0).astype(float)
        y_shuf = rng.permutation(y)
        m = fit_classifier(X[:1000], y_shuf[:1000])
        acc = np.mean((m.predict_proba(X[1000:]) > 0.5) == y_shuf[1000:])
        assert 0.4 <= acc <= 0.6

    def test_degenerate(self):
        with pytest.raises(DegenerateLabels, match="degenerate labels"):
            fit({"A": (np.ones((10, 9)), np.zeros(10))})

    def test_monotone_in_logit(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(100, 3))
        m = fit_classifier(X, (X[:, 0] > 0).astype(float))
        z, p = m.logit(X), m.predict_proba(X)
        order = np.argsort(z)
        assert np.all(np.diff(p[order]) >= 0)


BR = 500_000


def _two_ecu_setup(noise=0.0):
    """A transmits one frame, B idles; tiny traces for construction checks."""
    frame = CanFrame(0x10, 8, bytes(range(8)), 400e-6)
    bits = tuple(serialize_frame(frame))
    iv = Interval(frame.timestamp, frame.timestamp + len(bits) / BR, bits, 0)
    p = PowerParams(noise_sigma_mw=noise, drift_mw_per_s=0.0)
    dur = 0.002
    tr_busy = synthesize(p, [iv], dur, 1e6, 0, "A", BR)
    tr_idle = synthesize(p, [], dur, 1e6, 1, "B", BR)
    return frame, iv, tr_busy, tr_idle


def _toy_models():
    # train both ECUs on synthetic windows: idle vs centred-frame power
    rng = np.random.default_rng(0)
    tx = 520 + rng.normal(0, 4, size=(200, 250))
    idle = 500 + rng.normal(0, 4, size=(200, 250))
    X = extract_features_batch(np.vstack([tx, idle]))
    y = np.r_[np.ones(200), np.zeros(200)]
    return fit({"A": (X, y), "B": (X, y)})


class TestAuthenticate:
    def test_legitimate(self):
        frame, _, a, b = _two_ecu_setup()
        models = _toy_models()
        v = authenticate(frame, {"A": a, "B": b}, models, {0x10: "A"})
        assert v.p_claimed > 0.99 and v.p_others < 0.01
        assert v.decision == AUTHENTIC

    def test_impersonated(self):
        frame, _, a, b = _two_ecu_setup()
        models = _toy_models()
        # B claims the ID, but only A's trace shows transmit power
        v = authenticate(frame, {"A": a, "B": b}, models, {0x10: "B"})
        assert v.p_claimed < 0.01 and v.decision == ALERT

    def test_unknown_id(self):
        frame, _, a, b = _two_ecu_setup()
        with pytest.raises(UnknownId, match="unknown id"):
            authenticate(frame, {"A": a, "B": b}, _toy_models(), {0x11: "A"})

    def test_decide_rule(self):
        frames = [CanFrame(1, 0), CanFrame(2, 0)]
        probs = {"A": np.array([0.9, 0.2]), "B": np.array([0.3, 0.95])}
        v = decide(frames, probs, {1: "A", 2: "A"}, theta=0.5)
        assert v[0].score == pytest.approx(0.6) and v[0].decision == AUTHENTIC
        assert v[1].score == pytest.approx(-0.75) and v[1].decision == ALERT
        v = decide(frames, probs, {1: "A", 2: "A"}, theta=0.7)
        assert v[0].decision == ALERT


def _verdict(decision, score=0.0):
    return AuthVerdict(0, 0.0, 1, "A", 0.0, 0.0, score, decision)


class TestEvaluate:
    def test_all_correct(self):
        m = evaluate([_verdict(ALERT), _verdict(AUTHENTIC)], [True, False])
        assert m.fpr == 0 and m.recall == 1 and m.accuracy == 1

    def test_all_alert_clean(self):
        m = evaluate([_verdict(ALERT)] * 4, [False] * 4)
        assert m.fpr == 1

    def test_brute_force_counts(self):
        rng = np.random.default_rng(5)
        dec = rng.random(500) < 0.3
        truth = rng.random(500) < 0.2
        m = evaluate([_verdict(ALERT if d else AUTHENTIC) for d in dec], truth)
        counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
        for d, t in zip(dec, truth):
            counts[("t" if d == t else "f") + ("p" if d else "n")] += 1
        assert (m.tp, m.fp, m.tn, m.fn) == (counts["tp"], counts["fp"], counts["tn"], counts["fn"])
        assert m.fpr == pytest.approx(counts["fp"] / (counts["fp"] + counts["tn"]))

    def test_empty(self):
        with pytest.raises(AuthError):
            evaluate([], [])

    def test_roc_monotone(self):
        rng = np.random.default_rng(6)
        truth = rng.random(300) < 0.3
        scores = np.where(truth, rng.normal(-0.5, 0.5, 300), rng.normal(0.8, 0.3, 300))
        vs = [_verdict(AUTHENTIC, s) for s in scores]
        curve = roc(vs, truth, np.linspace(1, -1, 41))
        fprs = [c[1] for c in curve]
        assert all(b <= a for a, b in zip(fprs, fprs[1:]))


def test_model_file_round_trip(tmp_path):
    models = _toy_models()
    save_models(models, tmp_path / "m.json", theta=0.4)
    back, meta = load_models(tmp_path / "m.json")
    assert meta["theta"] == 0.4
    X = np.random.default_rng(0).normal(500, 10, size=(20, 9))
    for e in models:
        np.testing.assert_allclose(back[e].predict_proba(X), models[e].predict_proba(X))


def test_verdict_log_round_trip():
    vs = decide([CanFrame(1, 0, b"", 0.5)], {"A": np.array([0.9]), "B": np.array([0.1])}, {1: "A"})
    text = format_verdicts(vs)
    assert text.splitlines()[1] == "0.500000000,001,A,0.900000,0.100000,authentic"
    back = parse_verdicts(text)
    assert back[0].decision == AUTHENTIC and back[0].score == pytest.approx(0.8)
