"""Sender authentication from power windows.

One binary transmit-state classifier per ECU. A frame is authentic when the
ECU owning its identifier looks like it was transmitting and no other ECU
does; the margin between the two drives the alert.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .can import CanFrame, serialize_frame
from .power import PowerTrace, WindowLabels, centered_windows

FEATURE_NAMES = ("mean", "std", "rms", "peak_to_peak", "skewness", "kurtosis",
                 "band_energy_low", "band_energy_mid", "band_energy_high")
MIN_SAMPLES = 8
AUTHENTIC, ALERT = "authentic", "alert"


class AuthError(ValueError):
    pass


class DegenerateLabels(AuthError):
    def __init__(self, msg="degenerate labels"):
        super().__init__(msg)


class UnknownId(AuthError):
    def __init__(self, msg="unknown id"):
        super().__init__(msg)


# Features --------------------------------------------------------------------

def extract_features_batch(windows: np.ndarray) -> np.ndarray:
    """Feature matrix (n, 9) for a stack of equal-length windows."""
    x = np.atleast_2d(np.asarray(windows, dtype=float))
    n = x.shape[1]
    if n < MIN_SAMPLES:
        raise AuthError("insufficient samples")
    mean = x.mean(axis=1)
    d = x - mean[:, None]
    m2 = (d ** 2).mean(axis=1)
    m3 = (d ** 3).mean(axis=1)
    m4 = (d ** 4).mean(axis=1)
    std = np.sqrt(m2 * n / (n - 1))
    rms = np.sqrt((x ** 2).mean(axis=1))
    p2p = x.max(axis=1) - x.min(axis=1)
    # Moments relative to the window level; exact-zero spread means constant.
    flat = m2 <= (1e-12 * np.maximum(np.abs(mean), 1.0)) ** 2
    safe = np.where(flat, 1.0, m2)
    g1 = m3 / safe ** 1.5
    g2 = m4 / safe ** 2 - 3.0
    skew = np.where(flat, 0.0, g1 * np.sqrt(n * (n - 1)) / (n - 2))
    kurt = np.where(flat, 0.0, (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6.0))

    spec = np.abs(np.fft.rfft(x, axis=1)[:, 1:n // 2 + 1]) ** 2 / n
    k = spec.shape[1]
    edges = (0, k // 3, 2 * k // 3, k)
    bands = [spec[:, edges[i]:edges[i + 1]].sum(axis=1) for i in range(3)]
    return np.column_stack([mean, std, rms, p2p, skew, kurt, *bands])


def extract_features(window: Sequence[float]) -> np.ndarray:
    return extract_features_batch(np.asarray(window, dtype=float)[None, :])[0]


# Classifier ------------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    mask: np.ndarray  # features kept (non-constant at fit time)

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        mask = std > 1e-12 * np.maximum(np.abs(mean), 1.0)
        return cls(mean, np.where(mask, std, 1.0), mask)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.mean) / self.std)[:, self.mask]

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        X = np.tile(self.mean, (len(Z), 1))
        X[:, self.mask] = Z * self.std[self.mask] + self.mean[self.mask]
        return X


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TransmitClassifier:
    ecu: str
    scaler: Standardizer
    weights: np.ndarray
    bias: float
    loss_history: list[float] = field(default_factory=list, repr=False)

    def logit(self, X: np.ndarray) -> np.ndarray:
        return self.scaler.transform(np.atleast_2d(X)) @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logit(X))

    def window_scorer(self):
        """Black-box view: raw sample window -> [p_idle, p_transmitting]."""
        def score(window):
            p = float(self.predict_proba(extract_features(window))[0])
            return np.array([1.0 - p, p])
        return score


def _loss(Z, y, w, b, l2):
    z = Z @ w + b
    # log(1 + e^z) - y z, stable form
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def fit_classifier(X: np.ndarray, y: np.ndarray, ecu: str = "", lr: float = 0.2,
                   epochs: int = 1000, l2: float = 1e-3) -> TransmitClassifier:
    """Full-batch gradient descent on L2-regularized log loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise DegenerateLabels()
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    w = np.zeros(Z.shape[1])
    b = 0.0
    history = [_loss(Z, y, w, b, l2)]
    for _ in range(epochs):
        r = _sigmoid(Z @ w + b) - y
        w = w - lr * (Z.T @ r / len(y) + l2 * w)
        b = b - lr * float(r.mean())
        history.append(_loss(Z, y, w, b, l2))
    return TransmitClassifier(ecu, scaler, w, b, history)


def fit(dataset: Mapping[str, tuple[np.ndarray, np.ndarray]], lr: float = 0.2,
        epochs: int = 1000, l2: float = 1e-3) -> dict[str, TransmitClassifier]:
    return {ecu: fit_classifier(X, y, ecu, lr, epochs, l2) for ecu, (X, y) in dataset.items()}


def training_set(trace: PowerTrace, labels: WindowLabels, idle_per_tx: float = 4.0,
                 seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Features and labels from tumbling windows, idle windows subsampled."""
    W = labels.windows(trace)
    y = labels.transmitting
    tx = np.flatnonzero(y)
    idle = np.flatnonzero(~y)
    keep = min(len(idle), max(int(idle_per_tx * len(tx)), 1))
    rng = np.random.default_rng(seed)
    idle = np.sort(rng.choice(idle, size=keep, replace=False)) if len(idle) else idle
    idx = np.concatenate([tx, idle])
    return extract_features_batch(W[idx]), y[idx].astype(float)


# Authentication --------------------------------------------------------------

@dataclass(frozen=True)
class AuthVerdict:
    frame_ref: int
    t: float
    id: int
    claimed_sender: str
    p_claimed: float
    p_others: float
    score: float
    decision: str


def frame_centers(frames: Iterable[CanFrame], bitrate_bps: float) -> np.ndarray:
    """Midpoint of each frame's time on the bus."""
    return np.array([f.timestamp + 0.5 * len(serialize_frame(f)) / bitrate_bps for f in frames])


def transmit_probability(model: TransmitClassifier, trace: PowerTrace, centers,
                         window_s: float) -> np.ndarray:
    n = int(round(window_s * trace.sample_rate_hz))
    W = centered_windows(trace, centers, n)
    return model.predict_proba(extract_features_batch(W))


def decide(frames: Sequence[CanFrame], probs: Mapping[str, np.ndarray],
           ownership: Mapping[int, str], theta: float = 0.5,
           unknown_as_alert: bool = False) -> list[AuthVerdict]:
    """Turn per-ECU transmit probabilities into per-frame verdicts."""
    ecus = list(probs)
    P = np.column_stack([np.asarray(probs[e], float) for e in ecus]) if ecus else None
    out = []
    for i, f in enumerate(frames):
        claimed = ownership.get(f.id)
        if claimed is None or claimed not in probs:
            if not unknown_as_alert:
                raise UnknownId(f"unknown id {f.id:03X}")
            others = float(P[i].max()) if P is not None else 0.0
            out.append(AuthVerdict(i, f.timestamp, f.id, "?", 0.0, others, -others, ALERT))
            continue
        j = ecus.index(claimed)
        p_claimed = float(P[i, j])
        rest = np.delete(P[i], j)
        p_others = float(rest.max()) if len(rest) else 0.0
        score = p_claimed - p_others
        out.append(AuthVerdict(i, f.timestamp, f.id, claimed, p_claimed, p_others, score,
                               ALERT if score < theta else AUTHENTIC))
    return out


def authenticate_all(frames: Sequence[CanFrame], traces: Mapping[str, PowerTrace],
                     models: Mapping[str, TransmitClassifier], ownership: Mapping[int, str],
                     theta: float = 0.5, window_s: float = 250e-6,
                     bitrate_bps: float = 500_000.0, unknown_as_alert: bool = False
                     ) -> list[AuthVerdict]:
    centers = frame_centers(frames, bitrate_bps)
    probs = {e: transmit_probability(models[e], traces[e], centers, window_s)
             for e in models if e in traces}
    return decide(frames, probs, ownership, theta, unknown_as_alert)


def authenticate(frame: CanFrame, traces: Mapping[str, PowerTrace],
                 models: Mapping[str, TransmitClassifier], ownership: Mapping[int, str],
                 theta: float = 0.5, window_s: float = 250e-6,
                 bitrate_bps: float = 500_000.0) -> AuthVerdict:
    return authenticate_all([frame], traces, models, ownership, theta, window_s, bitrate_bps)[0]


# Metrics ---------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(a, b):
        return a / b if b else float("nan")

    @property
    def accuracy(self):
        return self._ratio(self.tp + self.tn, self.tp + self.fp + self.tn + self.fn)

    @property
    def precision(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self):
        return self._ratio(self.fp, self.fp + self.tn)

    @property
    def fnr(self):
        return self._ratio(self.fn, self.fn + self.tp)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(accuracy=self.accuracy, precision=self.precision, recall=self.recall,
                 fpr=self.fpr, fnr=self.fnr)
        return d


def evaluate(verdicts: Sequence[AuthVerdict], spoofed: Sequence[bool]) -> Metrics:
    if len(verdicts) == 0:
        raise AuthError("no verdicts")
    if len(verdicts) != len(spoofed):
        raise AuthError("verdicts and ground truth differ in length")
    alert = np.array([v.decision == ALERT for v in verdicts])
    truth = np.asarray(spoofed, dtype=bool)
    return Metrics(int(np.sum(alert & truth)), int(np.sum(alert & ~truth)),
                   int(np.sum(~alert & ~truth)), int(np.sum(~alert & truth)))


def roc(verdicts: Sequence[AuthVerdict], spoofed: Sequence[bool],
        thetas: Sequence[float]) -> list[tuple[float, float, float]]:
    """(theta, FPR, TPR) per threshold; alert iff score < theta."""
    score = np.array([v.score for v in verdicts])
    truth = np.asarray(spoofed, dtype=bool)
    out = []
    for th in thetas:
        alert = score < th
        fpr = float(np.mean(alert[~truth])) if (~truth).any() else float("nan")
        tpr = float(np.mean(alert[truth])) if truth.any() else float("nan")
        out.append((float(th), fpr, tpr))
    return out


# File formats ----------------------------------------------------------------

def save_models(models: Mapping[str, TransmitClassifier], path: str | Path, theta: float = 0.5,
                window_s: float = 250e-6, bitrate_bps: float = 500_000.0,
                ownership: Mapping[int, str] | None = None) -> None:
    doc = {
        "format": "canoa-model/1",
        "features": list(FEATURE_NAMES),
        "theta": theta,
        "window_s": window_s,
        "bitrate_bps": bitrate_bps,
        "ownership": {f"{i:03X}": e for i, e in sorted((ownership or {}).items())},
        "ecus": {
            e: {
                "mean": m.scaler.mean.tolist(),
                "std": m.scaler.std.tolist(),
                "mask": m.scaler.mask.astype(int).tolist(),
                "weights": m.weights.tolist(),
                "bias": m.bias,
            } for e, m in sorted(models.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_models(path: str | Path) -> tuple[dict[str, TransmitClassifier], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "canoa-model/1":
        raise AuthError(f"{path}: not a model file")
    models = {}
    for e, d in doc["ecus"].items():
        scaler = Standardizer(np.array(d["mean"]), np.array(d["std"]), np.array(d["mask"], bool))
        models[e] = TransmitClassifier(e, scaler, np.array(d["weights"]), float(d["bias"]))
    meta = {k: doc[k] for k in ("theta", "window_s", "bitrate_bps")}
    meta["ownership"] = {int(k, 16): v for k, v in doc.get("ownership", {}).items()}
    return models, meta


VERDICT_HEADER = "t,id,claimed,p_claimed,p_others,decision"


def format_verdicts(verdicts: Sequence[AuthVerdict]) -> str:
    lines = [VERDICT_HEADER]
    for v in verdicts:
        lines.append(f"{v.t:.9f},{v.id:03X},{v.claimed_sender},{v.p_claimed:.6f},"
                     f"{v.p_others:.6f},{v.decision}")
    return "\n".join(lines) + "\n"


def parse_verdicts(text: str) -> list[AuthVerdict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != VERDICT_HEADER:
        raise AuthError("not a verdict log")
    out = []
    for i, ln in enumerate(lines[1:]):
        t, fid, claimed, pc, po, dec = ln.split(",")
        pc, po = float(pc), float(po)
        out.append(AuthVerdict(i, float(t), int(fid, 16), claimed, pc, po, pc - po, dec))
    return out
