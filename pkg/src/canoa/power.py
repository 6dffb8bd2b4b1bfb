"""Synthetic per-ECU power traces and ground-truth window labels.

Model, per sample at time t:

    p(t) = baseline + drift * t
           + (dominant_extra | recessive_extra)   for the bit being driven at t
           + sum over interval edges e <= t of transient_amp * exp(-(t - e) / tau)
           + N(0, noise_sigma**2)
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .bus import Interval

TRANSMITTING = "transmitting"
IDLE = "idle"

# Edge transients are truncated once exp(-dt/tau) < ~1e-13.
_TRANSIENT_SPAN = 30.0


@dataclass(frozen=True)
class PowerParams:
    baseline_mw: float = 500.0
    dominant_extra_mw: float = 40.0
    recessive_extra_mw: float = 8.0
    transient_amp_mw: float = 15.0
    transient_tau_s: float = 5e-6
    noise_sigma_mw: float = 4.0
    drift_mw_per_s: float = 0.05

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if not all(np.isfinite(vals)):
            raise ValueError("power parameters must be finite")
        if not self.baseline_mw > 0:
            raise ValueError("baseline_mw must be positive")
        if self.noise_sigma_mw < 0:
            raise ValueError("noise_sigma_mw must be non-negative")
        if not self.dominant_extra_mw > self.recessive_extra_mw >= 0:
            raise ValueError("need dominant_extra_mw > recessive_extra_mw >= 0")
        if not self.transient_tau_s > 0:
            raise ValueError("transient_tau_s must be positive")

    @classmethod
    def from_config(cls, power: dict, ecu: str | None = None) -> "PowerParams":
        names = {f.name for f in fields(cls)}
        kw = {k: float(v) for k, v in power.items() if k in names}
        if ecu is not None and isinstance(power.get(ecu), dict):
            kw.update({k: float(v) for k, v in power[ecu].items() if k in names})
        return cls(**kw)


@dataclass
class PowerTrace:
    ecu: str
    sample_rate_hz: float
    t0: float
    samples: np.ndarray

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) / self.sample_rate_hz

    def index_of(self, t: float) -> int:
        """Index of the first sample at or after time t."""
        return int(np.ceil((t - self.t0) * self.sample_rate_hz - 1e-9))


def n_samples(duration: float, sample_rate_hz: float) -> int:
    return int(np.ceil(duration * sample_rate_hz - 1e-9))


def synthesize(params: PowerParams, timeline: Sequence[Interval], duration: float,
               sample_rate_hz: float, seed: int, ecu: str = "", bitrate_bps: float = 500_000.0,
               t0: float = 0.0) -> PowerTrace:
    if not sample_rate_hz > 0:
        raise ValueError("sample_rate_hz must be positive")
    n = n_samples(duration, sample_rate_hz)
    for iv in timeline:
        if iv.t_end > t0 + duration + 1e-12 or iv.t_start < t0:
            raise ValueError("timeline overflow")

    t = t0 + np.arange(n) / sample_rate_hz
    out = params.baseline_mw + params.drift_mw_per_s * t
    extra = np.array([params.dominant_extra_mw, params.recessive_extra_mw])
    tau = params.transient_tau_s
    span = int(np.ceil(_TRANSIENT_SPAN * tau * sample_rate_hz))

    for iv in timeline:
        i0 = int(np.ceil((iv.t_start - t0) * sample_rate_hz - 1e-9))
        i1 = int(np.ceil((iv.t_end - t0) * sample_rate_hz - 1e-9))
        if i1 > i0:
            k = np.floor((t[i0:i1] - iv.t_start) * bitrate_bps).astype(np.int64)
            k = np.clip(k, 0, iv.nbits - 1)
            out[i0:i1] += extra[np.asarray(iv.bits, dtype=np.int64)[k]]
        if params.transient_amp_mw:
            for edge, i in ((iv.t_start, i0), (iv.t_end, i1)):
                j = min(n, i + span)
                out[i:j] += params.transient_amp_mw * np.exp(-(t[i:j] - edge) / tau)

    if params.noise_sigma_mw > 0:
        rng = np.random.default_rng(seed)
        out += rng.normal(0.0, params.noise_sigma_mw, size=n)
    return PowerTrace(ecu, float(sample_rate_hz), t0, out)


@dataclass(frozen=True)
class LabeledWindow:
    ecu: str
    t_start: float
    t_end: float
    label: str
    frame_ref: int | None = None


@dataclass
class WindowLabels:
    """Tumbling windows over one trace, stored column-wise."""

    ecu: str
    t_start: np.ndarray
    t_end: np.ndarray
    overlap: np.ndarray      # transmit-time fraction per window
    transmitting: np.ndarray  # bool
    frame_ref: np.ndarray    # log index of the dominant overlapping frame, -1 if none
    samples_per_window: int

    def __len__(self):
        return len(self.t_start)

    def __iter__(self) -> Iterator[LabeledWindow]:
        for a, b, tx, ref in zip(self.t_start, self.t_end, self.transmitting, self.frame_ref):
            yield LabeledWindow(self.ecu, float(a), float(b), TRANSMITTING if tx else IDLE,
                                int(ref) if ref >= 0 else None)

    def windows(self, trace: PowerTrace) -> np.ndarray:
        """Sample matrix, one row per window."""
        m = self.samples_per_window
        s = trace.samples[:m * len(self)]
        return s.reshape(len(self), m)


def label_windows(trace: PowerTrace, timeline: Sequence[Interval], window_s: float,
                  overlap_threshold: float = 0.5) -> WindowLabels:
    if not 0 < overlap_threshold <= 1:
        raise ValueError("overlap_threshold must be in (0, 1]")
    if not window_s > 0:
        raise ValueError("window_s must be positive")
    m = int(round(window_s * trace.sample_rate_hz))
    if m < 1 or window_s > trace.duration + 1e-12:
        raise ValueError("window too large")
    w = m / trace.sample_rate_hz
    nw = len(trace.samples) // m
    starts = trace.t0 + np.arange(nw) * w
    ends = starts + w
    overlap = np.zeros(nw)
    best = np.zeros(nw)
    ref = np.full(nw, -1, dtype=np.int64)
    for iv in timeline:
        k0 = max(0, int(np.floor((iv.t_start - trace.t0) / w)))
        k1 = min(nw, int(np.ceil((iv.t_end - trace.t0) / w)))
        for k in range(k0, k1):
            ov = min(iv.t_end, ends[k]) - max(iv.t_start, starts[k])
            if ov > 0:
                overlap[k] += ov
                if ov > best[k]:
                    best[k], ref[k] = ov, iv.event
    frac = overlap / w
    # small tolerance so a window exactly covering a frame counts as full
    tx = frac >= overlap_threshold - 1e-9
    return WindowLabels(trace.ecu, starts, ends, frac, tx, ref, m)


def centered_windows(trace: PowerTrace, centers, n: int) -> np.ndarray:
    """Rows of `n` samples centred on each time in `centers`.

    Windows are shifted inward at the trace edges so every row is full.
    """
    if n > len(trace.samples):
        raise ValueError("window too large")
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    start = np.rint((centers - trace.t0) * trace.sample_rate_hz - n / 2).astype(np.int64)
    start = np.clip(start, 0, len(trace.samples) - n)
    return trace.samples[start[:, None] + np.arange(n)]


def cohens_d(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    na, nb = len(a), len(b)
    pooled = np.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    return float((a.mean() - b.mean()) / pooled)


def effect_size(trace: PowerTrace, timeline: Sequence[Interval], window_s: float) -> float:
    """Cohen's d of window-mean power, frame-centred windows vs idle windows."""
    n = int(round(window_s * trace.sample_rate_hz))
    centers = [(iv.t_start + iv.t_end) / 2 for iv in timeline]
    tx = centered_windows(trace, centers, n).mean(axis=1)
    wl = label_windows(trace, timeline, window_s)
    idle = wl.windows(trace)[wl.overlap == 0].mean(axis=1)
    return cohens_d(tx, idle)


# File formats ----------------------------------------------------------------

def write_trace(trace: PowerTrace, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# ecu={trace.ecu} rate_hz={trace.sample_rate_hz:g} t0={trace.t0:.9f}\n")
        fmt = "{:.6f}".format
        step = 1 << 20  # same bytes as savetxt("%.6f"), several times faster
        for i in range(0, len(trace.samples), step):
            fh.write("\n".join(map(fmt, trace.samples[i:i + step].tolist())) + "\n")


def read_trace(path: str | Path) -> PowerTrace:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing trace header")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        samples = np.loadtxt(fh, dtype=float, ndmin=1)
    return PowerTrace(meta["ecu"], float(meta["rate_hz"]), float(meta["t0"]), samples)


LABELS_HEADER = "ecu,t_start,t_end,label"


def format_labels(labels: Sequence[WindowLabels]) -> str:
    lines = [LABELS_HEADER]
    for wl in labels:
        for lw in wl:
            lines.append(f"{lw.ecu},{lw.t_start:.9f},{lw.t_end:.9f},{lw.label}")
    return "\n".join(lines) + "\n"
