"""End-to-end helpers: simulate, synthesize, train, authenticate.

Full-rate traces are large (1 MHz for a minute is 60M samples per ECU), so
the training and authentication helpers synthesize one ECU at a time and
keep only window features.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import auth
from .bus import NetworkConfig, SimResult
from .power import PowerParams, PowerTrace, label_windows, synthesize


@dataclass(frozen=True)
class Settings:
    sample_rate_hz: float = 1e6
    window_s: float = 250e-6
    overlap_threshold: float = 0.5
    theta: float = 0.5

    @classmethod
    def from_config(cls, config: NetworkConfig) -> "Settings":
        power = config.extra.get("power", {})
        au = config.extra.get("auth", {})
        d = cls()
        return cls(float(power.get("sample_rate_hz", d.sample_rate_hz)),
                   float(au.get("window_s", d.window_s)),
                   float(au.get("overlap_threshold", d.overlap_threshold)),
                   float(au.get("theta", d.theta)))


def power_params(config: NetworkConfig, ecu: str) -> PowerParams:
    return PowerParams.from_config(config.extra.get("power", {}), ecu)


def trace_seed(seed: int, ecu: str) -> int:
    ss = np.random.SeedSequence([seed, zlib.crc32(ecu.encode())])
    return int(ss.generate_state(1)[0])


def monitored_ecus(config: NetworkConfig) -> list[str]:
    """ECUs with a power probe: the configured nodes, never added devices."""
    return [n.name for n in config.ecus]


def ecu_trace(result: SimResult, config: NetworkConfig, ecu: str, seed: int,
              settings: Settings | None = None) -> PowerTrace:
    s = settings or Settings.from_config(config)
    return synthesize(power_params(config, ecu), result.timeline.get(ecu, []), result.duration,
                      s.sample_rate_hz, trace_seed(seed, ecu), ecu, result.bitrate_bps)


def train(result: SimResult, config: NetworkConfig, seed: int, settings: Settings | None = None,
          lr: float = 0.2, epochs: int = 1000, l2: float = 1e-3
          ) -> dict[str, auth.TransmitClassifier]:
    s = settings or Settings.from_config(config)
    models = {}
    for ecu in monitored_ecus(config):
        tr = ecu_trace(result, config, ecu, seed, s)
        wl = label_windows(tr, result.timeline.get(ecu, []), s.window_s, s.overlap_threshold)
        X, y = auth.training_set(tr, wl, seed=trace_seed(seed + 1, ecu))
        del tr
        models[ecu] = auth.fit_classifier(X, y, ecu, lr, epochs, l2)
    return models


def transmit_probs(result: SimResult, config: NetworkConfig,
                   models: Mapping[str, auth.TransmitClassifier], seed: int,
                   settings: Settings | None = None) -> dict[str, np.ndarray]:
    s = settings or Settings.from_config(config)
    frames = [ev.frame for ev in result.log]
    centers = auth.frame_centers(frames, result.bitrate_bps)
    probs = {}
    for ecu in monitored_ecus(config):
        if ecu not in models:
            continue
        tr = ecu_trace(result, config, ecu, seed, s)
        probs[ecu] = auth.transmit_probability(models[ecu], tr, centers, s.window_s)
        del tr
    return probs


def authenticate(result: SimResult, config: NetworkConfig,
                 models: Mapping[str, auth.TransmitClassifier], seed: int,
                 settings: Settings | None = None, theta: float | None = None
                 ) -> list[auth.AuthVerdict]:
    s = settings or Settings.from_config(config)
    probs = transmit_probs(result, config, models, seed, s)
    frames = [ev.frame for ev in result.log]
    ownership = {i: n.name for n in config.ecus for i in n.owned_ids}
    return auth.decide(frames, probs, ownership, s.theta if theta is None else theta,
                       unknown_as_alert=True)


def spoofed_flags(result: SimResult) -> list[bool]:
    return [ev.spoofed for ev in result.log]


def effect_sizes(result: SimResult, config: NetworkConfig, seed: int,
                 settings: Settings | None = None, ecus: Sequence[str] | None = None
                 ) -> dict[str, float]:
    from .power import effect_size
    s = settings or Settings.from_config(config)
    out = {}
    for ecu in ecus or monitored_ecus(config):
        tr = ecu_trace(result, config, ecu, seed, s)
        out[ecu] = effect_size(tr, result.timeline.get(ecu, []), s.window_s)
    return out
