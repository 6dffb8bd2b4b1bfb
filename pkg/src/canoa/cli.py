"""Command-line entry point: simulate, train, authenticate, evaluate, explain.

Exit codes: 0 success, 2 bad input (config, files, flags), 3 data that
cannot support the requested computation (e.g. no transmit windows).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import resource
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, auth, scenario
from .bus import (
    AttackScenario, ConfigError, build_network, format_log, format_timeline, inject, load_config,
    parse_log, reference_config_path, run, timeline_from_log,
)
from .explain import core as xcore
from .explain.fidelity import deletion_insertion
from .explain.mask import MaskOptParams, optimize_mask
from .explain.reconstruct import (
    fit_latent, format_bundle, reconstruct_variants, salient_region, variation_score,
)
from .explain.synthetic import KeyedScorer, TextureScorer, reference_series, texture_corpus, texture_series
from .explain.timeseries import TimeParams, contrastive_explain, time_explain, top_signed
from .power import centered_windows, format_labels, label_windows, read_trace, write_trace

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3
METHODS = ("mask", "time", "contrastive", "reconstruct")


class InputError(Exception):
    pass


class DegenerateData(Exception):
    pass


# Reports ---------------------------------------------------------------------

def versions() -> dict:
    return {"canoa": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v).__name__)


def _nan_to_none(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and v != v else v) for k, v in d.items()}


def write_resources(out: Path, name: str, t0: float) -> None:
    """Wall clock and peak RSS go in their own file so reports stay reproducible."""
    rss_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    write_json(out / f"{name}.resources.json",
               {"wall_clock_s": round(time.perf_counter() - t0, 3), "peak_rss_mb": round(rss_kb / 1024, 1)})


# Run directories -------------------------------------------------------------

def trace_path(run_dir: Path, ecu: str) -> Path:
    return run_dir / f"trace_{ecu}.txt"


def load_run(run_dir: Path) -> tuple[dict, list]:
    try:
        meta = json.loads((run_dir / "run.json").read_text())
        log = parse_log((run_dir / "frames.log").read_text())
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"{run_dir}: not a simulation output ({e})") from e
    return meta, log


def load_traces(run_dir: Path, ecus) -> dict:
    traces = {}
    for e in ecus:
        p = trace_path(run_dir, e)
        if not p.exists():
            raise InputError(f"missing trace file {p}")
        traces[e] = read_trace(p)
    return traces


def parse_attack(spec: str) -> AttackScenario:
    """kind,attacker,victim_id,start_s,rate_hz[,stop_s]"""
    parts = spec.split(",")
    if len(parts) not in (5, 6):
        raise InputError(f"bad --attack {spec!r}: want kind,attacker,victim_id,start_s,rate_hz[,stop_s]")
    try:
        stop = float(parts[5]) if len(parts) == 6 else None
        return AttackScenario(parts[0], parts[1], int(parts[2], 0), float(parts[3]), float(parts[4]), stop)
    except ValueError as e:
        raise InputError(f"bad --attack {spec!r}: {e}") from e


# Commands --------------------------------------------------------------------

def cmd_simulate(a) -> int:
    t0 = time.perf_counter()
    cfg_path = Path(a.config) if a.config else reference_config_path()
    try:
        text = cfg_path.read_text()
        config = load_config(cfg_path)
    except OSError as e:
        raise InputError(str(e)) from e
    sim = build_network(config)
    for spec in a.attack or []:
        sim = inject(sim, parse_attack(spec))
    settings = scenario.Settings.from_config(config)
    if a.sample_rate:
        settings = scenario.Settings(a.sample_rate, settings.window_s, settings.overlap_threshold,
                                     settings.theta)
    result = run(sim, a.duration, a.seed)

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "frames.log").write_text(format_log(result.log))
    (out / "timeline.csv").write_text(format_timeline(result.timeline))
    labels = []
    for ecu in scenario.monitored_ecus(config):
        tr = scenario.ecu_trace(result, config, ecu, a.seed, settings)
        if not a.no_traces:
            write_trace(tr, trace_path(out, ecu))
        labels.append(label_windows(tr, result.timeline.get(ecu, []), settings.window_s,
                                    settings.overlap_threshold))
        del tr
    (out / "labels.csv").write_text(format_labels(labels))

    scenario_id = f"{cfg_path.stem}-{hashlib.sha256(text.encode()).hexdigest()[:10]}-s{a.seed}"
    stats = dict(result.stats)
    stats["ownership"] = {f"{k:03X}": v for k, v in sorted(stats["ownership"].items())}
    write_json(out / "run.json", {
        "scenario_id": scenario_id,
        "seed": a.seed,
        "duration_s": a.duration,
        "bitrate_bps": result.bitrate_bps,
        "ecus": scenario.monitored_ecus(config),
        "attacks": [s for s in (a.attack or [])] + [
            f"{x.kind},{x.attacker},0x{x.victim_id:03X},{x.start},{x.rate_hz}" for x in config.attacks],
        "settings": {"sample_rate_hz": settings.sample_rate_hz, "window_s": settings.window_s,
                     "overlap_threshold": settings.overlap_threshold, "theta": settings.theta},
        "stats": stats,
        "versions": versions(),
    })
    write_resources(out, "run", t0)
    print(f"{len(result.log)} frames ({stats['spoofed']} spoofed, {stats['dropped']} dropped), "
          f"bus load {stats['utilization']:.1%} -> {out}")
    return EXIT_OK


def cmd_train(a) -> int:
    t0 = time.perf_counter()
    run_dir = Path(a.run)
    meta, log = load_run(run_dir)
    st = meta["settings"]
    ecus = meta["ecus"]
    traces = load_traces(run_dir, ecus)
    timeline = timeline_from_log(log, meta["bitrate_bps"], ecus)
    models = {}
    for ecu in ecus:
        wl = label_windows(traces[ecu], timeline.get(ecu, []), st["window_s"], st["overlap_threshold"])
        X, y = auth.training_set(traces[ecu], wl, seed=scenario.trace_seed(a.seed, ecu))
        try:
            models[ecu] = auth.fit_classifier(X, y, ecu, a.lr, a.epochs, a.l2)
        except auth.DegenerateLabels as e:
            raise DegenerateData(f"{ecu}: training windows are all one class") from e
    ownership = {int(k, 16): v for k, v in meta["stats"]["ownership"].items()}
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    theta = st["theta"] if a.theta is None else a.theta
    auth.save_models(models, out, theta, st["window_s"], meta["bitrate_bps"], ownership)
    write_resources(out.parent, out.stem, t0)
    print(f"trained {len(models)} classifiers -> {out}")
    return EXIT_OK


def _load_models(path) -> tuple[dict, dict]:
    try:
        return auth.load_models(path)
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"{path}: cannot read model ({e})") from e


def cmd_authenticate(a) -> int:
    t0 = time.perf_counter()
    run_dir = Path(a.run)
    meta, log = load_run(run_dir)
    models, mmeta = _load_models(a.model)
    traces = load_traces(run_dir, [e for e in models if e in meta["ecus"]])
    if not traces:
        raise InputError("no trace in the run matches a trained ECU")
    theta = mmeta["theta"] if a.theta is None else a.theta
    ownership = mmeta["ownership"] or {int(k, 16): v for k, v in meta["stats"]["ownership"].items()}
    verdicts = auth.authenticate_all([ev.frame for ev in log], traces,
                                     {e: models[e] for e in traces}, ownership, theta,
                                     mmeta["window_s"], meta["bitrate_bps"], unknown_as_alert=True)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(auth.format_verdicts(verdicts))
    write_resources(out.parent, out.stem, t0)
    n_alert = sum(v.decision == auth.ALERT for v in verdicts)
    print(f"{len(verdicts)} verdicts, {n_alert} alerts -> {out}")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    t0 = time.perf_counter()
    try:
        verdicts = auth.parse_verdicts(Path(a.verdicts).read_text())
        log = parse_log(Path(a.log).read_text())
    except (OSError, ValueError) as e:
        raise InputError(str(e)) from e
    if len(verdicts) != len(log) or any(
            v.id != ev.frame.id or abs(v.t - ev.t) > 1e-6 for v, ev in zip(verdicts, log)):
        raise InputError("verdicts do not match the frame log")
    spoofed = [ev.spoofed for ev in log]
    m = auth.evaluate(verdicts, spoofed)
    thetas = np.round(np.linspace(-1.0, 1.0, 41), 6)
    curve = auth.roc(verdicts, spoofed, thetas)
    run_meta = Path(a.log).with_name("run.json")
    sid, seed = None, None
    if run_meta.exists():
        rm = json.loads(run_meta.read_text())
        sid, seed = rm.get("scenario_id"), rm.get("seed")
    by_sender = {}
    for ev, v in zip(log, verdicts):
        d = by_sender.setdefault(ev.sender, {"frames": 0, "alerts": 0, "spoofed": 0})
        d["frames"] += 1
        d["alerts"] += v.decision == auth.ALERT
        d["spoofed"] += ev.spoofed
    report = {
        "scenario_id": sid,
        "seed": seed,
        "versions": versions(),
        "metrics": _nan_to_none(m.as_dict()),
        "by_sender": by_sender,
        "roc": [{"theta": th, "fpr": fpr, "tpr": tpr} for th, fpr, tpr in curve],
    }
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, report)
    write_resources(out.parent, out.stem, t0)
    print(f"FPR {m.fpr:.4f}  recall {m.recall:.4f}  ({m.tp} TP, {m.fp} FP, {m.tn} TN, {m.fn} FN) -> {out}")
    return EXIT_OK


# explain ---------------------------------------------------------------------

def _explain_input(a):
    """(series, scorer, corpus, description) for the requested target."""
    if a.synthetic:
        if a.synthetic == "keyed":
            x = reference_series(128, a.seed)
            return x, KeyedScorer(x), None, {"synthetic": "keyed", "region": [40, 60]}
        x = texture_series(128, np.random.default_rng(a.seed))
        corpus = texture_corpus(200, 128, seed=a.seed + 1)
        return x, TextureScorer((40, 60)), corpus, {"synthetic": "texture", "region": [40, 60]}

    if not (a.run and a.model and a.frame is not None):
        raise InputError("explain needs --synthetic or all of --run, --model and --frame")
    run_dir = Path(a.run)
    meta, log = load_run(run_dir)
    models, mmeta = _load_models(a.model)
    if not 0 <= a.frame < len(log):
        raise InputError(f"--frame {a.frame} outside 0..{len(log) - 1}")
    frame = log[a.frame].frame
    ecu = a.ecu or mmeta["ownership"].get(frame.id)
    if ecu not in models:
        raise InputError(f"no classifier for ECU {ecu!r}")
    trace = load_traces(run_dir, [ecu])[ecu]
    n = int(round(mmeta["window_s"] * trace.sample_rate_hz))
    centers = auth.frame_centers([ev.frame for ev in log], meta["bitrate_bps"])
    x = centered_windows(trace, centers[a.frame:a.frame + 1], n)[0]
    own = [i for i, ev in enumerate(log) if ev.sender == ecu and i != a.frame][:2000]
    corpus = list(centered_windows(trace, centers[own], n)) if own else None
    t = trace.t0 + (trace.index_of(centers[a.frame]) - n // 2 + np.arange(n)) / trace.sample_rate_hz
    desc = {"run": meta.get("scenario_id"), "frame": a.frame, "ecu": ecu, "id": f"{frame.id:03X}",
            "t": frame.timestamp, "sample_times": t}
    return x, models[ecu].window_scorer(), corpus, desc


def _time_params(a) -> TimeParams:
    return TimeParams(a.samples, a.min_len, a.max_len, a.max_windows, a.fill, a.seed)


def cmd_explain(a) -> int:
    t0 = time.perf_counter()
    if a.method == "contrastive" and a.contrast_class is None:
        raise InputError("--method contrastive needs two classes (--target-class and --contrast-class)")
    x, scorer, corpus, desc = _explain_input(a)
    times = desc.pop("sample_times", None)
    bb = xcore.BlackBox(scorer, a.threads)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"method": a.method, "seed": a.seed, "target_class": a.target_class,
               "input": desc, "versions": versions()}

    if a.method == "mask":
        p = MaskOptParams(a.batch, a.iterations, kernel=a.kernel, shrink=a.shrink, rate=a.rate,
                          patience=a.patience, seed=a.seed)
        sal, evals = optimize_mask(bb, x, a.target_class, p, n_jobs=a.threads)
        summary["eval_count"] = evals
    elif a.method in ("time", "reconstruct"):
        sal = time_explain(bb, x, a.target_class, _time_params(a), a.threads)
        summary["eval_count"] = bb.evals
    else:
        sal = contrastive_explain(bb, x, a.target_class, a.contrast_class, _time_params(a), a.threads)
        summary["eval_count"] = bb.evals
        summary["contrast_class"] = a.contrast_class
        summary["top_signed"] = [{"index": i, "score": s} for i, s in top_signed(sal, 5)]

    if not sal.signed:
        fid = deletion_insertion(scorer, x, sal.scores, a.target_class)
        summary["deletion_auc"] = fid["deletion_auc"]
        summary["insertion_auc"] = fid["insertion_auc"]

    if a.method == "reconstruct":
        if corpus is None:
            raise DegenerateData("no context corpus for the latent model")
        model = fit_latent(corpus, a.latent_window, a.latent_dims, seed=a.seed)
        variants = reconstruct_variants(x, sal, model, scorer, a.variants, a.sigma, a.tau,
                                        a.delta, a.seed, a.threads)
        try:
            score = variation_score(variants, model.variances)
        except xcore.ExplainError:
            score = None
        region = salient_region(sal, a.tau, len(x), a.latent_window)
        (out / "variants.json").write_text(format_bundle(x, region, variants, score))
        summary["variants"] = len(variants)
        summary["accepted"] = sum(v.accepted for v in variants)
        summary["variation_score"] = score

    xcore.write_saliency(sal, out / "saliency.sal", summary)
    xcore.write_plot_csv(x, sal.scores, out / "plot.csv", times)
    write_resources(out, "explain", t0)
    print(f"{a.method}: argmax {sal.argmax()}, {summary['eval_count']} evaluations -> {out}")
    return EXIT_OK


# Parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="canoa", description=__doc__.splitlines()[0])
    top.add_argument("--version", action="version", version=f"canoa {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="seed for every stochastic step (default 0)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads; 1 gives bit-exact reproducibility (default 1)")

    p = sub.add_parser("simulate", help="run the bus and synthesize power traces")
    p.add_argument("config", nargs="?", help="network config (default: bundled 5-ECU reference)")
    p.add_argument("--duration", type=float, default=10.0, help="simulated seconds (default 10)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--attack", action="append", metavar="SPEC",
                   help="extra attack kind,attacker,victim_id,start_s,rate_hz[,stop_s]; repeatable")
    p.add_argument("--sample-rate", type=float, help="override trace sample rate in Hz")
    p.add_argument("--no-traces", action="store_true", help="skip writing trace files")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit per-ECU transmit classifiers on a simulation run")
    p.add_argument("run", help="directory written by simulate")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--theta", type=float, help="alert threshold stored with the model")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("authenticate", help="score every frame of a run against its claimed sender")
    p.add_argument("run", help="directory written by simulate")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="verdict log")
    p.add_argument("--theta", type=float, help="alert threshold (default: the model's)")
    common(p)
    p.set_defaults(func=cmd_authenticate)

    p = sub.add_parser("evaluate", help="compare verdicts with the ground truth in a frame log")
    p.add_argument("verdicts")
    p.add_argument("log", help="frames.log of the same run")
    p.add_argument("--out", required=True, help="report JSON")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="saliency and variants for one input")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--out", required=True, help="output directory")
    src = p.add_argument_group("input")
    src.add_argument("--synthetic", choices=("keyed", "texture"), help="built-in analytic task")
    src.add_argument("--run", help="simulation directory")
    src.add_argument("--model", help="model file")
    src.add_argument("--frame", type=int, help="frame index in the run's log")
    src.add_argument("--ecu", help="whose trace to explain (default: the frame's claimed sender)")
    src.add_argument("--target-class", type=int, default=1,
                     help="class to explain; for transmit classifiers 1 = transmitting (default 1)")
    src.add_argument("--contrast-class", type=int, help="second class for --method contrastive")
    g = p.add_argument_group("mask optimizer")
    g.add_argument("--batch", type=int, default=64)
    g.add_argument("--iterations", type=int, default=50)
    g.add_argument("--kernel", type=int, default=3)
    g.add_argument("--shrink", type=float, default=0.01)
    g.add_argument("--rate", type=float, default=0.3)
    g.add_argument("--patience", type=int, default=5)
    g = p.add_argument_group("windowed sub-sampling")
    g.add_argument("--samples", type=int, default=1000)
    g.add_argument("--min-len", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--max-windows", type=int, default=3)
    g.add_argument("--fill", choices=("interpolate", "mean"), default="interpolate")
    g = p.add_argument_group("reconstruction")
    g.add_argument("--variants", type=int, default=16)
    g.add_argument("--sigma", type=float, default=0.5)
    g.add_argument("--tau", type=float, default=0.5, help="saliency threshold")
    g.add_argument("--delta", type=float, default=0.1, help="allowed confidence drop")
    g.add_argument("--latent-window", type=int, default=16)
    g.add_argument("--latent-dims", type=int, default=6)
    common(p)
    p.set_defaults(func=cmd_explain)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("canoa: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (DegenerateData, auth.DegenerateLabels) as e:
        print(f"canoa: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except xcore.ExplainError as e:
        msg = str(e)
        print(f"canoa: {msg}", file=sys.stderr)
        degenerate = ("nothing to reconstruct", "insufficient coverage", "no variation measurable",
                      "corpus too small")
        return EXIT_DEGENERATE if msg in degenerate else EXIT_INPUT
    except (InputError, ConfigError, auth.AuthError, ValueError, OSError) as e:
        print(f"canoa: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
