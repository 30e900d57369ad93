"""Run directories: resolved config, metrics CSV, traces and final models.

Layout::

    <root>/<run-id>/
        config.resolved.json   every field, auto values replaced by what was used
        summary.json           derived constants and the final metrics row
        metrics.csv            one row per round, columns METRIC_COLUMNS + pers_acc_u<i>
        traces/round_<t>.json  RoundTrace for traced rounds
        traces/round_<t>_pre.npz  pre-round state for replay
        models/final.npz       w (global) and v_<i> (personal)
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .config import config_to_dict, dump_config, load_config
from .protocol import GlobalState, build_environment, run_round
from .training import PersonalState

OUT_ENV = "OTAPFL_OUT"

METRIC_COLUMNS = [
    "round", "global_loss", "global_acc", "pers_acc_mean", "pers_acc_std", "pers_loss_mean",
    "pers_grad_norm_mean", "agg_mse", "imag_residual", "skipped", "mean_tau", "backstops",
    "max_energy_ratio", "target_met",
]


def metric_columns(users: int):
    return METRIC_COLUMNS + [f"pers_acc_u{i}" for i in range(users)]


def output_root(default="out") -> Path:
    return Path(os.environ.get(OUT_ENV, default))


def run_id(cfg) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return f"{cfg.mode}-s{cfg.seed}-{hashlib.sha256(blob).hexdigest()[:10]}"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(metrics, users, path) -> None:
    cols = metric_columns(users)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in metrics:
            flat = dict(row)
            for i, a in enumerate(flat.pop("pers_acc_users", [None] * users)):
                flat[f"pers_acc_u{i}"] = a
            w.writerow([_fmt(flat.get(c)) for c in cols])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save_state(state: GlobalState, path) -> None:
    arrays = {"w": state.w, "round": np.array(state.round)}
    for i, s in enumerate(state.personal):
        arrays[f"v_{i}"] = s.v
    for k, phi in enumerate(state.phases):
        arrays[f"phi_{k}"] = phi
    np.savez(path, **arrays)


def load_state(path, cfg) -> GlobalState:
    with np.load(path) as z:
        personal = [PersonalState(z[f"v_{i}"], cfg.eta_v, cfg.lam, cfg.tau_v) for i in range(cfg.users)]
        phases = [z[k] for k in sorted((k for k in z.files if k.startswith("phi_")), key=lambda k: int(k[4:]))]
        return GlobalState(z["w"], personal, phases, int(z["round"]))


def write_run(result, root=None, name=None) -> Path:
    """Persist an :class:`ExperimentResult` and return its directory."""
    env = result.env
    resolved = env.resolved()
    out = Path(root or output_root()) / (name or run_id(resolved))
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    dump_config(resolved, out / "config.resolved.json")
    write_metrics_csv(result.metrics, resolved.users, out / "metrics.csv")
    summary = {"derived": env.derived(), "final": {k: v for k, v in result.final.items()}}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    for trace, pre in result.traces:
        stem = f"round_{trace.round:04d}"
        (out / "traces" / f"{stem}.json").write_text(json.dumps(trace.to_dict(), indent=1) + "\n")
        _save_state(pre, out / "traces" / f"{stem}_pre.npz")
    _save_state(result.state, out / "models" / "final.npz")
    return out


def replay_trace(trace_path) -> tuple[bool, str, str]:
    """Re-run a traced round from its saved pre-state.

    Returns ``(match, expected_digest, replayed_digest)``.
    """
    trace_path = Path(trace_path)
    run_dir = trace_path.parent.parent
    trace = json.loads(trace_path.read_text())
    cfg = load_config(run_dir / "config.resolved.json")
    env = build_environment(cfg)
    pre = load_state(trace_path.with_name(trace_path.stem + "_pre.npz"), cfg)
    if pre.digest() != trace["pre_digest"]:
        return False, trace["pre_digest"], pre.digest()
    post, _ = run_round(pre, env)
    return post.digest() == trace["post_digest"], trace["post_digest"], post.digest()
