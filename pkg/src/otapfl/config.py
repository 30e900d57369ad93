"""Experiment configuration: JSON in, validated dataclasses out.

One file fully determines a run. Unknown keys are rejected at every level,
and :func:`dump_config` writes every field, defaults included.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .channel import PathLossParams
from .errors import ConfigError

MODES = ("proar_pfed", "perfect_csi", "no_ris", "central_ris", "ideal_fedavg")
FASHION_ENV = "OTAPFL_FASHION_MNIST"


@dataclass
class DatasetSpec:
    kind: str = "fashion_mnist"       # "fashion_mnist" | "synthetic"
    path: str | None = None           # IDX directory; falls back to $OTAPFL_FASHION_MNIST
    classes: int = 10
    dims: int = 784
    per_class: int = 600
    test_per_class: int = 100
    separation: float = 4.0
    noise: float = 1.0

    def resolved_path(self):
        return self.path or os.environ.get(FASHION_ENV)


@dataclass
class GeometrySpec:
    ps_position: tuple = (-50.0, 0.0, 10.0)
    x_range: tuple = (-20.0, 0.0)
    y_range: tuple = (-30.0, 30.0)
    ris_height: float = 2.0
    central_ris_position: tuple = (0.0, 0.0, 10.0)


@dataclass
class ExperimentConfig:
    seed: int = 0
    mode: str = "proar_pfed"
    users: int = 10
    rounds: int = 150
    phase_iters: int = 30
    sca_step: object = "lipschitz"     # "lipschitz" | "eigen" | positive float
    gamma: float = 0.5
    lam: float = 0.1
    tau_v: int = 3
    tau_max: int = 5
    eta: object = 0.01                 # float or "1/T"
    eta_v: float = 0.05
    beta_t: object = "T"               # float or "T"
    batch_size: int = 32
    snr_db: float = 20.0
    csi_error_ratio: float = 0.1       # CSI error variance as a multiple of sigma_c^2
    power_budget: object = "auto"      # per-user budget P, or "auto"
    power_normalization: str = "per_symbol"
    h_floor: float = 1e-6
    g_bound: object = "auto"
    calibration_steps: int = 100
    channel_reference: object = "auto"  # "auto" | [ur, rb]
    architecture: str = "mlp"
    hidden: int = 64
    activation: str = "relu"
    eval_every: int = 1
    diag_samples: int = 256
    workers: int = 1
    trace_rounds: object = None        # None | "all" | list of round indices
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    path_loss: PathLossParams = field(default_factory=PathLossParams)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_NESTED = {"dataset": DatasetSpec, "geometry": GeometrySpec, "path_loss": PathLossParams}


def _build(cls, data, where, problems):
    if not isinstance(data, dict):
        problems.append(f"{where}: expected an object")
        return cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        problems.append(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        if k not in names:
            continue
        if cls is ExperimentConfig and k in _NESTED:
            v = _build(_NESTED[k], v, f"{where}.{k}", problems)
        elif isinstance(v, list) and k != "trace_rounds" and k != "channel_reference":
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return cls()


def config_from_dict(data: dict, check_data=True) -> ExperimentConfig:
    problems = []
    cfg = _build(ExperimentConfig, data, "config", problems)
    if problems:
        raise ConfigError(problems)
    validate(cfg, check_data=check_data)
    return cfg


def load_config(path, check_data=True) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, check_data=check_data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    for k in ("dataset", "geometry"):
        for kk, vv in out[k].items():
            if isinstance(vv, tuple):
                out[k][kk] = list(vv)
    return out


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def _is_auto_or_positive(v, auto):
    return v == auto or (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0)


def validate(cfg: ExperimentConfig, check_data=True) -> None:
    """Raise :class:`ConfigError` listing every problem, before any compute."""
    p = []

    def need(cond, msg):
        if not cond:
            p.append(msg)

    need(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed must be a non-negative integer")
    need(cfg.mode in MODES, f"mode must be one of {MODES}")
    need(isinstance(cfg.users, int) and cfg.users >= 1, "users must be >= 1")
    need(isinstance(cfg.rounds, int) and cfg.rounds >= 0, "rounds must be >= 0")
    need(isinstance(cfg.phase_iters, int) and cfg.phase_iters >= 1, "phase_iters must be >= 1")
    need(cfg.sca_step in ("lipschitz", "eigen") or _is_auto_or_positive(cfg.sca_step, None),
         "sca_step must be 'lipschitz', 'eigen' or a positive number")
    need(isinstance(cfg.gamma, (int, float)) and cfg.gamma > 0, "gamma must be positive")
    need(cfg.lam >= 0, "lam must be >= 0")
    need(isinstance(cfg.tau_v, int) and cfg.tau_v >= 1, "tau_v must be >= 1")
    need(isinstance(cfg.tau_max, int) and cfg.tau_max >= 1, "tau_max must be >= 1")
    need(_is_auto_or_positive(cfg.eta, "1/T"), "eta must be positive or '1/T'")
    need(cfg.eta_v > 0, "eta_v must be positive")
    need(_is_auto_or_positive(cfg.beta_t, "T"), "beta_t must be positive or 'T'")
    need(isinstance(cfg.batch_size, int) and cfg.batch_size >= 1, "batch_size must be >= 1")
    need(cfg.csi_error_ratio >= 0, "csi_error_ratio must be >= 0")
    need(_is_auto_or_positive(cfg.power_budget, "auto"), "power_budget must be positive or 'auto'")
    need(cfg.power_normalization in ("per_symbol", "total"), "power_normalization must be 'per_symbol' or 'total'")
    need(cfg.h_floor >= 0, "h_floor must be >= 0")
    need(_is_auto_or_positive(cfg.g_bound, "auto"), "g_bound must be positive or 'auto'")
    need(isinstance(cfg.calibration_steps, int) and cfg.calibration_steps >= 1, "calibration_steps must be >= 1")
    ref = cfg.channel_reference
    need(ref == "auto" or (isinstance(ref, (list, tuple)) and len(ref) == 2 and all(
        isinstance(r, (int, float)) and r > 0 for r in ref)),
        "channel_reference must be 'auto' or two positive numbers")
    need(cfg.architecture in ("softmax", "mlp"), "architecture must be 'softmax' or 'mlp'")
    need(isinstance(cfg.hidden, int) and cfg.hidden >= 1, "hidden must be >= 1")
    need(cfg.activation in ("relu", "tanh"), "activation must be 'relu' or 'tanh'")
    need(isinstance(cfg.eval_every, int) and cfg.eval_every >= 1, "eval_every must be >= 1")
    need(isinstance(cfg.diag_samples, int) and cfg.diag_samples >= 1, "diag_samples must be >= 1")
    need(isinstance(cfg.workers, int) and cfg.workers >= 1, "workers must be >= 1")
    tr = cfg.trace_rounds
    need(tr is None or tr == "all" or (isinstance(tr, list) and all(isinstance(t, int) and t >= 0 for t in tr)),
         "trace_rounds must be null, 'all' or a list of round indices")

    d = cfg.dataset
    need(d.kind in ("fashion_mnist", "synthetic"), "dataset.kind must be 'fashion_mnist' or 'synthetic'")
    if d.kind == "synthetic":
        need(d.per_class >= 1 and d.test_per_class >= 1, "dataset.per_class and test_per_class must be >= 1")
        need(d.separation > 0, "dataset.separation must be positive")
        need(d.classes >= 2 and d.dims >= 1, "dataset needs >= 2 classes and >= 1 dim")
        need(d.per_class * d.classes >= cfg.users, "dataset has fewer examples than users")
    elif check_data:
        from .data import missing_fashion_files
        root = d.resolved_path()
        if not root:
            p.append(f"dataset.path is not set (nor ${FASHION_ENV})")
        elif not Path(root).is_dir():
            p.append(f"dataset.path {root} does not exist")
        else:
            missing = missing_fashion_files(root)
            need(not missing, f"dataset.path {root} lacks {missing}")

    g = cfg.geometry
    for name in ("ps_position", "central_ris_position"):
        need(len(getattr(g, name)) == 3, f"geometry.{name} must have 3 coordinates")
    for name in ("x_range", "y_range"):
        r = getattr(g, name)
        need(len(r) == 2 and r[0] <= r[1], f"geometry.{name} must be [lo, hi]")
    need(g.ris_height > 0, "geometry.ris_height must be positive")
    if p:
        raise ConfigError(p)
