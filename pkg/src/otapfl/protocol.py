"""Round orchestration: RIS design, local training, analog aggregation, personalization.

A round runs in this order:

1. every user estimates its channel and updates its RIS phases;
2. the PS broadcasts ``w_t`` (error-free);
3. each user picks ``tau``, runs local SGD, inverts its estimated gain and transmits;
4. each user runs ``tau_v`` regularized steps on its personal model;
5. the PS receives the superposition plus noise and applies the update.

Devices act on estimated CSI; the air applies the true gains. Per-user work
draws only from that user's named streams, so results do not depend on how
many worker threads run the users.
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .config import ExperimentConfig, validate
from .data import Dataset, load_fashion_mnist, synthesize_dataset
from .errors import SkipRound
from .models import build_model, evaluate
from .phase import PhaseConfig, build_problem, optimize, target_level
from .power import energy_cap, encode_transmit, power_factor, select_local_steps
from .seeds import SeedTree
from .training import PersonalState, dirichlet_partition, local_sgd, personal_grad_norm, personalized_steps

log = logging.getLogger(__name__)

PERSONAL_RIS_MODES = ("proar_pfed", "perfect_csi")


def superimpose(signals, gains, sigma_c, beta_t, rng):
    """Received sum ``sum_i h_i x_i + z`` scaled back by ``1/beta_t``.

    Returns ``(update, imag_residual)``: the real part is the model update;
    the imaginary part carries only misalignment and noise and is reported as
    a norm. ``z`` is ``CN(0, sigma_c^2 I)``, so each real coordinate of the
    update picks up noise of variance ``sigma_c^2 / (2 beta_t^2)``.
    """
    signals = [np.asarray(x) for x in signals]
    d = len(signals[0])
    y = np.zeros(d, dtype=complex)
    for h, x in zip(gains, signals):
        if len(x) != d:
            raise ValueError("all signals must have the same length")
        y += complex(h) * x
    if sigma_c > 0:
        y += ch.complex_gaussian(rng, sigma_c**2, d)
    y /= beta_t
    return y.real.copy(), float(np.linalg.norm(y.imag))


@dataclass
class GlobalState:
    w: np.ndarray
    personal: list
    phases: list          # one angle vector per RIS
    round: int = 0

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.w).tobytes())
        for s in self.personal:
            h.update(np.ascontiguousarray(s.v).tobytes())
        for phi in self.phases:
            h.update(np.ascontiguousarray(phi).tobytes())
        h.update(str(self.round).encode())
        return h.hexdigest()


@dataclass
class UserTrace:
    user: int
    skipped: bool
    reason: str | None
    tau: int
    beta_i: complex
    h_true: complex
    h_est: complex
    energy: float
    energy_cap: float
    scale: float
    target: float
    target_met: bool
    max_grad_norm: float
    gains: dict | None = None
    estimate: dict | None = None
    phi: list | None = None

    def to_dict(self):
        c = lambda z: [float(z.real), float(z.imag)]  # noqa: E731
        out = {k: getattr(self, k) for k in (
            "user", "skipped", "reason", "tau", "energy", "energy_cap", "scale", "target",
            "target_met", "max_grad_norm", "gains", "estimate", "phi")}
        out.update(beta_i=c(self.beta_i), h_true=c(self.h_true), h_est=c(self.h_est))
        return out


@dataclass
class RoundTrace:
    round: int
    mode: str
    users: list
    noise_std: float
    imag_residual: float
    agg_mse: float
    update_norm: float
    all_skipped: bool
    designer: int | None
    pre_digest: str
    post_digest: str

    @property
    def skipped(self) -> int:
        return sum(u.skipped for u in self.users)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "round", "mode", "noise_std", "imag_residual", "agg_mse", "update_norm",
            "all_skipped", "designer", "pre_digest", "post_digest")}
        d["users"] = [u.to_dict() for u in self.users]
        return d


@dataclass
class Environment:
    """Everything fixed for the duration of an experiment."""

    cfg: ExperimentConfig
    tree: SeedTree
    model: object
    train: Dataset
    test: Dataset
    shards: list
    test_shards: list
    diag_shards: list
    alphas: np.ndarray
    geometry: ch.Geometry
    path_loss: ch.PathLossParams
    reference: ch.GainReference
    eta: float
    beta_t: float
    g_bound: float
    p_budget: float
    energy_cap: float
    sigma_c2: float
    csi_err_var: float

    @property
    def d(self) -> int:
        return self.model.size

    @property
    def central(self) -> bool:
        return self.cfg.mode == "central_ris"

    @property
    def air_geometry(self) -> ch.Geometry:
        if self.central:
            return self.geometry.with_shared_ris(self.cfg.geometry.central_ris_position)
        return self.geometry

    @property
    def air_path_loss(self) -> ch.PathLossParams:
        if self.central:
            return self.path_loss.with_elements(self.cfg.users * self.path_loss.n_elements)
        return self.path_loss

    def resolved(self) -> ExperimentConfig:
        """Config with every ``auto`` knob replaced by the value actually used."""
        return self.cfg.replace(
            g_bound=self.g_bound, power_budget=self.p_budget,
            channel_reference=[self.reference.ur, self.reference.rb],
        )

    def derived(self) -> dict:
        return {
            "d": self.d, "eta": self.eta, "beta_t": self.beta_t, "g_bound": self.g_bound,
            "p_budget": self.p_budget, "energy_cap": self.energy_cap, "sigma_c2": self.sigma_c2,
            "csi_err_var": self.csi_err_var, "alphas": self.alphas.tolist(),
            "shard_sizes": [len(s) for s in self.shards],
        }


def _load_data(cfg: ExperimentConfig, tree: SeedTree):
    spec = cfg.dataset
    if spec.kind == "fashion_mnist":
        return load_fashion_mnist(spec.resolved_path())
    full = synthesize_dataset(spec.classes, spec.dims, spec.per_class + spec.test_per_class,
                              spec.separation, tree.rng("data"), noise=spec.noise)
    train_idx, test_idx = [], []
    for c in range(spec.classes):
        members = np.flatnonzero(full.y == c)
        train_idx.append(members[:spec.per_class])
        test_idx.append(members[spec.per_class:])
    return full.subset(np.sort(np.concatenate(train_idx))), full.subset(np.sort(np.concatenate(test_idx)))


def calibrate_g_bound(model, w0, shards, eta, batch_size, steps, rng) -> float:
    """Twice the largest stochastic-gradient norm seen over a short SGD dry run."""
    w = np.array(w0, dtype=float)
    largest = 0.0
    for k in range(steps):
        shard = shards[k % len(shards)]
        idx = rng.integers(0, len(shard), size=batch_size)
        g = model.grad(w, shard.X[idx], shard.y[idx])
        largest = max(largest, float(np.linalg.norm(g)))
        w = w - eta * g
    return 2.0 * largest


def design_gain(geometry: ch.Geometry, p: ch.PathLossParams, reference: ch.GainReference) -> float:
    """Median over users of the expected phase-aligned cascade magnitude ``N (pi/4) sqrt(var_ur var_rb)``."""
    var_ur, var_rb = ch.hop_variances(geometry.d_ur, geometry.d_rp, p)
    per_user = p.n_elements * np.pi / 4 * np.sqrt(var_ur / reference.ur * var_rb / reference.rb)
    return float(np.median(per_user))


def build_environment(cfg: ExperimentConfig, check_data=True) -> Environment:
    validate(cfg, check_data=check_data)
    tree = SeedTree(cfg.seed)
    train, test = _load_data(cfg, tree)
    model = build_model(cfg.architecture, train.X.shape[1], train.n_classes, cfg.hidden, cfg.activation)

    part = dirichlet_partition(train.y, cfg.gamma, cfg.users, tree.rng("partition"))
    test_part = dirichlet_partition(test.y, cfg.gamma, cfg.users, tree.rng("partition-test"),
                                    proportions=part.proportions)
    shards = [train.subset(ix) for ix in part.indices]
    test_shards = [test.subset(ix) for ix in test_part.indices]
    diag_shards = []
    for i, s in enumerate(shards):
        pick = tree.rng("diag", user=i).permutation(len(s))[:cfg.diag_samples]
        diag_shards.append(s.subset(np.sort(pick)))
    alphas = part.weights()

    g = cfg.geometry
    geometry = ch.Geometry.random_personal(cfg.users, tree.rng("geometry"), g.ps_position, g.x_range,
                                           g.y_range, g.ris_height)
    pl = cfg.path_loss
    if cfg.channel_reference == "auto":
        reference = ch.GainReference.from_geometry(geometry, pl)
    else:
        reference = ch.GainReference(*map(float, cfg.channel_reference))

    T = cfg.rounds
    eta = 1.0 / max(T, 1) if cfg.eta == "1/T" else float(cfg.eta)
    beta_t = float(max(T, 1)) if cfg.beta_t == "T" else float(cfg.beta_t)

    w0 = model.init(tree.rng("init"))
    if cfg.g_bound == "auto":
        g_bound = calibrate_g_bound(model, w0, shards, eta, cfg.batch_size, cfg.calibration_steps,
                                    tree.rng("calibration"))
    else:
        g_bound = float(cfg.g_bound)
    if cfg.power_budget == "auto":
        # The largest-weight user's design target sits at the typical aligned gain.
        p_budget = target_level(eta, beta_t, float(alphas.max()), g_bound, 1.0) / design_gain(geometry, pl, reference)
    else:
        p_budget = float(cfg.power_budget)

    if cfg.mode == "ideal_fedavg":
        sigma_c2 = 0.0
    else:
        sigma_c2 = p_budget / 10 ** (cfg.snr_db / 10)
    csi_err_var = cfg.csi_error_ratio * sigma_c2 if cfg.mode in ("proar_pfed", "no_ris", "central_ris") else 0.0

    return Environment(
        cfg=cfg, tree=tree, model=model, train=train, test=test, shards=shards,
        test_shards=test_shards, diag_shards=diag_shards, alphas=alphas, geometry=geometry,
        path_loss=pl, reference=reference, eta=eta, beta_t=beta_t, g_bound=g_bound,
        p_budget=p_budget, energy_cap=energy_cap(p_budget, model.size, cfg.power_normalization),
        sigma_c2=sigma_c2, csi_err_var=csi_err_var,
    )


def initial_state(env: Environment) -> GlobalState:
    cfg = env.cfg
    w0 = env.model.init(env.tree.rng("init"))
    personal = [PersonalState(w0.copy(), cfg.eta_v, cfg.lam, cfg.tau_v) for _ in range(cfg.users)]
    if env.central:
        phases = [np.zeros(env.air_path_loss.n_elements)]
    elif cfg.mode in PERSONAL_RIS_MODES:
        phases = [np.zeros(env.path_loss.n_elements) for _ in range(cfg.users)]
    else:
        phases = []
    return GlobalState(w0, personal, phases, 0)


def _design(env: Environment, i: int, est: ch.LinkGains, phi_prev) -> PhaseConfig:
    cfg = env.cfg
    prob = build_problem(env.eta, env.beta_t, env.alphas[i], env.g_bound, env.p_budget,
                         est.h_ub, est.cascaded_g, cfg.sca_step)
    return optimize(prob, phi_prev, cfg.phase_iters)


def _user_job(env: Environment, state: GlobalState, i: int, true, est, shared_phi):
    """Steps 1 and 3-4 of the round for user ``i``; touches only user-``i`` streams."""
    cfg, t = env.cfg, state.round
    alpha = float(env.alphas[i])
    phi = None
    if cfg.mode == "ideal_fedavg":
        h_true = h_est = 1.0 + 0.0j
    elif cfg.mode == "no_ris":
        h_true, h_est = true.h_ub, est.h_ub
    else:
        if env.central:
            phi = shared_phi
        else:
            phi = _design(env, i, est, state.phases[i]).phi
        theta = np.exp(1j * phi)
        h_true = ch.effective_gain(true.h_ub, true.cascaded_g, theta)
        h_est = ch.effective_gain(est.h_ub, est.cascaded_g, theta)
    target = target_level(env.eta, env.beta_t, alpha, env.g_bound, env.p_budget)

    skipped, reason = False, None
    try:
        tau = select_local_steps(env.energy_cap, env.beta_t, alpha, h_est, env.eta, env.g_bound,
                                 cfg.tau_max, cfg.h_floor)
        beta_i = power_factor(env.beta_t, alpha, tau, h_est, cfg.h_floor)
    except SkipRound as exc:
        skipped, reason, tau, beta_i = True, exc.reason, cfg.tau_max, 0j

    shard = env.shards[i]
    local = local_sgd(env.model, state.w, shard.X, shard.y, tau, env.eta, cfg.batch_size,
                      env.tree.rng("local", t, i))
    if skipped:
        tx = None
    else:
        tx = encode_transmit(local.delta, beta_i, env.energy_cap)
    personal = personalized_steps(env.model, state.personal[i], state.w, shard.X, shard.y,
                                  env.tree.rng("personal", t, i), cfg.batch_size)
    trace = UserTrace(
        user=i, skipped=skipped, reason=reason, tau=tau, beta_i=complex(beta_i),
        h_true=complex(h_true), h_est=complex(h_est),
        energy=tx.energy if tx else 0.0, energy_cap=env.energy_cap, scale=tx.scale if tx else 0.0,
        target=target, target_met=bool(h_est.real >= target), max_grad_norm=local.max_grad_norm,
        gains=true.to_dict() if true is not None else None,
        estimate=est.to_dict() if est is not None else None,
        phi=phi.tolist() if phi is not None and not env.central else None,
    )
    return trace, local.delta, tx, phi, personal


def run_round(state: GlobalState, env: Environment, pool: ThreadPoolExecutor | None = None):
    """Advance one round. Returns ``(new_state, trace)``."""
    cfg, t, m = env.cfg, state.round, env.cfg.users
    pre = state.digest()
    if cfg.mode == "ideal_fedavg":
        true = est = [None] * m
    else:
        true = ch.sample_round(env.air_geometry, env.air_path_loss, env.tree.rng("fading", round=t), env.reference)
        est = [ch.estimate_csi(true[i], env.csi_err_var, env.tree.rng("csi", t, i)) for i in range(m)]

    shared_phi, designer = None, None
    if env.central:
        # The shared surface is tuned for one user per round, taken round-robin.
        designer = t % m
        shared_phi = _design(env, designer, est[designer], state.phases[0]).phi

    jobs = [(env, state, i, true[i], est[i], shared_phi) for i in range(m)]
    if pool is not None and cfg.workers > 1:
        results = list(pool.map(lambda a: _user_job(*a), jobs))
    else:
        results = [_user_job(*a) for a in jobs]

    traces = [r[0] for r in results]
    signals = [r[2].x if r[2] is not None else np.zeros(env.d, dtype=complex) for r in results]
    gains = [u.h_true for u in traces]
    update, imag = superimpose(signals, gains, np.sqrt(env.sigma_c2), env.beta_t, env.tree.rng("noise", round=t))
    all_skipped = all(u.skipped for u in traces)
    if all_skipped:
        log.warning("round %d: every user skipped; global model unchanged", t)
        update = np.zeros(env.d)
    ideal = sum(env.alphas[i] / traces[i].tau * results[i][1] for i in range(m))
    diff = update - ideal

    if env.central:
        phases = [shared_phi]
    elif cfg.mode in PERSONAL_RIS_MODES:
        phases = [r[3] for r in results]
    else:
        phases = []
    new = GlobalState(state.w + update, [r[4] for r in results], phases, t + 1)
    trace = RoundTrace(
        round=t, mode=cfg.mode, users=traces, noise_std=float(np.sqrt(env.sigma_c2 / 2) / env.beta_t),
        imag_residual=imag, agg_mse=float(diff @ diff), update_norm=float(np.linalg.norm(update)),
        all_skipped=all_skipped, designer=designer, pre_digest=pre, post_digest=new.digest(),
    )
    return new, trace


def _traced(cfg, t):
    tr = cfg.trace_rounds
    return tr == "all" or (isinstance(tr, list) and t in tr)


def evaluate_state(env: Environment, state: GlobalState) -> dict:
    g_loss, g_acc = evaluate(env.model, state.w, env.test.X, env.test.y)
    accs, losses, norms = [], [], []
    for i, s in enumerate(state.personal):
        ts = env.test_shards[i]
        if len(ts):
            loss, acc = evaluate(env.model, s.v, ts.X, ts.y)
        else:
            loss, acc = np.nan, np.nan
        accs.append(acc)
        losses.append(loss)
        ds = env.diag_shards[i]
        norms.append(personal_grad_norm(env.model, s, state.w, ds.X, ds.y))
    return {
        "global_loss": g_loss, "global_acc": g_acc,
        "pers_acc_mean": float(np.nanmean(accs)), "pers_acc_std": float(np.nanstd(accs)),
        "pers_loss_mean": float(np.nanmean(losses)), "pers_grad_norm_mean": float(np.mean(norms)),
        "pers_acc_users": accs,
    }


@dataclass
class ExperimentResult:
    env: Environment
    state: GlobalState
    metrics: list = field(default_factory=list)
    traces: list = field(default_factory=list)      # (RoundTrace, pre-state) for traced rounds

    @property
    def final(self) -> dict:
        return self.metrics[-1] if self.metrics else {}


def run_experiment(cfg: ExperimentConfig, env: Environment | None = None, progress=None) -> ExperimentResult:
    """Run ``cfg.rounds`` rounds and collect per-round metrics."""
    env = env or build_environment(cfg)
    state = initial_state(env)
    result = ExperimentResult(env, state)
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(cfg.rounds):
            pre_state = state
            state, trace = run_round(state, env, pool)
            row = {
                "round": t, "skipped": trace.skipped, "mean_tau": float(np.mean([u.tau for u in trace.users])),
                "agg_mse": trace.agg_mse, "imag_residual": trace.imag_residual,
                "backstops": sum(1 for u in trace.users if not u.skipped and u.scale < 1.0),
                "max_energy_ratio": max(u.energy / u.energy_cap for u in trace.users),
                "target_met": sum(u.target_met for u in trace.users),
            }
            if (t + 1) % cfg.eval_every == 0 or t == cfg.rounds - 1:
                row.update(evaluate_state(env, state))
            result.metrics.append(row)
            if _traced(cfg, t):
                result.traces.append((trace, pre_state))
            if progress:
                progress(row)
    finally:
        if pool:
            pool.shutdown()
    result.state = state
    return result


def central_ris_baseline(cfg: ExperimentConfig, **kw) -> ExperimentResult:
    """Same experiment through one shared ``m*N``-element RIS."""
    return run_experiment(cfg.replace(mode="central_ris"), **kw)
