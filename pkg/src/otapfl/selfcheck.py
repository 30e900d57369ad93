"""Fast gradient and invariant battery behind ``otapfl check``.

Each check returns ``(name, ok, detail)``. Everything here is independent of
pytest so an installed package can verify itself.
"""
from __future__ import annotations

import numpy as np

from . import channel as ch
from .models import MLP, SoftmaxRegression
from .phase import PhaseConfig, build_problem, gradient, objective, optimize
from .power import power_factor
from .protocol import superimpose
from .training import PersonalState, dirichlet_partition


def _fd(f, x, h=1e-6):
    out = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def check_model_gradients(trials=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        model = [SoftmaxRegression(4, 3), MLP(4, 5, 3, "tanh"), MLP(4, 5, 3, "relu")][t % 3]
        X, y = rng.standard_normal((6, 4)), rng.integers(0, 3, 6)
        w = rng.standard_normal(model.size) * 0.5
        worst = max(worst, _rel(model.grad(w, X, y), _fd(lambda p: model.loss(p, X, y), w)))
    return "model gradients vs finite differences", worst < 1e-5, f"max rel err {worst:.2e}"


def check_personal_gradient(trials=20, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        model = MLP(3, 4, 2, "tanh")
        X, y = rng.standard_normal((5, 3)), rng.integers(0, 2, 5)
        v, w_ref, lam = rng.standard_normal(model.size), rng.standard_normal(model.size), rng.uniform(0, 2)
        obj = lambda p: model.loss(p, X, y) + lam / 2 * np.sum((p - w_ref) ** 2)  # noqa: E731
        an = model.grad(v, X, y) + lam * (v - w_ref)
        worst = max(worst, _rel(an, _fd(obj, v)))
    return "regularized personal gradient", worst < 1e-5, f"max rel err {worst:.2e}"


def check_phase_gradient(trials=20, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        n = (1, 2, 4, 10)[t % 4]
        g = ch.complex_gaussian(rng, 1.0, n)
        prob = build_problem(0.1, 1.0, 1.0, 1.0, 1.0, ch.complex_gaussian(rng, 1.0), g, "eigen")
        phi = rng.uniform(-np.pi, np.pi, n)
        worst = max(worst, _rel(gradient(phi, prob), _fd(lambda p: objective(p, prob), phi)))
    return "phase-objective gradient", worst < 1e-5, f"max rel err {worst:.2e}"


def check_single_element_optimum():
    g, s = 1.0 + 0j, 1j
    prob = build_problem(0.0, 1.0, 1.0, 1.0, 1.0, -s, np.array([g]), "eigen")
    res = optimize(prob, PhaseConfig(np.array([0.3])), 200)
    ok = abs(res.phi[0] - np.pi / 2) < 1e-6
    return "N=1 phase optimum", ok, f"phi={res.phi[0]:.8f}"


def check_cascade_equivalence(trials=20, seed=3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        gains = ch.LinkGains(ch.complex_gaussian(rng, 1.0), ch.complex_gaussian(rng, 1.0, n),
                             ch.complex_gaussian(rng, 1.0, n))
        theta = np.exp(1j * rng.uniform(-np.pi, np.pi, n))
        direct = gains.h_ub + np.conj(gains.h_ur) @ np.diag(theta) @ gains.h_rb
        via = ch.effective_gain(gains.h_ub, gains.cascaded_g, theta)
        worst = max(worst, abs(via - direct) / max(abs(direct), 1e-300))
    return "cascaded-channel equivalence", worst < 1e-12, f"max rel err {worst:.2e}"


def check_noiseless_aggregation(seed=4):
    rng = np.random.default_rng(seed)
    m, d, beta_t = 5, 7, 3.0
    alphas = rng.dirichlet(np.ones(m))
    taus = rng.integers(1, 5, m)
    deltas = rng.standard_normal((m, d))
    h = ch.complex_gaussian(rng, 1.0, m)
    signals = [power_factor(beta_t, alphas[i], taus[i], h[i]) * deltas[i] for i in range(m)]
    update, _ = superimpose(signals, h, 0.0, beta_t, rng)
    ideal = sum(alphas[i] / taus[i] * deltas[i] for i in range(m))
    err = float(np.max(np.abs(update - ideal)))
    return "noiseless channel-inversion aggregation", err < 1e-9, f"max abs err {err:.2e}"


def check_partition(seed=5):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, 2000)
    part = dirichlet_partition(labels, 0.3, 7, rng)
    allidx = np.concatenate(part.indices)
    ok = len(allidx) == len(labels) and len(np.unique(allidx)) == len(labels)
    ok = ok and abs(part.weights().sum() - 1) < 1e-12
    return "Dirichlet partition is a partition", bool(ok), f"{len(part.indices)} shards"


def check_personal_contraction():
    class Zero:
        def grad(self, p, X, y):
            return np.zeros_like(p)
    from .training import personalized_steps
    w = np.zeros(3)
    s = PersonalState(np.ones(3), eta_v=0.5, lambda_reg=1.0, tau_v=4)
    out = personalized_steps(Zero(), s, w, np.zeros((1, 1)), np.zeros(1, int), np.random.default_rng(0))
    ok = np.allclose(out.v, 0.5**4)
    return "personal update contraction", bool(ok), f"v={out.v[0]:.6f}"


CHECKS = [
    check_model_gradients, check_personal_gradient, check_phase_gradient,
    check_single_element_optimum, check_cascade_equivalence, check_noiseless_aggregation,
    check_partition, check_personal_contraction,
]


def run_checks():
    return [c() for c in CHECKS]
