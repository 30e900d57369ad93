"""RIS phase design by successive convex approximation.

Drives the composite gain ``g^H theta`` toward a complex target ``s`` under
the unit-modulus constraint. Phases are optimized over real angles, so
``|theta_n| == 1`` holds by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError


def wrap_angle(phi):
    """Map angles to (-pi, pi]."""
    phi = np.asarray(phi, dtype=float)
    return np.pi - np.mod(np.pi - phi, 2 * np.pi)


@dataclass
class PhaseConfig:
    phi: np.ndarray

    def __post_init__(self):
        self.phi = wrap_angle(np.atleast_1d(self.phi))

    @classmethod
    def zeros(cls, n: int) -> "PhaseConfig":
        return cls(np.zeros(n))

    @property
    def theta(self) -> np.ndarray:
        return np.exp(1j * self.phi)

    def __len__(self):
        return len(self.phi)


@dataclass
class SurrogateProblem:
    g_hat: np.ndarray
    s: complex
    a: np.ndarray
    u_matrix: np.ndarray
    sca_step: float

    @property
    def n(self) -> int:
        return len(self.g_hat)


def target_level(eta, beta_t, alpha_i, g_bound, p_budget) -> float:
    """Gain magnitude at which the worst-case transmit power meets the budget."""
    return 3.0 * eta**2 * beta_t * alpha_i * g_bound**2 / p_budget


def sca_step_for(g_hat, s, rule="lipschitz") -> float:
    """Step denominator for the angle iteration.

    ``"eigen"`` is ``2 ||g||^2``, twice the top eigenvalue of ``U``. It descends
    whenever the target is reachable (``|s| <= sum |g_n|``) but can oscillate
    when it is not. ``"lipschitz"`` adds ``2 (|s| + ||g||_1) max|g_n|``, which
    bounds the angle-space curvature and makes every step a descent step.
    """
    g = np.asarray(g_hat, dtype=complex)
    mags = np.abs(g)
    step = 2.0 * float(np.sum(mags**2))
    if rule == "lipschitz":
        step += 2.0 * (abs(s) + float(mags.sum())) * float(mags.max(initial=0.0))
    elif rule != "eigen":
        raise DomainError(f"unknown sca_step rule {rule!r}")
    # g == 0: the gradient vanishes, any positive step works.
    return step if step > 0 else 1.0


def build_problem(eta, beta_t, alpha_i, g_bound, p_budget, h_ub_hat, g_hat, sca_step) -> SurrogateProblem:
    """Assemble the phase problem from estimated channel quantities only."""
    if not p_budget > 0:
        raise DomainError(f"power budget must be positive, got {p_budget}")
    if eta < 0:
        raise DomainError(f"learning rate must be non-negative, got {eta}")
    g_hat = np.atleast_1d(np.asarray(g_hat, dtype=complex))
    s = target_level(eta, beta_t, alpha_i, g_bound, p_budget) - complex(h_ub_hat)
    if isinstance(sca_step, str):
        sca_step = sca_step_for(g_hat, s, sca_step)
    if not sca_step > 0:
        raise DomainError(f"sca_step must be positive, got {sca_step}")
    return SurrogateProblem(
        g_hat=g_hat,
        s=s,
        a=s * g_hat,
        u_matrix=np.outer(g_hat, np.conj(g_hat)),
        sca_step=float(sca_step),
    )


def _phi(phi):
    return phi.phi if isinstance(phi, PhaseConfig) else np.asarray(phi, dtype=float)


def objective(phi, prob: SurrogateProblem) -> float:
    """``|s - g^H theta|^2``."""
    theta = np.exp(1j * _phi(phi))
    return float(abs(prob.s - np.vdot(prob.g_hat, theta)) ** 2)


def objective_expanded(phi, prob: SurrogateProblem) -> float:
    """Quadratic form ``s* s - 2 Re{theta^H a} + theta^H U theta``."""
    theta = np.exp(1j * _phi(phi))
    val = np.conj(prob.s) * prob.s - 2 * np.real(np.vdot(theta, prob.a)) + np.vdot(theta, prob.u_matrix @ theta)
    return float(np.real(val))


def gradient(phi, prob: SurrogateProblem) -> np.ndarray:
    """Gradient in angle space: ``2 Im{e^{-j phi_n} ((U theta)_n - a_n)}``."""
    phi = _phi(phi)
    if len(phi) != prob.n:
        raise DomainError(f"expected {prob.n} angles, got {len(phi)}")
    theta = np.exp(1j * phi)
    # (U theta) - a == g (g^H theta - s); avoids forming U for large N.
    resid = prob.g_hat * (np.vdot(prob.g_hat, theta) - prob.s)
    return 2.0 * np.imag(np.conj(theta) * resid)


def optimize(prob: SurrogateProblem, phi_init, j_iters: int) -> PhaseConfig:
    """Run ``j_iters`` steps of ``phi <- phi - grad / sca_step``."""
    if j_iters < 1:
        raise DomainError(f"need at least one iteration, got {j_iters}")
    phi = np.array(_phi(phi_init), dtype=float)
    for j in range(j_iters):
        step = gradient(phi, prob)
        if not np.all(np.isfinite(step)):
            raise NumericError(
                f"non-finite phase gradient at iteration {j}: |s|={abs(prob.s):.3g}, "
                f"||g||={np.linalg.norm(prob.g_hat):.3g}, sca_step={prob.sca_step:.3g}"
            )
        phi = phi - step / prob.sca_step
    return PhaseConfig(phi)
