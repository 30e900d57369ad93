"""Channel-inversion power control, local-step selection and transmit encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DeepFadeError, DomainError, InfeasibleError

H_FLOOR = 1e-6
# Slack for the boundary case where the bound is met with equality.
_REL_SLACK = 1e-12


@dataclass
class PowerPlan:
    beta_t: float
    beta_i: complex
    tau_i: int
    p_budget_i: float
    energy_cap: float
    g_bound: float

    def __post_init__(self):
        if self.tau_i < 1:
            raise DomainError(f"tau must be >= 1, got {self.tau_i}")
        if not np.isfinite(self.beta_i):
            raise DomainError("power factor must be finite")
        if not self.g_bound > 0:
            raise DomainError(f"gradient bound must be positive, got {self.g_bound}")


@dataclass
class Transmission:
    x: np.ndarray
    energy: float
    scale: float = 1.0

    @property
    def backstop(self) -> bool:
        return self.scale < 1.0


def energy_cap(p_budget: float, d: int, normalization: str = "per_symbol") -> float:
    """Bound on ``||x||^2`` for a length-``d`` signal with budget ``p_budget``."""
    if normalization == "per_symbol":
        return p_budget * d
    if normalization == "total":
        return p_budget
    raise DomainError(f"unknown power normalization {normalization!r}")


def power_factor(beta_t, alpha_i, tau_i, h_hat_i, h_floor=H_FLOOR) -> complex:
    """``beta_t alpha_i / (tau_i h_hat_i)``, inverting the estimated overall gain."""
    if tau_i < 1:
        raise DomainError(f"tau must be >= 1, got {tau_i}")
    if abs(h_hat_i) <= h_floor:
        raise DeepFadeError(f"|h_hat| = {abs(h_hat_i):.3g} at or below floor {h_floor:g}")
    return beta_t * alpha_i / (tau_i * complex(h_hat_i))


def select_local_steps(p_budget, beta_t, alpha_i, h_hat_i, eta, g_bound, tau_max, h_floor=H_FLOOR) -> int:
    """Largest ``tau`` in ``[1, tau_max]`` whose worst-case energy fits ``p_budget``.

    The worst case is ``|beta_i(tau)|^2 (eta tau G)^2``. Because ``beta_i`` scales
    as ``1/tau`` the bound does not actually depend on ``tau``. Either every
    ``tau`` passes (giving ``tau_max``) or none does, and then
    :class:`InfeasibleError` tells the caller to skip the user. The realized
    signal energy is capped separately in :func:`encode_transmit`.
    """
    if tau_max < 1:
        raise DomainError(f"tau_max must be >= 1, got {tau_max}")
    for tau in range(tau_max, 0, -1):
        beta_i = power_factor(beta_t, alpha_i, tau, h_hat_i, h_floor)
        worst = abs(beta_i) ** 2 * (eta * tau * g_bound) ** 2
        if worst <= p_budget * (1 + _REL_SLACK):
            return tau
    raise InfeasibleError(f"worst-case energy exceeds budget {p_budget:g} even at tau=1")


def encode_transmit(delta_w, beta_i, max_energy=np.inf) -> Transmission:
    """``x = beta_i * delta_w``, scaled down if its energy exceeds ``max_energy``."""
    x = complex(beta_i) * np.asarray(delta_w, dtype=float)
    energy = float(np.vdot(x, x).real)
    if energy > max_energy:
        scale = float(np.sqrt(max_energy / energy))
        x = x * scale
        return Transmission(x, float(np.vdot(x, x).real), scale)
    return Transmission(x, energy)
