"""Block-fading uplink channels for users with personal (or one shared) RIS.

Every scalar gain is circularly-symmetric complex Gaussian, zero mean, with
variance set by the large-scale path loss of its hop. Gains are redrawn
independently every round.

The RIS link path loss covers the whole ``N``-element cascade. It is split
into per-element hop variances whose product is ``PL_ris / N**2``; the factor
``N**2`` then reappears as coherent combining gain once the phases align:

    var(h_UR[n]) = sqrt(K) / d_UR**2,    var(h_RB[n]) = sqrt(K) / d_RP**2,
    K = G_PS G_U G_RIS d_x d_y (c/f_c)**2 / (64 pi**3)

Absolute path losses are around 1e-13 (direct) and 1e-9 (RIS). Simulations
therefore express gains relative to a :class:`GainReference`. The default
reference of one leaves the raw path-loss variances untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

SPEED_OF_LIGHT = 3e8
# Element spacing constant: d_x = d_y = (3e7 m/s) / f_c.
_ELEMENT_SPACING_SPEED = 3e7


def db_to_linear(dbi: float) -> float:
    return 10.0 ** (dbi / 10.0)


@dataclass(frozen=True)
class PathLossParams:
    g_ps_dbi: float = 5.0
    g_u_dbi: float = 0.0
    g_ris_dbi: float = 5.0
    f_c: float = 915e6
    pl_exponent: float = 4.0
    n_elements: int = 10

    def __post_init__(self):
        if not self.f_c > 0:
            raise DomainError(f"carrier frequency must be positive, got {self.f_c}")
        if self.n_elements < 1:
            raise DomainError(f"n_elements must be >= 1, got {self.n_elements}")
        # pl_exponent < 2 is tolerated: the zero exponent is a useful identity check.
        if self.pl_exponent < 0:
            raise DomainError(f"pl_exponent must be non-negative, got {self.pl_exponent}")

    def with_elements(self, n: int) -> "PathLossParams":
        return PathLossParams(self.g_ps_dbi, self.g_u_dbi, self.g_ris_dbi, self.f_c, self.pl_exponent, n)


def _check_distance(name, d):
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError(f"{name} must be strictly positive, got {d}")
    return d


def path_loss_direct(d_up, p: PathLossParams):
    """Linear gain of the user-PS link at distance ``d_up`` metres."""
    d_up = _check_distance("d_up", d_up)
    gain = db_to_linear(p.g_ps_dbi) * db_to_linear(p.g_u_dbi)
    out = gain * (SPEED_OF_LIGHT / (4 * np.pi * p.f_c * d_up)) ** p.pl_exponent
    return float(out) if out.ndim == 0 else out


def _ris_constant(p: PathLossParams) -> float:
    dx = dy = _ELEMENT_SPACING_SPEED / p.f_c
    wavelength = SPEED_OF_LIGHT / p.f_c
    gains = db_to_linear(p.g_ps_dbi) * db_to_linear(p.g_u_dbi) * db_to_linear(p.g_ris_dbi)
    return gains * dx * dy * wavelength**2 / (64 * np.pi**3)


def path_loss_ris(d_ur, d_rp, p: PathLossParams):
    """Linear gain of the full ``N``-element user-RIS-PS link."""
    d_ur = _check_distance("d_ur", d_ur)
    d_rp = _check_distance("d_rp", d_rp)
    out = _ris_constant(p) * p.n_elements**2 / (d_rp**2 * d_ur**2)
    return float(out) if out.ndim == 0 else out


def hop_variances(d_ur, d_rp, p: PathLossParams):
    """Per-element variances ``(var_ur, var_rb)``; their product is ``PL_ris / N**2``."""
    d_ur = _check_distance("d_ur", d_ur)
    d_rp = _check_distance("d_rp", d_rp)
    root = np.sqrt(_ris_constant(p))
    return root / d_ur**2, root / d_rp**2


@dataclass
class Geometry:
    """Positions in metres. A single RIS row means one surface shared by all users."""

    ps_position: np.ndarray
    user_positions: np.ndarray
    ris_positions: np.ndarray

    def __post_init__(self):
        self.ps_position = np.asarray(self.ps_position, dtype=float).reshape(3)
        self.user_positions = np.atleast_2d(np.asarray(self.user_positions, dtype=float))
        self.ris_positions = np.atleast_2d(np.asarray(self.ris_positions, dtype=float))
        m = len(self.user_positions)
        if self.user_positions.shape != (m, 3) or self.ris_positions.shape[1] != 3:
            raise DomainError("positions must be 3-vectors")
        if len(self.ris_positions) not in (1, m):
            raise DomainError("need one RIS per user or a single shared RIS")
        for name, d in (("d_up", self.d_up), ("d_ur", self.d_ur), ("d_rp", self.d_rp)):
            _check_distance(name, d)

    @classmethod
    def personal(cls, ps_position, user_positions, ris_height=2.0):
        users = np.atleast_2d(np.asarray(user_positions, dtype=float))
        return cls(ps_position, users, users + np.array([0.0, 0.0, ris_height]))

    @classmethod
    def random_personal(cls, m, rng, ps_position=(-50.0, 0.0, 10.0), x_range=(-20.0, 0.0),
                        y_range=(-30.0, 30.0), ris_height=2.0):
        """Users uniform in the x-y rectangle at height zero, each RIS right above its user."""
        xs = rng.uniform(x_range[0], x_range[1], size=m)
        ys = rng.uniform(y_range[0], y_range[1], size=m)
        users = np.column_stack([xs, ys, np.zeros(m)])
        return cls.personal(ps_position, users, ris_height)

    def with_shared_ris(self, position=(0.0, 0.0, 10.0)) -> "Geometry":
        return Geometry(self.ps_position, self.user_positions, np.asarray(position, dtype=float)[None, :])

    @property
    def m(self) -> int:
        return len(self.user_positions)

    @property
    def shared_ris(self) -> bool:
        return len(self.ris_positions) == 1 and self.m > 1

    @property
    def d_up(self):
        return np.linalg.norm(self.user_positions - self.ps_position, axis=1)

    @property
    def d_ur(self):
        return np.linalg.norm(self.user_positions - self.ris_positions, axis=1)

    @property
    def d_rp(self):
        d = np.linalg.norm(self.ris_positions - self.ps_position, axis=1)
        return np.broadcast_to(d, (self.m,)).copy()


@dataclass(frozen=True)
class GainReference:
    """Per-hop power units. Direct gains are expressed in units of ``ur * rb``."""

    ur: float = 1.0
    rb: float = 1.0

    @classmethod
    def from_geometry(cls, geometry: Geometry, p: PathLossParams) -> "GainReference":
        var_ur, var_rb = hop_variances(geometry.d_ur, geometry.d_rp, p)
        return cls(float(np.mean(var_ur)), float(np.mean(var_rb)))


@dataclass
class LinkGains:
    """One user's channel state for a round; also used for CSI estimates."""

    h_ub: complex
    h_ur: np.ndarray
    h_rb: np.ndarray
    cascaded_g: np.ndarray = field(init=False)

    def __post_init__(self):
        self.h_ub = complex(self.h_ub)
        self.h_ur = np.asarray(self.h_ur, dtype=complex)
        self.h_rb = np.asarray(self.h_rb, dtype=complex)
        if self.h_ur.shape != self.h_rb.shape:
            raise DomainError("h_ur and h_rb must have the same length")
        # g = ((h_UR)^H diag(h_RB))^H, so that g^H theta == h_UR^H diag(theta) h_RB.
        self.cascaded_g = self.h_ur * np.conj(self.h_rb)

    @property
    def n_elements(self) -> int:
        return len(self.h_ur)

    def to_dict(self):
        def pairs(v):
            return [[float(z.real), float(z.imag)] for z in np.atleast_1d(v)]
        return {"h_ub": pairs(self.h_ub)[0], "h_ur": pairs(self.h_ur), "h_rb": pairs(self.h_rb)}

    @classmethod
    def from_dict(cls, d):
        def arr(v):
            v = np.asarray(v, dtype=float).reshape(-1, 2)
            return v[:, 0] + 1j * v[:, 1]
        return cls(arr([d["h_ub"]])[0], arr(d["h_ur"]), arr(d["h_rb"]))


CsiEstimate = LinkGains


def complex_gaussian(rng, var, size=None):
    """Circularly-symmetric complex normal samples with total variance ``var``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_round(geometry: Geometry, p: PathLossParams, rng: np.random.Generator,
                 reference: GainReference = GainReference(), variance_scale: float = 1.0):
    """Draw one block-fading realization for every user.

    ``rng`` should be a fresh stream for the round. Each user draws from its own
    child stream, so a user's gains do not depend on evaluation order. With a
    shared RIS, a single RIS-PS vector is drawn and seen by every user.
    ``variance_scale=0`` collapses every gain to its mean (zero).
    """
    m, n = geometry.m, p.n_elements
    var_ub = path_loss_direct(geometry.d_up, p) / (reference.ur * reference.rb) * variance_scale
    var_ur, var_rb = hop_variances(geometry.d_ur, geometry.d_rp, p)
    var_ur = var_ur / reference.ur * variance_scale
    var_rb = var_rb / reference.rb * variance_scale
    children = rng.spawn(m + 1)
    shared_rb = complex_gaussian(children[m], var_rb[0], n) if geometry.shared_ris else None
    out = []
    for i in range(m):
        r = children[i]
        h_ub = complex_gaussian(r, var_ub[i])
        h_ur = complex_gaussian(r, var_ur[i], n)
        h_rb = shared_rb if shared_rb is not None else complex_gaussian(r, var_rb[i], n)
        out.append(LinkGains(h_ub, h_ur, h_rb))
    return out


def estimate_csi(true_gains: LinkGains, err_var: float, rng: np.random.Generator) -> CsiEstimate:
    """Perturb every hop by independent ``CN(0, err_var)`` error; rebuild the cascade."""
    if err_var < 0:
        raise DomainError(f"CSI error variance must be non-negative, got {err_var}")
    if err_var == 0:
        return LinkGains(true_gains.h_ub, true_gains.h_ur.copy(), true_gains.h_rb.copy())
    n = true_gains.n_elements
    return LinkGains(
        true_gains.h_ub + complex_gaussian(rng, err_var),
        true_gains.h_ur + complex_gaussian(rng, err_var, n),
        true_gains.h_rb + complex_gaussian(rng, err_var, n),
    )


def effective_gain(h_ub: complex, g, theta) -> complex:
    """Overall gain ``h_ub + g^H theta``."""
    g = np.atleast_1d(np.asarray(g, dtype=complex))
    theta = np.atleast_1d(np.asarray(theta, dtype=complex))
    if g.shape != theta.shape:
        raise DomainError(f"cascaded vector has {g.size} entries but phase vector has {theta.size}")
    return complex(h_ub) + complex(np.vdot(g, theta))
