"""Data partitioning, local SGD and the regularized personal update."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError


@dataclass
class Partition:
    indices: list          # one index array per user
    proportions: np.ndarray  # (classes, users); column sums are not normalized

    def sizes(self):
        return np.array([len(ix) for ix in self.indices])

    def weights(self):
        return shard_weights(self.sizes())


def shard_weights(sizes) -> np.ndarray:
    """Aggregation weights ``|D_i| / sum_j |D_j|``."""
    sizes = np.asarray(sizes, dtype=float)
    return sizes / sizes.sum()


def _split_by_proportions(labels, classes, proportions, rng):
    m = proportions.shape[1]
    buckets = [[] for _ in range(m)]
    for c_idx, c in enumerate(classes):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        cuts = (np.cumsum(proportions[c_idx])[:-1] * len(members)).astype(int)
        for i, part in enumerate(np.split(members, cuts)):
            buckets[i].append(part)
    return [np.sort(np.concatenate(b)) if b else np.empty(0, dtype=int) for b in buckets]


def dirichlet_partition(labels, gamma, m, rng, proportions=None, max_tries=1000) -> Partition:
    """Split example indices across ``m`` users with per-class ``Dir(gamma)`` shares.

    Draws that leave a user empty are resampled. Passing ``proportions`` (for
    example the training split's) reuses them, e.g. to give each user a test
    shard with matching label skew; that path does not resample.
    """
    labels = np.asarray(labels)
    if m < 1:
        raise DomainError(f"need at least one user, got {m}")
    if len(labels) < m:
        raise DomainError(f"{len(labels)} examples cannot cover {m} users")
    classes = np.unique(labels)
    if proportions is not None:
        proportions = np.asarray(proportions, dtype=float)
        return Partition(_split_by_proportions(labels, classes, proportions, rng), proportions)
    if not gamma > 0:
        raise DomainError(f"Dirichlet concentration must be positive, got {gamma}")
    for _ in range(max_tries):
        props = rng.dirichlet(np.full(m, float(gamma)), size=len(classes))
        parts = _split_by_proportions(labels, classes, props, rng)
        if all(len(p) > 0 for p in parts):
            return Partition(parts, props)
    raise DomainError(f"could not give every user data after {max_tries} Dirichlet draws")


def sample_batch(rng, n, batch_size):
    """With-replacement mini-batch indices."""
    return rng.integers(0, n, size=min(batch_size, n) if batch_size else n)


@dataclass
class LocalResult:
    w: np.ndarray
    delta: np.ndarray
    max_grad_norm: float


def local_sgd(model, w0, X, y, tau, eta, batch_size, rng) -> LocalResult:
    """``tau`` mini-batch SGD steps from ``w0``. ``batch_size=None`` uses the full shard."""
    if tau < 1:
        raise DomainError(f"tau must be >= 1, got {tau}")
    w = np.array(w0, dtype=float)
    max_norm = 0.0
    for _ in range(tau):
        if batch_size is None:
            g = model.grad(w, X, y)
        else:
            idx = sample_batch(rng, len(y), batch_size)
            g = model.grad(w, X[idx], y[idx])
        max_norm = max(max_norm, float(np.linalg.norm(g)))
        w = w - eta * g
    return LocalResult(w, w - w0, max_norm)


@dataclass
class PersonalState:
    v: np.ndarray
    eta_v: float
    lambda_reg: float
    tau_v: int

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise DomainError(f"lambda must be >= 0, got {self.lambda_reg}")
        if self.tau_v < 1:
            raise DomainError(f"tau_v must be >= 1, got {self.tau_v}")


def personalized_steps(model, state: PersonalState, w_t, X, y, rng, batch_size=32) -> PersonalState:
    """``v <- v - eta_v (grad F_i(v) + lambda (v - w_t))`` for ``tau_v`` steps, ``w_t`` fixed."""
    v = np.array(state.v, dtype=float)
    for _ in range(state.tau_v):
        if batch_size is None:
            g = model.grad(v, X, y)
        else:
            idx = sample_batch(rng, len(y), batch_size)
            g = model.grad(v, X[idx], y[idx])
        v = v - state.eta_v * (g + state.lambda_reg * (v - w_t))
    return replace(state, v=v)


def personal_grad_norm(model, state: PersonalState, w_ref, X, y) -> float:
    """``||grad F_i(v) + lambda (v - w_ref)||^2`` on the given examples."""
    g = model.grad(state.v, X, y) + state.lambda_reg * (state.v - w_ref)
    return float(g @ g)
