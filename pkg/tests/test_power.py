import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otapfl.errors import DeepFadeError, DomainError, InfeasibleError, SkipRound
from otapfl.power import PowerPlan, encode_transmit, energy_cap, power_factor, select_local_steps


def test_power_factor_identity():
    assert power_factor(1.0, 1.0, 1, 1.0) == 1.0


def test_power_factor_complex_division():
    assert power_factor(10.0, 0.1, 2, 1j) == pytest.approx(-0.5j)


def test_power_factor_deep_fade():
    with pytest.raises(DeepFadeError):
        power_factor(1.0, 1.0, 1, 5e-7)
    with pytest.raises(DomainError):
        power_factor(1.0, 1.0, 0, 1.0)


@settings(max_examples=200, deadline=None)
@given(beta=st.floats(0.1, 1e3), alpha=st.floats(1e-3, 1.0), tau=st.integers(1, 50),
       re=st.floats(-10, 10), im=st.floats(-10, 10))
def test_channel_inversion_identity(beta, alpha, tau, re, im):
    h = complex(re, im)
    if abs(h) <= 1e-3:
        return
    assert h * power_factor(beta, alpha, tau, h) * tau == pytest.approx(beta * alpha, rel=1e-12)


def test_generous_budget_gives_tau_max():
    assert select_local_steps(1e6, 1.0, 1.0, 1.0, 1.0, 1.0, 7) == 7


def test_boundary_budget_is_feasible():
    beta_t, alpha, h, eta, G = 3.0, 0.2, 0.7 - 0.4j, 0.05, 4.0
    p = abs(beta_t * alpha * eta * G / h) ** 2
    assert select_local_steps(p, beta_t, alpha, h, eta, G, 5) == 5
    with pytest.raises(InfeasibleError):
        select_local_steps(p * 0.999, beta_t, alpha, h, eta, G, 5)


def test_deep_fade_is_a_skip():
    with pytest.raises(SkipRound):
        select_local_steps(1.0, 1.0, 1.0, 1e-9, 0.1, 1.0, 5)


def test_select_rejects_bad_tau_max():
    with pytest.raises(DomainError):
        select_local_steps(1.0, 1.0, 1.0, 1.0, 0.1, 1.0, 0)


def _steps_or_zero(*args):
    try:
        return select_local_steps(*args)
    except SkipRound:
        return 0


@settings(max_examples=100, deadline=None)
@given(p1=st.floats(1e-4, 1e2), p2=st.floats(1e-4, 1e2), g1=st.floats(0.1, 10), g2=st.floats(0.1, 10),
       h=st.floats(0.01, 2))
def test_select_local_steps_monotone(p1, p2, g1, g2, h):
    lo, hi = sorted((p1, p2))
    assert _steps_or_zero(lo, 5.0, 0.1, h, 0.1, g1, 6) <= _steps_or_zero(hi, 5.0, 0.1, h, 0.1, g1, 6)
    glo, ghi = sorted((g1, g2))
    assert _steps_or_zero(p1, 5.0, 0.1, h, 0.1, ghi, 6) <= _steps_or_zero(p1, 5.0, 0.1, h, 0.1, glo, 6)


def test_encode_zero_update():
    tx = encode_transmit(np.zeros(4), 2 - 1j, 1.0)
    assert tx.energy == 0 and not np.any(tx.x)


def test_encode_energy():
    tx = encode_transmit(np.array([3.0, 4.0]), 1.0)
    assert tx.energy == pytest.approx(25.0)
    assert tx.scale == 1.0


def test_encode_backstop():
    tx = encode_transmit(np.array([2.0, 0.0]), 1.0, max_energy=1.0)
    assert tx.energy == pytest.approx(1.0)
    assert tx.scale == pytest.approx(0.5)
    assert tx.backstop


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), cap=st.floats(1e-6, 1e3))
def test_emitted_energy_never_exceeds_cap(seed, cap):
    rng = np.random.default_rng(seed)
    tx = encode_transmit(rng.standard_normal(20) * 10, complex(*rng.standard_normal(2)) * 5, cap)
    assert tx.energy <= cap * (1 + 1e-12)


def test_energy_cap_normalizations():
    assert energy_cap(0.5, 100, "per_symbol") == 50.0
    assert energy_cap(0.5, 100, "total") == 0.5
    with pytest.raises(DomainError):
        energy_cap(0.5, 100, "other")


def test_power_plan_invariants():
    PowerPlan(1.0, 0.5j, 3, 1.0, 10.0, 2.0)
    with pytest.raises(DomainError):
        PowerPlan(1.0, 0.5j, 0, 1.0, 10.0, 2.0)
    with pytest.raises(DomainError):
        PowerPlan(1.0, 0.5j, 1, 1.0, 10.0, 0.0)
