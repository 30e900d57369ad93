import dataclasses

import numpy as np
import pytest

from conftest import small_config
from otapfl import channel as ch
from otapfl.protocol import (
    build_environment, central_ris_baseline, initial_state, run_experiment, run_round, superimpose,
)
from otapfl.training import local_sgd


def test_superimpose_passthrough():
    delta = np.array([0.5, -1.0, 2.0])
    update, imag = superimpose([delta.astype(complex)], [1.0], 0.0, 1.0, None)
    np.testing.assert_array_equal(update, delta)
    assert imag == 0.0


def test_superimpose_channel_inversion_telescopes():
    rng = np.random.default_rng(0)
    beta_t, alphas, taus = 7.0, [0.2, 0.3, 0.5], [1, 3, 5]
    deltas = [rng.standard_normal(6) for _ in alphas]
    hs = [ch.complex_gaussian(rng, 1.0) for _ in alphas]
    signals = [beta_t * a / (tau * h) * d for a, tau, h, d in zip(alphas, taus, hs, deltas)]
    update, imag = superimpose(signals, hs, 0.0, beta_t, None)
    ideal = sum(a / tau * d for a, tau, d in zip(alphas, taus, deltas))
    np.testing.assert_allclose(update, ideal, rtol=0, atol=1e-12)
    assert imag < 1e-12


def test_superimpose_rejects_ragged_signals():
    with pytest.raises(ValueError):
        superimpose([np.zeros(3), np.zeros(2)], [1, 1], 0.0, 1.0, None)


@pytest.mark.parametrize("sigma_c,beta_t", [(1.0, 1.0), (0.3, 150.0)])
def test_noise_variance_per_coordinate(sigma_c, beta_t):
    update, _ = superimpose([np.zeros(100_000)], [1.0], sigma_c, beta_t, np.random.default_rng(1))
    assert update.var() == pytest.approx(sigma_c**2 / (2 * beta_t**2), rel=0.05)


def test_update_unbiased_under_noise():
    rng = np.random.default_rng(2)
    d, reps, sigma_c, beta_t = 4, 10_000, 0.5, 2.0
    delta = np.array([0.3, -0.1, 0.0, 1.2])
    h = 0.8 - 0.6j
    x = beta_t / h * delta
    ups = np.array([superimpose([x], [h], sigma_c, beta_t, rng)[0] for _ in range(reps)])
    sem = np.sqrt(sigma_c**2 / (2 * beta_t**2) / reps)
    assert np.all(np.abs(ups.mean(axis=0) - delta) < 3 * sem)


def _noiseless(cfg):
    env = build_environment(cfg)
    return dataclasses.replace(env, sigma_c2=0.0, csi_err_var=0.0)


@pytest.mark.parametrize("mode", ["perfect_csi", "no_ris", "central_ris", "ideal_fedavg"])
def test_noiseless_round_equals_ideal_aggregate(mode):
    env = _noiseless(small_config(mode=mode, power_budget=1e4))
    state = initial_state(env)
    new, trace = run_round(state, env)
    assert trace.skipped == 0
    ideal = np.zeros_like(state.w)
    for i, u in enumerate(trace.users):
        s = env.shards[i]
        res = local_sgd(env.model, state.w, s.X, s.y, u.tau, env.eta, env.cfg.batch_size,
                        env.tree.rng("local", 0, i))
        ideal += env.alphas[i] / u.tau * res.delta
    np.testing.assert_allclose(new.w - state.w, ideal, rtol=0, atol=1e-9)


def test_noiseless_run_tracks_ideal_fedavg():
    cfg = small_config(rounds=5, power_budget=1e4)
    ota = run_experiment(cfg.replace(mode="perfect_csi"), env=_noiseless(cfg.replace(mode="perfect_csi")))
    ideal = run_experiment(cfg.replace(mode="ideal_fedavg"))
    for a, b in zip(ota.metrics, ideal.metrics):
        assert abs(a["global_acc"] - b["global_acc"]) <= 1e-6
    np.testing.assert_allclose(ota.state.w, ideal.state.w, atol=1e-9)


def test_all_users_skipped_leaves_model_unchanged():
    env = build_environment(small_config(mode="no_ris"))
    env = dataclasses.replace(env, energy_cap=1e-30)
    state = initial_state(env)
    new, trace = run_round(state, env)
    assert trace.all_skipped and trace.skipped == env.cfg.users
    np.testing.assert_array_equal(new.w, state.w)
    assert all(u.reason == "infeasible" for u in trace.users)


def test_zero_lambda_personal_models_ignore_global():
    cfg = small_config(lam=0.0, rounds=3)
    a = run_experiment(cfg)
    b = run_experiment(cfg.replace(mode="ideal_fedavg"))
    assert not np.allclose(a.state.w, b.state.w)
    for pa, pb in zip(a.state.personal, b.state.personal):
        np.testing.assert_array_equal(pa.v, pb.v)


def test_zero_rounds():
    res = run_experiment(small_config(rounds=0))
    assert res.metrics == [] and res.final == {}
    np.testing.assert_array_equal(res.state.w, initial_state(res.env).w)


def test_energy_within_cap_every_round():
    res = run_experiment(small_config(rounds=4, trace_rounds="all"))
    for trace, _ in res.traces:
        for u in trace.users:
            assert u.energy <= u.energy_cap * (1 + 1e-12)


def test_global_model_shared_at_round_start():
    env = build_environment(small_config())
    state = initial_state(env)
    for s in state.personal:
        np.testing.assert_array_equal(s.v, state.w)


def test_central_ris_shares_one_surface():
    res = central_ris_baseline(small_config(rounds=3, trace_rounds="all"))
    assert res.env.air_path_loss.n_elements == 4 * 10
    assert [t.designer for t, _ in res.traces] == [0, 1, 2]
    assert len(res.state.phases) == 1 and len(res.state.phases[0]) == 40


def test_central_gains_use_effective_gain_path():
    env = build_environment(small_config(mode="central_ris"))
    gains = ch.sample_round(env.air_geometry, env.air_path_loss, env.tree.rng("fading", round=0), env.reference)
    theta = np.exp(1j * np.random.default_rng(0).uniform(-np.pi, np.pi, 40))
    for g in gains:
        matrix = g.h_ub + np.conj(g.h_ur) @ np.diag(theta) @ g.h_rb
        assert ch.effective_gain(g.h_ub, g.cascaded_g, theta) == pytest.approx(matrix, rel=1e-12)


def test_single_user_central_matches_personal_up_to_geometry():
    cfg = small_config(users=1, rounds=2)
    env_c = build_environment(cfg.replace(mode="central_ris"))
    assert env_c.air_path_loss.n_elements == env_c.path_loss.n_elements
    assert not env_c.air_geometry.shared_ris
    res_c = run_experiment(cfg.replace(mode="central_ris"))
    res_p = run_experiment(cfg.replace(mode="proar_pfed"))
    assert len(res_c.metrics) == len(res_p.metrics) == 2


def test_user_stream_isolation():
    # Reseeding user 0's local stream leaves every other user's delta unchanged.
    env = build_environment(small_config())
    state = initial_state(env)
    base = [local_sgd(env.model, state.w, s.X, s.y, 2, env.eta, 8, env.tree.rng("local", 0, i))
            for i, s in enumerate(env.shards)]
    rngs = [np.random.default_rng(123)] + [env.tree.rng("local", 0, i) for i in range(1, len(env.shards))]
    other = [local_sgd(env.model, state.w, s.X, s.y, 2, env.eta, 8, r) for s, r in zip(env.shards, rngs)]
    for a, b in zip(base[1:], other[1:]):
        np.testing.assert_array_equal(a.delta, b.delta)
    assert not np.array_equal(base[0].delta, other[0].delta)


def test_workers_do_not_change_results():
    a = run_experiment(small_config(rounds=3, workers=1))
    b = run_experiment(small_config(rounds=3, workers=4))
    np.testing.assert_array_equal(a.state.w, b.state.w)
    assert a.metrics == b.metrics
