import numpy as np
import pytest

from kdvlab import kdvflow, stochastic
from kdvlab.grid import FourierField, single_mode

TWO_PI = 2 * np.pi


def _spec(K=16, b0=0.4, q=2.0, seed=42):
    return stochastic.power_law_noise(K, b0, q, seed)


def test_noise_spec_validation():
    with pytest.raises(ValueError, match="3/2"):
        stochastic.power_law_noise(8, 0.5, 1.2, seed=0)
    with pytest.raises(ValueError):
        stochastic.NoiseSpec(np.array([0.1, -0.2]), "x", 0)


def test_noise_increment_zero_dt():
    spec = _spec()
    inc = stochastic.noise_increment(spec, 0.0, stochastic.rng_for(spec))
    assert np.all(inc == 0.0)


def test_noise_increment_variance():
    spec = _spec(K=4)
    rng = stochastic.rng_for(spec)
    dt = 0.01
    n = 100_000
    draws = np.stack([stochastic.noise_increment(spec, dt, rng)
                      for _ in range(n)])
    var = draws.var(axis=0, ddof=1)
    pred = (spec.amplitudes**2 * dt)[:, None]
    se = pred * np.sqrt(2.0 / n)
    assert np.all(np.abs(var - pred) <= 3 * se)


def test_noise_reproducibility():
    spec = _spec()
    a = stochastic.noise_increment(spec, 0.1, stochastic.rng_for(spec))
    b = stochastic.noise_increment(spec, 0.1, stochastic.rng_for(spec))
    assert np.all(a == b)
    other = stochastic.NoiseSpec(spec.amplitudes, spec.law, spec.seed + 1)
    c = stochastic.noise_increment(other, 0.1, stochastic.rng_for(other))
    assert not np.all(a == c)


def test_independent_increments_over_disjoint_steps():
    spec = _spec(K=6)
    rng = stochastic.rng_for(spec)
    n = 40_000
    a = np.stack([stochastic.noise_increment(spec, 1.0, rng)[:, 0]
                  for _ in range(n)])
    # correlate consecutive draws: should vanish within MC error
    corr = np.mean(a[:-1] * a[1:], axis=0) / spec.amplitudes**2
    assert np.max(np.abs(corr)) < 4.0 / np.sqrt(n)


def test_eps_zero_reduces_to_deterministic_step_bitwise(two_mode):
    spec = _spec(K=32)
    rng = stochastic.rng_for(spec)
    a = stochastic.stochastic_step(two_mode, 1e-3, 0.0, spec, rng)
    b = kdvflow.step(two_mode, 1e-3)
    assert np.all(a.coeffs == b.coeffs)


def test_linear_ou_stationary_variance():
    # nonlinearity off: each mode is an exact OU process; stationary
    # component variance is b_j^2 / (2 (2 pi j)^2)
    K = 8
    spec = _spec(K=K, b0=0.5, q=2.0, seed=9)
    u0 = FourierField.zeros(K, 32)
    res = stochastic.ensemble(u0, eps=0.5, T_slow=8.0, dt=2e-3, spec=spec,
                              n_realizations=96, n_tau=81,
                              n_proxy_actions=4, nonlin_on=False)
    j = np.arange(1, 5)
    burn = 40
    energy = res.proxy_actions[:, burn:, :] * (2 * TWO_PI * j)
    per_real = energy.mean(axis=1)
    mean = per_real.mean(axis=0)
    se = per_real.std(axis=0, ddof=1) / np.sqrt(per_real.shape[0])
    pred = spec.amplitudes[:4] ** 2 / (TWO_PI * j) ** 2
    assert np.all(np.abs(mean - pred) <= 3.5 * se)


def test_energy_balance_in_slow_time():
    # d E||u||^2 / dtau = -2 E||u_x||^2 + sum b_j^2 (both pair components)
    K = 8
    spec = _spec(K=K, b0=0.4, q=2.0, seed=17)
    u0 = single_mode(1, K, 32, cos_amp=0.05)
    eps = 0.2
    res = stochastic.ensemble(u0, eps=eps, T_slow=0.4, dt=1e-3, spec=spec,
                              n_realizations=256, n_tau=41,
                              n_proxy_actions=K)
    j = np.arange(1, K + 1)
    energy = res.proxy_actions * (2 * TWO_PI * j)  # (M, n_tau, K)
    e_l2 = energy.sum(axis=2)
    e_h1 = (energy * (TWO_PI * j) ** 2).sum(axis=2)
    i0, i1 = 10, 30
    dtau = res.tau[i1] - res.tau[i0]
    lhs = (e_l2[:, i1] - e_l2[:, i0]) / dtau
    rhs_t = -2.0 * e_h1[:, i0:i1].mean(axis=1) + 2.0 * np.sum(
        spec.amplitudes**2)
    resid = lhs.mean() - rhs_t.mean()
    se = lhs.std(ddof=1) / np.sqrt(lhs.shape[0])
    assert abs(resid) <= 4.0 * se


def test_ensemble_single_realization_statistics():
    spec = _spec(K=8)
    u0 = single_mode(1, 8, 32, cos_amp=0.1)
    res = stochastic.ensemble(u0, eps=0.05, T_slow=0.05, dt=1e-3, spec=spec,
                              n_realizations=1, n_tau=11)
    q = res.action_quantiles(1, qs=(0.5,))
    assert np.all(q[0] == res.proxy_actions[0, :, 0])


def test_ensemble_reproducibility():
    spec = _spec(K=8)
    u0 = single_mode(1, 8, 32, cos_amp=0.1)
    kw = dict(eps=0.05, T_slow=0.05, dt=1e-3, spec=spec, n_realizations=5,
              n_tau=11)
    a = stochastic.ensemble(u0, **kw)
    b = stochastic.ensemble(u0, **kw)
    assert np.all(a.proxy_actions == b.proxy_actions)
    assert np.all(a.angles[np.isfinite(a.angles)]
                  == b.angles[np.isfinite(b.angles)])


def test_ensemble_action_paths_nonnegative():
    spec = _spec(K=8)
    u0 = single_mode(1, 8, 32, cos_amp=0.1)
    res = stochastic.ensemble(u0, eps=0.1, T_slow=0.2, dt=1e-3, spec=spec,
                              n_realizations=8, n_tau=21, anchor_count=3)
    assert np.all(res.proxy_actions >= 0.0)
    for _, _, I_full in res.anchors:
        assert np.all(I_full >= -1e-12)


def test_eps_ladder_quantile_cauchy_trend():
    # distribution of I_1(tau) settles as eps decreases
    K = 16
    spec = _spec(K=K, b0=0.25, q=3.0, seed=5)
    u0 = FourierField.from_modes({1: (0.15, 0.0), 2: (0.0, 0.08)}, K, 64)
    curves = {}
    for eps in (8e-3, 2e-3, 1e-3):
        res = stochastic.ensemble(u0, eps=eps, T_slow=0.15, dt=2e-3,
                                  spec=spec, n_realizations=30, n_tau=31)
        curves[eps] = res.action_quantiles(1, qs=(0.25, 0.5, 0.75))
    d_far = np.max(np.abs(curves[8e-3] - curves[1e-3]))
    d_near = np.max(np.abs(curves[2e-3] - curves[1e-3]))
    assert d_near < d_far


def test_same_torus_initial_data_law_distance_shrinks():
    K = 16
    spec = _spec(K=K, b0=0.25, q=3.0, seed=6)
    u0 = FourierField.from_modes({1: (0.15, 0.0), 2: (0.0, 0.08)}, K, 64)
    rec = kdvflow.evolve(u0, 0.31, dt=5e-4, n_samples=2, checkpoint_stride=1)
    u0b = rec.checkpoints[-1][1]  # same torus, different angles
    dist = {}
    for eps in (8e-3, 2e-3):
        qa = stochastic.ensemble(u0, eps=eps, T_slow=0.15, dt=2e-3, spec=spec,
                                 n_realizations=30, n_tau=31
                                 ).action_quantiles(1, qs=(0.5,))
        qb = stochastic.ensemble(u0b, eps=eps, T_slow=0.15, dt=2e-3,
                                 spec=spec, n_realizations=30, n_tau=31
                                 ).action_quantiles(1, qs=(0.5,))
        dist[eps] = np.max(np.abs(qa - qb))
    assert dist[2e-3] < dist[8e-3]


def _synthetic_result(angles):
    n = angles.shape[1]
    return stochastic.EnsembleResult(
        tau=np.linspace(0, 1, n), proxy_actions=np.zeros((angles.shape[0], n, 1)),
        angles=angles[:, :, None], angle_modes=(1,),
        norm0=np.ones((angles.shape[0], n)),
        anchors=[], aborted_at=np.full(angles.shape[0], -1, dtype=np.int64),
        eps=1e-3, seed=0, config={})


def test_angle_equidistribution_uniform_calibration(rng):
    ang = rng.uniform(0, 2 * np.pi, size=(64, 256))
    rep = stochastic.angle_equidistribution(_synthetic_result(ang), 1, bins=16)
    # noise floor ~ 0.4 sqrt(bins / N)
    assert rep["tv_distance"] < 3.0 * 0.4 * np.sqrt(16 / ang.size)
    assert rep["excluded_mass"] == 0.0


def test_angle_equidistribution_point_mass_calibration():
    ang = np.full((32, 128), 1.234)
    rep = stochastic.angle_equidistribution(_synthetic_result(ang), 1, bins=16)
    assert rep["tv_distance"] == pytest.approx(1 - 1 / 16, abs=1e-12)


def test_angle_equidistribution_excluded_mass():
    ang = np.full((4, 10), np.nan)
    ang[:, :5] = 0.3
    rep = stochastic.angle_equidistribution(_synthetic_result(ang), 1, bins=8)
    assert rep["excluded_mass"] == pytest.approx(0.5, abs=0.06)


def test_neglected_forcing_mass_reported():
    spec = stochastic.power_law_noise(16, 0.5, 2.0, seed=0)
    tail = spec.neglected_mass()
    exact = 0.25 * sum((1.0 / j**2) ** 2 for j in range(17, 5000))
    assert tail == pytest.approx(exact, rel=0.05)


def test_ensemble_csv_and_summary(two_mode):
    spec = _spec(K=32)
    res = stochastic.ensemble(two_mode, eps=0.05, T_slow=0.02, dt=1e-3,
                              spec=spec, n_realizations=3, n_tau=5)
    text = res.to_csv()
    assert text.splitlines()[0].startswith("tau,realization,proxy_I_1")
    assert len(text.splitlines()) == 1 + 3 * 5
    summary = res.summary_json()
    assert '"completed_fraction": 1.0' in summary
