import itertools

import numpy as np
import pytest

from kdvlab import averaging, birkhoff, kdvflow
from kdvlab.grid import FourierField, single_mode, sobolev_norm

TWO_PI = 2 * np.pi


def test_frequency_vector_model():
    W = averaging.frequency_vector(np.zeros(3), 3)
    n = np.arange(1, 4)
    assert np.allclose(W, (TWO_PI * n) ** 3)
    W1 = averaging.frequency_vector(np.array([0.01, 0.0]), 2)
    assert W1[0] == pytest.approx((TWO_PI) ** 3 - 0.06)


def test_frequency_model_matches_empirical():
    a = 0.12
    u = single_mode(1, 16, 64, cos_amp=a)
    acts = birkhoff.actions(u, 2)
    model = averaging.frequency_vector(acts, 1)[0]
    est = birkhoff.frequency_estimate(u, 1, T_obs=4.0, dt=2e-4,
                                      n_samples=1200)
    assert est["frequency"] == pytest.approx(model, rel=0.05)


def _brute_min(W, k_radius):
    best = np.inf
    m = len(W)
    for k in itertools.product(range(-k_radius, k_radius + 1), repeat=m):
        if 0 < sum(abs(x) for x in k) <= k_radius:
            best = min(best, abs(float(np.dot(k, W))))
    return best


def test_resonance_free_frequencies_exactly_resonant():
    # integer frequency ratios 1 : 8 : 27 admit an exact combination
    W = np.array([(TWO_PI) ** 3, (2 * TWO_PI) ** 3, (3 * TWO_PI) ** 3])
    q = averaging.ResonanceQuery(delta=1e-12, m=3, k_radius=9)
    resonant, kmin, val = averaging.resonance_indicator(W, q)
    assert resonant and val == 0.0
    assert abs(float(np.dot((8, -1, 0), W))) == 0.0  # the classical witness


def test_resonance_irrational_pair_nonresonant():
    W = np.array([1.0, np.sqrt(2.0)])
    q = averaging.ResonanceQuery(delta=1e-3, m=2, k_radius=5)
    resonant, kmin, val = averaging.resonance_indicator(W, q)
    assert not resonant
    assert val == pytest.approx(_brute_min(W, 5))


def test_resonance_vacuous_large_delta():
    q = averaging.ResonanceQuery(delta=1e9, m=2, k_radius=2)
    resonant, _, _ = averaging.resonance_indicator(np.array([5.0, 7.0]), q)
    assert resonant


def test_resonance_enumeration_order_invariance():
    W = np.array([1.0, np.sqrt(2.0), np.pi / 3])
    q = averaging.ResonanceQuery(delta=0.3, m=3, k_radius=4)
    a = averaging.resonance_indicator(W, q, order="lex")
    b = averaging.resonance_indicator(W, q, order="reversed")
    assert a == b


def test_occupation_monotone_in_delta_and_radius():
    # synthetic action path whose model frequencies sweep a resonance
    taus = np.linspace(0, 1, 201)
    I1 = 41.0 + 1.0 * np.sin(2 * np.pi * taus)  # W1 crosses 0 of k=(1,0)?
    I = np.stack([I1, np.zeros_like(taus)], axis=1)
    fracs = []
    for delta in (3.0, 1.0, 0.3, 0.1):
        q = averaging.ResonanceQuery(delta=delta, m=2, k_radius=3)
        fracs.append(averaging.occupation_fraction((taus, I), q))
    assert all(fracs[i] >= fracs[i + 1] for i in range(3))
    assert fracs[-1] < fracs[0]
    q_small = averaging.ResonanceQuery(delta=1.0, m=2, k_radius=1)
    q_big = averaging.ResonanceQuery(delta=1.0, m=2, k_radius=5)
    assert averaging.occupation_fraction((taus, I), q_big) >= \
        averaging.occupation_fraction((taus, I), q_small)


def test_occupation_huge_delta_is_one():
    taus = np.linspace(0, 1, 11)
    I = np.tile([1e-3, 1e-4], (11, 1))
    q = averaging.ResonanceQuery(delta=1e9, m=2, k_radius=2)
    assert averaging.occupation_fraction((taus, I), q) == 1.0


def test_averaged_rhs_none_channel_is_zero(small_cos):
    F, err, _ = averaging.empirical_averaged_rhs(
        small_cos, 2, T_avg=0.3, pert=kdvflow.NO_PERTURBATION, n_snapshots=6)
    assert np.max(np.abs(F)) <= np.max(err) + 1e-12


def test_averaged_rhs_dissipative_leading_order(small_cos):
    # leading order only: the true rate carries O(amplitude^2) corrections
    acts = birkhoff.actions(small_cos, 2)
    pert = kdvflow.PerturbationSpec(kind="dissipative", eps=1.0)
    F, err, flag = averaging.empirical_averaged_rhs(
        small_cos, 2, T_avg=0.5, pert=pert, n_snapshots=8)
    assert F[0] == pytest.approx(-2 * TWO_PI**2 * acts.I[0], rel=2e-2)


def test_averaged_rhs_window_convergence(small_cos):
    pert = kdvflow.PerturbationSpec(kind="dissipative", eps=1.0)
    ref, _, _ = averaging.empirical_averaged_rhs(small_cos, 1, T_avg=2.0,
                                                 pert=pert, n_snapshots=48)
    est_short, _, _ = averaging.empirical_averaged_rhs(
        small_cos, 1, T_avg=0.25, pert=pert, n_snapshots=12)
    est_long, _, _ = averaging.empirical_averaged_rhs(
        small_cos, 1, T_avg=0.5, pert=pert, n_snapshots=24)
    assert abs(est_long[0] - ref[0]) <= abs(est_short[0] - ref[0]) + 1e-9


def test_averaged_trajectory_none_channel_constant(small_cos):
    pert = kdvflow.PerturbationSpec(kind="none", eps=1e-2)
    with pytest.raises(ValueError):
        averaging.averaged_trajectory(small_cos, 0.1,
                                      kdvflow.NO_PERTURBATION, 2)
    # dissipative channel with eps > 0 but zero window drift: use the
    # state-independent force, whose averaged action rate vanishes
    force = single_mode(3, 16, 64, cos_amp=1.0)
    pert = kdvflow.PerturbationSpec(kind="external_force", eps=1e-3,
                                    force=force)
    curve = averaging.averaged_trajectory(small_cos, 0.02, pert, n_max=1,
                                          n_slow=2, T_avg=0.2, n_snapshots=6)
    assert np.max(np.abs(curve.J[:, 0] - curve.J[0, 0])) \
        <= 5 * (curve.err[-1, 0] + 1e-6)


def test_gaussian_spec_validation():
    with pytest.raises(ValueError, match="zeta0p"):
        averaging.GaussianMeasureSpec(np.ones(4), -0.5, 1.0, 32)
    spec = averaging.power_law_measure(8, 32, 1.0, -2.0)
    assert spec.admissibility_constant() == pytest.approx(1.0)


def test_gaussian_sampling_moments():
    spec = averaging.power_law_measure(6, 24, 0.8, -3.0, p=1.0)
    rng = np.random.default_rng(7)
    n = 10_000
    draws = np.stack([averaging.sample_gaussian(spec, rng).coeffs
                      for _ in range(n)])
    j = np.arange(1, 7)
    pred = spec.sigma / (TWO_PI * j) ** 2
    var = draws.var(axis=0, ddof=1)
    se = pred[:, None] * np.sqrt(2.0 / n)
    assert np.all(np.abs(var - pred[:, None]) <= 3 * se)


def test_gaussian_sample_zero_mean_exact():
    spec = averaging.power_law_measure(6, 24, 1.0, -3.0)
    u = averaging.sample_gaussian(spec, np.random.default_rng(1))
    assert abs(float(np.mean(u.values()))) < 1e-14


def test_gaussian_sample_vanishing_variance_limit():
    spec = averaging.GaussianMeasureSpec(np.full(4, 1e-30), -2.0, 1.0, 16)
    u = averaging.sample_gaussian(spec, np.random.default_rng(2))
    assert np.max(np.abs(u.coeffs)) < 1e-12


def test_divergence_external_force_exactly_zero(two_mode):
    force = single_mode(1, 32, 128, cos_amp=0.7)
    pert = kdvflow.PerturbationSpec(kind="external_force", eps=0.3,
                                    force=force)
    assert averaging.divergence_estimate(pert, two_mode)["divergence"] == 0.0


def test_divergence_dissipative_exact_trace(two_mode):
    pert = kdvflow.PerturbationSpec(kind="dissipative", eps=0.3)
    div = averaging.divergence_estimate(pert, two_mode)["divergence"]
    k = np.arange(1, 33)
    assert div == pytest.approx(-2 * np.sum((TWO_PI * k) ** 2), rel=1e-9)


def test_divergence_smoothing_bounded_under_truncation_growth():
    spec = averaging.power_law_measure(64, 256, 1.0, -8.0)
    u64 = averaging.sample_gaussian(spec, np.random.default_rng(3))
    u64 = u64 * (0.4 / sobolev_norm(u64, 1.0))
    pert = kdvflow.PerturbationSpec(kind="smoothing_map", eps=1.0,
                                    kernel_decay=0.5, nonlinearity="cube")
    divs = {}
    for K in (16, 32, 64):
        uk = FourierField(u64.coeffs[:K], 4 * K)
        divs[K] = averaging.divergence_estimate(pert, uk)["divergence"]
    assert abs(divs[64] - divs[32]) <= 0.1 * abs(divs[32]) + 1e-9
    assert abs(divs[32] - divs[16]) <= 0.2 * abs(divs[16]) + 1e-9
