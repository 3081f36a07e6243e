import numpy as np
import pytest

from kdvlab import hill
from kdvlab.errors import SpectrumError
from kdvlab.grid import (FourierField, derivative, inner, product_dealiased,
                         single_mode, sobolev_norm, synthesize_at)

PI_SQ = np.pi**2


def _rk4_transfer(u, lam, x_end=1.0, n=4000):
    """Independent fixed-step RK4 integration of the Hill system.

    Returns (y1, y1', y2, y2') at x_end; used as a cross-validation
    oracle for the Magnus kernel and for interior Wronskian checks.
    """
    h = x_end / n
    y = np.array([1.0, 0.0, 0.0, 1.0])

    def rhs(x, y):
        q = float(synthesize_at(u.coeffs, np.array([x]))[0]) - lam
        return np.array([y[1], q * y[0], y[3], q * y[2]])

    x = 0.0
    for _ in range(n):
        k1 = rhs(x, y)
        k2 = rhs(x + h / 2, y + h / 2 * k1)
        k3 = rhs(x + h / 2, y + h / 2 * k2)
        k4 = rhs(x + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x += h
    return y


def test_transfer_free_cosine_branch():
    u0 = FourierField.zeros(4, 16)
    for lam in (0.3, 7.0, 50.0):
        t = hill.transfer(u0, lam)
        assert t.y1_1 == pytest.approx(np.cos(np.sqrt(lam)), abs=1e-11)
        assert t.y2p_1 == pytest.approx(np.cos(np.sqrt(lam)), abs=1e-11)


def test_transfer_free_cosh_branch():
    u0 = FourierField.zeros(4, 16)
    t = hill.transfer(u0, -3.0)
    assert t.y1_1 == pytest.approx(np.cosh(np.sqrt(3.0)), rel=1e-11)


def test_transfer_wronskian_conservation():
    u = single_mode(1, 8, 32, cos_amp=0.3)
    for lam in (-5.0, 0.0, 50.0):
        t = hill.transfer(u, lam)
        assert abs(t.wronskian() - 1.0) < 1e-10


def test_transfer_matches_rk4_oracle():
    u = single_mode(1, 8, 32, cos_amp=0.25)
    for lam in (2.0, 31.0):
        t = hill.transfer(u, lam)
        y = _rk4_transfer(u, lam)
        assert np.allclose([t.y1_1, t.y1p_1, t.y2_1, t.y2p_1], y, atol=5e-9)


def test_interior_wronskian_along_integration():
    # Wronskian equals one along the whole integration (10 interior points)
    u = single_mode(1, 8, 32, cos_amp=0.3)
    for x in np.linspace(0.1, 1.0, 10):
        y = _rk4_transfer(u, 11.0, x_end=float(x), n=1500)
        assert abs(y[0] * y[3] - y[1] * y[2] - 1.0) < 1e-9


def test_transfer_dlam_matches_finite_difference():
    u = single_mode(1, 8, 32, cos_amp=0.2)
    lam, h = 14.0, 1e-5
    t = hill.transfer(u, lam, with_dlam=True)
    tp = hill.transfer(u, lam + h)
    tm = hill.transfer(u, lam - h)
    fd = ((tp.y1_1 + tp.y2p_1) - (tm.y1_1 + tm.y2p_1)) / (2 * h)
    assert t.dy1_1 + t.dy2p_1 == pytest.approx(fd, rel=1e-6)


def test_discriminant_free_values():
    u0 = FourierField.zeros(4, 16)
    assert hill.discriminant(u0, 0.0) == pytest.approx(2.0, abs=1e-11)
    assert hill.discriminant(u0, PI_SQ) == pytest.approx(-2.0, abs=1e-11)
    assert hill.discriminant(u0, 4 * PI_SQ) == pytest.approx(2.0, abs=1e-11)


def test_discriminant_vanishing_at_oracle_eigenvalues():
    # |Delta| = 2 exactly on the periodic spectrum: check against the
    # dense-matrix oracle eigenvalues
    u = single_mode(1, 8, 32, cos_amp=0.2)
    ev = hill.matrix_oracle_spectrum(u, 5)
    ctx = hill._HillContext(u, lam_max=float(ev[-1]) + 5)
    d = ctx.disc(ev)
    assert np.max(np.abs(np.abs(d) - 2.0)) < 1e-7


def test_periodic_spectrum_free():
    lam = hill.periodic_spectrum(FourierField.zeros(4, 16), 10)
    n = np.arange(1, 11)
    expect = np.concatenate([[0.0], np.repeat(n**2 * PI_SQ, 2)])
    assert np.max(np.abs(lam - expect)) < 1e-8


def test_spectrum_shift_identity():
    u = single_mode(1, 8, 32, cos_amp=0.2)
    lam = hill.periodic_spectrum(u, 6)
    lam_shift = hill.periodic_spectrum(u, 6, constant_shift=1.0)
    assert np.max(np.abs(lam_shift - lam - 1.0)) < 1e-8


def test_first_gap_perturbative_and_oracle():
    a = 0.1
    u = single_mode(1, 8, 32, cos_amp=a)
    lam = hill.periodic_spectrum(u, 6)
    g = hill.gap_lengths(lam)
    assert g[0] == pytest.approx(np.sqrt(2) * a, rel=5e-3)
    oracle = hill.matrix_oracle_spectrum(u, 6)
    assert np.max(np.abs(lam - oracle)) < 1e-7


def test_gap_lengths_free_and_snap():
    lam = hill.periodic_spectrum(FourierField.zeros(4, 16), 5)
    assert np.all(hill.gap_lengths(lam) == 0.0)


def test_second_mode_gap_scaling():
    a = 0.08
    u = single_mode(2, 8, 32, cos_amp=a)
    g = hill.gap_lengths(hill.periodic_spectrum(u, 6))
    assert g[1] == pytest.approx(np.sqrt(2) * a, rel=5e-3)
    assert g[0] < 5 * a**2  # first gap only at second order


def test_dirichlet_free():
    u0 = FourierField.zeros(4, 16)
    mu = hill.dirichlet_spectrum(u0, 8)
    n = np.arange(1, 9)
    assert np.max(np.abs(mu - n**2 * PI_SQ)) < 1e-8
    mu_z = hill.dirichlet_spectrum(u0, 8, z=0.37)
    assert np.max(np.abs(mu_z - n**2 * PI_SQ)) < 1e-8


def test_dirichlet_periodic_in_z():
    u = single_mode(1, 8, 32, cos_amp=0.3)
    z = 0.3
    mu_a = hill.dirichlet_spectrum(u, 5, z=z)
    mu_b = hill.dirichlet_spectrum(u, 5, z=z + 1.0 - 1e-15)
    assert np.max(np.abs(mu_a - mu_b)) < 1e-7


def _sine_galerkin_dirichlet(u, z, n_eig, n_basis=60, n_quad=4096):
    """Independent Dirichlet oracle: sine basis on [z, z+1]."""
    x = z + (np.arange(n_quad) + 0.5) / n_quad
    uv = synthesize_at(u.coeffs, x)
    n = np.arange(1, n_basis + 1)
    S = np.sqrt(2.0) * np.sin(np.pi * np.outer(x - z, n))  # (quad, basis)
    H = np.diag((np.pi * n) ** 2) + (S.T * uv) @ S / n_quad
    return np.sort(np.linalg.eigvalsh(H))[:n_eig]


def test_dirichlet_shifted_vs_galerkin_oracle():
    u = single_mode(1, 8, 32, cos_amp=0.3)
    lam = hill.periodic_spectrum(u, 5)
    mu = hill.dirichlet_spectrum(u, 5, z=0.25, lam=lam)
    assert lam[1] <= mu[0] <= lam[2]
    oracle = _sine_galerkin_dirichlet(u, 0.25, 5)
    assert np.max(np.abs(mu - oracle)) < 1e-6


def test_interlacing_full_spectrum(two_mode):
    sp = hill.compute_spectrum(two_mode, 8, z=0.4)
    for n in range(1, 9):
        assert sp.lam[2 * n - 1] - 1e-9 <= sp.mu[n - 1] <= sp.lam[2 * n] + 1e-9


def test_eigenvalue_asymptotics_square_summable(two_mode):
    lam = hill.periodic_spectrum(two_mode, 10)
    n = np.arange(1, 11)
    resid = np.concatenate([lam[1::2] - n**2 * PI_SQ,
                            lam[2::2] - n**2 * PI_SQ])
    assert np.sum(resid**2) < 1.0


def test_trace_formula_free():
    vals, last = hill.trace_reconstruct(FourierField.zeros(4, 16), 8,
                                        np.linspace(0, 1, 8, endpoint=False))
    assert np.max(np.abs(vals)) < 1e-8
    assert last < 1e-8


def test_trace_formula_single_mode():
    u = single_mode(1, 8, 32, cos_amp=0.3)
    z = np.linspace(0, 1, 8, endpoint=False)
    vals, _ = hill.trace_reconstruct(u, 20, z)
    assert np.max(np.abs(vals - u.values_at(z))) < 1e-4


def test_trace_shift_identity_algebra(two_mode):
    # adding a constant c shifts every eigenvalue by c; the series gains
    # exactly c because the mu-shift cancels one lambda-pair shift
    lam = hill.periodic_spectrum(two_mode, 6)
    mu = hill.dirichlet_spectrum(two_mode, 6, lam=lam)
    c = 0.7
    base = lam[0] + np.sum(lam[1::2] + lam[2::2] - 2 * mu)
    shifted = (lam[0] + c) + np.sum((lam[1::2] + c) + (lam[2::2] + c)
                                    - 2 * (mu + c))
    assert shifted - base == pytest.approx(c, abs=1e-12)


def test_product_representation_residual(two_mode):
    # Delta^2 - 4 = 4 (lam0 - lam) prod (lam_2n - lam)(lam_2n-1 - lam)/(n pi)^4
    lam_full = hill.periodic_spectrum(two_mode, 40)
    ctx = hill._HillContext(two_mode, lam_max=10.0)
    mids = [0.5 * (lam_full[0] + lam_full[1]),
            0.5 * (lam_full[2] + lam_full[3]),
            0.5 * (lam_full[4] + lam_full[5])]
    errs = []
    for n_trunc in (10, 20, 40):
        worst = 0.0
        for lam in mids:
            n = np.arange(1, n_trunc + 1)
            prod = 4.0 * (lam_full[0] - lam) * np.prod(
                (lam_full[2 * n] - lam) * (lam_full[2 * n - 1] - lam)
                / (n**4 * np.pi**4))
            exact = ctx.disc_sq_m4(np.array([lam]))[0]
            worst = max(worst, abs(prod - exact) / max(abs(exact), 1e-12))
        errs.append(worst)
    assert errs[0] > errs[1] > errs[2]
    # the neglected factors are 1 - 2 lam/(n pi)^2 + O(n^-4): the residual
    # shrinks like 1/n_trunc, so only the rate is asserted
    lam_max = mids[-1]
    bound = 1.5 * (1.0 - np.exp(-2.0 * lam_max / (np.pi**2 * 40)))
    assert errs[2] < bound
    assert errs[2] < 0.6 * errs[0]


def test_gradient_of_quadratic_functional(two_mode):
    grad = hill.functional_gradient_fd(
        lambda v: 0.5 * sobolev_norm(v, 0.0) ** 2, two_mode, h=1e-5)
    assert np.max(np.abs(grad.coeffs - two_mode.coeffs)) < 1e-9


def test_gradient_of_hamiltonian_matches_variational_formula(two_mode):
    from kdvlab.kdvflow import hamiltonian
    grad = hill.functional_gradient_fd(hamiltonian, two_mode, h=1e-5)
    expect = (-1.0) * derivative(two_mode, 2) \
        + 3.0 * product_dealiased(two_mode, two_mode)
    assert np.max(np.abs(grad.coeffs - expect.coeffs)) < 1e-8


def test_gradient_shift_direction_mean_component(two_mode):
    # lam_j(u + c) = lam_j(u) + c: the mean-direction derivative is one
    h = 1e-5
    lp = hill.periodic_spectrum(two_mode, 1, constant_shift=h)[0]
    lm = hill.periodic_spectrum(two_mode, 1, constant_shift=-h)[0]
    assert (lp - lm) / (2 * h) == pytest.approx(1.0, abs=1e-6)


def test_gardner_bracket_antisymmetry(two_mode):
    f = derivative(two_mode, 1)
    assert hill.gardner_bracket(f, f) == pytest.approx(0.0, abs=1e-14)
    g = single_mode(2, 32, 128, cos_amp=0.4)
    assert hill.gardner_bracket(f, g) == pytest.approx(
        -hill.gardner_bracket(g, f), abs=1e-12)


def test_bracket_of_l2_with_hamiltonian(two_mode):
    from kdvlab.kdvflow import hamiltonian
    grad_l2 = hill.functional_gradient_fd(
        lambda v: 0.5 * sobolev_norm(v, 0.0) ** 2, two_mode, h=1e-5)
    grad_h = hill.functional_gradient_fd(hamiltonian, two_mode, h=1e-5)
    scale = sobolev_norm(grad_l2, 0) * sobolev_norm(grad_h, 0)
    assert abs(hill.gardner_bracket(grad_l2, grad_h)) < 1e-6 * scale


def test_matrix_oracle_free():
    ev = hill.matrix_oracle_spectrum(FourierField.zeros(4, 16), 4)
    n = np.arange(1, 5)
    expect = np.concatenate([[0.0], np.repeat(n**2 * PI_SQ, 2)])
    assert np.max(np.abs(ev - expect)) < 1e-9


def test_matrix_oracle_dual_agreement(rng):
    for _ in range(3):
        c = rng.normal(size=(6, 2)) * 0.05
        u = FourierField(c, 24)
        lam = hill.periodic_spectrum(u, 6)
        ev = hill.matrix_oracle_spectrum(u, 6)
        assert np.max(np.abs(lam - ev)) < 1e-7


def test_matrix_oracle_weyl_count():
    u = single_mode(1, 8, 32, cos_amp=0.2)
    ev = hill.matrix_oracle_spectrum(u, 10, n_basis=60)
    cutoff = 55.0
    count = int(np.sum(ev <= cutoff))
    weyl = 1 + 2 * int(np.sqrt(cutoff) / np.pi)
    assert abs(count - weyl) <= 1


def test_spectrum_serialization_round_trip(two_mode):
    sp = hill.compute_spectrum(two_mode, 5)
    sp2 = hill.HillSpectrum.from_json(sp.to_json())
    assert np.all(sp2.lam == sp.lam)
    assert np.all(sp2.mu == sp.mu)
    csv_text = sp.to_csv()
    assert csv_text.splitlines()[0] == "n,lambda_lo,lambda_hi,gap,mu"
    assert len(csv_text.splitlines()) == 6


def test_interlacing_violation_raises(two_mode):
    lam = hill.periodic_spectrum(two_mode, 3)
    mu = hill.dirichlet_spectrum(two_mode, 3, lam=lam)
    bad_mu = mu.copy()
    bad_mu[0] = lam[0] - 1.0
    with pytest.raises(SpectrumError, match="interlacing"):
        hill.HillSpectrum(lam, bad_mu, hill.gap_lengths(lam), 0.0, 3)
