"""Pure-numpy implementations of the hot kernels.

Reference semantics for the numba backend, and the fallback selected by
``KDVLAB_NO_NUMBA=1``.  Batching conventions:

* ``transfer_batch`` integrates the Hill system -y'' + u y = lam y over
  [0, 1] for a whole batch of spectral parameters at once with a
  fourth-order Magnus propagator on Gauss-Legendre nodes.  The scheme is
  exact for constant potentials (any lam), so its error is controlled by
  the variation of u alone and step counts stay lam-uniform.
* ``evolve_chunk`` advances KdV coefficient vectors with the four-stage
  exponential integrator; the dealiased quadratic term is evaluated by
  padded FFTs, vectorized over realizations.
"""

from __future__ import annotations

import numpy as np

SQRT3 = np.sqrt(3.0)
_SERIES_CUT = 1e-4


def _cosc_sinc(z: np.ndarray):
    """Entire functions c(z) = cosh(sqrt z), s(z) = sinh(sqrt z)/sqrt z
    and s'(z), evaluated stably through z = 0."""
    z = np.asarray(z)
    small = np.abs(z) < _SERIES_CUT
    zs = np.where(small, 0.0, z)  # keep sqrt off negatives in the wrong branch
    pos = zs > 0
    c = np.empty_like(z)
    s = np.empty_like(z)
    ds = np.empty_like(z)

    # series branch
    zz = z[small]
    c[small] = 1.0 + zz / 2.0 + zz**2 / 24.0 + zz**3 / 720.0 + zz**4 / 40320.0
    s[small] = 1.0 + zz / 6.0 + zz**2 / 120.0 + zz**3 / 5040.0 + zz**4 / 362880.0
    ds[small] = 1.0 / 6.0 + zz / 60.0 + zz**2 / 1680.0 + zz**3 / 90720.0

    big_pos = (~small) & pos
    r = np.sqrt(z[big_pos])
    c[big_pos] = np.cosh(r)
    s[big_pos] = np.sinh(r) / r
    ds[big_pos] = (c[big_pos] - s[big_pos]) / (2.0 * z[big_pos])

    big_neg = (~small) & (~pos)
    w = np.sqrt(-z[big_neg])
    c[big_neg] = np.cos(w)
    s[big_neg] = np.sin(w) / w
    ds[big_neg] = (c[big_neg] - s[big_neg]) / (2.0 * z[big_neg])
    return c, s, ds


def transfer_batch(u1: np.ndarray, u2: np.ndarray, lams: np.ndarray,
                   with_dlam: bool) -> np.ndarray:
    """Propagate the fundamental solutions of -y'' + u y = lam y over [0,1].

    u1, u2: potential values at the two Gauss nodes of each of n equal
    steps (shape (n,)).  Returns (B, 8): columns are y1(1), y1'(1), y2(1),
    y2'(1) and, when requested, their lam-derivatives (else zeros).
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=np.float64))
    n = u1.shape[0]
    h = 1.0 / n
    B = lams.shape[0]

    y1 = np.ones(B)
    y1p = np.zeros(B)
    y2 = np.zeros(B)
    y2p = np.ones(B)
    if with_dlam:
        z1 = np.zeros(B)
        z1p = np.zeros(B)
        z2 = np.zeros(B)
        z2p = np.zeros(B)

    al_fac = SQRT3 / 12.0 * h * h
    for i in range(n):
        qb = 0.5 * (u1[i] + u2[i]) - lams
        al = al_fac * (u1[i] - u2[i])  # lam cancels in the commutator
        z = al * al + h * h * qb
        c, s, ds = _cosc_sinc(z)
        p11 = c + s * al
        p12 = s * h
        p21 = s * h * qb
        p22 = c - s * al
        if with_dlam:
            dz = -h * h
            dc = 0.5 * s * dz
            dsg = ds * dz
            dp11 = dc + dsg * al
            dp12 = dsg * h
            dp21 = dsg * h * qb - s * h
            dp22 = dc - dsg * al
            z1, z1p = (p11 * z1 + p12 * z1p + dp11 * y1 + dp12 * y1p,
                       p21 * z1 + p22 * z1p + dp21 * y1 + dp22 * y1p)
            z2, z2p = (p11 * z2 + p12 * z2p + dp11 * y2 + dp12 * y2p,
                       p21 * z2 + p22 * z2p + dp21 * y2 + dp22 * y2p)
        y1, y1p = p11 * y1 + p12 * y1p, p21 * y1 + p22 * y1p
        y2, y2p = p11 * y2 + p12 * y2p, p21 * y2 + p22 * y2p

    out = np.zeros((B, 8))
    out[:, 0] = y1
    out[:, 1] = y1p
    out[:, 2] = y2
    out[:, 3] = y2p
    if with_dlam:
        out[:, 4] = z1
        out[:, 5] = z1p
        out[:, 6] = z2
        out[:, 7] = z2p
    return out


# -- KdV exponential stepper ------------------------------------------------


def _nonlinear(C: np.ndarray, plan, V: np.ndarray) -> np.ndarray:
    """Stage nonlinearity in coefficient space, vectorized over rows.

    Always contains the dealiased advection 3 d/dx (u^2) (unless disabled);
    the perturbation channels add a constant forcing or a smoothed
    pointwise nonlinearity.  V is a preallocated (M, pad_n//2+1) buffer.
    """
    (adv, fterm, sm, sm_tag, nonlin_on, pad_n) = (
        plan.adv, plan.fterm, plan.sm, plan.sm_tag, plan.nonlin_on, plan.pad_n)
    M, kp1 = C.shape
    need_grid = nonlin_on or sm_tag >= 2
    out = None
    if need_grid:
        V[:, kp1:] = 0.0
        V[:, :kp1] = C
        u = np.fft.irfft(V, n=pad_n)
        u *= pad_n
        if nonlin_on or sm_tag == 2:
            sq = np.fft.rfft(u * u)[:, :kp1]
            sq *= 1.0 / pad_n
        if nonlin_on:
            out = adv * sq
        if sm_tag == 2:
            term = sm * sq
            out = term if out is None else out + term
        elif sm_tag == 3:
            cb = np.fft.rfft(u * u * u)[:, :kp1]
            cb *= 1.0 / pad_n
            term = sm * cb
            out = term if out is None else out + term
    if sm_tag == 1:
        term = sm * C
        out = term if out is None else out + term
    if out is None:
        out = np.zeros_like(C)
    out += fterm
    out[:, 0] = 0.0  # mean stays off the dynamics
    return out


def evolve_chunk(C: np.ndarray, n_steps: int, plan,
                 aborted_at: np.ndarray, step_base: int = 0) -> None:
    """Advance C (M, K+1) by n_steps ETDRK4 steps in place.

    Rows whose weighted norm exceeds the blow-up ceiling (or go
    non-finite) freeze at the last good state; aborted_at records
    step_base + local step index for such rows.
    """
    E, E2, Q, f1, f2, f3 = plan.E, plan.E2, plan.Q, plan.f1, plan.f2, plan.f3
    wnorm, ceiling_sq = plan.wnorm, plan.ceiling_sq
    alive = aborted_at < 0
    V = np.empty((C.shape[0], plan.pad_n // 2 + 1), dtype=np.complex128)
    for step in range(n_steps):
        if not np.any(alive):
            break
        all_alive = bool(np.all(alive))
        Ca = C if all_alive else C[alive]
        Va = V if all_alive else V[: Ca.shape[0]]
        n0 = _nonlinear(Ca, plan, Va)
        a = E2 * Ca + Q * n0
        na = _nonlinear(a, plan, Va)
        b = E2 * Ca + Q * na
        nb = _nonlinear(b, plan, Va)
        cst = E2 * a + Q * (2.0 * nb - n0)
        nc = _nonlinear(cst, plan, Va)
        new = E * Ca + f1 * n0 + 2.0 * f2 * (na + nb) + f3 * nc
        nrm = np.sum(wnorm * (new.real**2 + new.imag**2), axis=1)
        bad = ~(nrm <= ceiling_sq)
        if np.any(bad):
            idx = np.flatnonzero(alive)
            C[idx[~bad]] = new[~bad]
            aborted_at[idx[bad]] = step_base + step
            alive = aborted_at < 0
        elif all_alive:
            C[:] = new
        else:
            C[alive] = new
