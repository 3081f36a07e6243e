"""Numba JIT implementations of the hot kernels.

Loop structure mirrors :mod:`kdvlab.kernels.numpy_backend`; the quadratic
KdV term is evaluated by an exact truncated convolution in coefficient
space instead of padded FFTs (numba has no FFT), which changes round-off
but not the mathematics.  Both backends are exercised by the test suite
and compared by ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

SQRT3 = np.sqrt(3.0)
_SERIES_CUT = 1e-4


@njit(cache=True)
def _transfer_kernel(u1, u2, lams, with_dlam, out):
    n = u1.shape[0]
    h = 1.0 / n
    al_fac = SQRT3 / 12.0 * h * h
    hh = h * h
    for j in range(lams.shape[0]):
        lam = lams[j]
        y1 = 1.0
        y1p = 0.0
        y2 = 0.0
        y2p = 1.0
        z1 = 0.0
        z1p = 0.0
        z2 = 0.0
        z2p = 0.0
        for i in range(n):
            qb = 0.5 * (u1[i] + u2[i]) - lam
            al = al_fac * (u1[i] - u2[i])
            z = al * al + hh * qb
            if abs(z) < _SERIES_CUT:
                c = 1.0 + z / 2.0 + z * z / 24.0 + z * z * z / 720.0 \
                    + z * z * z * z / 40320.0
                s = 1.0 + z / 6.0 + z * z / 120.0 + z * z * z / 5040.0 \
                    + z * z * z * z / 362880.0
                ds = 1.0 / 6.0 + z / 60.0 + z * z / 1680.0 + z * z * z / 90720.0
            elif z > 0.0:
                r = np.sqrt(z)
                c = np.cosh(r)
                s = np.sinh(r) / r
                ds = (c - s) / (2.0 * z)
            else:
                w = np.sqrt(-z)
                c = np.cos(w)
                s = np.sin(w) / w
                ds = (c - s) / (2.0 * z)
            p11 = c + s * al
            p12 = s * h
            p21 = s * h * qb
            p22 = c - s * al
            if with_dlam:
                dc = -0.5 * s * hh
                dsg = -ds * hh
                dp11 = dc + dsg * al
                dp12 = dsg * h
                dp21 = dsg * h * qb - s * h
                dp22 = dc - dsg * al
                t1 = p11 * z1 + p12 * z1p + dp11 * y1 + dp12 * y1p
                t2 = p21 * z1 + p22 * z1p + dp21 * y1 + dp22 * y1p
                z1 = t1
                z1p = t2
                t1 = p11 * z2 + p12 * z2p + dp11 * y2 + dp12 * y2p
                t2 = p21 * z2 + p22 * z2p + dp21 * y2 + dp22 * y2p
                z2 = t1
                z2p = t2
            t1 = p11 * y1 + p12 * y1p
            t2 = p21 * y1 + p22 * y1p
            y1 = t1
            y1p = t2
            t1 = p11 * y2 + p12 * y2p
            t2 = p21 * y2 + p22 * y2p
            y2 = t1
            y2p = t2
        out[j, 0] = y1
        out[j, 1] = y1p
        out[j, 2] = y2
        out[j, 3] = y2p
        out[j, 4] = z1
        out[j, 5] = z1p
        out[j, 6] = z2
        out[j, 7] = z2p


def transfer_batch(u1: np.ndarray, u2: np.ndarray, lams: np.ndarray,
                   with_dlam: bool) -> np.ndarray:
    lams = np.atleast_1d(np.asarray(lams, dtype=np.float64))
    out = np.zeros((lams.shape[0], 8))
    _transfer_kernel(np.ascontiguousarray(u1), np.ascontiguousarray(u2),
                     np.ascontiguousarray(lams), with_dlam, out)
    return out


# -- KdV exponential stepper ------------------------------------------------


@njit(cache=True)
def _self_convolve(c, out, kmax):
    """out[k] = sum_m c_m c_{k-m} for k = 0..kmax, with c_{-m} = conj(c_m).

    Split into the direct part (m in [max(0,k-K), min(k,K)]) and the
    conjugate part, which occurs twice by m <-> k-m symmetry.
    """
    K = c.shape[0] - 1
    for k in range(kmax + 1):
        acc = 0.0 + 0.0j
        lo = 0 if k <= K else k - K
        hi = k if k <= K else K
        for m in range(lo, hi + 1):
            acc += c[m] * c[k - m]
        if k < K:
            acc2 = 0.0 + 0.0j
            for j in range(1, K - k + 1):
                acc2 += np.conj(c[j]) * c[j + k]
            acc += 2.0 * acc2
        out[k] = acc


@njit(cache=True)
def _convolve_with(sq2, c, out):
    """out[k] = sum_m sq2_m c_{k-m}, sq2 on 0..2K (conj-extended), c on 0..K."""
    K = c.shape[0] - 1
    K2 = sq2.shape[0] - 1
    for k in range(K + 1):
        acc = 0.0 + 0.0j
        for m in range(k - K, K2 + 1):
            if m >= 0:
                sm = sq2[m]
            else:
                sm = np.conj(sq2[-m])
            i = k - m
            if -K <= i <= K:
                if i >= 0:
                    ci = c[i]
                else:
                    ci = np.conj(c[-i])
                acc += sm * ci
        out[k] = acc


@njit(cache=True)
def _nonlinear_nb(c, adv, fterm, sm, sm_tag, nonlin_on, out, scratch2k):
    kp1 = c.shape[0]
    need_sq = nonlin_on or sm_tag == 2 or sm_tag == 3
    if sm_tag == 3:
        _self_convolve(c, scratch2k, scratch2k.shape[0] - 1)
    elif need_sq:
        _self_convolve(c, scratch2k, kp1 - 1)
    for k in range(kp1):
        out[k] = fterm[k]
    if nonlin_on:
        for k in range(kp1):
            out[k] += adv[k] * scratch2k[k]
    if sm_tag == 1:
        for k in range(kp1):
            out[k] += sm[k] * c[k]
    elif sm_tag == 2:
        for k in range(kp1):
            out[k] += sm[k] * scratch2k[k]
    elif sm_tag == 3:
        cube = np.empty(kp1, dtype=np.complex128)
        _convolve_with(scratch2k, c, cube)
        for k in range(kp1):
            out[k] += sm[k] * cube[k]
    out[0] = 0.0 + 0.0j


@njit(cache=True)
def _evolve_kernel(C, n_steps, E, E2, Q, f1, f2, f3, adv, fterm, sm, sm_tag,
                   nonlin_on, wnorm, ceiling_sq, aborted_at, step_base):
    M, kp1 = C.shape
    n0 = np.empty(kp1, dtype=np.complex128)
    na = np.empty(kp1, dtype=np.complex128)
    nb = np.empty(kp1, dtype=np.complex128)
    nc = np.empty(kp1, dtype=np.complex128)
    a = np.empty(kp1, dtype=np.complex128)
    b = np.empty(kp1, dtype=np.complex128)
    cst = np.empty(kp1, dtype=np.complex128)
    new = np.empty(kp1, dtype=np.complex128)
    scratch2k = np.empty(2 * (kp1 - 1) + 1, dtype=np.complex128)
    for r in range(M):
        if aborted_at[r] >= 0:
            continue
        row = C[r]
        for step in range(n_steps):
            _nonlinear_nb(row, adv, fterm, sm, sm_tag, nonlin_on, n0, scratch2k)
            for k in range(kp1):
                a[k] = E2[k] * row[k] + Q[k] * n0[k]
            _nonlinear_nb(a, adv, fterm, sm, sm_tag, nonlin_on, na, scratch2k)
            for k in range(kp1):
                b[k] = E2[k] * row[k] + Q[k] * na[k]
            _nonlinear_nb(b, adv, fterm, sm, sm_tag, nonlin_on, nb, scratch2k)
            for k in range(kp1):
                cst[k] = E2[k] * a[k] + Q[k] * (2.0 * nb[k] - n0[k])
            _nonlinear_nb(cst, adv, fterm, sm, sm_tag, nonlin_on, nc, scratch2k)
            nrm = 0.0
            for k in range(kp1):
                new[k] = (E[k] * row[k] + f1[k] * n0[k]
                          + 2.0 * f2[k] * (na[k] + nb[k]) + f3[k] * nc[k])
                nrm += wnorm[k] * (new[k].real**2 + new[k].imag**2)
            if not (nrm <= ceiling_sq):
                aborted_at[r] = step_base + step
                break
            for k in range(kp1):
                row[k] = new[k]


def evolve_chunk(C: np.ndarray, n_steps: int, plan,
                 aborted_at: np.ndarray, step_base: int = 0) -> None:
    _evolve_kernel(C, n_steps, plan.E, plan.E2, plan.Q, plan.f1, plan.f2,
                   plan.f3, plan.adv, plan.fterm, plan.sm, plan.sm_tag,
                   plan.nonlin_on, plan.wnorm, plan.ceiling_sq, aborted_at,
                   step_base)
