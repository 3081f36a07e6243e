"""Spectral theory of the Hill operator -d^2/dx^2 + u(x).

The potential has period one; spectra live on the doubled period, realized
as the zero set of Delta^2 - 4 where Delta(lam) = y1(1,lam) + y2'(1,lam)
is the discriminant of the fundamental solutions.  Roots of Delta = +2
(periodic) interleave with Delta = -2 (antiperiodic); the integration
always runs over [0, 1] only.

Root location strategy: probe one interior point per band (free-operator
band centers, validated), bracket the single critical point of Delta
between consecutive bands, then solve for the gap edges on either side.
Closed gaps are detected by the contact depth |Delta| - 2 at the critical
point and returned as exact double eigenvalues.  Dirichlet eigenvalues
are the roots of y2(1, .), one per gap, bracketed between band probes;
the shifted Dirichlet family is computed from the translated potential.

All lam-batches go through the kernel backend (numba or numpy); results
are deterministic and schedule-independent.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from kdvlab import kernels
from kdvlab.errors import DomainError, IntegrationError, SpectrumError
from kdvlab.grid import FourierField, derivative, inner, synthesize_at

PI_SQ = np.pi**2

# absolute accuracy scale of the propagated fundamental solutions; drives
# the adaptive closed-gap detection floor
EDGE_EPS = 1e-12
# snap rule for gap lengths (relative to the band scale)
GAP_SNAP_ABS = 1e-9

_MAX_STEPS = 1 << 18


@dataclass(frozen=True)
class TransferData:
    """Fundamental-solution data at x = 1 for one spectral parameter."""

    lam: float
    y1_1: float
    y1p_1: float
    y2_1: float
    y2p_1: float
    dy1_1: float | None = None
    dy1p_1: float | None = None
    dy2_1: float | None = None
    dy2p_1: float | None = None

    def wronskian(self) -> float:
        return self.y1_1 * self.y2p_1 - self.y1p_1 * self.y2_1

    def discriminant(self) -> float:
        return self.y1_1 + self.y2p_1


@dataclass(frozen=True)
class HillSpectrum:
    """Periodic eigenvalues, Dirichlet eigenvalues and gap lengths."""

    lam: np.ndarray  # (2 n_max + 1,)
    mu: np.ndarray  # (n_max,)
    gaps: np.ndarray  # (n_max,)
    z: float
    n_max: int

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        if lam.shape != (2 * self.n_max + 1,):
            raise ValueError("lam must have length 2 n_max + 1")
        if not (lam[0] < lam[1]
                and np.all(np.diff(lam) >= -1e-12 * (1.0 + np.abs(lam[1:])))):
            raise SpectrumError("periodic eigenvalues out of order")
        for n in range(1, self.n_max + 1):
            slack = 1e-9 * (1.0 + abs(mu[n - 1]))
            if not (lam[2 * n - 1] - slack <= mu[n - 1] <= lam[2 * n] + slack):
                raise SpectrumError(
                    f"interlacing violated at n={n}: mu={mu[n-1]!r} not in "
                    f"[{lam[2*n-1]!r}, {lam[2*n]!r}]"
                )

    def to_json(self, tolerances: dict | None = None) -> str:
        return json.dumps({
            "lambda": [repr(float(x)) for x in self.lam],
            "mu": [repr(float(x)) for x in self.mu],
            "gaps": [repr(float(x)) for x in self.gaps],
            "z": self.z,
            "n_max": self.n_max,
            "tolerances": tolerances or {"edge_eps": EDGE_EPS,
                                         "gap_snap": GAP_SNAP_ABS},
        })

    @classmethod
    def from_json(cls, text: str) -> "HillSpectrum":
        doc = json.loads(text)
        return cls(np.array([float(x) for x in doc["lambda"]]),
                   np.array([float(x) for x in doc["mu"]]),
                   np.array([float(x) for x in doc["gaps"]]),
                   float(doc["z"]), int(doc["n_max"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["n", "lambda_lo", "lambda_hi", "gap", "mu"])
        for n in range(1, self.n_max + 1):
            w.writerow([n, repr(float(self.lam[2 * n - 1])),
                        repr(float(self.lam[2 * n])),
                        repr(float(self.gaps[n - 1])),
                        repr(float(self.mu[n - 1]))])
        return buf.getvalue()


class _HillContext:
    """Caches Gauss-node potential samples and the calibrated step count."""

    def __init__(self, u: FourierField, constant_shift: float = 0.0,
                 atol: float = 1e-11, rtol: float = 1e-11,
                 n_steps: int | None = None, lam_max: float | None = None):
        self.u = u
        self.shift = float(constant_shift)
        self.atol = atol
        self.rtol = rtol
        self._nodes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        umin = float(np.min(u.values())) if u.n_modes else 0.0
        self.lam_floor = self.shift + umin - 1.0
        if n_steps is not None:
            self.n_steps = int(n_steps)
        else:
            self.n_steps = self._calibrate(lam_max if lam_max is not None else 100.0)

    def _node_samples(self, n: int):
        cached = self._nodes.get(n)
        if cached is not None:
            return cached
        h = 1.0 / n
        mids = (np.arange(n) + 0.5) * h
        off = math.sqrt(3.0) / 6.0 * h
        u1 = synthesize_at(self.u.coeffs, mids - off) + self.shift
        u2 = synthesize_at(self.u.coeffs, mids + off) + self.shift
        self._nodes[n] = (u1, u2)
        return u1, u2

    def _calibrate(self, lam_max: float) -> int:
        lam_max = max(lam_max, 10.0)
        probes = np.array([self.lam_floor, 0.31 * lam_max, 0.73 * lam_max,
                           lam_max])
        n = 64
        while n < 1.2 * math.sqrt(lam_max):
            n *= 2
        u1, u2 = self._node_samples(n)
        prev = kernels.transfer_batch(u1, u2, probes, True)
        while True:
            n2 = 2 * n
            if n2 > _MAX_STEPS:
                raise IntegrationError(
                    f"step count underflow: > {_MAX_STEPS} steps needed near "
                    f"lam = {lam_max!r}"
                )
            u1, u2 = self._node_samples(n2)
            cur = kernels.transfer_batch(u1, u2, probes, True)
            scale = np.maximum(1.0, np.abs(cur))
            err = np.max(np.abs(cur - prev) / scale)
            if err < max(self.atol, self.rtol):
                return n2
            n, prev = n2, cur
        raise AssertionError("unreachable")

    def eval(self, lams: np.ndarray, with_dlam: bool = False) -> np.ndarray:
        u1, u2 = self._node_samples(self.n_steps)
        return kernels.transfer_batch(u1, u2, np.asarray(lams, float), with_dlam)

    def disc(self, lams, with_dlam: bool = False):
        out = self.eval(lams, with_dlam)
        d = out[:, 0] + out[:, 3]
        if with_dlam:
            return d, out[:, 4] + out[:, 7]
        return d

    def y2(self, lams, with_dlam: bool = False):
        out = self.eval(lams, with_dlam)
        if with_dlam:
            return out[:, 2], out[:, 6]
        return out[:, 2]

    def disc_sq_m4(self, lams):
        """Delta^2 - 4 without cancellation: (y1 - y2')^2 + 4 y1' y2.

        The identity holds because the Wronskian equals one.  Near a
        closed gap every factor vanishes together, so the absolute error
        stays O(eps * gap) and edge roots are well-conditioned however
        small the gap.
        """
        out = self.eval(lams, False)
        return (out[:, 0] - out[:, 3]) ** 2 + 4.0 * out[:, 1] * out[:, 2]

    def disc_sq_floor(self, lams):
        """disc_sq_m4 values plus their numerical resolution floor."""
        out = self.eval(lams, False)
        g = (out[:, 0] - out[:, 3]) ** 2 + 4.0 * out[:, 1] * out[:, 2]
        floor = EDGE_EPS * (2.0 * np.abs(out[:, 0] - out[:, 3])
                            + 4.0 * np.abs(out[:, 1]) + 4.0 * np.abs(out[:, 2])
                            + 5.0 * EDGE_EPS)
        return g, floor


def _illinois(f, lo, hi, flo, fhi, xtol_abs=1e-13, xtol_rel=5e-14,
              max_iter=110):
    """Vectorized Illinois (modified regula falsi) on a batch of brackets.

    ``f(x, idx)`` maps abscissas plus their positions in the original
    batch to function values; each bracket must carry a sign change.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    flo = np.array(flo, dtype=float)
    fhi = np.array(fhi, dtype=float)
    if np.any(flo * fhi > 0):
        bad = int(np.argmax(flo * fhi > 0))
        raise SpectrumError(
            f"no sign change in bracket [{lo[bad]!r}, {hi[bad]!r}]"
        )
    x = 0.5 * (lo + hi)
    active = np.ones(lo.shape, dtype=bool)
    for _ in range(max_iter):
        if not np.any(active):
            break
        denom = fhi - flo
        sec = np.where(denom != 0.0,
                       (lo * fhi - hi * flo) / np.where(denom == 0.0, 1.0, denom),
                       0.5 * (lo + hi))
        inside = (sec > lo) & (sec < hi)
        cand = np.where(inside, sec, 0.5 * (lo + hi))
        x = np.where(active, cand, x)
        idx = np.flatnonzero(active)
        fx = np.zeros_like(x)
        fx[idx] = f(x[idx], idx)
        same_side_hi = fx * fhi > 0
        # replace the matching endpoint; halve the kept one (Illinois)
        hi_new = np.where(same_side_hi, x, hi)
        fhi_new = np.where(same_side_hi, fx, fhi * 0.5)
        lo_new = np.where(same_side_hi, lo, x)
        flo_new = np.where(same_side_hi, flo * 0.5, fx)
        lo = np.where(active, lo_new, lo)
        hi = np.where(active, hi_new, hi)
        flo = np.where(active, flo_new, flo)
        fhi = np.where(active, fhi_new, fhi)
        width = hi - lo
        tol = xtol_abs + xtol_rel * np.abs(x)
        active = active & (width > tol) & (fx != 0.0)
    return x


def _band_probes(ctx: _HillContext, n_bands: int):
    """One validated interior point per band plus d(Delta)/dlam signs there."""
    centers = (np.arange(1, n_bands + 1) - 0.5) ** 2 * PI_SQ + ctx.shift
    d, dd = ctx.disc(centers, with_dlam=True)
    ok = (np.abs(d) < 1.8) & (np.sign(dd) == (-1.0) ** np.arange(1, n_bands + 1))
    if not np.all(ok):
        # local search inside the expected band
        for i in np.flatnonzero(~ok):
            n = i + 1
            half = ((n - 0.5) ** 2 - (n - 1) ** 2) * PI_SQ * 0.9
            found = False
            for frac in (0.25, -0.25, 0.5, -0.5, 0.75, -0.75):
                cand = centers[i] + frac * half
                dc, ddc = ctx.disc(np.array([cand]), with_dlam=True)
                if abs(dc[0]) < 1.8 and np.sign(ddc[0]) == (-1.0) ** n:
                    centers[i], d[i], dd[i] = cand, dc[0], ddc[0]
                    found = True
                    break
            if not found:
                scan = np.linspace(centers[i] - half, centers[i] + half, 41)
                table = ctx.disc(scan)
                raise SpectrumError(
                    f"could not locate band {n}: |Delta| >= 2 across probe "
                    f"window; scan min |Delta| = {np.min(np.abs(table)):.3e}"
                )
    return centers, d, dd


def _lam0(ctx: _HillContext, band1: float) -> float:
    lo = ctx.lam_floor
    flo = ctx.disc_sq_m4(np.array([lo]))[0]
    tries = 0
    while flo <= 0.0:
        lo -= 2.0 ** tries
        flo = ctx.disc_sq_m4(np.array([lo]))[0]
        tries += 1
        if tries > 60:
            raise SpectrumError("could not bracket the ground eigenvalue")
    fhi = ctx.disc_sq_m4(np.array([band1]))[0]
    root = _illinois(lambda x, idx: ctx.disc_sq_m4(x),
                     np.array([lo]), np.array([band1]),
                     np.array([flo]), np.array([fhi]))
    return float(root[0])


def periodic_spectrum(u: FourierField, n_max: int,
                      constant_shift: float = 0.0,
                      ctx: _HillContext | None = None) -> np.ndarray:
    """Eigenvalues lam_0 <= lam_1 <= ... <= lam_{2 n_max} on the doubled period.

    Closed gaps are detected by contact depth at the critical point of the
    discriminant and returned as exact double eigenvalues.  A failed band
    probe raises SpectrumError with a diagnostic scan.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    lam_max = (n_max + 0.5) ** 2 * PI_SQ + constant_shift + u.max_abs() + 5.0
    if ctx is None:
        ctx = _HillContext(u, constant_shift, lam_max=lam_max)
    probes, d_probe, dd_probe = _band_probes(ctx, n_max + 1)

    lam = np.empty(2 * n_max + 1)
    lam[0] = _lam0(ctx, probes[0])

    # critical point of Delta inside each gap (unique; d(Delta) alternates)
    crit = _illinois(lambda x, idx: ctx.disc(x, with_dlam=True)[1],
                     probes[:-1], probes[1:], dd_probe[:-1], dd_probe[1:])
    depth, depth_floor = ctx.disc_sq_floor(crit)
    g_probe = ctx.disc_sq_m4(probes)
    # a gap is numerically closed when Delta^2 - 4 at the critical point is
    # indistinguishable from zero at the propagation accuracy
    closed = depth <= depth_floor

    open_idx = np.flatnonzero(~closed)
    for n_ in np.flatnonzero(closed):
        lam[2 * n_ + 1] = lam[2 * n_ + 2] = crit[n_]
    if open_idx.size:
        def edge_f(x, idx):
            return ctx.disc_sq_m4(x)

        left = _illinois(edge_f, probes[open_idx], crit[open_idx],
                         g_probe[open_idx], depth[open_idx])
        right = _illinois(edge_f, crit[open_idx], probes[open_idx + 1],
                          depth[open_idx], g_probe[open_idx + 1])
        for j, n_ in enumerate(open_idx):
            lam[2 * n_ + 1] = left[j]
            lam[2 * n_ + 2] = right[j]

    # ordering sanity (catches missed roots early)
    if np.any(np.diff(lam) < -1e-10 * (1.0 + np.abs(lam[1:]))):
        raise SpectrumError(f"eigenvalues out of order: {lam!r}")
    return lam


def gap_lengths(spectrum) -> np.ndarray:
    """g_n = lam_{2n} - lam_{2n-1} >= 0, snapped to 0 below tolerance."""
    lam = spectrum.lam if isinstance(spectrum, HillSpectrum) else np.asarray(spectrum)
    n_max = (lam.shape[0] - 1) // 2
    n = np.arange(1, n_max + 1)
    g = lam[2 * n] - lam[2 * n - 1]
    g = np.where(g < GAP_SNAP_ABS * (1.0 + n**2 * PI_SQ), 0.0, g)
    return g


def translate(u: FourierField, z: float) -> FourierField:
    """Potential x -> u(x + z); rotates each coefficient pair."""
    k = np.arange(1, u.n_modes + 1)
    th = 2.0 * np.pi * k * z
    a, b = u.coeffs[:, 0], u.coeffs[:, 1]
    c = np.stack([a * np.cos(th) + b * np.sin(th),
                  -a * np.sin(th) + b * np.cos(th)], axis=1)
    return u.with_coeffs(c)


def dirichlet_spectrum(u: FourierField, n_max: int, z: float = 0.0,
                       lam: np.ndarray | None = None,
                       ctx: _HillContext | None = None) -> np.ndarray:
    """Dirichlet eigenvalues mu_1 < ... < mu_{n_max} for y(z) = y(z+1) = 0.

    For z != 0 the translated potential u(. + z) is used.  Interlacing
    against the periodic spectrum is enforced as a post-check.
    """
    uz = translate(u, z) if z != 0.0 else u
    lam_max = (n_max + 0.5) ** 2 * PI_SQ + u.max_abs() + 5.0
    if ctx is None:
        ctx = _HillContext(uz, lam_max=lam_max)
    if lam is None:
        lam = periodic_spectrum(u, n_max)  # translation-invariant
    probes, _, _ = _band_probes(ctx, n_max + 1)
    y_probe = ctx.y2(probes)
    expect = (-1.0) ** (np.arange(1, n_max + 2) - 1)
    if np.any(np.sign(y_probe) != expect):
        raise SpectrumError("y2 probe signs broke the alternation pattern")
    mu = _illinois(lambda x, idx: ctx.y2(x), probes[:-1], probes[1:],
                   y_probe[:-1], y_probe[1:])
    # post-check interlacing, then clamp into the closed gap
    for n in range(1, n_max + 1):
        gl, gr = lam[2 * n - 1], lam[2 * n]
        slack = 1e-8 * (1.0 + abs(mu[n - 1]))
        if not (gl - slack <= mu[n - 1] <= gr + slack):
            raise SpectrumError(
                f"Dirichlet root escaped gap {n}: mu={mu[n-1]!r}, "
                f"gap=[{gl!r}, {gr!r}]"
            )
        mu[n - 1] = min(max(mu[n - 1], gl), gr)
    return mu


def compute_spectrum(u: FourierField, n_max: int, z: float = 0.0) -> HillSpectrum:
    """Periodic + Dirichlet spectrum bundle with gap lengths."""
    lam_max = (n_max + 0.5) ** 2 * PI_SQ + u.max_abs() + 5.0
    ctx = _HillContext(u, lam_max=lam_max)
    lam = periodic_spectrum(u, n_max, ctx=ctx)
    dctx = ctx if z == 0.0 else None
    mu = dirichlet_spectrum(u, n_max, z=z, lam=lam, ctx=dctx)
    return HillSpectrum(lam, mu, gap_lengths(lam), z, n_max)


def transfer(u: FourierField, lam: float, with_dlam: bool = False,
             constant_shift: float = 0.0,
             ctx: _HillContext | None = None) -> TransferData:
    """Fundamental solutions of -y'' + u y = lam y at x = 1.

    When with_dlam is set the lam-derivative variational system is
    integrated alongside, so the discriminant derivative needs no finite
    differencing.
    """
    if ctx is None:
        ctx = _HillContext(u, constant_shift, lam_max=abs(lam) + 10.0)
    out = ctx.eval(np.array([float(lam)]), with_dlam)[0]
    if with_dlam:
        return TransferData(lam, out[0], out[1], out[2], out[3],
                            out[4], out[5], out[6], out[7])
    return TransferData(lam, out[0], out[1], out[2], out[3])


def discriminant(u: FourierField, lam: float, with_dlam: bool = False,
                 constant_shift: float = 0.0,
                 ctx: _HillContext | None = None):
    """Delta(lam, u) = y1(1) + y2'(1); optionally with d(Delta)/dlam."""
    t = transfer(u, lam, with_dlam, constant_shift, ctx)
    if with_dlam:
        return t.discriminant(), t.dy1_1 + t.dy2p_1
    return t.discriminant()


def trace_reconstruct(u: FourierField, n_max: int, z_grid: np.ndarray):
    """Truncated trace-formula reconstruction on z_grid.

    Returns (values, last_term_magnitude).  The potential is recovered as
    lam_0 + sum_j (lam_{2j-1} + lam_{2j} - 2 mu_j(z)); the magnitude of
    the last retained term (max over z) estimates the truncation error.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    lam_max = (n_max + 0.5) ** 2 * PI_SQ + u.max_abs() + 5.0
    ctx0 = _HillContext(u, lam_max=lam_max)
    lam = periodic_spectrum(u, n_max, ctx=ctx0)
    pair_sum = lam[1::2] + lam[2::2]
    vals = np.empty_like(z_grid)
    last = 0.0
    for i, z in enumerate(z_grid):
        uz = translate(u, float(z))
        ctx = _HillContext(uz, n_steps=ctx0.n_steps)
        mu = dirichlet_spectrum(u, n_max, z=float(z), lam=lam, ctx=ctx)
        terms = pair_sum - 2.0 * mu
        if not np.all(np.isfinite(terms)):
            raise SpectrumError("non-finite trace terms")
        vals[i] = lam[0] + np.sum(terms)
        last = max(last, abs(float(terms[-1])))
    return vals, last


def functional_gradient_fd(F, u: FourierField, h: float = 1e-6,
                           richardson: bool = False) -> FourierField:
    """L^2 gradient of a scalar functional by central differences.

    Differentiates along every retained basis direction e_{+-k}; the
    result is zero-mean by construction.  With richardson=True a second
    pass at 2h removes the leading O(h^2) error term.
    """
    def central(step):
        g = np.zeros((u.n_modes, 2))
        for k in range(u.n_modes):
            for comp in range(2):
                e = np.zeros((u.n_modes, 2))
                e[k, comp] = step
                fp = F(u.with_coeffs(u.coeffs + e))
                fm = F(u.with_coeffs(u.coeffs - e))
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise DomainError(
                        f"functional non-finite at probe k={k+1}, comp={comp}"
                    )
                g[k, comp] = (fp - fm) / (2.0 * step)
        return g

    g = central(h)
    if richardson:
        g2 = central(2.0 * h)
        g = (4.0 * g - g2) / 3.0
    return u.with_coeffs(g)


def gardner_bracket(grad_f: FourierField, grad_g: FourierField) -> float:
    """int (d/dx grad F) grad G dx, evaluated spectrally.

    Antisymmetric in its arguments by the structure of d/dx.
    """
    return inner(derivative(grad_f, 1), grad_g)


def matrix_oracle_spectrum(u: FourierField, n_max: int,
                           n_basis: int | None = None) -> np.ndarray:
    """Independent dense-Galerkin eigenvalues of the doubled-period operator.

    Plane waves e^{i pi m x}, |m| <= n_basis, on [0, 2]; the potential
    couples modes with even index difference.  Used as a cross-validation
    oracle for the discriminant-root spectrum.
    """
    if n_basis is None:
        n_basis = 2 * n_max + 24
    cc = (u.coeffs[:, 0] - 1j * u.coeffs[:, 1]) / np.sqrt(2.0)
    dim = 2 * n_basis + 1
    m = np.arange(-n_basis, n_basis + 1)
    H = np.diag((np.pi * m) ** 2).astype(np.complex128)
    for j in range(1, u.n_modes + 1):
        if 2 * j >= dim:
            break
        H += cc[j - 1] * np.eye(dim, k=-2 * j) + np.conj(cc[j - 1]) * np.eye(dim, k=2 * j)
    ev = np.linalg.eigvalsh(H)
    return np.sort(ev)[: 2 * n_max + 1]
