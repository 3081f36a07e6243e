"""Averaging apparatus: resonance sets, averaged action dynamics,
admissible Gaussian sampling, and quasi-invariance evidence.

The resonance set collects action vectors whose leading frequencies
admit a small integer combination |W_1 k_1 + ... + W_m k_m| < delta with
1 <= |k|_1 <= K; membership is decided by exact enumeration of the
lattice ball (no sampling).  Frequencies default to the first-order
model W_n = (2 pi n)^3 - 6 I_n, valid near the origin; an empirical mode
(slopes fitted from the flow) can be selected per experiment and the
choice is recorded in output metadata.

The torus average of the perturbed action rate is replaced by a time
average along the unperturbed flow, justified off the resonance set;
every estimate carries its resonance flag and a window-halving error
bar.  The averaged action curve advances quasi-statically, using the
perturbed trajectory itself to supply torus representatives.

Quasi-invariance is probed at the Galerkin level: the phase-space
divergence of the perturbation field over the retained coordinates,
bounded uniformly in the truncation for smoothing channels, identically
zero for state-independent forcing, and truncation-divergent for the
dissipative channel (which falls outside the smoothing hypotheses).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from kdvlab import birkhoff, kdvflow
from kdvlab.errors import DomainError
from kdvlab.grid import FourierField, derivative, product_dealiased

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ResonanceQuery:
    """Parameters (delta, m, K) of the small-divisor set."""

    delta: float
    m: int
    k_radius: int

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if self.m < 1 or self.k_radius < 1:
            raise ValueError("m and k_radius must be >= 1")

    def lattice(self, order: str = "lex"):
        """All integer vectors with 1 <= |k|_1 <= k_radius, exactly."""
        rng = range(-self.k_radius, self.k_radius + 1)
        pts = [k for k in itertools.product(rng, repeat=self.m)
               if 0 < sum(abs(x) for x in k) <= self.k_radius]
        if order == "reversed":
            pts = pts[::-1]
        return pts


@dataclass(frozen=True)
class GaussianMeasureSpec:
    """Zero-mean diagonal Gaussian on mode space.

    ``sigma`` are the per-mode weights sigma_j; component variances in
    the u-coefficients are sigma_j / (2 pi j)^{2p} (the mode-space
    density exponent (2 pi j)^{1+2p} composed with the linearized weight
    |2 pi j|^{-1/2}).  Admissibility needs zeta0p < -1 with
    j^{zeta0p}/sigma_j bounded.
    """

    sigma: np.ndarray  # (K,)
    zeta0p: float
    p: float
    grid_size: int
    law: str = "explicit"

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.float64)
        if np.any(s <= 0.0) or not np.all(np.isfinite(s)):
            raise ValueError("sigma must be positive and finite")
        if self.zeta0p >= -1.0:
            raise ValueError("admissibility needs zeta0p < -1")
        object.__setattr__(self, "sigma", s)

    @property
    def n_modes(self) -> int:
        return self.sigma.shape[0]

    def admissibility_constant(self) -> float:
        j = np.arange(1, self.n_modes + 1, dtype=float)
        return float(np.max(j**self.zeta0p / self.sigma))

    def sigma_tail(self) -> float:
        """Estimated sum of sigma_j beyond the truncation (law-based)."""
        if self.law.startswith("power:"):
            s0, expo = (float(x) for x in self.law.split(":")[1:])
            if expo < -1.0:
                K = self.n_modes
                return s0 * K ** (expo + 1.0) / (-expo - 1.0)
        return 0.0


def power_law_measure(n_modes: int, grid_size: int, s0: float, zeta0p: float,
                      p: float = 1.0) -> GaussianMeasureSpec:
    """sigma_j = s0 j^{zeta0p}; admissible for any zeta0p < -1."""
    j = np.arange(1, n_modes + 1, dtype=np.float64)
    return GaussianMeasureSpec(s0 * j**zeta0p, zeta0p, p, grid_size,
                               law=f"power:{s0}:{zeta0p}")


def sample_gaussian(spec: GaussianMeasureSpec,
                    rng: np.random.Generator) -> FourierField:
    """One draw; exactly zero-mean by construction, reproducible by seed."""
    j = np.arange(1, spec.n_modes + 1, dtype=np.float64)
    std = np.sqrt(spec.sigma / (TWO_PI * j) ** (2.0 * spec.p))
    xi = rng.standard_normal((spec.n_modes, 2))
    return FourierField(std[:, None] * xi, spec.grid_size)


# -- frequencies and resonances -------------------------------------------


def frequency_vector(I, m: int, mode: str = "model",
                     empirical=None) -> np.ndarray:
    """Leading frequencies W_1..W_m from the actions.

    model:      W_n = (2 pi n)^3 - 6 I_n (first order near the origin)
    empirical:  caller-supplied callable n -> W_n (e.g. fitted slopes)
    """
    I = np.asarray(I.I if isinstance(I, birkhoff.ActionSpectrum) else I,
                   dtype=float)
    if mode == "model":
        n = np.arange(1, m + 1)
        if I.shape[0] < m:
            I = np.pad(I, (0, m - I.shape[0]))
        return (TWO_PI * n) ** 3 - 6.0 * I[:m]
    if mode == "empirical":
        if empirical is None:
            raise ValueError("empirical mode needs a frequency callable")
        return np.array([empirical(n) for n in range(1, m + 1)], dtype=float)
    raise ValueError(f"unknown frequency mode {mode!r}")


def resonance_indicator(W: np.ndarray, query: ResonanceQuery,
                        order: str = "lex"):
    """Exact lattice-ball membership test.

    Returns (resonant, k_min, min_value).  The minimizer is canonicalized
    (first nonzero component positive, lexicographic tie-break), so any
    enumeration order yields identical results.
    """
    W = np.asarray(W, dtype=float)[: query.m]
    best_val = np.inf
    best_k = None
    for k in query.lattice(order):
        v = abs(float(np.dot(k, W)))
        nz = next((x for x in k if x != 0), 1)
        ck = k if nz > 0 else tuple(-x for x in k)
        if v < best_val or (v == best_val and ck < best_k):
            best_val = v
            best_k = ck
    return best_val < query.delta, best_k, best_val


def occupation_fraction(traj, query: ResonanceQuery,
                        frequency_mode: str = "model") -> float:
    """Fraction of sampled slow time spent inside the resonance set.

    ``traj`` is a TrajectoryRecord carrying action samples, or a pair
    (taus, I_samples) with I_samples of shape (n, >= m).  Trapezoidal in
    time; monotone nondecreasing in delta and in the lattice radius.
    """
    if isinstance(traj, tuple):
        taus, I_samples = traj
    else:
        taus, I_samples = traj.action_times, traj.actions
    taus = np.asarray(taus, dtype=float)
    I_samples = np.asarray(I_samples, dtype=float)
    if taus.shape[0] < 2:
        raise ValueError("need at least two action samples")
    chi = np.empty(taus.shape[0])
    for i in range(taus.shape[0]):
        W = frequency_vector(I_samples[i], query.m, frequency_mode)
        chi[i] = 1.0 if resonance_indicator(W, query)[0] else 0.0
    return float(np.trapezoid(chi, taus) / (taus[-1] - taus[0]))


# -- averaged action dynamics ----------------------------------------------


def apply_perturbation(pert: kdvflow.PerturbationSpec,
                       u: FourierField) -> FourierField:
    """The perturbation direction field f(u) (per unit eps)."""
    if pert.kind == "none":
        return u.with_coeffs(np.zeros_like(u.coeffs))
    if pert.kind == "dissipative":
        return derivative(u, 2)
    if pert.kind == "external_force":
        return pert.force
    # smoothing_map: kernel * g(u), unit-mass analytic kernel
    if pert.nonlinearity == "identity":
        g = u
    elif pert.nonlinearity == "square":
        g = product_dealiased(u, u)
    else:  # cube
        g = product_dealiased(product_dealiased(u, u), u)
    k = np.arange(1, u.n_modes + 1, dtype=float)
    damp = np.exp(-pert.kernel_decay * k)
    return u.with_coeffs(g.coeffs * damp[:, None])


def empirical_averaged_rhs(u: FourierField, n_max: int, T_avg: float,
                           pert: kdvflow.PerturbationSpec,
                           dt: float | None = None, n_snapshots: int = 16,
                           fd_scale: float = 1e-4,
                           resonance_query: ResonanceQuery | None = None):
    """Time-averaged instantaneous action production rate along the torus.

    Snapshots of the unperturbed flow stand in for the torus average (off
    resonance); at each snapshot the rate of I under the perturbation is
    a central finite difference of the action map in the direction f(u).
    Returns (F, err, resonant): the n_max-vector estimate, a
    window-halving error bar, and the resonance flag of the initial
    actions (None when no query is given).
    """
    rec = kdvflow.evolve(u, T_avg, dt=dt, n_samples=n_snapshots,
                         checkpoint_stride=1)
    if rec.aborted:
        raise DomainError("unperturbed averaging window aborted")
    rates = np.zeros((len(rec.checkpoints), n_max))
    for i, (_, snap) in enumerate(rec.checkpoints):
        direction = apply_perturbation(pert, snap)
        scale = max(np.max(np.abs(direction.coeffs)), 1e-300)
        h = fd_scale / scale
        up = birkhoff.actions(snap.with_coeffs(snap.coeffs + h * direction.coeffs),
                              n_max)
        dn = birkhoff.actions(snap.with_coeffs(snap.coeffs - h * direction.coeffs),
                              n_max)
        rates[i] = (up.I - dn.I) / (2.0 * h)
    full = rates.mean(axis=0)
    half = rates[: max(1, len(rates) // 2)].mean(axis=0)
    err = np.abs(full - half)
    resonant = None
    if resonance_query is not None:
        acts0 = birkhoff.actions(u, resonance_query.m)
        W = frequency_vector(acts0, resonance_query.m)
        resonant = resonance_indicator(W, resonance_query)[0]
    return full, err, resonant


@dataclass
class AveragedCurve:
    """Quasi-static solution J(tau) of the averaged action equation."""

    tau: np.ndarray
    J: np.ndarray  # (n_tau, n_max)
    err: np.ndarray  # accumulated averaging error bars
    I_rep: np.ndarray  # full-pipeline actions of the representatives
    aborted: bool


def averaged_trajectory(u0: FourierField, T_slow: float,
                        pert: kdvflow.PerturbationSpec, n_max: int,
                        n_slow: int = 26, T_avg: float | str = "matched",
                        n_snapshots: int = 12,
                        dt: float | None = None) -> AveragedCurve:
    """Integrate dJ/dtau = <F>(J) alongside the perturbed flow.

    The slow time is tau = pert.eps * t; the averaged rates are per unit
    eps, so the curve J(tau) depends on eps only through the torus
    representatives supplied by the perturbed flow.

    At each slow node the averaged rate is estimated from the current
    representative potential by the unperturbed-flow time average; J
    advances quasi-statically while the representative advances by the
    perturbed flow, staying near the evolving torus.  With
    T_avg="matched" (default) each node's window equals the slow step's
    own fast horizon d_tau/eps, the average the slow dynamics actually
    sees; a fixed number freezes the window instead.  Strong damping
    makes the averaged equation stiff, so the update is the
    positivity-preserving exponential step J -> J exp(d_tau F / I_rep)
    (exact on linear decay, first-order consistent in general), falling
    back to Euler for growing or dead components.  Aborts return the
    partial curve with the flag set.
    """
    eps = pert.eps
    if eps <= 0.0:
        raise ValueError("averaging needs a perturbation with eps > 0")
    taus = np.linspace(0.0, T_slow, n_slow + 1)
    d_tau = taus[1] - taus[0]
    J = np.zeros((n_slow + 1, n_max))
    I_rep = np.zeros((n_slow + 1, n_max))
    err = np.zeros((n_slow + 1, n_max))
    rep = u0
    J[0] = I_rep[0] = birkhoff.actions(u0, n_max).I
    aborted = False
    window = d_tau / eps if T_avg == "matched" else float(T_avg)
    for i in range(n_slow):
        F, e, _ = empirical_averaged_rhs(rep, n_max, window, pert, dt=dt,
                                         n_snapshots=n_snapshots)
        decaying = (F < 0.0) & (I_rep[i] > 1e-16) & (J[i] > 0.0)
        rate = np.where(decaying, F / np.where(I_rep[i] > 0, I_rep[i], 1.0), 0.0)
        J[i + 1] = np.where(decaying, J[i] * np.exp(d_tau * rate),
                            np.maximum(J[i] + d_tau * F, 0.0))
        err[i + 1] = err[i] + d_tau * e
        rec = kdvflow.evolve(rep, d_tau / eps, dt=dt, pert=pert, n_samples=2,
                             checkpoint_stride=1)
        if rec.aborted or not rec.checkpoints:
            aborted = True
            J = J[: i + 2]
            I_rep = I_rep[: i + 2]
            err = err[: i + 2]
            taus = taus[: i + 2]
            break
        rep = rec.checkpoints[-1][1]
        I_rep[i + 1] = birkhoff.actions(rep, n_max).I
    return AveragedCurve(taus, J, err, I_rep, aborted)


# -- quasi-invariance evidence ----------------------------------------------


def divergence_estimate(pert: kdvflow.PerturbationSpec, u: FourierField,
                        h: float = 1e-6,
                        probe_modes: np.ndarray | None = None) -> dict:
    """Phase-space divergence of the perturbation field, per unit eps.

    Central finite differences of f(u) along every retained coordinate
    direction (optionally a subset).  State-independent forcing gives
    exactly zero; the dissipative channel gives the truncation-dependent
    trace -sum 2 (2 pi k)^2 (outside the smoothing hypotheses); bounded
    smoothing channels give a truncation-stable constant.
    """
    if probe_modes is None:
        probe_modes = np.arange(1, u.n_modes + 1)
    div = 0.0
    for k in probe_modes:
        for comp in range(2):
            e = np.zeros((u.n_modes, 2))
            e[k - 1, comp] = h
            fp = apply_perturbation(pert, u.with_coeffs(u.coeffs + e))
            fm = apply_perturbation(pert, u.with_coeffs(u.coeffs - e))
            d = (fp.coeffs[k - 1, comp] - fm.coeffs[k - 1, comp]) / (2.0 * h)
            if not np.isfinite(d):
                raise DomainError(f"non-finite divergence probe at mode {k}")
            div += d
    return {"divergence": float(div), "kind": pert.kind,
            "n_modes": int(u.n_modes), "probed": int(len(probe_modes)),
            "h": h}
