"""Action variables and derived functionals.

The n-th action is the gap integral

    I_n = (2/pi) int_{lam_{2n-1}}^{lam_{2n}} lam dDelta/dlam / sqrt(Delta^2 - 4) dlam

with the square-root branch fixed on the gap interior so that I_n >= 0.
With that branch the integrand is an exact derivative up to sign, and one
integration by parts turns the integral into

    I_n = (2/pi) int_gap arccosh(|Delta(lam)| / 2) dlam,

whose integrand is nonnegative and free of the huge odd-part cancellation
that makes the raw form numerically hopeless for narrow gaps.  The
substitution lam = m_n + r_n sin(theta) removes the square-root edge
behaviour exactly; equally weighted theta nodes then converge
exponentially, and |Delta|/2 - 1 is assembled from the cancellation-free
form of Delta^2 - 4.  Closed gaps carry action exactly zero.

Derived quantities: Percival residual, weighted action norms, moments
P_j, the convexity functional V = P_3(I) - H(u), bounds of the Korotyaev
type, coefficient-pair angle proxies, and empirical frequencies.

Angle orientation: under the linear flow u_t = -u_xxx a coefficient
pair (u_k, u_-k) rotates clockwise, so frequencies are reported as
clockwise rates; this makes W_1(0) = +(2 pi)^3 and dW_1/dI_1 = -6 come
out with the conventional signs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from kdvlab import hill
from kdvlab.errors import AngleUndefined, DomainError, QuadratureError
from kdvlab.grid import FourierField, sobolev_norm

TWO_PI = 2.0 * np.pi

ANGLE_FLOOR = 1e-12


@dataclass(frozen=True)
class ActionSpectrum:
    """Nonnegative actions I_1..I_n with a truncation-tail estimate.

    ``tail`` estimates the neglected Percival weight sum
    2 sum_{j>n_max} (2 pi j) I_j from the potential's mode energies above
    the cutoff (exact at first order in the amplitude).
    """

    I: np.ndarray
    gaps: np.ndarray
    tail: float
    n_max: int

    def __post_init__(self):
        I = np.asarray(self.I, dtype=np.float64)
        if I.shape != (self.n_max,):
            raise ValueError("I must have length n_max")
        if np.any(I < 0.0):
            raise ValueError("actions must be nonnegative")

    def weighted_norm(self, p: float) -> float:
        """|I|~_p = 2 sum (2 pi j)^{2p+1} I_j on the computed range."""
        j = np.arange(1, self.n_max + 1)
        return float(2.0 * np.sum((TWO_PI * j) ** (2.0 * p + 1.0) * self.I))

    def to_json(self) -> str:
        return json.dumps({"I": [repr(float(x)) for x in self.I],
                           "tail": repr(float(self.tail)),
                           "n_max": self.n_max})

    @classmethod
    def from_json(cls, text: str) -> "ActionSpectrum":
        doc = json.loads(text)
        I = np.array([float(x) for x in doc["I"]])
        return cls(I, np.zeros_like(I), float(doc["tail"]), int(doc["n_max"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["n", "I_n", "gap_n"])
        for n in range(self.n_max):
            w.writerow([n + 1, repr(float(self.I[n])), repr(float(self.gaps[n]))])
        return buf.getvalue()


@dataclass(frozen=True)
class MomentSet:
    """Weighted action sums P_j = sum_i (2 pi i)^j I_i."""

    values: dict

    def __getitem__(self, j):
        return self.values[j]


@dataclass(frozen=True)
class ModeVector:
    """Birkhoff-coordinate pair vector with the h^p weight convention."""

    pairs: np.ndarray  # (K, 2)
    p: float

    def norm(self) -> float:
        j = np.arange(1, self.pairs.shape[0] + 1)
        w = (TWO_PI * j) ** (2.0 * self.p + 1.0)
        return float(np.sqrt(np.sum(w * np.sum(self.pairs**2, axis=1))))


def linearized_mode_vector(u: FourierField, p: float) -> ModeVector:
    """Image of u under the linearization at zero: v_s = |2 pi s|^{-1/2} u_s."""
    j = np.arange(1, u.n_modes + 1)
    return ModeVector(u.coeffs / np.sqrt(TWO_PI * j)[:, None], p)


# -- the action integral ------------------------------------------------


def _gap_action(ctx: hill._HillContext, n: int, lo: float, hi: float,
                rel_tol: float = 1e-8, m_start: int = 24,
                m_cap: int = 1536) -> float:
    mid = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo)
    if r <= 0.0:
        return 0.0
    # transfer-accuracy noise floor of the gap integral (see _HillContext)
    atol = 1e-10 * r * math.sqrt(1.0 + abs(mid))
    prev = None
    m = m_start
    while m <= m_cap:
        theta = -0.5 * np.pi + (np.arange(m) + 0.5) * (np.pi / m)
        lams = mid + r * np.sin(theta)
        out = ctx.eval(lams, False)
        disc_sq = (out[:, 0] - out[:, 3]) ** 2 + 4.0 * out[:, 1] * out[:, 2]
        half_abs_disc = 0.5 * np.abs(out[:, 0] + out[:, 3])
        # arccosh(|Delta|/2) = log(|Delta|/2 + sqrt(Delta^2 - 4)/2)
        arg = half_abs_disc + 0.5 * np.sqrt(np.maximum(disc_sq, 0.0))
        c = np.log(np.maximum(arg, 1.0))
        val = 2.0 * r / m * float(np.sum(c * np.cos(theta)))
        if prev is not None and abs(val - prev) <= max(rel_tol * abs(val), atol):
            return val
        prev = val
        m *= 2
    raise QuadratureError(
        f"action quadrature for gap {n} did not stabilize below {m_cap} nodes"
    )


def action(u: FourierField, n: int, spectrum: hill.HillSpectrum | None = None,
           ctx: hill._HillContext | None = None, rel_tol: float = 1e-8) -> float:
    """Single action variable; zero exactly when the gap is closed.

    Tiny negative quadrature noise is clamped to zero.
    """
    if spectrum is None:
        spectrum = hill.compute_spectrum(u, n)
    if not 1 <= n <= spectrum.n_max:
        raise ValueError(f"gap index {n} outside 1..{spectrum.n_max}")
    if spectrum.gaps[n - 1] == 0.0:
        return 0.0
    if ctx is None:
        lam_max = float(spectrum.lam[-1]) + 5.0
        ctx = hill._HillContext(u, lam_max=lam_max)
    val = _gap_action(ctx, n, float(spectrum.lam[2 * n - 1]),
                      float(spectrum.lam[2 * n]), rel_tol)
    return max(val, 0.0)


def actions(u: FourierField, n_max: int,
            spectrum: hill.HillSpectrum | None = None,
            rel_tol: float = 1e-8) -> ActionSpectrum:
    """Batch of actions for n = 1..n_max with a tail estimate."""
    if spectrum is None or spectrum.n_max < n_max:
        spectrum = hill.compute_spectrum(u, n_max)
    lam_max = float(spectrum.lam[2 * n_max]) + 5.0
    ctx = hill._HillContext(u, lam_max=lam_max)
    I = np.zeros(n_max)
    for n in range(1, n_max + 1):
        if spectrum.gaps[n - 1] > 0.0:
            I[n - 1] = max(_gap_action(ctx, n, float(spectrum.lam[2 * n - 1]),
                                       float(spectrum.lam[2 * n]), rel_tol), 0.0)
    energies = u.mode_energies()
    tail = float(np.sum(energies[n_max:])) if n_max < u.n_modes else 0.0
    return ActionSpectrum(I, spectrum.gaps[:n_max].copy(), tail, n_max)


def percival_residual(u: FourierField, n_max: int,
                      acts: ActionSpectrum | None = None) -> float:
    """Relative defect of 2 sum (2 pi j) I_j = ||u||_0^2 (0 for u = 0)."""
    norm_sq = sobolev_norm(u, 0.0) ** 2
    if norm_sq == 0.0:
        return 0.0
    if acts is None:
        acts = actions(u, n_max)
    return abs(acts.weighted_norm(0.0) - norm_sq) / norm_sq


# -- angles and coordinates ----------------------------------------------


def angle_proxy(u: FourierField, n: int, floor: float = ANGLE_FLOOR) -> float:
    """Argument of the coefficient pair (u_n, u_-n) in [0, 2 pi).

    Exact as the Birkhoff angle only to first order in the amplitude;
    intended for equidistribution statistics.  Raises AngleUndefined when
    both coefficients sit below the noise floor.
    """
    a, b = u.coeffs[n - 1]
    if math.hypot(a, b) < floor:
        raise AngleUndefined(f"mode {n} pair below noise floor {floor}")
    return float(np.arctan2(b, a) % (2.0 * np.pi))


def f_coordinate(u: FourierField, n: int,
                 spectrum: hill.HillSpectrum | None = None) -> float:
    """Logarithmic conjugate coordinate 2 log((-1)^n y2'(1, mu_n)).

    Exposed for exploratory experiments; raises DomainError when the
    argument of the logarithm is not positive.
    """
    if spectrum is None:
        spectrum = hill.compute_spectrum(u, n)
    t = hill.transfer(u, float(spectrum.mu[n - 1]))
    arg = (-1.0) ** n * t.y2p_1
    if arg <= 0.0:
        raise DomainError(f"f_{n} undefined: (-1)^n y2'(1, mu_n) = {arg!r} <= 0")
    return 2.0 * math.log(arg)


# -- moments, the convexity functional, norm bounds -----------------------


def moments(acts: ActionSpectrum, j: float) -> float:
    """P_j = sum_i (2 pi i)^j I_i over the computed range."""
    i = np.arange(1, acts.n_max + 1)
    return float(np.sum((TWO_PI * i) ** float(j) * acts.I))


def moment_set(acts: ActionSpectrum, js=(-1, 1, 2, 3)) -> MomentSet:
    return MomentSet({j: moments(acts, j) for j in js})


def v_functional(u: FourierField, n_max: int,
                 acts: ActionSpectrum | None = None) -> float:
    """Convexity defect V = P_3(I(u)) - H(u); nonnegative up to tails."""
    from kdvlab.kdvflow import hamiltonian

    if acts is None:
        acts = actions(u, n_max)
    return moments(acts, 3) - hamiltonian(u)


def v_report(u: FourierField, n_max: int) -> dict:
    """V with the moment bounds it must satisfy.

    upper_simple:   V <= 8 P_1 P_{-1}
    lower_weighted: pi/10 ||I||_2^2 / (1 + 2 sqrt(P_{-1})) <= V
    upper_weighted: V <= (8^3 (1+sqrt(P_{-1}))^{1/2} P_{-1}^2
                          + 6 pi e^{sqrt(P_{-1})/2} ||I||_2) ||I||_2
    """
    from kdvlab.kdvflow import hamiltonian

    acts = actions(u, n_max)
    P = moment_set(acts, (-1, 1, 2, 3))
    V = P[3] - hamiltonian(u)
    l2 = float(np.sqrt(np.sum(acts.I**2)))
    sq = math.sqrt(P[-1])
    return {
        "V": V,
        "P": P.values,
        "I_l2": l2,
        "tail": acts.tail,
        "upper_simple": 8.0 * P[1] * P[-1],
        "lower_weighted": (np.pi / 10.0) * l2**2 / (1.0 + 2.0 * sq),
        "upper_weighted": (8.0**3 * math.sqrt(1.0 + sq) * P[-1] ** 2
                           + 6.0 * np.pi * math.exp(sq / 2.0) * l2) * l2,
    }


def korotyaev_check(u: FourierField, m: int, n_max: int,
                    acts: ActionSpectrum | None = None) -> dict:
    """Constant required for |v|_m <= C ||u||_m (1 + ||u||_m)^{2(m+2)/3}.

    A family passes when one finite constant covers every member.
    """
    if m not in (1, 2, 3):
        raise ValueError("m must be in {1, 2, 3}")
    if acts is None:
        acts = actions(u, n_max)
    v_norm = math.sqrt(acts.weighted_norm(float(m)))
    u_norm = sobolev_norm(u, float(m))
    if u_norm == 0.0:
        return {"m": m, "v_norm": 0.0, "u_norm": 0.0, "required_c": 0.0}
    bound = u_norm * (1.0 + u_norm) ** (2.0 * (m + 2) / 3.0)
    return {"m": m, "v_norm": v_norm, "u_norm": u_norm,
            "required_c": v_norm / bound}


# -- frequencies ----------------------------------------------------------


def frequency_estimate(u0: FourierField, n: int, T_obs: float,
                       dt: float | None = None,
                       n_samples: int = 2000) -> dict:
    """Empirical KdV frequency of mode n from the angle-proxy drift.

    Evolves the unperturbed flow, unwraps the proxy angle and fits a line;
    the frequency is the clockwise rate (see module docstring), valid to
    first order in the amplitude.  Returns the estimate plus fit residual.
    """
    from kdvlab import kdvflow

    rec = kdvflow.evolve(u0, T_obs, dt=dt, sample_every=None,
                         n_samples=n_samples, angle_modes=(n,))
    ang = rec.angles[:, 0]
    if np.any(~np.isfinite(ang)):
        raise AngleUndefined(f"angle proxy of mode {n} undefined along the flow")
    unwrapped = np.unwrap(ang)
    t = rec.times
    coef = np.polyfit(t, unwrapped, 1)
    fit = np.polyval(coef, t)
    res = float(np.sqrt(np.mean((unwrapped - fit) ** 2)))
    return {"mode": n, "frequency": -float(coef[0]), "fit_rms": res,
            "samples": len(t)}


# -- quasi-linearity ------------------------------------------------------


def quasilinearity_probe(u: FourierField, m: int, n_max: int,
                         j_range: tuple[int, int] = (2, 10),
                         floor: float = 1e-24) -> dict:
    """Tail comparison of action weights against the linearized weights.

    Compares a_j = 2 (2 pi j) I_j with l_j = u_j^2 + u_-j^2 over the
    resolved range and fits log-log decay exponents; the nonlinear
    difference should decay at least one power of j faster than the
    linear tail.  Status is "inconclusive" when fewer than three modes
    resolve above the floor.
    """
    acts = actions(u, n_max)
    j = np.arange(1, n_max + 1)
    a = 2.0 * (TWO_PI * j) * acts.I
    ell = np.zeros(n_max)
    avail = min(n_max, u.n_modes)
    ell[:avail] = u.mode_energies()[:avail]
    d = np.abs(a - ell)

    lo, hi = j_range
    sel = (j >= lo) & (j <= min(hi, n_max))

    def fit_slope(vals):
        mask = sel & (vals > floor)
        if np.count_nonzero(mask) < 2:
            return None
        return float(np.polyfit(np.log(j[mask]), np.log(vals[mask]), 1)[0])

    slope_d = fit_slope(d)
    slope_l = fit_slope(ell)
    if slope_d is None:
        status = "inconclusive"
    elif slope_l is None:
        # linear tail below floor: the difference alone must decay
        status = "pass" if slope_d <= -1.0 else "fail"
    else:
        status = "pass" if slope_d <= slope_l - 1.0 else "fail"
    return {"status": status, "slope_difference": slope_d,
            "slope_linear": slope_l, "difference": d, "linear": ell,
            "weights": a, "m": m}
