"""Zero-mean real periodic functions in the orthonormal sine/cosine basis.

A field is stored by its coefficients against the basis

    e_k  = sqrt(2) cos(2 pi k x),   k = 1..K   (cosine slot)
    e_-k = sqrt(2) sin(2 pi k x),   k = 1..K   (sine slot)

on the unit circle.  There is no k = 0 slot: represented functions have
zero mean by construction, and any operation that would produce a mean
projects it out.  Sobolev norms, spectral differentiation and dealiased
pointwise products are exact on the retained modes.

All operations are pure; ``FourierField`` instances are immutable and
safe to share between threads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from kdvlab.errors import ResolutionError

TWO_PI = 2.0 * np.pi

# |mean| above this (relative to the field scale) triggers a warning in analyze()
MEAN_WARN_TOL = 1e-12


def _check_grid(n_modes: int, grid_size: int) -> None:
    if n_modes < 1:
        raise ValueError("need at least one mode")
    if grid_size % 2 != 0:
        raise ValueError(f"grid size must be even, got {grid_size}")
    if grid_size < 3 * n_modes:
        raise ResolutionError(
            f"grid size {grid_size} < 3*K = {3 * n_modes}: too small to dealias "
            f"cubic products at cutoff K = {n_modes}"
        )


@dataclass(frozen=True)
class FourierField:
    """Real zero-mean 1-periodic function held as coefficient pairs.

    ``coeffs`` has shape (K, 2); row k-1 holds (u_k, u_-k), the cosine and
    sine coefficients of wavenumber k.  ``grid_size`` is the collocation
    grid used for pointwise products (N >= 3K, even).
    """

    coeffs: np.ndarray
    grid_size: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValueError(f"coeffs must have shape (K, 2), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        _check_grid(c.shape[0], self.grid_size)
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    # -- basic structure ------------------------------------------------

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, n_modes: int, grid_size: int) -> "FourierField":
        return cls(np.zeros((n_modes, 2)), grid_size)

    @classmethod
    def from_modes(cls, entries, n_modes: int, grid_size: int) -> "FourierField":
        """Build a field from {k: (cos_coeff, sin_coeff)} entries."""
        c = np.zeros((n_modes, 2))
        for k, pair in dict(entries).items():
            if not 1 <= k <= n_modes:
                raise ValueError(f"mode {k} outside 1..{n_modes}")
            c[k - 1] = pair
        return cls(c, grid_size)

    def with_coeffs(self, coeffs: np.ndarray) -> "FourierField":
        return FourierField(coeffs, self.grid_size)

    # -- algebra (pure, truncation-preserving) ---------------------------

    def __add__(self, other: "FourierField") -> "FourierField":
        self._check_same(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "FourierField") -> "FourierField":
        self._check_same(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "FourierField":
        return self.with_coeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def _check_same(self, other: "FourierField") -> None:
        if self.n_modes != other.n_modes or self.grid_size != other.grid_size:
            raise ResolutionError(
                f"mismatched truncation: ({self.n_modes},{self.grid_size}) vs "
                f"({other.n_modes},{other.grid_size})"
            )

    # -- analysis --------------------------------------------------------

    def values(self) -> np.ndarray:
        """Point values on the uniform grid x_i = i/N."""
        return synthesize(self.coeffs, self.grid_size)

    def values_at(self, x: np.ndarray) -> np.ndarray:
        """Direct evaluation at arbitrary points (slow path, exact)."""
        return synthesize_at(self.coeffs, x)

    def sobolev_norm(self, p: float) -> float:
        return sobolev_norm(self, p)

    def derivative(self, order: int = 1) -> "FourierField":
        return derivative(self, order)

    def mode_energies(self) -> np.ndarray:
        """Per-mode energies u_k^2 + u_-k^2, shape (K,)."""
        return np.sum(self.coeffs**2, axis=1)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values()))) if self.n_modes else 0.0

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        """JSON with [k, u_k, u_-k] triples; round-trips bit-exactly."""
        triples = [
            [k + 1, repr(float(self.coeffs[k, 0])), repr(float(self.coeffs[k, 1]))]
            for k in range(self.n_modes)
        ]
        return json.dumps(
            {"n_modes": self.n_modes, "grid_size": self.grid_size, "coeffs": triples}
        )

    @classmethod
    def from_json(cls, text: str) -> "FourierField":
        doc = json.loads(text)
        c = np.zeros((doc["n_modes"], 2))
        for k, a, b in doc["coeffs"]:
            c[int(k) - 1] = (float(a), float(b))
        return cls(c, int(doc["grid_size"]))


def single_mode(k: int, n_modes: int, grid_size: int, cos_amp: float = 0.0,
                sin_amp: float = 0.0) -> FourierField:
    """Field cos_amp*e_k + sin_amp*e_{-k}."""
    return FourierField.from_modes({k: (cos_amp, sin_amp)}, n_modes, grid_size)


# -- transforms -----------------------------------------------------------


def synthesize(coeffs: np.ndarray, grid_size: int) -> np.ndarray:
    """Coefficient pairs -> point values u(x_i), x_i = i/N.

    Linear in the coefficients; the result has zero mean to round-off.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n_modes = coeffs.shape[0]
    _check_grid(n_modes, grid_size)
    spec = np.zeros(grid_size // 2 + 1, dtype=np.complex128)
    # u_k e_k + u_-k e_-k  ==  c_k e^{2 pi i k x} + conj,  c_k = (u_k - i u_-k)/sqrt(2)
    spec[1 : n_modes + 1] = (coeffs[:, 0] - 1j * coeffs[:, 1]) * (grid_size / np.sqrt(2.0))
    return np.fft.irfft(spec, n=grid_size)


def synthesize_at(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric sum directly at arbitrary points."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    k = np.arange(1, coeffs.shape[0] + 1)
    phase = TWO_PI * np.outer(x, k)
    return np.sqrt(2.0) * (np.cos(phase) @ coeffs[:, 0] + np.sin(phase) @ coeffs[:, 1])


def analyze(values: np.ndarray, n_modes: int | None = None) -> FourierField:
    """Point values on a uniform grid -> coefficient pairs.

    The mean is discarded; a warning is emitted when it exceeds tolerance
    relative to the sample scale.  NaN/Inf samples are rejected.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size % 2 != 0:
        raise ValueError("need a 1-d sample array of even length")
    if not np.all(np.isfinite(values)):
        raise ValueError("samples contain NaN/Inf")
    grid_size = values.size
    if n_modes is None:
        n_modes = grid_size // 3
    _check_grid(n_modes, grid_size)
    spec = np.fft.rfft(values)
    mean = spec[0].real / grid_size
    scale = max(1.0, float(np.max(np.abs(values))))
    if abs(mean) > MEAN_WARN_TOL * scale:
        warnings.warn(
            f"analyze: discarding mean {mean:.3e}", stacklevel=2
        )
    c = spec[1 : n_modes + 1] * (np.sqrt(2.0) / grid_size)
    return FourierField(np.stack([c.real, -c.imag], axis=1), grid_size)


def sobolev_norm(u: FourierField, p: float) -> float:
    """H^p norm: (sum (2 pi k)^{2p} (u_k^2 + u_-k^2))^{1/2} for p >= 0."""
    if p < 0:
        raise ValueError("negative Sobolev index not supported")
    k = np.arange(1, u.n_modes + 1)
    return float(np.sqrt(np.sum((TWO_PI * k) ** (2.0 * p) * u.mode_energies())))


def derivative(u: FourierField, order: int = 1) -> FourierField:
    """Exact spectral d/dx applied ``order`` times.

    One application maps (u_k, u_-k) -> (2 pi k u_-k, -2 pi k u_k); the
    result stays mean-free.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    c = u.coeffs.copy()
    k = np.arange(1, u.n_modes + 1)
    for _ in range(order):
        c = np.stack([TWO_PI * k * c[:, 1], -TWO_PI * k * c[:, 0]], axis=1)
    return u.with_coeffs(c)


def product_with_mean(f: FourierField, g: FourierField) -> tuple[FourierField, float]:
    """Dealiased pointwise product and the discarded mean int(f g) dx."""
    f._check_same(g)
    w = f.values() * g.values()
    spec = np.fft.rfft(w)
    mean = spec[0].real / f.grid_size
    c = spec[1 : f.n_modes + 1] * (np.sqrt(2.0) / f.grid_size)
    out = FourierField(np.stack([c.real, -c.imag], axis=1), f.grid_size)
    return out, float(mean)


def product_dealiased(f: FourierField, g: FourierField) -> FourierField:
    """Pointwise product on the shared N-grid, modes above K zeroed.

    Exact for band-limited inputs whose product stays N-representable;
    the product's mean is projected out (see ``product_with_mean``).
    """
    out, _ = product_with_mean(f, g)
    return out


def inner(f: FourierField, g: FourierField) -> float:
    """L^2 inner product from coefficients (Parseval)."""
    f._check_same(g)
    return float(np.sum(f.coeffs * g.coeffs))


def grid_quadrature(values: np.ndarray) -> float:
    """int_0^1 f dx approximated by the uniform-grid mean."""
    return float(np.mean(values))
