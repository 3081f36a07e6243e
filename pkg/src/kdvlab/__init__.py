"""Numerical laboratory for zero-mean periodic KdV.

Spectral representation of zero-mean periodic potentials, Hill operator
spectra (discriminant, periodic/Dirichlet eigenvalues, gap lengths),
action variables and derived functionals, pseudospectral time integration
of KdV with deterministic and stochastic perturbations, and averaging
diagnostics (resonance sets, averaged action curves, quasi-invariance
evidence).

All heavy numerics live in :mod:`kdvlab.kernels`, which provides numba
JIT kernels with a pure-numpy fallback selected by the environment
variable ``KDVLAB_NO_NUMBA=1``.
"""

from kdvlab.grid import FourierField
from kdvlab.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["FourierField", "BACKEND", "__version__"]
