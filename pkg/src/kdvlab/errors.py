"""Exception types shared across the package."""


class KdvLabError(Exception):
    """Base class for package-specific failures."""


class ResolutionError(KdvLabError):
    """A truncation/grid requirement is violated or a tail is unresolved."""


class SpectrumError(KdvLabError):
    """Root finding for a Hill spectrum failed (missed root, bad bracket,
    interlacing violation)."""


class QuadratureError(KdvLabError):
    """An adaptive quadrature did not converge to the requested tolerance."""


class IntegrationError(KdvLabError):
    """ODE/PDE time integration failed (step underflow, blow-up)."""


class AngleUndefined(KdvLabError):
    """Both coefficients of a mode pair are below the noise floor."""


class DomainError(KdvLabError):
    """An operation was evaluated outside its real domain."""


class ConfigError(KdvLabError):
    """Experiment configuration failed validation.

    Carries a machine-readable list of violations in ``errors``.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))
