"""Exception and warning types shared across the package."""


class SeriesConvergenceError(RuntimeError):
    """An infinite series did not converge within the allowed number of terms."""


class ExponentOverflowError(OverflowError):
    """An exponent argument would overflow double precision.

    Raised instead of silently returning ``inf`` whenever a moment or pmf
    formula asks for ``exp(x)`` with ``x > 700``.
    """


class PathExplosionError(RuntimeError):
    """A simulated path exceeded the event-count guard."""


class CancellationWarning(UserWarning):
    """An alternating sum lost too many digits; a stable fallback was used."""
