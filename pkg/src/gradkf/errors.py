"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """Invalid configuration, dimensions, or arguments. Maps to CLI exit code 2."""


class NumericalError(Exception):
    """Numerical failure during a run (NaN/Inf state, ill-conditioned solve).

    Maps to CLI exit code 3.
    """
