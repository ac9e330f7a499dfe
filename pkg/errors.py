"""Exception types shared by every sweepcv module."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERTIFICATION = 3


class SweepCVError(Exception):
    exit_code = 1


class ConfigError(SweepCVError):
    """Invalid configuration, or a request the model cannot serve."""
    exit_code = EXIT_CONFIG


class UnsupportedScheduleError(ConfigError):
    """Operation only defined for deterministic sweeps."""


class ModelCertificationError(SweepCVError):
    """A finite model failed the oracle's stationarity or ergodicity checks."""
    exit_code = EXIT_CERTIFICATION
