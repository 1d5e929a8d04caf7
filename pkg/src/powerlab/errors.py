"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameter or configuration value."""


class SolverError(RuntimeError):
    """Numerical solver failed to converge; message carries the residual."""


class TrainingError(RuntimeError):
    """Non-finite values encountered during training."""


class BufferNotReady(RuntimeError):
    """Replay buffer holds fewer transitions than the requested batch."""


class MetricUndefined(ValueError):
    """Metric has no defined value for the given input (e.g. all-zero rates)."""
