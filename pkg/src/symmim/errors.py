class ConfigError(ValueError):
    """Invalid configuration or geometry, detected before any work is done."""


class TrainingError(RuntimeError):
    """Training could not continue (e.g. a non-finite loss)."""
