"""Exception types used across the package.

Input-side problems (bad files, bad config, bad shapes) subclass ValueError;
runtime problems (numeric blow-ups, misuse of stateful objects) subclass
RuntimeError. The CLI maps these onto exit codes.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, manifests, arrays)."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class ShapeError(ValueError):
    """Array shape does not match what an operation requires."""


class NumericError(RuntimeError):
    """Non-finite value appeared where computation cannot continue."""


class StateError(RuntimeError):
    """Object used in a way its current state does not allow."""
