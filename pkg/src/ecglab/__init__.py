"""ecglab: lightweight multi-task ECG classification and diffusion augmentation.

Numpy-based training stack with a small compiled kernel core (see
``ecglab.kernels``), models for single- and multi-dataset heartbeat
classification, a GRU-embedded diffusion generator for minority-class
augmentation, and the evaluation metrics that go with them.
"""

from .errors import ConfigError, DataError, NumericError, ShapeError, StateError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ShapeError",
    "StateError",
    "__version__",
]
