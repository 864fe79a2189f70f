"""Multi-task speech classification toolkit: feature extraction, i-vectors,
speaker-disjoint splitting, a shared-trunk multi-head network and its
training/evaluation harness."""

from .errors import ConfigError, DataError, NumericError, SpartaError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericError", "SpartaError", "__version__"]
