"""crossflow: cross-modal station-level demand forecasting toolkit."""

from .netcore import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
