"""Alert analysis pipeline for multi-IDS intrusion alert data."""

from alertpipe.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
