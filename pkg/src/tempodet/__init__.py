"""Multi-task 3D ConvNet temporal action detection on CPU."""
from .estimator import TemporalActionDetector

__version__ = "0.1.0"
__all__ = ["TemporalActionDetector"]
