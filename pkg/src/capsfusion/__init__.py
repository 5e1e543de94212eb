"""Capsule-fusion text classifier with a small numpy autodiff core."""

from .config import TrainConfig
from .model import CapsFusion

__all__ = ["CapsFusion", "TrainConfig"]
__version__ = "0.1.0"
