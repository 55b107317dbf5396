"""Learned temporal distillation of video clips into a few frames.

Modules: ``tensor`` (autodiff arrays), ``tsd`` (the distillation block),
``selectors`` (sampling baselines as one-hot transforms), ``nets`` (client
extractor and cloud recognizer), ``synthvid`` (synthetic clips), ``train``
(schedules and Q-clip evaluation), ``saasbench`` (client/cloud cost
accounting) and ``cli``.
"""
from .errors import ArgumentError, DimensionError, FormatError, NumericError, TsdError

__version__ = "0.1.0"

__all__ = ["ArgumentError", "DimensionError", "FormatError", "NumericError", "TsdError"]
