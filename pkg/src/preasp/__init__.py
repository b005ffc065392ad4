"""Automatic measurement of pre-aspiration onset and offset in speech.

Two predictors share one acoustic front end: a frame classifier
(:mod:`preasp.frame_model`) and a structured interval scorer trained with
Passive-Aggressive updates (:mod:`preasp.structured`).
"""
__version__ = "0.1.0"

from .acoustics import FEATURE_NAMES, FeatureSequence, Waveform, extract_features, read_wav  # noqa: E402
from .errors import (DataError, InferenceError, InvalidInputError, ModelFormatError,  # noqa: E402
                     PreaspError, TrainingDataError, UndefinedCorrelationError)

__all__ = [
    "FEATURE_NAMES", "FeatureSequence", "Waveform", "extract_features", "read_wav",
    "DataError", "InferenceError", "InvalidInputError", "ModelFormatError", "PreaspError",
    "TrainingDataError", "UndefinedCorrelationError", "__version__",
]
