"""Monotonic boundary alignment between token sequences and frame sequences.

The package trains a small attention aligner whose token/frame alignment is
the exact marginal of a duration-bounded boundary model, then reads hard
per-token durations off it.
"""

from .align import AlignConfig, attend, boundary_forward, alignment_posterior, posteriors
from .corpus import SynthSpec, Utterance, generate, load, save
from .encoders import EncoderConfig
from .inference import extract_corpus_durations
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AlignConfig", "EncoderConfig", "SynthSpec", "TrainConfig", "Utterance",
    "alignment_posterior", "attend", "boundary_forward", "extract_corpus_durations",
    "generate", "load", "posteriors", "save", "train",
]
