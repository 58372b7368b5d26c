"""Multi-scale speaking-style modeling for expressive speech synthesis.

A numpy-based library covering the full loop on a deterministic synthetic
audiobook corpus: style extraction from mel-spectrograms with a residual
strategy, context-based style prediction, a non-autoregressive acoustic
model, three-stage distillation training and DTW-aligned objective metrics.
"""

__version__ = "0.1.0"

from . import corpus, evaluation, nn, semantic, synthetic, tensorfile  # noqa: F401
