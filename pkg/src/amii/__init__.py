"""Dyadic facial-gesture synthesis for socially interactive agents.

Two interacting people are each described per frame by 16 speech features
and 10 facial features. The model encodes each person's 100-frame history
with per-modality attention + recurrent memory encoders, fuses the two
people with cross-attention, and regresses both next-frame face vectors.
Training uses MSE with Adam under a triangular cyclical learning rate;
inference runs the model autoregressively, feeding predictions back into
the agent-side window. A metric suite scores appropriateness (MAE, RMSE,
KS) and reciprocal-adaptation resemblance (lagged correlation, DTW,
synchrony events, entrainment loops).
"""

from .estimator import AmiiGestureGenerator, DyadPreprocessor
from .model import AmiiConfig

__version__ = "0.1.0"

__all__ = ["AmiiConfig", "AmiiGestureGenerator", "DyadPreprocessor", "__version__"]
