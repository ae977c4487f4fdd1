"""Weakly supervised temporal action segmentation via mutual consistency.

The package trains a two-branch model from transcripts alone: a framewise
classifier and a segment generator constrained to agree with each other
through differentiable segment masks. Decoding fuses the two branches
with a Poisson-prior dynamic program over segment lengths.
"""

from ._backend import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
