"""aadtk: decoding which of two concurrent speech streams a listener attends,
from EEG alone, when both ears receive the identical mixture.

The package bundles the full workflow: signal preprocessing (bandpass,
re-referencing, resampling, PCA), a dual-encoder classifier that scores
EEG against candidate speech streams in a shared latent space, training
with subject-wise cross-validation, a match-mismatch control task, and
gradient-based channel attribution. A synthetic dataset generator with
known ground-truth coupling makes the whole pipeline testable end to end.
"""

__version__ = "0.1.0"
