"""Oscillometric blood pressure estimation toolkit.

End-to-end pipeline: cuff deflation waveform -> component split and
denoising -> pulse detection and cleanup -> pulse-morphology-by-pressure
grid -> convolutional-recurrent regression -> standards-based reports.
A synthetic oscillometry generator supports desk-scale verification of
every stage.
"""

__version__ = "0.1.0"

from . import (
    autodiff,
    cli,
    errors,
    evaluation,
    fileio,
    grid,
    model,
    seeds,
    signal_prep,
    synthetic,
    trainer,
)
from .errors import OscibpError

__all__ = [
    "autodiff",
    "cli",
    "errors",
    "evaluation",
    "fileio",
    "grid",
    "model",
    "seeds",
    "signal_prep",
    "synthetic",
    "trainer",
    "OscibpError",
    "__version__",
]
