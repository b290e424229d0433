"""Open-set domain generalization for hyperspectral image classification.

A small numpy library implementing frequency-domain feature disentanglement,
a dual spectral/spatial residual network with evidential uncertainty heads,
uncertainty decoupling for open-set rejection, threshold calibration on
synthetic unknowns, and the open-set metrics (OS, Unk, HOS) used to score it.
"""

__version__ = "0.1.0"

from . import calibration, dataio, dcrn, edl, metrics, numerics, pipeline, sifd, ssud

__all__ = [
    "numerics",
    "dataio",
    "sifd",
    "dcrn",
    "edl",
    "ssud",
    "calibration",
    "metrics",
    "pipeline",
    "__version__",
]
