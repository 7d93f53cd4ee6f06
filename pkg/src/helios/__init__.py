"""Transformer time-series prediction of PV maximum-power-point voltage,
trained and evaluated on synthetic single-diode ground truth."""

__version__ = "0.1.0"

from . import _threads  # noqa: F401  (pins BLAS threading; import first)
from .rng import RngStream
from .tensor import Tape, Tensor, backward, grad_check, recording

__all__ = ["RngStream", "Tensor", "Tape", "backward", "grad_check", "recording", "__version__"]
