from oelab.autodiff.core import (
    DiffArray,
    ShapeError,
    Tape,
    constant,
    mac_counting,
    parameter,
)
from oelab.autodiff.gradcheck import finite_difference_check
from oelab.autodiff import ops

__all__ = [
    "DiffArray",
    "ShapeError",
    "Tape",
    "constant",
    "parameter",
    "mac_counting",
    "finite_difference_check",
    "ops",
]
