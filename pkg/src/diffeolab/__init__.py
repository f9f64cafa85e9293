"""Numerical laboratory for C1 conjugacy of one-dimensional diffeomorphisms."""

from .core import (
    C1Map,
    C1Path,
    Interval,
    UNIT,
    affine_renormalize,
    c1_distance,
    compose,
    conjugate,
    eval_c1,
    fixed_points,
    invert,
)
from .builders import from_builder, identity, mobius, parabolic

__all__ = [
    "C1Map", "C1Path", "Interval", "UNIT",
    "affine_renormalize", "c1_distance", "compose", "conjugate",
    "eval_c1", "fixed_points", "invert",
    "from_builder", "identity", "mobius", "parabolic",
]

__version__ = "0.1.0"
