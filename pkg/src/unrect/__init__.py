"""Exact staged construction of strip-based Lipschitz functions with lemma checks.

Modules
-------
geometry      planar primitives (unit vectors, lines, strips, cones)
arrangement   line arrangements and piecewise-affine functions
construction  strip schedules, stage functions and partial sums
detectors     chord-slope meters and non-differentiability witnesses
curves        C^1 curves, preimages and curve filtrations
martingale    conditional expectations and martingale checks
cli           command line entry point
"""
from .construction import StripSchedule, generate_schedule, validate_schedule

__all__ = ["StripSchedule", "generate_schedule", "validate_schedule"]
__version__ = "0.1.0"
