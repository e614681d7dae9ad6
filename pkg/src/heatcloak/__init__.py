"""Boundary-integral toolkit for reproducing, cloaking and mimicking
temperature fields of the 2-D transient heat equation.

Monopole and dipole source densities on closed curves generate fields that
match a prescribed solution on one side of the curve and vanish on the
other.  The package discretizes the underlying layer potentials with a
midpoint rule in time and a trapezoid rule on the curve, solves the
first-kind boundary equation for Dirichlet scatterers by causal block
forward substitution, and exposes scenario runners plus a small CLI that
renders every bundled experiment preset.
"""

from . import geometry, heat_kernel, io_cli, layer_potentials, reproduction, scattering, scenarios

__all__ = [
    "heat_kernel",
    "geometry",
    "layer_potentials",
    "reproduction",
    "scattering",
    "scenarios",
    "io_cli",
]

__version__ = "0.1.0"
