"""Scattering by a perfectly absorbing (zero-Dirichlet) inclusion.

The total field must vanish on the inclusion boundary, so the scattered
field is represented as double-layer of minus the incident trace plus
an unknown single-layer density.  Enforcing the boundary condition
through the jump relations yields a first-kind space-time boundary
equation solved by causal block marching.  The representation is valid
outside the closed inclusion only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoundaryMesh, contains_points
from .layer_potentials import (
    BlockConvOperator,
    TimeGrid,
    apply_operator,
    assemble_operator,
    eval_double_layer,
    eval_layer_at,
    eval_layer_history,
    eval_single_layer,
    forward_block_solve,
    solve_residual,
)
from .reproduction import PointSource, TracePair


@dataclass(frozen=True, eq=False)
class DirichletInclusion:
    """A passive object held at boundary value zero."""

    mesh: BoundaryMesh

    @property
    def curve(self):
        return self.mesh.curve


def boundary_operators(mesh: BoundaryMesh, tg: TimeGrid, k: float) -> tuple[BlockConvOperator, BlockConvOperator]:
    """Assemble the single- and double-layer boundary operators once."""
    return (
        assemble_operator("single", mesh, tg, k),
        assemble_operator("double", mesh, tg, k),
    )


@dataclass(frozen=True, eq=False)
class DirichletSolution:
    """Monopole density solving the zero-Dirichlet boundary equation."""

    density: np.ndarray
    residual: float
    condition: float


def solve_dirichlet_density(
    inclusion: DirichletInclusion,
    incident: TracePair | np.ndarray,
    tg: TimeGrid,
    k: float,
    operators: tuple[BlockConvOperator, BlockConvOperator] | None = None,
) -> DirichletSolution:
    """Solve for the single-layer density of the scattered field.

    ``incident`` is the Dirichlet trace on the inclusion mesh at the
    midpoint times, either bare or as a TracePair.  The right-hand side
    combines half the trace with the double-layer operator applied to
    minus the trace; both sides live on the midpoint time ladder.  The
    solve is linear in the incident field: zero trace returns exactly
    zero density.
    """
    mesh = inclusion.mesh
    if isinstance(incident, TracePair):
        incident = incident.dirichlet
    ui = np.asarray(incident, dtype=float)
    if ui.shape != (tg.steps, mesh.size):
        raise ValueError("incident trace shape does not match mesh and time grid")
    if operators is None:
        operators = boundary_operators(mesh, tg, k)
    vop, kop = operators
    if vop.kind != "single" or kop.kind != "double":
        raise ValueError("operators must be (single, double)")
    rhs = 0.5 * ui + apply_operator(kop, -ui)
    if not np.any(rhs):
        density = np.zeros_like(rhs)
        return DirichletSolution(density, 0.0, vop.first_block_condition)
    density = forward_block_solve(vop, rhs)
    return DirichletSolution(
        density,
        solve_residual(vop, density, rhs),
        vop.first_block_condition,
    )


def _check_targets_outside(inclusion: DirichletInclusion, targets) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(targets, dtype=float))
    if np.any(contains_points(inclusion.curve, pts)):
        raise ValueError("scattered field is defined outside the inclusion only")
    return pts


def scattered_field(
    inclusion: DirichletInclusion,
    incident_trace,
    density,
    targets,
    tg: TimeGrid,
    j: int,
    k: float,
    *,
    workers: int = 1,
) -> np.ndarray:
    """Scattered field at exterior targets at time j*dt.

    ``incident_trace`` is the incident Dirichlet trace on the inclusion
    mesh (the same array the solve consumed); ``density`` the solved
    monopole density.  The field starts from zero at t=0 and is linear
    in the incident data.
    """
    pts = _check_targets_outside(inclusion, targets)
    mesh = inclusion.mesh
    dl = eval_double_layer(mesh, -np.asarray(incident_trace, dtype=float), pts, tg, j, k, workers=workers)
    sl = eval_single_layer(mesh, density, pts, tg, j, k, workers=workers)
    return dl - sl


def scattered_history(
    inclusion: DirichletInclusion,
    incident_trace,
    density,
    targets,
    tg: TimeGrid,
    k: float,
    *,
    times: str = "eval",
    gradient: bool = False,
    workers: int = 1,
) -> np.ndarray:
    """Scattered field (or its gradient) at every time level, shape (M, n)."""
    pts = _check_targets_outside(inclusion, targets)
    mesh = inclusion.mesh
    dl = eval_layer_history(
        "double", mesh, -np.asarray(incident_trace, dtype=float), pts, tg, k,
        times=times, gradient=gradient, workers=workers,
    )
    sl = eval_layer_history(
        "single", mesh, density, pts, tg, k,
        times=times, gradient=gradient, workers=workers,
    )
    return dl - sl


def scattered_at(
    inclusion: DirichletInclusion,
    incident_trace,
    density,
    targets,
    tg: TimeGrid,
    k: float,
    t: float,
    *,
    gradient: bool = False,
) -> np.ndarray:
    """Scattered field at an arbitrary continuous time (see eval_layer_at)."""
    pts = _check_targets_outside(inclusion, targets)
    mesh = inclusion.mesh
    dl = eval_layer_at("double", mesh, -np.asarray(incident_trace, dtype=float), pts, tg, k, t, gradient=gradient)
    sl = eval_layer_at("single", mesh, density, pts, tg, k, t, gradient=gradient)
    return dl - sl


def offnode_boundary_residual(
    inclusion: DirichletInclusion,
    source: PointSource,
    density,
    tg: TimeGrid,
    k: float,
    *,
    offset_factor: float = 1e-3,
    workers: int = 1,
) -> float:
    """Worst relative violation of the zero boundary condition off the nodes.

    Probes the solution between collocation points: the scattered
    field's exterior boundary limit is evaluated at the mesh's node
    parameters (points the solve never saw) via the one-sided jump
    completion, and compared with the incident field just outside the
    wall, at an outward offset of ``offset_factor`` times the curve
    diameter.  Normalized by the largest incident trace value over the
    window.  Shrinks roughly like 1/N under mesh refinement.
    """
    mesh = inclusion.mesh
    curve = inclusion.curve
    node_params = mesh.params[:-1]
    fresh = np.asarray(curve.point(node_params), dtype=float)
    normals = np.asarray(curve.normal(node_params), dtype=float)
    offset_pts = fresh + offset_factor * curve.diameter() * normals

    mid = tg.midpoint_times()[:, None]
    ui_mid = source.field_at(mesh.centers[None, :, :], mid, k)

    # Exterior boundary limit at the fresh on-curve points: principal-value
    # sums plus half the local dipole density (-u_i there).
    dl = eval_layer_history("double", mesh, -ui_mid, fresh, tg, k, workers=workers)
    sl = eval_layer_history("single", mesh, density, fresh, tg, k, workers=workers)
    ev = tg.eval_times()[:, None]
    us_limit = dl - sl - 0.5 * source.field_at(fresh[None, :, :], ev, k)

    ui_off = source.field_at(offset_pts[None, :, :], ev, k)
    scale = float(np.max(np.abs(ui_mid)))
    if scale == 0.0:
        return float(np.max(np.abs(us_limit)))
    return float(np.max(np.abs(ui_off + us_limit))) / scale
