"""Closed curves, boundary meshes, evaluation grids, and region masks.

Curves are parametrized on [0, 2*pi) and positively oriented, so the
outward unit normal is the tangent rotated clockwise by a quarter turn.
Three shapes cover every experiment in the package: circles, the
standard obstacle-scattering kite, and a cosine-petal flower.  Meshes
are chord polygons with collocation at chord midpoints and exact-curve
normals there; grids are cell-centered rasters; masks classify grid
cells against a curve scaled about its centroid.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

_POLYGON_N = 1024


class ClosedCurve(ABC):
    """A simple, positively oriented closed curve with analytic frame."""

    @abstractmethod
    def point(self, theta):
        """Position at parameter ``theta``; broadcasts over arrays."""

    @abstractmethod
    def tangent(self, theta):
        """Derivative of ``point`` with respect to ``theta`` (not unit)."""

    @property
    @abstractmethod
    def spec(self) -> tuple[str, tuple[float, ...]]:
        """Canonical (name, args) pair, the config-file form of the shape."""

    def normal(self, theta):
        """Outward unit normal; rotation of the tangent for CCW curves."""
        t = np.asarray(self.tangent(theta), dtype=float)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def polygon(self, n: int = _POLYGON_N) -> np.ndarray:
        """``n`` vertices at uniform parameters, not closed."""
        theta = np.arange(n) * (2.0 * np.pi / n)
        return np.asarray(self.point(theta), dtype=float)

    def signed_area(self, n: int = _POLYGON_N) -> float:
        p = self.polygon(n)
        q = np.roll(p, -1, axis=0)
        return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))

    def centroid(self, n: int = _POLYGON_N) -> np.ndarray:
        """Area centroid of the fine polygon."""
        p = self.polygon(n)
        q = np.roll(p, -1, axis=0)
        cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
        area = 0.5 * np.sum(cross)
        cx = np.sum((p[:, 0] + q[:, 0]) * cross) / (6.0 * area)
        cy = np.sum((p[:, 1] + q[:, 1]) * cross) / (6.0 * area)
        return np.array([cx, cy])

    def diameter(self, n: int = 512) -> float:
        """Maximum pairwise vertex distance of the fine polygon."""
        p = self.polygon(n)
        d2 = np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1)
        return float(np.sqrt(d2.max()))

    def is_star_shaped(self, n: int = _POLYGON_N) -> bool:
        """Whether every ray from the centroid meets the curve once."""
        p = self.polygon(n) - self.centroid(n)
        ang = np.unwrap(np.arctan2(p[:, 1], p[:, 0]))
        # Strictly increasing polar angle with less than one full turn of
        # interior span leaves a positive closing step: single-valued radius.
        return bool(np.all(np.diff(ang) > 0.0) and ang[-1] - ang[0] < 2.0 * np.pi)


class Circle(ClosedCurve):
    def __init__(self, center, radius: float):
        if radius <= 0:
            raise ValueError("circle radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def point(self, theta):
        th = np.asarray(theta, dtype=float)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def tangent(self, theta):
        th = np.asarray(theta, dtype=float)
        return self.radius * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def diameter(self, n: int = 512) -> float:
        return 2.0 * self.radius

    @property
    def spec(self):
        return ("circle", (float(self.center[0]), float(self.center[1]), self.radius))


class Kite(ClosedCurve):
    """The standard kite obstacle, scaled and recentered.

    position(theta) = center + scale * (cos t + 0.65 cos 2t - 0.65, 1.5 sin t)
    """

    def __init__(self, center, scale: float):
        if scale <= 0:
            raise ValueError("kite scale must be positive")
        self.center = np.asarray(center, dtype=float)
        self.scale = float(scale)

    def point(self, theta):
        th = np.asarray(theta, dtype=float)
        x = np.cos(th) + 0.65 * np.cos(2.0 * th) - 0.65
        y = 1.5 * np.sin(th)
        return self.center + self.scale * np.stack([x, y], axis=-1)

    def tangent(self, theta):
        th = np.asarray(theta, dtype=float)
        tx = -np.sin(th) - 1.3 * np.sin(2.0 * th)
        ty = 1.5 * np.cos(th)
        return self.scale * np.stack([tx, ty], axis=-1)

    @property
    def spec(self):
        return ("kite", (float(self.center[0]), float(self.center[1]), self.scale))


class Flower(ClosedCurve):
    """Cosine-petal perturbation of a circle, r(t) = base + amp*cos(petals*t)."""

    def __init__(self, center, base_radius: float, petal_amplitude: float, petals: int):
        if base_radius <= 0:
            raise ValueError("flower base radius must be positive")
        if not 0 <= petal_amplitude < base_radius:
            raise ValueError("petal amplitude must lie in [0, base radius)")
        if int(petals) != petals or petals < 1:
            raise ValueError("petal count must be a positive integer")
        self.center = np.asarray(center, dtype=float)
        self.base_radius = float(base_radius)
        self.petal_amplitude = float(petal_amplitude)
        self.petals = int(petals)

    def _radius(self, th):
        return self.base_radius + self.petal_amplitude * np.cos(self.petals * th)

    def point(self, theta):
        th = np.asarray(theta, dtype=float)
        r = self._radius(th)
        return self.center + np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def tangent(self, theta):
        th = np.asarray(theta, dtype=float)
        r = self._radius(th)
        dr = -self.petal_amplitude * self.petals * np.sin(self.petals * th)
        tx = dr * np.cos(th) - r * np.sin(th)
        ty = dr * np.sin(th) + r * np.cos(th)
        return np.stack([tx, ty], axis=-1)

    @property
    def spec(self):
        return (
            "flower",
            (
                float(self.center[0]),
                float(self.center[1]),
                self.base_radius,
                self.petal_amplitude,
                float(self.petals),
            ),
        )


def make_curve(name: str, args) -> ClosedCurve:
    """Build a curve from its config-file form, ``name(arg, arg, ...)``.

    Supported: circle(cx, cy, r), kite(cx, cy, scale),
    flower(cx, cy, base_radius, petal_amplitude, petals).
    """
    vals = [float(a) for a in args]
    if name == "circle":
        if len(vals) != 3:
            raise ValueError("circle takes (cx, cy, radius)")
        return Circle(vals[:2], vals[2])
    if name == "kite":
        if len(vals) != 3:
            raise ValueError("kite takes (cx, cy, scale)")
        return Kite(vals[:2], vals[2])
    if name == "flower":
        if len(vals) != 5:
            raise ValueError("flower takes (cx, cy, base_radius, petal_amplitude, petals)")
        return Flower(vals[:2], vals[2], vals[3], int(vals[4]))
    raise ValueError(f"unknown shape {name!r}")


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Chord discretization of a curve.

    centers are chord midpoints, lengths are chord lengths, and normals
    are the exact curve normals at the midpoint parameters.
    """

    curve: ClosedCurve
    centers: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    params: np.ndarray  # node parameters, length N+1 with endpoint repeated

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def perimeter(self) -> float:
        return float(self.lengths.sum())


def discretize(curve: ClosedCurve, n: int) -> BoundaryMesh:
    """Mesh a curve with ``n`` uniform chords; ``n`` below 8 is rejected."""
    if n < 8:
        raise ValueError("at least 8 segments are required")
    theta = np.linspace(0.0, 2.0 * np.pi, n + 1)
    pts = np.asarray(curve.point(theta), dtype=float)
    a, b = pts[:-1], pts[1:]
    centers = 0.5 * (a + b)
    lengths = np.linalg.norm(b - a, axis=1)
    if np.any(lengths <= 0):
        raise ValueError("degenerate segment in discretization")
    mid = 0.5 * (theta[:-1] + theta[1:])
    normals = curve.normal(mid)
    return BoundaryMesh(curve=curve, centers=centers, normals=normals, lengths=lengths, params=theta)


@dataclass(eq=False)
class FieldGrid:
    """Cell-centered raster of one scalar field at one time.

    ``values`` has shape (ny, nx): row-major by y then x, matching the
    on-disk layout.  ``origin`` is the lower-left corner of the covered
    rectangle, so cell (ix, iy) is centered at
    ``origin + ((ix + 1/2) dx, (iy + 1/2) dy)``.
    """

    origin: tuple[float, float]
    nx: int
    ny: int
    dx: float
    dy: float
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.ny, self.nx):
            raise ValueError("values must have shape (ny, nx)")

    def xs(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx

    def ys(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy

    def points(self) -> np.ndarray:
        """All cell centers, shape (ny*nx, 2), y-major order."""
        xg, yg = np.meshgrid(self.xs(), self.ys())
        return np.stack([xg.ravel(), yg.ravel()], axis=1)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def with_values(self, values, time: float | None = None) -> "FieldGrid":
        """Copy of this grid geometry carrying new values."""
        vals = np.asarray(values, dtype=float).reshape(self.ny, self.nx)
        return FieldGrid(
            origin=self.origin,
            nx=self.nx,
            ny=self.ny,
            dx=self.dx,
            dy=self.dy,
            values=vals,
            time=self.time if time is None else float(time),
        )


def uniform_grid(bounds, nx: int, ny: int, time: float = 0.0) -> FieldGrid:
    """Zero-valued cell-centered grid covering (xmin, ymin, xmax, ymax)."""
    if nx < 2 or ny < 2:
        raise ValueError("grids need at least 2 cells per axis")
    xmin, ymin, xmax, ymax = (float(v) for v in bounds)
    if xmax <= xmin or ymax <= ymin:
        raise ValueError("empty bounding box")
    dx = (xmax - xmin) / nx
    dy = (ymax - ymin) / ny
    return FieldGrid(
        origin=(xmin, ymin),
        nx=nx,
        ny=ny,
        dx=dx,
        dy=dy,
        values=np.zeros((ny, nx)),
        time=time,
    )


def winding_number(points, polygon) -> np.ndarray:
    """Integer winding number of a closed polygon around each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(polygon, dtype=float)
    wn = np.zeros(pts.shape[0], dtype=int)
    px, py = pts[:, 0], pts[:, 1]
    for i in range(poly.shape[0]):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % poly.shape[0]]
        is_left = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
        wn += ((ay <= py) & (by > py) & (is_left > 0)).astype(int)
        wn -= ((ay > py) & (by <= py) & (is_left < 0)).astype(int)
    return wn


@dataclass(eq=False)
class RegionMask:
    """Boolean cell classification against a (possibly scaled) curve."""

    grid: FieldGrid
    inside: np.ndarray

    def __post_init__(self):
        self.inside = np.asarray(self.inside, dtype=bool)
        if self.inside.shape != (self.grid.ny, self.grid.nx):
            raise ValueError("mask shape must match grid")

    def complement(self) -> "RegionMask":
        return RegionMask(grid=self.grid, inside=~self.inside)

    @property
    def cell_count(self) -> int:
        return int(self.inside.sum())


def region_mask(grid: FieldGrid, curve: ClosedCurve, scale: float = 0.0) -> RegionMask:
    """Cells whose centers fall inside the curve scaled by (1 + scale).

    Scaling is about the curve's centroid; negative scale shrinks.  Any
    nonzero scale requires the curve to be star-shaped about its
    centroid, otherwise the scaled copy may self-intersect.
    """
    factor = 1.0 + float(scale)
    if factor <= 0:
        raise ValueError("scale must satisfy 1 + scale > 0")
    if scale != 0.0 and not curve.is_star_shaped():
        raise ValueError("nonzero scale requires a curve star-shaped about its centroid")
    poly = curve.polygon(_POLYGON_N)
    if factor != 1.0:
        c = curve.centroid()
        poly = c + factor * (poly - c)
    wn = winding_number(grid.points(), poly)
    return RegionMask(grid=grid, inside=(wn != 0).reshape(grid.ny, grid.nx))


def contains_points(curve: ClosedCurve, points, scale: float = 0.0) -> np.ndarray:
    """Point-in-curve test by winding number on the fine polygon."""
    factor = 1.0 + float(scale)
    if factor <= 0:
        raise ValueError("scale must satisfy 1 + scale > 0")
    poly = curve.polygon(_POLYGON_N)
    if factor != 1.0:
        c = curve.centroid()
        poly = c + factor * (poly - c)
    return winding_number(points, poly) != 0
