"""Discrete heat-layer potentials and the causal block-triangular solve.

Densities are (M, N) arrays: row m holds the density at midpoint time
(m + 1/2) dt on the N mesh segments, while fields are evaluated at whole
steps j*dt.  Every kernel lag is therefore at least dt/2 and the t=0
singularity never enters any sum.

All discrete sums carry the full quadrature weight k*dt*length: dt from
the midpoint rule in time, the segment length from the trapezoid rule in
space, and the diffusivity from the boundary representation the
potentials discretize.  With that convention the same operator blocks
serve both field evaluation and the boundary equation, and the first
block's diagonal is length/(2*pi).

Two evaluation paths exist: a direct lag-by-lag sum (the reference,
bit-reproducible and exactly causal) and an FFT time convolution used
when a whole time history is needed.  They agree to roundoff and the
tests pin that.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.linalg import lu_factor, lu_solve

from .geometry import BoundaryMesh

CONDITION_LIMIT = 1e12
SOLVE_RESIDUAL_LIMIT = 1e-10

_KINDS = ("single", "double")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time discretization: M density rows at midpoint times.

    Density samples live at (m + 1/2)*dt for m = 0..M-1; fields are
    evaluated at whole steps j*dt for j = 1..M.  The two ladders
    interleave with offset dt/2 exactly.
    """

    dt: float
    steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("need at least one time step")

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    def midpoint_times(self) -> np.ndarray:
        return (np.arange(self.steps) + 0.5) * self.dt

    def eval_times(self) -> np.ndarray:
        return (np.arange(self.steps) + 1.0) * self.dt


class BlockConvOperator:
    """Block-lower-triangular space-time boundary operator.

    blocks[i] holds the kernel at lag (i + 1/2)*dt including quadrature
    weights, so applying the operator to a density is a causal block
    convolution.  Only M distinct blocks exist (block-Toeplitz).
    """

    def __init__(self, kind: str, blocks: np.ndarray, mesh: BoundaryMesh, grid: TimeGrid, diffusivity: float):
        if kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        blocks = np.asarray(blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[0] != grid.steps or blocks.shape[1] != blocks.shape[2]:
            raise ValueError("blocks must have shape (M, N, N)")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("operator blocks must be finite")
        self.kind = kind
        self.blocks = blocks
        self.mesh = mesh
        self.grid = grid
        self.diffusivity = float(diffusivity)

    @property
    def steps(self) -> int:
        return self.blocks.shape[0]

    @property
    def size(self) -> int:
        return self.blocks.shape[1]

    @cached_property
    def first_block_condition(self) -> float:
        """2-norm condition estimate of the lag-dt/2 block."""
        return float(np.linalg.cond(self.blocks[0]))


def _check_density(density, steps: int, size: int) -> np.ndarray:
    d = np.asarray(density, dtype=float)
    if d.shape != (steps, size):
        raise ValueError(f"density must have shape ({steps}, {size}), got {d.shape}")
    return d


def _displacements(targets: np.ndarray, mesh: BoundaryMesh):
    z = targets[:, None, :] - mesh.centers[None, :, :]
    r2 = np.einsum("csd,csd->cs", z, z)
    if np.any(r2 == 0.0):
        raise ValueError("targets must not coincide with mesh centers")
    return z, r2


def _monopole_kernel(r2: np.ndarray, tau: float, k: float) -> np.ndarray:
    four_kt = 4.0 * k * tau
    return np.exp(-r2 / four_kt) / (np.pi * four_kt)


def _dipole_kernel(z: np.ndarray, r2: np.ndarray, normals: np.ndarray, tau: float, k: float) -> np.ndarray:
    # Normal derivative of the kernel in its source point: the chain rule
    # flips the sign of the spatial gradient, giving +z.n/(2*k*tau) times K.
    zn = np.einsum("csd,sd->cs", z, normals)
    return _monopole_kernel(r2, tau, k) * (zn / (2.0 * k * tau))


def _monopole_grad(z: np.ndarray, r2: np.ndarray, tau: float, k: float) -> np.ndarray:
    g = _monopole_kernel(r2, tau, k) / (2.0 * k * tau)
    return -z * g[..., None]


def _dipole_grad(z: np.ndarray, r2: np.ndarray, normals: np.ndarray, tau: float, k: float) -> np.ndarray:
    scale = _monopole_kernel(r2, tau, k) / (2.0 * k * tau)
    zn = np.einsum("csd,sd->cs", z, normals)
    return scale[..., None] * (normals[None, :, :] - z * (zn / (2.0 * k * tau))[..., None])


def _lag_kernel(kind: str, z, r2, mesh, tau: float, k: float, gradient: bool):
    if kind == "single":
        if gradient:
            return _monopole_grad(z, r2, tau, k)
        return _monopole_kernel(r2, tau, k)
    if gradient:
        return _dipole_grad(z, r2, mesh.normals, tau, k)
    return _dipole_kernel(z, r2, mesh.normals, tau, k)


def assemble_operator(kind: str, mesh: BoundaryMesh, tg: TimeGrid, k: float) -> BlockConvOperator:
    """Build the M weighted kernel blocks for a boundary mesh.

    Single-layer blocks are symmetric for equal segment lengths; the
    double-layer diagonal is identically zero because the kernel's
    gradient vanishes at zero displacement.
    """
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}")
    if k <= 0:
        raise ValueError("diffusivity must be positive")
    n = mesh.size
    z = mesh.centers[:, None, :] - mesh.centers[None, :, :]
    r2 = np.einsum("csd,csd->cs", z, z)
    weight = k * tg.dt * mesh.lengths[None, :]
    blocks = np.empty((tg.steps, n, n))
    for i in range(tg.steps):
        tau = (i + 0.5) * tg.dt
        if kind == "single":
            blocks[i] = _monopole_kernel(r2, tau, k) * weight
        else:
            zn = np.einsum("csd,sd->cs", z, mesh.normals)
            g = _monopole_kernel(r2, tau, k) * (zn / (2.0 * k * tau))
            np.fill_diagonal(g, 0.0)
            blocks[i] = g * weight
    return BlockConvOperator(kind, blocks, mesh, tg, k)


def apply_operator(op: BlockConvOperator, density, method: str = "auto") -> np.ndarray:
    """Causal block convolution: row j of the output sums blocks[j-m] @ row m.

    ``method`` picks the naive O(M^2 N^2) reference loop or the FFT.
    fast path; "auto" uses the FFT once enough steps make it worthwhile.
    The two agree to 1e-12 relative and the tests enforce that.
    """
    d = _check_density(density, op.steps, op.size)
    if method == "auto":
        method = "fft" if op.steps >= 32 else "naive"
    if method == "naive":
        out = np.empty_like(d)
        for j in range(op.steps):
            acc = op.blocks[0] @ d[j]
            if j > 0:
                past = np.einsum("mab,mb->a", op.blocks[1 : j + 1][::-1], d[:j])
                acc += past
            out[j] = acc
        return out
    if method == "fft":
        nf = next_fast_len(2 * op.steps - 1)
        bh = rfft(op.blocks, nf, axis=0)
        dh = rfft(d, nf, axis=0)
        oh = np.einsum("fab,fb->fa", bh, dh)
        return irfft(oh, nf, axis=0)[: op.steps]
    raise ValueError(f"unknown method {method!r}")


def solve_residual(op: BlockConvOperator, solution, rhs) -> float:
    """Relative max-norm residual of a block-triangular solve."""
    r = np.asarray(rhs, dtype=float)
    scale = float(np.max(np.abs(r)))
    if scale == 0.0:
        return float(np.max(np.abs(np.asarray(solution))))
    return float(np.max(np.abs(apply_operator(op, solution) - r))) / scale


def forward_block_solve(op: BlockConvOperator, rhs, verify: bool = True) -> np.ndarray:
    """March the block-lower-triangular system forward in time.

    Factors the first block once and substitutes through the remaining
    rows.  Refuses to run on a first block with condition estimate above
    1e12; the cure is a finer time discretization, which fattens the
    diagonal relative to the off-diagonal kernel tails.
    """
    if op.kind != "single":
        raise ValueError("forward solve is defined for the single-layer operator")
    r = _check_density(rhs, op.steps, op.size)
    cond = op.first_block_condition
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise np.linalg.LinAlgError(
            f"first block condition estimate {cond:.3e} exceeds {CONDITION_LIMIT:.0e}; "
            "refine the time discretization (more steps over the same window) "
            "or coarsen the boundary mesh"
        )
    lu = lu_factor(op.blocks[0])
    out = np.empty_like(r)
    for j in range(op.steps):
        acc = r[j].copy()
        if j > 0:
            acc -= np.einsum("mab,mb->a", op.blocks[1 : j + 1][::-1], out[:j])
        out[j] = lu_solve(lu, acc)
    if verify:
        res = solve_residual(op, out, r)
        if res > SOLVE_RESIDUAL_LIMIT:
            raise np.linalg.LinAlgError(
                f"solve residual {res:.3e} exceeds {SOLVE_RESIDUAL_LIMIT:.0e} "
                f"(first block condition {cond:.3e})"
            )
    return out


def _weighted(mesh: BoundaryMesh, tg: TimeGrid, k: float, density: np.ndarray) -> np.ndarray:
    return density * (k * tg.dt * mesh.lengths[None, :])


def _snapshot_chunk(kind, mesh, w, chunk_targets, tg, j, k, gradient):
    z, r2 = _displacements(chunk_targets, mesh)
    shape = (chunk_targets.shape[0], 2) if gradient else (chunk_targets.shape[0],)
    acc = np.zeros(shape)
    for lag in range(j):
        tau = (lag + 0.5) * tg.dt
        kern = _lag_kernel(kind, z, r2, mesh, tau, k, gradient)
        row = w[j - 1 - lag]
        if gradient:
            acc += np.einsum("csd,s->cd", kern, row)
        else:
            acc += kern @ row
    return acc


def _history_chunk(kind, mesh, w, chunk_targets, tg, k, times, gradient):
    z, r2 = _displacements(chunk_targets, mesh)
    m = tg.steps
    c, n = r2.shape
    shape = (m, c, n, 2) if gradient else (m, c, n)
    kern = np.empty(shape)
    if times == "eval":
        lags = (np.arange(m) + 0.5) * tg.dt
        start = 0
    else:
        lags = np.arange(m) * tg.dt
        kern[0] = 0.0  # zero-lag kernel vanishes (causal extension)
        start = 1
    for i in range(start, m):
        kern[i] = _lag_kernel(kind, z, r2, mesh, lags[i], k, gradient)
    nf = next_fast_len(2 * m - 1)
    kh = rfft(kern, nf, axis=0)
    dh = rfft(w, nf, axis=0)
    if gradient:
        oh = np.einsum("fcsd,fs->fcd", kh, dh)
    else:
        oh = np.einsum("fcs,fs->fc", kh, dh)
    rows = irfft(oh, nf, axis=0)[:m]
    if times == "midpoint":
        rows[0] = 0.0  # the causal zero must be exact, not FFT roundoff
    return rows


def _map_chunks(worker, targets, out, axis, chunk, workers):
    # Disjoint chunks make threaded and serial runs bit-identical: every
    # chunk is computed by the same serial code and written to its own slice.
    spans = [(s, min(s + chunk, targets.shape[0])) for s in range(0, targets.shape[0], chunk)]

    def assign(span, result):
        idx = [slice(None)] * out.ndim
        idx[axis] = slice(span[0], span[1])
        out[tuple(idx)] = result

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(worker, targets[a:b]): (a, b) for a, b in spans}
            for fut, span in futures.items():
                assign(span, fut.result())
    else:
        for a, b in spans:
            assign((a, b), worker(targets[a:b]))


def _as_targets(targets) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(targets, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("targets must be an (n, 2) array")
    return pts


def _eval_snapshot(kind, mesh, density, targets, tg, j, k, gradient, workers, chunk):
    if not 1 <= j <= tg.steps:
        raise ValueError(f"eval step j must lie in 1..{tg.steps}")
    if k <= 0:
        raise ValueError("diffusivity must be positive")
    pts = _as_targets(targets)
    w = _weighted(mesh, tg, k, _check_density(density, tg.steps, mesh.size))
    out = np.empty((pts.shape[0], 2) if gradient else pts.shape[0])
    _map_chunks(
        lambda block: _snapshot_chunk(kind, mesh, w, block, tg, j, k, gradient),
        pts,
        out,
        0,
        chunk,
        workers,
    )
    return out


def eval_single_layer(mesh, density, targets, tg, j, k, *, workers: int = 1, chunk: int = 2048) -> np.ndarray:
    """Single-layer field at off-boundary targets at time j*dt.

    Exactly causal: the result depends on density rows 1..j only, and
    the lag loop runs in a fixed order so truncating later rows leaves
    the output bit-identical.
    """
    return _eval_snapshot("single", mesh, density, targets, tg, j, k, False, workers, chunk)


def eval_double_layer(mesh, density, targets, tg, j, k, *, workers: int = 1, chunk: int = 2048) -> np.ndarray:
    """Double-layer field at off-boundary targets at time j*dt.

    The dipole kernel differentiates in the source point, so flipping
    the mesh normals negates the output.
    """
    return _eval_snapshot("double", mesh, density, targets, tg, j, k, False, workers, chunk)


def eval_single_layer_gradient(mesh, density, targets, tg, j, k, *, workers: int = 1, chunk: int = 2048) -> np.ndarray:
    """Spatial gradient of the single-layer field, shape (n, 2)."""
    return _eval_snapshot("single", mesh, density, targets, tg, j, k, True, workers, chunk)


def eval_double_layer_gradient(mesh, density, targets, tg, j, k, *, workers: int = 1, chunk: int = 2048) -> np.ndarray:
    """Spatial gradient of the double-layer field, shape (n, 2)."""
    return _eval_snapshot("double", mesh, density, targets, tg, j, k, True, workers, chunk)


def eval_layer_at(
    kind: str,
    mesh: BoundaryMesh,
    density,
    targets,
    tg: TimeGrid,
    k: float,
    t: float,
    *,
    gradient: bool = False,
) -> np.ndarray:
    """Layer-potential field at an arbitrary continuous time.

    The discrete potential is a finite sum of kernel translates, hence
    a smooth heat solution for every t, not only on the step ladder:
    rows whose midpoint time lies at or after ``t`` contribute nothing
    (causal zero extension).  Used by the finite-difference residual
    checks, which need off-ladder times.
    """
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}")
    pts = _as_targets(targets)
    w = _weighted(mesh, tg, k, _check_density(density, tg.steps, mesh.size))
    z, r2 = _displacements(pts, mesh)
    shape = (pts.shape[0], 2) if gradient else (pts.shape[0],)
    acc = np.zeros(shape)
    lags = float(t) - tg.midpoint_times()
    for m in range(tg.steps):
        if lags[m] <= 0.0:
            break
        kern = _lag_kernel(kind, z, r2, mesh, lags[m], k, gradient)
        if gradient:
            acc += np.einsum("csd,s->cd", kern, w[m])
        else:
            acc += kern @ w[m]
    return acc


def eval_layer_history(
    kind: str,
    mesh: BoundaryMesh,
    density,
    targets,
    tg: TimeGrid,
    k: float,
    *,
    times: str = "eval",
    gradient: bool = False,
    workers: int = 1,
    chunk: int | None = None,
) -> np.ndarray:
    """Layer-potential field at every time level at once, shape (M, n).

    ``times="eval"`` returns values at the whole steps j*dt (row j-1);
    ``times="midpoint"`` returns values at the density's own midpoint
    times, where all kernel lags are whole multiples of dt and the
    zero-lag term vanishes by causality (row 0 is exactly zero).  Uses
    an FFT time convolution per target chunk; agrees with the direct
    snapshot evaluation to roundoff.
    """
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}")
    if times not in ("eval", "midpoint"):
        raise ValueError("times must be 'eval' or 'midpoint'")
    if k <= 0:
        raise ValueError("diffusivity must be positive")
    pts = _as_targets(targets)
    w = _weighted(mesh, tg, k, _check_density(density, tg.steps, mesh.size))
    if chunk is None:
        nf = next_fast_len(2 * tg.steps - 1) // 2 + 1
        budget = int(4e6 / max(1, nf * mesh.size))
        chunk = max(4, min(2048, budget))
    shape = (tg.steps, pts.shape[0], 2) if gradient else (tg.steps, pts.shape[0])
    out = np.empty(shape)
    _map_chunks(
        lambda block: _history_chunk(kind, mesh, w, block, tg, k, times, gradient),
        pts,
        out,
        1,
        chunk,
        workers,
    )
    return out
