"""Experiment configs, artifact files, and the command-line front end.

Config files are plain text: section headers in brackets, ``key = value``
lines, ``#`` comments.  Vectors are comma-separated numbers and shapes are
written ``name(args)``, e.g. ``circle(0.5, 0.5, 0.25)``.  Unknown sections
or keys are hard errors carrying the offending line number, as are bad
shape arguments and geometry that fails validation.

Field grids persist in a small binary format: one whitespace-delimited
ASCII header line ``heatfield 1 nx ny x0 y0 dx dy t k`` followed by
nx*ny little-endian float64 values, row-major by y then x.  Heatmaps are
rendered one pixel per cell with the color range recorded in a sidecar
text file.  All writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")

from matplotlib import colormaps
from matplotlib.image import imsave

from .geometry import Circle, ClosedCurve, FieldGrid, Flower, Kite
from .layer_potentials import TimeGrid
from .reproduction import PointSource
from .scenarios import SCENARIO_KINDS, ScenarioConfig, ScenarioResult, run

SERIES_COLUMNS = ("time", "relerr_minus", "err_plus", "err_minus", "relerr_plus")
FIGURE_NUMBERS = (3, 4, 7, 8, 9, 10, 11, 12)
SWEEP_KINDS = ("spatial", "temporal", "noise")
NAN_COLOR = "#b4b4b4"
DEFAULT_OUT = "heatcloak-out"


class ConfigError(ValueError):
    """Config-file problem, pinned to a 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


_SECTION_KEYS = {
    "scenario": {
        "kind", "diffusivity", "steps", "duration", "buffer", "workers",
        "noise_fraction", "noise_seed",
    },
    "cloak": {"shape", "points"},
    "source": {"location", "strength"},
    "source2": {"location", "strength"},
    "inclusion": {"shape", "points"},
    "standin": {"shape"},
    "grid": {"bounds", "shape", "snapshots"},
    "harmonic": {"function"},
}

_SHAPES = {
    "circle": (3, lambda a: Circle((a[0], a[1]), a[2])),
    "kite": (3, lambda a: Kite((a[0], a[1]), a[2])),
    "flower": (5, lambda a: Flower((a[0], a[1]), a[2], a[3], int(a[4]))),
}


def _tokenize(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTION_KEYS:
                raise ConfigError(lineno, f"unknown section '{section}'")
            if section in sections:
                raise ConfigError(lineno, f"duplicate section '{section}'")
            sections[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(lineno, f"expected 'key = value', got '{line}'")
        if section is None:
            raise ConfigError(lineno, "key/value line before any [section]")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SECTION_KEYS[section]:
            raise ConfigError(lineno, f"unknown key '{key}' in [{section}]")
        if key in sections[section]:
            raise ConfigError(lineno, f"duplicate key '{key}'")
        sections[section][key] = (value, lineno)
    return sections


def _floats(value: str, line: int, count: int, what: str) -> tuple[float, ...]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != count:
        raise ConfigError(line, f"{what} needs {count} comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(line, f"{what} has a non-numeric entry: '{value}'") from None


def _float(value: str, line: int, what: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(line, f"{what} must be a number, got '{value}'") from None


def _int(value: str, line: int, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(line, f"{what} must be an integer, got '{value}'") from None


def _shape(value: str, line: int) -> ClosedCurve:
    m = re.fullmatch(r"([a-z_]+)\s*\((.*)\)", value.strip())
    if not m:
        raise ConfigError(line, f"shape must look like name(args), got '{value}'")
    name, argstr = m.group(1), m.group(2)
    if name not in _SHAPES:
        known = ", ".join(sorted(_SHAPES))
        raise ConfigError(line, f"unknown shape '{name}' (known: {known})")
    argc, build = _SHAPES[name]
    args = _floats(argstr, line, argc, f"shape '{name}'")
    try:
        return build(args)
    except ValueError as exc:
        raise ConfigError(line, f"bad {name} arguments: {exc}") from None


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a config document.

    Raises ConfigError naming the offending line for unknown keys, bad
    values, and geometry that fails scenario validation.
    """
    sections = _tokenize(text)

    def need(section: str, key: str) -> tuple[str, int]:
        body = sections.get(section)
        if body is None or key not in body:
            raise ConfigError(0, f"missing required [{section}] {key}")
        return body[key]

    def opt(section: str, key: str):
        return sections.get(section, {}).get(key)

    kind_val, kind_line = need("scenario", "kind")
    if kind_val not in SCENARIO_KINDS:
        raise ConfigError(kind_line, f"unknown kind '{kind_val}'")

    diff_val, diff_line = need("scenario", "diffusivity")
    steps_val, steps_line = need("scenario", "steps")
    dur_val, dur_line = need("scenario", "duration")
    steps = _int(steps_val, steps_line, "steps")
    duration = _float(dur_val, dur_line, "duration")
    if steps <= 0:
        raise ConfigError(steps_line, "steps must be positive")
    if duration <= 0:
        raise ConfigError(dur_line, "duration must be positive")

    shape_val, shape_line = need("cloak", "shape")
    kwargs: dict = {
        "kind": kind_val,
        "cloak": _shape(shape_val, shape_line),
        "time_grid": TimeGrid(duration / steps, steps),
        "diffusivity": _float(diff_val, diff_line, "diffusivity"),
    }

    lines = {"scenario": kind_line, "cloak": shape_line}
    if opt("cloak", "points"):
        v, ln = sections["cloak"]["points"]
        kwargs["cloak_points"] = _int(v, ln, "cloak points")
    for sec, field in (("source", "source"), ("source2", "source2")):
        if sec in sections:
            v, ln = need(sec, "location")
            loc = _floats(v, ln, 2, f"{sec} location")
            strength = 1.0
            if opt(sec, "strength"):
                sv, sl = sections[sec]["strength"]
                strength = _float(sv, sl, f"{sec} strength")
            kwargs[field] = PointSource(loc, strength)
            lines[sec] = ln
    for sec, field in (("inclusion", "inclusion"), ("standin", "standin")):
        if sec in sections:
            v, ln = need(sec, "shape")
            kwargs[field] = _shape(v, ln)
            lines[sec] = ln
    if opt("inclusion", "points"):
        v, ln = sections["inclusion"]["points"]
        kwargs["inclusion_points"] = _int(v, ln, "inclusion points")
    if opt("grid", "bounds"):
        v, ln = sections["grid"]["bounds"]
        kwargs["grid_bounds"] = _floats(v, ln, 4, "grid bounds")
    if opt("grid", "shape"):
        v, ln = sections["grid"]["shape"]
        parts = _floats(v, ln, 2, "grid shape")
        kwargs["grid_shape"] = (int(parts[0]), int(parts[1]))
    if opt("grid", "snapshots"):
        v, ln = sections["grid"]["snapshots"]
        try:
            kwargs["snapshot_times"] = tuple(float(p) for p in v.split(","))
        except ValueError:
            raise ConfigError(ln, f"snapshots has a non-numeric entry: '{v}'") from None
    for key, field in (
        ("buffer", "buffer"),
        ("noise_fraction", "noise_fraction"),
    ):
        if opt("scenario", key):
            v, ln = sections["scenario"][key]
            kwargs[field] = _float(v, ln, key)
    for key, field in (("workers", "workers"), ("noise_seed", "noise_seed")):
        if opt("scenario", key):
            v, ln = sections["scenario"][key]
            kwargs[field] = _int(v, ln, key)
    if opt("harmonic", "function"):
        v, ln = sections["harmonic"]["function"]
        kwargs["harmonic"] = v
        lines["harmonic"] = ln

    cfg = ScenarioConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as exc:
        msg = str(exc)
        where = lines["scenario"]
        for token, sec in (
            ("stand-in", "standin"),
            ("standin", "standin"),
            ("second", "source2"),
            ("inclusion", "inclusion"),
            ("source", "source"),
        ):
            if token in msg and sec in lines:
                where = lines[sec]
                break
        raise ConfigError(where, msg) from None
    return cfg


def _fmt_num(x: float) -> str:
    if isinstance(x, (int, np.integer)) or float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def format_config(cfg: ScenarioConfig) -> str:
    """Render a config back to the document grammar (parse round trip)."""
    tg = cfg.time_grid
    out = [
        "[scenario]",
        f"kind = {cfg.kind}",
        f"diffusivity = {_fmt_num(cfg.diffusivity)}",
        f"steps = {tg.steps}",
        f"duration = {_fmt_num(tg.duration)}",
        f"buffer = {_fmt_num(cfg.buffer)}",
        f"workers = {cfg.workers}",
    ]
    if cfg.noise_fraction:
        out.append(f"noise_fraction = {_fmt_num(cfg.noise_fraction)}")
        out.append(f"noise_seed = {cfg.noise_seed}")
    name, args = cfg.cloak.spec
    out += [
        "",
        "[cloak]",
        f"shape = {name}({', '.join(_fmt_num(a) for a in args)})",
        f"points = {cfg.cloak_points}",
    ]
    for label, src in (("source", cfg.source), ("source2", cfg.source2)):
        if src is not None:
            out += ["", f"[{label}]", f"location = {_fmt_num(src.location[0])}, {_fmt_num(src.location[1])}"]
            if src.strength != 1.0:
                out.append(f"strength = {_fmt_num(src.strength)}")
    if cfg.inclusion is not None:
        name, args = cfg.inclusion.spec
        out += [
            "",
            "[inclusion]",
            f"shape = {name}({', '.join(_fmt_num(a) for a in args)})",
            f"points = {cfg.inclusion_points}",
        ]
    if cfg.standin is not None:
        name, args = cfg.standin.spec
        out += ["", "[standin]", f"shape = {name}({', '.join(_fmt_num(a) for a in args)})"]
    out += [
        "",
        "[grid]",
        f"bounds = {', '.join(_fmt_num(b) for b in cfg.grid_bounds)}",
        f"shape = {cfg.grid_shape[0]}, {cfg.grid_shape[1]}",
    ]
    if cfg.snapshot_times:
        out.append(f"snapshots = {', '.join(_fmt_num(t) for t in cfg.snapshot_times)}")
    if cfg.harmonic is not None:
        out += ["", "[harmonic]", f"function = {cfg.harmonic}"]
    return "\n".join(out) + "\n"


def _atomic_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _atomic_text(path: Path, text: str) -> None:
    _atomic_bytes(path, text.encode("utf-8"))


def write_field_grid(grid: FieldGrid, path, diffusivity: float = 0.0) -> None:
    """Persist one grid; the header records geometry, time, and diffusivity."""
    header = " ".join(
        [
            "heatfield", "1", str(grid.nx), str(grid.ny),
            repr(float(grid.origin[0])), repr(float(grid.origin[1])),
            repr(float(grid.dx)), repr(float(grid.dy)),
            repr(float(grid.time)), repr(float(diffusivity)),
        ]
    )
    payload = np.ascontiguousarray(grid.values, dtype="<f8").tobytes()
    _atomic_bytes(Path(path), header.encode("ascii") + b"\n" + payload)


def read_field_header(path) -> dict:
    """Parse and validate the header line only."""
    with open(path, "rb") as fh:
        line = fh.readline(4096)
    if not line.endswith(b"\n"):
        raise ValueError(f"{path}: missing header line")
    tokens = line.decode("ascii", errors="replace").split()
    if len(tokens) != 10:
        raise ValueError(f"{path}: malformed header, expected 10 fields, got {len(tokens)}")
    if tokens[0] != "heatfield":
        raise ValueError(f"{path}: bad magic '{tokens[0]}', expected 'heatfield'")
    if tokens[1] != "1":
        raise ValueError(f"{path}: unsupported version '{tokens[1]}'")
    try:
        nx, ny = int(tokens[2]), int(tokens[3])
        x0, y0, dx, dy, t, k = (float(v) for v in tokens[4:])
    except ValueError:
        raise ValueError(f"{path}: non-numeric header field") from None
    if nx <= 0 or ny <= 0:
        raise ValueError(f"{path}: grid dimensions must be positive")
    return {
        "nx": nx, "ny": ny, "origin": (x0, y0), "dx": dx, "dy": dy,
        "time": t, "diffusivity": k, "header_bytes": len(line),
    }


def read_field_grid(path) -> FieldGrid:
    """Read a grid back; values round-trip bit-exact."""
    head = read_field_header(path)
    nx, ny = head["nx"], head["ny"]
    data = Path(path).read_bytes()[head["header_bytes"]:]
    expected = 8 * nx * ny
    if len(data) != expected:
        raise ValueError(
            f"{path}: truncated payload, expected {expected} bytes, found {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f8").reshape(ny, nx).copy()
    return FieldGrid(
        origin=head["origin"], nx=nx, ny=ny, dx=head["dx"], dy=head["dy"],
        values=values, time=head["time"],
    )


def log_error_grid(computed: FieldGrid, reference: FieldGrid | None = None, floor: float = 1e-16) -> FieldGrid:
    """log10 of |computed - reference| (or of |computed| alone), floored."""
    diff = computed.values if reference is None else computed.values - reference.values
    return computed.with_values(np.log10(np.maximum(np.abs(diff), floor)))


def render_heatmap(
    grid: FieldGrid,
    path,
    vmin: float | None = None,
    vmax: float | None = None,
    cmap: str = "viridis",
) -> tuple[float, float]:
    """Write a one-pixel-per-cell PNG plus a range sidecar.

    NaN cells get a sentinel color.  Without an explicit range the finite
    min/max is used; a degenerate range renders a solid image and warns.
    Returns the (vmin, vmax) actually applied.
    """
    path = Path(path)
    vals = grid.values
    finite = vals[np.isfinite(vals)]
    mode = "fixed" if (vmin is not None and vmax is not None) else "auto"
    if vmin is None:
        vmin = float(finite.min()) if finite.size else 0.0
    if vmax is None:
        vmax = float(finite.max()) if finite.size else 0.0
    if vmax <= vmin:
        warnings.warn(f"degenerate color range [{vmin}, {vmax}]; rendering a solid image")
        vmax = vmin + 1.0
    colors = colormaps[cmap].with_extremes(bad=NAN_COLOR)
    buf = io.BytesIO()
    # flip so row 0 of the PNG is the top of the domain
    imsave(buf, np.ma.masked_invalid(vals[::-1]), cmap=colors, vmin=vmin, vmax=vmax, format="png")
    _atomic_bytes(path, buf.getvalue())
    sidecar = path.with_name(path.stem + ".range.txt")
    _atomic_text(sidecar, f"vmin={vmin!r} vmax={vmax!r} mode={mode}\n")
    return float(vmin), float(vmax)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(
            ["" if isinstance(v, float) and math.isnan(v) else repr(v) if isinstance(v, float) else v for v in row]
        )
    return buf.getvalue()


def write_series_csv(series: list[dict], path) -> None:
    rows = [[row[c] for c in SERIES_COLUMNS] for row in series]
    _atomic_text(Path(path), _csv_text(SERIES_COLUMNS, rows))


def read_series_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            {c: (float(row[c]) if row[c] else math.nan) for c in SERIES_COLUMNS}
            for row in reader
        ]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_result(result: ScenarioResult, outdir, quiet: bool = True) -> Path:
    """Write the standard artifact set for one scenario run."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    k = result.config.diffusivity

    def note(p: Path):
        if not quiet:
            print(f"[heatcloak] wrote {p}")

    p = outdir / "config.txt"
    _atomic_text(p, format_config(result.config))
    note(p)
    p = outdir / "metadata.json"
    _atomic_text(p, json.dumps(_jsonable(result.metadata), indent=2, sort_keys=True) + "\n")
    note(p)
    if result.series:
        p = outdir / "errors.csv"
        write_series_csv(result.series, p)
        note(p)
    for name, grids in result.fields.items():
        for g in grids:
            stem = f"{name}_t{g.time:g}"
            p = outdir / "fields" / f"{stem}.field"
            write_field_grid(g, p, diffusivity=k)
            note(p)
            render_heatmap(g, outdir / "fields" / f"{stem}.png")
            note(outdir / "fields" / f"{stem}.png")
    for name, rows in result.extras.items():
        if not rows:
            continue
        cols = list(rows[0])
        p = outdir / f"{name}.csv"
        _atomic_text(p, _csv_text(cols, [[r[c] for c in cols] for r in rows]))
        note(p)
    return outdir


def _line_plot(path: Path, curves: list[tuple[str, np.ndarray, np.ndarray]], title: str, ylabel: str) -> None:
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, xs, ys in curves:
        ax.semilogy(xs, ys, label=label)
    ax.set_xlabel("time")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120)
    plt.close(fig)
    _atomic_bytes(path, buf.getvalue())


# Shared geometry of the refinement and noise studies: unit square grid,
# disk of radius 1/4 at the center, interior source at the origin and
# exterior source just above the disk.
_STUDY = {
    "cloak": Circle((0.5, 0.5), 0.25),
    "k": 0.2,
    "grid_shape": (100, 100),
    "interior_source": PointSource((0.0, 0.0)),
    "exterior_source": PointSource((0.5, 0.55)),
    "duration": 1.0,
    "report_from": 0.1,
}


def _study_config(mode: str, points: int, steps: int, noise: float = 0.0, seed: int = 0, workers: int = 1) -> ScenarioConfig:
    interior = mode == "interior"
    return ScenarioConfig(
        kind="reproduce_interior" if interior else "reproduce_exterior",
        cloak=_STUDY["cloak"],
        time_grid=TimeGrid(_STUDY["duration"] / steps, steps),
        diffusivity=_STUDY["k"],
        source=_STUDY["interior_source"] if interior else _STUDY["exterior_source"],
        cloak_points=points,
        grid_shape=_STUDY["grid_shape"],
        noise_fraction=noise,
        noise_seed=seed,
        workers=workers,
        labels={"duration": "chosen", "sources": "chosen for the refinement study"},
    )


def _study_metric(mode: str) -> str:
    return "relerr_minus" if mode == "interior" else "relerr_plus"


def _run_study(jobs, outdir: Path, stem: str, quiet: bool) -> list[Path]:
    """Run labeled configs, write one CSV each plus a combined plot."""
    written = []
    curves = {"interior": [], "exterior": []}
    for label, cfg in jobs:
        result = run(cfg)
        path = outdir / f"{stem}_{label}.csv"
        write_series_csv(result.series, path)
        _atomic_text(
            outdir / f"{stem}_{label}.json",
            json.dumps(_jsonable(result.metadata), indent=2, sort_keys=True) + "\n",
        )
        written.append(path)
        if not quiet:
            print(f"[heatcloak] wrote {path} ({result.metadata['wall_time_s']:.1f}s)")
        mode = "interior" if cfg.kind == "reproduce_interior" else "exterior"
        rows = [r for r in result.series if r["time"] >= _STUDY["report_from"]]
        ts = np.array([r["time"] for r in rows])
        ys = np.array([r[_study_metric(mode)] for r in rows])
        curves[mode].append((label, ts, ys))
    for mode, entries in curves.items():
        if entries:
            plot = outdir / f"{stem}_{mode}.png"
            _line_plot(plot, entries, f"{stem} ({mode})", _study_metric(mode))
            written.append(plot)
            if not quiet:
                print(f"[heatcloak] wrote {plot}")
    return written


def sweep_spatial(
    outdir, workers: int = 1, quiet: bool = True,
    points: tuple[int, ...] = (25, 50, 100), steps: int = 1000,
) -> list[Path]:
    """Boundary refinement study: 25/50/100 points at 1000 steps."""
    jobs = [
        (f"{mode}_N{n}", _study_config(mode, n, steps, workers=workers))
        for mode in ("interior", "exterior")
        for n in points
    ]
    return _run_study(jobs, Path(outdir), "spatial", quiet)


def sweep_temporal(
    outdir, workers: int = 1, quiet: bool = True,
    steps: tuple[int, ...] = (250, 500, 1000), points: int = 100,
) -> list[Path]:
    """Time refinement study: 250/500/1000 steps at 100 points."""
    jobs = [
        (f"{mode}_M{m}", _study_config(mode, points, m, workers=workers))
        for mode in ("interior", "exterior")
        for m in steps
    ]
    return _run_study(jobs, Path(outdir), "temporal", quiet)


def sweep_noise(
    outdir, noise: float = 0.03, seed: int = 7, workers: int = 1, quiet: bool = True,
    points: int = 100, steps: int = 1000,
) -> list[Path]:
    """Density-perturbation study: clean vs noisy densities."""
    jobs = []
    for mode in ("interior", "exterior"):
        jobs.append((f"{mode}_clean", _study_config(mode, points, steps, workers=workers)))
        jobs.append(
            (
                f"{mode}_noise{noise:g}",
                _study_config(mode, points, steps, noise=noise, seed=seed, workers=workers),
            )
        )
    return _run_study(jobs, Path(outdir), "noise", quiet)


def _fig3_config(workers: int) -> ScenarioConfig:
    return ScenarioConfig(
        kind="reproduce_interior",
        cloak=Circle((0.5, 0.5), 0.25),
        time_grid=TimeGrid(0.2 / 200, 200),
        diffusivity=0.3,
        source=PointSource((0.25, 0.25)),
        cloak_points=128,
        grid_bounds=(0.0, 0.0, 1.0, 1.0),
        grid_shape=(200, 200),
        snapshot_times=(0.2,),
        workers=workers,
        labels={"color_range": "chosen"},
    )


def _fig4_config(workers: int) -> ScenarioConfig:
    cfg = _fig3_config(workers)
    return ScenarioConfig(
        **{
            **cfg.__dict__,
            "kind": "reproduce_exterior",
            "source": PointSource((0.5, 0.55)),
        }
    )


def _fig10_config(workers: int) -> ScenarioConfig:
    return ScenarioConfig(
        kind="cloak_object",
        cloak=Circle((0.5, 0.5), 1.0 / 3.0),
        time_grid=TimeGrid(0.5 / 600, 600),
        diffusivity=0.2,
        source=PointSource((0.9, 0.3)),
        inclusion=Kite((0.5, 0.5), 0.12),
        cloak_points=128,
        inclusion_points=96,
        grid_bounds=(0.0, 0.0, 1.0, 1.0),
        grid_shape=(200, 200),
        snapshot_times=(0.05, 0.25, 0.5),
        workers=workers,
        labels={
            "inclusion": "chosen (position and scale unstated)",
            "inclusion_points": "chosen",
            "snapshot_times": "chosen to match the reported snapshots",
            "color_range": "chosen",
        },
    )


def _fig11_config(workers: int) -> ScenarioConfig:
    return ScenarioConfig(
        kind="mimic_source",
        cloak=Circle((0.5, 0.5), 0.25),
        time_grid=TimeGrid(0.2 / 200, 200),
        diffusivity=0.2,
        source=PointSource((0.6, 0.4)),
        source2=PointSource((0.39, 0.6)),
        cloak_points=128,
        grid_bounds=(0.0, 0.0, 1.0, 1.0),
        grid_shape=(200, 200),
        snapshot_times=(0.2,),
        workers=workers,
        labels={
            "cloak": "chosen (control disk unstated)",
            "diffusivity": "chosen",
            "steps": "chosen",
            "cloak_points": "chosen",
            "color_range": "chosen",
        },
    )


def _fig12_config(workers: int) -> ScenarioConfig:
    return ScenarioConfig(
        kind="mimic_object",
        cloak=Circle((0.5, 0.5), 0.25),
        time_grid=TimeGrid(0.05 / 180, 180),
        diffusivity=0.2,
        source=PointSource((0.25, 0.5)),
        inclusion=Kite((0.5, 0.5), 0.09),
        standin=Flower((0.5, 0.5), 0.12, 0.03, 5),
        cloak_points=128,
        inclusion_points=96,
        grid_bounds=(0.0, 0.0, 1.0, 1.0),
        grid_shape=(200, 200),
        snapshot_times=(0.025, 0.05),
        workers=workers,
        labels={
            "inclusion": "chosen (kite scale unstated)",
            "standin": "chosen (flower geometry unstated)",
            "inclusion_points": "chosen",
            "snapshot_times": "final time stated, earlier snapshot chosen",
            "color_range": "chosen",
        },
    )


def run_figure(number: int, outdir, workers: int = 1, quiet: bool = True) -> Path:
    """Run one paper-matched preset and write its artifact set."""
    outdir = Path(outdir)
    if number == 7:
        sweep_spatial(outdir, workers=workers, quiet=quiet)
        return outdir
    if number == 8:
        sweep_temporal(outdir, workers=workers, quiet=quiet)
        return outdir
    if number == 9:
        sweep_noise(outdir, workers=workers, quiet=quiet)
        return outdir
    makers = {3: _fig3_config, 4: _fig4_config, 10: _fig10_config, 11: _fig11_config, 12: _fig12_config}
    if number not in makers:
        raise ValueError(f"no preset for figure {number}; known: {FIGURE_NUMBERS}")
    cfg = makers[number](workers)
    result = run(cfg)
    write_result(result, outdir, quiet=quiet)
    if number in (3, 4):
        for computed, expected in zip(result.fields["reproduced"], result.fields["expected"]):
            err = log_error_grid(computed, expected)
            render_heatmap(err, outdir / "fields" / f"error_log10_t{computed.time:g}.png", vmin=-8.0, vmax=0.0)
    if number == 11:
        for mim, target in zip(result.fields["mimicked"], result.fields["field_g"]):
            err = log_error_grid(mim, target)
            render_heatmap(err, outdir / "fields" / f"error_log10_t{mim.time:g}.png", vmin=-8.0, vmax=0.0)
    return outdir


def _resolve_out(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get("HEATCLOAK_OUT")
    return Path(env) if env else Path(DEFAULT_OUT)


def cli_main(argv=None) -> int:
    """Entry point; returns the process exit status."""
    parser = argparse.ArgumentParser(
        prog="heatcloak",
        description="Reproduce boundary-controlled heat cloaking and mimicking experiments.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default $HEATCLOAK_OUT or ./{DEFAULT_OUT})")
    common.add_argument("--parallel", type=int, default=1, metavar="N", help="worker threads for field evaluation")
    common.add_argument("--seed", type=int, default=None, help="override the noise seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="run a scenario config file")
    p_run.add_argument("config", help="path to a config document")
    p_val = sub.add_parser("validate", parents=[common], help="parse a config without running it")
    p_val.add_argument("config")
    p_fig = sub.add_parser("figure", parents=[common], help="run a paper-matched preset")
    p_fig.add_argument("number", type=int, choices=FIGURE_NUMBERS)
    p_sweep = sub.add_parser("sweep", parents=[common], help="run a refinement or noise study")
    p_sweep.add_argument("kind", choices=SWEEP_KINDS)
    p_sweep.add_argument("--noise", type=float, default=0.03, help="noise fraction for the noise sweep")
    p_render = sub.add_parser("render", parents=[common], help="render a stored field grid to PNG")
    p_render.add_argument("field", help="path to a .field file")
    p_render.add_argument("--vmin", type=float, default=None)
    p_render.add_argument("--vmax", type=float, default=None)
    p_render.add_argument("--cmap", default="viridis")
    p_render.add_argument("--log", action="store_true", help="render log10 of absolute values")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return _dispatch(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"heatcloak: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    out = _resolve_out(args.out)
    quiet = args.quiet
    if args.command == "validate":
        text = Path(args.config).read_text()
        parse_config(text)
        if not quiet:
            print(f"[heatcloak] {args.config} is valid")
        return 0
    if args.command == "run":
        text = Path(args.config).read_text()
        cfg = parse_config(text)
        updates: dict = {"workers": args.parallel}
        if args.seed is not None:
            updates["noise_seed"] = args.seed
        cfg = ScenarioConfig(**{**cfg.__dict__, **updates})
        dest = out / Path(args.config).stem
        result = run(cfg)
        write_result(result, dest, quiet=quiet)
        if not quiet:
            print(f"[heatcloak] done in {result.metadata['wall_time_s']:.1f}s -> {dest}")
        return 0
    if args.command == "figure":
        dest = out / f"fig{args.number}"
        run_figure(args.number, dest, workers=args.parallel, quiet=quiet)
        if not quiet:
            print(f"[heatcloak] figure {args.number} -> {dest}")
        return 0
    if args.command == "sweep":
        dest = out / f"sweep-{args.kind}"
        if args.kind == "spatial":
            sweep_spatial(dest, workers=args.parallel, quiet=quiet)
        elif args.kind == "temporal":
            sweep_temporal(dest, workers=args.parallel, quiet=quiet)
        else:
            seed = 7 if args.seed is None else args.seed
            sweep_noise(dest, noise=args.noise, seed=seed, workers=args.parallel, quiet=quiet)
        if not quiet:
            print(f"[heatcloak] sweep {args.kind} -> {dest}")
        return 0
    if args.command == "render":
        grid = read_field_grid(args.field)
        if args.log:
            grid = log_error_grid(grid)
        dest_dir = out if args.out else Path(args.field).parent
        dest = dest_dir / (Path(args.field).stem + ".png")
        vmin, vmax = render_heatmap(grid, dest, vmin=args.vmin, vmax=args.vmax, cmap=args.cmap)
        if not quiet:
            print(f"[heatcloak] rendered {dest} range [{vmin}, {vmax}]")
        return 0
    raise ValueError(f"unknown command {args.command!r}")


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
