"""Scenario runners: validation, artifacts, and the physics each one claims."""

import numpy as np
import pytest

from heatcloak.geometry import Circle, Flower, Kite, discretize
from heatcloak.layer_potentials import TimeGrid
from heatcloak.reproduction import PointSource, point_source_traces
from heatcloak.scattering import DirichletInclusion, solve_dirichlet_density
from heatcloak.scenarios import (
    HARMONIC_CATALOG,
    SCENARIO_KINDS,
    ScenarioConfig,
    constant_dirichlet_cloak_check,
    run,
    verify_harmonic_identity,
)

K = 0.2
CLOAK = Circle((0.5, 0.5), 0.25)


def _cfg(**overrides):
    base = dict(
        kind="reproduce_interior",
        cloak=CLOAK,
        time_grid=TimeGrid(0.004, 50),
        diffusivity=K,
        source=PointSource((0.25, 0.25)),
        cloak_points=64,
        grid_shape=(50, 50),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def test_validation_rejections():
    with pytest.raises(ValueError, match="unknown scenario kind"):
        _cfg(kind="teleport").validate()
    with pytest.raises(ValueError, match="diffusivity"):
        _cfg(diffusivity=0.0).validate()
    with pytest.raises(ValueError, match="needs a source"):
        _cfg(source=None).validate()
    with pytest.raises(ValueError, match="outside the cloak"):
        _cfg(source=PointSource((0.5, 0.52))).validate()
    with pytest.raises(ValueError, match="inside the cloak"):
        _cfg(kind="reproduce_exterior", source=PointSource((0.9, 0.9))).validate()
    with pytest.raises(ValueError, match="inside the cloak"):
        _cfg(kind="cloak_source", source=PointSource((0.9, 0.9))).validate()
    with pytest.raises(ValueError, match="second source"):
        _cfg(kind="mimic_source", source=PointSource((0.5, 0.55))).validate()
    with pytest.raises(ValueError, match="mimicking sources"):
        _cfg(
            kind="mimic_source",
            source=PointSource((0.5, 0.55)),
            source2=PointSource((0.9, 0.9)),
        ).validate()
    with pytest.raises(ValueError, match="needs an inclusion"):
        _cfg(kind="cloak_object", source=PointSource((0.9, 0.3))).validate()
    with pytest.raises(ValueError, match="strictly inside"):
        _cfg(
            kind="cloak_object",
            source=PointSource((0.9, 0.3)),
            inclusion=Circle((0.5, 0.5), 0.3),
        ).validate()
    with pytest.raises(ValueError, match="stand-in"):
        _cfg(
            kind="mimic_object",
            source=PointSource((0.9, 0.3)),
            inclusion=Circle((0.5, 0.5), 0.1),
        ).validate()
    with pytest.raises(ValueError, match="noise"):
        _cfg(kind="cloak_source", source=PointSource((0.5, 0.55)), noise_fraction=0.1).validate()
    with pytest.raises(ValueError, match="nonnegative"):
        _cfg(noise_fraction=-0.1).validate()
    with pytest.raises(ValueError, match="initial-state name"):
        _cfg(kind="harmonic_identity", source=None).validate()
    # A boundary source is legal for either side.
    _cfg(source=PointSource((0.25, 0.5))).validate()
    _cfg(kind="reproduce_exterior", source=PointSource((0.25, 0.5))).validate()


def test_snapshot_off_ladder_rejected():
    cfg = _cfg(grid_shape=(20, 20), time_grid=TimeGrid(0.01, 10), snapshot_times=(0.0701,))
    with pytest.raises(ValueError, match="ladder"):
        run(cfg)


def test_all_kinds_are_dispatchable():
    assert set(SCENARIO_KINDS) == {
        "reproduce_interior",
        "reproduce_exterior",
        "cloak_source",
        "cloak_object",
        "mimic_source",
        "mimic_object",
        "harmonic_identity",
    }


@pytest.fixture(scope="module")
def reproduce_result():
    return run(_cfg(snapshot_times=(0.1, 0.2)))


def test_reproduce_artifacts(reproduce_result):
    res = reproduce_result
    assert set(res.fields) == {"reproduced", "expected", "error"}
    assert all(len(v) == 2 for v in res.fields.values())
    assert [g.time for g in res.fields["reproduced"]] == [0.1, 0.2]
    assert len(res.series) == 50
    row = res.series[-1]
    assert set(row) == {"time", "relerr_minus", "err_plus", "err_minus", "relerr_plus"}
    assert row["time"] == pytest.approx(0.2)
    assert np.isnan(row["err_minus"]) and np.isnan(row["relerr_plus"])
    assert 0 < row["relerr_minus"] < 1
    assert res.metadata["inner_cells"] > 0 and res.metadata["outer_cells"] > 0
    assert res.metadata["mode"] == "interior"
    assert res.metadata["wall_time_s"] > 0
    err = res.fields["error"][1]
    diff = res.fields["reproduced"][1].values - res.fields["expected"][1].values
    np.testing.assert_allclose(err.values, diff, rtol=1e-12, atol=1e-15)


def test_reproduce_evaluators_match_grids(reproduce_result):
    res = reproduce_result
    g = res.fields["reproduced"][1]
    pts = g.points()[1200:1210]
    ev = res.evaluators["reproduced"](pts, 0.2)
    np.testing.assert_allclose(ev, g.values.ravel()[1200:1210], rtol=1e-9, atol=1e-14)
    # The expected evaluator is side-masked: zero outside the curve.
    outside = np.array([[0.05, 0.05]])
    assert res.evaluators["expected"](outside, 0.2)[0] == 0.0
    inside = np.array([[0.5, 0.5]])
    src = PointSource((0.25, 0.25))
    assert res.evaluators["expected"](inside, 0.2)[0] == pytest.approx(
        src.field_at(inside, 0.2, K)[0], rel=1e-13
    )


def test_reproduce_scales_with_source_strength(reproduce_result):
    doubled = run(_cfg(source=PointSource((0.25, 0.25), strength=2.0), snapshot_times=(0.2,)))
    base = reproduce_result.fields["reproduced"][1].values
    np.testing.assert_allclose(doubled.fields["reproduced"][0].values, 2 * base, rtol=1e-12)


def test_noise_is_seeded_and_optional():
    noisy = _cfg(noise_fraction=0.02, noise_seed=5, snapshot_times=(0.2,), grid_shape=(30, 30))
    a = run(noisy)
    b = run(noisy)
    np.testing.assert_array_equal(
        a.fields["reproduced"][0].values, b.fields["reproduced"][0].values
    )
    clean = run(_cfg(snapshot_times=(0.2,), grid_shape=(30, 30)))
    assert not np.array_equal(
        a.fields["reproduced"][0].values, clean.fields["reproduced"][0].values
    )
    assert a.metadata["noise_fraction"] == 0.02


def test_cloak_source_suppresses_exterior():
    cfg = ScenarioConfig(
        kind="cloak_source",
        cloak=CLOAK,
        time_grid=TimeGrid(0.002, 100),
        diffusivity=K,
        source=PointSource((0.5, 0.55)),
        cloak_points=64,
        grid_shape=(50, 50),
        snapshot_times=(0.2,),
    )
    res = run(cfg)
    assert set(res.fields) == {"incident", "cloaking", "total"}
    late = res.series[-1]
    # Exterior total shrinks to a few percent of the incident field at
    # this coarse resolution (finer runs land well under 1e-2).
    assert late["relerr_plus"] <= 5e-2
    # The emitted total is the exact sum of its parts.
    t = res.fields["total"][0]
    np.testing.assert_allclose(
        t.values,
        res.fields["incident"][0].values + res.fields["cloaking"][0].values,
        rtol=1e-12,
        atol=1e-15,
    )
    pts = np.array([[0.9, 0.85], [0.1, 0.2]])
    total_ev = res.evaluators["total"](pts, 0.2)
    parts = res.evaluators["incident"](pts, 0.2) + res.evaluators["cloaking"](pts, 0.2)
    np.testing.assert_allclose(total_ev, parts, rtol=1e-12)


def test_cloak_object_hides_the_scatterer():
    cfg = ScenarioConfig(
        kind="cloak_object",
        cloak=CLOAK,
        time_grid=TimeGrid(0.002, 100),
        diffusivity=K,
        source=PointSource((0.9, 0.3)),
        inclusion=Circle((0.5, 0.5), 0.1),
        cloak_points=64,
        inclusion_points=48,
        grid_shape=(40, 40),
        snapshot_times=(0.2,),
    )
    res = run(cfg)
    row = res.series[-1]
    # Cloaked scattering is under 1% of the uncloaked response.
    assert row["relerr_plus"] <= 1e-2
    assert row["err_plus"] > 0
    md = res.metadata
    assert md["uncloaked_solve_residual"] <= 1e-10
    assert md["cloaked_solve_residual"] <= 1e-10
    assert md["offnode_boundary_residual"] <= 2e-2
    assert md["uncloaked_condition"] >= 1.0
    scat = res.fields["uncloaked_scattered"][0].values
    # Cells inside the obstacle are masked out, exterior cells are real.
    assert np.isnan(scat[20, 20])
    assert np.isfinite(scat[0, 0])
    assert set(res.fields) == {
        "incident",
        "cloaking",
        "uncloaked_scattered",
        "cloaked_scattered",
        "uncloaked_total",
        "cloaked_total",
    }


def test_mimic_identical_sources_is_exact():
    src = PointSource((0.5, 0.55))
    cfg = ScenarioConfig(
        kind="mimic_source",
        cloak=CLOAK,
        time_grid=TimeGrid(0.005, 40),
        diffusivity=K,
        source=src,
        source2=PointSource((0.5, 0.55)),
        cloak_points=48,
        grid_shape=(30, 30),
        snapshot_times=(0.2,),
    )
    res = run(cfg)
    assert np.all(res.fields["cloaking"][0].values == 0.0)
    np.testing.assert_array_equal(
        res.fields["mimicked"][0].values, res.fields["field_f"][0].values
    )
    assert res.series[-1]["err_plus"] == 0.0


def test_mimic_swap_negates_the_cloaking_field():
    a = PointSource((0.45, 0.5))
    b = PointSource((0.55, 0.55))
    common = dict(
        kind="mimic_source",
        cloak=CLOAK,
        time_grid=TimeGrid(0.005, 40),
        diffusivity=K,
        cloak_points=48,
        grid_shape=(30, 30),
        snapshot_times=(0.2,),
    )
    fg = run(ScenarioConfig(source=a, source2=b, **common))
    gf = run(ScenarioConfig(source=b, source2=a, **common))
    np.testing.assert_allclose(
        fg.fields["cloaking"][0].values,
        -gf.fields["cloaking"][0].values,
        rtol=1e-13,
        atol=1e-16,
    )


def test_mimic_object_self_standin_converges():
    # Stand-in == actual obstacle: the uncloaked mismatch is exactly zero
    # and the mimicked mismatch halves with each refinement (first-order
    # near-boundary quadrature).
    relp = []
    for n_c, n_r, m in ((64, 48, 60), (96, 64, 120)):
        cfg = ScenarioConfig(
            kind="mimic_object",
            cloak=CLOAK,
            time_grid=TimeGrid(0.2 / m, m),
            diffusivity=K,
            source=PointSource((0.9, 0.3)),
            inclusion=Circle((0.5, 0.5), 0.1),
            standin=Circle((0.5, 0.5), 0.1),
            cloak_points=n_c,
            inclusion_points=n_r,
            grid_shape=(40, 40),
        )
        res = run(cfg)
        row = res.series[-1]
        assert row["relerr_minus"] == 0.0
        assert row["err_minus"] == 0.0
        relp.append(row["relerr_plus"])
    assert relp[0] <= 0.35
    assert relp[1] <= 0.65 * relp[0]


def test_constant_dirichlet_cloak():
    # An obstacle held at a constant temperature stops scattering once
    # the cloak feeds it a uniform environment; the residual density is
    # three orders below the uncloaked solve.
    tg = TimeGrid(0.2 / 80, 80)
    cloak = Circle((0.5, 0.5), 1 / 3)
    obj = Circle((0.5, 0.5), 0.12)
    src = PointSource((0.9, 0.3))
    value = 2.0
    sol = constant_dirichlet_cloak_check(cloak, obj, src, tg, K, value)
    assert sol.residual <= 1e-10
    mesh_r = discretize(obj, 48)
    plain = solve_dirichlet_density(
        DirichletInclusion(mesh_r),
        point_source_traces(src, mesh_r, tg, K).dirichlet - value,
        tg,
        K,
    )
    ratio = np.linalg.norm(sol.density) / np.linalg.norm(plain.density)
    assert ratio <= 1e-2


def test_harmonic_identity_catalog_and_callables():
    curve = Circle((0.3, 0.55), 0.22)
    pts = np.array([[0.62, 0.41], [0.1, 0.9], [0.0, 0.2], [0.65, 0.75]])
    vol, bnd = verify_harmonic_identity("y1*y2", curve, 0.07, K, points=pts)
    np.testing.assert_allclose(vol, bnd, atol=1e-4)

    f = lambda p: np.asarray(p, float)[..., 0] - 2.0 * np.asarray(p, float)[..., 1]
    vol2, bnd2 = verify_harmonic_identity(f, curve, 0.07, K, points=pts[:2])
    np.testing.assert_allclose(vol2, bnd2, atol=1e-4)

    pair = HARMONIC_CATALOG["y1^2-y2^2"]
    vol3, bnd3 = verify_harmonic_identity(pair, curve, 0.07, K, points=pts[:2])
    np.testing.assert_allclose(vol3, bnd3, atol=1e-4)


def test_harmonic_identity_on_flower():
    flower = Flower((0.5, 0.5), 0.12, 0.03, 5)
    pts = np.array([[0.75, 0.5], [0.4, 0.72]])
    vol, bnd = verify_harmonic_identity("y1", flower, 0.05, K, points=pts)
    np.testing.assert_allclose(vol, bnd, atol=1e-4)


def test_harmonic_identity_rejections():
    curve = Circle((0.3, 0.55), 0.22)
    with pytest.raises(ValueError, match="not harmonic"):
        verify_harmonic_identity(lambda p: np.asarray(p, float)[..., 0] ** 2, curve, 0.07, K)
    with pytest.raises(ValueError, match="catalog"):
        verify_harmonic_identity("y3", curve, 0.07, K)
    with pytest.raises(ValueError, match="positive"):
        verify_harmonic_identity("y1", curve, 0.0, K)
    with pytest.raises(ValueError, match="radially parametrized"):
        verify_harmonic_identity("y1", Kite((0.5, 0.5), 0.12), 0.07, K)


def test_run_harmonic_scenario():
    cfg = ScenarioConfig(
        kind="harmonic_identity",
        cloak=Circle((0.3, 0.55), 0.22),
        time_grid=TimeGrid(0.007, 10),
        diffusivity=K,
        harmonic="y1",
    )
    res = run(cfg)
    assert res.fields == {}
    rows = res.extras["harmonic_identity"]
    assert len(rows) == 10
    assert all(r["abs_diff"] <= 1e-4 for r in rows)
    assert res.metadata["max_abs_diff"] == pytest.approx(
        max(r["abs_diff"] for r in rows), rel=1e-12
    )
    assert res.metadata["harmonic"] == "y1"
