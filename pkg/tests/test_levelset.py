import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from setflow.barriers import constant_field, radial_field
from setflow.distance import hausdorff, signed_distance
from setflow.grid import ClosedSetMask, Grid, Representation, ScalarField, read_field
from setflow.harness import radius_ode
from setflow.levelset import (CFLError, DomainTooSmall, FlowParams, NotMeanConvex, arrival_time,
                              compose_flows, evolve, extinction_time, level_radius, recording,
                              reinitialize, track_diagnostics, write_track_csv)

from conftest import disk_field


def test_flow_params_validation(grid32):
    with pytest.raises(ValueError):
        FlowParams(cfl=0.6).resolve(grid32)
    with pytest.raises(ValueError):
        FlowParams(band_width=grid32.spacing).resolve(grid32)
    with pytest.raises(ValueError):
        FlowParams(eps_reg=0.0).resolve(grid32)
    p = FlowParams().resolve(grid32)
    assert p.eps_reg == grid32.spacing ** 2 and p.band_width == 8 * grid32.spacing
    assert p.time_step(grid32) == pytest.approx(0.2 * grid32.spacing ** 2 / 4)
    assert p.time_step(grid32, chi=100.0) == pytest.approx(min(0.2 * grid32.spacing ** 2 / 4, 0.2 * grid32.spacing / 100))
    assert p.time_step(grid32, chi=1e4) == pytest.approx(0.2 * grid32.spacing / 1e4)


# --- exact solutions -------------------------------------------------------------


def test_circle_radius_follows_the_radius_law():
    g = Grid.box((-1.25, -1.25), (1.25, 1.25), 1 / 64)
    tr = evolve(disk_field(g), None, FlowParams(max_time=0.45, cfl=0.5, sample_dt=0.05))
    for t, u in tr.samples:
        assert abs(level_radius(u) - math.sqrt(1 - 2 * t)) <= 2 * g.spacing


def test_circle_extinction_coarse():
    g = Grid.box((-1.25, -1.25), (1.25, 1.25), 1 / 64)
    tr = evolve(disk_field(g), None, FlowParams(max_time=0.6, cfl=0.5, sample_dt=0.0025))
    assert extinction_time(tr) == pytest.approx(0.5, abs=0.01)


def test_half_space_is_stationary():
    g = Grid.box((-1, -1), (1, 1), 1 / 32)
    u0 = ScalarField(g, g.coords()[..., 0])
    tr = evolve(u0, None, FlowParams(max_time=0.1, cfl=0.5, reinit_every=0))
    assert np.abs(tr.final().values - u0.values).max() <= 1e-6
    assert extinction_time(tr) == "survived"
    banded = evolve(u0, None, FlowParams(max_time=0.1, cfl=0.5))
    band = np.abs(u0.values) < 4 * g.spacing
    assert np.abs(banded.final().values - u0.values)[band].max() <= 1e-6


@pytest.mark.parametrize("a", [0.5, -1.0])
def test_half_space_translates_with_the_field(a):
    g = Grid.box((-1, -1), (1, 1), 1 / 32)
    u0 = ScalarField(g, g.coords()[..., 0])
    tr = evolve(u0, constant_field((a, 0.0)), FlowParams(max_time=0.2, cfl=0.5, sample_dt=0.05))
    for t, u in tr.samples:
        row = u.values[:, g.counts[1] // 2]
        x = np.asarray(g.axes()[0])
        k = int(np.argmax(row > 0))
        crossing = x[k - 1] - row[k - 1] * (x[k] - x[k - 1]) / (row[k] - row[k - 1])
        assert abs(crossing - a * t) <= 2 * g.spacing


def test_extinction_with_radial_field_matches_the_ode():
    g = Grid.box((-1, -1), (1, 1), 1 / 64)
    tr = evolve(disk_field(g, radius=0.5), radial_field(1.0),
                FlowParams(max_time=0.25, cfl=0.5, sample_dt=0.001))
    T = extinction_time(tr)
    times = np.linspace(0, 0.25, 2501)
    r = radius_ode([0.5], 0.25, kappa=1.0, times=times)[:, 0]
    T_ode = times[np.argmax(r == 0)]
    assert abs(T - T_ode) <= 0.03 * T_ode


def test_domain_too_small():
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 32)
    with pytest.raises(DomainTooSmall):
        evolve(disk_field(g, (-0.4, 0.0), 0.8), constant_field((10.0, 0.0)), FlowParams(max_time=0.2, cfl=0.5))


def test_cfl_guard(monkeypatch):
    g = Grid.box((-1, -1), (1, 1), 1 / 32)
    monkeypatch.setattr(FlowParams, "time_step", lambda self, grid, chi=0.0: 5 * grid.spacing ** 2)
    with pytest.raises(CFLError):
        evolve(disk_field(g, radius=0.5), None, FlowParams(max_time=0.5, cfl=0.5, reinit_every=0, enforce_margin=False))


# --- reinitialization ------------------------------------------------------------


def _sd_error(u, sd, g, width=0.3):
    band = np.abs(sd) < width
    return np.abs(u - sd)[band].max()


def test_reinitialize_rescaled_distance():
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 32)
    sd = disk_field(g).values
    out = reinitialize(ScalarField(g, 2 * sd))
    assert _sd_error(out.values, sd, g) <= g.spacing / 2


def test_reinitialize_is_a_fixed_point_on_distances():
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 32)
    sd = disk_field(g).values
    assert _sd_error(reinitialize(ScalarField(g, sd)).values, sd, g) <= 1e-3


def test_reinitialize_restores_unit_gradient():
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 32)
    sd = disk_field(g).values
    kinked = np.where(sd > 0.2, 0.2 + 5 * (sd - 0.2), sd)
    out = reinitialize(ScalarField(g, kinked)).values
    grad = np.linalg.norm(np.stack(np.gradient(out, g.spacing)), axis=0)
    band = (np.abs(sd) < 0.5) & (np.abs(np.linalg.norm(g.coords(), axis=-1)) > 0.3)
    assert np.abs(grad - 1)[band].max() <= 0.1
    ref = signed_distance(ScalarField(g, kinked).sublevel()).values
    assert np.abs(out - ref)[band].max() <= g.spacing


def test_reinitialize_empty_zero_set_keeps_the_sign():
    g = Grid.box((-1, -1), (1, 1), 1 / 16)
    out = reinitialize(ScalarField(g, np.full(g.counts, 0.7)))
    assert np.all(out.values > 0)


# --- scheme properties -----------------------------------------------------------


@given(st.integers(0, 2 ** 31 - 1))
def test_scheme_is_monotone(seed):
    # smooth random pairs u0 <= v0; nodewise white-noise gaps are out of scope
    rng = np.random.default_rng(seed)
    g = Grid.box((-1, -1), (1, 1), 1 / 24)
    x = g.coords()
    u0 = disk_field(g, rng.uniform(-0.2, 0.2, 2), rng.uniform(0.3, 0.5)).values
    k, ph = rng.uniform(-3, 3, (3, 2)), rng.uniform(0, 2 * np.pi, 3)
    gap = rng.uniform(0, 0.05) + sum(0.02 * (1 + np.cos(x @ k[i] + ph[i])) for i in range(3))
    p = FlowParams(max_time=0.02, cfl=0.5, reinit_every=0, sample_dt=0.01)
    X = constant_field(rng.uniform(-1, 1, 2))
    tu, tv = evolve(ScalarField(g, u0), X, p), evolve(ScalarField(g, u0 + gap), X, p)
    for (_, a), (_, b) in zip(tu.samples, tv.samples):
        assert np.all(a.values <= b.values + 1e-12)


@given(st.integers(-3, 3), st.integers(-3, 3))
def test_translation_equivariance(di, dj):
    # the clipped start is flat near the faces, so the faces never see the flow
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 16)
    p = FlowParams(max_time=0.002, cfl=0.5, reinit_every=0, sample_dt=0.002)

    u0 = np.minimum(disk_field(g, (0.0, 0.0), 0.6).values, 0.3)
    a = evolve(ScalarField(g, u0), None, p).final().values
    b = evolve(ScalarField(g, np.roll(u0, (di, dj), axis=(0, 1))), None, p).final().values
    assert np.array_equal(np.roll(a, (di, dj), axis=(0, 1)), b)


# --- semigroup, arrival time, diagnostics ----------------------------------------


def test_compose_flows_examples(grid32):
    C = disk_field(grid32).sublevel()
    p = FlowParams(max_time=0.2, cfl=0.5)
    A, B = compose_flows(C, 0.1, 0.1, None, p)
    assert hausdorff(A, B) <= 3 * grid32.spacing
    A0, B0 = compose_flows(C, 0.0, 0.1, None, p)
    assert np.array_equal(A0.inside, B0.inside)
    E = ClosedSetMask.empty(grid32)
    Ae, Be = compose_flows(E, 0.05, 0.05, None, p)
    assert Ae.is_empty and Be.is_empty


def test_arrival_time_of_the_disk(grid32):
    u0 = disk_field(grid32)
    tr = evolve(u0, None, FlowParams(max_time=0.51, cfl=0.5, sample_dt=0.005))
    a = arrival_time(tr, u0.sublevel())
    R = np.linalg.norm(grid32.coords(), axis=-1)
    inner = R <= 0.9
    assert np.abs(a.u - (1 - R ** 2) / 2)[inner].max() <= 3 * grid32.spacing
    assert np.all(np.isinf(a.u[R > 1.05]))
    assert a.nested(np.linspace(0, 0.5, 26))
    assert max(a.thickness(t) for t in np.linspace(0.02, 0.48, 24)) <= 2
    for t, u in tr.samples[::10]:
        sup = ClosedSetMask(grid32, a.superlevel(t))
        if not u.sublevel().is_empty:
            assert hausdorff(sup, u.sublevel()) <= grid32.spacing + 1e-12


def test_arrival_time_rejects_reentry(grid32):
    u0 = disk_field(grid32, radius=0.5)
    tr = evolve(u0, radial_field(3.0), FlowParams(max_time=0.2, cfl=0.5, sample_dt=0.01))
    shrink = evolve(u0, None, FlowParams(max_time=0.05, cfl=0.5, sample_dt=0.01))
    from setflow.grid import SpacetimeTrack
    glued = SpacetimeTrack(shrink.samples + [(0.05 + t, u) for t, u in tr.samples[1:]])
    with pytest.raises(NotMeanConvex):
        arrival_time(glued, u0.sublevel())


def test_zero_set_representation_for_a_curve(grid32):
    R = np.linalg.norm(grid32.coords(), axis=-1)
    u0 = ScalarField(grid32, np.abs(R - 1.0))
    tr = evolve(u0, None, FlowParams(max_time=0.1, cfl=0.5, sample_dt=0.05),
                representation=Representation.ZERO_SET)
    assert not tr.meta["banded"]
    r = np.linalg.norm(tr.mask(len(tr) - 1).points(), axis=1)
    assert abs(np.median(r) - math.sqrt(1 - 0.2)) <= 2 * grid32.spacing


def test_track_csv_and_dumps(tmp_path, grid32):
    with recording(tmp_path / "dumps", dump_every=5) as rec:
        tr = evolve(disk_field(grid32), None, FlowParams(max_time=0.02, cfl=0.5, sample_dt=0.01))
    assert rec.tracks == [tr]
    dumps = sorted((tmp_path / "dumps" / "flow_000").glob("*.bin"))
    assert len(dumps) >= 2
    assert read_field(dumps[0]).grid == grid32
    rows = track_diagnostics(tr, {"origin": ClosedSetMask(grid32, np.linalg.norm(grid32.coords(), axis=-1) < 0.05)})
    path = write_track_csv(tmp_path / "track.csv", rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,volume,interface_measure,dist_origin"
    assert len(lines) == len(tr) + 1
    assert rows[0]["volume"] == pytest.approx(math.pi, rel=0.01)
    assert rows[0]["interface_measure"] == pytest.approx(2 * math.pi, rel=0.02)
