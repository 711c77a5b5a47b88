import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from setflow.distance import (distance_transform, hausdorff, interface_hausdorff, interface_points,
                              kuratowski_limsup, point_distance, set_distance, signed_distance,
                              spacetime_distance)
from setflow.grid import (ClosedSetMask, Grid, GridMismatchError, Representation, ScalarField,
                          SpacetimeTrack, read_field, write_field)

from conftest import disk_field


def brute_force_edt(mask: ClosedSetMask) -> np.ndarray:
    P = mask.grid.coords().reshape(-1, mask.grid.dim)
    S = mask.points()
    d = np.sqrt(((P[:, None, :] - S[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return d.reshape(mask.grid.counts)


# --- Grid ------------------------------------------------------------------------


def test_grid_invariants():
    g = Grid.box((0, 0), (1, 2), 0.1)
    assert g.counts == (11, 21)
    assert np.allclose(g.extent, np.array(g.counts) * g.spacing)
    with pytest.raises(ValueError):
        Grid((0.0, 0.0), 0.1, (4, 20))
    with pytest.raises(ValueError):
        Grid((0.0,), 0.1, (20,))


def test_grid_mismatch_is_an_error():
    a = ClosedSetMask.empty(Grid.box((0, 0), (1, 1), 0.1))
    b = ClosedSetMask.empty(Grid.box((0, 0), (1, 1), 0.05))
    with pytest.raises(GridMismatchError):
        set_distance(a, b)


def test_fields_reject_nonfinite_values():
    g = Grid.box((0, 0), (1, 1), 0.1)
    v = np.zeros(g.counts)
    v[3, 3] = np.nan
    with pytest.raises(ValueError):
        ScalarField(g, v)


def test_mask_representations_follow_the_generating_field():
    g = Grid.box((-1, -1), (1, 1), 0.05)
    u = disk_field(g, radius=0.5)
    sub = u.sublevel()
    assert np.array_equal(sub.inside, u.values <= 1e-12)
    zs = u.zero_set()
    assert zs.representation is Representation.ZERO_SET
    # every zero-set node is within a cell of the circle
    r = np.linalg.norm(zs.points(), axis=1)
    assert np.all(np.abs(r - 0.5) <= g.spacing + 1e-12)


def test_field_dump_round_trip(tmp_path):
    g = Grid.box((-1, -1), (1, 1), 0.1)
    u = disk_field(g, radius=0.5).with_values(disk_field(g, radius=0.5).values, time=0.25)
    path = write_field(tmp_path / "u", u)
    back = read_field(path)
    assert back.grid == g
    assert back.time == 0.25
    assert np.array_equal(back.values, u.values)
    raw = np.fromfile(path, dtype="<f8")
    assert np.array_equal(raw, u.values.ravel(order="C"))


# --- distance transform ----------------------------------------------------------


def test_distance_transform_point_example():
    g = Grid.box((-1, -1), (1, 1), 0.1)
    inside = np.zeros(g.counts, dtype=bool)
    inside[g.nearest_index((0.0, 0.0))] = True
    d = distance_transform(ClosedSetMask(g, inside))
    assert abs(d.values[g.nearest_index((0.5, 0.0))] - 0.5) <= 1e-12


def test_distance_transform_disk_example():
    g = Grid.box((-2, -2), (2, 2), 1 / 64)
    d = distance_transform(disk_field(g).sublevel())
    assert abs(d.values[g.nearest_index((1.5, 0.0))] - 0.5) <= g.spacing


def test_distance_transform_empty_uses_sentinel():
    g = Grid.box((-1, -1), (1, 1), 0.1)
    d = distance_transform(ClosedSetMask.empty(g))
    assert d.empty
    assert np.all(d.values == g.sentinel)
    assert g.sentinel > 10 * g.diameter


@given(st.integers(0, 2 ** 31 - 1))
def test_distance_transform_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = Grid.box((0, 0), (1, 1.5), 1 / 16)
    inside = rng.random(g.counts) < rng.uniform(0.005, 0.1)
    if not inside.any():
        inside[0, 0] = True
    m = ClosedSetMask(g, inside)
    assert np.allclose(distance_transform(m).values, brute_force_edt(m), atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_distance_transform_is_lipschitz(seed):
    rng = np.random.default_rng(seed)
    g = Grid.box((0, 0), (1, 1), 1 / 24)
    inside = rng.random(g.counts) < 0.02
    inside[rng.integers(0, 25), rng.integers(0, 25)] = True
    d = distance_transform(ClosedSetMask(g, inside)).values
    h = g.spacing
    for ax in range(2):
        assert np.all(np.abs(np.diff(d, axis=ax)) <= h + 2 * h + 1e-12)


# --- set distances ---------------------------------------------------------------


def test_set_distance_two_disks():
    g = Grid.box((-3.5, -1.5), (3.5, 1.5), 1 / 32)
    a = disk_field(g, (-2, 0), 1).sublevel()
    b = disk_field(g, (2, 0), 1).sublevel()
    assert abs(set_distance(a, b) - 2.0) <= 2 * g.spacing


def test_set_distance_trivial_cases():
    g = Grid.box((-1, -1), (1, 1), 0.1)
    a = disk_field(g, radius=0.5).sublevel()
    assert set_distance(a, a) == 0
    assert set_distance(a, ClosedSetMask.empty(g)) == g.sentinel
    assert set_distance(ClosedSetMask.empty(g), a) == g.sentinel


@given(st.integers(0, 2 ** 31 - 1))
def test_set_distance_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    g = Grid.box((0, 0), (1, 1), 1 / 20)
    a = ClosedSetMask(g, rng.random(g.counts) < 0.03)
    b = ClosedSetMask(g, rng.random(g.counts) < 0.03)
    assert abs(set_distance(a, b) - set_distance(b, a)) <= 2 * g.spacing


def test_hausdorff_of_concentric_disks():
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 32)
    a = disk_field(g, radius=1.0).sublevel()
    b = disk_field(g, radius=0.6).sublevel()
    assert abs(hausdorff(a, b) - 0.4) <= 2 * g.spacing


def test_signed_distance_and_interface_geometry():
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 32)
    u = disk_field(g)
    sd = signed_distance(u.sublevel())
    band = np.abs(u.values) < 0.5
    assert np.abs(sd.values - u.values)[band].max() <= g.spacing
    pts = interface_points(u)
    assert np.abs(np.linalg.norm(pts, axis=1) - 1).max() < 1e-3
    assert interface_hausdorff(u, disk_field(g, radius=0.9)) == pytest.approx(0.1, abs=2e-3)
    assert point_distance(u, (0.0, 1.5)) == pytest.approx(0.5, abs=1e-3)
    assert point_distance(u, (0.0, 0.5)) == 0.0


# --- spacetime metric and Kuratowski limits --------------------------------------


def test_spacetime_distance_examples():
    assert spacetime_distance(((0, 0), 0), ((3, 4), 0)) == pytest.approx(5)
    assert spacetime_distance(((0, 0), 0), ((0, 0), 4)) == pytest.approx(2)
    assert spacetime_distance(((1, 0), 1), ((0, 0), 1.25)) == pytest.approx(1)


def _circle_track(g, times, T):
    """Exact shrinking circles with extinction time T (radius sqrt(2(T - t)))."""
    R = np.linalg.norm(g.coords(), axis=-1)
    samples = []
    for t in times:
        r = math.sqrt(max(2 * (T - t), 0.0))
        u = R - r if r > 0 else np.maximum(R, 1.0) if t > T else R
        samples.append((t, ScalarField(g, u)))
    return SpacetimeTrack(samples)


def test_kuratowski_constant_sequence_is_idempotent():
    g = Grid.box((-1, -1), (1, 1), 1 / 16)
    tr = _circle_track(g, [0.0, 0.1, 0.2], 0.4)
    lim = kuratowski_limsup([tr, tr, tr])
    for i in range(3):
        assert hausdorff(lim.slice(i), tr.mask(i)) <= 2 * g.spacing


def test_kuratowski_limit_keeps_the_extinction_point():
    g = Grid.box((-1, -1), (1, 1), 1 / 32)
    times = np.linspace(0.4, 0.5, 101)
    seq = [_circle_track(g, times, 0.5 - 0.5 / n) for n in (64, 128, 256, 512)]
    lim = kuratowski_limsup(seq)
    # no member contains (0, 0.5), yet the limit does
    assert all(not tr.mask(len(times) - 1).inside[g.nearest_index((0, 0))] for tr in seq)
    assert lim.contains((0.0, 0.0), 0.5)


def test_kuratowski_interleaved_sequences_give_the_union():
    g = Grid.box((-1, -1), (1, 1), 1 / 16)
    A = SpacetimeTrack([(0.0, disk_field(g, (-0.5, 0), 0.3))])
    Bt = SpacetimeTrack([(0.0, disk_field(g, (0.5, 0), 0.3))])
    lim = kuratowski_limsup([A, Bt, A, Bt], tail=4)
    union = A.mask(0) | Bt.mask(0)
    assert hausdorff(lim.slice(0), union) <= 2 * g.spacing


def test_kuratowski_needs_two_tracks():
    g = Grid.box((-1, -1), (1, 1), 1 / 16)
    with pytest.raises(ValueError):
        kuratowski_limsup([SpacetimeTrack([(0.0, disk_field(g))])])
