"""Distance transforms, set distances and Kuratowski limits on node sets."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .grid import (SIGN_TOL, ClosedSetMask, DistanceField, Grid, Representation, ScalarField,
                   SpacetimeMask, SpacetimeTrack)


def distance_transform(mask: ClosedSetMask) -> DistanceField:
    """Euclidean distance from every node to the nearest node of ``mask``.

    Returns a field of ``grid.sentinel`` values with ``empty=True`` when the mask is empty.
    """
    grid = mask.grid
    if mask.is_empty:
        return DistanceField(grid, np.full(grid.counts, grid.sentinel), empty=True)
    d = ndimage.distance_transform_edt(~mask.inside, sampling=grid.spacing)
    return DistanceField(grid, d)


def signed_distance(mask: ClosedSetMask) -> ScalarField:
    """Node-based signed distance, negative inside, with the interface half a cell out.

    The sublevel set of the result reproduces ``mask`` exactly.
    """
    grid = mask.grid
    h = grid.spacing
    if mask.is_empty:
        return ScalarField(grid, np.full(grid.counts, grid.sentinel))
    if mask.inside.all():
        return ScalarField(grid, np.full(grid.counts, -grid.sentinel))
    d_out = ndimage.distance_transform_edt(~mask.inside, sampling=h)
    d_in = ndimage.distance_transform_edt(mask.inside, sampling=h)
    values = np.where(mask.inside, -(d_in - 0.5 * h), d_out - 0.5 * h)
    return ScalarField(grid, values)


def set_distance(a: ClosedSetMask, b: ClosedSetMask) -> float:
    """min over nodes of ``a`` of the distance to ``b``; ``grid.sentinel`` if either is empty."""
    a.grid.check_same(b.grid)
    if a.is_empty or b.is_empty:
        return a.grid.sentinel
    if (a.inside & b.inside).any():
        return 0.0
    db = distance_transform(b).values
    return float(db[a.inside].min())


def hausdorff(a: ClosedSetMask, b: ClosedSetMask) -> float:
    a.grid.check_same(b.grid)
    if a.is_empty and b.is_empty:
        return 0.0
    if a.is_empty or b.is_empty:
        return a.grid.sentinel
    da = distance_transform(a).values
    db = distance_transform(b).values
    return float(max(db[a.inside].max(), da[b.inside].max()))


def spacetime_distance(p, q) -> float:
    """Parabolic distance ``max(|x1 - x2|, |t1 - t2|**0.5)`` between ``(x, t)`` pairs."""
    (x1, t1), (x2, t2) = p, q
    dx = float(np.linalg.norm(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)))
    return max(dx, abs(float(t1) - float(t2)) ** 0.5)


def kuratowski_limsup(tracks: list[SpacetimeTrack], threshold: float | None = None,
                      tail: int | None = None) -> SpacetimeMask:
    """Spacetime mask ``{(x, t): liminf_n dist((x, t), Z_n) = 0}``.

    The liminf is approximated by the minimum over the tail of the sequence (the last
    ``tail`` tracks, default the second half) and ``= 0`` by ``<= threshold`` (default 2h).
    """
    if len(tracks) < 2:
        raise ValueError("kuratowski_limsup needs at least two tracks")
    grid = tracks[0].grid
    times = tracks[0].times
    for tr in tracks[1:]:
        grid.check_same(tr.grid)
        if tr.times.shape != times.shape or not np.allclose(tr.times, times, atol=1e-12):
            raise ValueError("tracks must share a time lattice")
    threshold = 2.0 * grid.spacing if threshold is None else threshold
    tail = max(1, len(tracks) // 2) if tail is None else tail
    gaps = np.sqrt(np.abs(times[:, None] - times[None, :]))
    liminf = np.full((len(times),) + grid.counts, np.inf)
    for tr in tracks[-tail:]:
        dists = np.stack([distance_transform(m).values for m in tr.masks()])
        for i in range(len(times)):
            d = np.maximum(dists, gaps[i][(slice(None),) + (None,) * grid.dim]).min(axis=0)
            np.minimum(liminf[i], d, out=liminf[i])
    return SpacetimeMask(grid, times.copy(), liminf <= threshold + 1e-12)


# --- sub-cell interface geometry ----------------------------------------------


def interface_points(u: ScalarField, level: float = 0.0) -> np.ndarray:
    """Points where ``u - level`` changes sign along grid edges, by linear interpolation."""
    grid = u.grid
    v = u.values - level
    origin = np.asarray(grid.origin)
    pts = []
    for ax in range(grid.dim):
        a = [slice(None)] * grid.dim
        b = [slice(None)] * grid.dim
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        va, vb = v[tuple(a)], v[tuple(b)]
        cross = ((va <= 0) & (vb > 0)) | ((va > 0) & (vb <= 0))
        idx = np.argwhere(cross)
        if idx.size == 0:
            continue
        fa, fb = va[cross], vb[cross]
        theta = fa / (fa - fb)
        p = origin + grid.spacing * idx.astype(float)
        p[:, ax] += grid.spacing * theta
        pts.append(p)
    if not pts:
        return np.empty((0, grid.dim))
    return np.concatenate(pts)


def interface_segments(u: ScalarField, level: float = 0.0) -> np.ndarray:
    """Marching-squares segments of ``{u = level}`` on a 2-D grid, shape ``(n, 2, 2)``.

    Saddle cells are split according to the sign of the cell-centre average.
    """
    grid = u.grid
    if grid.dim != 2:
        raise ValueError("interface_segments is 2-D only")
    v = u.values - level
    h = grid.spacing
    v00, v10, v01, v11 = v[:-1, :-1], v[1:, :-1], v[:-1, 1:], v[1:, 1:]
    ox, oy = grid.origin
    ii, jj = np.meshgrid(np.arange(v00.shape[0]), np.arange(v00.shape[1]), indexing="ij")
    x0, y0 = ox + h * ii, oy + h * jj

    def cross(a, b):
        return (a <= 0) != (b <= 0)

    def frac(a, b):
        d = a - b
        return np.where(d != 0, a / np.where(d != 0, d, 1.0), 0.5)

    # edges: bottom (00-10), right (10-11), top (01-11), left (00-01)
    edges = [
        (cross(v00, v10), x0 + h * frac(v00, v10), y0),
        (cross(v10, v11), x0 + h, y0 + h * frac(v10, v11)),
        (cross(v01, v11), x0 + h * frac(v01, v11), y0 + h),
        (cross(v00, v01), x0, y0 + h * frac(v00, v01)),
    ]
    hit = np.stack([e[0] for e in edges])
    px = np.stack([e[1] for e in edges])
    py = np.stack([e[2] for e in edges])
    count = hit.sum(axis=0)
    segs = []
    two = count == 2
    if two.any():
        idx = np.argwhere(two)
        which = hit[:, two]
        first = np.argmax(which, axis=0)
        second = 3 - np.argmax(which[::-1], axis=0)
        sx, sy = px[:, two], py[:, two]
        cols = np.arange(len(idx))
        segs.append(np.stack([np.stack([sx[first, cols], sy[first, cols]], -1),
                              np.stack([sx[second, cols], sy[second, cols]], -1)], axis=1))
    four = count == 4
    if four.any():
        center = 0.25 * (v00 + v10 + v01 + v11)[four]
        sx, sy = px[:, four], py[:, four]
        neg00 = v00[four] <= 0
        # pair edges so that the centre's sign region is connected
        join = (center <= 0) == neg00
        pa = np.where(join, 0, 0), np.where(join, 1, 3)
        pb = np.where(join, 2, 2), np.where(join, 3, 1)
        cols = np.arange(int(four.sum()))
        for e1, e2 in (pa, pb):
            segs.append(np.stack([np.stack([sx[e1, cols], sy[e1, cols]], -1),
                                  np.stack([sx[e2, cols], sy[e2, cols]], -1)], axis=1))
    if not segs:
        return np.empty((0, 2, 2))
    return np.concatenate(segs)


def distance_to_segments(segs: np.ndarray, queries: np.ndarray, k: int = 8) -> np.ndarray:
    """Exact distance from ``queries`` to the nearest of the ``k`` segments whose
    midpoints are closest."""
    mids = 0.5 * (segs[:, 0] + segs[:, 1])
    k = min(k, len(segs))
    _, idx = cKDTree(mids).query(queries, k=k)
    idx = idx.reshape(len(queries), k)
    a = segs[idx, 0]
    e = segs[idx, 1] - a
    ee = np.einsum("nkd,nkd->nk", e, e)
    s = np.einsum("nkd,nkd->nk", queries[:, None, :] - a, e) / np.where(ee > 0, ee, 1.0)
    s = np.clip(s, 0.0, 1.0)
    foot = a + s[..., None] * e
    return np.linalg.norm(queries[:, None, :] - foot, axis=-1).min(axis=1)


def distance_to_cloud(points: np.ndarray, queries: np.ndarray, tree: cKDTree | None = None,
                      k: int = 2, max_chord: float | None = None) -> np.ndarray:
    """Distance from ``queries`` to a sampled interface, refined onto chords.

    The nearest ``k`` samples are found with a k-d tree; the distance to the chord through
    the two nearest samples replaces the point distance where the foot lies on the chord
    and the chord is no longer than ``max_chord`` (default: twice the largest
    nearest-neighbour spacing of the samples).
    """
    tree = cKDTree(points) if tree is None else tree
    k = min(k, len(points))
    if k > 1 and max_chord is None:
        max_chord = 2.0 * float(tree.query(points, k=2)[0][:, 1].max())
    d, i = tree.query(queries, k=k)
    if k == 1:
        return np.atleast_1d(d).astype(float)
    best = d[:, 0].copy()
    p0 = points[i[:, 0]]
    p1 = points[i[:, 1]]
    e = p1 - p0
    ee = np.einsum("ij,ij->i", e, e)
    ok = (ee > 1e-30) & (ee <= max_chord ** 2)
    s = np.zeros(len(queries))
    s[ok] = np.einsum("ij,ij->i", queries[ok] - p0[ok], e[ok]) / ee[ok]
    on = ok & (s > 0) & (s < 1)
    foot = p0[on] + s[on, None] * e[on]
    best[on] = np.minimum(best[on], np.linalg.norm(queries[on] - foot, axis=1))
    return best


def interface_distance(u: ScalarField, v: ScalarField,
                       rep: Representation = Representation.SUBLEVEL) -> float:
    """Sub-cell distance between the sets encoded by two fields.

    Zero when the node sets meet; ``grid.sentinel`` when either set is empty. Otherwise the
    distance between the sampled interfaces, which equals the set distance for disjoint sets.
    """
    u.grid.check_same(v.grid)
    ma = ClosedSetMask.from_field(u, rep)
    mb = ClosedSetMask.from_field(v, rep)
    if ma.is_empty or mb.is_empty:
        return u.grid.sentinel
    if (ma.inside & mb.inside).any():
        return 0.0
    pa, pb = interface_points(u), interface_points(v)
    if len(pa) == 0 or len(pb) == 0:
        return set_distance(ma, mb)
    da = distance_to_cloud(pb, pa).min()
    db = distance_to_cloud(pa, pb).min()
    return float(min(da, db))


def interface_hausdorff(u: ScalarField, v: ScalarField, level: float = 0.0) -> float:
    """Hausdorff distance between the sampled level sets ``{u = level}`` and ``{v = level}``.

    Zero when both are absent and ``grid.sentinel`` when exactly one is.
    """
    u.grid.check_same(v.grid)
    pa, pb = interface_points(u, level), interface_points(v, level)
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return u.grid.sentinel
    return float(max(distance_to_cloud(pb, pa).max(), distance_to_cloud(pa, pb).max()))


def points_distance(u: ScalarField, points, rep: Representation = Representation.SUBLEVEL) -> np.ndarray:
    """Sub-cell distances from many points to the set encoded by ``u``."""
    grid = u.grid
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mask = ClosedSetMask.from_field(u, rep)
    if mask.is_empty:
        return np.full(len(points), grid.sentinel)
    pts = interface_points(u)
    if len(pts) == 0:
        tree = cKDTree(mask.points())
        out = tree.query(points)[0]
    else:
        out = distance_to_cloud(pts, points)
    if rep is Representation.SUBLEVEL:
        val = ndimage.map_coordinates(u.values, ((points - np.asarray(grid.origin)) / grid.spacing).T,
                                      order=1, mode="nearest")
        out = np.where(val <= SIGN_TOL, 0.0, out)
    return out


def point_distance(u: ScalarField, point, rep: Representation = Representation.SUBLEVEL) -> float:
    """Sub-cell distance from ``point`` to the set encoded by ``u``."""
    return float(points_distance(u, point, rep)[0])


def mask_from_points(grid: Grid, points: np.ndarray) -> ClosedSetMask:
    """Mask of the nodes nearest to each point."""
    inside = np.zeros(grid.counts, dtype=bool)
    if len(points):
        idx = np.rint((points - np.asarray(grid.origin)) / grid.spacing).astype(int)
        idx = np.clip(idx, 0, np.asarray(grid.counts) - 1)
        inside[tuple(idx.T)] = True
    return ClosedSetMask(grid, inside)
