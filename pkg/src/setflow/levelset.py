"""Level-set mean curvature flow with transport on a uniform grid.

The sets ``Z(t) = {u(., t) <= 0}`` (or ``{u = 0}``) evolve by ``v = H + X . nu``.
"""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ._kernels import redistance2d, step2d, step3d
from .barriers import AmbientField
from .distance import distance_to_cloud, interface_points, signed_distance
from .grid import (SIGN_TOL, ClosedSetMask, Grid, Representation, ScalarField, SpacetimeTrack,
                   write_field)


class EngineError(RuntimeError):
    pass


class DomainTooSmall(EngineError):
    pass


class CFLError(EngineError):
    pass


class NotMeanConvex(ValueError):
    pass


@dataclass(frozen=True)
class FlowParams:
    """Solver controls. ``None`` entries resolve against the grid (``eps_reg = h^2``,
    ``band_width = 8h``, ``sample_dt = max_time / 100``)."""

    max_time: float = 0.5
    cfl: float = 0.2
    eps_reg: float | None = None
    reinit_every: int = 20
    band_width: float | None = None
    sample_dt: float | None = None
    enforce_margin: bool = True
    stop_at_extinction: bool = True

    def resolve(self, grid: Grid) -> "FlowParams":
        h = grid.spacing
        p = replace(self,
                    eps_reg=h * h if self.eps_reg is None else self.eps_reg,
                    band_width=8 * h if self.band_width is None else self.band_width,
                    sample_dt=self.max_time / 100 if self.sample_dt is None else self.sample_dt)
        if not 0 < p.cfl <= 0.5:
            raise ValueError("cfl must lie in (0, 0.5]")
        if not p.eps_reg > 0:
            raise ValueError("eps_reg must be positive")
        if p.band_width < 4 * h - 1e-12:
            raise ValueError("band_width must be at least 4h")
        if not p.max_time > 0 or not p.sample_dt > 0:
            raise ValueError("max_time and sample_dt must be positive")
        if p.reinit_every < 0:
            raise ValueError("reinit_every must be >= 0")
        return p

    def time_step(self, grid: Grid, chi: float = 0.0) -> float:
        dt = self.cfl * grid.spacing ** 2 / (2 * grid.dim)
        if chi > 0:
            dt = min(dt, self.cfl * grid.spacing / chi)
        return dt


# --- reinitialization ------------------------------------------------------------


def _band_candidates(grid: Grid, pts: np.ndarray, reach: float) -> np.ndarray:
    seed = np.zeros(grid.counts, dtype=bool)
    idx = np.rint((pts - np.asarray(grid.origin)) / grid.spacing).astype(int)
    idx = np.clip(idx, 0, np.asarray(grid.counts) - 1)
    seed[tuple(idx.T)] = True
    r = int(math.ceil(reach / grid.spacing)) + 1
    return ndimage.maximum_filter(seed, size=2 * r + 1, mode="constant")


def _first_layer(values: np.ndarray) -> np.ndarray:
    """Nodes with a face neighbour on the other side of the zero level."""
    neg = values <= 0
    layer = np.zeros(values.shape, dtype=bool)
    for ax in range(values.ndim):
        a = [slice(None)] * values.ndim
        b = [slice(None)] * values.ndim
        a[ax], b[ax] = slice(0, -1), slice(1, None)
        a, b = tuple(a), tuple(b)
        cross = neg[a] != neg[b]
        layer[a] |= cross
        layer[b] |= cross
    return layer


def _closest_point_distance(values, grid, x, d0, iters: int = 6):
    """Distance from ``x`` to the zero set of the cubic-spline interpolant of ``values``.

    Alternates a Newton projection onto the zero set with a tangential move toward
    ``x``; falls back to ``d0`` where the iteration fails.
    """
    h = grid.spacing
    origin = np.asarray(grid.origin)
    coef = ndimage.spline_filter(values, order=3, mode="nearest")
    eps = 1e-4 * h
    eye = np.eye(grid.dim) * eps

    def interp(pts):
        return ndimage.map_coordinates(coef, ((pts - origin) / h).T, order=3, mode="nearest",
                                       prefilter=False)

    def grad(pts):
        return np.stack([(interp(pts + e) - interp(pts - e)) / (2 * eps) for e in eye], axis=1)

    def project(y):
        g = grad(y)
        return y - (interp(y) / np.maximum((g * g).sum(1), 1e-24))[:, None] * g

    y = project(project(x.copy()))
    for _ in range(iters):
        g = grad(y)
        n = g / np.maximum(np.linalg.norm(g, axis=1), 1e-12)[:, None]
        r = x - y
        y = project(y + r - (r * n).sum(1)[:, None] * n)
    d = np.linalg.norm(x - y, axis=1)
    bad = ~np.isfinite(d) | (np.abs(d - d0) > h)
    d[bad] = d0[bad]
    return d


def _redistance(values: np.ndarray, grid: Grid, cap: float | None, keep: bool = True,
                refine: float = 3.0) -> np.ndarray:
    """Signed distance to ``{u = 0}``, optionally capped at ``+-cap``.

    Nodes within ``refine`` cells get the distance to the zero set of a cubic
    interpolant; farther nodes get the distance to a piecewise-linear front (marching
    squares in 2-D, edge crossings in 3-D). With ``keep`` the nodes next to a sign
    change retain their values, so repeated redistancing does not move the front.
    """
    sign = np.where(values <= 0, -1.0, 1.0)
    if not (values.min() <= 0 < values.max()):
        return sign * grid.sentinel
    h = grid.spacing
    if grid.dim == 2:
        reach = (grid.diameter if cap is None else cap) / h
        return redistance2d(np.ascontiguousarray(values), h, reach, refine, 6, keep)
    pts = interface_points(ScalarField(grid, values))
    tree = cKDTree(pts)
    coords = np.asarray(grid.origin) + h * np.indices(grid.counts).reshape(grid.dim, -1).T
    if cap is None:
        out = sign * distance_to_cloud(pts, coords, tree).reshape(grid.counts)
    else:
        out = sign * cap
        flat = np.flatnonzero(_band_candidates(grid, pts, cap))
        out.reshape(-1)[flat] = sign.reshape(-1)[flat] * np.minimum(
            distance_to_cloud(pts, coords[flat], tree), cap)
    layer = _first_layer(values) if keep else np.zeros(values.shape, dtype=bool)
    flat = np.flatnonzero((np.abs(out) < refine * h).reshape(-1) & ~layer.reshape(-1))
    if flat.size:
        d = _closest_point_distance(values, grid, coords[flat], np.abs(out.reshape(-1)[flat]))
        out.reshape(-1)[flat] = sign.reshape(-1)[flat] * d
    out[layer] = values[layer]
    return out


def reinitialize(u: ScalarField) -> ScalarField:
    """Signed distance to the zero crossings of ``u`` (negative where ``u <= 0``).

    With no zero crossing the field is returned as ``+-sentinel`` with the sign of ``u``.
    """
    return ScalarField(u.grid, _redistance(np.array(u.values), u.grid, None, keep=False), u.time)


# --- evolution -------------------------------------------------------------------


class TrackRecorder:
    """Collects every track produced by :func:`evolve` inside :func:`recording`, and
    optionally dumps fields every ``dump_every`` steps under ``dump_root/flow_NNN``."""

    def __init__(self, dump_root=None, dump_every: int = 0):
        self.dump_root = None if dump_root is None else Path(dump_root)
        self.dump_every = int(dump_every)
        self.tracks: list[SpacetimeTrack] = []

    def next_dump_dir(self) -> Path | None:
        if self.dump_root is None or self.dump_every <= 0:
            return None
        d = self.dump_root / f"flow_{len(self.tracks):03d}"
        d.mkdir(parents=True, exist_ok=True)
        return d


_RECORDER: ContextVar[TrackRecorder | None] = ContextVar("setflow_track_recorder", default=None)


@contextmanager
def recording(dump_root=None, dump_every: int = 0):
    rec = TrackRecorder(dump_root, dump_every)
    token = _RECORDER.set(rec)
    try:
        yield rec
    finally:
        _RECORDER.reset(token)


def _mask_values(values, grid, rep):
    return ClosedSetMask.from_field(ScalarField(grid, values), rep).inside


def _is_empty(values, grid, rep) -> bool:
    if rep is Representation.SUBLEVEL:
        return values.min() > SIGN_TOL
    return not _mask_values(values, grid, rep).any()


def evolve(u0: ScalarField, X: AmbientField | None = None, params: FlowParams = FlowParams(),
           representation: Representation = Representation.SUBLEVEL,
           signed: bool | None = None, dump_dir=None, dump_every: int = 0) -> SpacetimeTrack:
    """Evolve ``u0`` to ``u0.time + params.max_time`` and sample every ``sample_dt``.

    Signed inputs (the default for the sublevel representation) are periodically
    redistanced and only a band ``|u| < band_width`` is updated; unsigned inputs are
    updated on the whole grid. If the set dies, a sample at the first empty step is
    inserted and the remaining samples repeat the final field.
    """
    grid = u0.grid
    p = params.resolve(grid)
    h = grid.spacing
    rec = _RECORDER.get()
    if rec is not None and dump_dir is None and rec.dump_every > 0:
        dump_dir, dump_every = rec.next_dump_dir(), rec.dump_every
    signed = (representation is Representation.SUBLEVEL) if signed is None else signed
    Xv = None
    chi = 0.0
    if X is not None and not X.is_zero:
        X = X.validate(grid)
        chi = float(X.sup_norm)
        Xv = X.nodal(grid)
    dt = p.time_step(grid, chi)
    if Xv is None:
        Xv = np.zeros((grid.dim,) + (1,) * grid.dim)
    banded = signed and p.reinit_every > 0
    cap = p.band_width + 3 * h

    u = np.array(u0.values, dtype=float)
    if banded:
        u = _redistance(u, grid, cap)
    t0 = float(u0.time)
    t_end = t0 + p.max_time
    n_samples = max(1, int(round(p.max_time / p.sample_dt)))
    lattice = t0 + p.max_time * np.arange(n_samples + 1) / n_samples

    margin = grid.margin_mask(p.band_width)
    enforce = p.enforce_margin and not (_mask_values(u, grid, representation) & margin).any()
    blowup = 1e6 * (1.0 + float(np.abs(u0.values).max()))

    all_nodes = np.ascontiguousarray(np.indices(grid.counts).reshape(grid.dim, -1).T.astype(np.int64))

    def active_nodes():
        if not banded:
            return all_nodes
        return np.ascontiguousarray(np.argwhere(np.abs(u) < p.band_width).astype(np.int64))

    act = active_nodes()
    samples = [(t0, ScalarField(grid, u, t0))]
    dumps = 0

    def maybe_dump(step_idx, t):
        nonlocal dumps
        if dump_dir is not None and dump_every > 0 and step_idx % dump_every == 0:
            write_field(Path(dump_dir) / f"field_{dumps:05d}", ScalarField(grid, u, t))
            dumps += 1

    maybe_dump(0, t0)
    extinct = _is_empty(u, grid, representation)
    t = t0
    step_idx = 0
    k = 1
    while k <= n_samples and not (extinct and p.stop_at_extinction):
        target = lattice[k]
        while t < target - 1e-14:
            tau = min(dt, target - t)
            if grid.dim == 2:
                umin, amax = step2d(u, Xv[0], Xv[1], chi > 0, act, h, tau, p.eps_reg)
            else:
                umin, amax = step3d(u, Xv[0], Xv[1], Xv[2], chi > 0, act, h, tau, p.eps_reg)
            step_idx += 1
            t = target if target - t <= dt else t + tau
            if not amax < blowup:
                raise CFLError(f"solution blew up at t={t:.6g} (|u| -> {amax:.3g}); reduce cfl")
            if banded and step_idx % p.reinit_every == 0:
                u[...] = _redistance(u, grid, cap)
                act = active_nodes()
            maybe_dump(step_idx, t)
            gate = umin > (SIGN_TOL if representation is Representation.SUBLEVEL else h)
            if p.stop_at_extinction and gate and _is_empty(u, grid, representation):
                extinct = True
                if t < target - 1e-14:
                    samples.append((t, ScalarField(grid, u, t)))
                break
        if extinct and p.stop_at_extinction and samples[-1][0] < target - 1e-14:
            break
        samples.append((target, ScalarField(grid, u, target)))
        if enforce and (_mask_values(u, grid, representation) & margin).any():
            raise DomainTooSmall(f"the set reached the frozen margin ({p.band_width:.4g}) at t={target:.6g}; "
                                 "enlarge the box")
        if not extinct:
            extinct = _is_empty(u, grid, representation)
        k += 1
    last = samples[-1][0]
    final = samples[-1][1]
    for tt in lattice:
        if tt > last + 1e-14:
            samples.append((float(tt), ScalarField(grid, final.values, float(tt))))
    track = SpacetimeTrack(samples, representation, dt,
                           {"params": p, "chi": chi, "steps": step_idx, "lattice": lattice,
                            "extinct": bool(extinct), "banded": banded})
    if rec is not None:
        rec.tracks.append(track)
    return track


def extinction_time(track: SpacetimeTrack, representation: Representation | None = None):
    """First sample time whose set is empty, or the string ``"survived"``."""
    for i in range(len(track)):
        if track.mask(i, representation).is_empty:
            return float(track.times[i])
    return "survived"


def compose_flows(C: ClosedSetMask, s: float, t: float, X: AmbientField | None = None,
                  params: FlowParams = FlowParams()) -> tuple[ClosedSetMask, ClosedSetMask]:
    """``(F_{s+t}(C), F_t(F_s(C)))``, the second restarted from a redistanced mask."""
    if s < 0 or t <= 0:
        raise ValueError("need s >= 0 and t > 0")
    u0 = signed_distance(C)
    trA = evolve(u0, X, replace(params, max_time=s + t, sample_dt=s + t))
    maskA = trA.mask(len(trA) - 1, Representation.SUBLEVEL)
    if s == 0:
        u1 = u0
    else:
        trS = evolve(u0, X, replace(params, max_time=s, sample_dt=s))
        u1 = signed_distance(trS.mask(len(trS) - 1, Representation.SUBLEVEL))
    trB = evolve(u1, X, replace(params, max_time=t + s if s == 0 else t,
                                sample_dt=t + s if s == 0 else t))
    maskB = trB.mask(len(trB) - 1, Representation.SUBLEVEL)
    return maskA, maskB


# --- arrival time ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArrivalTimeField:
    grid: Grid
    u: np.ndarray
    domain: np.ndarray

    def superlevel(self, t: float) -> np.ndarray:
        """Nodes of ``Q`` with ``u >= t``; nodes outside ``Q`` never belong."""
        return (self.u >= t) & self.domain

    def level_mask(self, t: float) -> np.ndarray:
        """Nodes of ``{u = t}``: exact hits and nodes next to a sign change of ``u - t``."""
        v = np.where(np.isfinite(self.u), self.u - t, 1.0)
        out = np.abs(v) <= 1e-12
        for ax in range(self.grid.dim):
            a = [slice(None)] * self.grid.dim
            b = [slice(None)] * self.grid.dim
            a[ax], b[ax] = slice(0, -1), slice(1, None)
            a, b = tuple(a), tuple(b)
            cross = (v[a] < 0) != (v[b] < 0)
            out[a] |= cross
            out[b] |= cross
        return out & self.domain

    def thickness(self, t: float) -> float:
        """Twice the largest inscribed radius, in cells, of the nodes that resolve ``{u = t}``.

        A node resolves the level when ``|u - t| <= |grad u| h / 4`` (exact hits included), so a
        sloped level contributes at most one node per grid line while a plateau ``u = t``
        shows up as a thick region.
        """
        h = self.grid.spacing
        fin = np.where(np.isfinite(self.u), self.u, np.nan)
        grads = np.gradient(fin, h) if self.grid.dim > 1 else [np.gradient(fin, h)]
        gn = np.sqrt(sum(g * g for g in grads))
        with np.errstate(invalid="ignore"):
            lm = np.abs(fin - t) <= np.nan_to_num(gn, nan=0.0) * h / 4 + 1e-12
        lm &= self.domain
        if not lm.any():
            return 0.0
        d = ndimage.distance_transform_edt(lm)
        return float(2 * d.max())

    def lipschitz(self) -> float:
        """Largest adjacent difference of finite values divided by h (the constant C)."""
        best = 0.0
        for ax in range(self.grid.dim):
            with np.errstate(invalid="ignore"):  # inf - inf between unreached nodes
                diff = np.diff(self.u, axis=ax)
            fin = np.isfinite(diff)
            if fin.any():
                best = max(best, float(np.abs(diff[fin]).max()))
        return best / self.grid.spacing

    def nested(self, levels) -> bool:
        levels = np.sort(np.asarray(levels, dtype=float))
        masks = [self.superlevel(t) for t in levels]
        return all(not (m2 & ~m1).any() for m1, m2 in zip(masks, masks[1:]))


def arrival_time(track: SpacetimeTrack, Q0: ClosedSetMask) -> ArrivalTimeField:
    """Time at which the front leaves each node of ``Q0`` (linear in time between samples)."""
    grid = track.grid
    grid.check_same(Q0.grid)
    times = track.times
    vals = np.stack([u.values for u in track.fields])
    inside = vals <= SIGN_TOL
    out = np.full(grid.counts, np.inf)
    exited = np.zeros(grid.counts, dtype=bool)
    for k in range(len(times) - 1):
        leave = inside[k] & ~inside[k + 1] & Q0.inside & ~exited
        reenter = exited & inside[k + 1] & Q0.inside
        if reenter.any():
            bad = np.argwhere(reenter)[:10]
            pts = [grid.index_to_point(i).round(6).tolist() for i in bad]
            raise NotMeanConvex(f"{int(reenter.sum())} node(s) re-entered the set after t={times[k]:.6g}, "
                                f"e.g. {pts}")
        a, b = vals[k][leave], vals[k + 1][leave]
        theta = np.clip(-a / np.where(b - a > 0, b - a, 1.0), 0.0, 1.0)
        out[leave] = times[k] + theta * (times[k + 1] - times[k])
        exited |= leave
    return ArrivalTimeField(grid, out, Q0.inside.copy())


# --- diagnostics -----------------------------------------------------------------


def _smoothed(values, eps):
    x = np.clip(values / eps, -1.0, 1.0)
    heav = 0.5 * (1 + x + np.sin(np.pi * x) / np.pi)
    delta = np.where(np.abs(values) < eps, 0.5 / eps * (1 + np.cos(np.pi * x)), 0.0)
    return heav, delta


def track_diagnostics(track: SpacetimeTrack, probes: dict[str, ClosedSetMask] | None = None) -> list[dict]:
    """Per-sample rows: time, sublevel area/volume, zero-set length/area, probe distances."""
    from .distance import interface_distance, signed_distance as _sd

    grid = track.grid
    h = grid.spacing
    cell = h ** grid.dim
    probes = probes or {}
    probe_fields = {k: _sd(m) for k, m in probes.items()}
    rows = []
    for t, u in track.samples:
        heav, delta = _smoothed(u.values, 1.5 * h)
        grads = np.gradient(u.values, h)
        gnorm = np.sqrt(sum(g * g for g in grads))
        row = {"time": t, "volume": float((1 - heav).sum() * cell),
               "interface_measure": float((delta * gnorm).sum() * cell)}
        for k, pf in probe_fields.items():
            row[f"dist_{k}"] = interface_distance(u, pf)
        rows.append(row)
    return rows


def write_track_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    if not rows:
        raise ValueError("no rows")
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
    return path


def level_radius(u: ScalarField, level: float = 0.0, center=None) -> float:
    """Mean distance of the sampled ``{u = level}`` from ``center`` (nan if absent)."""
    pts = interface_points(u, level)
    if len(pts) == 0:
        return float("nan")
    c = np.zeros(u.grid.dim) if center is None else np.asarray(center, dtype=float)
    return float(np.linalg.norm(pts - c, axis=1).mean())
