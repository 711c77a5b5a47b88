"""Executable comparison checks on computed flows and analytic barriers.

Every check returns a :class:`TheoremCheckReport` whose ``passed`` flag is defined by
``margin >= -tolerance``; the worst slack and its location are always reported.
"""

from __future__ import annotations

import enum
import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .barriers import (AmbientField, BarrierError, ImplicitBarrier, classify_strong, eval_barrier,
                       project_to_boundary, radial_barrier, ricX_lower_bound)
from .distance import (distance_transform, hausdorff, interface_distance, interface_hausdorff,
                       point_distance, points_distance, set_distance, signed_distance)
from .grid import ClosedSetMask, Grid, Representation, ScalarField, SpacetimeTrack
from .levelset import FlowParams, compose_flows, evolve


class TheoremId(str, enum.Enum):
    ShrinkingBall = "ShrinkingBall"
    FiniteSpeed = "FiniteSpeed"
    Compactness = "Compactness"
    KeyProposition = "KeyProposition"
    DistanceTheorem = "DistanceTheorem"
    LongTime = "LongTime"
    Avoidance = "Avoidance"
    StrongBarrierEquiv = "StrongBarrierEquiv"
    BoundaryFlow = "BoundaryFlow"
    Semigroup = "Semigroup"
    Containment = "Containment"
    Extinction = "Extinction"
    ArrivalTime = "ArrivalTime"
    Brakke = "Brakke"
    Separator = "Separator"
    BarrierCalculus = "BarrierCalculus"


class PreconditionError(ValueError):
    """A check's hypothesis does not hold for the supplied configuration."""


@dataclass
class TheoremCheckReport:
    theorem_id: TheoremId
    passed: bool
    margin: float
    tolerance: float
    witness: tuple[float, list[float] | None] = (math.nan, None)
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    def __post_init__(self):
        self.theorem_id = TheoremId(self.theorem_id)
        self.margin = float(self.margin)
        self.tolerance = float(self.tolerance)
        if bool(self.passed) != (self.margin >= -self.tolerance):
            raise ValueError("passed must equal (margin >= -tolerance)")
        self.passed = bool(self.passed)

    def to_record(self) -> dict:
        """JSON-ready record without the runtime (which is reported separately)."""
        t, p = self.witness
        return {"theoremId": self.theorem_id.value, "passed": self.passed,
                "margin": _round(self.margin), "tolerance": _round(self.tolerance),
                "witness": {"time": _round(t), "point": None if p is None else [_round(v) for v in p]},
                "details": _jsonable(self.details)}


def _round(v):
    v = float(v)
    return v if not math.isfinite(v) else float(f"{v:.12g}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return _round(v) if math.isfinite(v) else str(v)
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj if obj is None or isinstance(obj, str) else str(obj)


def report(theorem_id, margin, tolerance, witness=(math.nan, None), details=None,
           started: float | None = None) -> TheoremCheckReport:
    runtime = 0.0 if started is None else _time.perf_counter() - started
    return TheoremCheckReport(theorem_id, margin >= -tolerance, margin, tolerance, witness,
                              details or {}, runtime)


# --- helpers -----------------------------------------------------------------------


def as_field(initial: ClosedSetMask | ScalarField) -> ScalarField:
    """Level-set function of an initial region: a field as is, a mask via its signed distance."""
    return initial if isinstance(initial, ScalarField) else signed_distance(initial)


def as_mask(initial: ClosedSetMask | ScalarField) -> ClosedSetMask:
    return initial.sublevel() if isinstance(initial, ScalarField) else initial


def flow(initial: ClosedSetMask | ScalarField, X: AmbientField | None = None,
         params: FlowParams = FlowParams()) -> SpacetimeTrack:
    """Biggest flow of a region given as a node mask or as a level-set function."""
    return evolve(as_field(initial), X, params)


def closest_pair(a: ClosedSetMask, b: ClosedSetMask):
    """Node of ``a`` nearest to ``b`` and that distance (``None`` if either is empty)."""
    if a.is_empty or b.is_empty:
        return None, a.grid.sentinel
    d = distance_transform(b).values
    dd = np.where(a.inside, d, np.inf)
    idx = np.unravel_index(int(np.argmin(dd)), dd.shape)
    return a.grid.index_to_point(idx), float(dd[idx])


def _is_compact(mask: ClosedSetMask, width: float) -> bool:
    return not (mask.inside & mask.grid.margin_mask(width)).any()


def _gap_precondition(Y0, Z0, params: FlowParams) -> float:
    Y0, Z0 = as_mask(Y0), as_mask(Z0)
    Y0.grid.check_same(Z0.grid)
    h = Y0.grid.spacing
    if Y0.is_empty or Z0.is_empty:
        raise PreconditionError("both initial sets must be nonempty")
    gap = set_distance(Y0, Z0)
    if not gap > 4 * h:
        raise PreconditionError(f"initial sets must be more than 4h={4 * h:.4g} apart (gap {gap:.4g})")
    p = params.resolve(Y0.grid)
    if not (_is_compact(Y0, p.band_width) or _is_compact(Z0, p.band_width)):
        raise PreconditionError("at least one initial set must stay away from the box margin")
    return gap


def _paired_gaps(trY: SpacetimeTrack, trZ: SpacetimeTrack):
    """Sub-cell gap, node-set gap and nearest node of Y at every common sample."""
    rows = []
    for (t, uy), (_, uz) in zip(trY.samples, trZ.samples):
        my = ClosedSetMask.from_field(uy, trY.representation)
        mz = ClosedSetMask.from_field(uz, trZ.representation)
        pt, node_gap = closest_pair(my, mz)
        rows.append((t, interface_distance(uy, uz, trY.representation), node_gap, pt))
    return rows


# --- avoidance and distance --------------------------------------------------------


def check_avoidance(Y0: ClosedSetMask | ScalarField, Z0: ClosedSetMask | ScalarField, X: AmbientField | None = None,
                    params: FlowParams = FlowParams()) -> TheoremCheckReport:
    """Initially disjoint flows stay disjoint; margin is the smallest node-set gap minus h."""
    started = _time.perf_counter()
    _gap_precondition(Y0, Z0, params)
    h = Y0.grid.spacing
    rows = _paired_gaps(flow(Y0, X, params), flow(Z0, X, params))
    worst = min(rows, key=lambda r: r[2])
    gaps = np.array([r[1] for r in rows])
    live = gaps < Y0.grid.sentinel
    drops = np.diff(gaps[live]) if live.sum() > 1 else np.zeros(0)
    return report(TheoremId.Avoidance, worst[2] - h, 0.0,
                  (worst[0], None if worst[3] is None else worst[3].tolist()),
                  {"times": [r[0] for r in rows], "gaps": gaps, "max_gap_drop": float(-min(drops.min(), 0.0))
                   if drops.size else 0.0, "monotone_within_4h": bool(drops.size == 0 or drops.min() >= -4 * h)},
                  started)


def check_exponential_distance(Y0: ClosedSetMask | ScalarField, Z0: ClosedSetMask | ScalarField, X: AmbientField | None = None,
                               params: FlowParams = FlowParams(),
                               theorem_id: TheoremId = TheoremId.DistanceTheorem) -> TheoremCheckReport:
    """``dist(Y(t), Z(t)) >= e^{lam t} e^{-|lam| dt} (d0 - 4h) - 4h`` at every sample.

    ``lam`` is the smallest eigenvalue of the symmetrized Jacobian of ``X`` over the box.
    """
    started = _time.perf_counter()
    _gap_precondition(Y0, Z0, params)
    grid = Y0.grid
    h = grid.spacing
    lam = ricX_lower_bound(X, grid)
    trY, trZ = flow(Y0, X, params), flow(Z0, X, params)
    rows = _paired_gaps(trY, trZ)
    t0, d0 = rows[0][0], rows[0][1]
    dt = float(np.diff(trY.times).max()) if len(trY) > 1 else 0.0
    slack = math.exp(-abs(lam) * dt)
    margins = [g - math.exp(lam * (t - t0)) * slack * (d0 - 4 * h) for t, g, _, _ in rows]
    i = int(np.argmin(margins))
    pt = rows[i][3]
    return report(theorem_id, margins[i], 4 * h, (rows[i][0], None if pt is None else pt.tolist()),
                  {"lambda": lam, "d0": d0, "times": [r[0] for r in rows], "gaps": [r[1] for r in rows]},
                  started)


# --- barrier comparisons -----------------------------------------------------------


def _track_mask(track: SpacetimeTrack, i: int) -> ClosedSetMask:
    return track.mask(i)


def check_strong_barrier_avoidance(track: SpacetimeTrack, b: ImplicitBarrier,
                                   X: AmbientField | None = None, mode: str = "strict",
                                   contact_tol: float = 1e-6, classify: bool = True) -> TheoremCheckReport:
    """A strong barrier disjoint from ``Z`` at its start stays disjoint from ``Z``.

    ``mode="strict"`` requires a strong barrier and reports the smallest node-set gap
    minus h. ``mode="contact"`` accepts any barrier and instead evaluates ``Phi^X`` at the
    first contact, which must be ``>= -contact_tol``.
    """
    started = _time.perf_counter()
    grid = track.grid
    h = grid.spacing
    if mode not in ("strict", "contact"):
        raise ValueError("mode must be 'strict' or 'contact'")
    if mode == "strict" and classify:
        cls = classify_strong(b, X)
        if not cls.strong:
            raise PreconditionError(f"barrier {b.name} is not strong (max Phi = {cls.worst_phi:.3g} at "
                                    f"t={cls.worst_time:.4g})")
    a, e = b.interval
    times = track.times
    idx = [i for i, t in enumerate(times) if a - 1e-12 <= t <= e + 1e-12]
    if not idx:
        return report(TheoremId.StrongBarrierEquiv, grid.sentinel, 0.0, (math.nan, None),
                      {"note": "barrier interval does not meet the track"}, started)
    K0 = ClosedSetMask(grid, b.mask(grid, times[idx[0]]))
    _, gap0 = closest_pair(K0, _track_mask(track, idx[0]))
    if not gap0 > 4 * h:
        raise PreconditionError(f"barrier and set must start more than 4h apart (gap {gap0:.4g})")
    worst = (np.inf, math.nan, None)
    for i in idx:
        t = float(times[i])
        K = ClosedSetMask(grid, b.mask(grid, t))
        Z = _track_mask(track, i)
        pt, gap = closest_pair(K, Z)
        if mode == "contact" and gap < h - 1e-12:
            x = project_to_boundary(b, pt, t)
            rep = eval_barrier(b, x, t, X, project=False)
            return report(TheoremId.StrongBarrierEquiv, rep.PhiX, contact_tol, (t, x.tolist()),
                          {"mode": mode, "contact": True, "PhiX": rep.PhiX, "barrier": b.name}, started)
        if gap < worst[0]:
            worst = (gap, t, None if pt is None else pt.tolist())
    return report(TheoremId.StrongBarrierEquiv, worst[0] - h, 0.0, (worst[1], worst[2]),
                  {"mode": mode, "contact": False, "barrier": b.name, "min_gap": worst[0]}, started)


def strong_barrier_panel(track: SpacetimeTrack, n: int = 6, m: int | None = None, seed: int = 0,
                         radii=(0.1, 0.25), extra: float = 1.0,
                         max_tries: int = 2000) -> list[ImplicitBarrier]:
    """``n`` shrinking balls with ``c = 2m + extra`` placed off ``Z(t0)`` with gap > 4h.

    Centres are drawn from a seeded generator among nodes away from the set and the box
    margin; each ball lives on ``[t0, t0 + 0.9 delta^2 / c]``.
    """
    grid = track.grid
    h = grid.spacing
    m = grid.dim - 1 if m is None else m
    c = 2.0 * m + extra
    t0 = float(track.times[0])
    Z0 = track.mask(0)
    dZ = distance_transform(Z0).values
    margin = grid.margin_mask(8 * h)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        delta = float(rng.uniform(*radii))
        ok = (dZ > delta + 6 * h) & ~ndimage.binary_dilation(margin, iterations=int(delta / h) + 2)
        cand = np.argwhere(ok)
        if len(cand) == 0:
            continue
        centre = grid.index_to_point(cand[rng.integers(len(cand))])
        if any(np.linalg.norm(centre - bb.center) < 1e-9 for bb in out):
            continue
        eff = math.sqrt(delta ** 2 + c * t0)
        out.append(radial_barrier(centre, eff, -c, (t0, t0 + 0.9 * delta ** 2 / c)))
    if len(out) < n:
        raise PreconditionError(f"could only place {len(out)} of {n} panel barriers")
    return out


def check_barrier_panel(track: SpacetimeTrack, barriers, X: AmbientField | None = None,
                        theorem_id: TheoremId = TheoremId.StrongBarrierEquiv) -> TheoremCheckReport:
    started = _time.perf_counter()
    reps = [check_strong_barrier_avoidance(track, b, X) for b in barriers]
    worst = min(reps, key=lambda r: r.margin)
    contacts = sum(not r.passed for r in reps)
    return report(theorem_id, worst.margin, 0.0, worst.witness,
                  {"barriers": len(reps), "contacts": contacts,
                   "margins": [r.margin for r in reps]}, started)


def boundary_track(track: SpacetimeTrack) -> SpacetimeTrack:
    """The same fields read as zero sets: the track of the boundaries."""
    return SpacetimeTrack(list(track.samples), Representation.ZERO_SET, track.time_step, dict(track.meta))


def check_boundary_flow(C: ClosedSetMask, X: AmbientField | None = None, params: FlowParams = FlowParams(),
                        n_barriers: int = 6, seed: int = 0, direct: bool = False) -> TheoremCheckReport:
    """The boundary of the region flow avoids a panel of strong barriers.

    With ``direct=True`` the boundary is also evolved on its own (unsigned distance,
    zero-set representation) and the Hausdorff gap between the two is reported.
    """
    started = _time.perf_counter()
    region = flow(C, X, params)
    bt = boundary_track(region)
    panel = strong_barrier_panel(bt, n_barriers, seed=seed)
    rep = check_barrier_panel(bt, panel, X, TheoremId.BoundaryFlow)
    details = dict(rep.details)
    if direct:
        sd = signed_distance(C)
        tr = evolve(ScalarField(C.grid, np.abs(sd.values)), X, replace(params, stop_at_extinction=False),
                    Representation.ZERO_SET, signed=False)
        details["direct_hausdorff"] = [hausdorff(bt.mask(i), tr.mask(i)) for i in range(min(len(bt), len(tr)))]
    rep.details = details
    rep.runtime = _time.perf_counter() - started
    return rep


# --- level-set structure -----------------------------------------------------------


def check_containment_levels(C: ClosedSetMask, levels, X: AmbientField | None = None,
                             params: FlowParams = FlowParams()) -> TheoremCheckReport:
    """Level sets ``{u = a}`` of one solve stay pairwise disjoint; ``a = 0`` is the biggest flow.

    The solve runs without redistancing so that every level moves by its own curvature.
    Pairs closer than 2h at the start are reported as unresolved and skipped.
    """
    started = _time.perf_counter()
    grid = C.grid
    h = grid.spacing
    p = params.resolve(grid)
    levels = sorted(float(a) for a in levels)
    if any(abs(a) > p.band_width / 2 + 1e-12 for a in levels):
        raise PreconditionError(f"levels must lie within +-{p.band_width / 2:.4g}")
    u0 = signed_distance(C)
    tr = evolve(u0, X, replace(params, reinit_every=0, stop_at_extinction=False),
                signed=False)
    pairs, unresolved = [], []
    for i, a in enumerate(levels):
        for b in levels[i + 1:]:
            (unresolved if b - a <= 2 * h else pairs).append((a, b))
    worst = (np.inf, math.nan, None)
    for t, u in tr.samples:
        masks = {a: ClosedSetMask.from_field(u.with_values(u.values - a), Representation.ZERO_SET)
                 for a in levels}
        for a, b in pairs:
            pt, gap = closest_pair(masks[a], masks[b])
            if gap < worst[0]:
                worst = (gap, t, None if pt is None else pt.tolist())
    details = {"levels": levels, "pairs": pairs, "unresolved": unresolved}
    margin = worst[0] if pairs else grid.sentinel
    if 0.0 in levels:
        direct = flow(C, X, replace(params, stop_at_extinction=False))
        hd = max(interface_hausdorff(a, b) for a, b in zip(tr.fields, direct.fields))
        details["zero_level_hausdorff"] = hd
        margin = min(margin, h - hd)
    return report(TheoremId.Containment, margin, 0.0, (worst[1], worst[2]), details, started)


def check_semigroup(C: ClosedSetMask, s: float, t: float, X: AmbientField | None = None,
                    params: FlowParams = FlowParams(), tol_cells: float = 3.0) -> TheoremCheckReport:
    """``Hausdorff(F_{s+t}(C), F_t(F_s(C))) <= tol_cells * h``."""
    started = _time.perf_counter()
    a, b = compose_flows(C, s, t, X, params)
    hd = hausdorff(a, b)
    h = C.grid.spacing
    return report(TheoremId.Semigroup, tol_cells * h - hd, 0.0, (s + t, None),
                  {"hausdorff": hd, "s": s, "t": t}, started)


def check_compactness(grid: Grid, fields, params: FlowParams = FlowParams()) -> TheoremCheckReport:
    """The empty set stays empty under every listed ambient field."""
    started = _time.perf_counter()
    bad = []
    for X in fields:
        tr = flow(ClosedSetMask.empty(grid), X, params)
        if any(not tr.mask(i).is_empty for i in range(len(tr))):
            bad.append(getattr(X, "name", "zero"))
    return report(TheoremId.Compactness, 0.0 - len(bad), 0.0, (math.nan, None),
                  {"fields": [getattr(X, "name", "zero") for X in fields], "nonempty": bad}, started)


# --- pointwise bounds on tracks ----------------------------------------------------


def check_shrinking_ball(track: SpacetimeTrack, probes, m: int | None = None, eps: float | None = None,
                         slack: float | None = None, extra: float = 0.5) -> TheoremCheckReport:
    """``min(eps, dist(Z(t), p))^2 + c t`` is nondecreasing with ``c = 2m + extra``.

    Also checks ``dist(Z(t), p)^2 <= c (T - t)`` whenever ``p`` lies in ``Z(T)``.
    The margin is the smallest increment of the first quantity against its running maximum.
    """
    started = _time.perf_counter()
    grid = track.grid
    h = grid.spacing
    m = grid.dim - 1 if m is None else m
    c = 2.0 * m + extra
    eps = track.meta.get("params").band_width if eps is None and "params" in track.meta else (eps or 8 * h)
    slack = 4 * h if slack is None else slack
    times = track.times
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    D = np.stack([points_distance(u, probes, track.representation) for u in track.fields])
    worst = (np.inf, math.nan, None)
    backward = np.inf
    for j, p in enumerate(probes):
        d = D[:, j]
        g = np.minimum(eps, d) ** 2 + c * times
        run = np.maximum.accumulate(g)
        inc = g[1:] - run[:-1]
        if inc.size and inc.min() < worst[0]:
            k = int(np.argmin(inc)) + 1
            worst = (float(inc.min()), float(times[k]), p.tolist())
        for T_i in np.flatnonzero(d <= 0.0):
            if T_i:
                backward = min(backward, float((c * (times[T_i] - times[:T_i]) - d[:T_i] ** 2).min()))
    margin = min(worst[0], backward)
    return report(TheoremId.ShrinkingBall, margin, slack, (worst[1], worst[2]),
                  {"c": c, "eps": eps, "monotone_margin": worst[0], "backward_margin": backward}, started)


def check_finite_speed(track: SpacetimeTrack, p, R: float, r: float, chi: float | None = None,
                       m: int | None = None) -> TheoremCheckReport:
    """``dist(Z(t), p) >= R - (2m/r + chi) t - 4h`` for ``t <= (R - r) / (2m/r + chi)``."""
    started = _time.perf_counter()
    grid = track.grid
    h = grid.spacing
    m = grid.dim - 1 if m is None else m
    chi = float(track.meta.get("chi", 0.0)) if chi is None else chi
    if not 0 < r < R:
        raise PreconditionError("need 0 < r < R")
    p = np.asarray(p, dtype=float)
    d0 = point_distance(track.fields[0], p, track.representation)
    if not d0 > R:
        raise PreconditionError(f"dist(Z(0), p) = {d0:.4g} must exceed R = {R}")
    speed = 2.0 * m / r + chi
    window = (R - r) / speed
    t0 = track.start_time
    worst = (np.inf, math.nan)
    for t, u in track.samples:
        if t - t0 > window + 1e-12:
            break
        d = point_distance(u, p, track.representation)
        slack = d - (R - speed * (t - t0))
        if slack < worst[0]:
            worst = (slack, t)
    return report(TheoremId.FiniteSpeed, worst[0], 4 * h, (worst[1], p.tolist()),
                  {"R": R, "r": r, "speed": speed, "window": window}, started)


def check_extinction(track: SpacetimeTrack, expected: float, tol: float) -> TheoremCheckReport:
    from .levelset import extinction_time

    started = _time.perf_counter()
    T = extinction_time(track)
    err = math.inf if T == "survived" else abs(T - expected)
    return report(TheoremId.Extinction, tol - err, 0.0, (math.nan if T == "survived" else T, None),
                  {"extinction_time": T, "expected": expected, "error": err}, started)


# --- one-dimensional radius oracles ------------------------------------------------


def radius_ode(r0, t_end: float, m: int = 1, kappa: float = 0.0, dt: float = 1e-6,
               times=None) -> np.ndarray:
    """RK4 for round spheres about the centre of ``X = kappa x``: ``r' = -m/r + kappa r``.

    The law is the same whether the sphere bounds a ball or the complement of a ball.

    Returns radii at ``times`` (default ``[0, t_end]``), shape ``(len(times), len(r0))``;
    a radius that reaches 0 stays 0.
    """
    r = np.atleast_1d(np.asarray(r0, dtype=float)).copy()
    times = np.array([0.0, t_end]) if times is None else np.asarray(times, dtype=float)
    out = np.empty((len(times), len(r)))
    alive = r > 0

    def rhs(x):
        return np.where(alive, -m / np.maximum(x, 1e-12) + kappa * x, 0.0)

    t = 0.0
    k = 0
    n_steps = int(math.ceil(times.max() / dt)) if len(times) else 0
    for step in range(n_steps + 1):
        while k < len(times) and times[k] <= t + 0.5 * dt:
            out[k] = r
            k += 1
        if k == len(times):
            break
        k1 = rhs(r)
        k2 = rhs(r + 0.5 * dt * k1)
        k3 = rhs(r + 0.5 * dt * k2)
        k4 = rhs(r + dt * k3)
        r = r + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        dead = alive & (r <= 1e-3)
        r[dead] = 0.0
        alive &= ~dead
        t = (step + 1) * dt
    return out


def check_key_proposition(Y0: ClosedSetMask, Z0: ClosedSetMask, X: AmbientField | None = None,
                          params: FlowParams = FlowParams(), c: float = 0.0) -> TheoremCheckReport:
    """Half-gap bounds against the flow of the harmonic separator ``M`` of ``Y0`` and ``Z0``.

    With ``eta = dist(Y0, Z0)``, both ``dist(Y(t), M(t))`` and ``dist(Z(t), M(t))`` must stay
    above ``e^{lam t} e^{-|lam| dt} (eta - 4h) / 2`` up to ``4h``. ``M(t)`` is the boundary
    of the flow of the region ``{h <= c}`` that contains ``Y0``.
    """
    from .separator import extract_separator, regular_level, separator_problem, solve_harmonic

    started = _time.perf_counter()
    _gap_precondition(Y0, Z0, params)
    grid = Y0.grid
    hg = grid.spacing
    lam = ricX_lower_bound(X, grid)
    prob = separator_problem(Y0, Z0)
    hf = solve_harmonic(prob)
    level = regular_level(hf, c)
    extract_separator(prob, hf, level)
    region = ClosedSetMask(grid, hf.values <= level)
    trM = boundary_track(flow(region, X, params))
    trY, trZ = flow(Y0, X, params), flow(Z0, X, params)
    eta = 2 * prob.r
    dt = float(np.diff(trY.times).max()) if len(trY) > 1 else 0.0
    slack = math.exp(-abs(lam) * dt)
    t0 = trY.start_time
    worst = (np.inf, math.nan, None)
    rows = []
    for i, t in enumerate(trY.times):
        mM = trM.mask(i)
        bound = 0.5 * math.exp(lam * (t - t0)) * slack * (eta - 4 * hg)
        for name, tr in (("Y", trY), ("Z", trZ)):
            m = tr.mask(i)
            if m.is_empty or mM.is_empty:
                continue
            pt, d = closest_pair(m, mM)
            d = max(d - 0.5 * hg, 0.0)  # node gap to the sub-cell boundary of M
            rows.append((name, float(t), d, bound))
            if d - bound < worst[0]:
                worst = (d - bound, float(t), pt.tolist())
    return report(TheoremId.KeyProposition, worst[0] if rows else grid.sentinel, 4 * hg, (worst[1], worst[2]),
                  {"eta": eta, "lambda": lam, "level": level, "rows": rows}, started)


def check_arrival_time(C: ClosedSetMask | ScalarField, center, radius: float,
                       params: FlowParams = FlowParams(), m: int | None = None,
                       tol_cells: float = 3.0, inner: float = 0.9,
                       max_thickness_cells: float = 2.0, levels: int = 21) -> TheoremCheckReport:
    """Arrival time of a round ball against ``(radius^2 - |x - center|^2) / (2m)``.

    The margin (in cells) is the smallest of the pointwise slack on ``|x - center| <= inner
    radius``, the level-set thickness slack, and ``-1`` when superlevel sets fail to nest.
    """
    from .levelset import arrival_time

    started = _time.perf_counter()
    u0 = as_field(C)
    grid = u0.grid
    h = grid.spacing
    m = grid.dim - 1 if m is None else m
    life = radius ** 2 / (2 * m)
    p = replace(params, max_time=max(params.max_time, 1.02 * life))
    tr = evolve(u0, None, p)
    a = arrival_time(tr, u0.sublevel())
    P = grid.coords()
    rho = np.linalg.norm(P - np.asarray(center, dtype=float), axis=-1)
    exact = (radius ** 2 - rho ** 2) / (2 * m)
    region = (rho <= inner * radius) & np.isfinite(a.u)
    err = np.abs(a.u - exact)
    err[~region] = 0.0
    k = np.unravel_index(int(np.argmax(err)), err.shape)
    worst_err = float(err[k]) / h
    probe_times = np.linspace(0.0, life, levels)
    thick = max(a.thickness(t) for t in probe_times[1:-1])
    nested = a.nested(probe_times)
    margin = min(tol_cells - worst_err, max_thickness_cells - thick, 0.0 if nested else -1.0)
    return report(TheoremId.ArrivalTime, margin, 0.0, (float(a.u[k]), P[k].tolist()),
                  {"max_error_cells": worst_err, "tol_cells": tol_cells, "thickness_cells": thick,
                   "max_thickness_cells": max_thickness_cells, "nested": nested,
                   "lipschitz": a.lipschitz()}, started)


def check_barrier_calculus(m: int = 1, samples: int = 100, slices: int = 20,
                           c_perturb: float = 0.5) -> TheoremCheckReport:
    """Closed-form barrier identities.

    * ``|Phi| <= 1e-10`` on the exact shrinking sphere ``|x| = sqrt(-2m t)``;
    * the quadratic separation ratio of a perturbed static half-space is within 20% of ``c``;
    * strong classification of a ``c = 2m + 1`` shrinking ball (strong), the exact sphere flow
      (not strong, worst ``Phi`` near 0) and an expanding ball (not strong, worst ``Phi > 0``).

    The margin is the smallest normalized slack among these conditions.
    """
    from .barriers import (boundary_quantities, expanding_ball, exact_sphere_flow, half_space,
                           perturb_barrier, quadratic_separation_ratio, sample_boundary,
                           shrinking_ball, shrinking_sphere)

    started = _time.perf_counter()
    dim = m + 1
    sphere = shrinking_sphere(m)
    worst_phi = 0.0
    for t in np.linspace(*sphere.interval, slices):
        pts = sample_boundary(sphere, t, samples)
        worst_phi = max(worst_phi, float(np.abs(boundary_quantities(sphere, pts, t)[3]).max()))
    hs = half_space(np.eye(dim)[0], interval=(-1.0, 0.0))
    p = np.zeros(dim)
    ratio = quadratic_separation_ratio(hs, perturb_barrier(hs, p, c_perturb), p)
    ratio_err = float(abs(ratio[-1] - c_perturb) / c_perturb)
    cls = {
        "shrinking_ball": classify_strong(shrinking_ball(p, 0.5, 2 * m + 1.0), None, samples, slices),
        "exact_sphere_flow": classify_strong(exact_sphere_flow(0.5, m), None, samples, slices),
        "expanding_ball": classify_strong(expanding_ball(p, 0.5), None, samples, slices),
    }
    expect = {"shrinking_ball": True, "exact_sphere_flow": False, "expanding_ball": False}
    correct = all(cls[k].strong == v for k, v in expect.items())
    correct &= abs(cls["exact_sphere_flow"].worst_phi) <= 1e-6 and cls["expanding_ball"].worst_phi > 0
    margin = min(1.0 - worst_phi / 1e-10, 1.0 - ratio_err / 0.2, 1.0 if correct else -1.0)
    return report(TheoremId.BarrierCalculus, margin, 0.0, (math.nan, None),
                  {"max_abs_phi_exact_sphere": worst_phi, "separation_ratio": ratio.tolist(),
                   "separation_ratio_error": ratio_err,
                   "classification": {k: {"strong": v.strong, "worst_phi": v.worst_phi}
                                      for k, v in cls.items()}}, started)
