"""Polygonal curve shortening with transport and a discrete integral Brakke inequality.

A closed polygon moves by ``p' = kappa + (X . n) n``, where ``kappa`` is the three-point
curvature vector. For a test function ``phi >= 0`` the two sides

    lhs = d/dt int phi ds
    rhs = int d_t phi + grad phi . X - div_M grad phi + phi div_M X - phi |H|^2 ds

agree for smooth flows; the check asserts ``lhs <= rhs`` up to quadrature error.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from ._kernels import polygon_self_intersects
from .barriers import AmbientField
from .distance import distance_to_segments
from .grid import Grid, Representation, ScalarField, SpacetimeTrack
from .harness import TheoremId, check_barrier_panel, report, strong_barrier_panel

MIN_VERTICES = 16


class CurveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PolygonalCurve:
    vertices: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (n, 2)")
        if len(v) < MIN_VERTICES:
            raise ValueError(f"a curve needs at least {MIN_VERTICES} vertices")
        if not np.all(np.isfinite(v)):
            raise CurveError("flow singular at this resolution (non-finite vertex)")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edges(), axis=1)

    def length(self) -> float:
        return float(self.edge_lengths().sum())

    def weights(self) -> np.ndarray:
        """Trapezoid weights: half the lengths of the two edges at each vertex."""
        L = self.edge_lengths()
        return 0.5 * (L + np.roll(L, 1))

    def tangents(self) -> np.ndarray:
        d = np.roll(self.vertices, -1, axis=0) - np.roll(self.vertices, 1, axis=0)
        return d / np.linalg.norm(d, axis=1)[:, None]

    def normals(self) -> np.ndarray:
        T = self.tangents()
        return np.stack([T[:, 1], -T[:, 0]], axis=1)

    def curvature_vectors(self) -> np.ndarray:
        """Vector from each vertex to the centre of the circle through it and its neighbours,
        divided by the squared radius."""
        B = self.vertices
        a = np.roll(B, 1, axis=0) - B
        c = np.roll(B, -1, axis=0) - B
        cross = a[:, 0] * c[:, 1] - a[:, 1] * c[:, 0]
        aa = (a * a).sum(1)
        cc = (c * c).sum(1)
        num = np.stack([c[:, 1] * aa - a[:, 1] * cc, a[:, 0] * cc - c[:, 0] * aa], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            centre = num / (2.0 * cross)[:, None]
            k = centre / (centre * centre).sum(1)[:, None]
        return np.where(np.abs(cross)[:, None] > 1e-300, k, 0.0)

    def is_simple(self) -> bool:
        return not polygon_self_intersects(np.ascontiguousarray(self.vertices))

    def edge_ratio(self) -> float:
        L = self.edge_lengths()
        r = L / np.roll(L, 1)
        return float(max(r.max(), 1 / r.min()))


def circle_curve(radius: float, n: int = 256, center=(0.0, 0.0), time: float = 0.0) -> PolygonalCurve:
    th = 2 * np.pi * np.arange(n) / n
    return PolygonalCurve(np.asarray(center) + radius * np.stack([np.cos(th), np.sin(th)], 1), time)


def ellipse_curve(a: float, b: float, n: int = 256, center=(0.0, 0.0), time: float = 0.0) -> PolygonalCurve:
    """Ellipse with vertices equally spaced in arc length."""
    th = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
    c = PolygonalCurve(np.asarray(center) + np.stack([a * np.cos(th), b * np.sin(th)], 1), time)
    return remesh(c, n)


def remesh(c: PolygonalCurve, n: int | None = None) -> PolygonalCurve:
    """Resample at equal arc length on the periodic cubic spline through the vertices."""
    n = len(c) if n is None else n
    P = c.vertices
    s = np.concatenate([[0.0], np.cumsum(c.edge_lengths())])
    Q = np.vstack([P, P[:1]])
    sp = CubicSpline(s, Q, bc_type="periodic")
    fine = np.linspace(0, s[-1], 16 * n, endpoint=False)
    pts = sp(fine)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1))])
    target = arc[-1] * np.arange(n) / n
    return PolygonalCurve(sp(np.interp(target, arc, np.append(fine, s[-1]))), c.time)


def _velocity(c: PolygonalCurve, X: AmbientField | None) -> np.ndarray:
    v = c.curvature_vectors()
    if X is not None and not X.is_zero:
        n = c.normals()
        v = v + (X(c.vertices) * n).sum(1)[:, None] * n
    return v


def curve_step(c: PolygonalCurve, X: AmbientField | None, dt: float, check: bool = True) -> PolygonalCurve:
    """One explicit step of curve shortening with transport (no remeshing)."""
    if dt == 0:
        return c
    hmin = float(c.edge_lengths().min())
    if dt > 0.25 * hmin ** 2 + 1e-300:
        raise ValueError(f"dt={dt:.3g} exceeds 0.25 * (min edge)^2 = {0.25 * hmin ** 2:.3g}")
    out = PolygonalCurve(c.vertices + dt * _velocity(c, X), c.time + dt)
    if check and not out.is_simple():
        raise CurveError("flow singular at this resolution (self-intersection)")
    return out


@dataclass(eq=False)
class CurveTrack:
    """Curve states and the raw (not remeshed) step pairs used for the Brakke quotient."""

    curves: list[PolygonalCurve]
    steps: list[tuple[PolygonalCurve, PolygonalCurve]] = field(default_factory=list)
    dt: float = 0.0


def simulate_curve(c0: PolygonalCurve, X: AmbientField | None, dt: float, t_end: float,
                   remesh_every: int = 10) -> CurveTrack:
    """Step to ``t_end``, remeshing every ``remesh_every`` steps and checking simplicity then."""
    if not c0.is_simple():
        raise CurveError("initial curve is not simple")
    n_steps = int(round(t_end / dt))
    c = c0
    track = CurveTrack([c0], [], dt)
    for k in range(1, n_steps + 1):
        nxt = curve_step(c, X, dt, check=False)
        track.steps.append((c, nxt))
        if remesh_every and k % remesh_every == 0:
            if not nxt.is_simple():
                raise CurveError(f"flow singular at this resolution (self-intersection at t={nxt.time:.6g})")
            nxt = remesh(nxt)
        track.curves.append(nxt)
        c = nxt
    return track


# --- test functions ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Nonnegative ``phi(x, t)`` with spatial gradient, Hessian and time derivative."""

    phi: object
    grad: object
    hess: object
    dt: object
    center: np.ndarray
    support: float
    name: str = "phi"

    __test__ = False  # not a pytest class


def bump(center, radius: float, velocity=(0.0, 0.0), power: int = 8) -> TestFunction:
    """``(1 - |y|^2 / R^2)^power`` for ``y = x - center - velocity t`` inside the support disk.

    The default power keeps the integrands smooth enough for trapezoid quadrature to be
    accurate well below the inequality tolerance.
    """
    c0 = np.asarray(center, dtype=float)
    w = np.asarray(velocity, dtype=float)
    R2 = radius * radius
    k = power

    def parts(x, t):
        y = np.atleast_2d(x) - (c0 + w * t)
        q = 1.0 - (y * y).sum(1) / R2
        return y, np.maximum(q, 0.0)

    def phi(x, t):
        _, q = parts(x, t)
        return q ** k

    def grad(x, t):
        y, q = parts(x, t)
        return (-2.0 * k / R2 * q ** (k - 1))[:, None] * y

    def hess(x, t):
        y, q = parts(x, t)
        eye = np.eye(2)[None]
        yy = y[:, :, None] * y[:, None, :]
        return (-2.0 * k / R2 * q ** (k - 1))[:, None, None] * eye + \
            (4.0 * k * (k - 1) / R2 ** 2 * q ** (k - 2))[:, None, None] * yy

    def dt(x, t):
        return -(grad(x, t) * w).sum(1)

    return TestFunction(phi, grad, hess, dt, c0, radius, f"bump(c={c0.tolist()}, R={radius})")


def plateau(center, inner: float, outer: float) -> TestFunction:
    """Equal to 1 on the disk of radius ``inner``, 0 beyond ``outer``, quintic in between."""
    c0 = np.asarray(center, dtype=float)
    w = outer - inner

    def parts(x):
        y = np.atleast_2d(x) - c0
        r = np.linalg.norm(y, axis=1)
        s = np.clip((r - inner) / w, 0.0, 1.0)
        return y, np.maximum(r, 1e-300), s

    def phi(x, t):
        _, _, s = parts(x)
        return 1.0 - s ** 3 * (10 - 15 * s + 6 * s * s)

    def dprof(s):
        return -30 * s * s * (1 - s) ** 2 / w

    def ddprof(s):
        return -60 * s * (1 - s) * (1 - 2 * s) / w ** 2

    def grad(x, t):
        y, r, s = parts(x)
        return (dprof(s) / r)[:, None] * y

    def hess(x, t):
        y, r, s = parts(x)
        e = y / r[:, None]
        ee = e[:, :, None] * e[:, None, :]
        eye = np.eye(2)[None]
        return ddprof(s)[:, None, None] * ee + (dprof(s) / r)[:, None, None] * (eye - ee)

    def dt(x, t):
        return np.zeros(len(np.atleast_2d(x)))

    return TestFunction(phi, grad, hess, dt, c0, outer, f"plateau(c={c0.tolist()}, {inner}, {outer})")


def bump_suite(center=(0.0, 0.0), scale: float = 1.0) -> list[TestFunction]:
    """Five bumps: a large centred one and four offset ones (one of them moving)."""
    c = np.asarray(center, dtype=float)
    s = scale
    return [bump(c, 2.0 * s),
            bump(c + (s, 0.0), 0.6 * s),
            bump(c + (0.0, -s), 0.5 * s),
            bump(c + (-0.7 * s, 0.7 * s), 0.8 * s, velocity=(0.5, 0.0)),
            bump(c + (0.3 * s, 0.9 * s), 0.4 * s)]


# --- the two sides ----------------------------------------------------------------


def _tangential_div(jac: np.ndarray, T: np.ndarray) -> np.ndarray:
    return np.einsum("ni,nij,nj->n", T, jac, T)


def _fd_tangential_div(field_fn, c: PolygonalCurve) -> np.ndarray:
    """``T . dV/ds`` from central differences of ``V`` at neighbouring vertices."""
    V = field_fn(c.vertices)
    P = c.vertices
    dV = np.roll(V, -1, axis=0) - np.roll(V, 1, axis=0)
    ds = np.linalg.norm(np.roll(P, -1, axis=0) - np.roll(P, 1, axis=0), axis=1)
    return (c.tangents() * dV).sum(1) / ds


def rhs_forms(c: PolygonalCurve, X: AmbientField | None, phi: TestFunction,
              finite_differences: bool = False) -> tuple[float, float, float]:
    """Both forms of the right-hand side at ``c`` and the scale ``int phi |H|^2 ds``.

    First form: ``d_t phi + grad phi^perp . X + grad phi . H - phi H . X - phi |H|^2``.
    Second form: ``d_t phi + grad phi . X - div_M grad phi + phi div_M X - phi |H|^2``.
    """
    P, t = c.vertices, c.time
    w = c.weights()
    T = c.tangents()
    n = c.normals()
    Hv = c.curvature_vectors()
    f = phi.phi(P, t)
    g = phi.grad(P, t)
    ft = phi.dt(P, t)
    Xv = np.zeros_like(P) if X is None or X.is_zero else X(P)
    H2 = (Hv * Hv).sum(1)
    g_perp = (g * n).sum(1)[:, None] * n
    first = ft + (g_perp * Xv).sum(1) + (g * Hv).sum(1) - f * (Hv * Xv).sum(1) - f * H2
    if finite_differences:
        div_g = _fd_tangential_div(lambda x: phi.grad(x, t), c)
        div_X = np.zeros(len(P)) if X is None or X.is_zero else _fd_tangential_div(X, c)
    else:
        div_g = _tangential_div(phi.hess(P, t), T)
        div_X = np.zeros(len(P)) if X is None or X.is_zero else _tangential_div(X.jac(P), T)
    second = ft + (g * Xv).sum(1) - div_g + f * div_X - f * H2
    return float((w * first).sum()), float((w * second).sum()), float((w * f * H2).sum())


def mass(c: PolygonalCurve, phi: TestFunction) -> float:
    return float((c.weights() * phi.phi(c.vertices, c.time)).sum())


def brakke_sides(before: PolygonalCurve, after: PolygonalCurve, X: AmbientField | None,
                 phi: TestFunction, finite_differences: bool = False) -> tuple[float, float]:
    """Forward quotient of ``int phi ds`` and the second-form right-hand side at ``before``."""
    dt = after.time - before.time
    if not dt > 0:
        raise ValueError("the curves must be consecutive states with after.time > before.time")
    lo, hi = before.vertices.min(0), before.vertices.max(0)
    if np.any(phi.center - phi.support < lo - 1e-12) or np.any(phi.center + phi.support > hi + 1e-12):
        warnings.warn(f"support of {phi.name} extends beyond the curve's bounding box", stacklevel=2)
    lhs = (mass(after, phi) - mass(before, phi)) / dt
    return lhs, rhs_forms(before, X, phi, finite_differences)[1]


@dataclass
class BrakkeReport:
    passed: bool
    worst_relative: float
    worst_step: int
    form_gap: float
    lhs: np.ndarray
    rhs: np.ndarray
    rel_tol: float = 0.05
    abs_tol: float = 1e-6


def check_brakke_inequality(track: CurveTrack, X: AmbientField | None, phi: TestFunction,
                            rel_tol: float = 0.05, abs_tol: float = 1e-6, every: int = 1,
                            finite_differences: bool = False) -> BrakkeReport:
    """``lhs <= rhs + rel_tol (|lhs| + |rhs|) + abs_tol`` at every (``every``-th) step.

    ``worst_relative`` is the smallest ``(rhs - lhs + abs_tol) / (|lhs| + |rhs|)``; the
    step passes when it is ``>= -rel_tol``. ``form_gap`` is the largest difference of the
    two right-hand-side forms relative to ``max(|first|, |second|, int phi |H|^2)``.
    """
    lhs, rhs = [], []
    worst, worst_k, gap = math.inf, -1, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(0, len(track.steps), every):
            b, a = track.steps[k]
            dt = a.time - b.time
            l = (mass(a, phi) - mass(b, phi)) / dt
            r1, r2, scale = rhs_forms(b, X, phi, finite_differences)
            lhs.append(l)
            rhs.append(r2)
            rel = (r2 - l + abs_tol) / max(abs(l) + abs(r2), 1e-300)
            if rel < worst:
                worst, worst_k = rel, k
            gap = max(gap, abs(r1 - r2) / max(abs(r1), abs(r2), scale, 1e-300))
    return BrakkeReport(bool(worst >= -rel_tol), float(worst), worst_k, float(gap),
                        np.array(lhs), np.array(rhs), rel_tol, abs_tol)


def check_refinement(make_curve, X: AmbientField | None, phi: TestFunction, n: int, dt: float,
                     t_end: float, samples: int = 10) -> dict:
    """Compare a run with ``(n, dt)`` against one with ``(2n, dt/4)`` at common times.

    Passes when at every compared time both ``|lhs_f - lhs_c|`` and ``|rhs_f - rhs_c|`` are
    at most ``max(|lhs_c - rhs_c|, rel_tol (|lhs_c| + |rhs_c|) + abs_tol)``, the coarse
    run's own disagreement or its allowance.
    """
    coarse = simulate_curve(make_curve(n), X, dt, t_end)
    fine = simulate_curve(make_curve(2 * n), X, dt / 4, t_end)
    idx = np.unique(np.linspace(0, len(coarse.steps) - 1, samples).astype(int))
    rows = []
    ok = True
    for k in idx:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lc, rc = brakke_sides(*coarse.steps[k], X, phi)
            lf, rf = brakke_sides(*fine.steps[4 * k], X, phi)
        allow = max(abs(lc - rc), 0.05 * (abs(lc) + abs(rc)) + 1e-6)
        good = abs(lf - lc) <= allow and abs(rf - rc) <= allow
        ok &= good
        rows.append({"time": coarse.steps[k][0].time, "lhs_coarse": lc, "rhs_coarse": rc,
                     "lhs_fine": lf, "rhs_fine": rf, "allowance": allow, "ok": good})
    return {"passed": bool(ok), "rows": rows}


# --- support as a set flow ---------------------------------------------------------


def _inside_polygon(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Even-odd test of the points ``Q`` against the closed polygon ``P``."""
    inside = np.zeros(len(Q), dtype=bool)
    A, B = P, np.roll(P, -1, axis=0)
    x, y = Q[:, 0], Q[:, 1]
    for (ax, ay), (bx, by) in zip(A, B):
        if ay == by:
            continue
        cond = (ay > y) != (by > y)
        xc = ax + (y - ay) * (bx - ax) / (by - ay)
        inside ^= cond & (x < xc)
    return inside


def rasterize(c: PolygonalCurve, grid: Grid) -> ScalarField:
    """Signed distance to the polygon, negative inside."""
    q = grid.coords().reshape(-1, 2)
    P = c.vertices
    segs = np.stack([P, np.roll(P, -1, axis=0)], axis=1)
    d = distance_to_segments(segs, q)
    sign = np.where(_inside_polygon(P, q), -1.0, 1.0)
    return ScalarField(grid, (sign * d).reshape(grid.counts), c.time)


def curve_spacetime_track(track: CurveTrack, grid: Grid, samples: int = 20) -> SpacetimeTrack:
    """Zero-set track of the curve at ``samples`` evenly spaced states."""
    idx = np.unique(np.linspace(0, len(track.curves) - 1, samples).astype(int))
    return SpacetimeTrack([(track.curves[i].time, rasterize(track.curves[i], grid)) for i in idx],
                          Representation.ZERO_SET, track.dt)


def check_support_is_weak_flow(track: CurveTrack, X: AmbientField | None, grid: Grid, barriers=None,
                               n_barriers: int = 6, seed: int = 0, samples: int = 20):
    """Rasterize the curve track and run the strong-barrier panel against it."""
    started = _time.perf_counter()
    st = curve_spacetime_track(track, grid, samples)
    barriers = strong_barrier_panel(st, n_barriers, seed=seed) if barriers is None else barriers
    rep = check_barrier_panel(st, barriers, X, TheoremId.Brakke)
    rep.runtime = _time.perf_counter() - started
    return rep


def brakke_report(track: CurveTrack, X: AmbientField | None, phis, rel_tol: float = 0.05,
                  form_tol: float = 0.01, every: int = 1):
    """Harness record over a suite of test functions (inequality and form agreement)."""
    started = _time.perf_counter()
    reps = [check_brakke_inequality(track, X, phi, rel_tol, every=every) for phi in phis]
    ineq = min(r.worst_relative for r in reps)
    gap = max(r.form_gap for r in reps)
    margin = min(ineq + rel_tol, form_tol - gap)
    return report(TheoremId.Brakke, margin, 0.0, (math.nan, None),
                  {"worst_relative": ineq, "rel_tol": rel_tol, "form_gap": gap, "form_tol": form_tol,
                   "functions": [p.name for p in phis]}, started)
