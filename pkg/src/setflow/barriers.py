"""Analytic barriers ``K(t) = {f(., t) <= 0}``, ambient transport fields and the
pointwise quantities nu, H, v, Phi and Phi^X.

Conventions: ``nu = grad f / |grad f|`` is the outward normal of ``K``,
``H = -div(nu)`` (a unit disk has ``H = -1``), ``v = -f_t / |grad f|`` is the outward
normal velocity, ``Phi = v - H`` and ``Phi^X = v - H - X . nu``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grid import Grid

PROJECT_TOL = 1e-8
REGULAR_TOL = 1e-6
STRONG_TOL = 1e-6


class BarrierError(ValueError):
    pass


def _pts(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x.reshape(-1, dim)
    return x, single


# --- ambient fields -------------------------------------------------------------


@dataclass
class AmbientField:
    """Transport field ``X`` with Jacobian ``jac[..., i, j] = dX_i / dx_j``.

    ``sup_norm`` and ``jac_bound`` are upper bounds on ``|X|`` and ``|grad X|`` over the
    run box; ``validate`` checks them against every grid node.
    """

    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    sup_norm: float | None = None
    jac_bound: float | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def jac(self, x):
        return self.jacobian(np.asarray(x, dtype=float))

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    def sample_bounds(self, grid: Grid) -> tuple[float, float]:
        pts = grid.coords().reshape(-1, grid.dim)
        xs = np.linalg.norm(self(pts), axis=-1).max()
        js = np.linalg.norm(self.jac(pts), ord=2, axis=(-2, -1)).max()
        return float(xs), float(js)

    def validate(self, grid: Grid) -> "AmbientField":
        """Return a copy whose bounds are checked against (or filled in from) the grid."""
        if grid.dim != self.dim:
            raise ValueError(f"field {self.name} is {self.dim}-D but the grid is {grid.dim}-D")
        xs, js = self.sample_bounds(grid)
        slack = 1e-9 * (1.0 + xs + js)
        if self.sup_norm is not None and xs > self.sup_norm + slack:
            raise ValueError(f"|X| reaches {xs:.6g} > declared bound {self.sup_norm:.6g}")
        if self.jac_bound is not None and js > self.jac_bound + slack:
            raise ValueError(f"|grad X| reaches {js:.6g} > declared bound {self.jac_bound:.6g}")
        return replace(self, sup_norm=xs if self.sup_norm is None else self.sup_norm,
                       jac_bound=js if self.jac_bound is None else self.jac_bound)

    def nodal(self, grid: Grid) -> np.ndarray:
        """Field values at nodes, shape ``(dim,) + counts``."""
        v = self(grid.coords().reshape(-1, grid.dim))
        return np.ascontiguousarray(np.moveaxis(v.reshape(grid.counts + (grid.dim,)), -1, 0))


def zero_field(dim: int = 2) -> AmbientField:
    return AmbientField("zero", dim, lambda x: np.zeros_like(x),
                        lambda x: np.zeros(x.shape + (x.shape[-1],)), 0.0, 0.0)


def constant_field(v) -> AmbientField:
    v = np.asarray(v, dtype=float)
    return AmbientField("constant", len(v), lambda x: np.broadcast_to(v, x.shape).copy(),
                        lambda x: np.zeros(x.shape + (x.shape[-1],)),
                        float(np.linalg.norm(v)), 0.0, {"v": v.tolist()})


def radial_field(kappa: float, dim: int = 2, center=None) -> AmbientField:
    """``X(x) = kappa (x - center)``."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    eye = np.eye(dim)
    return AmbientField("radial", dim, lambda x: kappa * (x - c),
                        lambda x: np.broadcast_to(kappa * eye, x.shape + (dim,)).copy(),
                        None, abs(kappa), {"kappa": kappa, "center": c.tolist()})


def rotation_field(omega: float = 1.0, dim: int = 2) -> AmbientField:
    """Rigid rotation ``omega (-y, x)`` (about the last axis in 3-D)."""
    J = np.zeros((dim, dim))
    J[0, 1], J[1, 0] = -omega, omega

    def value(x):
        out = np.zeros_like(x)
        out[..., 0] = -omega * x[..., 1]
        out[..., 1] = omega * x[..., 0]
        return out

    return AmbientField("rotation", dim, value,
                        lambda x: np.broadcast_to(J, x.shape + (dim,)).copy(),
                        None, abs(omega), {"omega": omega})


def shear_field(s: float = 1.0, dim: int = 2) -> AmbientField:
    """``X = (s y, 0[, 0])``."""
    J = np.zeros((dim, dim))
    J[0, 1] = s

    def value(x):
        out = np.zeros_like(x)
        out[..., 0] = s * x[..., 1]
        return out

    return AmbientField("shear", dim, value,
                        lambda x: np.broadcast_to(J, x.shape + (dim,)).copy(),
                        None, abs(s), {"s": s})


def polynomial_field(terms, dim: int = 2) -> AmbientField:
    """Polynomial field from ``terms = [(component, coefficient, powers), ...]``.

    ``X_component += coefficient * prod_j x_j ** powers[j]``.
    """
    parsed = []
    for comp, coef, powers in terms:
        powers = tuple(int(p) for p in powers)
        if len(powers) != dim or min(powers) < 0 or not 0 <= int(comp) < dim:
            raise ValueError(f"bad polynomial term {(comp, coef, powers)}")
        parsed.append((int(comp), float(coef), powers))

    def value(x):
        out = np.zeros_like(x)
        for comp, coef, powers in parsed:
            out[..., comp] += coef * np.prod([x[..., j] ** p for j, p in enumerate(powers)], axis=0)
        return out

    def jac(x):
        out = np.zeros(x.shape + (dim,))
        for comp, coef, powers in parsed:
            for k, pk in enumerate(powers):
                if pk == 0:
                    continue
                term = coef * pk * x[..., k] ** (pk - 1)
                for j, p in enumerate(powers):
                    if j != k:
                        term = term * x[..., j] ** p
                out[..., comp, k] += term
        return out

    return AmbientField("polynomial", dim, value, jac, None, None, {"terms": [list(t) for t in terms]})


def ricX_lower_bound(X: AmbientField | None, grid: Grid) -> float:
    """Smallest eigenvalue of ``sym(grad X)`` over the grid nodes (flat ambient space)."""
    if X is None:
        return 0.0
    J = X.jac(grid.coords().reshape(-1, grid.dim))
    S = 0.5 * (J + np.swapaxes(J, -1, -2))
    return float(np.linalg.eigvalsh(S)[:, 0].min())


def finite_speed_bound(r: float, m: int) -> float:
    """Mean curvature ``2m / r`` of an m-sphere of radius ``r / 2``."""
    if r <= 0 or m < 1:
        raise ValueError("need r > 0 and m >= 1")
    return 2.0 * m / r


# --- barriers ---------------------------------------------------------------------


@dataclass
class ImplicitBarrier:
    """Smooth family ``K(t) = {f(., t) <= 0}`` for ``t`` in ``interval``.

    All callables take points of shape ``(n, dim)`` and a scalar time. ``center`` and
    ``scale`` are hints used to seed boundary samples (a point and a typical radius).
    """

    dim: int
    f: Callable
    grad: Callable
    hess: Callable
    dft: Callable
    interval: tuple[float, float]
    center: np.ndarray | None = None
    scale: float = 1.0
    name: str = "barrier"
    params: dict = field(default_factory=dict)
    compact: bool = True
    fatten_fn: Callable | None = None

    def __post_init__(self):
        a, b = self.interval
        if not b > a:
            raise ValueError("barrier interval must have positive length")
        self.interval = (float(a), float(b))
        self.center = np.zeros(self.dim) if self.center is None else np.asarray(self.center, float)

    def values(self, x, t):
        x, single = _pts(x, self.dim)
        v = self.f(x, t)
        return v[0] if single else v

    def contains(self, x, t) -> np.ndarray:
        return self.values(x, t) <= 0

    def check_time(self, t: float) -> None:
        a, b = self.interval
        if t < a - 1e-12 or t > b + 1e-12:
            raise BarrierError(f"time {t} outside barrier interval [{a}, {b}]")

    def mask(self, grid: Grid, t: float) -> np.ndarray:
        return self.f(grid.coords().reshape(-1, grid.dim), t).reshape(grid.counts) <= 0

    def fatten(self, eps: float) -> "ImplicitBarrier":
        """``K_eps(t) = {dist(., K(t)) <= eps}`` (radial and half-space families only)."""
        if self.fatten_fn is None:
            raise NotImplementedError(f"no closed-form fattening for {self.name}")
        return self.fatten_fn(eps)


@dataclass(frozen=True)
class BarrierPointReport:
    point: np.ndarray
    time: float
    nu: np.ndarray
    H: float
    v: float
    Phi: float
    PhiX: float


def project_to_boundary(b: ImplicitBarrier, x, t: float, tol: float = PROJECT_TOL,
                        max_iter: int = 60) -> np.ndarray:
    """Newton projection ``x <- x - f grad f / |grad f|^2`` onto ``{f(., t) = 0}``."""
    x = np.array(x, dtype=float).reshape(1, b.dim)
    for _ in range(max_iter):
        fv = b.f(x, t)[0]
        if abs(fv) <= tol:
            return x[0]
        g = b.grad(x, t)[0]
        gg = g @ g
        if gg < REGULAR_TOL ** 2:
            raise BarrierError(f"not a regular boundary point near {x[0].tolist()} at t={t}")
        x = x - fv * g / gg
    if abs(b.f(x, t)[0]) <= tol:
        return x[0]
    raise BarrierError(f"projection to the boundary did not converge from {x[0].tolist()}")


def boundary_distance(b: ImplicitBarrier, x, t: float, max_iter: int = 100) -> float:
    """Distance from ``x`` to ``{f(., t) = 0}`` by iterated linearized closest-point steps."""
    x = np.asarray(x, dtype=float)
    y = project_to_boundary(b, x, t)
    for _ in range(max_iter):
        g = b.grad(y[None], t)[0]
        fv = b.f(y[None], t)[0]
        y_new = x - ((fv + g @ (x - y)) / (g @ g)) * g
        y_new = project_to_boundary(b, y_new, t)
        if np.linalg.norm(y_new - y) < 1e-13:
            y = y_new
            break
        y = y_new
    return float(np.linalg.norm(x - y))


def eval_barrier(b: ImplicitBarrier, x, t: float, X: AmbientField | None = None,
                 project: bool = True) -> BarrierPointReport:
    """Exact ``nu, H, v, Phi, Phi^X`` at the boundary point nearest (by Newton) to ``x``."""
    b.check_time(t)
    p = project_to_boundary(b, x, t) if project else np.asarray(x, dtype=float)
    if abs(b.f(p[None], t)[0]) > PROJECT_TOL:
        raise BarrierError(f"{p.tolist()} is not on the boundary at t={t}")
    g = b.grad(p[None], t)[0]
    gn = float(np.linalg.norm(g))
    if gn < REGULAR_TOL:
        raise BarrierError(f"not a regular boundary point: |grad f| = {gn:.3g} at {p.tolist()}")
    Hm = b.hess(p[None], t)[0]
    nu = g / gn
    H = -(np.trace(Hm) - nu @ Hm @ nu) / gn
    v = -b.dft(p[None], t)[0] / gn
    phi = v - H
    xn = 0.0 if X is None else float(X(p[None])[0] @ nu)
    return BarrierPointReport(p, float(t), nu, float(H), float(v), float(phi), float(phi - xn))


def _project_batch(b: ImplicitBarrier, x: np.ndarray, t: float, max_iter: int = 60) -> np.ndarray:
    """Vectorized Newton projection; rows that fail to converge are dropped."""
    x = np.array(x, dtype=float)
    for _ in range(max_iter):
        fv = b.f(x, t)
        if np.all(np.abs(fv) <= PROJECT_TOL):
            break
        g = b.grad(x, t)
        gg = np.maximum((g * g).sum(1), REGULAR_TOL ** 2)
        x = x - (fv / gg)[:, None] * g
    ok = np.abs(b.f(x, t)) <= PROJECT_TOL
    return x[ok]


def boundary_quantities(b: ImplicitBarrier, pts: np.ndarray, t: float, X: AmbientField | None = None):
    """``(nu, H, v, Phi, Phi^X)`` at many boundary points at once."""
    g = b.grad(pts, t)
    gn = np.linalg.norm(g, axis=1)
    if np.any(gn < REGULAR_TOL):
        k = int(np.argmin(gn))
        raise BarrierError(f"not a regular boundary point: |grad f| = {gn[k]:.3g} at {pts[k].tolist()}")
    nu = g / gn[:, None]
    Hm = b.hess(pts, t)
    H = -(np.trace(Hm, axis1=1, axis2=2) - np.einsum("ni,nij,nj->n", nu, Hm, nu)) / gn
    v = -b.dft(pts, t) / gn
    phi = v - H
    phiX = phi if X is None else phi - (X(pts) * nu).sum(1)
    return nu, H, v, phi, phiX


def _directions(dim: int, n: int, offset: float = 0.0) -> np.ndarray:
    if dim == 2:
        a = 2 * np.pi * (np.arange(n) + offset) / n
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = np.pi * (3 - np.sqrt(5)) * i + 2 * np.pi * offset
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def sample_boundary(b: ImplicitBarrier, t: float, n: int, offset: float = 0.0,
                    reach: float | None = None) -> np.ndarray:
    """Boundary points of ``K(t)`` found by marching rays from ``b.center``.

    Each ray's first sign change is bracketed, bisected and Newton-polished. The ray count
    doubles until ``n`` points are found (or a cap is hit).
    """
    reach = 4.0 * b.scale if reach is None else reach
    steps = 256
    rays = n
    out = np.empty((0, b.dim))
    while rays <= 64 * n:
        dirs = _directions(b.dim, rays, offset)
        s = np.linspace(0, reach, steps + 1)
        pts = b.center[None, None, :] + s[None, :, None] * dirs[:, None, :]
        vals = b.f(pts.reshape(-1, b.dim), t).reshape(rays, steps + 1)
        sign = vals > 0
        change = sign[:, 1:] != sign[:, :-1]
        hit = change.any(axis=1)
        first = np.argmax(change, axis=1)
        rs = np.flatnonzero(hit)
        lo, hi = s[first[rs]], s[first[rs] + 1]
        flo = vals[rs, first[rs]]
        d = dirs[rs]
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            fm = b.f(b.center + mid[:, None] * d, t)
            same = (fm > 0) == (flo > 0)
            lo, flo, hi = np.where(same, mid, lo), np.where(same, fm, flo), np.where(same, hi, mid)
        found = _project_batch(b, b.center + (0.5 * (lo + hi))[:, None] * d, t)
        out = found
        if len(out) >= n:
            return out
        rays *= 2
    return out


@dataclass(frozen=True)
class StrongClassification:
    strong: bool
    worst_phi: float
    worst_point: np.ndarray
    worst_time: float
    samples: int


def classify_strong(b: ImplicitBarrier, X: AmbientField | None = None, samples: int = 100,
                    slices: int = 20, seed: int = 0) -> StrongClassification:
    """Strong iff the largest sampled ``Phi`` (``Phi^X`` when ``X`` is given) is below -1e-6."""
    if samples < 100 or slices < 20:
        raise ValueError("classify_strong needs >= 100 points per slice and >= 20 slices")
    offset = np.random.default_rng(seed).random()
    a, e = b.interval
    worst = (-np.inf, None, None)
    count = 0
    for t in np.linspace(a, e, slices):
        pts = sample_boundary(b, t, samples, offset)
        if len(pts) < samples:
            raise BarrierError(f"found only {len(pts)} boundary points at t={t}")
        phiX = boundary_quantities(b, pts, t, X)[4]
        count += len(pts)
        k = int(np.argmax(phiX))
        if phiX[k] > worst[0]:
            worst = (float(phiX[k]), pts[k], float(t))
    return StrongClassification(bool(worst[0] < -STRONG_TOL), float(worst[0]), worst[1],
                                float(worst[2]), count)


def strong_fattening_threshold(b: ImplicitBarrier, X: AmbientField | None = None,
                               eps_values=None, **kw) -> float:
    """Largest scanned ``eps`` for which every ``K_eps`` up to it is still strong (0 if none)."""
    eps_values = np.linspace(0.0, b.scale, 11)[1:] if eps_values is None else eps_values
    last = 0.0
    for eps in sorted(eps_values):
        if not classify_strong(b.fatten(eps), X, **kw).strong:
            break
        last = float(eps)
    return last


# --- library ----------------------------------------------------------------------


def radial_barrier(center, delta: float, s: float, interval, complement: bool = False,
                   velocity=None, offset: float = 0.0) -> ImplicitBarrier:
    """Ball (or closed complement of a ball) of radius ``sqrt(delta^2 + s t) + offset``
    around ``center + velocity t``.

    ``s = -c`` gives the shrinking balls ``sqrt(delta^2 - c t)``; ``offset`` is an outward
    fattening of ``K``.
    """
    c0 = np.asarray(center, dtype=float)
    dim = len(c0)
    w = np.zeros(dim) if velocity is None else np.asarray(velocity, dtype=float)
    sign = -1.0 if complement else 1.0
    a, e = interval
    for t in (a, e):
        if delta ** 2 + s * t <= 0:
            raise ValueError("radius law vanishes inside the barrier interval")

    def rho(t):
        return np.sqrt(delta ** 2 + s * t)

    def rad(t):
        return rho(t) + (-offset if complement else offset)

    def geo(x, t):
        y = x - (c0 + w * t)
        r = np.linalg.norm(y, axis=-1)
        return y, np.maximum(r, 1e-300)

    def f(x, t):
        _, r = geo(x, t)
        return sign * (r - rad(t))

    def grad(x, t):
        y, r = geo(x, t)
        return sign * y / r[:, None]

    def hess(x, t):
        y, r = geo(x, t)
        yy = y[:, :, None] * y[:, None, :] / r[:, None, None] ** 2
        return sign * (np.eye(dim)[None] - yy) / r[:, None, None]

    def dft(x, t):
        y, r = geo(x, t)
        dr = -(y @ w) / r
        return sign * (dr - 0.5 * s / rho(t))

    def fat(eps):
        return radial_barrier(c0, delta, s, interval, complement, w, offset + eps)

    kind = "ball_complement" if complement else "ball"
    return ImplicitBarrier(dim, f, grad, hess, dft, (a, e), c0.copy(), max(rad(a), 1e-3),
                           kind, {"center": c0.tolist(), "delta": delta, "s": s,
                                  "velocity": w.tolist(), "offset": offset},
                           compact=not complement, fatten_fn=fat)


def shrinking_ball(center, delta: float, c: float, interval=None) -> ImplicitBarrier:
    """Ball of radius ``sqrt(delta^2 - c t)``; default interval stops at 90% of its lifetime."""
    interval = (0.0, 0.9 * delta ** 2 / c) if interval is None else interval
    return radial_barrier(center, delta, -c, interval)


def expanding_ball(center, delta: float, rate: float = 1.0, interval=(0.0, 0.5)) -> ImplicitBarrier:
    return radial_barrier(center, delta, rate, interval)


def static_ball(center, radius: float, interval=(0.0, 1.0)) -> ImplicitBarrier:
    return radial_barrier(center, radius, 0.0, interval)


def shrinking_sphere(m: int = 1, lam: float | None = None, interval=(-2.0, -0.05),
                     dim: int | None = None) -> ImplicitBarrier:
    """``K(t) = {|x| >= sqrt(-lam t)}`` for ``t < 0``; exact flow when ``lam = 2m``."""
    lam = 2.0 * m if lam is None else lam
    dim = m + 1 if dim is None else dim
    if interval[1] >= 0:
        raise ValueError("the shrinking sphere lives at negative times")
    return radial_barrier(np.zeros(dim), 0.0, -lam, interval, complement=True)


def exact_sphere_flow(radius0: float, m: int = 1, t_end: float | None = None,
                      center=None) -> ImplicitBarrier:
    """Ball moving by mean curvature, radius ``sqrt(radius0^2 - 2 m t)`` (not strong)."""
    c = np.zeros(m + 1) if center is None else np.asarray(center, dtype=float)
    t_end = 0.9 * radius0 ** 2 / (2 * m) if t_end is None else t_end
    return radial_barrier(c, radius0, -2.0 * m, (0.0, t_end))


def half_space(normal, offset: float = 0.0, speed: float = 0.0, interval=(0.0, 1.0),
               anchor=None) -> ImplicitBarrier:
    """``K(t) = {n . x <= offset + speed t}``; the boundary moves outward at ``speed``."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    dim = len(n)

    def f(x, t):
        return x @ n - (offset + speed * t)

    def grad(x, t):
        return np.broadcast_to(n, x.shape).copy()

    def hess(x, t):
        return np.zeros((len(x), dim, dim))

    def dft(x, t):
        return np.full(len(x), -float(speed))

    def fat(eps):
        return half_space(n, offset + eps, speed, interval, anchor)

    center = n * offset if anchor is None else np.asarray(anchor, dtype=float)
    center = center - n  # seed rays from inside K
    return ImplicitBarrier(dim, f, grad, hess, dft, interval, center, 1.0, "half_space",
                           {"normal": n.tolist(), "offset": offset, "speed": speed},
                           compact=False, fatten_fn=fat)


def affine_image(b: ImplicitBarrier, A, shift=None) -> ImplicitBarrier:
    """Image ``A K(t) + shift`` of a barrier under an invertible affine map."""
    A = np.asarray(A, dtype=float)
    Ai = np.linalg.inv(A)
    sh = np.zeros(b.dim) if shift is None else np.asarray(shift, dtype=float)

    def pre(y):
        return (y - sh) @ Ai.T

    def f(y, t):
        return b.f(pre(y), t)

    def grad(y, t):
        return b.grad(pre(y), t) @ Ai

    def hess(y, t):
        return np.einsum("ki,nkl,lj->nij", Ai, b.hess(pre(y), t), Ai)

    def dft(y, t):
        return b.dft(pre(y), t)

    scale = b.scale * float(np.linalg.norm(A, 2))
    return ImplicitBarrier(b.dim, f, grad, hess, dft, b.interval, A @ b.center + sh, scale,
                           f"affine({b.name})", {"A": A.tolist(), "shift": sh.tolist()},
                           compact=b.compact)


def _smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def _smoothstep5_d(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 30 * s * s * (1 - s) ** 2, 0.0)


def _smoothstep5_dd(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 60 * s * (1 - s) * (1 - 2 * s), 0.0)


def capped_square_distance(p, inner: float = 0.5, outer: float = 1.0):
    """``delta(x) = |x - p|^2`` near ``p``, blended to the constant ``outer^2`` by a quintic
    step on ``inner <= |x - p| <= outer``. Returns ``(value, grad, hess)`` callables."""
    p = np.asarray(p, dtype=float)
    dim = len(p)
    w = outer - inner
    cap = outer ** 2

    def parts(x):
        y = x - p
        r = np.linalg.norm(y, axis=-1)
        s = (r - inner) / w
        S, dS, ddS = _smoothstep5(s), _smoothstep5_d(s) / w, _smoothstep5_dd(s) / w ** 2
        g = r * r * (1 - S) + cap * S
        dg = 2 * r * (1 - S) + (cap - r * r) * dS
        ddg = 2 * (1 - S) - 4 * r * dS + (cap - r * r) * ddS
        return y, r, g, dg, ddg

    def value(x):
        return parts(x)[2]

    def grad(x):
        y, r, _, dg, _ = parts(x)
        return (dg / np.maximum(r, 1e-300))[:, None] * y

    def hess(x):
        y, r, _, dg, ddg = parts(x)
        rs = np.maximum(r, 1e-300)
        u = y / rs[:, None]
        uu = u[:, :, None] * u[:, None, :]
        eye = np.eye(dim)[None]
        near = r < inner
        out = ddg[:, None, None] * uu + (dg / rs)[:, None, None] * (eye - uu)
        out[near] = 2.0 * eye[0]
        return out

    return value, grad, hess


def perturb_barrier(b: ImplicitBarrier, p, c: float, check_slices: int = 5,
                    check_samples: int = 200) -> ImplicitBarrier:
    """Shrink ``K`` inside itself so that it touches ``dK(b_end)`` only at ``p``.

    With ``g = f / |grad f(p, b_end)|`` and ``s = t - b_end``, the result is
    ``f~(x, s) = g(x, s + b_end) + c (delta(x) - s)`` on ``[a - b_end, 0]``, where
    ``delta = |x - p|^2`` near ``p``. Near ``p`` the final boundaries separate
    quadratically, ``dist(x, dK(0)) ~ c |x - p|^2``, and ``Phi~(p, 0) = Phi(p, 0) + c(1 + 2m)``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    a, e = b.interval
    p = np.asarray(p, dtype=float)
    if abs(b.f(p[None], e)[0]) > 1e-6:
        raise BarrierError(f"p={p.tolist()} is not on the boundary at the final time {e}")
    scale = float(np.linalg.norm(b.grad(p[None], e)[0]))
    if scale < REGULAR_TOL:
        raise BarrierError("p is not a regular boundary point")
    dv, dg, dh = capped_square_distance(p)

    def f(x, s):
        return b.f(x, s + e) / scale + c * (dv(x) - s)

    def grad(x, s):
        return b.grad(x, s + e) / scale + c * dg(x)

    def hess(x, s):
        return b.hess(x, s + e) / scale + c * dh(x)

    def dft(x, s):
        return b.dft(x, s + e) / scale - c

    nu = b.grad(p[None], e)[0] / scale
    out = ImplicitBarrier(b.dim, f, grad, hess, dft, (a - e, 0.0), p - 0.25 * nu,
                          b.scale, f"perturbed({b.name})", {"p": p.tolist(), "c": c, "scale": scale},
                          compact=b.compact)
    for s in np.linspace(a - e, 0.0, check_slices):
        for q in sample_boundary(out, s, check_samples):
            gn = float(np.linalg.norm(grad(q[None], s)[0]))
            if gn < REGULAR_TOL:
                raise BarrierError(f"c={c} destroys regularity at {q.tolist()}, t={s}")
    return out


def quadratic_separation_ratio(original: ImplicitBarrier, perturbed: ImplicitBarrier, p,
                               radii=(0.08, 0.04, 0.02, 0.01)) -> np.ndarray:
    """``dist(x, dK(0)) / |x - p|^2`` at points ``x`` of ``dK~(0)`` at distance ~radius from ``p``."""
    p = np.asarray(p, dtype=float)
    e = original.interval[1]
    g = original.grad(p[None], e)[0]
    nu = g / np.linalg.norm(g)
    tangent = np.zeros_like(nu)
    k = int(np.argmin(np.abs(nu)))
    tangent[k] = 1.0
    tangent -= (tangent @ nu) * nu
    tangent /= np.linalg.norm(tangent)
    out = []
    for r in radii:
        x = project_to_boundary(perturbed, p + r * tangent, 0.0, tol=1e-13)
        d = boundary_distance(original, x, e)
        out.append(d / np.sum((x - p) ** 2))
    return np.array(out)
