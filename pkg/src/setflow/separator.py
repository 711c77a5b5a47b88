"""Equidistant separating hypersurface between two closed sets from a harmonic interpolant.

For sets ``X``, ``Y`` at distance ``2r`` and a band parameter ``delta in (0, r)``, the
function ``h`` is harmonic on ``U = {d_X > r - delta} & {d_Y > r - delta}`` with ``h = -1``
on ``{d_X <= r - delta}`` and ``h = +1`` on ``{d_Y <= r - delta}``. The separator is
``M = h^{-1}(c) u Z`` with the contact set ``Z = {d_X <= r} & {d_Y <= r}``.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .distance import set_distance
from .grid import ClosedSetMask, Grid, ScalarField
from .harness import TheoremId, report

THETA_MIN = 1e-3
RESIDUAL_TOL = 1e-8
REGULAR_TOL = 1e-10


class SeparatorError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SeparatorProblem:
    grid: Grid
    maskX: ClosedSetMask
    maskY: ClosedSetMask
    r: float
    delta: float
    dX: np.ndarray
    dY: np.ndarray
    idxX: np.ndarray
    idxY: np.ndarray

    @property
    def inner(self) -> float:
        return self.r - self.delta

    @property
    def minus(self) -> np.ndarray:
        """Dirichlet nodes with value -1."""
        return self.dX <= self.inner

    @property
    def plus(self) -> np.ndarray:
        """Dirichlet nodes with value +1."""
        return (self.dY <= self.inner) & ~self.minus

    @property
    def U(self) -> np.ndarray:
        return ~(self.minus | self.plus)

    @property
    def A(self) -> np.ndarray:
        return self.dX <= self.r + 1e-9 * self.grid.spacing

    @property
    def B(self) -> np.ndarray:
        return self.dY <= self.r + 1e-9 * self.grid.spacing

    @property
    def Z(self) -> np.ndarray:
        return self.A & self.B


def _edt(mask: ClosedSetMask):
    d, idx = ndimage.distance_transform_edt(~mask.inside, sampling=mask.grid.spacing, return_indices=True)
    return d, idx


def separator_problem(maskX: ClosedSetMask, maskY: ClosedSetMask, delta: float | None = None) -> SeparatorProblem:
    """Set up the problem with ``r = dist(X, Y) / 2`` and ``delta = r / 4`` by default."""
    grid = maskX.grid
    grid.check_same(maskY.grid)
    if maskX.is_empty or maskY.is_empty:
        raise SeparatorError("both sets must be nonempty")
    gap = set_distance(maskX, maskY)
    if not gap > 2 * grid.spacing:
        raise SeparatorError(f"the sets must be more than 2h apart (distance {gap:.4g})")
    r = 0.5 * gap
    delta = r / 4 if delta is None else float(delta)
    if not 0 < delta < r:
        raise SeparatorError("delta must lie in (0, r)")
    dX, iX = _edt(maskX)
    dY, iY = _edt(maskY)
    prob = SeparatorProblem(grid, maskX, maskY, r, delta, dX, dY, iX, iY)
    if not prob.U.any():
        raise SeparatorError("the region between the sets is empty")
    return prob


def _check_connected(prob: SeparatorProblem) -> None:
    lab, _ = ndimage.label(prob.U)
    grow_m = ndimage.binary_dilation(prob.minus) & prob.U
    grow_p = ndimage.binary_dilation(prob.plus) & prob.U
    both = np.intersect1d(np.unique(lab[grow_m]), np.unique(lab[grow_p]))
    if not np.any(both > 0):
        raise SeparatorError("U does not connect the two boundary sets")


def solve_harmonic(prob: SeparatorProblem) -> ScalarField:
    """Discrete Laplace solve on ``U`` with Shortley-Weller treatment of the curved
    Dirichlet boundaries and mirror (zero-flux) conditions on the box faces."""
    _check_connected(prob)
    grid = prob.grid
    hh = grid.spacing
    shape = grid.counts
    U = prob.U
    ids = -np.ones(shape, dtype=np.int64)
    ids[U] = np.arange(int(U.sum()))
    n = int(U.sum())
    vals = np.zeros(shape)
    vals[prob.minus] = -1.0
    vals[prob.plus] = 1.0
    # level functions whose zero crossings locate the Dirichlet boundaries
    phiM = prob.dX - prob.inner
    phiP = prob.dY - prob.inner
    rhs = np.zeros(n)
    diag = np.zeros(n)
    centre = np.argwhere(U)
    cid = ids[U]
    I, J, V = [], [], []
    for ax in range(grid.dim):
        # u_xx ~ 2 / (hl + hr) * [(u_r - u_i) / hr + (u_l - u_i) / hl]
        sides = []
        for step in (-1, 1):
            nb = centre.copy()
            nb[:, ax] += step
            outside = (nb[:, ax] < 0) | (nb[:, ax] >= shape[ax])
            nb[outside, ax] -= 2 * step  # mirror across the face
            nbt = tuple(nb.T)
            nb_id = ids[nbt]
            dirichlet = nb_id < 0
            theta = np.ones(len(centre))
            bval = np.zeros(len(centre))
            for phi, value in ((phiM, -1.0), (phiP, 1.0)):
                hit = dirichlet & (phi[nbt] <= 0)
                if hit.any():
                    a = phi[tuple(centre[hit].T)]
                    b = phi[nbt][hit]
                    theta[hit] = np.clip(a / np.where(a - b > 0, a - b, 1.0), THETA_MIN, 1.0)
                    bval[hit] = value
            sides.append((nb_id, theta * hh, bval, dirichlet))
        s = 2.0 / (sides[0][1] + sides[1][1])
        for nb_id, dist, bval, dirichlet in sides:
            coef = s / dist
            diag -= coef
            free = ~dirichlet
            I.append(cid[free])
            J.append(nb_id[free])
            V.append(coef[free])
            rhs -= np.where(dirichlet, coef * bval, 0.0)
    I.append(cid)
    J.append(cid)
    V.append(diag)
    A = sparse.csr_matrix((np.concatenate(V), (np.concatenate(I), np.concatenate(J))), shape=(n, n))
    sol = spsolve(A.tocsc(), rhs)
    res = float(np.abs(A @ sol - rhs).max())
    if not np.all(np.isfinite(sol)) or res > RESIDUAL_TOL:
        raise SeparatorError(f"Laplace solve did not converge (residual {res:.3g})")
    vals[U] = sol
    return ScalarField(grid, vals)


def laplace_residual(prob: SeparatorProblem, h: ScalarField) -> float:
    """Max five/seven-point Laplacian of ``h`` over nodes of ``U`` whose stencil stays in ``U``."""
    v = h.values
    lap = -2 * v.ndim * v
    for ax in range(v.ndim):
        lap = lap + np.roll(v, 1, ax) + np.roll(v, -1, ax)
    inner = ndimage.binary_erosion(prob.U, border_value=0)
    return float(np.abs(lap[inner]).max() / h.grid.spacing ** 2) if inner.any() else 0.0


def is_regular_value(h: ScalarField, c: float) -> bool:
    v = h.values - c
    close = np.abs(v) <= REGULAR_TOL
    if not close.any():
        return True
    flat = np.ones(v.shape, dtype=bool)
    for ax in range(v.ndim):
        d = np.abs(np.gradient(v, axis=ax))
        flat &= d <= REGULAR_TOL
    return not (close & flat).any()


def regular_level(h: ScalarField, c: float = 0.0, step: float = 1e-3, tries: int = 200) -> float:
    """``c`` if it is a discrete-regular value, else the nearest regular value on a ``step`` scan."""
    for k in range(tries):
        for cand in ((c,) if k == 0 else (c + k * step, c - k * step)):
            if -1 < cand < 1 and is_regular_value(h, cand):
                return cand
    raise SeparatorError(f"no regular value near {c}")


def _level_layer(v: np.ndarray) -> np.ndarray:
    """Nodes with ``v <= 0`` next to a node with ``v > 0``."""
    neg = v <= 0
    out = np.zeros(v.shape, dtype=bool)
    for ax in range(v.ndim):
        a = [slice(None)] * v.ndim
        b = [slice(None)] * v.ndim
        a[ax], b[ax] = slice(0, -1), slice(1, None)
        a, b = tuple(a), tuple(b)
        out[a] |= neg[a] & ~neg[b]
        out[b] |= neg[b] & ~neg[a]
    return out


def extract_separator(prob: SeparatorProblem, h: ScalarField, c: float = 0.0) -> ClosedSetMask:
    """``M = h^{-1}(c) u Z``; raises if ``M`` fails to separate ``X`` from ``Y``."""
    if not is_regular_value(h, c):
        raise SeparatorError(f"c={c} is not a discrete-regular value of h")
    M = ClosedSetMask(prob.grid, _level_layer(h.values - c) | prob.Z)
    leak = separation_leak(prob, M)
    if leak is not None:
        raise SeparatorError(f"M does not separate X from Y; leak through {leak}")
    return M


def separation_leak(prob: SeparatorProblem, M: ClosedSetMask):
    """``None`` if every path from X to Y meets M, else a node shared by both components."""
    free = ~M.inside
    lab, _ = ndimage.label(free)
    lx = np.unique(lab[prob.maskX.inside & free])
    ly = np.unique(lab[prob.maskY.inside & free])
    common = np.intersect1d(lx[lx > 0], ly[ly > 0])
    if common.size == 0:
        return None
    idx = np.argwhere(lab == common[0])[0]
    return prob.grid.index_to_point(idx).tolist()


def normal_continuity_report(M: ClosedSetMask, h: ScalarField, prob: SeparatorProblem,
                             radius_cells: float = 4.0) -> dict:
    """Largest angle between ``grad h`` and the X-to-Y direction on ``M`` near ``Z``.

    The direction at a node joins its nearest node of X to its nearest node of Y.
    """
    grid = prob.grid
    Z = prob.Z
    if not Z.any():
        return {"z_empty": True, "max_angle_deg": None, "nodes": 0}
    near = ndimage.distance_transform_edt(~Z) <= radius_cells
    sel = M.inside & near
    g = np.stack(np.gradient(h.values, grid.spacing), axis=-1)[sel]
    px = np.moveaxis(prob.idxX, 0, -1)[sel]
    py = np.moveaxis(prob.idxY, 0, -1)[sel]
    v = (py - px).astype(float)
    gn = np.linalg.norm(g, axis=1)
    vn = np.linalg.norm(v, axis=1)
    ok = (gn > 0) & (vn > 0)
    cosang = np.clip((g[ok] * v[ok]).sum(1) / (gn[ok] * vn[ok]), -1.0, 1.0)
    ang = np.degrees(np.arccos(cosang))
    worst = int(np.argmax(ang)) if ang.size else -1
    pts = np.argwhere(sel)[ok]
    return {"z_empty": False, "nodes": int(ok.sum()),
            "max_angle_deg": float(ang.max()) if ang.size else 0.0,
            "worst_point": grid.index_to_point(pts[worst]).tolist() if ang.size else None}


def separator_distances(prob: SeparatorProblem, M: ClosedSetMask) -> tuple[float, float]:
    return set_distance(prob.maskX, M), set_distance(prob.maskY, M)


def refinement_sweep(maskX: ClosedSetMask, maskY: ClosedSetMask, c: float = 0.0, halvings: int = 2,
                     delta: float | None = None) -> list[dict]:
    """Solve and extract for ``delta, delta/2, ...``; one row per ``delta``."""
    rows = []
    prob = separator_problem(maskX, maskY, delta)
    d = prob.delta
    for k in range(halvings + 1):
        prob = separator_problem(maskX, maskY, d / 2 ** k)
        h = solve_harmonic(prob)
        level = regular_level(h, c)
        M = extract_separator(prob, h, level)
        dx, dy = separator_distances(prob, M)
        rows.append({"delta": prob.delta, "r": prob.r, "c": level, "dist_X": dx, "dist_Y": dy,
                     "problem": prob, "h": h, "M": M})
    return rows


def check_separator(maskX: ClosedSetMask, maskY: ClosedSetMask, c: float = 0.0, tol_cells: float = 3.0,
                    angle_deg: float = 15.0):
    """Separation, equidistance within ``tol_cells * h`` of ``r`` after the sweep, and the
    normal-continuity angle near the contact set."""
    started = _time.perf_counter()
    rows = refinement_sweep(maskX, maskY, c)
    last = rows[-1]
    prob, h, M = last["problem"], last["h"], last["M"]
    hg = prob.grid.spacing
    tol = tol_cells * hg
    eq = abs(last["dist_X"] - last["dist_Y"])
    off = max(abs(last["dist_X"] - prob.r), abs(last["dist_Y"] - prob.r))
    nc = normal_continuity_report(M, h, prob)
    margins = [tol - eq, tol - off]
    if not nc["z_empty"]:
        margins.append(math.radians(angle_deg) - math.radians(nc["max_angle_deg"]))
    details = {"r": prob.r, "sweep": [{k: v for k, v in row.items() if k not in ("problem", "h", "M")}
                                      for row in rows],
               "equidistance_gap": eq, "offset_from_r": off, "normal_continuity": nc,
               "residual": laplace_residual(prob, h)}
    return report(TheoremId.Separator, min(margins), 0.0, (math.nan, nc.get("worst_point")), details, started)


def radial_profile_fit(prob: SeparatorProblem, h: ScalarField, center=None) -> dict:
    """Least-squares fit of ``a ln|x - center| + b`` to ``h`` on ``U`` (2-D only).

    Returns the coefficients and the largest misfit relative to ``max |h|`` on ``U``.
    """
    grid = prob.grid
    if grid.dim != 2:
        raise ValueError("the logarithmic profile is the radial harmonic function in 2-D only")
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    U = prob.U
    rho = np.linalg.norm(grid.coords()[U] - c, axis=1)
    if np.any(rho <= 0):
        raise ValueError("the centre lies in U")
    A = np.stack([np.log(rho), np.ones_like(rho)], axis=1)
    coef, *_ = np.linalg.lstsq(A, h.values[U], rcond=None)
    err = np.abs(A @ coef - h.values[U]).max() / np.abs(h.values[U]).max()
    return {"a": float(coef[0]), "b": float(coef[1]), "relative_error": float(err)}
