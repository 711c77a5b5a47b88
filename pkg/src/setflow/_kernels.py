"""Numba stencils for one explicit Euler step of

    u_t = |grad u| div(grad u / |grad u|) - X . grad u

Curvature term: ``lap u - g^T D2u g / (|g|^2 + eps^2)`` with central differences. Where
``h |lambda| > |g|`` for the Hessian eigenvalue of largest magnitude (a kink of an
unsigned distance, or a cone tip) that eigen-direction is treated as the normal and
dropped instead. Transport: first-order upwind. Only the listed nodes are updated and
face nodes are never touched.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def step2d(u, ax, ay, use_x, act, h, dt, eps2):
    nx, ny = u.shape
    n = act.shape[0]
    new = np.empty(n)
    ih = 1.0 / h
    i2h = 0.5 / h
    ih2 = 1.0 / (h * h)
    i4h2 = 0.25 / (h * h)
    umin = np.inf
    amax = 0.0
    for k in range(n):
        i = act[k, 0]
        j = act[k, 1]
        c = u[i, j]
        if i == 0 or j == 0 or i == nx - 1 or j == ny - 1:
            new[k] = c
            continue
        ux = (u[i + 1, j] - u[i - 1, j]) * i2h
        uy = (u[i, j + 1] - u[i, j - 1]) * i2h
        uxx = (u[i + 1, j] - 2.0 * c + u[i - 1, j]) * ih2
        uyy = (u[i, j + 1] - 2.0 * c + u[i, j - 1]) * ih2
        uxy = (u[i + 1, j + 1] - u[i + 1, j - 1] - u[i - 1, j + 1] + u[i - 1, j - 1]) * i4h2
        g2 = ux * ux + uy * uy
        tr = uxx + uyy
        half = 0.5 * tr
        disc = np.sqrt(max(half * half - (uxx * uyy - uxy * uxy), 0.0))
        l1 = half + disc
        l2 = half - disc
        lam = l1 if abs(l1) >= abs(l2) else l2
        if h * abs(lam) > np.sqrt(g2):
            curv = tr - lam
        else:
            curv = tr - (ux * ux * uxx + 2.0 * ux * uy * uxy + uy * uy * uyy) / (g2 + eps2)
        adv = 0.0
        if use_x:
            a = ax[i, j]
            b = ay[i, j]
            if a > 0.0:
                adv += a * (c - u[i - 1, j]) * ih
            else:
                adv += a * (u[i + 1, j] - c) * ih
            if b > 0.0:
                adv += b * (c - u[i, j - 1]) * ih
            else:
                adv += b * (u[i, j + 1] - c) * ih
        v = c + dt * (curv - adv)
        new[k] = v
    for k in range(n):
        v = new[k]
        u[act[k, 0], act[k, 1]] = v
        if v < umin:
            umin = v
        if abs(v) > amax or not np.isfinite(v):
            amax = abs(v) if np.isfinite(v) else np.inf
    return umin, amax


@njit(cache=True)
def step3d(u, ax, ay, az, use_x, act, h, dt, eps2):
    nx, ny, nz = u.shape
    n = act.shape[0]
    new = np.empty(n)
    ih = 1.0 / h
    i2h = 0.5 / h
    ih2 = 1.0 / (h * h)
    i4h2 = 0.25 / (h * h)
    H = np.empty((3, 3))
    umin = np.inf
    amax = 0.0
    for m in range(n):
        i = act[m, 0]
        j = act[m, 1]
        k = act[m, 2]
        c = u[i, j, k]
        if i == 0 or j == 0 or k == 0 or i == nx - 1 or j == ny - 1 or k == nz - 1:
            new[m] = c
            continue
        gx = (u[i + 1, j, k] - u[i - 1, j, k]) * i2h
        gy = (u[i, j + 1, k] - u[i, j - 1, k]) * i2h
        gz = (u[i, j, k + 1] - u[i, j, k - 1]) * i2h
        H[0, 0] = (u[i + 1, j, k] - 2.0 * c + u[i - 1, j, k]) * ih2
        H[1, 1] = (u[i, j + 1, k] - 2.0 * c + u[i, j - 1, k]) * ih2
        H[2, 2] = (u[i, j, k + 1] - 2.0 * c + u[i, j, k - 1]) * ih2
        H[0, 1] = (u[i + 1, j + 1, k] - u[i + 1, j - 1, k] - u[i - 1, j + 1, k] + u[i - 1, j - 1, k]) * i4h2
        H[0, 2] = (u[i + 1, j, k + 1] - u[i + 1, j, k - 1] - u[i - 1, j, k + 1] + u[i - 1, j, k - 1]) * i4h2
        H[1, 2] = (u[i, j + 1, k + 1] - u[i, j + 1, k - 1] - u[i, j - 1, k + 1] + u[i, j - 1, k - 1]) * i4h2
        H[1, 0] = H[0, 1]
        H[2, 0] = H[0, 2]
        H[2, 1] = H[1, 2]
        g2 = gx * gx + gy * gy + gz * gz
        g = np.sqrt(g2)
        tr = H[0, 0] + H[1, 1] + H[2, 2]
        fro = 0.0
        for a in range(3):
            for b in range(3):
                fro += H[a, b] * H[a, b]
        curv = 0.0
        kink = False
        if h * np.sqrt(fro) > g:
            w = np.linalg.eigvalsh(H)
            lam = w[0] if abs(w[0]) >= abs(w[2]) else w[2]
            if h * abs(lam) > g:
                curv = tr - lam
                kink = True
        if not kink:
            q = (gx * (H[0, 0] * gx + H[0, 1] * gy + H[0, 2] * gz)
                 + gy * (H[1, 0] * gx + H[1, 1] * gy + H[1, 2] * gz)
                 + gz * (H[2, 0] * gx + H[2, 1] * gy + H[2, 2] * gz))
            curv = tr - q / (g2 + eps2)
        adv = 0.0
        if use_x:
            a = ax[i, j, k]
            b = ay[i, j, k]
            d = az[i, j, k]
            if a > 0.0:
                adv += a * (c - u[i - 1, j, k]) * ih
            else:
                adv += a * (u[i + 1, j, k] - c) * ih
            if b > 0.0:
                adv += b * (c - u[i, j - 1, k]) * ih
            else:
                adv += b * (u[i, j + 1, k] - c) * ih
            if d > 0.0:
                adv += d * (c - u[i, j, k - 1]) * ih
            else:
                adv += d * (u[i, j, k + 1] - c) * ih
        new[m] = c + dt * (curv - adv)
    for m in range(n):
        v = new[m]
        u[act[m, 0], act[m, 1], act[m, 2]] = v
        if v < umin:
            umin = v
        if abs(v) > amax or not np.isfinite(v):
            amax = abs(v) if np.isfinite(v) else np.inf
    return umin, amax


# --- redistancing (2-D) ------------------------------------------------------------


@njit(cache=True)
def _seg_splat(ax_, ay_, bx, by, dist, fx, fy, reach):
    nx, ny = dist.shape
    i0 = max(int(np.floor(min(ax_, bx) - reach)), 0)
    i1 = min(int(np.ceil(max(ax_, bx) + reach)), nx - 1)
    j0 = max(int(np.floor(min(ay_, by) - reach)), 0)
    j1 = min(int(np.ceil(max(ay_, by) + reach)), ny - 1)
    ex = bx - ax_
    ey = by - ay_
    ee = ex * ex + ey * ey
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            s = 0.0
            if ee > 0.0:
                s = ((i - ax_) * ex + (j - ay_) * ey) / ee
                s = min(max(s, 0.0), 1.0)
            px = ax_ + s * ex
            py = ay_ + s * ey
            d = np.sqrt((i - px) ** 2 + (j - py) ** 2)
            if d < dist[i, j]:
                dist[i, j] = d
                fx[i, j] = px
                fy[i, j] = py


@njit(cache=True, inline="always")
def _keys(t, a):
    """Keys cubic convolution weight (and derivative) of tap ``a`` in 0..3 at offset ``t``."""
    t2 = t * t
    t3 = t2 * t
    if a == 0:
        return 0.5 * (-t3 + 2 * t2 - t), 0.5 * (-3 * t2 + 4 * t - 1)
    if a == 1:
        return 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (9 * t2 - 10 * t)
    if a == 2:
        return 0.5 * (-3 * t3 + 4 * t2 + t), 0.5 * (-9 * t2 + 8 * t + 1)
    return 0.5 * (t3 - t2), 0.5 * (3 * t2 - 2 * t)


@njit(cache=True)
def _cubic_eval(u, px, py):
    """Value and index-space gradient of the Keys cubic interpolant at ``(px, py)``."""
    nx, ny = u.shape
    i = min(max(int(np.floor(px)), 0), nx - 2)
    j = min(max(int(np.floor(py)), 0), ny - 2)
    tx = px - i
    ty = py - j
    v = 0.0
    gx = 0.0
    gy = 0.0
    for a in range(4):
        wa, da = _keys(tx, a)
        ii = min(max(i - 1 + a, 0), nx - 1)
        for b in range(4):
            wb, db = _keys(ty, b)
            jj = min(max(j - 1 + b, 0), ny - 1)
            c = u[ii, jj]
            v += wa * wb * c
            gx += da * wb * c
            gy += wa * db * c
    return v, gx, gy


@njit(cache=True)
def redistance2d(u, h, reach, refine, iters, keep):
    """Signed distance to ``{u = 0}`` (negative where ``u <= 0``), capped at ``reach`` cells.

    Marching-squares segments are splatted onto nearby nodes; nodes closer than
    ``refine`` cells are then moved onto the zero set of the cubic interpolant by
    alternating projection and tangential steps. With ``keep`` the nodes next to a sign
    change retain their values, which leaves the linearly interpolated front untouched.
    """
    nx, ny = u.shape
    dist = np.full((nx, ny), reach)
    fx = np.zeros((nx, ny))
    fy = np.zeros((nx, ny))
    px = np.empty(4)
    py = np.empty(4)
    hit = np.empty(4, dtype=np.bool_)
    for i in range(nx - 1):
        for j in range(ny - 1):
            v00 = u[i, j]
            v10 = u[i + 1, j]
            v01 = u[i, j + 1]
            v11 = u[i + 1, j + 1]
            n00 = v00 <= 0.0
            n10 = v10 <= 0.0
            n01 = v01 <= 0.0
            n11 = v11 <= 0.0
            if n00 == n10 and n00 == n01 and n00 == n11:
                continue
            hit[0] = n00 != n10
            hit[1] = n10 != n11
            hit[2] = n01 != n11
            hit[3] = n00 != n01
            if hit[0]:
                px[0] = i + v00 / (v00 - v10)
                py[0] = j
            if hit[1]:
                px[1] = i + 1
                py[1] = j + v10 / (v10 - v11)
            if hit[2]:
                px[2] = i + v01 / (v01 - v11)
                py[2] = j + 1
            if hit[3]:
                px[3] = i
                py[3] = j + v00 / (v00 - v01)
            cnt = hit[0] + hit[1] + hit[2] + hit[3]
            if cnt == 2:
                a = -1
                b = -1
                for e in range(4):
                    if hit[e]:
                        if a < 0:
                            a = e
                        else:
                            b = e
                _seg_splat(px[a], py[a], px[b], py[b], dist, fx, fy, reach)
            elif cnt == 4:
                center = 0.25 * (v00 + v10 + v01 + v11)
                if (center <= 0.0) == n00:
                    _seg_splat(px[0], py[0], px[1], py[1], dist, fx, fy, reach)
                    _seg_splat(px[2], py[2], px[3], py[3], dist, fx, fy, reach)
                else:
                    _seg_splat(px[0], py[0], px[3], py[3], dist, fx, fy, reach)
                    _seg_splat(px[2], py[2], px[1], py[1], dist, fx, fy, reach)
    out = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            c = u[i, j]
            neg = c <= 0.0
            sg = -h if neg else h
            if keep and ((i > 0 and (u[i - 1, j] <= 0.0) != neg) or (i < nx - 1 and (u[i + 1, j] <= 0.0) != neg)
                         or (j > 0 and (u[i, j - 1] <= 0.0) != neg)
                         or (j < ny - 1 and (u[i, j + 1] <= 0.0) != neg)):
                out[i, j] = c
                continue
            d0 = dist[i, j]
            out[i, j] = sg * d0
            if d0 >= refine:
                continue
            yx = fx[i, j]
            yy = fy[i, j]
            ok = True
            for it in range(iters):
                v, gx, gy = _cubic_eval(u, yx, yy)
                gg = gx * gx + gy * gy
                if gg < 1e-24:
                    ok = False
                    break
                yx -= v * gx / gg
                yy -= v * gy / gg
                v, gx, gy = _cubic_eval(u, yx, yy)
                gn = np.sqrt(gx * gx + gy * gy)
                if gn < 1e-12:
                    ok = False
                    break
                nxv = gx / gn
                nyv = gy / gn
                rx = i - yx
                ry = j - yy
                rn = rx * nxv + ry * nyv
                yx += rx - rn * nxv
                yy += ry - rn * nyv
            if not ok:
                continue
            v, gx, gy = _cubic_eval(u, yx, yy)
            gg = gx * gx + gy * gy
            if gg < 1e-24:
                continue
            yx -= v * gx / gg
            yy -= v * gy / gg
            d = np.sqrt((i - yx) ** 2 + (j - yy) ** 2)
            if abs(d - d0) < 1.0:
                out[i, j] = sg * d
    return out


@njit(cache=True)
def polygon_self_intersects(P):
    """True if two non-adjacent edges of the closed polygon ``P`` properly cross."""
    n = P.shape[0]
    for i in range(n):
        ax, ay = P[i, 0], P[i, 1]
        bx, by = P[(i + 1) % n, 0], P[(i + 1) % n, 1]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            cx, cy = P[j, 0], P[j, 1]
            dx, dy = P[(j + 1) % n, 0], P[(j + 1) % n, 1]
            if max(cx, dx) < min(ax, bx) or max(ax, bx) < min(cx, dx):
                continue
            if max(cy, dy) < min(ay, by) or max(ay, by) < min(cy, dy):
                continue
            o1 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            o2 = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
            o3 = (dx - cx) * (ay - cy) - (dy - cy) * (ax - cx)
            o4 = (dx - cx) * (by - cy) - (dy - cy) * (bx - cx)
            if o1 * o2 < 0 and o3 * o4 < 0:
                return True
    return False
