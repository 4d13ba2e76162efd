"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``SVOMERGE_DISABLE_NUMBA=1`` before import to force the numpy versions.
Both paths are kept numerically equivalent; tests compare them directly.
"""

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SVOMERGE_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    # no fastmath: the two paths must agree bit-for-bit on comparisons
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# pixel intensity from relative speed
# --------------------------------------------------------------------------


_SNAP = 1e-12


def _pixel_values_np(v_rel, alpha, beta, v0):
    speed = np.abs(np.asarray(v_rel, dtype=np.float64))
    out = np.ones_like(speed)
    hot = speed >= v0
    out[hot] = 1.0 - beta * np.log(alpha * speed[hot])
    out[out < _SNAP] = 0.0  # beta * log(...) == 1 up to rounding at the zero crossing
    return np.clip(out, 0.0, 1.0)


@_njit
def _pixel_values_nb(v_rel, alpha, beta, v0):
    out = np.empty(v_rel.shape[0])
    for i in range(v_rel.shape[0]):
        s = abs(v_rel[i])
        z = 1.0
        if s >= v0:
            z = 1.0 - beta * math.log(alpha * s)
        if z < _SNAP:
            z = 0.0
        elif z > 1.0:
            z = 1.0
        out[i] = z
    return out


def pixel_values(v_rel, alpha, beta, v0):
    v_rel = np.ascontiguousarray(np.atleast_1d(v_rel), dtype=np.float64)
    if USE_NUMBA:
        return _pixel_values_nb(v_rel, float(alpha), float(beta), float(v0))
    return _pixel_values_np(v_rel, alpha, beta, v0)


# --------------------------------------------------------------------------
# oriented-box rasterization (max-combine)
# --------------------------------------------------------------------------


def _rasterize_np(plane, cl, cd, hl, hw, cos_h, sin_h, values, l0, d0, mpp_l, mpp_d):
    n_l, n_d = plane.shape
    for k in range(cl.shape[0]):
        ext_l = abs(hl[k] * cos_h[k]) + abs(hw[k] * sin_h[k])
        ext_d = abs(hl[k] * sin_h[k]) + abs(hw[k] * cos_h[k])
        i_lo = max(int(math.floor((cl[k] - ext_l - l0) / mpp_l)), 0)
        i_hi = min(int(math.floor((cl[k] + ext_l - l0) / mpp_l)) + 1, n_l)
        j_lo = max(int(math.floor((d0 - (cd[k] + ext_d)) / mpp_d)), 0)
        j_hi = min(int(math.floor((d0 - (cd[k] - ext_d)) / mpp_d)) + 1, n_d)
        if i_lo >= i_hi or j_lo >= j_hi:
            continue
        pl = l0 + (np.arange(i_lo, i_hi) + 0.5) * mpp_l - cl[k]
        pd = d0 - (np.arange(j_lo, j_hi) + 0.5) * mpp_d - cd[k]
        u = pl[:, None] * cos_h[k] + pd[None, :] * sin_h[k]
        w = -pl[:, None] * sin_h[k] + pd[None, :] * cos_h[k]
        inside = (np.abs(u) <= hl[k]) & (np.abs(w) <= hw[k])
        block = plane[i_lo:i_hi, j_lo:j_hi]
        np.maximum(block, np.where(inside, values[k], 0.0), out=block)
    return plane


@_njit
def _rasterize_nb(plane, cl, cd, hl, hw, cos_h, sin_h, values, l0, d0, mpp_l, mpp_d):
    n_l, n_d = plane.shape
    for k in range(cl.shape[0]):
        ext_l = abs(hl[k] * cos_h[k]) + abs(hw[k] * sin_h[k])
        ext_d = abs(hl[k] * sin_h[k]) + abs(hw[k] * cos_h[k])
        i_lo = max(int(math.floor((cl[k] - ext_l - l0) / mpp_l)), 0)
        i_hi = min(int(math.floor((cl[k] + ext_l - l0) / mpp_l)) + 1, n_l)
        j_lo = max(int(math.floor((d0 - (cd[k] + ext_d)) / mpp_d)), 0)
        j_hi = min(int(math.floor((d0 - (cd[k] - ext_d)) / mpp_d)) + 1, n_d)
        for i in range(i_lo, i_hi):
            pl = l0 + (i + 0.5) * mpp_l - cl[k]
            for j in range(j_lo, j_hi):
                pd = d0 - (j + 0.5) * mpp_d - cd[k]
                u = pl * cos_h[k] + pd * sin_h[k]
                w = -pl * sin_h[k] + pd * cos_h[k]
                if abs(u) <= hl[k] and abs(w) <= hw[k]:
                    if values[k] > plane[i, j]:
                        plane[i, j] = values[k]
    return plane


def rasterize_boxes(plane, cl, cd, hl, hw, heading, values, l0, d0, mpp_l, mpp_d):
    """Paint oriented boxes into ``plane`` (shape ``(n_l, n_d)``) in place.

    Pixel ``(i, j)`` has its center at longitudinal ``l0 + (i + .5) * mpp_l``
    and lateral ``d0 - (j + .5) * mpp_d`` (``j = 0`` is the left edge).
    Overlapping boxes keep the larger value.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (cl, cd, hl, hw)]
    heading = np.asarray(heading, dtype=np.float64)
    cos_h = np.ascontiguousarray(np.cos(heading))
    sin_h = np.ascontiguousarray(np.sin(heading))
    values = np.ascontiguousarray(values, dtype=np.float64)
    fn = _rasterize_nb if USE_NUMBA else _rasterize_np
    return fn(plane, *args, cos_h, sin_h, values, float(l0), float(d0), float(mpp_l), float(mpp_d))


# --------------------------------------------------------------------------
# oriented-rectangle overlap (separating axis test)
# --------------------------------------------------------------------------


def _overlaps_np(cx, cy, cos_h, sin_h, hl, hw, active):
    n = cx.shape[0]
    ii, jj = np.triu_indices(n, k=1)
    keep = active[ii] & active[jj]
    ii, jj = ii[keep], jj[keep]
    if ii.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    dx = cx[jj] - cx[ii]
    dy = cy[jj] - cy[ii]
    separated = np.zeros(ii.shape[0], dtype=bool)
    # candidate axes: the two local axes of each box
    for src in (ii, jj):
        for ax_x, ax_y in ((cos_h[src], sin_h[src]), (-sin_h[src], cos_h[src])):
            dist = np.abs(dx * ax_x + dy * ax_y)
            r_i = np.abs(hl[ii] * (cos_h[ii] * ax_x + sin_h[ii] * ax_y)) + np.abs(
                hw[ii] * (-sin_h[ii] * ax_x + cos_h[ii] * ax_y)
            )
            r_j = np.abs(hl[jj] * (cos_h[jj] * ax_x + sin_h[jj] * ax_y)) + np.abs(
                hw[jj] * (-sin_h[jj] * ax_x + cos_h[jj] * ax_y)
            )
            separated |= dist >= r_i + r_j
    hit = ~separated
    return np.stack([ii[hit], jj[hit]], axis=1).astype(np.int64)


@_njit
def _overlaps_nb(cx, cy, cos_h, sin_h, hl, hw, active):
    n = cx.shape[0]
    out = np.empty((n * (n - 1) // 2 + 1, 2), dtype=np.int64)
    m = 0
    for i in range(n):
        if not active[i]:
            continue
        for j in range(i + 1, n):
            if not active[j]:
                continue
            dx = cx[j] - cx[i]
            dy = cy[j] - cy[i]
            hit = True
            for s in range(4):
                src = i if s < 2 else j
                if s % 2 == 0:
                    ax_x = cos_h[src]
                    ax_y = sin_h[src]
                else:
                    ax_x = -sin_h[src]
                    ax_y = cos_h[src]
                dist = abs(dx * ax_x + dy * ax_y)
                r_i = abs(hl[i] * (cos_h[i] * ax_x + sin_h[i] * ax_y)) + abs(
                    hw[i] * (-sin_h[i] * ax_x + cos_h[i] * ax_y)
                )
                r_j = abs(hl[j] * (cos_h[j] * ax_x + sin_h[j] * ax_y)) + abs(
                    hw[j] * (-sin_h[j] * ax_x + cos_h[j] * ax_y)
                )
                if dist >= r_i + r_j:
                    hit = False
                    break
            if hit:
                out[m, 0] = i
                out[m, 1] = j
                m += 1
    return out[:m]


def overlapping_pairs(cx, cy, heading, hl, hw, active):
    """Index pairs ``(i, j)``, ``i < j``, of active boxes with positive overlap."""
    cx = np.ascontiguousarray(cx, dtype=np.float64)
    cy = np.ascontiguousarray(cy, dtype=np.float64)
    heading = np.asarray(heading, dtype=np.float64)
    cos_h = np.ascontiguousarray(np.cos(heading))
    sin_h = np.ascontiguousarray(np.sin(heading))
    hl = np.ascontiguousarray(hl, dtype=np.float64)
    hw = np.ascontiguousarray(hw, dtype=np.float64)
    active = np.ascontiguousarray(active, dtype=np.bool_)
    fn = _overlaps_nb if USE_NUMBA else _overlaps_np
    return fn(cx, cy, cos_h, sin_h, hl, hw, active)


# --------------------------------------------------------------------------
# IDM acceleration over arrays
# --------------------------------------------------------------------------


def _idm_np(v, v0, gap, dv, has_leader, a_max, b, T, s0, delta, b_emergency):
    free = a_max * (1.0 - np.power(np.maximum(v, 0.0) / v0, delta))
    s_star = s0 + np.maximum(v * T + v * dv / (2.0 * math.sqrt(a_max * b)), 0.0)
    safe_gap = np.where(gap > 0.0, gap, 1.0)
    inter = np.where(has_leader, a_max * (s_star / safe_gap) ** 2, 0.0)
    acc = np.clip(free - inter, -b_emergency, a_max)
    return np.where(has_leader & (gap <= 0.0), -b_emergency, acc)


@_njit
def _idm_nb(v, v0, gap, dv, has_leader, a_max, b, T, s0, delta, b_emergency):
    out = np.empty(v.shape[0])
    root = math.sqrt(a_max * b)
    for i in range(v.shape[0]):
        if has_leader[i] and gap[i] <= 0.0:
            out[i] = -b_emergency
            continue
        vi = v[i] if v[i] > 0.0 else 0.0
        acc = a_max * (1.0 - (vi / v0[i]) ** delta)
        if has_leader[i]:
            dyn = v[i] * T + v[i] * dv[i] / (2.0 * root)
            if dyn < 0.0:
                dyn = 0.0
            s_star = s0 + dyn
            acc -= a_max * (s_star / gap[i]) ** 2
        if acc < -b_emergency:
            acc = -b_emergency
        elif acc > a_max:
            acc = a_max
        out[i] = acc
    return out


def idm_accelerations(v, v0, gap, dv, has_leader, a_max, b, T, s0, delta, b_emergency):
    """Vectorized IDM; ``dv`` is ego speed minus leader speed."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    n = v.shape[0]
    v0 = np.ascontiguousarray(np.broadcast_to(v0, (n,)), dtype=np.float64)
    gap = np.ascontiguousarray(np.broadcast_to(gap, (n,)), dtype=np.float64)
    dv = np.ascontiguousarray(np.broadcast_to(dv, (n,)), dtype=np.float64)
    has_leader = np.ascontiguousarray(np.broadcast_to(has_leader, (n,)), dtype=np.bool_)
    fn = _idm_nb if USE_NUMBA else _idm_np
    return fn(v, v0, gap, dv, has_leader, float(a_max), float(b), float(T), float(s0), float(delta), float(b_emergency))


def backend():
    return "numba" if USE_NUMBA else "numpy"
