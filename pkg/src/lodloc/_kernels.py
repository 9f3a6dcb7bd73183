"""Hot numeric kernels with two interchangeable backends.

The default backend compiles the inner loops with numba's ``@njit``; setting
the environment variable ``LODLOC_NO_NUMBA=1`` (or any value other than
``0``) before import selects the pure-numpy fallback instead. Both backends
evaluate the same floating-point expressions in the same order, so results
agree to machine precision; within one backend, parallel and sequential
execution write disjoint output slots in a fixed inner order and are
bit-identical.

Kernels here:

* ``raster_triangles``  - z-buffer rasterization of screen-space triangles,
  parallel over row bands.
* ``score_volume``      - mean map probability of projected wireframe points
  for every pose hypothesis in a 4-D grid, parallel over hypotheses.
* ``splat_max``         - max-accumulated Gaussian splats (oracle maps).
* ``bilinear_values`` / ``bilinear_gradient`` - vectorized zero-padded
  lookups shared by the numpy paths.

numba's parallel runtime is not reentrant, so parallel kernel entry is
serialized by a module lock; the batch runner may still thread over queries.
"""

from __future__ import annotations

import math
import os
import threading

import numpy as np

_KERNEL_LOCK = threading.Lock()

_DISABLED = os.environ.get("LODLOC_NO_NUMBA", "") not in ("", "0")

HAS_NUMBA = False
if not _DISABLED:
    try:
        import numba
        from numba import njit, prange

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        pass

USING_NUMBA = HAS_NUMBA


# ---------------------------------------------------------------------------
# Bilinear lookup, numpy form. Pixel centers at integer coordinates; outside
# [0, W-1] x [0, H-1] the map reads as zero. NaN coordinates read as zero.

def bilinear_values(map2d: np.ndarray, u, v) -> np.ndarray:
    h, w = map2d.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ok = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
    uq = np.where(ok, u, 0.0)
    vq = np.where(ok, v, 0.0)
    x0 = np.floor(uq).astype(np.int64)
    y0 = np.floor(vq).astype(np.int64)
    fu = uq - x0
    fv = vq - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    m = map2d
    val = (1.0 - fv) * ((1.0 - fu) * m[y0, x0] + fu * m[y0, x1]) \
        + fv * ((1.0 - fu) * m[y1, x0] + fu * m[y1, x1])
    return np.where(ok, val, 0.0)


def bilinear_gradient(map2d: np.ndarray, u, v):
    """Exact partial derivatives of the piecewise-bilinear surface."""
    h, w = map2d.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ok = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
    uq = np.where(ok, u, 0.0)
    vq = np.where(ok, v, 0.0)
    x0 = np.floor(uq).astype(np.int64)
    y0 = np.floor(vq).astype(np.int64)
    fu = uq - x0
    fv = vq - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    m = map2d
    du = (1.0 - fv) * (m[y0, x1] - m[y0, x0]) + fv * (m[y1, x1] - m[y1, x0])
    dv = (1.0 - fu) * (m[y1, x0] - m[y0, x0]) + fu * (m[y1, x1] - m[y0, x1])
    return np.where(ok, du, 0.0), np.where(ok, dv, 0.0)


# ---------------------------------------------------------------------------
# Pose-volume scoring.
#
# Inputs: probability map, wireframe points (N, 3), level-scaled intrinsics,
# one rotation per yaw sample (mt, 3, 3) and the absolute camera-center axes
# cxs (mx,), cys (my,), czs (mz,). Output cost has shape (mx, my, mz, mt),
# row-major in (x, y, z, yaw); cost = mean point probability, with points at
# nonpositive depth contributing zero.

def _score_body(map2d, pts, fx, fy, cx, cy, rstack, cxs, cys, czs, out):
    h, w = map2d.shape
    mx = cxs.shape[0]
    my = cys.shape[0]
    mz = czs.shape[0]
    mt = rstack.shape[0]
    n = pts.shape[0]
    total = mx * my * mz * mt
    flat_out = out.reshape(total)
    for flat in prange(total):
        q = flat % mt
        k = (flat // mt) % mz
        j = (flat // (mt * mz)) % my
        i = flat // (mt * mz * my)
        r00 = rstack[q, 0, 0]
        r01 = rstack[q, 0, 1]
        r02 = rstack[q, 0, 2]
        r10 = rstack[q, 1, 0]
        r11 = rstack[q, 1, 1]
        r12 = rstack[q, 1, 2]
        r20 = rstack[q, 2, 0]
        r21 = rstack[q, 2, 1]
        r22 = rstack[q, 2, 2]
        ccx = cxs[i]
        ccy = cys[j]
        ccz = czs[k]
        t0 = -(r00 * ccx + r01 * ccy + r02 * ccz)
        t1 = -(r10 * ccx + r11 * ccy + r12 * ccz)
        t2 = -(r20 * ccx + r21 * ccy + r22 * ccz)
        acc = 0.0
        for p in range(n):
            px = pts[p, 0]
            py = pts[p, 1]
            pz = pts[p, 2]
            zc = r20 * px + r21 * py + r22 * pz + t2
            if zc <= 0.0:
                continue
            xc = r00 * px + r01 * py + r02 * pz + t0
            yc = r10 * px + r11 * py + r12 * pz + t1
            u = fx * xc / zc + cx
            v = fy * yc / zc + cy
            if not (u >= 0.0 and u <= w - 1.0 and v >= 0.0 and v <= h - 1.0):
                continue
            x0 = int(math.floor(u))
            y0 = int(math.floor(v))
            fu = u - x0
            fv = v - y0
            x1 = x0 + 1 if x0 + 1 <= w - 1 else w - 1
            y1 = y0 + 1 if y0 + 1 <= h - 1 else h - 1
            acc += (1.0 - fv) * ((1.0 - fu) * map2d[y0, x0] + fu * map2d[y0, x1]) \
                + fv * ((1.0 - fu) * map2d[y1, x0] + fu * map2d[y1, x1])
        flat_out[flat] = acc / n


def _score_numpy(map2d, pts, fx, fy, cx, cy, rstack, cxs, cys, czs, out):
    mx, my, mz = cxs.shape[0], cys.shape[0], czs.shape[0]
    mt = rstack.shape[0]
    n = pts.shape[0]
    gx, gy, gz = np.meshgrid(cxs, cys, czs, indexing="ij")
    gx = gx.ravel()
    gy = gy.ravel()
    gz = gz.ravel()
    for q in range(mt):
        r = rstack[q]
        t0 = -(r[0, 0] * gx + r[0, 1] * gy + r[0, 2] * gz)
        t1 = -(r[1, 0] * gx + r[1, 1] * gy + r[1, 2] * gz)
        t2 = -(r[2, 0] * gx + r[2, 1] * gy + r[2, 2] * gz)
        acc = np.zeros(mx * my * mz, dtype=np.float64)
        # Accumulate point by point so the per-hypothesis summation order
        # matches the compiled kernel exactly.
        for p in range(n):
            px, py, pz = pts[p, 0], pts[p, 1], pts[p, 2]
            zc = r[2, 0] * px + r[2, 1] * py + r[2, 2] * pz + t2
            xc = r[0, 0] * px + r[0, 1] * py + r[0, 2] * pz + t0
            yc = r[1, 0] * px + r[1, 1] * py + r[1, 2] * pz + t1
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                u = fx * xc / zc + cx
                v = fy * yc / zc + cy
            vals = bilinear_values(map2d, u, v)
            acc += np.where(zc > 0.0, vals, 0.0)
        out[:, :, :, q] = (acc / n).reshape(mx, my, mz)


# ---------------------------------------------------------------------------
# Z-buffer rasterization. Triangles arrive pre-clipped against the near
# plane as (T, 3, 3) arrays of (u, v, 1/z) rows; coverage is tested at
# integer pixel centers with inclusive edges, and ties keep the first
# submitted face. Rows are partitioned into bands, so any band count gives
# the same buffer.

def _raster_body(tris, zbuf, row0, row1):
    h, w = zbuf.shape
    nt = tris.shape[0]
    for t in range(nt):
        u0 = tris[t, 0, 0]
        v0 = tris[t, 0, 1]
        z0 = tris[t, 0, 2]
        u1 = tris[t, 1, 0]
        v1 = tris[t, 1, 1]
        z1 = tris[t, 1, 2]
        u2 = tris[t, 2, 0]
        v2 = tris[t, 2, 1]
        z2 = tris[t, 2, 2]
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if area == 0.0:
            continue
        s = 1.0 / area
        umin = min(u0, min(u1, u2))
        umax = max(u0, max(u1, u2))
        vmin = min(v0, min(v1, v2))
        vmax = max(v0, max(v1, v2))
        ix0 = max(int(math.ceil(umin)), 0)
        ix1 = min(int(math.floor(umax)), w - 1)
        iy0 = max(int(math.ceil(vmin)), row0)
        iy1 = min(int(math.floor(vmax)), row1 - 1)
        for iy in range(iy0, iy1 + 1):
            for ix in range(ix0, ix1 + 1):
                w0 = ((u1 - ix) * (v2 - iy) - (u2 - ix) * (v1 - iy)) * s
                w1 = ((u2 - ix) * (v0 - iy) - (u0 - ix) * (v2 - iy)) * s
                w2 = ((u0 - ix) * (v1 - iy) - (u1 - ix) * (v0 - iy)) * s
                if w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0:
                    iz = w0 * z0 + w1 * z1 + w2 * z2
                    if iz > 0.0:
                        z = 1.0 / iz
                        if z < zbuf[iy, ix]:
                            zbuf[iy, ix] = z


def _raster_numpy(tris, zbuf):
    h, w = zbuf.shape
    for t in range(tris.shape[0]):
        u0, v0, z0 = tris[t, 0]
        u1, v1, z1 = tris[t, 1]
        u2, v2, z2 = tris[t, 2]
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if area == 0.0:
            continue
        s = 1.0 / area
        ix0 = max(int(math.ceil(min(u0, u1, u2))), 0)
        ix1 = min(int(math.floor(max(u0, u1, u2))), w - 1)
        iy0 = max(int(math.ceil(min(v0, v1, v2))), 0)
        iy1 = min(int(math.floor(max(v0, v1, v2))), h - 1)
        if ix1 < ix0 or iy1 < iy0:
            continue
        ix = np.arange(ix0, ix1 + 1, dtype=np.float64)[None, :]
        iy = np.arange(iy0, iy1 + 1, dtype=np.float64)[:, None]
        w0 = ((u1 - ix) * (v2 - iy) - (u2 - ix) * (v1 - iy)) * s
        w1 = ((u2 - ix) * (v0 - iy) - (u0 - ix) * (v2 - iy)) * s
        w2 = ((u0 - ix) * (v1 - iy) - (u1 - ix) * (v0 - iy)) * s
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        iz = w0 * z0 + w1 * z1 + w2 * z2
        with np.errstate(divide="ignore", over="ignore"):
            z = 1.0 / iz
        sub = zbuf[iy0:iy1 + 1, ix0:ix1 + 1]
        upd = inside & (iz > 0.0) & (z < sub)
        sub[upd] = z[upd]


# ---------------------------------------------------------------------------
# Gaussian splatting with max accumulation, truncated at a circular radius.

def _splat_body(img, us, vs, sigma, radius):
    h, w = img.shape
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    r2max = radius * radius
    for p in range(us.shape[0]):
        u = us[p]
        v = vs[p]
        if not (u > -radius - 1.0 and u < w + radius and
                v > -radius - 1.0 and v < h + radius):
            continue
        ix0 = max(int(math.ceil(u - radius)), 0)
        ix1 = min(int(math.floor(u + radius)), w - 1)
        iy0 = max(int(math.ceil(v - radius)), 0)
        iy1 = min(int(math.floor(v + radius)), h - 1)
        for iy in range(iy0, iy1 + 1):
            dv = iy - v
            for ix in range(ix0, ix1 + 1):
                du = ix - u
                r2 = du * du + dv * dv
                if r2 <= r2max:
                    val = math.exp(-r2 * inv2s2)
                    if val > img[iy, ix]:
                        img[iy, ix] = val


def _splat_numpy(img, us, vs, sigma, radius):
    h, w = img.shape
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    r2max = radius * radius
    for p in range(us.shape[0]):
        u = float(us[p])
        v = float(vs[p])
        if not (u > -radius - 1.0 and u < w + radius and
                v > -radius - 1.0 and v < h + radius):
            continue
        ix0 = max(int(math.ceil(u - radius)), 0)
        ix1 = min(int(math.floor(u + radius)), w - 1)
        iy0 = max(int(math.ceil(v - radius)), 0)
        iy1 = min(int(math.floor(v + radius)), h - 1)
        if ix1 < ix0 or iy1 < iy0:
            continue
        du = np.arange(ix0, ix1 + 1, dtype=np.float64)[None, :] - u
        dv = np.arange(iy0, iy1 + 1, dtype=np.float64)[:, None] - v
        r2 = du * du + dv * dv
        val = np.where(r2 <= r2max, np.exp(-r2 * inv2s2), 0.0)
        sub = img[iy0:iy1 + 1, ix0:ix1 + 1]
        np.maximum(sub, val, out=sub)


# ---------------------------------------------------------------------------
# Backend wiring.

if USING_NUMBA:
    _score_par = njit(parallel=True, cache=True)(_score_body)
    _score_seq = njit(parallel=False, cache=True)(_score_body)
    _raster_jit = njit(cache=True)(_raster_body)

    @njit(parallel=True, cache=True)
    def _raster_bands(tris, zbuf, nbands):
        h = zbuf.shape[0]
        for b in prange(nbands):
            r0 = b * h // nbands
            r1 = (b + 1) * h // nbands
            _raster_jit(tris, zbuf, r0, r1)

    _splat_jit = njit(cache=True)(_splat_body)


def score_volume(map2d, pts, fx, fy, cx, cy, rstack, cxs, cys, czs,
                 parallel: bool = True) -> np.ndarray:
    """Cost volume over the (x, y, z, yaw) hypothesis grid."""
    map2d = np.ascontiguousarray(map2d, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    rstack = np.ascontiguousarray(rstack, dtype=np.float64)
    cxs = np.ascontiguousarray(cxs, dtype=np.float64)
    cys = np.ascontiguousarray(cys, dtype=np.float64)
    czs = np.ascontiguousarray(czs, dtype=np.float64)
    out = np.empty((cxs.size, cys.size, czs.size, rstack.shape[0]),
                   dtype=np.float64)
    args = (map2d, pts, float(fx), float(fy), float(cx), float(cy),
            rstack, cxs, cys, czs, out)
    if USING_NUMBA:
        if parallel:
            with _KERNEL_LOCK:
                _score_par(*args)
        else:
            _score_seq(*args)
    else:
        _score_numpy(*args)
    return out


def raster_triangles(tris: np.ndarray, height: int, width: int,
                     n_bands: int = 0) -> np.ndarray:
    """Rasterize (T, 3, 3) screen-space triangles into a min-depth buffer."""
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    if tris.shape[0] == 0:
        return zbuf
    if USING_NUMBA:
        bands = n_bands if n_bands > 0 else min(numba.get_num_threads(), height)
        with _KERNEL_LOCK:
            _raster_bands(tris, zbuf, max(1, bands))
    else:
        _raster_numpy(tris, zbuf)
    return zbuf


def splat_max(img: np.ndarray, us: np.ndarray, vs: np.ndarray,
              sigma: float, radius: float) -> None:
    """Max-accumulate unit-peak Gaussians at (us, vs) into ``img`` in place."""
    us = np.ascontiguousarray(us, dtype=np.float64)
    vs = np.ascontiguousarray(vs, dtype=np.float64)
    if USING_NUMBA:
        _splat_jit(img, us, vs, float(sigma), float(radius))
    else:
        _splat_numpy(img, us, vs, float(sigma), float(radius))
