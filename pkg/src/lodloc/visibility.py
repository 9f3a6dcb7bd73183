"""Software depth rendering and wireframe-point visibility culling.

The depth map is rendered once per query at the prior pose and reused by
every hypothesis and level. Faces are fan-triangulated, clipped against the
near plane in camera space, and z-buffered with perspective-correct depth
(1/z interpolates linearly in screen space, which reproduces the exact
ray-plane intersection for planar faces). Coverage is sampled at integer
pixel centers; coplanar ties keep the first submitted face.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import Intrinsics, PoseSE3, project_many
from .errors import ParseError, ValidationError
from .geometry import Mesh, WireframePoints

DEFAULT_EPS_M = 0.05
DEFAULT_ZNEAR_M = 0.01

DEPTH_MAGIC = b"FDM1"


@dataclass
class DepthMap:
    """Row-major per-pixel depth in meters; +inf where nothing was drawn."""

    width: int
    height: int
    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.height, self.width):
            raise ValidationError("depth array shape mismatch")


def _clip_near(tri_cam: np.ndarray, znear: float) -> list[np.ndarray]:
    """Clip one camera-space triangle against z >= znear (0-2 triangles)."""
    z = tri_cam[:, 2]
    inside = z >= znear
    n_in = int(np.count_nonzero(inside))
    if n_in == 3:
        return [tri_cam]
    if n_in == 0:
        return []
    # Sutherland-Hodgman against the single plane.
    poly = []
    for k in range(3):
        a = tri_cam[k]
        b = tri_cam[(k + 1) % 3]
        ain = a[2] >= znear
        bin_ = b[2] >= znear
        if ain:
            poly.append(a)
        if ain != bin_:
            t = (znear - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    out = []
    for k in range(1, len(poly) - 1):
        out.append(np.stack([poly[0], poly[k], poly[k + 1]]))
    return out


def render_depth(mesh: Mesh, K: Intrinsics, pose: PoseSE3,
                 znear: float = DEFAULT_ZNEAR_M, n_bands: int = 0) -> DepthMap:
    """Z-buffer all mesh faces from ``pose``; uncovered pixels hold +inf."""
    mesh.validate()
    r = pose.rotation
    t = pose.translation
    v = mesh.vertices
    cam = np.empty_like(v)
    cam[:, 0] = r[0, 0] * v[:, 0] + r[0, 1] * v[:, 1] + r[0, 2] * v[:, 2] + t[0]
    cam[:, 1] = r[1, 0] * v[:, 0] + r[1, 1] * v[:, 1] + r[1, 2] * v[:, 2] + t[1]
    cam[:, 2] = r[2, 0] * v[:, 0] + r[2, 1] * v[:, 1] + r[2, 2] * v[:, 2] + t[2]

    screen_tris = []
    for f in mesh.faces:
        for k in range(1, len(f) - 1):
            tri = cam[[f[0], f[k], f[k + 1]]]
            for clipped in _clip_near(tri, znear):
                z = clipped[:, 2]
                st = np.empty((3, 3))
                st[:, 0] = K.fx * clipped[:, 0] / z + K.cx
                st[:, 1] = K.fy * clipped[:, 1] / z + K.cy
                st[:, 2] = 1.0 / z
                screen_tris.append(st)
    tris = np.stack(screen_tris) if screen_tris else np.zeros((0, 3, 3))
    zbuf = _kernels.raster_triangles(tris, K.height, K.width, n_bands)
    return DepthMap(width=K.width, height=K.height, depth=zbuf)


def _interp_depth(depth: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear depth lookup that excludes +inf neighbors from the blend.

    If every neighbor with nonzero weight is +inf, the nearest finite
    neighbor is used; a fully +inf neighborhood reads +inf (open sky, the
    occlusion test then passes).
    """
    h, w = depth.shape
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    fu = u - x0
    fv = v - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    corners = (depth[y0, x0], depth[y0, x1], depth[y1, x0], depth[y1, x1])
    weights = ((1.0 - fu) * (1.0 - fv), fu * (1.0 - fv),
               (1.0 - fu) * fv, fu * fv)
    dist2 = (fu * fu + fv * fv,
             (1.0 - fu) ** 2 + fv * fv,
             fu * fu + (1.0 - fv) ** 2,
             (1.0 - fu) ** 2 + (1.0 - fv) ** 2)

    num = np.zeros_like(u)
    den = np.zeros_like(u)
    nearest = np.full_like(u, np.inf)
    best = np.full_like(u, np.inf)
    for d, wgt, d2 in zip(corners, weights, dist2):
        finite = np.isfinite(d)
        num += np.where(finite, wgt * np.where(finite, d, 0.0), 0.0)
        den += np.where(finite, wgt, 0.0)
        closer = finite & (d2 < best)
        nearest = np.where(closer, d, nearest)
        best = np.where(closer, d2, best)
    with np.errstate(invalid="ignore", divide="ignore"):
        blended = num / den
    return np.where(den > 0.0, blended, nearest)


def visibility_mask(points: WireframePoints, K: Intrinsics, pose: PoseSE3,
                    depth: DepthMap, eps: float = DEFAULT_EPS_M) -> np.ndarray:
    """True where a point projects strictly inside the image, in front of the
    camera, and no rendered surface covers it closer than ``depth + eps``.

    ``eps`` absorbs rasterization quantization: wireframe points lie exactly
    on mesh surfaces, so a strict comparison would cull them erratically.
    """
    if eps < 0:
        raise ValidationError("eps must be nonnegative")
    u, v, d = project_many(K, pose, points.points)
    inside = (u > 0.0) & (u < K.width - 1.0) & (v > 0.0) & (v < K.height - 1.0)
    inside &= d > 0.0
    uq = np.where(inside, u, 0.0)
    vq = np.where(inside, v, 0.0)
    surf = _interp_depth(depth.depth, uq, vq)
    return inside & (d < surf + eps)


def visible_points(points: WireframePoints, mask: np.ndarray) -> WireframePoints:
    """Filter points by a boolean mask, preserving order."""
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if len(mask) != len(points):
        raise ValidationError("mask length does not match point count")
    return WireframePoints(points=points.points[mask],
                           source_edge=points.source_edge[mask])


def save_depth(path, dm: DepthMap) -> None:
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<II", dm.width, dm.height))
        fh.write(dm.depth.astype("<f4").tobytes())


def load_depth(path) -> DepthMap:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != DEPTH_MAGIC:
                raise ParseError(f"{path}: bad depth-map magic")
            w, h = struct.unpack("<II", fh.read(8))
            data = np.frombuffer(fh.read(4 * w * h), dtype="<f4")
    except OSError as exc:
        raise ParseError(f"cannot read depth file {path}: {exc}") from exc
    if data.size != w * h:
        raise ParseError(f"{path}: truncated depth data")
    return DepthMap(width=w, height=h,
                    depth=data.astype(np.float64).reshape(h, w))
