"""Shared scene builders and independent reference implementations.

Reference functions here deliberately re-implement package math with plain
loops so the tests stay independent of the code paths they check.
"""

import math

import numpy as np

from lodloc.camera import EulerPose, Intrinsics
from lodloc.geometry import Mesh


def make_cube(center=(0.0, 0.0, 0.0), size=1.0) -> Mesh:
    """Axis-aligned cube with outward-facing consistent winding."""
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    corners = np.array([
        [-h, -h, -h], [h, -h, -h], [h, h, -h], [-h, h, -h],
        [-h, -h, h], [h, -h, h], [h, h, h], [-h, h, h],
    ]) + c
    quads = [
        (0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
        (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7),
    ]
    return Mesh(vertices=corners, faces=[np.array(q) for q in quads])


def quad_mesh(v0, v1, v2, v3) -> Mesh:
    return Mesh(vertices=np.array([v0, v1, v2, v3], dtype=np.float64),
                faces=[np.array([0, 1, 2, 3])])


def small_intrinsics(width=128, height=96, f=120.0) -> Intrinsics:
    return Intrinsics(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height)


def ref_bilinear(values: np.ndarray, u: float, v: float) -> float:
    """Zero-padded bilinear lookup, straight scalar implementation."""
    h, w = values.shape
    if not (0.0 <= u <= w - 1.0 and 0.0 <= v <= h - 1.0):
        return 0.0
    x0 = int(math.floor(u))
    y0 = int(math.floor(v))
    fu = u - x0
    fv = v - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    return ((1.0 - fv) * ((1.0 - fu) * values[y0, x0] + fu * values[y0, x1])
            + fv * ((1.0 - fu) * values[y1, x0] + fu * values[y1, x1]))


def ref_score_volume(map_values, points, K, grid):
    """Straight-loop re-implementation of the grid alignment cost."""
    from lodloc.camera import euler_to_pose

    mx, my, mz, mt = grid.shape
    out = np.zeros((mx, my, mz, mt))
    n = len(points)
    for i in range(mx):
        for j in range(my):
            for k in range(mz):
                for q in range(mt):
                    pose = euler_to_pose(grid.pose_at(i, j, k, q))
                    r, t = pose.rotation, pose.translation
                    acc = 0.0
                    for p in points:
                        pc = r @ p + t
                        if pc[2] <= 0.0:
                            continue
                        u = K.fx * pc[0] / pc[2] + K.cx
                        v = K.fy * pc[1] / pc[2] + K.cy
                        acc += ref_bilinear(map_values, u, v)
                    out[i, j, k, q] = acc / n
    return out


def ray_cast_visible(mesh: Mesh, origin: np.ndarray, point: np.ndarray,
                     t_tol: float = 1e-6) -> bool:
    """True if no mesh triangle blocks the segment origin -> point."""
    direction = point - origin
    for f in mesh.faces:
        verts = mesh.vertices[f]
        for k in range(1, len(f) - 1):
            t = _ray_triangle(origin, direction, verts[0], verts[k], verts[k + 1])
            if t is not None and t_tol < t < 1.0 - t_tol:
                return False
    return True


def _ray_triangle(o, d, a, b, c):
    """Moller-Trumbore; returns ray parameter t or None."""
    e1 = b - a
    e2 = c - a
    pv = np.cross(d, e2)
    det = float(e1 @ pv)
    if abs(det) < 1e-14:
        return None
    inv = 1.0 / det
    tv = o - a
    u = float(tv @ pv) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return None
    qv = np.cross(tv, e1)
    v = float(d @ qv) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return None
    return float(e2 @ qv) * inv


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    from lodloc.camera import so3_exp

    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * rng.uniform(0.0, math.pi)
    return so3_exp(w)


def nadir_pose(x=0.0, y=0.0, z=100.0, yaw=0.0, pitch=0.0, roll=0.0) -> EulerPose:
    return EulerPose(x=x, y=y, z=z, yaw=yaw, pitch=pitch, roll=roll)
