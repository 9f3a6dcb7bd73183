"""Camera model: intrinsics, rigid poses, Euler conventions, pinhole projection.

Conventions used throughout the package:

* World frame: right-handed local metric, x east, y north, z up.
* Camera frame: x right, y down, z forward (standard pinhole).
* At yaw = pitch = roll = 0 the camera looks straight down (nadir) with
  image x along world +x; the right-handed camera frame then forces image y
  along world -y, i.e. north at the top of the image.
* Euler composition is intrinsic Z-Y'-X'' (yaw, then pitch, then roll);
  angles are exchanged in degrees and converted to radians internally.
* ``EulerPose`` stores the camera *center*; ``PoseSE3`` stores the
  world-to-camera transform ``p_cam = R @ p_world + t``. Keeping the two as
  distinct types prevents convention bugs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParseError, ValidationError

# World-to-camera basis at zero Euler angles: nadir view, image x = east.
# The camera frame is right-handed, so the third axis is forced: this is a
# 180 degree rotation about the world x axis.
NADIR_BASIS = np.diag([1.0, -1.0, -1.0])

_ORTHO_TOL = 1e-9
_GIMBAL_LIMIT_DEG = 89.0


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics. Pixel centers sit at integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside image")

    def scaled(self, scale: float) -> "Intrinsics":
        """Intrinsics for an image resized by ``scale`` (e.g. 0.25 for 1/4)."""
        return Intrinsics(
            fx=self.fx * scale,
            fy=self.fy * scale,
            cx=self.cx * scale,
            cy=self.cy * scale,
            width=int(round(self.width * scale)),
            height=int(round(self.height * scale)),
        )


@dataclass(frozen=True)
class EulerPose:
    """Camera center (meters) plus yaw/pitch/roll (degrees)."""

    x: float
    y: float
    z: float
    yaw: float
    pitch: float
    roll: float

    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class PoseSE3:
    """World-to-camera rigid transform: ``p_cam = rotation @ p_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if r.shape != (3, 3):
            raise ValidationError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-8:
            raise ValidationError("rotation not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise ValidationError("rotation determinant != +1")

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


def wrap_degrees(a):
    """Wrap angle(s) to (-180, 180]."""
    return 180.0 - np.mod(180.0 - np.asarray(a, dtype=np.float64), 360.0)


def _rot_x(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """World-to-camera rotation for the given Euler angles (degrees)."""
    rz = _rot_z(math.radians(yaw))
    ry = _rot_y(math.radians(pitch))
    rx = _rot_x(math.radians(roll))
    return NADIR_BASIS @ rx.T @ ry.T @ rz.T


def euler_to_pose(e: EulerPose) -> PoseSE3:
    """Build the world-to-camera transform for an Euler pose."""
    r = euler_to_matrix(e.yaw, e.pitch, e.roll)
    t = -r @ e.center()
    return PoseSE3(rotation=r, translation=t)


def pose_to_euler(p: PoseSE3) -> EulerPose:
    """Invert :func:`euler_to_pose`.

    Raises:
        NumericalError: within 1 degree of gimbal lock (|pitch| >= 89).
    """
    # euler_to_matrix gives R = B rx' ry' rz', so (B' R)' = Rz(yaw) Ry(pitch) Rx(roll).
    m = p.rotation.T @ NADIR_BASIS
    sp = -m[2, 0]
    if abs(sp) > math.sin(math.radians(_GIMBAL_LIMIT_DEG)):
        raise NumericalError("euler singular")
    pitch = math.degrees(math.asin(max(-1.0, min(1.0, sp))))
    yaw = math.degrees(math.atan2(m[1, 0], m[0, 0]))
    roll = math.degrees(math.atan2(m[2, 1], m[2, 2]))
    c = p.center()
    return EulerPose(x=float(c[0]), y=float(c[1]), z=float(c[2]),
                     yaw=yaw, pitch=pitch, roll=roll)


def project(K: Intrinsics, pose: PoseSE3, point) -> tuple[float, float, float]:
    """Project a single world point; returns (u, v, depth).

    Points behind the camera are allowed; callers filter on depth <= 0.

    Raises:
        NumericalError: |depth| below 1e-12 (ray parallel to image plane).
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    pc = pose.rotation @ p + pose.translation
    if abs(pc[2]) < 1e-12:
        raise NumericalError("projection singular")
    u = K.fx * pc[0] / pc[2] + K.cx
    v = K.fy * pc[1] / pc[2] + K.cy
    return float(u), float(v), float(pc[2])


def project_many(K: Intrinsics, pose: PoseSE3, points: np.ndarray):
    """Vectorized projection of an (N, 3) array; returns (u, v, depth) arrays.

    Depths may be zero or negative; the corresponding u/v entries are then
    meaningless (inf/nan) and must be masked by the caller. Written with
    explicit per-column arithmetic so results do not depend on the BLAS
    backend or its thread count.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = pose.rotation
    t = pose.translation
    px, py, pz = pts[:, 0], pts[:, 1], pts[:, 2]
    xc = r[0, 0] * px + r[0, 1] * py + r[0, 2] * pz + t[0]
    yc = r[1, 0] * px + r[1, 1] * py + r[1, 2] * pz + t[1]
    zc = r[2, 0] * px + r[2, 1] * py + r[2, 2] * pz + t[2]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = K.fx * xc / zc + K.cx
        v = K.fy * yc / zc + K.cy
    return u, v, zc


def so3_exp(w) -> np.ndarray:
    """Rodrigues exponential map; second-order Taylor below 1e-8 rad."""
    w = np.asarray(w, dtype=np.float64).reshape(3)
    theta = math.sqrt(float(w @ w))
    wx = np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])
    if theta < 1e-8:
        return np.eye(3) + wx + 0.5 * (wx @ wx)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * wx + b * (wx @ wx)


# ---------------------------------------------------------------------------
# File I/O: pose CSV `name,x,y,z,yaw,pitch,roll`, intrinsics CSV
# `fx,fy,cx,cy,width,height`.

POSE_CSV_HEADER = ["name", "x", "y", "z", "yaw", "pitch", "roll"]
INTRINSICS_CSV_HEADER = ["fx", "fy", "cx", "cy", "width", "height"]


def load_poses(path) -> list[tuple[str, EulerPose]]:
    """Read a pose CSV. Raises ParseError naming the offending row."""
    out = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != POSE_CSV_HEADER:
                raise ParseError(f"{path}: expected header {','.join(POSE_CSV_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 7:
                    raise ParseError(f"{path}:{lineno}: expected 7 fields")
                try:
                    vals = [float(x) for x in row[1:]]
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
                out.append((row[0], EulerPose(*vals)))
    except OSError as exc:
        raise ParseError(f"cannot read pose file {path}: {exc}") from exc
    return out


def save_poses(path, poses: list[tuple[str, EulerPose]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSE_CSV_HEADER)
        for name, e in poses:
            writer.writerow([name] + [f"{v:.10g}" for v in
                                      (e.x, e.y, e.z, e.yaw, e.pitch, e.roll)])


def load_intrinsics(path) -> Intrinsics:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != INTRINSICS_CSV_HEADER:
                raise ParseError(
                    f"{path}: expected header {','.join(INTRINSICS_CSV_HEADER)}")
            row = next(reader, None)
            if row is None or len(row) != 6:
                raise ParseError(f"{path}: expected one row of 6 fields")
            try:
                fx, fy, cx, cy = (float(x) for x in row[:4])
                width, height = int(row[4]), int(row[5])
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"cannot read intrinsics file {path}: {exc}") from exc
    return Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)


def save_intrinsics(path, K: Intrinsics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INTRINSICS_CSV_HEADER)
        writer.writerow([f"{K.fx:.10g}", f"{K.fy:.10g}", f"{K.cx:.10g}",
                         f"{K.cy:.10g}", K.width, K.height])
