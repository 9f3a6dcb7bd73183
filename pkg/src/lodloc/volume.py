"""Pose hypothesis grids, cost volumes, and uncertainty-driven ranges.

A hypothesis grid spans 4 degrees of freedom (x, y, z, yaw) around a center
pose; pitch and roll stay fixed to the center's. Each hypothesis is scored
by the mean probability-map value at its projected wireframe points, the
volume is softmaxed into a discrete pose distribution, and the per-dimension
standard deviation around the argmax pose sets the next level's sampling
range (r = 2 * lambda * sigma, floored to keep grids from collapsing).

Array layout is row-major in (x, y, z, yaw); argmax ties resolve to the
lowest flattened index. Yaw arithmetic wraps at +/-180 degrees.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import EulerPose, Intrinsics, PoseSE3, euler_to_matrix, project_many, wrap_degrees
from .errors import ParseError, ValidationError
from .geometry import WireframePoints
from .oracle import ProbabilityMap

DEFAULT_LEVEL1_RANGES = (10.0, 10.0, 30.0, 7.5)
DEFAULT_COUNTS = (10, 10, 30, 8)
DEFAULT_LAMBDA = 0.8
DEFAULT_TEMPERATURE = 1.0

VOLUME_MAGIC = b"FPV1"


@dataclass(frozen=True)
class SamplingSpec:
    """Per-dimension ranges (m, m, m, deg) and sample counts for one level."""

    ranges: tuple
    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple(float(r) for r in self.ranges))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.ranges) != 4 or len(self.counts) != 4:
            raise ValidationError("sampling spec needs 4 ranges and 4 counts")
        if any(r < 0 for r in self.ranges):
            raise ValidationError("sampling ranges must be nonnegative")
        if any(c < 1 for c in self.counts):
            raise ValidationError("sampling counts must be >= 1")


def _axis_offsets(rng: float, count: int) -> np.ndarray:
    if count == 1:
        return np.zeros(1)
    return np.linspace(-rng / 2.0, rng / 2.0, count)


@dataclass
class HypothesisGrid:
    """Uniform 4-DoF offsets around a center pose."""

    center: EulerPose
    spec: SamplingSpec
    axes: tuple

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def axis_values(self, dim: int) -> np.ndarray:
        """Absolute hypothesis coordinates along one dimension (yaw wrapped)."""
        center = (self.center.x, self.center.y, self.center.z, self.center.yaw)[dim]
        vals = center + self.axes[dim]
        return wrap_degrees(vals) if dim == 3 else vals

    def spacings(self) -> tuple:
        """Per-dimension grid step (0 where a dimension has one sample)."""
        return tuple(
            r / (c - 1) if c > 1 else 0.0
            for r, c in zip(self.spec.ranges, self.spec.counts)
        )

    def pose_at(self, i: int, j: int, k: int, q: int) -> EulerPose:
        return EulerPose(
            x=float(self.center.x + self.axes[0][i]),
            y=float(self.center.y + self.axes[1][j]),
            z=float(self.center.z + self.axes[2][k]),
            yaw=float(wrap_degrees(self.center.yaw + self.axes[3][q])),
            pitch=self.center.pitch,
            roll=self.center.roll,
        )


@dataclass
class PoseVolume:
    """Hypothesis grid with its cost volume and (optionally) softmax distribution."""

    grid: HypothesisGrid
    cost: np.ndarray
    prob: np.ndarray | None = None


def build_grid(center: EulerPose, spec: SamplingSpec) -> HypothesisGrid:
    """Inclusive uniform grid over [-r/2, +r/2] per dimension.

    The center itself is a grid node only for odd counts; even counts
    straddle it symmetrically.
    """
    axes = tuple(_axis_offsets(r, c) for r, c in zip(spec.ranges, spec.counts))
    return HypothesisGrid(center=center, spec=spec, axes=axes)


def score_hypothesis(pmap: ProbabilityMap, points: WireframePoints,
                     K: Intrinsics, pose: PoseSE3) -> float:
    """Mean map probability over projected points (zero behind the camera).

    ``K`` must be the level-scaled intrinsics matching ``pmap``.
    """
    if len(points) == 0:
        raise ValidationError("no wireframe points")
    u, v, d = project_many(K, pose, points.points)
    vals = _kernels.bilinear_values(pmap.values, u, v)
    vals = np.where(d > 0.0, vals, 0.0)
    return float(np.sum(vals) / len(points))


def _yaw_rotations(grid: HypothesisGrid) -> np.ndarray:
    yaws = grid.axis_values(3)
    return np.stack([
        euler_to_matrix(float(yaw), grid.center.pitch, grid.center.roll)
        for yaw in yaws
    ])


def build_cost_volume(pmap: ProbabilityMap, points: WireframePoints,
                      K: Intrinsics, grid: HypothesisGrid,
                      parallel: bool = True) -> PoseVolume:
    """Score every grid hypothesis; layout row-major in (x, y, z, yaw)."""
    if len(points) == 0:
        raise ValidationError("no wireframe points")
    rstack = _yaw_rotations(grid)
    cost = _kernels.score_volume(
        pmap.values, points.points, K.fx, K.fy, K.cx, K.cy, rstack,
        grid.center.x + grid.axes[0],
        grid.center.y + grid.axes[1],
        grid.center.z + grid.axes[2],
        parallel=parallel,
    )
    return PoseVolume(grid=grid, cost=cost)


def softmax_volume(volume: PoseVolume, temperature: float = DEFAULT_TEMPERATURE) -> PoseVolume:
    """Joint softmax of cost / temperature, stabilized by max subtraction."""
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    flat = volume.cost.reshape(-1) / temperature
    shifted = flat - np.max(flat)
    e = np.exp(shifted)
    prob = (e / np.sum(e)).reshape(volume.cost.shape)
    return PoseVolume(grid=volume.grid, cost=volume.cost, prob=prob)


def select_pose(volume: PoseVolume) -> EulerPose:
    """Grid pose with maximum probability; ties break to the lowest index."""
    if volume.prob is None:
        raise ValidationError("probability volume not filled")
    idx = np.unravel_index(int(np.argmax(volume.prob)), volume.prob.shape)
    return volume.grid.pose_at(*idx)


def pose_variance(volume: PoseVolume, selected: EulerPose) -> np.ndarray:
    """Per-dimension standard deviation of P around the selected pose.

    Yaw deviations wrap to (-180, 180].
    """
    if volume.prob is None:
        raise ValidationError("probability volume not filled")
    sel = (selected.x, selected.y, selected.z, selected.yaw)
    sigma = np.empty(4)
    for dim in range(4):
        other = tuple(a for a in range(4) if a != dim)
        marginal = volume.prob.sum(axis=other)
        dev = volume.grid.axis_values(dim) - sel[dim]
        if dim == 3:
            dev = wrap_degrees(dev)
        sigma[dim] = np.sqrt(float(np.sum(marginal * dev * dev)))
    return sigma


def next_range(sigma, lam: float = DEFAULT_LAMBDA, floor=(0.0, 0.0, 0.0, 0.0)) -> tuple:
    """Next-level sampling ranges r = max(2 * lambda * sigma, floor)."""
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    sigma = np.asarray(sigma, dtype=np.float64).reshape(4)
    floor = np.asarray(floor, dtype=np.float64).reshape(4)
    return tuple(float(v) for v in np.maximum(2.0 * lam * sigma, floor))


def save_volume(path, volume: PoseVolume) -> None:
    """Debug dump: FPV1, four u32 dims, f32 cost then f32 prob (zeros if unset)."""
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<IIII", *volume.cost.shape))
        fh.write(volume.cost.astype("<f4").tobytes())
        prob = volume.prob if volume.prob is not None else np.zeros_like(volume.cost)
        fh.write(prob.astype("<f4").tobytes())


def load_volume_arrays(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            if fh.read(4) != VOLUME_MAGIC:
                raise ParseError(f"{path}: bad volume magic")
            dims = struct.unpack("<IIII", fh.read(16))
            n = int(np.prod(dims))
            cost = np.frombuffer(fh.read(4 * n), dtype="<f4")
            prob = np.frombuffer(fh.read(4 * n), dtype="<f4")
    except OSError as exc:
        raise ParseError(f"cannot read volume file {path}: {exc}") from exc
    if cost.size != n or prob.size != n:
        raise ParseError(f"{path}: truncated volume data")
    return (cost.astype(np.float64).reshape(dims),
            prob.astype(np.float64).reshape(dims))
