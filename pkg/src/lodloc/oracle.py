"""Synthetic wireframe-probability maps and their file format.

This module stands in for a learned wireframe extractor: given a reference
pose it splats a unit-peak Gaussian at every projected wireframe point and
max-accumulates, producing per-level single-channel maps in [0, 1]. The same
``FPM1`` file format doubles as the import path for maps produced by any
external extractor.

Boundary handling is zero padding (not clamping): hypotheses that project
wireframes off-image must score poorly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import bilinear_gradient, bilinear_values, splat_max
from .camera import Intrinsics, PoseSE3, project_many
from .errors import ParseError, ValidationError
from .geometry import WireframePoints

LEVEL_SCALES = (0.25, 0.5, 1.0)
PYRAMID_SUFFIXES = ("_l1", "_l2", "_l3", "_rf")
DEFAULT_SIGMA_PX = 2.0

# Splats are truncated at this many standard deviations.
TRUNCATION_SIGMAS = 4.0

MAP_MAGIC = b"FPM1"


@dataclass
class ProbabilityMap:
    """Single-channel map of per-pixel wireframe likelihood in [0, 1]."""

    values: np.ndarray
    level_scale: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("probability map must be 2-D")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Uniform background noise in [0, amplitude] plus spurious splats."""

    amplitude: float = 0.0
    false_positives: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.amplitude < 0 or self.false_positives < 0:
            raise ValidationError("noise parameters must be nonnegative")


@dataclass
class ProbabilityMapPyramid:
    """Maps at 1/4, 1/2 and full resolution plus the full-resolution refined map."""

    levels: tuple
    refined: ProbabilityMap

    def __post_init__(self):
        if len(self.levels) != 3:
            raise ValidationError("pyramid needs exactly three levels")
        for pm, scale in zip(self.levels, LEVEL_SCALES):
            if abs(pm.level_scale - scale) > 1e-12:
                raise ValidationError("pyramid level scales must be 1/4, 1/2, 1")
        if abs(self.refined.level_scale - 1.0) > 1e-12:
            raise ValidationError("refined map must be full resolution")


def synth_map(points: WireframePoints, K: Intrinsics, ref_pose: PoseSE3,
              sigma_px: float, level_scale: float = 1.0,
              rng: np.random.Generator | None = None,
              amplitude: float = 0.0, false_positives: int = 0) -> ProbabilityMap:
    """Render one level: splat projected points, add noise, clamp to [0, 1].

    ``sigma_px`` is the splat standard deviation at full resolution; the
    level actually splats ``sigma_px * level_scale`` pixels.
    """
    if sigma_px <= 0:
        raise ValidationError("sigma_px must be positive")
    kl = K.scaled(level_scale)
    sigma = sigma_px * level_scale
    radius = TRUNCATION_SIGMAS * sigma
    img = np.zeros((kl.height, kl.width), dtype=np.float64)
    if len(points):
        u, v, d = project_many(kl, ref_pose, points.points)
        front = d > 0.0
        splat_max(img, u[front], v[front], sigma, radius)
    if amplitude > 0.0 or false_positives > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        if amplitude > 0.0:
            img += rng.uniform(0.0, amplitude, size=img.shape)
        if false_positives > 0:
            fu = rng.uniform(0.0, kl.width - 1.0, size=false_positives)
            fv = rng.uniform(0.0, kl.height - 1.0, size=false_positives)
            splat_max(img, fu, fv, sigma, radius)
        np.clip(img, 0.0, 1.0, out=img)
    return ProbabilityMap(values=img, level_scale=level_scale)


def synth_pyramid(points: WireframePoints, K: Intrinsics, ref_pose: PoseSE3,
                  sigma_px: float = DEFAULT_SIGMA_PX,
                  noise: NoiseSpec | None = None,
                  refine_sigma_px: float | None = None) -> ProbabilityMapPyramid:
    """Render the three pyramid levels plus the refined map from one pose.

    The refined map may use its own (typically sharper) splat width: the
    level maps need wide alignment basins for coarse search, while the
    refinement wants a peaked surface for precision.
    """
    amplitude = noise.amplitude if noise else 0.0
    fps = noise.false_positives if noise else 0
    rng = np.random.default_rng(noise.seed if noise else 0)
    levels = tuple(
        synth_map(points, K, ref_pose, sigma_px, scale, rng, amplitude, fps)
        for scale in LEVEL_SCALES
    )
    refined = synth_map(points, K, ref_pose,
                        refine_sigma_px if refine_sigma_px is not None else sigma_px,
                        1.0, rng, amplitude, fps)
    return ProbabilityMapPyramid(levels=levels, refined=refined)


def bilinear_lookup(pmap: ProbabilityMap, u: float, v: float) -> float:
    """Sub-pixel map value; zero outside [0, W-1] x [0, H-1]."""
    return float(bilinear_values(pmap.values, np.float64(u), np.float64(v)))


def bilinear_grad(pmap: ProbabilityMap, u: float, v: float) -> tuple[float, float]:
    """Exact gradient of the piecewise-bilinear surface at (u, v)."""
    du, dv = bilinear_gradient(pmap.values, np.float64(u), np.float64(v))
    return float(du), float(dv)


# ---------------------------------------------------------------------------
# FPM1 binary format: magic, u32 width, u32 height, little-endian f32
# row-major values in [0, 1].

def save_map(path, pmap: ProbabilityMap) -> None:
    with open(path, "wb") as fh:
        fh.write(MAP_MAGIC)
        fh.write(struct.pack("<II", pmap.width, pmap.height))
        fh.write(pmap.values.astype("<f4").tobytes())


def load_map(path, level_scale: float = 1.0) -> ProbabilityMap:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAP_MAGIC:
                raise ParseError(f"{path}: bad probability-map magic")
            w, h = struct.unpack("<II", fh.read(8))
            data = np.frombuffer(fh.read(4 * w * h), dtype="<f4")
    except OSError as exc:
        raise ParseError(f"cannot read map file {path}: {exc}") from exc
    if data.size != w * h:
        raise ParseError(f"{path}: truncated map data")
    values = data.astype(np.float64).reshape(h, w)
    if values.size and (values.min() < -1e-6 or values.max() > 1.0 + 1e-6):
        raise ParseError(f"{path}: values outside [0, 1]")
    return ProbabilityMap(values=np.clip(values, 0.0, 1.0),
                          level_scale=level_scale)


def pyramid_paths(directory, stem: str) -> list[Path]:
    return [Path(directory) / f"{stem}{suffix}.fpm" for suffix in PYRAMID_SUFFIXES]


def save_pyramid(directory, stem: str, pyramid: ProbabilityMapPyramid) -> list[Path]:
    paths = pyramid_paths(directory, stem)
    for pm, path in zip([*pyramid.levels, pyramid.refined], paths):
        save_map(path, pm)
    return paths


def load_pyramid(directory, stem: str) -> ProbabilityMapPyramid:
    paths = pyramid_paths(directory, stem)
    scales = [*LEVEL_SCALES, 1.0]
    maps = [load_map(p, s) for p, s in zip(paths, scales)]
    return ProbabilityMapPyramid(levels=tuple(maps[:3]), refined=maps[3])
