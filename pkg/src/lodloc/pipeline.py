"""End-to-end localization of one query: visibility, three cost-volume
levels, then Gauss-Newton refinement.

The chain starts from the sensor prior: wireframe points are culled once
against a depth render at the prior (and reused by every hypothesis), each
level scores a 4-DoF grid centered on the previous level's selection against
the matching pyramid map, and the per-level uncertainty sets the next grid's
extent. Pitch and roll stay pinned to the prior through the levels; only the
final refinement adjusts all six degrees of freedom.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .camera import EulerPose, Intrinsics, PoseSE3, euler_to_pose
from .errors import NumericalError, ValidationError
from .geometry import DEFAULT_POINT_LIMIT, Mesh, WireframePoints, subsample_points
from .oracle import ProbabilityMapPyramid
from .refine import RefineConfig, gauss_newton_refine
from .visibility import DEFAULT_EPS_M, DEFAULT_ZNEAR_M, render_depth, visibility_mask, visible_points
from .volume import (
    DEFAULT_COUNTS,
    DEFAULT_LAMBDA,
    DEFAULT_LEVEL1_RANGES,
    DEFAULT_TEMPERATURE,
    SamplingSpec,
    build_cost_volume,
    build_grid,
    pose_variance,
    select_pose,
    softmax_volume,
)

FATAL_REFINE_FLAGS = ("refine singular", "underconstrained")


@dataclass
class LevelResult:
    center: EulerPose
    selected: EulerPose
    sigma: np.ndarray
    spec: SamplingSpec


@dataclass
class LocalizationRecord:
    query_name: str
    prior: EulerPose
    per_level: list = field(default_factory=list)
    refined: PoseSE3 | None = None
    flags: list = field(default_factory=list)
    timing_ms: dict = field(default_factory=dict)
    visible_count: int = 0


def default_level1_spec() -> SamplingSpec:
    return SamplingSpec(ranges=DEFAULT_LEVEL1_RANGES, counts=DEFAULT_COUNTS)


def localize(wireframe: WireframePoints, mesh: Mesh, K: Intrinsics,
             prior: EulerPose, pyramid: ProbabilityMapPyramid,
             level1_spec: SamplingSpec | None = None,
             counts_per_level=None,
             lam: float = DEFAULT_LAMBDA,
             refine_cfg: RefineConfig | None = None,
             *,
             point_limit: int = DEFAULT_POINT_LIMIT,
             seed: int = 0,
             temperature: float = DEFAULT_TEMPERATURE,
             eps: float = DEFAULT_EPS_M,
             znear: float = DEFAULT_ZNEAR_M,
             parallel: bool = True,
             query_name: str = "query") -> LocalizationRecord:
    """Localize one query against its probability-map pyramid.

    ``wireframe`` is the full (pre-visibility) sampled point set;
    ``counts_per_level`` may be one count tuple or a sequence of three.
    """
    spec = level1_spec if level1_spec is not None else default_level1_spec()
    if counts_per_level is None:
        counts = [spec.counts] * 3
    else:
        counts = list(counts_per_level)
        if len(counts) == 4 and np.isscalar(counts[0]):
            counts = [tuple(counts)] * 3
        if len(counts) != 3:
            raise ValidationError("counts_per_level needs one tuple or three")
        counts = [tuple(int(c) for c in cs) for cs in counts]
    spec = SamplingSpec(ranges=spec.ranges, counts=counts[0])

    record = LocalizationRecord(query_name=query_name, prior=prior)
    prior_pose = euler_to_pose(prior)

    t0 = time.perf_counter()
    depth = render_depth(mesh, K, prior_pose, znear=znear)
    mask = visibility_mask(wireframe, K, prior_pose, depth, eps=eps)
    vis = visible_points(wireframe, mask)
    vis = subsample_points(vis, limit=point_limit, seed=seed)
    record.visible_count = len(vis)
    record.timing_ms["visibility"] = 1000.0 * (time.perf_counter() - t0)
    if len(vis) == 0:
        raise NumericalError(f"{query_name}: no wireframe points visible from prior")

    center = prior
    for level in range(3):
        t0 = time.perf_counter()
        pmap = pyramid.levels[level]
        kl = K.scaled(pmap.level_scale)
        grid = build_grid(center, spec)
        vol = build_cost_volume(pmap, vis, kl, grid, parallel=parallel)
        vol = softmax_volume(vol, temperature=temperature)
        selected = select_pose(vol)
        sigma = pose_variance(vol, selected)
        record.per_level.append(
            LevelResult(center=center, selected=selected, sigma=sigma, spec=spec))
        record.timing_ms[f"level{level + 1}"] = 1000.0 * (time.perf_counter() - t0)
        if level < 2:
            floor = grid.spacings()
            ranges = tuple(max(2.0 * lam * s, f) for s, f in zip(sigma, floor))
            spec = SamplingSpec(ranges=ranges, counts=counts[level + 1])
            center = selected

    t0 = time.perf_counter()
    init = euler_to_pose(record.per_level[-1].selected)
    result = gauss_newton_refine(pyramid.refined, vis, K, init,
                                 refine_cfg or RefineConfig())
    record.timing_ms["refine"] = 1000.0 * (time.perf_counter() - t0)
    record.flags.extend(result.flags)
    if not any(flag in FATAL_REFINE_FLAGS for flag in result.flags):
        record.refined = result.pose
    return record
