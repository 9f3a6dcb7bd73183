"""Procedural box-city scenes with ground-truth and noisy prior poses.

The generator lays axis-aligned box buildings on a jittered grid, points
cameras down at the city from drone-like altitudes, and derives priors by
perturbing the ground truth uniformly inside a given error envelope
(defaults: +/-10 m horizontal, +/-30 m vertical, +/-7.5 deg yaw, +/-1 deg
pitch/roll). Everything is driven by one seed, so scenes and pose sets are
reproducible.

Synthetic probability maps rendered from these scenes use a much wider splat
for the pyramid levels (sigma_px = 14 at ~2.5 px/m ground resolution) than
the package default, and a sharper one for the refined map (4 px). The prior
error envelope reaches twice the level-1 grid half-width, so the level maps
need alignment basins that overlap the grid edge for the uncertainty-driven
ranges to walk out to the true pose; the refinement then wants a peaked
surface for sub-pixel precision. Buildings stay low relative to the flight
altitude so the visible wireframe barely changes across the vertical prior
envelope: points visible from a high prior but hidden at the true pose
otherwise pile cost onto their occluders' silhouettes and bias the height
search upward.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import (
    EulerPose,
    Intrinsics,
    euler_to_pose,
    project_many,
    save_intrinsics,
    save_poses,
    wrap_degrees,
)
from .geometry import Mesh, extract_wireframe, sample_points, save_obj, save_wireframe

DEFAULT_SCENE_SIGMA_PX = 14.0
DEFAULT_SCENE_REFINE_SIGMA_PX = 4.0
DEFAULT_PRIOR_RANGES = (10.0, 10.0, 30.0, 7.5)
DEFAULT_PITCH_ROLL_ERR = 1.0


@dataclass(frozen=True)
class SceneConfig:
    n_buildings: int = 14
    area: float = 220.0
    footprint_min: float = 14.0
    footprint_max: float = 38.0
    height_min: float = 6.0
    height_max: float = 18.0
    altitude_min: float = 130.0
    altitude_max: float = 170.0
    pitch_max: float = 15.0
    roll_max: float = 2.0
    min_visible_points: int = 150


DEFAULT_INTRINSICS = Intrinsics(fx=400.0, fy=400.0, cx=255.5, cy=191.5,
                                width=512, height=384)


def _add_box(vertices: list, faces: list, x0, x1, y0, y1, z0, z1) -> None:
    base = len(vertices)
    vertices.extend([
        (x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
        (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1),
    ])
    quads = [
        (0, 3, 2, 1),  # bottom, -z
        (4, 5, 6, 7),  # top, +z
        (0, 1, 5, 4),  # -y
        (1, 2, 6, 5),  # +x
        (2, 3, 7, 6),  # +y
        (3, 0, 4, 7),  # -x
    ]
    for q in quads:
        faces.append(np.array([base + i for i in q], dtype=np.int64))


def make_box_city(rng: np.random.Generator, cfg: SceneConfig = SceneConfig()) -> Mesh:
    """Axis-aligned box buildings, one per grid cell, placed anywhere inside it.

    The full-cell placement jitter breaks the translational self-similarity
    of a regular grid, which would otherwise let whole wireframes alias onto
    a neighboring building row under a shifted pose hypothesis.
    """
    cells = int(np.ceil(np.sqrt(cfg.n_buildings)))
    pitch = cfg.area / cells
    slots = [(i, j) for i in range(cells) for j in range(cells)]
    order = rng.permutation(len(slots))[:cfg.n_buildings]
    vertices: list = []
    faces: list = []
    for s in order:
        i, j = slots[s]
        w = rng.uniform(cfg.footprint_min, min(cfg.footprint_max, pitch * 0.9))
        d = rng.uniform(cfg.footprint_min, min(cfg.footprint_max, pitch * 0.9))
        x0 = -cfg.area / 2 + pitch * i + rng.uniform(0.0, pitch - w)
        y0 = -cfg.area / 2 + pitch * j + rng.uniform(0.0, pitch - d)
        h = rng.uniform(cfg.height_min, cfg.height_max)
        _add_box(vertices, faces, x0, x0 + w, y0, y0 + d, 0.0, h)
    return Mesh(vertices=np.asarray(vertices, dtype=np.float64), faces=faces)


def _visible_count(points, K, pose) -> int:
    u, v, d = project_many(K, pose, points)
    ok = (d > 0.0) & (u > 0.0) & (u < K.width - 1.0) & (v > 0.0) & (v < K.height - 1.0)
    return int(np.count_nonzero(ok))


def make_queries(rng: np.random.Generator, n_queries: int, mesh: Mesh,
                 K: Intrinsics = DEFAULT_INTRINSICS,
                 cfg: SceneConfig = SceneConfig(),
                 prior_ranges=DEFAULT_PRIOR_RANGES,
                 pitch_roll_err: float = DEFAULT_PITCH_ROLL_ERR,
                 delta: float = 1.0):
    """Draw (name, gt, prior) triples with enough wireframe in view."""
    wf = sample_points(extract_wireframe(mesh), delta=delta)
    queries = []
    attempts = 0
    while len(queries) < n_queries:
        attempts += 1
        if attempts > 200 * n_queries:
            raise RuntimeError("could not point enough cameras at the scene")
        gt = EulerPose(
            x=float(rng.uniform(-0.3, 0.3) * cfg.area),
            y=float(rng.uniform(-0.3, 0.3) * cfg.area),
            z=float(rng.uniform(cfg.altitude_min, cfg.altitude_max)),
            yaw=float(rng.uniform(-180.0, 180.0)),
            pitch=float(rng.uniform(0.0, cfg.pitch_max)),
            roll=float(rng.uniform(-cfg.roll_max, cfg.roll_max)),
        )
        if _visible_count(wf.points, K, euler_to_pose(gt)) < cfg.min_visible_points:
            continue
        rx, ry, rz, rt = prior_ranges
        prior = EulerPose(
            x=gt.x + float(rng.uniform(-rx, rx)),
            y=gt.y + float(rng.uniform(-ry, ry)),
            z=gt.z + float(rng.uniform(-rz, rz)),
            yaw=float(wrap_degrees(gt.yaw + rng.uniform(-rt, rt))),
            pitch=gt.pitch + float(rng.uniform(-pitch_roll_err, pitch_roll_err)),
            roll=gt.roll + float(rng.uniform(-pitch_roll_err, pitch_roll_err)),
        )
        queries.append((f"q{len(queries):04d}", gt, prior))
    return queries


def generate_scene(out_dir, n_queries: int = 20, seed: int = 0,
                   cfg: SceneConfig = SceneConfig(),
                   K: Intrinsics = DEFAULT_INTRINSICS,
                   prior_ranges=DEFAULT_PRIOR_RANGES,
                   pitch_roll_err: float = DEFAULT_PITCH_ROLL_ERR,
                   mu: float = 10.0, delta: float = 1.0,
                   sigma_px: float = DEFAULT_SCENE_SIGMA_PX,
                   refine_sigma_px: float = DEFAULT_SCENE_REFINE_SIGMA_PX) -> dict:
    """Write scene.obj, wireframe.lwf, intrinsics/gt/prior CSVs and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    mesh = make_box_city(rng, cfg)
    edges = extract_wireframe(mesh, mu_degrees=mu)
    queries = make_queries(rng, n_queries, mesh, K, cfg, prior_ranges,
                           pitch_roll_err, delta)

    paths = {
        "mesh": out / "scene.obj",
        "wireframe": out / "wireframe.lwf",
        "intrinsics": out / "intrinsics.csv",
        "gt": out / "gt.csv",
        "priors": out / "priors.csv",
        "manifest": out / "manifest.txt",
        "map_dir": out / "maps",
        "out_dir": out / "results",
    }
    save_obj(paths["mesh"], mesh)
    save_wireframe(paths["wireframe"], edges)
    save_intrinsics(paths["intrinsics"], K)
    save_poses(paths["gt"], [(n, g) for n, g, _ in queries])
    save_poses(paths["priors"], [(n, p) for n, _, p in queries])

    manifest = {
        "mesh": paths["mesh"].name,
        "wireframe": paths["wireframe"].name,
        "intrinsics": paths["intrinsics"].name,
        "priors": paths["priors"].name,
        "gt": paths["gt"].name,
        "map_dir": paths["map_dir"].name,
        "out_dir": paths["out_dir"].name,
        "mu": f"{mu:g}",
        "delta": f"{delta:g}",
        "point_limit": "2000",
        "seed": str(seed),
        "sigma_px": f"{sigma_px:g}",
        "refine_sigma_px": f"{refine_sigma_px:g}",
        "noise_amplitude": "0",
        "noise_false_positives": "0",
        "level1_ranges": "10,10,30,7.5",
        "counts": "10,10,30,8",
        "lambda": "0.8",
        "temperature": "1",
        "eps": "0.05",
        "refine_max_iters": "24",
        "refine_max_backtracks": "12",
        "thresholds": "2:2,3:3,5:5",
        "jobs": "1",
    }
    with open(paths["manifest"], "w") as fh:
        for key, value in manifest.items():
            fh.write(f"{key}={value}\n")
    return paths
