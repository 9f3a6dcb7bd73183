"""Command-line interface: extract | oracle | localize | eval | synth-scene.

Exit codes: 0 success, 2 I/O or parse failure, 3 validation failure,
4 internal numerical failure. ``localize`` is driven by a flat key=value
manifest; command-line overrides win over manifest values. The env var
``LODLOC_JOBS`` provides the default for ``--jobs``.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import camera, evaluate, geometry, oracle, pipeline, synth, visibility
from .camera import EulerPose, euler_to_pose, pose_to_euler
from .errors import LodlocError, NumericalError, ParseError, ValidationError
from .refine import RefineConfig
from .volume import SamplingSpec

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4

_PATH_KEYS = ("mesh", "wireframe", "intrinsics", "priors", "gt", "map_dir", "out_dir")
_FLOAT_KEYS = ("mu", "delta", "sigma_px", "refine_sigma_px", "noise_amplitude", "lambda",
               "temperature", "eps", "refine_step_tol", "refine_damping")
_INT_KEYS = ("point_limit", "seed", "noise_false_positives", "jobs",
             "refine_max_iters", "refine_max_backtracks")
_TUPLE_KEYS = ("level1_ranges", "counts", "counts_l2", "counts_l3")
MANIFEST_KEYS = frozenset(_PATH_KEYS + _FLOAT_KEYS + _INT_KEYS + _TUPLE_KEYS
                          + ("thresholds", "overlay"))

MANIFEST_DEFAULTS = {
    "mu": "10", "delta": "1", "point_limit": "2000", "seed": "0",
    "sigma_px": "2", "refine_sigma_px": "2", "noise_amplitude": "0", "noise_false_positives": "0",
    "level1_ranges": "10,10,30,7.5", "counts": "10,10,30,8",
    "lambda": "0.8", "temperature": "1", "eps": "0.05",
    "refine_max_iters": "10", "refine_step_tol": "1e-6",
    "refine_damping": "1e-6", "refine_max_backtracks": "8",
    "thresholds": "2:2,3:3,5:5", "jobs": "1", "overlay": "0",
}

RESULT_POSE_BLOCKS = ("prior", "l1", "l2", "l3", "refined")
POSE_FIELDS = ("x", "y", "z", "yaw", "pitch", "roll")


def _parse_manifest(path: Path) -> dict:
    values = dict(MANIFEST_DEFAULTS)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in MANIFEST_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown manifest key '{key}'")
        values[key] = value.strip()
    return values


def _floats(text: str, n: int, what: str) -> tuple:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != n:
        raise ValidationError(f"{what}: expected {n} comma-separated values")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ValidationError(f"{what}: {exc}") from exc


def _parse_thresholds(text: str) -> tuple:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise ValidationError(f"threshold '{item}': expected METERS:DEGREES")
        tm, _, td = item.partition(":")
        try:
            out.append((float(tm), float(td)))
        except ValueError as exc:
            raise ValidationError(f"threshold '{item}': {exc}") from exc
    if not out:
        raise ValidationError("no thresholds given")
    return tuple(out)


# ---------------------------------------------------------------------------
# extract

def cmd_extract(args) -> int:
    mesh = geometry.load_obj(args.mesh)
    edges = geometry.extract_wireframe(mesh, mu_degrees=args.mu)
    points = geometry.sample_points(edges, delta=args.delta)
    geometry.save_wireframe(args.out, edges)
    print(f"{len(edges)} edges, {len(points)} sampled points -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle

def cmd_oracle(args) -> int:
    if args.sigma_px <= 0:
        raise ValidationError("sigma_px must be positive")
    edges = geometry.load_wireframe(args.wireframe)
    points = geometry.sample_points(edges, delta=args.delta)
    k = camera.load_intrinsics(args.intrinsics)
    poses = camera.load_poses(args.poses)
    mesh = geometry.load_obj(args.mesh) if args.mesh else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (name, e) in enumerate(poses):
        pose = euler_to_pose(e)
        pts = points
        if mesh is not None:
            # Splat only what the reference camera actually sees.
            depth = visibility.render_depth(mesh, k, pose)
            mask = visibility.visibility_mask(points, k, pose, depth)
            pts = visibility.visible_points(points, mask)
        noise = oracle.NoiseSpec(amplitude=args.noise_amplitude,
                                 false_positives=args.noise_false_positives,
                                 seed=args.seed + i)
        pyramid = oracle.synth_pyramid(pts, k, pose,
                                       sigma_px=args.sigma_px, noise=noise,
                                       refine_sigma_px=args.refine_sigma_px)
        oracle.save_pyramid(out_dir, name, pyramid)
    print(f"{len(poses)} pyramids ({4 * len(poses)} maps) -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# localize

def _pose_cells(e: EulerPose | None) -> list:
    if e is None:
        return [""] * 6
    return [f"{v:.10g}" for v in (e.x, e.y, e.z, e.yaw, e.pitch, e.roll)]


def _run_query(name, prior, wf, mesh, k, map_dir, cfg):
    try:
        pyramid = oracle.load_pyramid(map_dir, name)
        rec = pipeline.localize(
            wf, mesh, k, prior, pyramid,
            level1_spec=SamplingSpec(ranges=cfg["level1_ranges"], counts=cfg["counts"][0]),
            counts_per_level=cfg["counts"],
            lam=cfg["lambda"],
            refine_cfg=cfg["refine_cfg"],
            point_limit=cfg["point_limit"],
            seed=cfg["seed"],
            temperature=cfg["temperature"],
            eps=cfg["eps"],
            query_name=name,
        )
        return rec, None
    except LodlocError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_localize(args) -> int:
    manifest_path = Path(args.manifest)
    values = _parse_manifest(manifest_path)
    for override in args.set or []:
        if "=" not in override:
            raise ValidationError(f"--set '{override}': expected KEY=VALUE")
        key, _, val = override.partition("=")
        if key not in MANIFEST_KEYS:
            raise ValidationError(f"--set: unknown manifest key '{key}'")
        values[key] = val
    base = manifest_path.parent

    def path_of(key):
        return (base / values[key]) if key in values else None

    for required in ("mesh", "intrinsics", "priors", "map_dir"):
        if required not in values:
            raise ValidationError(f"manifest missing required key '{required}'")

    mesh = geometry.load_obj(path_of("mesh"))
    k = camera.load_intrinsics(path_of("intrinsics"))
    priors = camera.load_poses(path_of("priors"))
    gt = dict(camera.load_poses(path_of("gt"))) if "gt" in values else None

    mu = float(values["mu"])
    delta = float(values["delta"])
    if "wireframe" in values:
        edges = geometry.load_wireframe(path_of("wireframe"))
    else:
        edges = geometry.extract_wireframe(mesh, mu_degrees=mu)
    wf = geometry.sample_points(edges, delta=delta)

    counts1 = tuple(int(c) for c in _floats(values["counts"], 4, "counts"))
    counts = [counts1,
              tuple(int(c) for c in _floats(values.get("counts_l2", values["counts"]), 4, "counts_l2")),
              tuple(int(c) for c in _floats(values.get("counts_l3", values["counts"]), 4, "counts_l3"))]
    cfg = {
        "level1_ranges": _floats(values["level1_ranges"], 4, "level1_ranges"),
        "counts": counts,
        "lambda": float(values["lambda"]),
        "temperature": float(values["temperature"]),
        "eps": float(values["eps"]),
        "point_limit": int(values["point_limit"]),
        "seed": int(values["seed"]),
        "refine_cfg": RefineConfig(
            max_iters=int(values["refine_max_iters"]),
            step_tol=float(values["refine_step_tol"]),
            damping=float(values["refine_damping"]),
            max_backtracks=int(values["refine_max_backtracks"]),
        ),
    }

    if args.jobs is not None:
        jobs = args.jobs
    elif os.environ.get("LODLOC_JOBS"):
        jobs = int(os.environ["LODLOC_JOBS"])
    else:
        jobs = int(values["jobs"])
    jobs = max(1, jobs)

    out_dir = Path(args.out_dir) if args.out_dir else (base / values.get("out_dir", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    map_dir = path_of("map_dir")

    t_start = time.perf_counter()
    if jobs == 1:
        outcomes = [_run_query(n, p, wf, mesh, k, map_dir, cfg) for n, p in priors]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(
                lambda item: _run_query(item[0], item[1], wf, mesh, k, map_dir, cfg),
                priors))

    overlay = args.overlay or values.get("overlay", "0") not in ("0", "")
    rows = []
    for (name, prior), (rec, err) in zip(priors, outcomes):
        row = {"name": name}
        if err is not None:
            row["flag"] = err
            for block in RESULT_POSE_BLOCKS:
                for fld, cell in zip(POSE_FIELDS, _pose_cells(prior if block == "prior" else None)):
                    row[f"{block}_{fld}"] = cell
            row.update(t_err="", r_err="", ms_total="")
            rows.append(row)
            continue
        row["flag"] = ";".join(rec.flags)
        refined_euler = None
        if rec.refined is not None:
            try:
                refined_euler = pose_to_euler(rec.refined)
            except NumericalError:
                row["flag"] = ";".join(rec.flags + ["euler singular"])
        blocks = {
            "prior": prior,
            "l1": rec.per_level[0].selected,
            "l2": rec.per_level[1].selected,
            "l3": rec.per_level[2].selected,
            "refined": refined_euler,
        }
        for block, e in blocks.items():
            for fld, cell in zip(POSE_FIELDS, _pose_cells(e)):
                row[f"{block}_{fld}"] = cell
        if gt is not None and name in gt and rec.refined is not None:
            err_final = evaluate.pose_error(rec.refined, euler_to_pose(gt[name]))
            row["t_err"] = f"{err_final.t_err:.6g}"
            row["r_err"] = f"{err_final.r_err:.6g}"
        else:
            row["t_err"] = ""
            row["r_err"] = ""
        row["ms_total"] = f"{sum(rec.timing_ms.values()):.3f}"
        rows.append(row)
        if overlay and rec.refined is not None:
            _write_overlay(out_dir / f"{name}_overlay.ppm", k, rec.refined, wf,
                           args.overlay_background)

    fieldnames = (["name", "flag"]
                  + [f"{b}_{f}" for b in RESULT_POSE_BLOCKS for f in POSE_FIELDS]
                  + ["t_err", "r_err", "ms_total"])
    results_path = out_dir / "results.csv"
    with open(results_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    elapsed = time.perf_counter() - t_start
    print(f"{len(rows)} queries in {elapsed:.1f}s -> {results_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# overlay rendering (binary PPM, no image codecs needed)

def _read_ppm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read image {path}: {exc}") from exc
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        # header tokens may be separated by whitespace or # comments
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    if len(tokens) < 4 or tokens[0] != b"P6":
        raise ParseError(f"{path}: not a binary PPM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 supported")
    pixels = np.frombuffer(data[i + 1:i + 1 + 3 * w * h], dtype=np.uint8)
    if pixels.size != 3 * w * h:
        raise ParseError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).copy()


def _write_ppm(path, img: np.ndarray) -> None:
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def _draw_segment(img, u0, v0, u1, v1, color):
    h, w = img.shape[:2]
    n = int(max(abs(u1 - u0), abs(v1 - v0))) + 1
    us = np.rint(np.linspace(u0, u1, n)).astype(int)
    vs = np.rint(np.linspace(v0, v1, n)).astype(int)
    ok = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
    img[vs[ok], us[ok]] = color


def _write_overlay(path, k, pose, wf, background=None) -> None:
    img = _read_ppm(background) if background else np.zeros(
        (k.height, k.width, 3), dtype=np.uint8)
    u, v, d = camera.project_many(k, pose, wf.points)
    color = np.array([0, 255, 0], dtype=np.uint8)
    for i in range(len(wf) - 1):
        if wf.source_edge[i] != wf.source_edge[i + 1]:
            continue
        if d[i] <= 0 or d[i + 1] <= 0:
            continue
        if not (np.isfinite(u[i]) and np.isfinite(u[i + 1])):
            continue
        _draw_segment(img, u[i], v[i], u[i + 1], v[i + 1], color)
    _write_ppm(path, img)


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    thresholds = _parse_thresholds(args.thresholds)
    gt = dict(camera.load_poses(args.gt))
    try:
        with open(args.results, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read results {args.results}: {exc}") from exc
    if not rows:
        raise ValidationError("results file has no rows")

    missing = [r["name"] for r in rows if r["name"] not in gt]
    if missing:
        raise ValidationError("results names missing from GT: " + ", ".join(missing))

    def block_pose(row, block):
        cells = [row.get(f"{block}_{f}", "") for f in POSE_FIELDS]
        if any(c == "" for c in cells):
            return None
        return euler_to_pose(EulerPose(*[float(c) for c in cells]))

    out_dir = Path(args.out_dir) if args.out_dir else Path(args.results).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    per_query = []
    final_errors = []
    for row in rows:
        gt_pose = euler_to_pose(gt[row["name"]])
        cells = {"name": row["name"]}
        stage_errors = {}
        for block in RESULT_POSE_BLOCKS:
            pose = block_pose(row, block)
            if pose is None:
                stage_errors[block] = None
            else:
                stage_errors[block] = evaluate.pose_error(pose, gt_pose)
        final = stage_errors["refined"] or evaluate.PoseError(float("inf"), float("inf"))
        final_errors.append(final)
        cells["t_err"] = f"{final.t_err:.6g}"
        cells["r_err"] = f"{final.r_err:.6g}"
        for block, label in (("prior", "prior"), ("l1", "level1"),
                             ("l2", "level2"), ("l3", "level3"),
                             ("refined", "refined")):
            err = stage_errors[block]
            suffix = ("t", "r")
            for s, value in zip(suffix, (err.t_err, err.r_err) if err else ("", "")):
                key = f"{label}_{s}" if block != "prior" else f"{s}_err_prior"
                cells[key] = f"{value:.6g}" if value != "" else ""
        per_query.append(cells)

    report = evaluate.recall(final_errors, thresholds)
    errors_path = out_dir / "errors.csv"
    fieldnames = ["name", "t_err", "r_err", "t_err_prior", "r_err_prior",
                  "level1_t", "level1_r", "level2_t", "level2_r",
                  "level3_t", "level3_r", "refined_t", "refined_r"]
    with open(errors_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(per_query)
    recall_path = out_dir / "recall.csv"
    evaluate.save_recall_csv(recall_path, report)
    print(evaluate.format_recall_table(report))
    print(f"-> {recall_path}, {errors_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth-scene

def cmd_synth_scene(args) -> int:
    cfg = synth.SceneConfig(n_buildings=args.buildings)
    prior_ranges = _floats(args.prior_ranges, 4, "prior-ranges")
    paths = synth.generate_scene(
        args.out_dir, n_queries=args.queries, seed=args.seed, cfg=cfg,
        prior_ranges=prior_ranges, pitch_roll_err=args.pitch_roll_err,
        mu=args.mu, delta=args.delta, sigma_px=args.sigma_px,
        refine_sigma_px=args.refine_sigma_px)
    print(f"scene with {args.buildings} buildings, {args.queries} queries -> {args.out_dir}")
    print("next: lodloc oracle --wireframe {wireframe} --intrinsics {intrinsics} "
          "--poses {gt} --mesh {mesh} --sigma-px {sigma} --refine-sigma-px {rsigma} "
          "--out-dir {maps}".format(
              wireframe=paths["wireframe"], intrinsics=paths["intrinsics"],
              gt=paths["gt"], mesh=paths["mesh"], sigma=args.sigma_px,
              rsigma=args.refine_sigma_px, maps=paths["map_dir"]))
    print(f"then: lodloc localize --manifest {paths['manifest']}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lodloc",
        description="Camera localization against Level-of-Detail city wireframes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a wireframe from an OBJ mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--mu", type=float, default=geometry.DEFAULT_MU_DEG,
                   help="dihedral-angle threshold in degrees")
    p.add_argument("--delta", type=float, default=geometry.DEFAULT_DELTA_M,
                   help="point sampling interval in meters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("oracle", help="synthesize probability-map pyramids")
    p.add_argument("--wireframe", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--poses", required=True, help="reference pose CSV")
    p.add_argument("--mesh", default=None,
                   help="OBJ mesh for occlusion culling before splatting")
    p.add_argument("--sigma-px", type=float, default=oracle.DEFAULT_SIGMA_PX)
    p.add_argument("--refine-sigma-px", type=float, default=None,
                   help="splat width of the refined map (default: --sigma-px)")
    p.add_argument("--noise-amplitude", type=float, default=0.0)
    p.add_argument("--noise-false-positives", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=geometry.DEFAULT_DELTA_M)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("localize", help="run the localization pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a manifest value (repeatable)")
    p.add_argument("--jobs", type=int, default=None,
                   help="query worker count (default: $LODLOC_JOBS or manifest)")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--overlay", action="store_true",
                   help="write projected-wireframe overlays as PPM")
    p.add_argument("--overlay-background", default=None,
                   help="P6 PPM to draw over instead of a blank image")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", help="recall report from results and GT poses")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", default="2:2,3:3,5:5")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-scene", help="generate a procedural box-city scene")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--buildings", type=int, default=14)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-px", type=float, default=synth.DEFAULT_SCENE_SIGMA_PX)
    p.add_argument("--refine-sigma-px", type=float,
                   default=synth.DEFAULT_SCENE_REFINE_SIGMA_PX)
    p.add_argument("--prior-ranges", default="10,10,30,7.5",
                   help="prior error half-envelope x,y,z,yaw")
    p.add_argument("--pitch-roll-err", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=geometry.DEFAULT_MU_DEG)
    p.add_argument("--delta", type=float, default=geometry.DEFAULT_DELTA_M)
    p.set_defaults(func=cmd_synth_scene)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
