"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py

The numba path is whatever `lodloc._kernels` selected at import (set
LODLOC_NO_NUMBA=1 to watch the fallback run standalone); the numpy numbers
here always come from the private fallback implementations so both paths
can be timed in one process.
"""

import time

import numpy as np

from lodloc import _kernels
from lodloc.camera import EulerPose, euler_to_pose
from lodloc.geometry import extract_wireframe, sample_points
from lodloc.oracle import synth_map
from lodloc.synth import DEFAULT_INTRINSICS, SceneConfig, make_box_city
from lodloc.visibility import _clip_near
from lodloc.volume import SamplingSpec, build_grid, _yaw_rotations


def timeit(fn, repeats=5, warmup=2):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.mean(times)), float(np.std(times))


def report(name, numba_fn, numpy_fn, repeats=5):
    if _kernels.USING_NUMBA:
        mean_j, std_j = timeit(numba_fn, repeats)
        print(f"{name:14s} numba: {1e3 * mean_j:9.2f} +- {1e3 * std_j:6.2f} ms")
    else:
        print(f"{name:14s} numba: (backend disabled)")
        mean_j = None
    mean_n, std_n = timeit(numpy_fn, repeats)
    print(f"{name:14s} numpy: {1e3 * mean_n:9.2f} +- {1e3 * std_n:6.2f} ms")
    if mean_j:
        print(f"{name:14s} speedup: {mean_n / mean_j:.1f}x")
    print()


def main():
    k = DEFAULT_INTRINSICS
    rng = np.random.default_rng(0)
    mesh = make_box_city(rng, SceneConfig())
    wf = sample_points(extract_wireframe(mesh), delta=1.0)
    center = EulerPose(0.0, -10.0, 150.0, 30.0, 8.0, 0.0)
    pose = euler_to_pose(center)
    pm = synth_map(wf, k, pose, sigma_px=10.0)
    print(f"scene: {len(wf)} wireframe points, map {pm.width}x{pm.height}, "
          f"backend: {'numba' if _kernels.USING_NUMBA else 'numpy'}\n")

    # cost volume over the full inference grid
    grid = build_grid(center, SamplingSpec(ranges=(10, 10, 30, 7.5),
                                           counts=(10, 10, 30, 8)))
    rstack = _yaw_rotations(grid)
    cxs = np.asarray(center.x + grid.axes[0])
    cys = np.asarray(center.y + grid.axes[1])
    czs = np.asarray(center.z + grid.axes[2])
    args = (pm.values, wf.points, k.fx, k.fy, k.cx, k.cy, rstack, cxs, cys, czs)

    def volume_numpy():
        out = np.empty((10, 10, 30, 8))
        _kernels._score_numpy(*args, out)

    report("cost volume", lambda: _kernels.score_volume(*args), volume_numpy,
           repeats=3)

    # depth rasterization
    cam = np.empty_like(mesh.vertices)
    r, t = pose.rotation, pose.translation
    v = mesh.vertices
    for row in range(3):
        cam[:, row] = r[row, 0] * v[:, 0] + r[row, 1] * v[:, 1] \
            + r[row, 2] * v[:, 2] + t[row]
    tris = []
    for f in mesh.faces:
        for kk in range(1, len(f) - 1):
            for clipped in _clip_near(cam[[f[0], f[kk], f[kk + 1]]], 0.01):
                z = clipped[:, 2]
                st = np.empty((3, 3))
                st[:, 0] = k.fx * clipped[:, 0] / z + k.cx
                st[:, 1] = k.fy * clipped[:, 1] / z + k.cy
                st[:, 2] = 1.0 / z
                tris.append(st)
    tris = np.stack(tris)

    def raster_numpy():
        buf = np.full((k.height, k.width), np.inf)
        _kernels._raster_numpy(tris, buf)

    report("depth raster", lambda: _kernels.raster_triangles(tris, k.height, k.width),
           raster_numpy)

    # gaussian splatting
    from lodloc.camera import project_many
    u, vv, d = project_many(k, pose, wf.points)
    front = d > 0
    us, vs = u[front], vv[front]

    def splat_numba():
        img = np.zeros((k.height, k.width))
        _kernels.splat_max(img, us, vs, 10.0, 40.0)

    def splat_numpy():
        img = np.zeros((k.height, k.width))
        _kernels._splat_numpy(img, us, vs, 10.0, 40.0)

    report("gauss splat", splat_numba, splat_numpy)


if __name__ == "__main__":
    main()
