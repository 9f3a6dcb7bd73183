"""Gauss-Newton 6-DoF pose refinement against the refined probability map.

The residual of a wireframe point is the map value at its projection; the
refiner *raises* the summed squared residuals, moving projections toward
higher predicted probability. The update uses the right-perturbation model

    p_cam = R (exp(w) P + dt) + t,

so the Jacobian chain is (map gradient) x (projection Jacobian) x
(-R [P]x | R), ordered rotation-first. The image-gradient factor is the
exact derivative of the piecewise-bilinear map surface, which makes the
analytic Jacobian match finite differences of the residual to machine
precision away from pixel-grid lines; the smoothed central-difference grids
from :func:`image_gradients` are available as an alternative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import bilinear_gradient, bilinear_values
from .camera import Intrinsics, PoseSE3, so3_exp
from .errors import ValidationError
from .geometry import WireframePoints
from .oracle import ProbabilityMap

MIN_DEPTH_M = 1e-6


@dataclass
class GradientMaps:
    """Central-difference partials of a probability map (one-sided at borders)."""

    gx: np.ndarray
    gy: np.ndarray


@dataclass(frozen=True)
class RefineConfig:
    max_iters: int = 10
    step_tol: float = 1e-6
    # Relative Levenberg damping: H += damping * trace(H) / 6 * I.
    damping: float = 1e-6
    max_backtracks: int = 8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.damping < 0:
            raise ValidationError("damping must be nonnegative")


@dataclass
class RefineResult:
    pose: PoseSE3
    objective_trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    skipped_points: int = 0


def image_gradients(pmap: ProbabilityMap) -> GradientMaps:
    """Per-pixel partials: central differences interior, one-sided at borders."""
    m = pmap.values
    h, w = m.shape
    if h < 2 or w < 2:
        raise ValidationError("map smaller than 2x2")
    gx = np.empty_like(m)
    gx[:, 1:-1] = (m[:, 2:] - m[:, :-2]) / 2.0
    gx[:, 0] = m[:, 1] - m[:, 0]
    gx[:, -1] = m[:, -1] - m[:, -2]
    gy = np.empty_like(m)
    gy[1:-1, :] = (m[2:, :] - m[:-2, :]) / 2.0
    gy[0, :] = m[1, :] - m[0, :]
    gy[-1, :] = m[-1, :] - m[-2, :]
    return GradientMaps(gx=gx, gy=gy)


def sample_gradient(grads: GradientMaps, u: float, v: float) -> tuple[float, float]:
    """Bilinear sub-pixel sample of the gradient grids."""
    return (float(bilinear_values(grads.gx, np.float64(u), np.float64(v))),
            float(bilinear_values(grads.gy, np.float64(u), np.float64(v))))


def _residuals_jacobians(pmap: ProbabilityMap, K: Intrinsics,
                         rot: np.ndarray, trans: np.ndarray, pts: np.ndarray):
    """Vectorized residuals f (N,), Jacobians J (N, 6), and validity mask.

    Reductions over points happen in the callers with plain numpy sums
    (fixed-order pairwise), keeping results independent of BLAS threading.
    """
    px, py, pz = pts[:, 0], pts[:, 1], pts[:, 2]
    xc = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
    yc = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
    zc = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
    valid = zc > MIN_DEPTH_M
    zs = np.where(valid, zc, 1.0)
    u = K.fx * xc / zs + K.cx
    v = K.fy * yc / zs + K.cy
    f = bilinear_values(pmap.values, u, v)
    du, dv = bilinear_gradient(pmap.values, u, v)
    # G * projection Jacobian: one 1x3 row per point.
    m0 = du * K.fx / zs
    m1 = dv * K.fy / zs
    m2 = -(du * K.fx * xc + dv * K.fy * yc) / (zs * zs)
    # q = (G Pi') R, then J_rot = P x q and J_trans = q.
    q = np.empty_like(pts)
    for col in range(3):
        q[:, col] = m0 * rot[0, col] + m1 * rot[1, col] + m2 * rot[2, col]
    jac = np.empty((len(pts), 6))
    jac[:, 0] = py * q[:, 2] - pz * q[:, 1]
    jac[:, 1] = pz * q[:, 0] - px * q[:, 2]
    jac[:, 2] = px * q[:, 1] - py * q[:, 0]
    jac[:, 3:] = q
    f = np.where(valid, f, 0.0)
    jac[~valid] = 0.0
    return f, jac, valid


def residual_jacobian(pmap: ProbabilityMap, K: Intrinsics, pose: PoseSE3,
                      point, grads: GradientMaps | None = None):
    """Residual and 1x6 Jacobian (rotation xyz, translation xyz) of one point.

    Pass ``grads`` to use smoothed central-difference gradients instead of
    the exact bilinear-surface derivative (diagnostics only; the refiner
    uses the exact form).

    Raises:
        ValidationError: camera depth not above 1e-6 m.
    """
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    if grads is None:
        f, jac, valid = _residuals_jacobians(pmap, K, pose.rotation,
                                             pose.translation, p)
        if not valid[0]:
            raise ValidationError("nonpositive depth")
        return float(f[0]), jac[0]
    pc = pose.rotation @ p[0] + pose.translation
    if pc[2] <= MIN_DEPTH_M:
        raise ValidationError("nonpositive depth")
    u = K.fx * pc[0] / pc[2] + K.cx
    v = K.fy * pc[1] / pc[2] + K.cy
    f = float(bilinear_values(pmap.values, np.float64(u), np.float64(v)))
    du, dv = sample_gradient(grads, u, v)
    m = np.array([du * K.fx / pc[2], dv * K.fy / pc[2],
                  -(du * K.fx * pc[0] + dv * K.fy * pc[1]) / (pc[2] * pc[2])])
    q = m @ pose.rotation
    jac = np.concatenate([np.cross(p[0], q), q])
    return f, jac


def _objective(f: np.ndarray) -> float:
    return float(np.sum(f * f))


def gauss_newton_refine(pmap: ProbabilityMap, points: WireframePoints,
                        K: Intrinsics, init: PoseSE3,
                        cfg: RefineConfig | None = None) -> RefineResult:
    """Iterative ascent on the summed squared map response.

    Per iteration: assemble H = sum JtJ (plus scaled damping), g = sum Jtf,
    solve H d = g, apply the right-update, and halve the step while the
    objective would decrease. The returned trace is non-decreasing. Flags:
    ``underconstrained`` (< 6 usable points) and ``refine singular`` (H not
    SPD after a damped retry) return the initial pose unchanged.
    """
    cfg = cfg or RefineConfig()
    pts = points.points
    rot = init.rotation.copy()
    trans = init.translation.copy()

    f, jac, valid = _residuals_jacobians(pmap, K, rot, trans, pts)
    skipped = int(len(pts) - np.count_nonzero(valid))
    obj = _objective(f)
    trace = [obj]
    if int(np.count_nonzero(valid)) < 6:
        return RefineResult(pose=init, objective_trace=trace,
                            flags=["underconstrained"], skipped_points=skipped)

    for _ in range(cfg.max_iters):
        h = (jac[:, :, None] * jac[:, None, :]).sum(axis=0)
        g = (jac * f[:, None]).sum(axis=0)
        gnorm = math.sqrt(float(g @ g))
        if gnorm == 0.0:
            break  # exactly stationary (e.g. constant map)
        scale = np.trace(h) / 6.0
        solved = None
        for damping in (cfg.damping, max(cfg.damping, 1e-3)):
            hd = h + damping * scale * np.eye(6)
            try:
                np.linalg.cholesky(hd)
                solved = np.linalg.solve(hd, g)
                break
            except np.linalg.LinAlgError:
                continue
        if solved is None or not np.all(np.isfinite(solved)):
            return RefineResult(pose=init, objective_trace=trace,
                                flags=["refine singular"], skipped_points=skipped)
        step = solved
        if math.sqrt(float(step @ step)) < cfg.step_tol:
            break

        accepted = False
        for _bt in range(cfg.max_backtracks + 1):
            rot_new = rot @ so3_exp(step[:3])
            # Translation updates through the current rotation (right update).
            trans_new = rot @ step[3:] + trans
            f_new, jac_new, valid_new = _residuals_jacobians(
                pmap, K, rot_new, trans_new, pts)
            obj_new = _objective(f_new)
            if obj_new >= obj:
                rot, trans = rot_new, trans_new
                f, jac, valid = f_new, jac_new, valid_new
                skipped = int(len(pts) - np.count_nonzero(valid))
                obj = obj_new
                trace.append(obj)
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            break

    return RefineResult(pose=PoseSE3(rotation=rot, translation=trans),
                        objective_trace=trace, flags=[], skipped_points=skipped)
