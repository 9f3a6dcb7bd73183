"""Pose-error metrics, recall reports, and training-loss diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .camera import EulerPose, Intrinsics, PoseSE3, project_many, wrap_degrees
from .errors import ValidationError
from .geometry import WireframePoints
from .volume import PoseVolume

DEFAULT_THRESHOLDS = ((2.0, 2.0), (3.0, 3.0), (5.0, 5.0))
DEFAULT_HUBER_DELTA_PX = 1.0


@dataclass(frozen=True)
class PoseError:
    """Translation error (m, camera centers) and geodesic rotation error (deg)."""

    t_err: float
    r_err: float


@dataclass
class RecallReport:
    thresholds: tuple
    recall: tuple
    median_t: float
    median_r: float


def pose_error(est: PoseSE3, gt: PoseSE3) -> PoseError:
    t_err = float(np.linalg.norm(est.center() - gt.center()))
    cos_angle = (np.trace(est.rotation.T @ gt.rotation) - 1.0) / 2.0
    r_err = math.degrees(math.acos(max(-1.0, min(1.0, cos_angle))))
    return PoseError(t_err=t_err, r_err=r_err)


def recall(errors, thresholds=DEFAULT_THRESHOLDS) -> RecallReport:
    """Percentage of queries within each (meters, degrees) bound (inclusive)."""
    errors = list(errors)
    if not errors:
        raise ValidationError("no errors to evaluate")
    ts = np.array([e.t_err for e in errors])
    rs = np.array([e.r_err for e in errors])
    rates = []
    for tm, td in thresholds:
        ok = (ts <= tm) & (rs <= td)
        rates.append(100.0 * float(np.count_nonzero(ok)) / len(errors))
    return RecallReport(thresholds=tuple(tuple(t) for t in thresholds),
                        recall=tuple(rates),
                        median_t=float(np.median(ts)),
                        median_r=float(np.median(rs)))


def nearest_bin(volume: PoseVolume, gt: EulerPose) -> tuple:
    """Grid index nearest the pose, per dimension, with yaw wrap."""
    target = (gt.x, gt.y, gt.z, gt.yaw)
    idx = []
    for dim in range(4):
        vals = volume.grid.axis_values(dim)
        dev = vals - target[dim]
        if dim == 3:
            dev = wrap_degrees(dev)
        idx.append(int(np.argmin(np.abs(dev))))
    return tuple(idx)


def nll_diagnostic(volume: PoseVolume, gt: EulerPose) -> float:
    """Negative log-probability of the grid bin nearest the true pose."""
    if volume.prob is None:
        raise ValidationError("probability volume not filled")
    p = float(volume.prob[nearest_bin(volume, gt)])
    if p <= 0.0:
        return float("inf")
    return -math.log(p)


def reproj_diagnostic(est: PoseSE3, gt: PoseSE3, points: WireframePoints,
                      K: Intrinsics, huber_delta: float = DEFAULT_HUBER_DELTA_PX) -> float:
    """Huber-robustified sum of squared reprojection offsets (pixels).

    The kernel takes the squared pixel distance s: quadratic (s) below
    delta^2, linear (2 delta sqrt(s) - delta^2) above. Points behind either
    camera are skipped; all skipped is an error.
    """
    if len(points) == 0:
        raise ValidationError("no wireframe points")
    ue, ve, de = project_many(K, est, points.points)
    ug, vg, dg = project_many(K, gt, points.points)
    usable = (de > 0.0) & (dg > 0.0)
    if not np.any(usable):
        raise ValidationError("all points behind a camera")
    s = (ue - ug) ** 2 + (ve - vg) ** 2
    s = s[usable]
    d2 = huber_delta * huber_delta
    rho = np.where(s <= d2, s, 2.0 * huber_delta * np.sqrt(s) - d2)
    return float(np.sum(rho))


def format_recall_table(report: RecallReport) -> str:
    lines = ["threshold    recall"]
    for (tm, td), pct in zip(report.thresholds, report.recall):
        lines.append(f"{tm:g}m-{td:g}deg    {pct:6.2f}%")
    lines.append(f"median error  {report.median_t:.3f} m / {report.median_r:.3f} deg")
    return "\n".join(lines)


def save_recall_csv(path, report: RecallReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold_m", "threshold_deg", "recall_pct"])
        for (tm, td), pct in zip(report.thresholds, report.recall):
            writer.writerow([f"{tm:g}", f"{td:g}", f"{pct:.6g}"])
