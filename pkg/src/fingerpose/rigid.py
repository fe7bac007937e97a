"""Least-squares rigid registration of matched 2D point sets.

Solves ``min_{theta, t} sum_i ||p_i - R(theta) q_i - t||^2`` in closed form
(2D orthogonal Procrustes without reflection or scale), with ``R`` the
image-axis rotation from :mod:`fingerpose.pose`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateConfigurationError, InvalidArgumentError
from .pose import Pose2D, normalize_angle, rotation_matrix

__all__ = [
    "RigidTransform2D",
    "fit_rigid",
    "apply_rigid",
    "transfer_pose",
    "compose_rigid",
    "read_matches",
    "write_matches",
]


@dataclass(frozen=True)
class RigidTransform2D:
    theta: float
    tx: float
    ty: float
    rms_residual: float = 0.0

    def __post_init__(self):
        for v in (self.theta, self.tx, self.ty, self.rms_residual):
            if not math.isfinite(v):
                raise InvalidArgumentError("rigid transform fields must be finite")
        if self.rms_residual < 0:
            raise InvalidArgumentError("rms_residual must be >= 0")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def t(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.theta)


def _as_points(pts, name) -> np.ndarray:
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidArgumentError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite coordinates")
    return arr


def fit_rigid(p, q) -> RigidTransform2D:
    """Rotation and translation taking ``q`` onto ``p`` in the least-squares sense."""
    p = _as_points(p, "p")
    q = _as_points(q, "q")
    if p.shape != q.shape:
        raise InvalidArgumentError(f"point sets differ in size: {len(p)} vs {len(q)}")
    n = len(p)
    if n < 2:
        raise DegenerateConfigurationError(f"need at least 2 correspondences, got {n}")

    p_mean = p.mean(axis=0)
    q_mean = q.mean(axis=0)
    pc = p - p_mean
    qc = q - q_mean
    dot = float(np.sum(pc * qc))
    cross = float(np.sum(pc[:, 0] * qc[:, 1] - pc[:, 1] * qc[:, 0]))
    scale = math.sqrt(float(np.sum(pc * pc)) * float(np.sum(qc * qc)))
    if scale == 0.0 or math.hypot(dot, cross) <= 1e-12 * scale:
        raise DegenerateConfigurationError("zero cross-covariance: rotation is undetermined")

    theta = math.degrees(math.atan2(cross, dot))
    rot = rotation_matrix(theta)
    t = p_mean - rot @ q_mean
    resid = p - q @ rot.T - t
    rms = math.sqrt(float(np.sum(resid * resid)) / n)
    return RigidTransform2D(theta, float(t[0]), float(t[1]), rms)


def apply_rigid(xf: RigidTransform2D, pts) -> np.ndarray:
    """Map every point through ``R(theta) @ pt + t``."""
    pts = _as_points(pts, "pts")
    return pts @ xf.matrix.T + xf.t


def transfer_pose(rolled_pose: Pose2D, xf: RigidTransform2D) -> Pose2D:
    """Carry a pose from the rolled-print frame into the plain-print frame."""
    c, r = xf.matrix @ np.array([rolled_pose.c, rolled_pose.r]) + xf.t
    return Pose2D(c, r, rolled_pose.theta + xf.theta)


def compose_rigid(first: RigidTransform2D, then: RigidTransform2D) -> RigidTransform2D:
    """Transform equivalent to applying ``first`` and then ``then``."""
    t = then.matrix @ first.t + then.t
    return RigidTransform2D(first.theta + then.theta, float(t[0]), float(t[1]))


def read_matches(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``px,py,qx,qy`` CSV of matched points."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
            "px",
            "py",
            "qx",
            "qy",
        ]:
            raise InvalidArgumentError(f"{path}: expected header px,py,qx,qy")
        rows = [[float(row[k]) for k in ("px", "py", "qx", "qy")] for row in reader]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return arr[:, :2], arr[:, 2:]


def write_matches(path, p, q) -> None:
    p = _as_points(p, "p")
    q = _as_points(q, "q")
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["px", "py", "qx", "qy"])
        for a, b in zip(p, q):
            writer.writerow([repr(float(v)) for v in (*a, *b)])
