"""Pose representations and the exact transforms between sensor and UV frames.

Coordinate convention, used everywhere in the package: ``x``/``c`` grows to the
right and ``y``/``r`` grows downward (image indexing), pixel centres sit on
integer coordinates, and angles are in degrees, positive counter-clockwise as
seen on screen. A rotation by ``a`` therefore acts on image coordinates as

    R(a) = [[cos a,  sin a],
            [-sin a, cos a]]

so that the unit vector pointing right, (1, 0), turns into (0, -1) (pointing
up) for ``a = 90``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "Pose2D",
    "UVPose",
    "Pose3D",
    "TouchCenter",
    "normalize_angle",
    "circular_diff",
    "rotation_matrix",
    "to_uv_pose",
    "from_uv_pose",
]


def normalize_angle(deg: float) -> float:
    """Wrap an angle in degrees into the half-open interval [-180, 180)."""
    deg = float(deg)
    if not math.isfinite(deg):
        raise InvalidArgumentError(f"angle must be finite, got {deg!r}")
    out = math.fmod(deg + 180.0, 360.0)
    if out < 0.0:
        out += 360.0
    out -= 180.0
    # fmod can land exactly on +180 through round-off
    if out >= 180.0:
        out -= 360.0
    return out


def normalize_angles(deg):
    """Array version of :func:`normalize_angle`."""
    deg = np.asarray(deg, dtype=np.float64)
    if not np.all(np.isfinite(deg)):
        raise InvalidArgumentError("angles must be finite")
    out = np.mod(deg + 180.0, 360.0) - 180.0
    return np.where(out >= 180.0, out - 360.0, out)


def circular_diff(a: float, b: float) -> float:
    """Signed minimal difference ``a - b`` in [-180, 180).

    Exactly opposite angles give -180 in both orders, so antisymmetry holds
    everywhere except on that boundary.
    """
    return normalize_angle(float(a) - float(b))


def rotation_matrix(deg: float) -> np.ndarray:
    """Rotation by ``deg`` degrees in image coordinates (see module docstring)."""
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, s], [-s, c]])


def _check_finite(name, *values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgumentError(f"{name} fields must be finite, got {values!r}")


@dataclass(frozen=True)
class Pose2D:
    """Fingerprint centre ``(c, r)`` and direction ``theta`` in the sensor frame."""

    c: float
    r: float
    theta: float

    def __post_init__(self):
        _check_finite("Pose2D", self.c, self.r, self.theta)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "theta", normalize_angle(self.theta))


@dataclass(frozen=True)
class UVPose:
    """Touch position ``(u, v)`` and angle ``phi`` in the rolled-print frame."""

    u: float
    v: float
    phi: float

    def __post_init__(self):
        _check_finite("UVPose", self.u, self.v, self.phi)
        object.__setattr__(self, "u", float(self.u))
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "phi", normalize_angle(self.phi))


@dataclass(frozen=True)
class Pose3D:
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        _check_finite("Pose3D", self.roll, self.pitch, self.yaw)
        object.__setattr__(self, "roll", float(self.roll))
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class TouchCenter:
    x: float
    y: float

    def __post_init__(self):
        _check_finite("TouchCenter", self.x, self.y)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))


def to_uv_pose(pose: Pose2D, touch: TouchCenter) -> UVPose:
    """Express the touch centre in the fingerprint's own frame.

    ``(u, v) = R(theta) @ ((x, y) - (c, r))`` and ``phi = -theta``.
    """
    rot = rotation_matrix(pose.theta)
    u, v = rot @ np.array([touch.x - pose.c, touch.y - pose.r])
    return UVPose(u, v, -pose.theta)


def from_uv_pose(uv: UVPose, touch: TouchCenter) -> Pose2D:
    """Inverse of :func:`to_uv_pose` for a fixed touch centre."""
    theta = -uv.phi
    # R is orthonormal, so its inverse is the transpose
    dx, dy = rotation_matrix(theta).T @ np.array([uv.u, uv.v])
    return Pose2D(touch.x - dx, touch.y - dy, theta)
