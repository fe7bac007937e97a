"""Soft-binned encodings of angles and positions.

An angle is represented by two probability vectors over ``T`` equal bins of
[-180, 180); the vectors share one Gaussian bump and are decoded against the
sine and cosine of the bin centres respectively. A position is a single
Gaussian bump over ``T`` equal bins of [0, range), decoded by expectation.

Gaussian widths are measured in bins. Angle bins are circular, position bins
are truncated at the edges; both are renormalised after truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDistributionError, InvalidArgumentError, OutOfRangeError
from .pose import normalize_angle, normalize_angles

__all__ = [
    "SoftLabel",
    "BinTable",
    "angle_table",
    "position_table",
    "encode_angle",
    "decode_angle",
    "encode_position",
    "decode_position",
    "ce_loss",
    "ce_loss_from_logits",
    "entropy",
    "softmax",
    "trig_regression_loss",
    "trig_regression_decode",
]

KINDS = ("angle-sin", "angle-cos", "position")
PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SoftLabel:
    probs: np.ndarray
    kind: str

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64).reshape(-1)
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown label kind {self.kind!r}")
        if probs.size < 2:
            raise InvalidArgumentError("a soft label needs at least 2 bins")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise InvalidArgumentError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def T(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class BinTable:
    """Bin layout for one head.

    ``kind`` is ``"angle"`` (centres in degrees over [-180, 180)) or
    ``"position"`` (centres in pixels over [0, range)). ``sigma`` is the
    Gaussian label width in bins.
    """

    kind: str
    T: int
    sigma: float
    range: float = 360.0
    centers: np.ndarray = field(init=False, repr=False)
    z_sin: np.ndarray | None = field(init=False, repr=False, default=None)
    z_cos: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.kind not in ("angle", "position"):
            raise InvalidArgumentError(f"unknown table kind {self.kind!r}")
        if int(self.T) != self.T or self.T < 2:
            raise InvalidArgumentError(f"bin count must be an integer >= 2, got {self.T!r}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise InvalidArgumentError(f"sigma must be finite and >= 0, got {self.sigma!r}")
        if not (self.range > 0 and math.isfinite(self.range)):
            raise InvalidArgumentError(f"range must be positive, got {self.range!r}")
        T = int(self.T)
        object.__setattr__(self, "T", T)
        width = self.range / T
        start = -180.0 if self.kind == "angle" else 0.0
        centers = start + (np.arange(T) + 0.5) * width
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        if self.kind == "angle":
            rad = np.radians(centers)
            z_sin, z_cos = np.sin(rad), np.cos(rad)
            z_sin.setflags(write=False)
            z_cos.setflags(write=False)
            object.__setattr__(self, "z_sin", z_sin)
            object.__setattr__(self, "z_cos", z_cos)

    @property
    def width(self) -> float:
        return self.range / self.T


def angle_table(T: int = 120, sigma: float = 2.5) -> BinTable:
    return BinTable("angle", T, sigma, 360.0)


def position_table(T: int = 512, sigma: float = 3.5, range: float = 512.0) -> BinTable:
    return BinTable("position", T, sigma, range)


def _bump(dist: np.ndarray, sigma: float) -> np.ndarray:
    """Row-normalised Gaussian over bin distances ``dist`` of shape (N, T)."""
    sq = dist * dist
    if sigma == 0:
        # degenerate width: all mass on the nearest bin(s)
        p = (sq == sq.min(axis=1, keepdims=True)).astype(np.float64)
    else:
        # shift by the row minimum so narrow bumps never underflow to all-zero
        p = np.exp(-(sq - sq.min(axis=1, keepdims=True)) / (2.0 * sigma * sigma))
    return p / p.sum(axis=1, keepdims=True)


def encode_angles(theta, table: BinTable) -> np.ndarray:
    """Gaussian labels for an array of angles, shape (N, T)."""
    if table.kind != "angle":
        raise InvalidArgumentError("encode_angle needs an angle table")
    theta = normalize_angles(np.atleast_1d(theta))
    idx = (theta + 180.0) / table.width - 0.5
    T = table.T
    dist = np.arange(T)[None, :] - idx[:, None]
    dist = np.mod(dist + T / 2.0, T) - T / 2.0
    return _bump(dist, table.sigma)


def encode_angle(theta: float, table: BinTable) -> tuple[SoftLabel, SoftLabel]:
    """Encode one angle as the pair ``(p_sin, p_cos)``."""
    probs = encode_angles([theta], table)[0]
    return SoftLabel(probs, "angle-sin"), SoftLabel(probs, "angle-cos")


def decode_angles(p_sin: np.ndarray, p_cos: np.ndarray, table: BinTable, strict: bool = True) -> np.ndarray:
    """Row-wise angles; degenerate rows raise, or become NaN when ``strict`` is false."""
    if table.kind != "angle":
        raise InvalidArgumentError("decode_angle needs an angle table")
    p_sin = np.atleast_2d(p_sin)
    p_cos = np.atleast_2d(p_cos)
    if p_sin.shape[-1] != table.T or p_cos.shape[-1] != table.T:
        raise InvalidArgumentError("label length does not match the bin table")
    es = p_sin @ table.z_sin
    ec = p_cos @ table.z_cos
    bad = (np.abs(es) < 1e-12) & (np.abs(ec) < 1e-12)
    if np.any(bad) and strict:
        raise DegenerateDistributionError(
            f"expected sine and cosine vanish for {int(bad.sum())} row(s)"
        )
    out = normalize_angles(np.degrees(np.arctan2(es, ec)))
    out[bad] = np.nan
    return out


def decode_angle(p_sin: SoftLabel, p_cos: SoftLabel, table: BinTable) -> float:
    """Angle from the expected sine and cosine under the two distributions."""
    if p_sin.T != p_cos.T:
        raise InvalidArgumentError("p_sin and p_cos have different bin counts")
    return float(decode_angles(p_sin.probs, p_cos.probs, table)[0])


def encode_positions(x, table: BinTable) -> np.ndarray:
    if table.kind != "position":
        raise InvalidArgumentError("encode_position needs a position table")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x >= table.range):
        raise OutOfRangeError(f"positions must lie in [0, {table.range})")
    idx = x / table.width - 0.5
    dist = np.arange(table.T)[None, :] - idx[:, None]
    return _bump(dist, table.sigma)


def encode_position(x: float, table: BinTable) -> SoftLabel:
    return SoftLabel(encode_positions([x], table)[0], "position")


def decode_positions(p: np.ndarray, table: BinTable) -> np.ndarray:
    p = np.atleast_2d(p)
    if p.shape[-1] != table.T:
        raise InvalidArgumentError("label length does not match the bin table")
    return p @ table.centers


def decode_position(p: SoftLabel, table: BinTable) -> float:
    """Expected bin centre under ``p``."""
    return float(decode_positions(p.probs, table)[0])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(target: SoftLabel) -> float:
    t = target.probs
    nz = t > 0
    return float(-np.sum(t[nz] * np.log(t[nz])))


def ce_loss(predicted: SoftLabel, target: SoftLabel) -> float:
    """Cross entropy ``-sum(target * log(predicted))``; predictions clamped at 1e-12."""
    if predicted.T != target.T:
        raise InvalidArgumentError(
            f"bin count mismatch: predicted {predicted.T}, target {target.T}"
        )
    return float(-np.sum(target.probs * np.log(np.maximum(predicted.probs, PROB_FLOOR))))


def ce_loss_from_logits(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross entropy over rows and its gradient w.r.t. ``logits``."""
    logits = np.atleast_2d(logits)
    target = np.atleast_2d(target)
    if logits.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch {logits.shape} vs {target.shape}")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    n = logits.shape[0]
    loss = float(-np.sum(target * log_p) / n)
    grad = (np.exp(log_p) * target.sum(axis=-1, keepdims=True) - target) / n
    return loss, grad


def trig_regression_loss(sin_hat: float, cos_hat: float, theta: float) -> float:
    """Absolute error on the sine and cosine of ``theta``."""
    t = math.radians(normalize_angle(theta))
    return abs(sin_hat - math.sin(t)) + abs(cos_hat - math.cos(t))


def trig_regression_decode(sin_hat: float, cos_hat: float) -> float:
    if not (math.isfinite(sin_hat) and math.isfinite(cos_hat)):
        raise InvalidArgumentError("trig outputs must be finite")
    if sin_hat == 0.0 and cos_hat == 0.0:
        raise DegenerateDistributionError("sine and cosine outputs are both zero")
    return normalize_angle(math.degrees(math.atan2(sin_hat, cos_hat)))
