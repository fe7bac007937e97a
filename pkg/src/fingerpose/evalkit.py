"""Error metrics over UV position and 3D angles, split by yaw regime."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .pose import Pose3D, UVPose, normalize_angles

__all__ = [
    "FullPose",
    "Metrics",
    "EvalReport",
    "TARGETS",
    "REGIMES",
    "angular_errors",
    "metrics",
    "partition_by_yaw",
    "report",
]

TARGETS = ("u", "v", "yaw", "pitch", "roll")
ANGULAR = {"yaw", "pitch", "roll"}
REGIMES = (45, 90, 135, 180)


@dataclass(frozen=True)
class FullPose:
    uv: UVPose
    pose3d: Pose3D

    def value(self, target: str) -> float:
        if target in ("u", "v"):
            return getattr(self.uv, target)
        return getattr(self.pose3d, target)


def angular_errors(pred, gt, signed: bool = False) -> np.ndarray:
    """Minimal angular differences ``pred - gt`` in degrees (magnitudes by default)."""
    pred = np.atleast_1d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_1d(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"length mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise InvalidArgumentError("need at least one angle pair")
    diff = normalize_angles(pred - gt)
    return diff if signed else np.abs(diff)


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    sd: float
    bias: float
    n: int


def metrics(signed_errors) -> Metrics:
    """MAE, RMSE and population SD of signed errors (SD is centred on their mean)."""
    e = np.asarray(signed_errors, dtype=np.float64)
    if e.size == 0:
        raise InvalidArgumentError("no errors to summarise")
    bias = float(e.mean())
    return Metrics(
        mae=float(np.abs(e).mean()),
        rmse=float(math.sqrt(np.mean(e * e))),
        sd=float(e.std()),
        bias=bias,
        n=int(e.size),
    )


def _yaw_of(item) -> float:
    if hasattr(item, "pose3d"):
        return item.pose3d.yaw
    if hasattr(item, "yaw"):
        return item.yaw
    return float(item)


def partition_by_yaw(dataset: Sequence, bound: float) -> list:
    """Items whose yaw magnitude is at most ``bound`` degrees."""
    if bound not in REGIMES:
        raise InvalidArgumentError(f"bound must be one of {REGIMES}, got {bound!r}")
    return [item for item in dataset if abs(_yaw_of(item)) <= bound]


@dataclass
class EvalReport:
    """Metric grid keyed by ``(regime, target)``; ``None`` marks an empty regime."""

    cells: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    regimes: tuple = REGIMES

    def __getitem__(self, key) -> Metrics | None:
        return self.cells[key]

    def check_identities(self, tol: float = 1e-9) -> None:
        """Raise ``AssertionError`` if RMSE < MAE or RMSE^2 != bias^2 + SD^2 anywhere."""
        for key, m in self.cells.items():
            if m is None:
                continue
            scale = max(1.0, m.rmse**2)
            if m.rmse < m.mae - tol * max(1.0, m.mae):
                raise AssertionError(f"{key}: RMSE {m.rmse} < MAE {m.mae}")
            if abs(m.rmse**2 - (m.bias**2 + m.sd**2)) > tol * scale:
                raise AssertionError(f"{key}: RMSE^2 != bias^2 + SD^2")

    def to_csv(self) -> str:
        lines = ["regime,target,mae,rmse,sd"]
        for regime in self.regimes:
            for target in TARGETS:
                m = self.cells[(regime, target)]
                if m is None:
                    lines.append(f"{regime},{target},,,")
                else:
                    lines.append(f"{regime},{target},{m.mae:.6f},{m.rmse:.6f},{m.sd:.6f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        head = f"{'regime':>6} {'n':>5} | " + " | ".join(f"{t:^20}" for t in TARGETS)
        sub = f"{'':>6} {'':>5} | " + " | ".join(f"{'MAE':>6} {'RMSE':>6} {'SD':>6}" for _ in TARGETS)
        rows = [head, sub, "-" * len(sub)]
        for regime in self.regimes:
            cells = []
            for target in TARGETS:
                m = self.cells[(regime, target)]
                cells.append(f"{'-':>6} {'-':>6} {'-':>6}" if m is None
                             else f"{m.mae:6.2f} {m.rmse:6.2f} {m.sd:6.2f}")
            rows.append(f"{'+-' + str(regime):>6} {self.counts[regime]:>5} | " + " | ".join(cells))
        return "\n".join(rows) + "\n"


def report(predictions: Sequence[FullPose], labels: Sequence[FullPose], regimes=REGIMES) -> EvalReport:
    """Per-regime MAE/RMSE/SD for u, v (pixels) and yaw, pitch, roll (degrees).

    Regimes select samples by ground-truth yaw.
    """
    if len(predictions) != len(labels):
        raise InvalidArgumentError("predictions and labels differ in length")
    pred = {t: np.array([p.value(t) for p in predictions], dtype=np.float64) for t in TARGETS}
    gt = {t: np.array([g.value(t) for g in labels], dtype=np.float64) for t in TARGETS}
    out = EvalReport(regimes=tuple(regimes))
    for regime in regimes:
        if regime not in REGIMES:
            raise InvalidArgumentError(f"regime must be one of {REGIMES}, got {regime!r}")
        keep = np.abs(gt["yaw"]) <= regime
        out.counts[regime] = int(keep.sum())
        for target in TARGETS:
            if not keep.any():
                out.cells[(regime, target)] = None
                continue
            if target in ANGULAR:
                err = angular_errors(pred[target][keep], gt[target][keep], signed=True)
            else:
                err = pred[target][keep] - gt[target][keep]
            out.cells[(regime, target)] = metrics(err)
    return out
