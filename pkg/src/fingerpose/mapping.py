"""Polynomial mapping from UV pose to roll, pitch and yaw.

Roll and pitch are bivariate polynomials of degree ``k`` in the normalised
touch position plus a bias; yaw is the UV angle plus a bias. The polynomial
terms are ordered by total degree ``i = 1..k`` and, within a degree, by the
power of ``u`` ascending: ``v, u, v^2, uv, u^2, v^3, ...``. The constant term
is the bias and is kept out of the monomial row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, UnderdeterminedError
from .pose import Pose3D, UVPose, normalize_angle, normalize_angles

__all__ = [
    "MappingModel",
    "UV3DSample",
    "n_monomials",
    "monomial_names",
    "monomial_row",
    "fit_global",
    "adapt_bias",
    "map_to_3d",
    "circular_mean",
    "read_samples_csv",
    "write_samples_csv",
]

DEFAULT_INPUT_SCALE = 256.0


def n_monomials(k: int) -> int:
    return k * (k + 3) // 2


def monomial_names(k: int) -> list[str]:
    names = []
    for i in range(1, k + 1):
        for j in range(i + 1):
            names.append(f"u^{j}*v^{i - j}")
    return names


def monomial_rows(u, v, k: int) -> np.ndarray:
    """Monomial design matrix for arrays ``u``, ``v``: shape (n, k(k+3)/2)."""
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"degree must be an integer >= 1, got {k!r}")
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    cols = []
    for i in range(1, k + 1):
        for j in range(i + 1):
            cols.append(u**j * v ** (i - j))
    return np.stack(cols, axis=-1)


def monomial_row(u: float, v: float, k: int) -> np.ndarray:
    """Monomials ``u^j v^(i-j)`` for ``1 <= i <= k``, ``0 <= j <= i``."""
    return monomial_rows([u], [v], k)[0]


@dataclass(frozen=True)
class UV3DSample:
    uv: UVPose
    pose3d: Pose3D


@dataclass(frozen=True)
class MappingModel:
    k: int
    a_roll: tuple
    a_pitch: tuple
    b_roll: float = 0.0
    b_pitch: float = 0.0
    b_yaw: float = 0.0
    input_scale: tuple = (DEFAULT_INPUT_SCALE, DEFAULT_INPUT_SCALE)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidArgumentError(f"degree must be an integer >= 1, got {self.k!r}")
        m = n_monomials(self.k)
        a_roll = tuple(float(x) for x in self.a_roll)
        a_pitch = tuple(float(x) for x in self.a_pitch)
        if len(a_roll) != m or len(a_pitch) != m:
            raise InvalidArgumentError(f"degree {self.k} needs {m} coefficients per channel")
        scale = self.input_scale
        if np.isscalar(scale):
            scale = (scale, scale)
        scale = tuple(float(s) for s in scale)
        values = (*a_roll, *a_pitch, self.b_roll, self.b_pitch, self.b_yaw, *scale)
        if not all(math.isfinite(x) for x in values):
            raise InvalidArgumentError("mapping parameters must be finite")
        if len(scale) != 2 or min(scale) <= 0:
            raise InvalidArgumentError("input_scale must be two positive numbers")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "a_roll", a_roll)
        object.__setattr__(self, "a_pitch", a_pitch)
        object.__setattr__(self, "b_roll", float(self.b_roll))
        object.__setattr__(self, "b_pitch", float(self.b_pitch))
        object.__setattr__(self, "b_yaw", normalize_angle(self.b_yaw))
        object.__setattr__(self, "input_scale", scale)

    @classmethod
    def zeros(cls, k: int = 4, **kwargs) -> "MappingModel":
        m = n_monomials(k)
        return cls(k, (0.0,) * m, (0.0,) * m, **kwargs)

    def design(self, u, v) -> np.ndarray:
        su, sv = self.input_scale
        return monomial_rows(np.asarray(u) / su, np.asarray(v) / sv, self.k)

    def predict_arrays(self, u, v, phi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised roll, pitch and yaw for arrays of UV poses."""
        rows = self.design(u, v)
        roll = rows @ np.array(self.a_roll) + self.b_roll
        pitch = rows @ np.array(self.a_pitch) + self.b_pitch
        yaw = normalize_angles(np.asarray(phi, dtype=np.float64) + self.b_yaw)
        return roll, pitch, yaw

    def to_dict(self) -> dict:
        return {
            "monomial_order": monomial_names(self.k),
            "k": self.k,
            "input_scale": list(self.input_scale),
            "a_roll": list(self.a_roll),
            "a_pitch": list(self.a_pitch),
            "b_roll": self.b_roll,
            "b_pitch": self.b_pitch,
            "b_yaw": self.b_yaw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MappingModel":
        k = int(d["k"])
        if "monomial_order" in d and list(d["monomial_order"]) != monomial_names(k):
            raise InvalidArgumentError("mapping file uses an unsupported monomial order")
        return cls(
            k,
            tuple(d["a_roll"]),
            tuple(d["a_pitch"]),
            d["b_roll"],
            d["b_pitch"],
            d["b_yaw"],
            tuple(d.get("input_scale", (DEFAULT_INPUT_SCALE, DEFAULT_INPUT_SCALE))),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MappingModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def circular_mean(deg) -> float:
    """Mean direction of angles in degrees, via the mean sine and cosine."""
    rad = np.radians(np.asarray(deg, dtype=np.float64))
    s, c = np.mean(np.sin(rad)), np.mean(np.cos(rad))
    return normalize_angle(math.degrees(math.atan2(s, c)))


def _unpack(samples: Sequence[UV3DSample]):
    arr = np.array(
        [
            (s.uv.u, s.uv.v, s.uv.phi, s.pose3d.roll, s.pose3d.pitch, s.pose3d.yaw)
            for s in samples
        ],
        dtype=np.float64,
    ).reshape(-1, 6)
    return arr.T


def fit_global(
    samples: Sequence[UV3DSample],
    k: int = 4,
    input_scale=(DEFAULT_INPUT_SCALE, DEFAULT_INPUT_SCALE),
) -> MappingModel:
    """Least-squares fit of both polynomials and the circular yaw offset."""
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"degree must be an integer >= 1, got {k!r}")
    m = n_monomials(k)
    n = len(samples)
    if n < m + 1:
        raise UnderdeterminedError(
            f"degree {k} has {m + 1} unknowns per channel but only {n} samples were given"
        )
    u, v, phi, roll, pitch, yaw = _unpack(samples)
    model = MappingModel.zeros(k, input_scale=input_scale)
    A = np.hstack([model.design(u, v), np.ones((n, 1))])

    # column scaling keeps the solve well conditioned for high-degree terms
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        dead = [monomial_names(k)[i] for i in np.flatnonzero(norms[:-1] == 0)]
        raise UnderdeterminedError(f"rank deficient design: all-zero columns {dead}")
    As = A / norms
    rank = np.linalg.matrix_rank(As)
    if rank < m + 1:
        raise UnderdeterminedError(
            f"rank deficient design: rank {rank} < {m + 1} unknowns "
            f"(touch positions do not determine a degree-{k} polynomial)"
        )
    sol, *_ = np.linalg.lstsq(As, np.stack([roll, pitch], axis=1), rcond=None)
    sol = sol / norms[:, None]
    return replace(
        model,
        a_roll=tuple(sol[:m, 0]),
        a_pitch=tuple(sol[:m, 1]),
        b_roll=float(sol[m, 0]),
        b_pitch=float(sol[m, 1]),
        b_yaw=circular_mean(normalize_angles(yaw - phi)),
    )


def fit_residuals(model: MappingModel, samples: Sequence[UV3DSample]) -> dict:
    """Root-mean-square residual per channel (degrees)."""
    u, v, phi, roll, pitch, yaw = _unpack(samples)
    pr, pp, py = model.predict_arrays(u, v, phi)
    return {
        "roll": float(np.sqrt(np.mean((roll - pr) ** 2))),
        "pitch": float(np.sqrt(np.mean((pitch - pp) ** 2))),
        "yaw": float(np.sqrt(np.mean(normalize_angles(yaw - py) ** 2))),
    }


def adapt_bias(
    model: MappingModel, touches: Sequence[UV3DSample], max_touches: int = 8
) -> MappingModel:
    """Shift the three biases by the mean residual over a few registered touches.

    Polynomial coefficients are left untouched.
    """
    n = len(touches)
    if n == 0:
        raise InvalidArgumentError("bias adaptation needs at least one touch")
    if n > max_touches:
        raise InvalidArgumentError(f"at most {max_touches} touches allowed, got {n}")
    u, v, phi, roll, pitch, yaw = _unpack(touches)
    pr, pp, py = model.predict_arrays(u, v, phi)
    return replace(
        model,
        b_roll=model.b_roll + float(np.mean(roll - pr)),
        b_pitch=model.b_pitch + float(np.mean(pitch - pp)),
        b_yaw=model.b_yaw + circular_mean(normalize_angles(yaw - py)),
    )


def map_to_3d(model: MappingModel, uv: UVPose) -> Pose3D:
    roll, pitch, yaw = model.predict_arrays([uv.u], [uv.v], [uv.phi])
    return Pose3D(roll[0], pitch[0], yaw[0])


SAMPLE_FIELDS = ["u", "v", "phi", "roll", "pitch", "yaw"]


def read_samples_csv(path, split: str | None = None) -> list[UV3DSample]:
    """Read UV/3D pairs from any CSV carrying the columns ``u,v,phi,roll,pitch,yaw``.

    A dataset manifest qualifies; ``split`` then filters on its ``split`` column.
    """
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SAMPLE_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise InvalidArgumentError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            if split is not None and row.get("split") != split:
                continue
            vals = [float(row[f]) for f in SAMPLE_FIELDS]
            out.append(UV3DSample(UVPose(*vals[:3]), Pose3D(*vals[3:])))
    return out


def write_samples_csv(path, samples: Sequence[UV3DSample]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SAMPLE_FIELDS)
        for s in samples:
            vals = (s.uv.u, s.uv.v, s.uv.phi, s.pose3d.roll, s.pose3d.pitch, s.pose3d.yaw)
            writer.writerow([repr(float(x)) for x in vals])
