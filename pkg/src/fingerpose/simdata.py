"""Sensor-image preprocessing and seeded synthetic finger data.

The generator runs the labelling chain backwards: it draws a UV pose on a
synthetic rolled print, evaluates a known UV-to-3D mapping, and derives the 2D
pose from the touch centre, so every label is exact by construction.

Frames: the sensor frame is the pixel grid of the 500 ppi fingerprint patch,
with the touch centre at the patch centre ``((size-1)/2, (size-1)/2)``. The
rolled print's UV origin is the centre of the master image and its fingertip
points toward negative ``v`` (image up).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, RejectionError
from .mapping import MappingModel, map_to_3d
from .pose import Pose2D, Pose3D, TouchCenter, UVPose, from_uv_pose, rotation_matrix

__all__ = [
    "GrayImage",
    "Sample",
    "SynthConfig",
    "Dataset",
    "Master",
    "DEFAULT_GT_MAPPING",
    "downsample_to_capacitive",
    "crop_patch",
    "synth_rolled_fingerprint",
    "synth_sample",
    "synth_dataset",
    "draw_uv_poses",
    "write_pgm",
    "read_pgm",
    "write_dataset",
    "read_dataset",
    "MANIFEST_FIELDS",
]

# Ground-truth mapping used by the generator. Monomial order: v, u, v^2, uv,
# u^2, v^3, uv^2, u^2v, u^3, v^4, uv^3, u^2v^2, u^3v, u^4 (inputs / 256 px).
DEFAULT_GT_MAPPING = MappingModel(
    k=4,
    a_roll=(4.0, 110.0, 3.0, -6.0, 5.0, -2.0, 8.0, -4.0, -30.0, 1.5, -3.0, 2.0, 5.0, -6.0),
    a_pitch=(-70.0, 3.0, 12.0, 2.0, -15.0, 6.0, -2.0, 4.0, 1.0, -4.0, 1.5, -3.0, 1.0, 2.0),
    b_roll=0.0,
    b_pitch=40.0,
    b_yaw=0.0,
)

MANIFEST_FIELDS = [
    "sample_id", "finger_id", "split", "cap_path", "patch_path",
    "c", "r", "theta", "u", "v", "phi", "roll", "pitch", "yaw",
]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major intensity image in [0, 1] with its resolution in ppi."""

    pixels: np.ndarray
    ppi: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise InvalidArgumentError(f"image must be 2-D, got shape {px.shape}")
        if not self.ppi > 0:
            raise InvalidArgumentError(f"ppi must be positive, got {self.ppi!r}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _box_weights(n_in: int, n_out: int, window: float) -> np.ndarray:
    """Area weights of ``n_out`` centred windows over ``n_in`` unit pixels.

    Equivalent to differencing the linearly interpolated cumulative sum at
    the (possibly fractional) window edges. Windows are clipped to the image
    and renormalised, so constants are preserved.
    """
    offset = (n_in - n_out * window) / 2.0
    edges = offset + np.arange(n_out + 1) * window
    lo = np.clip(edges[:-1], 0, n_in)
    hi = np.clip(edges[1:], 0, n_in)
    j = np.arange(n_in)
    overlap = np.minimum(hi[:, None], j[None, :] + 1) - np.maximum(lo[:, None], j[None, :])
    w = np.clip(overlap, 0, None)
    return w / w.sum(axis=1, keepdims=True)


def downsample_to_capacitive(img: GrayImage, dst_ppi: float = 10.0) -> GrayImage:
    """Box-filter and resample an image to ``dst_ppi``.

    Output sides are ``round(side * dst_ppi / img.ppi)``; each output pixel
    is the mean of its ``img.ppi / dst_ppi`` square source window.
    """
    if img.width == 0 or img.height == 0:
        raise InvalidArgumentError("cannot downsample an empty image")
    window = img.ppi / dst_ppi
    out_h = max(1, int(math.floor(img.height / window + 0.5)))
    out_w = max(1, int(math.floor(img.width / window + 0.5)))
    wy = _box_weights(img.height, out_h, window)
    wx = _box_weights(img.width, out_w, window)
    return GrayImage(wy @ img.pixels @ wx.T, dst_ppi)


def _crop_origin(center: float, size: int) -> int:
    return int(math.floor(center - (size - 1) / 2.0 + 0.5))


def crop_patch(img: GrayImage, center: TouchCenter, size: int = 120) -> GrayImage:
    """``size`` x ``size`` window centred on ``center``, zero-padded outside the image.

    The window starts at ``round_half_up(center - (size - 1) / 2)`` on each axis.
    """
    if int(size) != size or size <= 0:
        raise InvalidArgumentError(f"patch size must be a positive integer, got {size!r}")
    size = int(size)
    x0 = _crop_origin(center.x, size)
    y0 = _crop_origin(center.y, size)
    out = np.zeros((size, size))
    sy0, sy1 = max(y0, 0), min(y0 + size, img.height)
    sx0, sx1 = max(x0, 0), min(x0 + size, img.width)
    if sy1 > sy0 and sx1 > sx0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = img.pixels[sy0:sy1, sx0:sx1]
    return GrayImage(out, img.ppi)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_fingers: int = 10
    samples_per_finger: int = 200
    yaw_range: float = 180.0
    ridge_period: float = 9.0
    noise_std: float = 0.05
    gt_mapping: MappingModel = DEFAULT_GT_MAPPING
    contact_radii: tuple = (55.0, 80.0)
    test_fraction: float = 0.2
    uv_extent: tuple = (80.0, 100.0)
    master_size: int = 512
    patch_size: int = 120
    cap_size: int = 7
    src_ppi: float = 500.0
    dst_ppi: float = 10.0

    def __post_init__(self):
        if self.yaw_range not in (45, 90, 135, 180):
            raise InvalidArgumentError(f"yaw_range must be 45, 90, 135 or 180, got {self.yaw_range}")
        for name in ("n_fingers", "samples_per_finger", "master_size", "patch_size", "cap_size"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer")
        for name in ("ridge_period", "src_ppi", "dst_ppi"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.noise_std < 0:
            raise InvalidArgumentError("noise_std must be >= 0")
        if not 0 <= self.test_fraction < 1:
            raise InvalidArgumentError("test_fraction must lie in [0, 1)")
        lo, hi = self.contact_radii
        if not 0 < lo <= hi:
            raise InvalidArgumentError("contact_radii must satisfy 0 < low <= high")
        if min(self.uv_extent) <= 0:
            raise InvalidArgumentError("uv_extent must be positive")
        object.__setattr__(self, "contact_radii", (float(lo), float(hi)))
        object.__setattr__(self, "uv_extent", tuple(float(x) for x in self.uv_extent))

    @property
    def touch(self) -> TouchCenter:
        c = (self.patch_size - 1) / 2.0
        return TouchCenter(c, c)

    @property
    def n_test_fingers(self) -> int:
        if self.n_fingers == 1:
            return 0
        return min(self.n_fingers - 1, max(1, int(round(self.n_fingers * self.test_fraction))))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gt_mapping"] = self.gt_mapping.to_dict()
        d["contact_radii"] = list(self.contact_radii)
        d["uv_extent"] = list(self.uv_extent)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "gt_mapping" in d and isinstance(d["gt_mapping"], dict):
            d["gt_mapping"] = MappingModel.from_dict(d["gt_mapping"])
        for key in ("contact_radii", "uv_extent"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Master:
    """Synthetic rolled print with the per-finger traits the renderer needs."""

    image: GrayImage
    center: tuple
    axes: tuple
    contact_radius: float
    finger_id: int = 0

    def in_foreground(self, u: float, v: float, margin: float = 0.9) -> bool:
        ax, ay = self.axes
        return (u / ax) ** 2 + (v / ay) ** 2 <= margin**2


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def synth_rolled_fingerprint(seed: int, config: SynthConfig = SynthConfig()) -> Master:
    """Deterministic ridge-like texture standing in for a rolled fingerprint.

    Ridges follow ``cos(2 pi d(x, y) / period)`` where ``d`` is the vertical
    coordinate bent by an arch term, a mild vertical frequency drift, and a
    random cubic warp, all drawn from ``seed``. A soft elliptical mask
    separates the finger from the zero background.
    """
    rng = _rng(seed, 0)
    n = config.master_size
    center = ((n - 1) / 2.0, (n - 1) / 2.0)
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    X = xs - center[0]
    Y = ys - center[1]
    xn = X / (n / 2.0)
    yn = Y / (n / 2.0)

    arch = rng.uniform(0.15, 0.45)
    drift = rng.uniform(0.08, 0.16)
    period = config.ridge_period * rng.uniform(0.92, 1.08)
    phase = rng.uniform(0.0, 2 * math.pi)
    warp = np.zeros_like(X)
    for i in range(4):
        for j in range(4 - i):
            if 1 <= i + j <= 3:
                warp += rng.normal(0.0, 4.0) * xn**i * yn**j
    d = Y + arch * X * xn - drift * Y * yn + warp
    ridges = 0.5 + 0.5 * np.cos(2 * math.pi * d / period + phase)

    ax = rng.uniform(0.34, 0.40) * n
    ay = rng.uniform(0.42, 0.47) * n
    rho = np.sqrt((X / ax) ** 2 + (Y / ay) ** 2)
    mask = np.clip((1.0 - rho) / 0.06, 0.0, 1.0)
    lo, hi = config.contact_radii
    radius = rng.uniform(lo, hi)
    return Master(GrayImage(mask * ridges, config.src_ppi), center, (ax, ay), radius)


@dataclass(frozen=True, eq=False)
class Sample:
    cap: GrayImage
    patch: GrayImage
    pose2d: Pose2D
    uv: UVPose
    pose3d: Pose3D
    finger_id: int
    sample_id: str = ""


def _render_patch(master: Master, pose2d: Pose2D, size: int) -> np.ndarray:
    """Sample the master where each sensor pixel lands in the UV frame.

    This is the ``size`` crop around the touch point of the master turned so
    that the fingerprint direction matches ``pose2d``.
    """
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    rot = rotation_matrix(pose2d.theta)
    dx = xs - pose2d.c
    dy = ys - pose2d.r
    mu = rot[0, 0] * dx + rot[0, 1] * dy + master.center[0]
    mv = rot[1, 0] * dx + rot[1, 1] * dy + master.center[1]
    return ndimage.map_coordinates(
        master.image.pixels, [mv, mu], order=1, mode="constant", cval=0.0
    )


def _render_contact(master: Master, pose2d: Pose2D, pose3d: Pose3D, config: SynthConfig) -> GrayImage:
    """500 ppi contact-intensity image around the touch point.

    The contact ellipse is aligned with the finger axis (the yaw direction),
    elongates with |pitch|, sits behind the touch point toward the palm and
    slides sideways with roll. Intensity is higher toward the fingertip.
    """
    window = config.src_ppi / config.dst_ppi
    n = int(round(config.cap_size * window))
    half = (n - 1) / 2.0
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    X = xs - half
    Y = ys - half

    # fingertip direction in the sensor frame for the yaw implied by pose3d
    t = math.radians(-(pose3d.yaw - config.gt_mapping.b_yaw))
    tip = np.array([math.sin(t), -math.cos(t)])
    side = np.array([-tip[1], tip[0]])

    b = master.contact_radius
    a = b * (1.0 + 0.9 * min(abs(pose3d.pitch), 90.0) / 90.0)
    back = 0.45 * a + 0.25 * b * (1.0 - min(abs(pose3d.pitch), 90.0) / 90.0)
    center = -back * tip - 0.6 * pose3d.roll * side
    px = X - center[0]
    py = Y - center[1]
    along = px * tip[0] + py * tip[1]
    across = px * side[0] + py * side[1]
    rho2 = (along / a) ** 2 + (across / b) ** 2
    body = np.sqrt(np.clip(1.0 - rho2, 0.0, None))
    ramp = np.clip(0.6 + 0.4 * along / a, 0.2, 1.0)
    return GrayImage(body * ramp, config.src_ppi)


def synth_sample(
    seed: int,
    master: Master,
    uv: UVPose,
    gt_map: MappingModel | None = None,
    config: SynthConfig = SynthConfig(),
    sample_id: str = "",
) -> Sample:
    """Render one labelled sample of ``master`` touched at ``uv``."""
    gt_map = config.gt_mapping if gt_map is None else gt_map
    if not master.in_foreground(uv.u, uv.v):
        raise RejectionError(f"touch ({uv.u:.1f}, {uv.v:.1f}) lies outside the finger")
    if gt_map is not config.gt_mapping:
        config = replace(config, gt_mapping=gt_map)
    rng = _rng(seed, 2)
    touch = config.touch
    pose3d = map_to_3d(gt_map, uv)
    pose2d = from_uv_pose(uv, touch)

    patch = _render_patch(master, pose2d, config.patch_size)
    contact = _render_contact(master, pose2d, pose3d, config)
    cap = downsample_to_capacitive(contact, config.dst_ppi).pixels
    if config.noise_std > 0:
        patch = patch + rng.normal(0.0, config.noise_std, patch.shape)
        cap = cap + rng.normal(0.0, config.noise_std, cap.shape)
    return Sample(
        cap=GrayImage(np.clip(cap, 0.0, 1.0), config.dst_ppi),
        patch=GrayImage(np.clip(patch, 0.0, 1.0), config.src_ppi),
        pose2d=pose2d,
        uv=uv,
        pose3d=pose3d,
        finger_id=master.finger_id,
        sample_id=sample_id,
    )


def draw_uv_poses(rng: np.random.Generator, master: Master, n: int, config: SynthConfig) -> list[UVPose]:
    """UV poses with yaw uniform in ``+-yaw_range`` and touch inside the foreground."""
    eu, ev = config.uv_extent
    out = []
    while len(out) < n:
        u = rng.uniform(-eu, eu)
        v = rng.uniform(-ev, ev)
        yaw = rng.uniform(-config.yaw_range, config.yaw_range)
        if master.in_foreground(u, v):
            out.append(UVPose(u, v, yaw - config.gt_mapping.b_yaw))
    return out


@dataclass(eq=False)
class Dataset:
    samples: list
    config: SynthConfig
    test_fingers: tuple = field(default_factory=tuple)

    def split(self, name: str) -> list:
        if name == "train":
            return [s for s in self.samples if s.finger_id not in self.test_fingers]
        if name == "test":
            return [s for s in self.samples if s.finger_id in self.test_fingers]
        if name == "all":
            return list(self.samples)
        raise InvalidArgumentError(f"unknown split {name!r}")

    @property
    def train(self) -> list:
        return self.split("train")

    @property
    def test(self) -> list:
        return self.split("test")

    def split_of(self, sample: Sample) -> str:
        return "test" if sample.finger_id in self.test_fingers else "train"


def synth_dataset(config: SynthConfig = SynthConfig()) -> Dataset:
    """Seeded collection of ``n_fingers * samples_per_finger`` samples.

    Each finger and each sample has its own derived seed, so results do not
    depend on generation order. Train and test are split by finger.
    """
    order = _rng(config.seed, 3).permutation(config.n_fingers)
    test_fingers = tuple(sorted(int(f) for f in order[: config.n_test_fingers]))
    samples = []
    for f in range(config.n_fingers):
        master = synth_rolled_fingerprint(_finger_seed(config.seed, f), config)
        master = replace(master, finger_id=f)
        poses = draw_uv_poses(_rng(config.seed, 4, f), master, config.samples_per_finger, config)
        for j, uv in enumerate(poses):
            sid = f"{f:03d}_{j:04d}"
            seed = int(np.random.SeedSequence([config.seed, 5, f, j]).generate_state(1)[0])
            samples.append(synth_sample(seed, master, uv, config.gt_mapping, config, sid))
    return Dataset(samples, config, test_fingers)


def _finger_seed(seed: int, finger: int) -> int:
    return int(np.random.SeedSequence([seed, 6, finger]).generate_state(1)[0])


def write_pgm(path, img: GrayImage) -> None:
    """Binary 8-bit PGM with the resolution in a ``# ppi:<n>`` comment."""
    data = np.clip(np.floor(img.pixels * 255.0 + 0.5), 0, 255).astype(np.uint8)
    ppi = int(img.ppi) if float(img.ppi).is_integer() else img.ppi
    header = f"P5\n# ppi:{ppi}\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> GrayImage:
    raw = Path(path).read_bytes()
    tokens = []
    ppi = None
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            end = raw.index(b"\n", pos)
            comment = raw[pos + 1 : end].decode("ascii").strip()
            if comment.startswith("ppi:"):
                ppi = float(comment[4:])
            pos = end + 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise InvalidArgumentError(f"{path}: not a binary PGM")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise InvalidArgumentError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    data = np.frombuffer(raw[pos : pos + width * height], dtype=np.uint8)
    if data.size != width * height:
        raise InvalidArgumentError(f"{path}: truncated pixel data")
    if ppi is None:
        raise InvalidArgumentError(f"{path}: missing '# ppi:' comment")
    return GrayImage(data.reshape(height, width) / 255.0, ppi)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write PGM images, ``manifest.csv`` and ``dataset.json``; return the manifest path."""
    out = Path(out_dir)
    (out / "cap").mkdir(parents=True, exist_ok=True)
    (out / "patch").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for s in dataset.samples:
            cap_path = f"cap/{s.sample_id}.pgm"
            patch_path = f"patch/{s.sample_id}.pgm"
            write_pgm(out / cap_path, s.cap)
            write_pgm(out / patch_path, s.patch)
            vals = (
                s.pose2d.c, s.pose2d.r, s.pose2d.theta,
                s.uv.u, s.uv.v, s.uv.phi,
                s.pose3d.roll, s.pose3d.pitch, s.pose3d.yaw,
            )
            writer.writerow(
                [s.sample_id, s.finger_id, dataset.split_of(s), cap_path, patch_path]
                + [repr(float(x)) for x in vals]
            )
    meta = {
        "synth_config": dataset.config.to_dict(),
        "test_fingers": list(dataset.test_fingers),
        "touch_center": [dataset.config.touch.x, dataset.config.touch.y],
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return manifest


def read_dataset(manifest_path) -> Dataset:
    """Load a dataset written by :func:`write_dataset` (images are 8-bit quantised)."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    meta = json.loads((root / "dataset.json").read_text())
    config = SynthConfig.from_dict(meta["synth_config"])
    samples = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise InvalidArgumentError(f"{manifest_path}: unexpected manifest header")
        for row in reader:
            f = {k: float(row[k]) for k in MANIFEST_FIELDS[5:]}
            samples.append(
                Sample(
                    cap=read_pgm(root / row["cap_path"]),
                    patch=read_pgm(root / row["patch_path"]),
                    pose2d=Pose2D(f["c"], f["r"], f["theta"]),
                    uv=UVPose(f["u"], f["v"], f["phi"]),
                    pose3d=Pose3D(f["roll"], f["pitch"], f["yaw"]),
                    finger_id=int(row["finger_id"]),
                    sample_id=row["sample_id"],
                )
            )
    return Dataset(samples, config, tuple(meta["test_fingers"]))
