"""Two-branch convolutional estimator of the 2D finger pose.

Layout: each modality goes through its own conv/ReLU stack and a global
average pool; the pooled vectors are concatenated, passed through one fully
connected ReLU layer, and fed to independent output heads: two soft-binned
position heads (row, column) and an angle head. The angle head is the
soft-binned sine/cosine pair by default; ``"trig"`` (direct sine/cosine
regression) and ``"direct"`` (raw angle regression) exist for ablations.

All parameters live in one flat float64 vector; ``EstimatorModel.layout``
maps layer names to slices of it, in the order the layers are built.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..encoding import (
    BinTable,
    SoftLabel,
    angle_table,
    decode_angles,
    decode_positions,
    encode_angles,
    encode_positions,
    position_table,
    softmax,
)
from ..errors import InvalidArgumentError, NumericFaultError
from ..pose import Pose2D, normalize_angles
from .layers import conv_backward, conv_forward

__all__ = [
    "NetConfig",
    "EstimatorModel",
    "HeadOutput",
    "Batch",
    "init_model",
    "make_batch",
    "batch_from_arrays",
    "random_batch",
    "BatchOutput",
    "decode_batch",
    "forward",
    "forward_batch",
    "predict_pose2d",
    "predict_batch",
    "loss",
    "batch_loss",
    "gradients",
    "grad_check",
    "tiny_config",
]

ANGLE_HEADS = ("softbin", "trig", "direct")
MODALITIES = ("bimodal", "patch", "cap")


@dataclass(frozen=True)
class NetConfig:
    cap_channels: tuple = (8, 16)
    patch_channels: tuple = (8, 16, 32, 64)
    fused_dim: int = 128
    T_pos: int = 64
    T_ang: int = 120
    sigma_pos: float = 3.5
    sigma_ang: float = 2.5
    pos_range: float = 512.0
    # sensor coordinates (c, r) of position-bin coordinate zero
    pos_origin: tuple = (-196.5, -196.5)
    cap_size: int = 7
    patch_size: int = 120
    kernel: int = 3
    cap_stride: int = 1
    patch_stride: int = 2
    activation: str = "relu"
    angle_head: str = "softbin"
    modality: str = "bimodal"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cap_channels", tuple(int(c) for c in self.cap_channels))
        object.__setattr__(self, "patch_channels", tuple(int(c) for c in self.patch_channels))
        object.__setattr__(self, "pos_origin", tuple(float(x) for x in self.pos_origin))
        counts = (*self.cap_channels, *self.patch_channels, self.fused_dim, self.cap_size,
                  self.patch_size, self.kernel, self.cap_stride, self.patch_stride)
        if not self.cap_channels or not self.patch_channels or min(counts) < 1:
            raise InvalidArgumentError("all layer counts and sizes must be >= 1")
        if self.T_pos < 2 or self.T_ang < 2:
            raise InvalidArgumentError("heads need at least 2 bins")
        if self.activation != "relu":
            raise InvalidArgumentError(f"unsupported activation {self.activation!r}")
        if self.angle_head not in ANGLE_HEADS:
            raise InvalidArgumentError(f"angle_head must be one of {ANGLE_HEADS}")
        if self.modality not in MODALITIES:
            raise InvalidArgumentError(f"modality must be one of {MODALITIES}")

    @property
    def pos_table(self) -> BinTable:
        return position_table(self.T_pos, self.sigma_pos, self.pos_range)

    @property
    def ang_table(self) -> BinTable:
        return angle_table(self.T_ang, self.sigma_ang)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("cap_channels", "patch_channels", "pos_origin"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


def tiny_config(**overrides) -> NetConfig:
    """Small network for finite-difference gradient checks (a few hundred parameters)."""
    base = dict(
        cap_channels=(2,),
        patch_channels=(2, 3),
        fused_dim=6,
        T_pos=8,
        T_ang=12,
        sigma_pos=1.0,
        sigma_ang=1.0,
        pos_range=64.0,
        pos_origin=(-24.5, -24.5),
        cap_size=5,
        patch_size=16,
    )
    base.update(overrides)
    return NetConfig(**base)


def _layer_specs(cfg: NetConfig):
    """(name, shape, fan_in, role) for every parameter tensor, in storage order."""
    k2 = cfg.kernel * cfg.kernel
    specs = []
    for branch, chans in (("cap", cfg.cap_channels), ("patch", cfg.patch_channels)):
        cin = 1
        for i, cout in enumerate(chans):
            specs.append((f"{branch}.conv{i}.weight", (k2 * cin, cout), k2 * cin, "hidden"))
            specs.append((f"{branch}.conv{i}.bias", (cout,), None, "bias"))
            cin = cout
    feat = cfg.cap_channels[-1] + cfg.patch_channels[-1]
    specs.append(("fused.weight", (feat, cfg.fused_dim), feat, "hidden"))
    specs.append(("fused.bias", (cfg.fused_dim,), None, "bias"))
    for name, width in _head_widths(cfg):
        specs.append((f"head.{name}.weight", (cfg.fused_dim, width), cfg.fused_dim, "out"))
        specs.append((f"head.{name}.bias", (width,), None, "bias"))
    return specs


def _head_widths(cfg: NetConfig):
    heads = [("row", cfg.T_pos), ("col", cfg.T_pos)]
    if cfg.angle_head == "softbin":
        heads += [("sin", cfg.T_ang), ("cos", cfg.T_ang)]
    elif cfg.angle_head == "trig":
        heads += [("trig", 2)]
    else:
        heads += [("direct", 1)]
    return heads


@dataclass(eq=False)
class EstimatorModel:
    config: NetConfig
    params: np.ndarray
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layout:
            offset = 0
            for name, shape, _, _ in _layer_specs(self.config):
                size = int(np.prod(shape))
                self.layout[name] = (offset, shape)
                offset += size
        expected = sum(int(np.prod(s)) for _, s in self.layout.values())
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (expected,):
            raise InvalidArgumentError(
                f"parameter vector has {self.params.size} entries, config needs {expected}"
            )

    def __getitem__(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return self.params[offset : offset + int(np.prod(shape))].reshape(shape)

    @property
    def n_params(self) -> int:
        return self.params.size

    def copy(self) -> "EstimatorModel":
        return EstimatorModel(self.config, self.params.copy(), dict(self.layout))


def init_model(config: NetConfig = NetConfig()) -> EstimatorModel:
    """Fan-in scaled uniform weights and zero biases, drawn from ``init_seed``."""
    rng = np.random.default_rng(config.init_seed)
    chunks = []
    for _, shape, fan_in, role in _layer_specs(config):
        if role == "bias":
            chunks.append(np.zeros(shape).ravel())
        else:
            gain = 6.0 if role == "hidden" else 1.0
            bound = math.sqrt(gain / fan_in)
            chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
    return EstimatorModel(config, np.concatenate(chunks))


@dataclass(eq=False)
class Batch:
    """Input images plus raw and encoded 2D-pose labels."""

    cap: np.ndarray
    patch: np.ndarray
    c: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    t_row: np.ndarray
    t_col: np.ndarray
    t_ang: np.ndarray

    def __len__(self) -> int:
        return self.cap.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in Batch.__dataclass_fields__))


def make_batch(samples: Sequence, config: NetConfig) -> Batch:
    """Stack samples (anything with ``cap``, ``patch`` and ``pose2d``) into a batch."""
    if len(samples) == 0:
        raise InvalidArgumentError("cannot build an empty batch")
    cap = np.stack([s.cap.pixels for s in samples])
    patch = np.stack([s.patch.pixels for s in samples])
    c = np.array([s.pose2d.c for s in samples])
    r = np.array([s.pose2d.r for s in samples])
    theta = np.array([s.pose2d.theta for s in samples])
    return batch_from_arrays(cap, patch, c, r, theta, config)


def batch_from_arrays(cap, patch, c, r, theta, config: NetConfig) -> Batch:
    _check_inputs(cap, patch, config)
    ox, oy = config.pos_origin
    table = config.pos_table
    return Batch(
        cap=np.asarray(cap, dtype=np.float64),
        patch=np.asarray(patch, dtype=np.float64),
        c=np.asarray(c, dtype=np.float64),
        r=np.asarray(r, dtype=np.float64),
        theta=np.asarray(theta, dtype=np.float64),
        t_row=encode_positions(np.asarray(r) - oy, table),
        t_col=encode_positions(np.asarray(c) - ox, table),
        t_ang=encode_angles(theta, config.ang_table),
    )


def random_batch(config: NetConfig, n: int = 4, seed: int = 0) -> Batch:
    """Seeded random inputs and in-range labels, for gradient checks and smoke tests."""
    rng = np.random.default_rng(seed)
    lo = np.array(config.pos_origin) + 0.1 * config.pos_range
    hi = np.array(config.pos_origin) + 0.9 * config.pos_range
    return batch_from_arrays(
        rng.random((n, config.cap_size, config.cap_size)),
        rng.random((n, config.patch_size, config.patch_size)),
        rng.uniform(lo[0], hi[0], n),
        rng.uniform(lo[1], hi[1], n),
        rng.uniform(-180.0, 180.0, n),
        config,
    )


def _check_inputs(cap, patch, cfg: NetConfig):
    cap = np.asarray(cap)
    patch = np.asarray(patch)
    if cap.ndim != 3 or cap.shape[1:] != (cfg.cap_size, cfg.cap_size):
        raise InvalidArgumentError(
            f"capacitive input must be (N, {cfg.cap_size}, {cfg.cap_size}), got {cap.shape}"
        )
    if patch.ndim != 3 or patch.shape[1:] != (cfg.patch_size, cfg.patch_size):
        raise InvalidArgumentError(
            f"patch input must be (N, {cfg.patch_size}, {cfg.patch_size}), got {patch.shape}"
        )
    if cap.shape[0] != patch.shape[0]:
        raise InvalidArgumentError("capacitive and patch batches differ in length")


def _finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericFaultError(f"non-finite activations in layer {name}", layer=name)
    return arr


def _prepare(images, keep: bool):
    x = np.asarray(images, dtype=np.float64)
    x = (x - 0.5) if keep else np.full_like(x, -0.5)
    return x[..., None]


def _branch_forward(model, branch, chans, stride, x, caches):
    cfg = model.config
    pad = cfg.kernel // 2
    for i in range(len(chans)):
        name = f"{branch}.conv{i}"
        z, cache = conv_forward(x, model[name + ".weight"], model[name + ".bias"],
                                cfg.kernel, stride, pad)
        _finite(name, z)
        x = np.maximum(z, 0.0)
        caches.append((name, cache, z > 0))
    return x


def _forward_logits(model: EstimatorModel, cap, patch):
    cfg = model.config
    _check_inputs(cap, patch, cfg)
    caches = {"cap": [], "patch": []}
    xc = _prepare(cap, cfg.modality != "patch")
    xp = _prepare(patch, cfg.modality != "cap")
    hc = _branch_forward(model, "cap", cfg.cap_channels, cfg.cap_stride, xc, caches["cap"])
    hp = _branch_forward(model, "patch", cfg.patch_channels, cfg.patch_stride, xp, caches["patch"])
    gc = hc.mean(axis=(1, 2))
    gp = hp.mean(axis=(1, 2))
    feat = np.concatenate([gc, gp], axis=1)
    zf = _finite("fused", feat @ model["fused.weight"] + model["fused.bias"])
    hf = np.maximum(zf, 0.0)
    logits = {}
    for name, _ in _head_widths(cfg):
        logits[name] = _finite(f"head.{name}",
                               hf @ model[f"head.{name}.weight"] + model[f"head.{name}.bias"])
    cache = dict(caches=caches, hc_shape=hc.shape, hp_shape=hp.shape, feat=feat, hf=hf, zf=zf)
    return logits, cache


@dataclass(frozen=True, eq=False)
class HeadOutput:
    """Per-sample head outputs.

    ``p_row``/``p_col`` are position distributions. For the soft-binned angle
    head ``p_sin``/``p_cos`` are set; the ablation heads fill ``angle_raw``
    instead (sine/cosine pair or a single normalised angle).
    """

    p_row: SoftLabel
    p_col: SoftLabel
    p_sin: SoftLabel | None = None
    p_cos: SoftLabel | None = None
    angle_raw: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class BatchOutput:
    p_row: np.ndarray
    p_col: np.ndarray
    p_sin: np.ndarray | None = None
    p_cos: np.ndarray | None = None
    angle_raw: np.ndarray | None = None

    def __getitem__(self, i: int) -> HeadOutput:
        return HeadOutput(
            SoftLabel(self.p_row[i], "position"),
            SoftLabel(self.p_col[i], "position"),
            None if self.p_sin is None else SoftLabel(self.p_sin[i], "angle-sin"),
            None if self.p_cos is None else SoftLabel(self.p_cos[i], "angle-cos"),
            None if self.angle_raw is None else self.angle_raw[i],
        )


def forward_batch(model: EstimatorModel, cap, patch) -> BatchOutput:
    logits, _ = _forward_logits(model, cap, patch)
    angle = model.config.angle_head
    return BatchOutput(
        p_row=softmax(logits["row"]),
        p_col=softmax(logits["col"]),
        p_sin=softmax(logits["sin"]) if angle == "softbin" else None,
        p_cos=softmax(logits["cos"]) if angle == "softbin" else None,
        angle_raw=logits.get("trig", logits.get("direct")),
    )


def forward(model: EstimatorModel, cap, patch) -> HeadOutput:
    """Head distributions for one capacitive image and one fingerprint patch."""
    cap = getattr(cap, "pixels", cap)
    patch = getattr(patch, "pixels", patch)
    return forward_batch(model, np.asarray(cap)[None], np.asarray(patch)[None])[0]


def _decode_angle_batch(cfg: NetConfig, out: BatchOutput, strict: bool = True) -> np.ndarray:
    if cfg.angle_head == "softbin":
        return decode_angles(out.p_sin, out.p_cos, cfg.ang_table, strict)
    if cfg.angle_head == "trig":
        s, c = out.angle_raw[:, 0], out.angle_raw[:, 1]
        return normalize_angles(np.degrees(np.arctan2(s, c)))
    return normalize_angles(180.0 * out.angle_raw[:, 0])


def decode_batch(cfg: NetConfig, out: BatchOutput, strict: bool = True):
    """Sensor-frame ``(c, r, theta)`` arrays from head outputs.

    With ``strict`` false, samples whose angle heads carry no direction get
    ``theta = NaN`` instead of raising.
    """
    table = cfg.pos_table
    c = decode_positions(out.p_col, table) + cfg.pos_origin[0]
    r = decode_positions(out.p_row, table) + cfg.pos_origin[1]
    return c, r, _decode_angle_batch(cfg, out, strict)


def predict_batch(model: EstimatorModel, cap, patch, chunk: int = 256, strict: bool = True):
    cs, rs, ts = [], [], []
    for i in range(0, len(cap), chunk):
        out = forward_batch(model, cap[i : i + chunk], patch[i : i + chunk])
        c, r, t = decode_batch(model.config, out, strict)
        cs.append(c)
        rs.append(r)
        ts.append(t)
    return np.concatenate(cs), np.concatenate(rs), np.concatenate(ts)


def predict_pose2d(model: EstimatorModel, cap, patch) -> Pose2D:
    cap = getattr(cap, "pixels", cap)
    patch = getattr(patch, "pixels", patch)
    out = forward_batch(model, np.asarray(cap)[None], np.asarray(patch)[None])
    c, r, t = decode_batch(model.config, out)
    return Pose2D(c[0], r[0], t[0])


def _xent(pred, target):
    return float(-np.sum(target * np.log(np.maximum(pred, 1e-12))) / pred.shape[0])


def loss(output, batch: Batch) -> float:
    """Position plus angle loss of precomputed head outputs against batch labels.

    Soft-binned heads use cross entropy on the probabilities; the ablation
    heads use mean absolute error on their raw outputs.
    """
    if isinstance(output, HeadOutput):
        output = BatchOutput(
            output.p_row.probs[None],
            output.p_col.probs[None],
            None if output.p_sin is None else output.p_sin.probs[None],
            None if output.p_cos is None else output.p_cos.probs[None],
            None if output.angle_raw is None else np.asarray(output.angle_raw)[None],
        )
    if output.p_row.shape != batch.t_row.shape or output.p_col.shape != batch.t_col.shape:
        raise InvalidArgumentError("position head shape does not match the labels")
    total = _xent(output.p_row, batch.t_row) + _xent(output.p_col, batch.t_col)
    if output.p_sin is not None:
        if output.p_sin.shape != batch.t_ang.shape or output.p_cos.shape != batch.t_ang.shape:
            raise InvalidArgumentError("angle head shape does not match the labels")
        total += _xent(output.p_sin, batch.t_ang) + _xent(output.p_cos, batch.t_ang)
    else:
        total += _regression_terms(output.angle_raw, batch.theta)[0]
    return total


def _regression_terms(raw, theta):
    """Mean absolute error of ablation heads and its gradient w.r.t. ``raw``."""
    n = raw.shape[0]
    rad = np.radians(theta)
    if raw.shape[1] == 2:
        diff = raw - np.stack([np.sin(rad), np.cos(rad)], axis=1)
    else:
        diff = raw - (theta / 180.0)[:, None]
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def _head_loss_grads(cfg: NetConfig, logits, batch: Batch):
    total = 0.0
    grads = {}
    targets = {"row": batch.t_row, "col": batch.t_col, "sin": batch.t_ang, "cos": batch.t_ang}
    n = len(batch)
    for name, _ in _head_widths(cfg):
        z = logits[name]
        if name in targets:
            t = targets[name]
            zs = z - z.max(axis=1, keepdims=True)
            log_p = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
            total += float(-np.sum(t * log_p) / n)
            grads[name] = (np.exp(log_p) - t) / n
        else:
            value, grads[name] = _regression_terms(z, batch.theta)
            total += value
    return total, grads


def batch_loss(model: EstimatorModel, batch: Batch) -> float:
    """Mean training loss of ``model`` on ``batch``."""
    logits, _ = _forward_logits(model, batch.cap, batch.patch)
    return _head_loss_grads(model.config, logits, batch)[0]


def gradients(model: EstimatorModel, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean batch loss and its gradient with respect to the flat parameter vector."""
    if len(batch) == 0:
        raise InvalidArgumentError("gradients need a non-empty batch")
    cfg = model.config
    logits, cache = _forward_logits(model, batch.cap, batch.patch)
    total, dlogits = _head_loss_grads(cfg, logits, batch)

    grad = np.zeros_like(model.params)

    def put(name, value):
        offset, shape = model.layout[name]
        grad[offset : offset + value.size] = value.ravel()

    hf = cache["hf"]
    dhf = np.zeros_like(hf)
    for name, _ in _head_widths(cfg):
        d = dlogits[name]
        put(f"head.{name}.weight", hf.T @ d)
        put(f"head.{name}.bias", d.sum(axis=0))
        dhf += d @ model[f"head.{name}.weight"].T
    dzf = dhf * (cache["zf"] > 0)
    put("fused.weight", cache["feat"].T @ dzf)
    put("fused.bias", dzf.sum(axis=0))
    dfeat = dzf @ model["fused.weight"].T

    n_cap = cfg.cap_channels[-1]
    pad = cfg.kernel // 2
    for branch, dg, shape, stride in (
        ("cap", dfeat[:, :n_cap], cache["hc_shape"], cfg.cap_stride),
        ("patch", dfeat[:, n_cap:], cache["hp_shape"], cfg.patch_stride),
    ):
        _, h, w, _ = shape
        dx = np.broadcast_to(dg[:, None, None, :] / (h * w), shape)
        layers = cache["caches"][branch]
        for depth in range(len(layers) - 1, -1, -1):
            name, conv_cache, mask = layers[depth]
            dz = dx * mask
            dx, dw, db = conv_backward(dz, model[name + ".weight"], conv_cache,
                                       cfg.kernel, stride, pad, need_input_grad=depth > 0)
            put(name + ".weight", dw)
            put(name + ".bias", db)
    if not np.all(np.isfinite(grad)):
        bad = next(k for k, (o, s) in model.layout.items()
                   if not np.all(np.isfinite(grad[o : o + int(np.prod(s))])))
        raise NumericFaultError(f"non-finite gradient in layer {bad}", layer=bad)
    return total, grad


def grad_check(model: EstimatorModel, batch: Batch, eps: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Only parameters whose gradient magnitude exceeds 1e-8 (by either method)
    are compared.
    """
    _, analytic = gradients(model, batch)
    probe = model.copy()
    numeric = np.empty_like(analytic)
    for i in range(probe.params.size):
        keep = probe.params[i]
        probe.params[i] = keep + eps
        up = batch_loss(probe, batch)
        probe.params[i] = keep - eps
        down = batch_loss(probe, batch)
        probe.params[i] = keep
        numeric[i] = (up - down) / (2.0 * eps)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = scale > 1e-8
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(analytic - numeric)[mask] / scale[mask]))
