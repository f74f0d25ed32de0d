"""Encoder / temporal-fusion / decoder networks for sequential lane segmentation.

Three variants share one UNet-style backbone:

* ``UNet_ConvLSTM``        encoder -> ConvLSTM -> decoder
* ``SCNN_UNet_ConvLSTM``   encoder -> SCNN message passing -> ConvLSTM -> decoder
* ``SCNN_UNet_Attention``  encoder -> SCNN message passing -> attention -> decoder

Parameters live in an ordered ``name -> Tensor`` map.  The output layer is
``head.weight`` / ``head.bias``; everything else transfers between the
reconstruction (3-channel) and segmentation (2-channel) heads.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

VARIANTS = ("UNet_ConvLSTM", "SCNN_UNet_ConvLSTM", "SCNN_UNet_Attention")
HEAD_PARAMS = ("head.weight", "head.bias")
SCNN_DIRECTIONS = ("down", "up", "right", "left")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "SCNN_UNet_ConvLSTM"
    input_height: int = 64
    input_width: int = 128
    sequence_length: int = 5
    base_channels: int = 8
    head_channels: int = 2
    scnn_kernel_len: int = 5
    convlstm_layers: int = 2
    convlstm_hidden: int = 64
    convlstm_kernel: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.input_height % 16 or self.input_width % 16:
            raise SpecError(
                f"input {self.input_height}x{self.input_width} must be divisible by 16"
            )
        if self.head_channels not in (2, 3):
            raise SpecError(f"head_channels must be 2 or 3, got {self.head_channels}")
        if self.sequence_length < 1 or self.base_channels < 1 or self.convlstm_layers < 1:
            raise SpecError("sequence_length, base_channels and convlstm_layers must be >= 1")
        if self.convlstm_hidden != self.bottleneck_channels:
            raise SpecError(
                f"convlstm_hidden ({self.convlstm_hidden}) must equal the bottleneck "
                f"channel count ({self.bottleneck_channels})"
            )
        if self.convlstm_kernel % 2 == 0:
            raise SpecError("convlstm_kernel must be odd")
        if self.has_scnn:
            if self.scnn_kernel_len % 2 == 0:
                raise SpecError("scnn_kernel_len must be odd")
            shortest = min(self.bottleneck_size)
            if self.scnn_kernel_len > 2 * shortest - 1:
                raise SpecError(
                    f"scnn kernel length {self.scnn_kernel_len} exceeds what a slice of "
                    f"extent {shortest} can use ({2 * shortest - 1})"
                )

    @property
    def has_scnn(self) -> bool:
        return self.variant.startswith("SCNN_")

    @property
    def uses_attention(self) -> bool:
        return self.variant.endswith("Attention")

    @property
    def bottleneck_channels(self) -> int:
        return 8 * self.base_channels

    @property
    def bottleneck_size(self) -> tuple[int, int]:
        return self.input_height // 16, self.input_width // 16

    def with_head(self, head_channels: int) -> "ModelSpec":
        return dataclasses.replace(self, head_channels=head_channels)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def full_spec(variant: str = "SCNN_UNet_ConvLSTM", head_channels: int = 2) -> ModelSpec:
    """128x256 input, 5 frames, 512-channel 8x16 bottleneck."""
    return ModelSpec(variant, 128, 256, 5, 64, head_channels, 9, 2, 512)


def desk_spec(variant: str = "SCNN_UNet_ConvLSTM", head_channels: int = 2) -> ModelSpec:
    return ModelSpec(variant, 64, 128, 5, 8, head_channels, 5, 2, 64)


PRESETS = {"full": full_spec, "desk": desk_spec}


# ---------------------------------------------------------------------------
# parameter layout


def encoder_channels(spec: ModelSpec) -> list[tuple[int, int]]:
    b = spec.base_channels
    return [(3, b), (b, 2 * b), (2 * b, 4 * b), (4 * b, 8 * b), (8 * b, 8 * b)]


def decoder_channels(spec: ModelSpec) -> list[tuple[int, int, int]]:
    """(upsampled channels, skip channels, output channels) per decoder block."""
    b = spec.base_channels
    return [(8 * b, 8 * b, 4 * b), (4 * b, 4 * b, 2 * b), (2 * b, 2 * b, b), (b, b, b)]


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; a pure function of the spec."""
    shapes: dict[str, tuple[int, ...]] = {}
    for i, (ci, co) in enumerate(encoder_channels(spec)):
        shapes[f"enc.{i}.conv1.weight"] = (co, ci, 3, 3)
        shapes[f"enc.{i}.conv1.bias"] = (co,)
        shapes[f"enc.{i}.conv2.weight"] = (co, co, 3, 3)
        shapes[f"enc.{i}.conv2.bias"] = (co,)
    cb = spec.bottleneck_channels
    if spec.has_scnn:
        for d in SCNN_DIRECTIONS:
            shapes[f"scnn.{d}.weight"] = (cb, spec.scnn_kernel_len)
    hid, k = spec.convlstm_hidden, spec.convlstm_kernel
    if spec.uses_attention:
        shapes["attn.score.weight"] = (1, cb, 1, 1)
        shapes["attn.score.bias"] = (1,)
        for layer in range(spec.convlstm_layers):
            cin = cb if layer == 0 else hid
            shapes[f"attn.lstm.{layer}.weight"] = (cin + hid, 4 * hid)
            shapes[f"attn.lstm.{layer}.bias"] = (4 * hid,)
        shapes["attn.gate.weight"] = (hid, cb)
        shapes["attn.gate.bias"] = (cb,)
    else:
        for layer in range(spec.convlstm_layers):
            cin = cb if layer == 0 else hid
            shapes[f"convlstm.{layer}.weight"] = (4 * hid, cin + hid, k, k)
            shapes[f"convlstm.{layer}.bias"] = (4 * hid,)
    for i, (cu, cs, co) in enumerate(decoder_channels(spec)):
        shapes[f"dec.{i}.up.weight"] = (cu, cu, 2, 2)
        shapes[f"dec.{i}.up.bias"] = (cu,)
        shapes[f"dec.{i}.conv1.weight"] = (co, cu + cs, 3, 3)
        shapes[f"dec.{i}.conv1.bias"] = (co,)
        shapes[f"dec.{i}.conv2.weight"] = (co, co, 3, 3)
        shapes[f"dec.{i}.conv2.bias"] = (co,)
    shapes["head.weight"] = (spec.head_channels, spec.base_channels, 1, 1)
    shapes["head.bias"] = (spec.head_channels,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if ".up." in name:
        return shape[0]
    if name.startswith("attn.lstm") or name.startswith("attn.gate"):
        return shape[0]
    if name.startswith("scnn."):
        # damped: the sequential slice recurrence compounds the gain per slice
        return 5 * shape[1]
    return int(np.prod(shape[1:]))


def init_param(name: str, shape: tuple[int, ...], rng: np.random.Generator, dtype) -> np.ndarray:
    """Kaiming-normal weights (fan-in), zero biases."""
    if name.endswith(".bias"):
        return np.zeros(shape, dtype=dtype)
    std = np.sqrt(2.0 / _fan_in(name, shape))
    return (rng.standard_normal(shape) * std).astype(dtype)


def init_params(spec: ModelSpec, seed: int, dtype=None) -> dict[str, Tensor]:
    dtype = dtype or T.get_dtype()
    rng = np.random.default_rng(seed)
    return {
        name: Tensor(init_param(name, shape, rng, dtype), requires_grad=True, dtype=dtype)
        for name, shape in param_shapes(spec).items()
    }


def param_count(spec: ModelSpec) -> int:
    return int(sum(np.prod(s) for s in param_shapes(spec).values()))


# ---------------------------------------------------------------------------
# forward blocks


def _double_conv(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    x = T.relu(T.conv2d(x, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"]))
    return T.relu(T.conv2d(x, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"]))


def encoder_forward(p: dict[str, Tensor], spec: ModelSpec, frames: Tensor) -> tuple[Tensor, list[Tensor]]:
    """Run the encoder on ``N x 3 x H x W`` (or a single ``3 x H x W``) frames.

    Returns the ``8*base x H/16 x W/16`` bottleneck and the four pre-pool
    feature maps used as skips (full resolution first).
    """
    if frames.shape[-3:] != (3, spec.input_height, spec.input_width):
        raise SpecError(
            f"frame shape {frames.shape[-3:]} does not match spec "
            f"(3, {spec.input_height}, {spec.input_width})"
        )
    skips = []
    x = _double_conv(p, "enc.0", frames)
    for i in range(1, 5):
        skips.append(x)
        x = _double_conv(p, f"enc.{i}", T.maxpool2(x))
    return x, skips


def scnn_message_pass(p: dict[str, Tensor], feature: Tensor, directions=SCNN_DIRECTIONS) -> Tensor:
    """Directional slice-by-slice propagation in the order down, up, right, left."""
    x = feature
    h_ax, w_ax = feature.ndim - 2, feature.ndim - 1
    swap = list(range(feature.ndim))
    swap[h_ax], swap[w_ax] = w_ax, h_ax
    for d in directions:
        w = p[f"scnn.{d}.weight"]
        if d == "down":
            x = T.slice_pass_down(x, w)
        elif d == "up":
            x = T.flip(T.slice_pass_down(T.flip(x, h_ax), w), h_ax)
        elif d == "right":
            x = T.transpose(T.slice_pass_down(T.transpose(x, swap), w), swap)
        elif d == "left":
            xt = T.flip(T.transpose(x, swap), h_ax)
            x = T.transpose(T.flip(T.slice_pass_down(xt, w), h_ax), swap)
        else:
            raise ValueError(f"unknown SCNN direction {d!r}")
    return x


def _lstm_gates(z: Tensor, hid: int, c: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM update from stacked pre-activations ordered (input, forget, output, candidate)."""
    i = T.sigmoid(z[:, 0:hid])
    f = T.sigmoid(z[:, hid:2 * hid])
    o = T.sigmoid(z[:, 2 * hid:3 * hid])
    g = T.tanh(z[:, 3 * hid:4 * hid])
    c = f * c + i * g
    return o * T.tanh(c), c


def convlstm_forward(p: dict[str, Tensor], spec: ModelSpec, seq: list[Tensor]) -> Tensor:
    """Stacked ConvLSTM over ``seq`` (each ``B x C x h x w``); returns the top layer's last hidden state."""
    if not seq:
        raise ValueError("convlstm_forward needs at least one time step")
    hid = spec.convlstm_hidden
    b, _, hh, ww = seq[0].shape
    zeros = np.zeros((b, hid, hh, ww), dtype=seq[0].dtype)
    inputs = seq
    for layer in range(spec.convlstm_layers):
        w, bias = p[f"convlstm.{layer}.weight"], p[f"convlstm.{layer}.bias"]
        h, c = Tensor(zeros, dtype=zeros.dtype), Tensor(zeros, dtype=zeros.dtype)
        outputs = []
        for x in inputs:
            z = T.conv2d(T.concat([x, h], axis=1), w, bias)
            h, c = _lstm_gates(z, hid, c)
            outputs.append(h)
        inputs = outputs
    return inputs[-1]


def attention_fuse(
    p: dict[str, Tensor], spec: ModelSpec, seq: list[Tensor], return_weights: bool = False
):
    """Temporal attention over per-frame features ``B x C x h x w``.

    A 1x1 conv scores every pixel of every frame; a softmax across frames
    turns the scores into convex weights.  A linear LSTM over the frames'
    global-average descriptors produces sigmoid channel gates applied to the
    weighted sum.
    """
    if not seq:
        raise ValueError("attention_fuse needs at least one frame")
    s = len(seq)
    b, cb, hh, ww = seq[0].shape
    feats = T.stack(seq, axis=1)  # B S C h w
    flat = T.reshape(feats, (b * s, cb, hh, ww))
    scores = T.reshape(T.conv2d(flat, p["attn.score.weight"], p["attn.score.bias"]), (b, s, 1, hh, ww))
    weights = T.softmax(scores, axis=1)
    pooled = T.tsum(weights * feats, axis=1)  # B C h w

    hid = spec.convlstm_hidden
    desc = [T.mean(x, axis=(2, 3)) for x in seq]  # B x C each
    zeros = np.zeros((b, hid), dtype=seq[0].dtype)
    for layer in range(spec.convlstm_layers):
        w, bias = p[f"attn.lstm.{layer}.weight"], p[f"attn.lstm.{layer}.bias"]
        h, c = Tensor(zeros, dtype=zeros.dtype), Tensor(zeros, dtype=zeros.dtype)
        outs = []
        for x in desc:
            z = T.matmul(T.concat([x, h], axis=1), w) + bias
            h, c = _lstm_gates(z, hid, c)
            outs.append(h)
        desc = outs
    gates = T.sigmoid(T.matmul(desc[-1], p["attn.gate.weight"]) + p["attn.gate.bias"])
    out = pooled * T.reshape(gates, (b, cb, 1, 1))
    if return_weights:
        return out, weights
    return out


def decoder_forward(p: dict[str, Tensor], spec: ModelSpec, fused: Tensor, skips: list[Tensor]) -> Tensor:
    """Four upsampling blocks with concatenated skips, then the 1x1 output head."""
    x = fused
    for i, skip in enumerate(reversed(skips)):
        x = T.transposed_conv2(x, p[f"dec.{i}.up.weight"], p[f"dec.{i}.up.bias"])
        if skip.shape[-2:] != x.shape[-2:] or skip.shape[0] != x.shape[0]:
            raise T.ShapeError(f"decoder block {i}: skip {skip.shape} does not match {x.shape}")
        x = _double_conv(p, f"dec.{i}", T.concat([x, skip], axis=1))
    return T.conv2d(x, p["head.weight"], p["head.bias"])


def forward(p: dict[str, Tensor], spec: ModelSpec, frames) -> Tensor:
    """``B x S x 3 x H x W`` frames -> ``B x head x H x W`` output for the last frame."""
    frames = T.as_tensor(frames)
    if frames.ndim == 4:
        return forward(p, spec, T.reshape(frames, (1,) + frames.shape))[0]
    if frames.ndim != 5 or frames.shape[1] != spec.sequence_length:
        raise SpecError(f"expected B x {spec.sequence_length} x 3 x H x W frames, got {frames.shape}")
    b, s = frames.shape[:2]
    flat = T.reshape(frames, (b * s,) + frames.shape[2:])
    bottleneck, skips = encoder_forward(p, spec, flat)
    if spec.has_scnn:
        bottleneck = scnn_message_pass(p, bottleneck)
    ch, hh, ww = bottleneck.shape[1:]
    per_frame = T.reshape(bottleneck, (b, s, ch, hh, ww))
    seq = [per_frame[:, t] for t in range(s)]
    if spec.uses_attention:
        fused = attention_fuse(p, spec, seq)
    else:
        fused = convlstm_forward(p, spec, seq)
    last_skips = [T.reshape(sk, (b, s) + sk.shape[1:])[:, -1] for sk in skips]
    return decoder_forward(p, spec, fused, last_skips)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict[str, Tensor]
    phase: str = "pretrain"
    rng_seed: int = 0
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"phase must be 'pretrain' or 'finetune', got {self.phase!r}")
        expected = param_shapes(self.spec)
        if list(self.params) != list(expected):
            missing = set(expected) ^ set(self.params)
            raise SpecError(f"parameter names do not match spec: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise SpecError(f"{name}: shape {self.params[name].shape} != {shape}")

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int, phase: str | None = None, dtype=None) -> "Checkpoint":
        if phase is None:
            phase = "pretrain" if spec.head_channels == 3 else "finetune"
        return cls(spec, init_params(spec, seed, dtype), phase, seed, 0)

    def numel(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def digest(self, name: str) -> str:
        return tensor_digest(self.params[name].data)


def tensor_digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes() + str(arr.shape).encode()).hexdigest()


def model_forward(seq, checkpoint: Checkpoint) -> Tensor:
    """Forward one sequence (``S x 3 x H x W``) or a batch through a checkpoint's network."""
    return forward(checkpoint.params, checkpoint.spec, seq)


def transfer_weights(pretrained: Checkpoint, target_spec: ModelSpec, seed: int | None = None) -> Checkpoint:
    """Copy every non-head tensor into a fresh fine-tuning checkpoint."""
    if pretrained.phase != "pretrain":
        raise ValueError(f"transfer source must be a pretrain checkpoint, got phase {pretrained.phase!r}")
    src = pretrained.spec
    if src.variant != target_spec.variant:
        raise SpecError(f"variant mismatch: {src.variant} -> {target_spec.variant}")
    if dataclasses.replace(src, head_channels=target_spec.head_channels) != target_spec:
        raise SpecError("specs differ outside head_channels")
    seed = pretrained.rng_seed + 1 if seed is None else seed
    dtype = next(iter(pretrained.params.values())).dtype
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(target_spec).items():
        if name in HEAD_PARAMS:
            params[name] = Tensor(init_param(name, shape, rng, dtype), requires_grad=True, dtype=dtype)
        else:
            src_t = pretrained.params[name]
            if src_t.shape != shape:
                raise SpecError(f"{name}: shape {src_t.shape} != {shape}")
            params[name] = Tensor(src_t.data.copy(), requires_grad=True, dtype=dtype)
    return Checkpoint(target_spec, params, "finetune", seed, 0, {"transferred_from_epoch": pretrained.epoch})


# Binary layout: b"LFCK", u32 version, u32 tensor count, then per tensor
# u16 name length, name, u8 rank, u32 dims, u8 dtype code, little-endian data;
# then a JSON trailer and its u64 length.
MAGIC = b"LFCK"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(ck: Checkpoint, path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(ck.params))]
    for name, t in ck.params.items():
        raw = name.encode("utf-8")
        dt = t.data.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise CheckpointFormatError(f"{name}: unsupported dtype {t.data.dtype}")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(struct.pack("<B", _DTYPE_CODES[dt]))
        parts.append(np.ascontiguousarray(t.data, dtype=dt).tobytes())
    trailer = json.dumps(
        {"spec": ck.spec.to_dict(), "phase": ck.phase, "seed": ck.rng_seed, "epoch": ck.epoch, "extra": ck.extra},
        sort_keys=True,
    ).encode("utf-8")
    parts.append(trailer)
    parts.append(struct.pack("<Q", len(trailer)))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        (tlen,) = struct.unpack_from("<Q", buf, len(buf) - 8)
        meta = json.loads(buf[len(buf) - 8 - tlen: len(buf) - 8].decode("utf-8"))
        off = 12
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off: off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            (code,) = struct.unpack_from("<B", buf, off)
            off += 1
            dt = _CODE_DTYPES[code]
            n = int(np.prod(shape)) * dt.itemsize
            if off + n > len(buf) - 8 - tlen:
                raise CheckpointFormatError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape).copy()
            off += n
            params[name] = Tensor(arr, requires_grad=True, dtype=arr.dtype)
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    spec = ModelSpec.from_dict(meta["spec"])
    return Checkpoint(spec, params, meta["phase"], meta["seed"], meta["epoch"], meta.get("extra", {}))
