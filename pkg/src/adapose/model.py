"""Pose regression network: feature extractor and regressor.

The family is stem conv -> residual blocks (features ``f``) -> 1×1
bottleneck -> global average pool -> linear head. Every CSI window is
standardized on its own; fixed, non-trainable buffers map the head output
back to pixel coordinates.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .diffcore import (
    DiffTensor,
    avg_pool_global,
    bias_add,
    conv2d,
    conv_output_size,
    linear,
    relu,
    reshape,
    residual_block,
    resize_bilinear,
    standardize_samples,
)
from .diffcore.tensor import as_tensor
from .errors import ConfigurationError, DimensionError

CHECKPOINT_MAGIC = b"APCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelScale:
    in_channels: int = 3
    in_height: int = 30
    in_width: int = 32
    stem_channels: int = 8
    stem_stride: int = 2
    block_widths: tuple[int, ...] = (16, 32)
    block_strides: tuple[int, ...] = (2, 2)
    bottleneck_channels: int = 32
    joint_count: int = 17
    resize: tuple[int, int] | None = None

    def __post_init__(self):
        ints = [self.in_channels, self.in_height, self.in_width, self.stem_channels,
                self.stem_stride, self.bottleneck_channels, *self.block_widths, *self.block_strides]
        if any(int(v) <= 0 for v in ints):
            raise ConfigurationError(f"ModelScale fields must be positive: {self}")
        if not self.block_widths or len(self.block_widths) != len(self.block_strides):
            raise ConfigurationError("block_widths and block_strides must be nonempty and equally long")
        if self.joint_count < 2:
            raise ConfigurationError("joint_count must be at least 2")
        if self.resize is not None and (len(self.resize) != 2 or min(self.resize) <= 0):
            raise ConfigurationError(f"resize must be a positive (height, width) pair, got {self.resize}")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.in_height, self.in_width)

    def feature_shape(self) -> tuple[int, int, int]:
        h, w = self.resize if self.resize else (self.in_height, self.in_width)
        h = conv_output_size(h, 3, self.stem_stride, 1)
        w = conv_output_size(w, 3, self.stem_stride, 1)
        for s in self.block_strides:
            h = conv_output_size(h, 3, s, 1)
            w = conv_output_size(w, 3, s, 1)
        return (self.block_widths[-1], h, w)

    def to_vector(self) -> np.ndarray:
        rh, rw = self.resize or (0, 0)
        return np.array([self.in_channels, self.in_height, self.in_width, rh, rw, self.stem_channels,
                         self.stem_stride, len(self.block_widths), *self.block_widths, *self.block_strides,
                         self.bottleneck_channels, self.joint_count], dtype=np.float64)

    @classmethod
    def from_vector(cls, v) -> "ModelScale":
        v = [int(round(float(a))) for a in v]
        nb = v[7]
        widths = tuple(v[8 : 8 + nb])
        strides = tuple(v[8 + nb : 8 + 2 * nb])
        return cls(in_channels=v[0], in_height=v[1], in_width=v[2], stem_channels=v[5], stem_stride=v[6],
                   block_widths=widths, block_strides=strides, bottleneck_channels=v[8 + 2 * nb],
                   joint_count=v[9 + 2 * nb], resize=(v[3], v[4]) if v[3] else None)


PRESETS = {
    # f is 512×17×17 after resizing 114×32 CSI to 136×136 and striding by 8.
    "paper": ModelScale(in_height=114, in_width=32, resize=(136, 136), stem_channels=64, stem_stride=2,
                        block_widths=(128, 256, 512), block_strides=(2, 2, 1), bottleneck_channels=256),
    "desk": ModelScale(),
    "tiny": ModelScale(in_height=12, in_width=16, stem_channels=4, block_widths=(8,), block_strides=(2,),
                       bottleneck_channels=8),
}


def get_preset(name: str) -> ModelScale:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class PoseNetParams:
    scale: ModelScale
    tensors: dict[str, DiffTensor] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def trainable(self) -> dict[str, DiffTensor]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("buf.")}

    def block(self, i: int) -> dict[str, DiffTensor]:
        prefix = f"blocks.{i}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def zero_grad(self):
        for t in self.trainable().values():
            t.zero_grad()

    def copy(self) -> "PoseNetParams":
        return PoseNetParams(self.scale, {
            k: DiffTensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.tensors.items()
        })

    def set_normalization(self, pose_offset, pose_scale):
        dt = self.tensors["buf.pose_offset"].dtype
        self.tensors["buf.pose_offset"].data[...] = np.asarray(pose_offset, dtype=dt).reshape(-1)
        self.tensors["buf.pose_scale"].data[...] = np.asarray(pose_scale, dtype=dt)

    def normalize_pose(self, y) -> np.ndarray:
        """Pixel poses -> the head's output units."""
        y = np.asarray(y, dtype=np.float64)
        off = self.tensors["buf.pose_offset"].data.astype(np.float64).reshape(-1, 2)
        return (y - off) / float(self.tensors["buf.pose_scale"].data[0])


def _param_shapes(scale: ModelScale):
    shapes = [("stem.w", (scale.stem_channels, scale.in_channels, 3, 3)), ("stem.b", (scale.stem_channels,))]
    c = scale.stem_channels
    for i, (w, s) in enumerate(zip(scale.block_widths, scale.block_strides)):
        shapes += [(f"blocks.{i}.conv1.w", (w, c, 3, 3)), (f"blocks.{i}.conv1.b", (w,)),
                   (f"blocks.{i}.conv2.w", (w, w, 3, 3)), (f"blocks.{i}.conv2.b", (w,))]
        if w != c or s != 1:
            shapes += [(f"blocks.{i}.proj.w", (w, c, 1, 1)), (f"blocks.{i}.proj.b", (w,))]
        c = w
    shapes += [("bottleneck.w", (scale.bottleneck_channels, c, 1, 1)), ("bottleneck.b", (scale.bottleneck_channels,)),
               ("head.w", (scale.bottleneck_channels, 2 * scale.joint_count)), ("head.b", (2 * scale.joint_count,))]
    return shapes


def init_params(scale: ModelScale, seed: int, dtype=np.float64) -> PoseNetParams:
    """Kaiming-uniform conv weights (bound sqrt(6 / fan_in)), zero biases.

    The linear head has no ReLU after it and uses bound 1 / sqrt(fan_in).
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_shapes(scale):
        if name.endswith(".b"):
            value = np.zeros(shape)
        else:
            if name == "head.w":
                bound = 1.0 / np.sqrt(shape[0])
            else:
                bound = np.sqrt(6.0 / int(np.prod(shape[1:])))
            value = rng.uniform(-bound, bound, size=shape)
        tensors[name] = DiffTensor(value, requires_grad=True, dtype=dtype, name=name)
    buffers = {"buf.pose_offset": np.zeros(2 * scale.joint_count), "buf.pose_scale": np.ones(1)}
    for name, value in buffers.items():
        tensors[name] = DiffTensor(value, dtype=dtype, name=name)
    return PoseNetParams(scale, tensors)


def _check_input(x: DiffTensor, scale: ModelScale):
    if x.ndim != 4 or tuple(x.shape[1:]) != scale.input_shape:
        raise ConfigurationError(f"input shape {tuple(x.shape)} does not match configured N×{scale.input_shape}")


def extract_features(x, params: PoseNetParams) -> DiffTensor:
    """CSI batch N×A×S×T -> feature map f."""
    scale = params.scale
    x = as_tensor(x)
    _check_input(x, scale)
    t = params.tensors
    # each window is standardized on its own, so amplitude level shifts between rooms drop out
    h = standardize_samples(x)
    if scale.resize:
        h = resize_bilinear(h, *scale.resize)
    h = relu(conv2d(h, t["stem.w"], t["stem.b"], stride=scale.stem_stride, pad=1))
    for i, s in enumerate(scale.block_strides):
        h = residual_block(h, params.block(i), stride=s)
    return h


def regress_normalized(f: DiffTensor, params: PoseNetParams) -> DiffTensor:
    """f -> head output N×J×2 in normalized pose units."""
    t = params.tensors
    if f.ndim != 4 or f.shape[1] != t["bottleneck.w"].shape[1]:
        raise ConfigurationError(f"feature shape {tuple(f.shape)} does not match bottleneck input "
                                 f"{t['bottleneck.w'].shape[1]} channels")
    h = relu(conv2d(f, t["bottleneck.w"], t["bottleneck.b"], stride=1, pad=0))
    h = avg_pool_global(h)
    out = linear(h, t["head.w"], t["head.b"])
    return reshape(out, (f.shape[0], params.scale.joint_count, 2))


def denormalize(pose_n: DiffTensor, params: PoseNetParams) -> DiffTensor:
    t = params.tensors
    n, j, _ = pose_n.shape
    flat = reshape(pose_n, (n, 2 * j)) * float(t["buf.pose_scale"].data[0])
    flat = bias_add(flat, DiffTensor(t["buf.pose_offset"].data), axis=1)
    return reshape(flat, (n, j, 2))


def regress_pose(f: DiffTensor, params: PoseNetParams) -> DiffTensor:
    """f -> poses N×J×2 in pixel coordinates."""
    return denormalize(regress_normalized(f, params), params)


def predict(params: PoseNetParams, x, batch_size: int = 64) -> np.ndarray:
    """Batched inference without recording gradients; returns float64 pixels."""
    x = np.asarray(x)
    outs = []
    for lo in range(0, len(x), batch_size):
        f = extract_features(DiffTensor(x[lo : lo + batch_size], dtype=params["stem.w"].dtype), params)
        outs.append(regress_pose(f, params).data.astype(np.float64))
    if not outs:
        return np.zeros((0, params.scale.joint_count, 2))
    return np.concatenate(outs)


# --- checkpoint files ----------------------------------------------------

def write_records(path, records: dict[str, np.ndarray], version: int = CHECKPOINT_VERSION):
    """Write named float32 tensors in the APCK layout, atomically."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", version)]
    for name, arr in records.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    atomic_write(path, b"".join(chunks))


def read_records(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not an APCK checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    records = {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4 : pos + 4 + nlen].decode("utf-8")
            pos += 4 + nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            records[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise ConfigurationError(f"{path}: truncated or corrupt checkpoint") from exc
    return records


def atomic_write(path, payload: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def params_to_records(params: PoseNetParams) -> dict[str, np.ndarray]:
    records = {"meta.arch": params.scale.to_vector()}
    records.update({k: v.data for k, v in params.tensors.items()})
    return records


def params_from_records(records: dict[str, np.ndarray], dtype=np.float32) -> PoseNetParams:
    if "meta.arch" not in records:
        raise ConfigurationError("checkpoint has no meta.arch record")
    scale = ModelScale.from_vector(records["meta.arch"])
    params = init_params(scale, seed=0, dtype=dtype)
    for name, t in params.tensors.items():
        if name not in records:
            raise ConfigurationError(f"checkpoint is missing tensor {name!r}")
        if tuple(records[name].shape) != t.shape:
            raise DimensionError(f"checkpoint tensor {name!r} has shape {records[name].shape}, expected {t.shape}")
        t.data[...] = records[name]
    return params


def save_params(path, params: PoseNetParams, extra: dict[str, np.ndarray] | None = None):
    records = params_to_records(params)
    if extra:
        records.update(extra)
    write_records(path, records)


def load_params(path, dtype=np.float32) -> PoseNetParams:
    return params_from_records(read_records(path), dtype=dtype)
