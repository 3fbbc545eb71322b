"""The three classifier architectures, the runtime network, and checkpoints.

Filter counts (32/64), dense widths (256/128/64), and the block order are
reconstructions pinned here; the contract-level facts are the layer-kind
counts, the dropout rates, and the Dense(2)+Softmax head.  Checkpoints are
a little-endian binary format (magic ``XCNN``) holding every parameter and
batch-norm running-stat tensor in float64, closed by a byte-sum checksum.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ArchitectureMismatchError,
    CheckpointCorruptionError,
    CheckpointVersionError,
    ParameterError,
    StateError,
)
from .layers import (
    LayerDescriptor,
    LayerState,
    Mode,
    init_layer_state,
    layer_backward,
    layer_forward,
    layer_output_shape,
)
from .optim import LossValue, cross_entropy, softmax_xent_grad
from .rng import derive_rng
from .tensor import Shape4, Tensor

CHECKPOINT_MAGIC = b"XCNN"
CHECKPOINT_VERSION = 1
INPUT_SHAPE = Shape4(1, 30, 30, 1)


@dataclass(frozen=True)
class ArchitectureSpec:
    arch_id: str
    input_shape: Shape4
    layers: tuple[LayerDescriptor, ...]
    output_shapes: tuple[tuple[int, ...], ...]
    param_count: int


def _descriptor_param_count(desc: LayerDescriptor, in_shape: tuple[int, ...]) -> int:
    if desc.kind == "Conv2D":
        kh, kw = desc.kernel
        return kh * kw * in_shape[-1] * desc.filters + desc.filters
    if desc.kind == "Dense":
        return in_shape[0] * desc.units + desc.units
    if desc.kind == "BatchNorm":
        return 2 * in_shape[-1]
    return 0


def _resolve(arch_id: str, layers: list[LayerDescriptor]) -> ArchitectureSpec:
    shape = (INPUT_SHAPE.h, INPUT_SHAPE.w, INPUT_SHAPE.c)
    shapes = []
    params = 0
    for desc in layers:
        params += _descriptor_param_count(desc, shape)
        shape = layer_output_shape(desc, shape)
        shapes.append(shape)
    return ArchitectureSpec(
        arch_id=arch_id,
        input_shape=INPUT_SHAPE,
        layers=tuple(layers),
        output_shapes=tuple(shapes),
        param_count=params,
    )


def build_cnn1() -> ArchitectureSpec:
    """One conv block: Conv(32) -> ReLU -> pool -> dropout 0.20 -> dense head."""
    return _resolve(
        "cnn1",
        [
            LayerDescriptor(kind="Conv2D", filters=32),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="MaxPool2x2"),
            LayerDescriptor(kind="Dropout", rate=0.20),
            LayerDescriptor(kind="Flatten"),
            LayerDescriptor(kind="Dense", units=128),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Dense", units=2),
            LayerDescriptor(kind="Softmax"),
        ],
    )


def build_cnn3() -> ArchitectureSpec:
    """Three convs, two pools, dropouts 0.25/0.25/0.30."""
    return _resolve(
        "cnn3",
        [
            LayerDescriptor(kind="Conv2D", filters=32),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Conv2D", filters=64),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="MaxPool2x2"),
            LayerDescriptor(kind="Dropout", rate=0.25),
            LayerDescriptor(kind="Conv2D", filters=64),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="MaxPool2x2"),
            LayerDescriptor(kind="Dropout", rate=0.25),
            LayerDescriptor(kind="Flatten"),
            LayerDescriptor(kind="Dense", units=128),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Dropout", rate=0.30),
            LayerDescriptor(kind="Dense", units=2),
            LayerDescriptor(kind="Softmax"),
        ],
    )


def build_cnn4() -> ArchitectureSpec:
    """Four convs, two pools, six batch norms, dropouts 0.25/0.25/0.25/0.40/0.30."""
    return _resolve(
        "cnn4",
        [
            LayerDescriptor(kind="Conv2D", filters=32),
            LayerDescriptor(kind="BatchNorm"),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Conv2D", filters=32),
            LayerDescriptor(kind="BatchNorm"),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="MaxPool2x2"),
            LayerDescriptor(kind="Dropout", rate=0.25),
            LayerDescriptor(kind="Conv2D", filters=64),
            LayerDescriptor(kind="BatchNorm"),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Conv2D", filters=64),
            LayerDescriptor(kind="BatchNorm"),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="MaxPool2x2"),
            LayerDescriptor(kind="Dropout", rate=0.25),
            LayerDescriptor(kind="Flatten"),
            LayerDescriptor(kind="Dense", units=256),
            LayerDescriptor(kind="BatchNorm"),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Dropout", rate=0.25),
            LayerDescriptor(kind="Dense", units=128),
            LayerDescriptor(kind="BatchNorm"),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Dropout", rate=0.40),
            LayerDescriptor(kind="Dense", units=64),
            LayerDescriptor(kind="ReLU"),
            LayerDescriptor(kind="Dropout", rate=0.30),
            LayerDescriptor(kind="Dense", units=2),
            LayerDescriptor(kind="Softmax"),
        ],
    )


ARCHITECTURES = {"cnn1": build_cnn1, "cnn3": build_cnn3, "cnn4": build_cnn4}


class Network:
    """An architecture plus its live per-layer states.

    One instance is single-writer: forward/backward run on one thread.
    Dropout draws derive from the rng_key passed to forward plus the layer
    index, so a fixed key reproduces masks exactly.
    """

    def __init__(self, arch: ArchitectureSpec, states: list[LayerState], seed: int, epoch: int = 0):
        self.arch = arch
        self.states = states
        self.seed = seed
        self.epoch = epoch

    def layer_name(self, index: int) -> str:
        return f"layer{index:02d}_{self.arch.layers[index].kind.lower()}"

    def forward(self, x: Tensor, mode: Mode, rng_key: tuple = ()) -> Tensor:
        h = x
        for i, (desc, state) in enumerate(zip(self.arch.layers, self.states)):
            rng = None
            if desc.kind == "Dropout" and mode is Mode.TRAIN:
                rng = derive_rng(self.seed, "dropout", *rng_key, i)
            h = layer_forward(desc, state, h, mode, rng)
        return h

    def predict_probs(self, x: Tensor) -> Tensor:
        return self.forward(x, Mode.INFER)

    def loss(self, x: Tensor, labels: Tensor, mode: Mode = Mode.INFER, rng_key: tuple = ()) -> float:
        return cross_entropy(self.forward(x, mode, rng_key), labels).mean

    def backward_from_logits(self, logit_grad: Tensor) -> dict[str, Tensor]:
        """Backpropagate the fused softmax/cross-entropy gradient through
        every layer below the Softmax head; returns the parameter grads."""
        if self.arch.layers[-1].kind != "Softmax":
            raise StateError("backward_from_logits expects a Softmax head")
        grad = logit_grad
        for i in range(len(self.arch.layers) - 2, -1, -1):
            grad = layer_backward(self.arch.layers[i], self.states[i], grad)
        return self.grads()

    def loss_and_grads(
        self, x: Tensor, labels: Tensor, mode: Mode = Mode.INFER, rng_key: tuple = ()
    ) -> tuple[LossValue, dict[str, Tensor]]:
        probs = self.forward(x, mode, rng_key)
        loss = cross_entropy(probs, labels)
        grads = self.backward_from_logits(softmax_xent_grad(probs, labels))
        return loss, grads

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, state in enumerate(self.states):
            for pname in sorted(state.params):
                out[f"{self.layer_name(i)}.{pname}"] = state.params[pname]
        return out

    def grads(self) -> dict[str, Tensor]:
        out = {}
        for i, state in enumerate(self.states):
            for pname in sorted(state.params):
                out[f"{self.layer_name(i)}.{pname}"] = state.grads[pname]
        return out

    def named_tensors(self) -> dict[str, tuple[dict, str]]:
        """Every persistable tensor: params plus BN running stats."""
        out = {}
        for i, state in enumerate(self.states):
            base = self.layer_name(i)
            for pname in sorted(state.params):
                out[f"{base}.{pname}"] = (state.params, pname)
            for sname in sorted(state.running_stats):
                out[f"{base}.running_{sname}"] = (state.running_stats, sname)
        return out


def init_network(arch: ArchitectureSpec, seed: int) -> Network:
    shapes = ((arch.input_shape.h, arch.input_shape.w, arch.input_shape.c),) + arch.output_shapes
    states = [
        init_layer_state(desc, shapes[i], derive_rng(seed, "init", i))
        for i, desc in enumerate(arch.layers)
    ]
    return Network(arch=arch, states=states, seed=seed)


def build_network(arch_id: str, seed: int) -> Network:
    if arch_id not in ARCHITECTURES:
        raise ParameterError(f"unknown architecture {arch_id!r}; valid ids: {sorted(ARCHITECTURES)}")
    return init_network(ARCHITECTURES[arch_id](), seed)


def _byte_sum(data: bytes | bytearray | memoryview) -> int:
    return int(np.frombuffer(data, dtype=np.uint8).sum(dtype=np.uint64))


def save_checkpoint(net: Network, path: str | Path) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    arch_bytes = net.arch.arch_id.encode("utf-8")
    buf += struct.pack("<I", len(arch_bytes)) + arch_bytes
    buf += struct.pack("<QQ", net.seed, net.epoch)
    tensors = net.named_tensors()
    buf += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        holder, key = tensors[name]
        arr = np.ascontiguousarray(holder[key], dtype="<f8")
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<I", len(name_bytes)) + name_bytes
        buf += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<Q", dim)
        buf += arr.tobytes(order="C")
    buf += struct.pack("<Q", _byte_sum(buf) & 0xFFFFFFFFFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


class _Cursor:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptionError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path: str | Path, expect_arch: str | None = None) -> Network:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptionError(f"{path}: not a checkpoint (bad magic)")
    stored_sum = struct.unpack("<Q", data[-8:])[0]
    if _byte_sum(data[:-8]) & 0xFFFFFFFFFFFFFFFF != stored_sum:
        raise CheckpointCorruptionError(f"{path}: checksum mismatch")
    cur = _Cursor(data[:-8], path)
    cur.take(4)  # magic
    version = cur.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    arch_id = cur.take(cur.u32()).decode("utf-8")
    if expect_arch is not None and arch_id != expect_arch:
        raise ArchitectureMismatchError(f"{path}: checkpoint is {arch_id!r}, expected {expect_arch!r}")
    if arch_id not in ARCHITECTURES:
        raise ArchitectureMismatchError(
            f"{path}: unknown architecture {arch_id!r}; valid ids: {sorted(ARCHITECTURES)}"
        )
    seed = cur.u64()
    epoch = cur.u64()
    net = init_network(ARCHITECTURES[arch_id](), seed)
    net.epoch = epoch
    expected = net.named_tensors()
    count = cur.u32()
    if count != len(expected):
        raise CheckpointCorruptionError(
            f"{path}: tensor count {count} does not match architecture ({len(expected)})"
        )
    for _ in range(count):
        name = cur.take(cur.u32()).decode("utf-8")
        rank = cur.u32()
        shape = tuple(cur.u64() for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        payload = cur.take(size * 8)
        if name not in expected:
            raise CheckpointCorruptionError(f"{path}: unexpected tensor {name!r}")
        holder, key = expected[name]
        if holder[key].shape != shape:
            raise CheckpointCorruptionError(
                f"{path}: tensor {name!r} has shape {shape}, expected {holder[key].shape}"
            )
        holder[key] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return net
