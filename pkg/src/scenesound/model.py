"""Shared convolutional encoder with a BiGRU event head and a CNN scene head.

Layout of one clip through the network (full-size defaults)::

    log-mel 1x64xT
      -> 3 x [conv 3(freq)x1(time), leaky ReLU, freq max-pool 8/4/2]  -> 128x1xT
      event: BiGRU 32+32 -> dense 32 (leaky ReLU) -> dense M (sigmoid)  -> MxT
      scene: 2 x [conv 3x3, leaky ReLU, time max-pool 10/5] -> flatten
             -> dense N (softmax)                                       -> N
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .nn import ops
from .nn.ops import ConvParams, DenseParams, GruParams

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    n_mels: int = 64
    n_frames: int = 500
    shared_channels: tuple = (128, 128, 128)
    shared_kernel: tuple = (3, 1)  # (freq, time)
    shared_pool: tuple = (8, 4, 2)  # frequency only
    gru_hidden: int = 32
    event_dense: int = 32
    n_events: int = 25
    scene_channels: tuple = (64, 16)
    scene_kernel: tuple = (3, 3)
    scene_pool: tuple = (10, 5)  # time only
    n_scenes: int = 4

    def __post_init__(self):
        for name in ("shared_channels", "shared_kernel", "shared_pool", "scene_channels", "scene_kernel", "scene_pool"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.shared_channels) != len(self.shared_pool):
            raise ValueError("one frequency pool size per shared conv layer")
        if len(self.scene_channels) != len(self.scene_pool):
            raise ValueError("one time pool size per scene conv layer")
        if math.prod(self.shared_pool) != self.n_mels:
            raise ValueError(f"shared pooling {self.shared_pool} must collapse exactly {self.n_mels} mel bins")
        if self.n_frames % self.time_reduction:
            raise ValueError(f"n_frames={self.n_frames} not divisible by scene pooling {self.time_reduction}")
        if any(k % 2 == 0 for k in self.shared_kernel + self.scene_kernel):
            raise ValueError("kernel sizes must be odd")

    @property
    def time_reduction(self) -> int:
        return math.prod(self.scene_pool)

    @property
    def scene_flat(self) -> int:
        return self.scene_channels[-1] * (self.n_frames // self.time_reduction)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


FULL = Architecture()
# Gradient-check size: every dimension shrunk so finite differences run in seconds.
TINY = Architecture(
    n_mels=8, n_frames=8, shared_channels=(4, 4, 4), shared_pool=(4, 2, 1),
    gru_hidden=3, event_dense=4, n_events=3, scene_channels=(4, 2), scene_pool=(2, 2), n_scenes=2,
)
# Synthetic-corpus experiments: full geometry on 2 s clips with narrower layers.
DESK = Architecture(
    n_frames=100, shared_channels=(16, 16, 16), gru_hidden=16, event_dense=16,
    n_events=8, scene_channels=(16, 8), n_scenes=4,
)
PRESETS = {"full": FULL, "tiny": TINY, "desk": DESK}


def param_shapes(arch: Architecture) -> dict:
    """Ordered manifest of every trainable tensor."""
    shapes = {}
    c_in = 1
    kf, kt = arch.shared_kernel
    for i, c in enumerate(arch.shared_channels):
        shapes[f"shared{i}.kernels"] = (c, c_in, kf, kt)
        shapes[f"shared{i}.bias"] = (c,)
        c_in = c
    H, I = arch.gru_hidden, arch.shared_channels[-1]
    for d in ("f", "b"):
        for gate in "grh":
            shapes[f"gru_{d}.W_{gate}"] = (H, I)
        for gate in "grh":
            shapes[f"gru_{d}.U_{gate}"] = (H, H)
        for gate in "grh":
            shapes[f"gru_{d}.b_{gate}"] = (H,)
    shapes["event_fc.W"] = (arch.event_dense, 2 * H)
    shapes["event_fc.b"] = (arch.event_dense,)
    shapes["event_out.W"] = (arch.n_events, arch.event_dense)
    shapes["event_out.b"] = (arch.n_events,)
    kf, kt = arch.scene_kernel
    for j, c in enumerate(arch.scene_channels):
        shapes[f"scene{j}.kernels"] = (c, c_in, kf, kt)
        shapes[f"scene{j}.bias"] = (c,)
        c_in = c
    shapes["scene_out.W"] = (arch.n_scenes, arch.scene_flat)
    shapes["scene_out.b"] = (arch.n_scenes,)
    return shapes


def is_scene_param(name: str) -> bool:
    return name.startswith("scene")


def is_event_param(name: str) -> bool:
    return name.startswith(("gru_", "event_"))


@dataclass
class ModelParams:
    arch: Architecture
    tensors: dict
    buffers: dict = field(default_factory=dict)  # feature_mean / feature_std, not trained
    version: int = 0

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def conv(self, prefix) -> ConvParams:
        return ConvParams(self.tensors[f"{prefix}.kernels"], self.tensors[f"{prefix}.bias"])

    def dense(self, prefix) -> DenseParams:
        return DenseParams(self.tensors[f"{prefix}.W"], self.tensors[f"{prefix}.b"])

    def gru(self, direction) -> GruParams:
        t = self.tensors
        return GruParams(**{n: t[f"gru_{direction}.{n}"] for n in GruParams.field_names()})

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.version,
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.arch,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.version,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name]).tobytes())
        return h.hexdigest()


def _fans(shape):
    if len(shape) == 4:
        field_size = shape[2] * shape[3]
        return shape[1] * field_size, shape[0] * field_size
    return shape[1], shape[0]


def glorot_limit(shape) -> float:
    fan_in, fan_out = _fans(shape)
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(arch: Architecture, seed: int = 0, dtype=np.float64) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(arch).items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            lim = glorot_limit(shape)
            tensors[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
    return ModelParams(arch, tensors)


# -- forward / backward ----------------------------------------------------


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    batch: int
    event_logits: np.ndarray
    scene_logits: np.ndarray
    shared: list
    gru: tuple
    event_fc: tuple
    event_out_in: np.ndarray
    scene: list
    scene_flat: np.ndarray
    squeeze: bool


def forward(X, p: ModelParams, impl=None):
    """Run the network.

    ``X`` is (n_mels, T) or a batch (B, n_mels, T). Returns event posteriors
    (B, M, T), scene posteriors (B, N) and a cache for :func:`backward`;
    the batch axis is dropped for unbatched input.
    """
    arch = p.arch
    X = np.asarray(X)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (arch.n_mels, arch.n_frames):
        raise ValueError(f"expected input (B, {arch.n_mels}, {arch.n_frames}), got {X.shape}")
    X = X.astype(p.dtype, copy=False)
    if "feature_mean" in p.buffers:
        X = (X - p.buffers["feature_mean"][:, None]) / p.buffers["feature_std"][:, None]
    B = X.shape[0]

    h = X[:, None]
    shared = []
    for i, pool in enumerate(arch.shared_pool):
        h, cc = ops.conv2d_forward(h, p.conv(f"shared{i}"))
        h, pc = ops.maxpool_forward(h, pool, 1)
        shared.append((cc, pc))
    # h: (B, C, 1, T)

    seq = np.ascontiguousarray(h[:, :, 0, :].transpose(0, 2, 1))
    hg, gru_cache = ops.bigru_forward(seq, p.gru("f"), p.gru("b"), impl=impl)
    fc_pre, _ = ops.dense_forward(hg, p.dense("event_fc"))
    fc = ops.leaky_relu(fc_pre)
    ev_logits, _ = ops.dense_forward(fc, p.dense("event_out"))
    event_probs = ops.sigmoid(ev_logits).transpose(0, 2, 1)

    s = h
    scene = []
    for j, pool in enumerate(arch.scene_pool):
        s, cc = ops.conv2d_forward(s, p.conv(f"scene{j}"))
        s, pc = ops.maxpool_forward(s, 1, pool)
        scene.append((cc, pc))
    flat = s.reshape(B, -1)
    sc_logits, _ = ops.dense_forward(flat, p.dense("scene_out"))
    scene_probs = ops.softmax(sc_logits, axis=-1)

    cache = ForwardCache(
        params=p, version=p.version, batch=B, event_logits=ev_logits, scene_logits=sc_logits,
        shared=shared, gru=(seq.shape, gru_cache), event_fc=(hg, fc_pre),
        event_out_in=fc, scene=scene, scene_flat=(s.shape, flat), squeeze=squeeze,
    )
    if squeeze:
        return event_probs[0], scene_probs[0], cache
    return event_probs, scene_probs, cache


def backward(cache: ForwardCache, d_event_logits, d_scene_logits=None) -> dict:
    """Gradients of all tensors given gradients at the output logits.

    ``d_event_logits`` is (B, M, T); ``d_scene_logits`` is (B, N) or None
    when the scene loss carries no weight.
    """
    p = cache.params
    if p.version != cache.version:
        raise RuntimeError("forward cache is stale: parameters changed since the forward pass")
    d_event_logits = np.asarray(d_event_logits)
    if d_event_logits.ndim == 2:
        d_event_logits = d_event_logits[None]
    if d_event_logits.shape != (cache.batch,) + cache.event_logits.shape[1:][::-1]:
        raise ValueError("event gradient does not match the cached forward pass")
    grads = {}

    # event head
    d_logits = d_event_logits.transpose(0, 2, 1)
    d_fc, grads["event_out.W"], grads["event_out.b"] = ops.dense_backward(d_logits, cache.event_out_in, p.dense("event_out"))
    hg, fc_pre = cache.event_fc
    d_fc_pre = d_fc * ops.leaky_relu_grad(fc_pre)
    d_hg, grads["event_fc.W"], grads["event_fc.b"] = ops.dense_backward(d_fc_pre, hg, p.dense("event_fc"))
    _, gru_cache = cache.gru
    d_seq, gf, gb = ops.bigru_backward(d_hg, gru_cache)
    for d, g in (("f", gf), ("b", gb)):
        for n in GruParams.field_names():
            grads[f"gru_{d}.{n}"] = getattr(g, n)
    d_shared = d_seq.transpose(0, 2, 1)[:, :, None, :]

    # scene head
    if d_scene_logits is None:
        for name, t in p.tensors.items():
            if is_scene_param(name):
                grads[name] = np.zeros_like(t)
    else:
        d_scene_logits = np.asarray(d_scene_logits).reshape(cache.batch, -1)
        s_shape, flat = cache.scene_flat
        d_flat, grads["scene_out.W"], grads["scene_out.b"] = ops.dense_backward(d_scene_logits, flat, p.dense("scene_out"))
        ds = d_flat.reshape(s_shape)
        for j in range(len(cache.scene) - 1, -1, -1):
            cc, pc = cache.scene[j]
            ds = ops.maxpool_backward(ds, pc)
            ds, grads[f"scene{j}.kernels"], grads[f"scene{j}.bias"] = ops.conv2d_backward(ds, cc)
        d_shared = d_shared + ds

    dh = d_shared
    for i in range(len(cache.shared) - 1, -1, -1):
        cc, pc = cache.shared[i]
        dh = ops.maxpool_backward(dh, pc)
        dh, grads[f"shared{i}.kernels"], grads[f"shared{i}.bias"] = ops.conv2d_backward(dh, cc, input_grad=i > 0)
    return {name: grads[name].astype(p.tensors[name].dtype, copy=False) for name in p.tensors}


def predict_events(event_probs, threshold: float = 0.5):
    """Binary event roll: active iff posterior >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return (np.asarray(event_probs) >= threshold).astype(np.uint8)


def predict_scene(scene_probs):
    """Argmax scene index (lowest index on ties); works on (N,) or (B, N)."""
    return np.asarray(scene_probs).argmax(axis=-1)


# -- checkpoints -----------------------------------------------------------


def _fmt_value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def save_checkpoint(path, p: ModelParams, meta: dict | None = None) -> None:
    """Text header (``key=value`` lines, blank-line terminated) then raw LE arrays."""
    lines = [f"format_version={FORMAT_VERSION}"]
    for k, v in p.arch.to_dict().items():
        lines.append(f"arch.{k}={_fmt_value(v)}")
    for k, v in (meta or {}).items():
        if "\n" in str(v) or "=" in str(k):
            raise ValueError(f"metadata entry {k!r} cannot be encoded in the header")
        lines.append(f"meta.{k}={_fmt_value(v)}")
    blobs, offset = [], 0
    for kind, store in (("param", p.tensors), ("buffer", p.buffers)):
        for name, arr in store.items():
            le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
            shape = "x".join(str(s) for s in arr.shape)
            lines.append(f"{kind}={name};{shape};{le.dtype.str};{offset}")
            blobs.append(le.tobytes())
            offset += le.nbytes
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    Path(path).write_bytes(header + b"".join(blobs))


def _parse_tuple_or_int(v: str):
    if "," in v:
        return tuple(int(x) for x in v.split(","))
    return int(v)


def load_checkpoint(path):
    """Returns (ModelParams, meta dict of strings)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"\n\n")
    if end < 0:
        raise ValueError(f"{path}: missing header terminator")
    header, body = raw[:end].decode("utf-8"), raw[end + 2 :]
    arch_d, meta, entries = {}, {}, []
    version = None
    for line in header.split("\n"):
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: bad header line {line!r}")
        if key == "format_version":
            version = int(value)
        elif key.startswith("arch."):
            arch_d[key[5:]] = _parse_tuple_or_int(value)
        elif key.startswith("meta."):
            meta[key[5:]] = value
        elif key in ("param", "buffer"):
            name, shape, dtype, off = value.split(";")
            dims = tuple(int(s) for s in shape.split("x")) if shape else ()
            entries.append((key, name, dims, np.dtype(dtype), int(off)))
        else:
            raise ValueError(f"{path}: unknown header key {key!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {version}")
    for k in ("shared_channels", "scene_channels", "shared_kernel", "scene_kernel", "shared_pool", "scene_pool"):
        if isinstance(arch_d.get(k), int):
            arch_d[k] = (arch_d[k],)
    arch = Architecture.from_dict(arch_d)
    tensors, buffers = {}, {}
    for kind, name, dims, dtype, off in entries:
        n = math.prod(dims) * dtype.itemsize
        if off + n > len(body):
            raise ValueError(f"{path}: truncated data for {name}")
        arr = np.frombuffer(body, dtype=dtype, count=math.prod(dims), offset=off).reshape(dims)
        arr = arr.astype(dtype.newbyteorder("="))
        (tensors if kind == "param" else buffers)[name] = arr
    expected = param_shapes(arch)
    if list(tensors) != list(expected) or any(tensors[k].shape != s for k, s in expected.items()):
        raise ValueError(f"{path}: parameter manifest does not match the architecture")
    return ModelParams(arch, tensors, buffers), meta
