"""
A U-net attention filter in front of a dilated residual classifier.

The filter computes a heatmap ``A = phi(U(S))`` with the same shape as the
input map ``S`` and passes ``A * S + S`` on to the classifier.  The classifier
is a 3x3 stem followed by dilated residual modules (pre-activation residual
unit, 2x2 max-pool, dilated 3x3 conv) and a 1x1-conv / mean-pool / affine head
producing one logit per utterance.

Parameters live in plain dicts of numpy arrays keyed by dotted names, in a
fixed declaration order; the same order is used for initialization and for
the checkpoint layout.
"""

from __future__ import annotations

import copy
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import RunningStats, Tensor
from .errors import CheckpointFormatError, CorruptCheckpointError, ShapeError

NONLINEARITIES = ("sigmoid", "tanh", "softmaxT", "softmaxF")
DRN_DILATIONS = (2, 4, 4, 8, 8)
DRN_IN_CHANNELS = (16, 32, 32, 32, 32)
DRN_OUT_CHANNELS = (32, 32, 32, 32, 32)

CHECKPOINT_MAGIC = b"AFNC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AfConfig:
    nonlinearity: str = "sigmoid"
    unet_levels: int = 4
    unet_channels: int = 8
    use_residual_S: bool = True
    unet_activation: str = "relu"

    def __post_init__(self):
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.unet_levels < 1 or self.unet_channels < 1:
            raise ValueError("unet_levels and unet_channels must be >= 1")
        if self.unet_activation not in ("relu", "elu"):
            raise ValueError("unet_activation must be 'relu' or 'elu'")


@dataclass(frozen=True)
class DrnConfig:
    """Dilated residual network layout; defaults are the five-module stack."""

    dilations: tuple[int, ...] = DRN_DILATIONS
    in_channels: tuple[int, ...] = DRN_IN_CHANNELS
    out_channels: tuple[int, ...] = DRN_OUT_CHANNELS
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(self.dilations))
        object.__setattr__(self, "in_channels", tuple(self.in_channels))
        object.__setattr__(self, "out_channels", tuple(self.out_channels))
        n = len(self.dilations)
        if n < 1 or len(self.in_channels) != n or len(self.out_channels) != n:
            raise ValueError("dilations, in_channels and out_channels must have equal non-zero length")
        for j in range(1, n):
            if self.in_channels[j] != self.out_channels[j - 1]:
                raise ValueError(f"block {j} input channels do not match block {j - 1} output")
        if self.activation not in ("relu", "elu"):
            raise ValueError("DRN activation must be 'relu' or 'elu'")

    @classmethod
    def micro(cls, n_blocks: int = 2, activation: str = "relu") -> "DrnConfig":
        """The first ``n_blocks`` modules of the full stack."""
        return cls(
            DRN_DILATIONS[:n_blocks],
            DRN_IN_CHANNELS[:n_blocks],
            DRN_OUT_CHANNELS[:n_blocks],
            activation,
        )

    @property
    def n_blocks(self) -> int:
        return len(self.dilations)

    @property
    def is_full(self) -> bool:
        return (self.dilations, self.in_channels, self.out_channels) == (
            DRN_DILATIONS, DRN_IN_CHANNELS, DRN_OUT_CHANNELS)


@dataclass
class AfnModel:
    """Parameters, batch-norm statistics and configuration of one network.

    ``af=None`` gives the plain dilated residual network without a filter.
    """

    af: AfConfig | None
    drn: DrnConfig
    input_shape: tuple[int, int]
    params: dict[str, np.ndarray]
    stats: dict[str, RunningStats] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def copy(self) -> "AfnModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "AfnModel":
        out = self.copy()
        out.params = {k: v.astype(dtype) for k, v in out.params.items()}
        out.stats = {k: RunningStats(s.mean.astype(dtype), s.var.astype(dtype)) for k, s in out.stats.items()}
        return out

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


# ---------------------------------------------------------------------------
# parameter layout


def _conv(name, c_out, c_in, k, bias=True):
    spec = [(f"{name}.w", (c_out, c_in, k, k), "weight")]
    if bias:
        spec.append((f"{name}.b", (c_out,), "bias"))
    return spec


def _bn(name, c):
    return [(f"{name}.gamma", (c,), "gamma"), (f"{name}.beta", (c,), "beta")]


def parameter_layout(af: AfConfig | None, drn: DrnConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """``(name, shape, kind)`` for every parameter, in declaration order."""
    spec = []
    if af is not None:
        c = af.unet_channels
        for i in range(af.unet_levels):
            spec += _conv(f"af.enc{i}", c, 1 if i == 0 else c, 3)
        for i in reversed(range(af.unet_levels)):
            spec += _conv(f"af.dec{i}", c, 2 * c, 3)
        spec += _conv("af.out", 1, c, 1)
    spec += _conv("drn.stem", drn.in_channels[0], 1, 3)
    for j, (ci, co) in enumerate(zip(drn.in_channels, drn.out_channels)):
        p = f"drn.b{j}"
        spec += _bn(f"{p}.bn1", ci) + _conv(f"{p}.conv1", co, ci, 3, bias=False)
        spec += _bn(f"{p}.bn2", co) + _conv(f"{p}.conv2", co, co, 3)
        if ci != co:
            spec += _conv(f"{p}.proj", co, ci, 1, bias=False)
        spec += _conv(f"{p}.dil", co, co, 3)
    spec += _conv("drn.head.conv", 1, drn.out_channels[-1], 1)
    spec += [("drn.head.fc.w", (1, 1), "weight"), ("drn.head.fc.b", (1,), "bias")]
    return spec


def bn_layers(drn: DrnConfig) -> list[tuple[str, int]]:
    out = []
    for j, (ci, co) in enumerate(zip(drn.in_channels, drn.out_channels)):
        out += [(f"drn.b{j}.bn1", ci), (f"drn.b{j}.bn2", co)]
    return out


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    return shape[1], shape[0]


def xavier_init(model: AfnModel, seed: int = 0) -> AfnModel:
    """Re-draw all weights from U(-a, a), ``a = sqrt(6 / (fan_in + fan_out))``.

    Biases and BN shifts become 0, BN scales 1, running statistics are reset.
    """
    rng = np.random.default_rng(seed)
    dtype = model.dtype if model.params else np.float32
    params = {}
    for name, shape, kind in parameter_layout(model.af, model.drn):
        if kind == "weight":
            fan_in, fan_out = _fans(shape)
            a = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-a, a, size=shape).astype(dtype)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    out = model.copy()
    out.params = params
    out.stats = {name: RunningStats.fresh(c, dtype) for name, c in bn_layers(model.drn)}
    return out


def build_model(
    input_shape: tuple[int, int],
    af: AfConfig | None = AfConfig(),
    drn: DrnConfig = DrnConfig(),
    seed: int = 0,
    dtype=np.float32,
) -> AfnModel:
    """Create a Xavier-initialized model for ``F x T`` inputs."""
    check_input_shape(input_shape, af, drn)
    shell = AfnModel(af, drn, tuple(input_shape), {"_": np.zeros(1, dtype=dtype)})
    return xavier_init(shell, seed)


def check_input_shape(shape: tuple[int, int], af: AfConfig | None, drn: DrnConfig) -> None:
    need = 2 ** drn.n_blocks
    if af is not None:
        need = max(need, 2 ** af.unet_levels)
    if min(shape) < need:
        raise ShapeError(f"input {shape[0]}x{shape[1]} too small: each spatial dim must be >= {need}")


# ---------------------------------------------------------------------------
# forward passes


def _as_input(S, dtype) -> Tensor:
    if isinstance(S, Tensor):
        x = S
    else:
        arr = np.asarray(S, dtype=dtype)
        if arr.ndim == 2:
            arr = arr[None, None]
        elif arr.ndim == 3:
            arr = arr[:, None]
        x = Tensor(arr)
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"expected input of shape (N, 1, F, T), got {x.shape}")
    return x


def _phi(u: Tensor, nonlinearity: str) -> Tensor:
    if nonlinearity == "softmaxT":
        return ag.axis_softmax(u, "time")
    if nonlinearity == "softmaxF":
        return ag.axis_softmax(u, "frequency")
    return ag.activation(u, nonlinearity)


def unet(S: Tensor, params: dict[str, Tensor], cfg: AfConfig) -> Tensor:
    """U-net pre-activation map with the same spatial shape as ``S``."""
    act = cfg.unet_activation
    h, w = S.shape[2:]
    if min(h, w) < 2 ** cfg.unet_levels:
        raise ShapeError(f"input {h}x{w} too small for {cfg.unet_levels} U-net levels")
    skips = []
    x = S
    for i in range(cfg.unet_levels):
        x = ag.activation(ag.conv2d(x, params[f"af.enc{i}.w"], params[f"af.enc{i}.b"], padding=1), act)
        skips.append(x)
        x = ag.maxpool2d(x, 2)
    for i in reversed(range(cfg.unet_levels)):
        skip = skips[i]
        x = ag.bilinear_upsample(x, skip.shape[2], skip.shape[3])
        x = ag.concat([x, skip])
        x = ag.activation(ag.conv2d(x, params[f"af.dec{i}.w"], params[f"af.dec{i}.b"], padding=1), act)
    return ag.conv2d(x, params["af.out.w"], params["af.out.b"])


def attentive_filter(S, params: dict[str, Tensor], cfg: AfConfig) -> tuple[Tensor, Tensor]:
    """Return ``(S_star, A)`` with ``A = phi(U(S))`` and ``S_star = A*S (+ S)``."""
    S = _as_input(S, next(iter(params.values())).dtype)
    A = _phi(unet(S, params, cfg), cfg.nonlinearity)
    S_star = ag.mul(A, S)
    if cfg.use_residual_S:
        S_star = ag.add(S_star, S)
    return S_star, A


def _block_params(params: dict[str, Tensor], j: int) -> dict[str, Tensor]:
    prefix = f"drn.b{j}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def residual_unit(x: Tensor, bp: dict[str, Tensor], act: str, stats=None, mode: str = "eval") -> Tensor:
    stats = stats or {}
    h = ag.activation(ag.batchnorm2d(x, bp["bn1.gamma"], bp["bn1.beta"], stats.get("bn1"), mode), act)
    # no conv1 bias: bn2 would cancel it
    r = ag.conv2d(h, bp["conv1.w"], padding=1)
    r = ag.activation(ag.batchnorm2d(r, bp["bn2.gamma"], bp["bn2.beta"], stats.get("bn2"), mode), act)
    r = ag.conv2d(r, bp["conv2.w"], bp["conv2.b"], padding=1)
    shortcut = ag.conv2d(x, bp["proj.w"]) if "proj.w" in bp else x
    return ag.add(r, shortcut)


def drm_forward(
    x: Tensor,
    block_params: dict[str, Tensor],
    dilation: int,
    activation: str = "relu",
    stats: dict[str, RunningStats] | None = None,
    mode: str = "eval",
) -> Tensor:
    """One dilated residual module: residual unit, 2x2 max-pool, dilated 3x3 conv.

    ``block_params`` uses block-local names (``bn1.gamma``, ``conv1.w``, ...);
    ``stats`` maps ``bn1``/``bn2`` to running statistics.
    """
    if min(x.shape[2:]) < 2:
        raise ShapeError(f"spatial dims {x.shape[2:]} too small to pool")
    y = residual_unit(x, block_params, activation, stats, mode)
    y = ag.maxpool2d(y, 2)
    return ag.conv2d(y, block_params["dil.w"], block_params["dil.b"], dilation=dilation, padding=dilation)


def drn_blocks(x: Tensor, params, drn: DrnConfig, stats=None, mode="eval") -> list[Tensor]:
    """Stem plus every module; returns the output of each module."""
    stats = stats or {}
    x = ag.conv2d(x, params["drn.stem.w"], params["drn.stem.b"], padding=1)
    outs = []
    for j, d in enumerate(drn.dilations):
        block_stats = {k: stats[f"drn.b{j}.{k}"] for k in ("bn1", "bn2") if f"drn.b{j}.{k}" in stats}
        x = drm_forward(x, _block_params(params, j), d, drn.activation, block_stats, mode)
        outs.append(x)
    return outs


def drn_head(x: Tensor, params) -> Tensor:
    x = ag.conv2d(x, params["drn.head.conv.w"], params["drn.head.conv.b"])
    x = ag.linear(ag.global_mean_pool(x), params["drn.head.fc.w"], params["drn.head.fc.b"])
    return ag.reshape(x, (x.shape[0],))


def afn_forward(
    S,
    model: AfnModel,
    mode: str = "eval",
    params: dict[str, Tensor] | None = None,
) -> tuple[Tensor, Tensor | None]:
    """Logits (shape ``(N,)``) and attention heatmaps (``(N, 1, F, T)``).

    ``S`` may be ``(F, T)``, ``(N, F, T)`` or ``(N, 1, F, T)``.  In ``train``
    mode batch-norm uses batch statistics and updates ``model.stats``.  Pass
    ``params`` (tensors with ``requires_grad``) to differentiate.
    """
    if params is None:
        params = model.tensors()
    x = _as_input(S, model.dtype)
    A = None
    if model.af is not None:
        x, A = attentive_filter(x, params, model.af)
    outs = drn_blocks(x, params, model.drn, model.stats, mode)
    return drn_head(outs[-1], params), A


def predict(model: AfnModel, X: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Eval-mode logits for a stack of maps ``(N, F, T)``."""
    out = []
    for i in range(0, len(X), batch_size):
        logits, _ = afn_forward(X[i : i + batch_size], model, "eval")
        out.append(logits.data)
    return np.concatenate(out) if out else np.zeros(0, dtype=model.dtype)


def heatmap(model: AfnModel, S) -> np.ndarray:
    """The ``F x T`` attention heatmap for a single map."""
    if model.af is None:
        raise ValueError("model has no attentive filter")
    S = np.asarray(S)
    if S.shape[-2:] != tuple(model.input_shape):
        raise ShapeError(f"feature map {S.shape[-2:]} does not match model input {tuple(model.input_shape)}")
    _, A = afn_forward(S.reshape(1, 1, *S.shape[-2:]), model, "eval")
    return A.data[0, 0]


# ---------------------------------------------------------------------------
# receptive fields


@dataclass
class BlockRF:
    block: int
    theoretical: int
    empirical: tuple[int, int]
    contiguous: bool


def rf_recurrence(layers: list[tuple[int, int, int]]) -> list[int]:
    """Receptive field after each ``(kernel, dilation, stride)`` layer.

    ``rf += (k - 1) * d * jump; jump *= stride``, starting from ``rf = jump = 1``.
    """
    rf, jump, out = 1, 1, []
    for k, d, s in layers:
        rf += (k - 1) * d * jump
        jump *= s
        out.append(rf)
    return out


def theoretical_rf(drn: DrnConfig) -> list[int]:
    """Per-module receptive field side length, stem included.

    The deepest path through a module is two 3x3 residual convs, the 2x2/2
    max-pool and the dilated 3x3 conv; the 1x1 shortcut never widens it.
    """
    layers = [(3, 1, 1)]
    ends = []
    for d in drn.dilations:
        layers += [(3, 1, 1), (3, 1, 1), (2, 1, 2), (3, d, 1)]
        ends.append(len(layers) - 1)
    rf = rf_recurrence(layers)
    return [rf[i] for i in ends]


def _support_box(mask: np.ndarray) -> tuple[tuple[int, int], bool]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    box = mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    return (int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1)), bool(box.all())


def empirical_rf(
    model: AfnModel,
    probe_shape: tuple[int, int],
    n_draws: int = 6,
    seed: int = 0,
) -> list[tuple[tuple[int, int], bool]]:
    """Gradient-support receptive field of each module's centre unit.

    For every module, the union over ``n_draws`` random inputs of the input
    positions with non-zero gradient is taken (max-pool routes gradient to a
    single input per window, so one draw gives a sparse support).  Returns
    ``((height, width), contiguous)`` per module, measured on the DRN alone in
    eval mode.
    """
    rng = np.random.default_rng(seed)
    params = model.tensors()
    n = model.drn.n_blocks
    masks = [np.zeros(probe_shape, dtype=bool) for _ in range(n)]
    for _ in range(n_draws):
        x = Tensor(rng.standard_normal((1, 1, *probe_shape)).astype(model.dtype), requires_grad=True)
        outs = drn_blocks(x, params, model.drn, model.stats, "eval")
        for j, y in enumerate(outs):
            _, c, h, w = y.shape
            sel = np.zeros(y.shape, dtype=y.dtype)
            sel[0, :, h // 2, w // 2] = 1.0
            g = ag.backward(ag.sum_all(ag.mul(y, Tensor(sel))))[x]
            masks[j] |= g[0, 0] != 0
    return [_support_box(m) for m in masks]


def receptive_field_report(
    model: AfnModel,
    probe_length: int | None = None,
    n_draws: int = 6,
    seed: int = 0,
) -> list[BlockRF]:
    """Theoretical and empirical receptive field per dilated residual module.

    The empirical height and width come from two thin probes, ``L x m`` and
    ``m x L`` with ``m = 2**n_blocks`` and ``L`` (default: smallest multiple of
    ``m`` exceeding the largest theoretical field), which keeps the cost linear
    in ``L``.  ``contiguous`` requires both supports to fill their boxes.
    """
    theo = theoretical_rf(model.drn)
    m = 2 ** model.drn.n_blocks
    if probe_length is None:
        probe_length = (theo[-1] // m + 1) * m
    tall = empirical_rf(model, (probe_length, m), n_draws, seed)
    wide = empirical_rf(model, (m, probe_length), n_draws, seed + 1)
    return [
        BlockRF(j, t, (h[0][0], w[0][1]), h[1] and w[1])
        for j, (t, h, w) in enumerate(zip(theo, tall, wide))
    ]


# ---------------------------------------------------------------------------
# checkpoints

_U32 = struct.Struct("<I")


def _config_dict(model: AfnModel) -> dict:
    return {
        "af": None if model.af is None else asdict(model.af),
        "drn": asdict(model.drn),
        "input_shape": list(model.input_shape),
    }


def _tensors_in_order(model: AfnModel) -> list[tuple[str, np.ndarray]]:
    items = [(name, model.params[name]) for name, _, _ in parameter_layout(model.af, model.drn)]
    for name, _ in bn_layers(model.drn):
        items.append((f"{name}.running_mean", model.stats[name].mean))
        items.append((f"{name}.running_var", model.stats[name].var))
    return items


def save_checkpoint(model: AfnModel, path: str | Path) -> None:
    """Write the ``AFNC`` format; values are stored as little-endian float32.

    Layout: magic, version, config length + UTF-8 JSON, tensor count, then per
    tensor its name, rank, dims and data; a CRC32 of all preceding bytes ends
    the file.
    """
    chunks = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION)]
    cfg = json.dumps(_config_dict(model), sort_keys=True).encode()
    chunks += [_U32.pack(len(cfg)), cfg]
    tensors = _tensors_in_order(model)
    chunks.append(_U32.pack(len(tensors)))
    for name, arr in tensors:
        raw = name.encode()
        chunks += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        chunks += [_U32.pack(d) for d in arr.shape]
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(chunks)
    Path(path).write_bytes(blob + _U32.pack(zlib.crc32(blob)))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path: str | Path) -> AfnModel:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not an AFNC checkpoint (magic {blob[:4]!r})")
    if len(blob) < 12:
        raise CorruptCheckpointError(f"{path}: truncated checkpoint")
    body, crc = blob[:-4], _U32.unpack(blob[-4:])[0]
    r = _Reader(body, path)
    r.take(4)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if zlib.crc32(body) != crc:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    cfg = json.loads(r.take(r.u32()).decode())
    af = None if cfg["af"] is None else AfConfig(**cfg["af"])
    drn = DrnConfig(**cfg["drn"])
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise CorruptCheckpointError(f"{path}: trailing bytes after tensors")

    params = {}
    for name, shape, _ in parameter_layout(af, drn):
        if name not in tensors or tensors[name].shape != shape:
            raise CorruptCheckpointError(f"{path}: missing or mis-shaped tensor {name}")
        params[name] = tensors[name]
    stats = {
        name: RunningStats(tensors[f"{name}.running_mean"], tensors[f"{name}.running_var"])
        for name, _ in bn_layers(drn)
    }
    return AfnModel(af, drn, tuple(cfg["input_shape"]), params, stats, version)
