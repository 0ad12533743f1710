"""
Dense NCHW tensors with reverse-mode differentiation.

Every operation is a :class:`Function` subclass with a numpy ``forward`` and a
``backward`` that maps the output gradient to one gradient per input.  Graphs
are recorded implicitly through ``Tensor._node``; :func:`backward` sorts them
into a :class:`GradTape` and walks it in reverse.

Reductions use a fixed order (numpy row-major reductions, one BLAS call per
batch item) so forward and backward are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import GradCheckError, NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "Function",
    "GradTape",
    "RunningStats",
    "conv2d",
    "maxpool2d",
    "bilinear_upsample",
    "activation",
    "axis_softmax",
    "batchnorm2d",
    "add",
    "mul",
    "concat",
    "global_mean_pool",
    "linear",
    "reshape",
    "sum_all",
    "bce_with_logits",
    "backward",
    "grad_check",
    "GradCheckReport",
    "conv_output_size",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ELU_ALPHA = 1.0


class Tensor:
    """An immutable array that may take part in a differentiable graph.

    Parameters
    ----------
    data : array_like
        Values; integer input is promoted to float64.
    requires_grad : bool
        Whether gradients should flow to this tensor.
    """

    __slots__ = ("data", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False, _node: "Function | None" = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        else:
            arr = arr.view()
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._node = _node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """Base class for a differentiable operation.

    Subclasses implement ``forward(*arrays, **kwargs)`` returning an array and
    ``backward(grad)`` returning a tuple with one gradient (or None) per input.
    Anything needed by ``backward`` is stashed on ``self`` during ``forward``.
    """

    def __init__(self, inputs: Sequence[Tensor]):
        self.inputs = tuple(inputs)

    def forward(self, *args: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = [_as_tensor(t) for t in inputs]
        fn = cls(tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _node=fn if requires_grad else None)


def _check_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (N, C, H, W), got shape {x.shape}")


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def conv_output_size(size: int, kernel: int, dilation: int, padding: int, stride: int) -> int:
    """Spatial output length of a dilated convolution."""
    extent = dilation * (kernel - 1) + 1
    return (size + 2 * padding - extent) // stride + 1


# ---------------------------------------------------------------------------
# convolution


class Conv2d(Function):
    def forward(self, x, w, b=None, *, dilation=1, padding=0, stride=1):
        _check_4d(x, "conv2d input")
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"kernel must be (C_out, C_in, k, k), got {w.shape}")
        if dilation < 1 or stride < 1 or padding < 0:
            raise ValueError("dilation and stride must be positive, padding non-negative")
        n, c, h, wd = x.shape
        o, ci, k, _ = w.shape
        if ci != c:
            raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
        if b is not None and b.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {b.shape} != ({o},)")
        ho = conv_output_size(h, k, dilation, padding, stride)
        wo = conv_output_size(wd, k, dilation, padding, stride)
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"conv2d: non-positive output size ({ho}, {wo})")

        p, d, s = padding, dilation, stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = np.empty((n, c, k, k, ho, wo), dtype=np.result_type(x, w))
        for u in range(k):
            for v in range(k):
                cols[:, :, u, v] = xp[:, :, d * u : d * u + s * (ho - 1) + 1 : s,
                                      d * v : d * v + s * (wo - 1) + 1 : s]
        cols = cols.reshape(n, c * k * k, ho * wo)
        w2 = w.reshape(o, c * k * k)
        out = np.matmul(w2, cols)
        if b is not None:
            out += b[None, :, None]
        self.cols, self.w2 = cols, w2
        self.geom = (x.shape, w.shape, ho, wo, p, d, s)
        self.has_bias = b is not None
        return out.reshape(n, o, ho, wo)

    def backward(self, grad):
        (n, c, h, wd), (o, _, k, _), ho, wo, p, d, s = self.geom
        g = grad.reshape(n, o, ho * wo)
        dw = np.matmul(g, self.cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, k, k)
        dcols = np.matmul(self.w2.T, g).reshape(n, c, k, k, ho, wo)
        dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=grad.dtype)
        for u in range(k):
            for v in range(k):
                dxp[:, :, d * u : d * u + s * (ho - 1) + 1 : s,
                    d * v : d * v + s * (wo - 1) + 1 : s] += dcols[:, :, u, v]
        dx = dxp[:, :, p : p + h, p : p + wd] if p else dxp
        if self.has_bias:
            return dx, dw, g.sum(axis=(0, 2))
        return dx, dw


def conv2d(x, kernel, bias=None, *, dilation: int = 1, padding: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation with dilation.

    ``out[n,o,y,x] = sum_{i,u,v} in[n,i,y*s-p+d*u, x*s-p+d*v] * k[o,i,u,v]`` with
    zeros outside the input.
    """
    args = (x, kernel) if bias is None else (x, kernel, bias)
    return Conv2d.apply(*args, dilation=dilation, padding=padding, stride=stride)


# ---------------------------------------------------------------------------
# pooling and resampling


class MaxPool2d(Function):
    def forward(self, x, *, window, stride):
        _check_4d(x, "maxpool2d input")
        n, c, h, w = x.shape
        if window < 1 or stride < 1:
            raise ValueError("window and stride must be positive")
        if h < window or w < window:
            raise ShapeError(f"maxpool2d: window {window} larger than input {h}x{w}")
        ho = (h - window) // stride + 1
        wo = (w - window) // stride + 1
        win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(2, 3))
        win = win[:, :, ::stride, ::stride][:, :, :ho, :wo].reshape(n, c, ho, wo, window * window)
        # argmax returns the first maximum in scan order
        idx = win.argmax(axis=-1)
        self.idx, self.shape, self.window, self.stride = idx, x.shape, window, stride
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, c, h, w = self.shape
        k, s = self.window, self.stride
        _, _, ho, wo = grad.shape
        rows = np.arange(ho)[:, None] * s + self.idx // k
        cols = np.arange(wo)[None, :] * s + self.idx % k
        flat = (rows * w + cols).reshape(n * c, ho * wo)
        flat = flat + (np.arange(n * c) * (h * w))[:, None]
        dx = np.zeros(n * c * h * w, dtype=grad.dtype)
        if k <= s:
            dx[flat.ravel()] = grad.ravel()
        else:
            np.add.at(dx, flat.ravel(), grad.ravel())
        return (dx.reshape(n, c, h, w),)


def maxpool2d(x, window: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling; the backward pass routes to the first maximum in scan order."""
    return MaxPool2d.apply(x, window=window, stride=window if stride is None else stride)


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


class BilinearUpsample(Function):
    def forward(self, x, *, out_h, out_w):
        _check_4d(x, "bilinear_upsample input")
        h, w = x.shape[2:]
        if out_h < h or out_w < w:
            raise ShapeError(f"bilinear_upsample cannot downsample {h}x{w} -> {out_h}x{out_w}")
        self.ry = _interp_matrix(h, out_h, x.dtype)
        self.rx = _interp_matrix(w, out_w, x.dtype)
        return np.matmul(self.ry, np.matmul(x, self.rx.T))

    def backward(self, grad):
        return (np.matmul(self.ry.T, np.matmul(grad, self.rx)),)


def bilinear_upsample(x, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear interpolation to ``(out_h, out_w)``."""
    return BilinearUpsample.apply(x, out_h=out_h, out_w=out_w)


# ---------------------------------------------------------------------------
# element-wise maps


class Activation(Function):
    def forward(self, x, *, kind):
        self.kind = kind
        if kind == "relu":
            self.mask = x > 0
            return np.where(self.mask, x, 0).astype(x.dtype)
        if kind == "elu":
            self.mask = x > 0
            out = np.where(self.mask, x, ELU_ALPHA * np.expm1(np.minimum(x, 0)))
        elif kind == "sigmoid":
            out = expit(x)
        elif kind == "tanh":
            out = np.tanh(x)
        else:
            raise ValueError(f"unknown activation {kind!r}")
        self.out = out
        return out

    def backward(self, grad):
        kind = self.kind
        if kind == "relu":
            return (grad * self.mask,)
        if kind == "elu":
            return (grad * np.where(self.mask, 1.0, self.out + ELU_ALPHA),)
        if kind == "sigmoid":
            return (grad * self.out * (1.0 - self.out),)
        return (grad * (1.0 - self.out * self.out),)


def activation(x, kind: str) -> Tensor:
    """Element-wise ``relu``, ``elu`` (alpha 1), ``sigmoid`` or ``tanh``."""
    return Activation.apply(x, kind=kind)


_SOFTMAX_AXES = {"frequency": 2, "time": 3}


class AxisSoftmax(Function):
    def forward(self, x, *, axis):
        _check_4d(x, "axis_softmax input")
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = e / e.sum(axis=axis, keepdims=True)
        self.axis = axis
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def axis_softmax(x, axis: str) -> Tensor:
    """Softmax along the ``frequency`` (H) or ``time`` (W) axis of an NCHW map."""
    try:
        ax = _SOFTMAX_AXES[axis]
    except KeyError:
        raise ValueError(f"axis must be 'frequency' or 'time', got {axis!r}") from None
    return AxisSoftmax.apply(x, axis=ax)


class Add(Function):
    def forward(self, a, b):
        _same_shape(a, b, "add")
        return a + b

    def backward(self, grad):
        return grad, grad


class Mul(Function):
    def forward(self, a, b):
        _same_shape(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


# ---------------------------------------------------------------------------
# normalization


@dataclass
class RunningStats:
    """Per-channel running mean/variance owned by a batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


class BatchNorm2d(Function):
    def forward(self, x, gamma, beta, *, stats, train):
        _check_4d(x, "batchnorm2d input")
        c = x.shape[1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ShapeError(f"batchnorm2d: gamma/beta must have shape ({c},)")
        self.train = train
        self.gamma = gamma
        if train:
            m = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if stats is not None:
                unbiased = var * (m / max(m - 1, 1))
                stats.mean = ((1 - BN_MOMENTUM) * stats.mean + BN_MOMENTUM * mean).astype(stats.mean.dtype)
                stats.var = ((1 - BN_MOMENTUM) * stats.var + BN_MOMENTUM * unbiased).astype(stats.var.dtype)
        else:
            if stats is None:
                raise ValueError("eval-mode batchnorm needs running statistics")
            mean, var = stats.mean.astype(x.dtype), stats.var.astype(x.dtype)
        self.inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        return self.xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        xhat = self.xhat
        dgamma = (grad * xhat).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        dxhat = grad * self.gamma[None, :, None, None]
        inv = self.inv_std[None, :, None, None]
        if not self.train:
            return dxhat * inv, dgamma, dbeta
        m = grad.shape[0] * grad.shape[2] * grad.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = inv * (dxhat - s1 / m - xhat * s2 / m)
        return dx, dgamma, dbeta


def batchnorm2d(x, gamma, beta, stats: RunningStats | None = None, mode: str = "train") -> Tensor:
    """Per-channel batch normalization.

    ``mode="train"`` normalizes by batch statistics and, when ``stats`` is given,
    updates them in place with momentum 0.1 (running variance uses the unbiased
    batch estimate).  ``mode="eval"`` normalizes by ``stats``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return BatchNorm2d.apply(x, gamma, beta, stats=stats, train=mode == "train")


# ---------------------------------------------------------------------------
# structural ops and reductions


class Concat(Function):
    def forward(self, *xs):
        for x in xs:
            _check_4d(x, "concat input")
        ref = xs[0].shape
        for x in xs[1:]:
            if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
                raise ShapeError(f"concat: incompatible shapes {ref} and {x.shape}")
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=1))


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    return Concat.apply(*xs)


class GlobalMeanPool(Function):
    def forward(self, x):
        _check_4d(x, "global_mean_pool input")
        self.shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad):
        h, w = self.shape[2:]
        return (np.broadcast_to(grad / (h * w), self.shape).copy(),)


def global_mean_pool(x) -> Tensor:
    """Mean over both spatial axes; ``(N, C, H, W) -> (N, C, 1, 1)``."""
    return GlobalMeanPool.apply(x)


class Linear(Function):
    def forward(self, x, w, b):
        n = x.shape[0]
        flat = x.reshape(n, -1)
        if w.ndim != 2 or w.shape[1] != flat.shape[1]:
            raise ShapeError(f"linear: weight {w.shape} does not match flattened input {flat.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
        self.flat, self.w, self.in_shape = flat, w, x.shape
        return (flat @ w.T + b).reshape(n, w.shape[0], 1, 1)

    def backward(self, grad):
        g = grad.reshape(grad.shape[0], -1)
        return (g @ self.w).reshape(self.in_shape), g.T @ self.flat, g.sum(axis=0)


def linear(x, weight, bias) -> Tensor:
    """Affine map of the flattened input; output shape ``(N, out, 1, 1)``."""
    return Linear.apply(x, weight, bias)


class Reshape(Function):
    def forward(self, x, *, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    return Reshape.apply(x, shape=shape)


class SumAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.full(self.shape, grad, dtype=grad.dtype),)


def sum_all(x) -> Tensor:
    return SumAll.apply(x)


class BceWithLogits(Function):
    def forward(self, z, y):
        if z.size != y.size:
            raise ShapeError(f"bce: {z.size} logits but {y.size} labels")
        z = z.reshape(-1)
        y = y.reshape(-1).astype(z.dtype)
        self.z_shape = z.shape
        # max(z,0) - z*y + log(1 + exp(-|z|))
        loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
        self.p, self.y, self.n = expit(z), y, z.size
        return np.asarray(loss.mean(), dtype=z.dtype)

    def backward(self, grad):
        dz = grad * (self.p - self.y) / self.n
        return dz, None


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels."""
    return BceWithLogits.apply(logits, labels)


# ---------------------------------------------------------------------------
# reverse pass


@dataclass
class TapeRecord:
    node: Function
    output: Tensor


@dataclass
class GradTape:
    """Operation records in topological order (inputs before outputs)."""

    records: list[TapeRecord] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "GradTape":
        order: list[TapeRecord] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if t._node is None:
                continue
            if expanded:
                order.append(TapeRecord(t._node, t))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in reversed(t._node.inputs):
                if parent._node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def is_topological(self) -> bool:
        position = {id(r.output): i for i, r in enumerate(self.records)}
        for i, r in enumerate(self.records):
            for t in r.node.inputs:
                if id(t) in position and position[id(t)] >= i:
                    return False
        return True


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every ``requires_grad`` leaf.

    Returns a dict keyed by leaf tensor (identity).  Leaves that the loss does
    not depend on through differentiable paths get zeros.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise ValueError("loss is not the output of any recorded operation")
    tape = GradTape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g_out = grads.pop(id(rec.output), None)
        if g_out is None:
            continue
        in_grads = rec.node.backward(g_out)
        for t, g in zip(rec.node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if t._node is None:
                leaves[id(t)] = t
            key = id(t)
            grads[key] = g if key not in grads else grads[key] + g
    return {t: grads.get(key, np.zeros_like(t.data)).reshape(t.shape) for key, t in leaves.items()}


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Per-parameter relative errors from :func:`grad_check`."""

    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def raise_if_failed(self) -> None:
        if not self.passed:
            worst = max(self.errors, key=self.errors.get)
            raise GradCheckError(
                f"gradient check failed: {worst} rel. error {self.errors[worst]:.3e} >= {self.tolerance:.1e}"
            )


def grad_check(
    fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    kink_halvings: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``fn`` maps a dict of parameter tensors to a scalar loss.  For each
    parameter the error is ``||g_analytic - g_numeric|| / max(||g_analytic||,
    ||g_numeric||, floor)`` over the checked entries; the floor keeps
    structurally zero gradients from turning rounding noise into a failure.
    ``max_entries`` limits the number of (randomly chosen) entries probed per
    parameter.

    Networks built from relu and max-pool are only piecewise smooth, and a
    probe of width ``h`` can straddle a kink.  With ``kink_halvings > 0`` the
    step is halved (at most that many times) until two consecutive central
    differences agree to ``1e-4``; on smooth entries the first comparison
    already agrees and the estimate is the plain step-``h`` difference.
    """
    rng = np.random.default_rng(seed)
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    analytic = backward(fn(leaves))
    fixed = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in params.items()}

    def central(name, base, i, step):
        vals = []
        for s in (step, -step):
            probe = base.copy()
            probe.flat[i] += s
            vals.append(float(fn({**fixed, name: Tensor(probe)}).data))
        return (vals[0] - vals[1]) / (2 * step)

    errors = {}
    for name, value in params.items():
        base = np.array(value, dtype=np.float64)
        idx = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            idx = np.sort(rng.choice(base.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            step = h
            est = central(name, base, i, step)
            for _ in range(kink_halvings):
                step /= 2
                finer = central(name, base, i, step)
                agree = abs(finer - est) <= 1e-4 * max(abs(finer), abs(est), floor)
                if agree:
                    break
                est = finer
            numeric[j] = est
        a = analytic.get(leaves[name], np.zeros_like(base)).ravel()[idx]
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric), floor)
        errors[name] = float(np.linalg.norm(a - numeric) / scale)
    return GradCheckReport(errors, tolerance)
