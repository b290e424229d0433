"""Dense-tensor reverse-mode autodiff plus the shared numeric utilities.

The training objective only needs a small, fixed set of primitives (matmul,
1D/2D valid convolutions, relu, sigmoid, softmax, elementwise arithmetic,
reductions, gradient reversal and a fused stable sigmoid-BCE), so the tape
is deliberately minimal: every op records one backward closure on the active
tape, and ``GradTape.backward`` replays them in exact reverse order of the
forward pass. Ops never mutate their inputs; float32 is the working dtype
and float64 is used by the finite-difference checks.

Also here: the spectral transforms (real FFT split into re/im, orthonormal
DCT-II, Haar pyramid), Adam with decoupled weight decay, cosine annealing
and global gradient-norm clipping. All of it is plain numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GradTape",
    "add",
    "sub",
    "mul",
    "div",
    "square",
    "sqrt",
    "log",
    "relu",
    "sigmoid",
    "softmax",
    "matmul",
    "conv1d",
    "conv2d",
    "reduce_sum",
    "reduce_mean",
    "concat",
    "reshape",
    "grad_reverse",
    "sigmoid_bce",
    "fft_spectrum",
    "dct_spectrum",
    "haar_spectrum",
    "OptimState",
    "adam_init",
    "adam_step",
    "cosine_lr",
    "clip_grad_norm",
    "gradient_check",
]

DEFAULT_DTYPE = np.float32


class Tensor:
    """A shaped float buffer with an optional gradient slot.

    ``data`` is always a contiguous numpy array (float32 unless the caller
    asks otherwise). ``grad`` stays ``None`` until backward reaches this
    tensor; a parameter that never appears on the tape therefore has zero
    gradient by convention.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # ascontiguousarray would promote 0-d scalars to 1-d, keep rank as is
        self.data = arr.copy() if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        # never in place: upstream grads may be shared or read-only views
        self.grad = g if self.grad is None else self.grad + g

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


_TAPE_STACK: List["GradTape"] = []


class GradTape:
    """Ordered record of forward primitives for one backward replay."""

    def __init__(self):
        self._entries: List[Tuple[str, Callable[[], None]]] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, name: str, out: "Tensor", backward: Callable[[], None]):
        self._entries.append((name, out, backward))

    def backward(self, loss: Tensor):
        """Seed d(loss)/d(loss) = 1 and replay entries newest-first."""
        if loss.data.size != 1:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        if not self._entries:
            raise RuntimeError("backward called on an empty tape (no forward was recorded)")
        loss.accumulate(np.ones_like(loss.data))
        for _name, out, fn in reversed(self._entries):
            if out.grad is not None:  # nodes the loss never touched stay silent
                fn()


def _active_tape() -> Optional[GradTape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_tensor(v, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(v, Tensor):
        return v
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(v), requires_grad=False, dtype=dtype)


def _record(out: Tensor, name: str, backward: Callable[[], None]):
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(name, out, backward)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    _record(out, "add", backward)
    return out


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    _record(out, "sub", backward)
    return out


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    _record(out, "mul", backward)
    return out


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data / b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    _record(out, "div", backward)
    return out


def square(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data * a.data, requires_grad=a.requires_grad)

    def backward():
        a.accumulate(2.0 * a.data * out.grad)

    _record(out, "square", backward)
    return out


def sqrt(a) -> Tensor:
    """Element-wise square root. Inputs must be strictly positive."""
    a = _as_tensor(a)
    if a.data.size and float(a.data.min()) <= 0.0:
        raise ValueError("sqrt requires strictly positive inputs")
    root = np.sqrt(a.data)
    out = Tensor(root, requires_grad=a.requires_grad)

    def backward():
        a.accumulate(out.grad * 0.5 / root)

    _record(out, "sqrt", backward)
    return out


def log(a) -> Tensor:
    """Natural log. Inputs must be strictly positive."""
    a = _as_tensor(a)
    if a.data.size and float(a.data.min()) <= 0.0:
        raise ValueError("log expects strictly positive inputs")
    out = Tensor(np.log(a.data), requires_grad=a.requires_grad)

    def backward():
        a.accumulate(out.grad / a.data)

    _record(out, "log", backward)
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=a.requires_grad)

    def backward():
        a.accumulate(out.grad * (a.data > 0.0))

    _record(out, "relu", backward)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # stable in both tails
    x = a.data
    y = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y.astype(x.dtype, copy=False), requires_grad=a.requires_grad)

    def backward():
        a.accumulate(out.grad * out.data * (1.0 - out.data))

    _record(out, "sigmoid", backward)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def backward():
        g = out.grad
        inner = (g * out.data).sum(axis=axis, keepdims=True)
        a.accumulate(out.data * (g - inner))

    _record(out, "softmax", backward)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    """log(softmax(a)) computed as a - logsumexp(a), stable in both tails."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y, requires_grad=a.requires_grad)

    def backward():
        g = out.grad
        p = np.exp(out.data)
        a.accumulate(g - p * g.sum(axis=axis, keepdims=True))

    _record(out, "log_softmax", backward)
    return out


def sigmoid_bce(logits, targets) -> Tensor:
    """Per-element binary cross-entropy of sigmoid(logits) against targets.

    Computed from logits with the usual max/log1p rearrangement so neither
    tail produces log(0). Targets are treated as constants and may be
    fractional (a 0.5 target is valid and gives the confusion value ln 2 at
    logit 0).
    """
    a = _as_tensor(logits)
    t = np.asarray(targets, dtype=a.data.dtype)
    z = a.data
    loss = np.maximum(z, 0.0) - t * z + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(loss, requires_grad=a.requires_grad)

    def backward():
        p = np.where(z >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        a.accumulate(out.grad * (p - t))

    _record(out, "sigmoid_bce", backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra and convolutions


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul is 2D only, got {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    _record(out, "matmul", backward)
    return out


def conv1d(x, w, stride: int = 1) -> Tensor:
    """Valid 1D convolution (really cross-correlation), x (N,Cin,L), w (Cout,Cin,k)."""
    x = _as_tensor(x)
    w = _as_tensor(w, like=x)
    n, cin, length = x.data.shape
    cout, cin_w, k = w.data.shape
    if cin != cin_w:
        raise ValueError(f"conv1d channel mismatch: input {cin}, kernel {cin_w}")
    if length < k:
        raise ValueError(f"conv1d input length {length} shorter than kernel {k}")
    windows = sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]  # (N,Cin,Lo,k)
    lo = windows.shape[2]
    out_data = np.tensordot(windows, w.data, axes=((1, 3), (1, 2)))  # (N,Lo,Cout)
    out = Tensor(
        np.ascontiguousarray(out_data.transpose(0, 2, 1)),
        requires_grad=x.requires_grad or w.requires_grad,
    )

    def backward():
        g = out.grad  # (N,Cout,Lo)
        if w.requires_grad:
            dw = np.tensordot(g, windows, axes=((0, 2), (0, 2)))  # (Cout,Cin,k)
            w.accumulate(dw)
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for j in range(k):
                contrib = np.tensordot(g, w.data[:, :, j], axes=(1, 0))  # (N,Lo,Cin)
                dx[:, :, j : j + stride * lo : stride] += contrib.transpose(0, 2, 1)
            x.accumulate(dx)

    _record(out, "conv1d", backward)
    return out


def conv2d(x, w, pad: int = 0) -> Tensor:
    """Stride-1 2D convolution with symmetric zero padding.

    x (N,Cin,H,W), w (Cout,Cin,kh,kw) -> (N,Cout,H-kh+1+2p,W-kw+1+2p).
    """
    x = _as_tensor(x)
    w = _as_tensor(w, like=x)
    n, cin, h, wd = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin}, kernel {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ValueError("conv2d kernel larger than padded input")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (N,Cin,Ho,Wo,kh,kw)
    ho, wo = win.shape[2], win.shape[3]
    out_data = np.tensordot(win, w.data, axes=((1, 4, 5), (1, 2, 3)))  # (N,Ho,Wo,Cout)
    out = Tensor(
        np.ascontiguousarray(out_data.transpose(0, 3, 1, 2)),
        requires_grad=x.requires_grad or w.requires_grad,
    )

    def backward():
        g = out.grad  # (N,Cout,Ho,Wo)
        if w.requires_grad:
            dw = np.tensordot(g, win, axes=((0, 2, 3), (0, 2, 3)))  # (Cout,Cin,kh,kw)
            w.accumulate(dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, w.data[:, :, i, j], axes=(1, 0))  # (N,Ho,Wo,Cin)
                    dxp[:, :, i : i + ho, j : j + wo] += contrib.transpose(0, 3, 1, 2)
            dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
            x.accumulate(dx)

    _record(out, "conv2d", backward)
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)

    def backward():
        a.accumulate(_expand_reduced(out.grad, a.data.shape, axis, keepdims))

    _record(out, "reduce_sum", backward)
    return out


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)
    count = a.data.size / max(out.data.size, 1)

    def backward():
        a.accumulate(_expand_reduced(out.grad, a.data.shape, axis, keepdims) / count)

    _record(out, "reduce_mean", backward)
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), requires_grad=any(t.requires_grad for t in ts))
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, start, stop in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(start), int(stop))
                t.accumulate(g[tuple(sl)])

    _record(out, "concat", backward)
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)

    def backward():
        a.accumulate(out.grad.reshape(a.data.shape))

    _record(out, "reshape", backward)
    return out


def grad_reverse(a, lam: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -lam."""
    a = _as_tensor(a)
    out = Tensor(a.data, requires_grad=a.requires_grad)

    def backward():
        a.accumulate(-lam * out.grad)

    _record(out, "grad_reverse", backward)
    return out


# ---------------------------------------------------------------------------
# spectral transforms (pure forward utilities, no tape involvement)


def _check_spectrum(s) -> np.ndarray:
    arr = np.asarray(s, dtype=np.float64)
    if arr.shape[-1] < 2:
        raise ValueError(f"spectrum needs at least 2 bands, got {arr.shape[-1]}")
    if not np.isfinite(arr).all():
        raise ValueError("spectrum contains non-finite values")
    return arr


def fft_spectrum(s) -> Tuple[np.ndarray, np.ndarray]:
    """Real FFT of a spectrum (last axis), returned as (real, imag) parts.

    Output length is floor(C/2)+1 per part, numpy's one-sided convention.
    """
    arr = _check_spectrum(s)
    spec = np.fft.rfft(arr, axis=-1)
    return np.ascontiguousarray(spec.real), np.ascontiguousarray(spec.imag)


_DCT_CACHE: dict = {}


def _dct_matrix(c: int) -> np.ndarray:
    m = _DCT_CACHE.get(c)
    if m is None:
        k = np.arange(c)[:, None]
        n = np.arange(c)[None, :]
        m = math.sqrt(2.0 / c) * np.cos(math.pi * (2 * n + 1) * k / (2.0 * c))
        m[0] *= 1.0 / math.sqrt(2.0)
        _DCT_CACHE[c] = m
    return m


def dct_spectrum(s) -> np.ndarray:
    """Orthonormal DCT-II over the last axis (energy preserving)."""
    arr = _check_spectrum(s)
    m = _dct_matrix(arr.shape[-1])
    return arr @ m.T


def haar_spectrum(s) -> np.ndarray:
    """Multi-level orthonormal Haar pyramid over the last axis.

    Inputs whose length is not a power of two are edge-padded up to the next
    one. Coefficient order is [approximation, coarsest detail, ..., finest
    detail]; energy matches the padded signal exactly.
    """
    arr = _check_spectrum(s)
    c = arr.shape[-1]
    target = 1 << (c - 1).bit_length()
    if target != c:
        padding = [(0, 0)] * (arr.ndim - 1) + [(0, target - c)]
        arr = np.pad(arr, padding, mode="edge")
    approx = arr
    details = []
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    while approx.shape[-1] > 1:
        even = approx[..., 0::2]
        odd = approx[..., 1::2]
        details.append((even - odd) * inv_sqrt2)
        approx = (even + odd) * inv_sqrt2
    return np.concatenate([approx] + list(reversed(details)), axis=-1)


# ---------------------------------------------------------------------------
# optimizer helpers (pure functions of their inputs)


@dataclass
class OptimState:
    """Adam moments and hyperparameters. Treated as immutable by convention."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int
    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scales: Optional[Tuple[float, ...]] = None


def adam_init(params: Sequence[np.ndarray], lr: float, weight_decay: float = 0.0,
              lr_scales: Optional[Sequence[float]] = None) -> OptimState:
    """lr_scales, when given, multiplies the step size per parameter tensor.

    Adam normalizes gradient magnitude away, so a loss term with a small
    constant gradient still moves its parameters at the full rate; a scale
    below one is the only way to keep a parameter group slow."""
    scales = None
    if lr_scales is not None:
        if len(lr_scales) != len(params):
            raise ValueError("lr_scales length must match params")
        scales = tuple(float(s) for s in lr_scales)
        if any(not math.isfinite(s) or s <= 0 for s in scales):
            raise ValueError("lr_scales must be positive")
    return OptimState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
        lr=float(lr),
        weight_decay=float(weight_decay),
        lr_scales=scales,
    )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState
) -> Tuple[List[np.ndarray], OptimState]:
    """One Adam update with decoupled weight decay. Pure: returns new arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    scales = state.lr_scales if state.lr_scales is not None else (1.0,) * len(params)
    if len(scales) != len(params):
        raise ValueError("lr_scales length must match params")
    new_params, new_m, new_v = [], [], []
    for p, g, m, v, sc in zip(params, grads, state.m, state.v, scales):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} does not match param shape {p.shape}")
        lr_p = state.lr * sc
        m1 = b1 * m + (1.0 - b1) * g
        v1 = b2 * v + (1.0 - b2) * (g * g)
        mhat = m1 / bias1
        vhat = v1 / bias2
        upd = p - lr_p * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            upd = upd - lr_p * state.weight_decay * p
        new_params.append(upd.astype(p.dtype, copy=False))
        new_m.append(m1)
        new_v.append(v1)
    new_state = OptimState(
        m=new_m,
        v=new_v,
        step=t,
        lr=state.lr,
        weight_decay=state.weight_decay,
        beta1=b1,
        beta2=b2,
        eps=state.eps,
        lr_scales=state.lr_scales,
    )
    return new_params, new_state


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Cosine annealing from base_lr down to base_lr/10 at the final epoch."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    eta_min = base_lr / 10.0
    return eta_min + 0.5 * (base_lr - eta_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float = 1.0) -> Tuple[List[np.ndarray], float]:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds it.

    Returns (gradients, pre-clip norm); gradients are returned untouched when
    no clipping is needed.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * g.dtype.type(scale) for g in grads], norm
    return list(grads), norm


# ---------------------------------------------------------------------------
# finite-difference checking


def gradient_check(
    fn: Callable[[], Tensor],
    wrt: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-3,
    sample: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare tape gradients of ``fn()`` against central finite differences.

    ``fn`` must rebuild its graph from the current contents of the ``wrt``
    tensors on every call. When ``sample`` is given, only that many randomly
    chosen components per tensor are probed (seeded, for the larger
    end-to-end checks); otherwise every component is.

    Returns max over probed components of |ad - fd| / max(1, |fd|).
    """
    tensors = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    for t in tensors:
        t.zero_grad()
    with GradTape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [t.grad_or_zeros().copy() for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        if sample is None or sample >= flat.size:
            indices: Iterable[int] = range(flat.size)
        else:
            indices = sorted(rng.choice(flat.size, size=sample, replace=False).tolist())
        for i in indices:
            keep = flat[i]
            flat[i] = keep + h
            up = fn().data.item()
            flat[i] = keep - h
            down = fn().data.item()
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            ad = float(ga_flat[i])
            if not (math.isfinite(fd) and math.isfinite(ad)):
                raise ValueError(f"non-finite gradient at component {i} (ad={ad}, fd={fd})")
            err = abs(ad - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    return worst
