"""Dense float64 tensors with reverse-mode differentiation on a recorded tape.

Every other module runs on this substrate.  Tensors are immutable once
created except for gradient accumulation; each differentiable operation
appends one node to the thread-local tape as it executes, so the tape is
topologically ordered by construction.  ``backward`` replays it in reverse
and frees it.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError


# ---------------------------------------------------------------------------
# Tape machinery
# ---------------------------------------------------------------------------

class Tape:
    """Execution-ordered record of differentiable operations.

    Each node is ``(output, inputs, backward)`` where ``backward`` maps the
    output's gradient array to one gradient array (or None) per input.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []


class _TapeState(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.recording = True


_STATE = _TapeState()


def active_tape() -> Tape:
    return _STATE.tape


def reset_tape() -> None:
    """Drop recorded nodes (e.g. after an aborted forward pass)."""
    _STATE.tape.nodes.clear()


class no_grad:
    """Context manager that disables tape recording (evaluation, timing)."""

    def __enter__(self):
        self._prev = _STATE.recording
        _STATE.recording = False
        return self

    def __exit__(self, *exc):
        _STATE.recording = self._prev
        return False


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """Row-major float64 array with optional gradient storage."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim > 0 and min(arr.shape) < 1:
            raise ShapeError(f"shape entries must all be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and array-likes are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(arr: np.ndarray, requires_grad: bool) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(arr, dtype=np.float64)
    out.requires_grad = requires_grad
    out.grad = None
    return out


def _recording(*tensors) -> bool:
    return _STATE.recording and any(t.requires_grad for t in tensors)


def _record(out: Tensor, inputs, backward) -> None:
    _STATE.tape.nodes.append((out, tuple(inputs), backward))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    rec = _recording(a, b)
    out = _result(a.data + b.data, rec)
    if rec:
        _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    rec = _recording(a, b)
    out = _result(a.data - b.data, rec)
    if rec:
        _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    rec = _recording(a, b)
    out = _result(a.data * b.data, rec)
    if rec:
        _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                        _unbroadcast(g * a.data, b.shape)))
    return out


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    rec = _recording(a, b)
    out = _result(a.data / b.data, rec)
    if rec:
        _record(out, (a, b), lambda g: (_unbroadcast(g / b.data, a.shape),
                                        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))
    return out


def neg(a) -> Tensor:
    a = _coerce(a)
    rec = _recording(a)
    out = _result(-a.data, rec)
    if rec:
        _record(out, (a,), lambda g: (-g,))
    return out


def power(a, p) -> Tensor:
    """Elementwise a**p for a constant real exponent."""
    a = _coerce(a)
    p = float(p)
    rec = _recording(a)
    out = _result(a.data ** p, rec)
    if rec:
        _record(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))
    return out


def exp(a) -> Tensor:
    a = _coerce(a)
    rec = _recording(a)
    val = np.exp(a.data)
    out = _result(val, rec)
    if rec:
        _record(out, (a,), lambda g: (g * val,))
    return out


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log: non-positive input")
    rec = _recording(a)
    out = _result(np.log(a.data), rec)
    if rec:
        _record(out, (a,), lambda g: (g / a.data,))
    return out


def cos(a) -> Tensor:
    a = _coerce(a)
    rec = _recording(a)
    out = _result(np.cos(a.data), rec)
    if rec:
        _record(out, (a,), lambda g: (-g * np.sin(a.data),))
    return out


def sqrt(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data < 0.0):
        raise NumericError("sqrt: negative input")
    rec = _recording(a)
    val = np.sqrt(a.data)
    out = _result(val, rec)
    if rec:
        _record(out, (a,), lambda g: (g * 0.5 / val,))
    return out


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    rec = _recording(a)
    # stable in both tails
    val = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                   np.exp(np.minimum(a.data, 0.0)) / (1.0 + np.exp(np.minimum(a.data, 0.0))))
    out = _result(val, rec)
    if rec:
        _record(out, (a,), lambda g: (g * val * (1.0 - val),))
    return out


def tanh(a) -> Tensor:
    a = _coerce(a)
    rec = _recording(a)
    val = np.tanh(a.data)
    out = _result(val, rec)
    if rec:
        _record(out, (a,), lambda g: (g * (1.0 - val * val),))
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only through the interior."""
    a = _coerce(a)
    rec = _recording(a)
    val = np.clip(a.data, lo, hi)
    out = _result(val, rec)
    if rec:
        mask = (a.data > lo) & (a.data < hi)
        _record(out, (a,), lambda g: (g * mask,))
    return out


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a constant; gradient flows where a >= floor."""
    a = _coerce(a)
    rec = _recording(a)
    out = _result(np.maximum(a.data, floor), rec)
    if rec:
        mask = a.data >= floor
        _record(out, (a,), lambda g: (g * mask,))
    return out


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} (size {a.size}) into {shape}")
    rec = _recording(a)
    out = _result(a.data.reshape(shape), rec)
    if rec:
        _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    rec = _recording(a)
    out = _result(a.data.T.copy(), rec)
    if rec:
        _record(out, (a,), lambda g: (g.T,))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ArgumentError("concat: empty input list")
    rec = _STATE.recording and any(t.requires_grad for t in ts)
    out = _result(np.concatenate([t.data for t in ts], axis=axis), rec)
    if rec:
        sizes = [t.shape[axis] for t in ts]
        bounds = np.cumsum([0] + sizes)

        def backward(g, bounds=bounds, axis=axis):
            sl = [slice(None)] * g.ndim
            grads = []
            for i in range(len(bounds) - 1):
                sl[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
                grads.append(g[tuple(sl)])
            return tuple(grads)

        _record(out, tuple(ts), backward)
    return out


def slice_axis(a, start=None, stop=None, step=None, axis: int = 0) -> Tensor:
    """Strided slice along one axis (also the nearest-neighbor downsampler)."""
    a = _coerce(a)
    if step is not None and step < 1:
        raise ArgumentError(f"slice_axis: step must be >= 1, got {step}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop, step)
    sl = tuple(sl)
    rec = _recording(a)
    out = _result(a.data[sl].copy(), rec)
    if rec:
        def backward(g, sl=sl, shape=a.shape):
            full = np.zeros(shape)
            full[sl] = g
            return (full,)

        _record(out, (a,), backward)
    return out


def take(a, indices) -> Tensor:
    """Gather from a 1-D tensor with an arbitrary integer index array."""
    a = _coerce(a)
    if a.ndim != 1:
        raise ShapeError(f"take expects a 1-D tensor, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    rec = _recording(a)
    out = _result(a.data[idx], rec)
    if rec:
        def backward(g, idx=idx, n=a.shape[0]):
            full = np.zeros(n)
            np.add.at(full, idx.ravel(), g.ravel())
            return (full,)

        _record(out, (a,), backward)
    return out


def repeat_axis(a, reps: int, axis: int = 0) -> Tensor:
    """Repeat each entry ``reps`` times along an axis (nearest-neighbor upsample)."""
    a = _coerce(a)
    reps = int(reps)
    if reps < 1:
        raise ArgumentError(f"repeat_axis: reps must be >= 1, got {reps}")
    rec = _recording(a)
    out = _result(np.repeat(a.data, reps, axis=axis), rec)
    if rec:
        def backward(g, reps=reps, axis=axis, shape=a.shape):
            newshape = shape[:axis] + (shape[axis], reps) + shape[axis + 1:]
            return (g.reshape(newshape).sum(axis=axis + 1),)

        _record(out, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    rec = _recording(a)
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), rec)
    if rec:
        def backward(g, axis=axis, keepdims=keepdims, shape=a.shape):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        _record(out, (a,), backward)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    rec = _recording(a, b)
    out = _result(a.data @ b.data, rec)
    if rec:
        _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    return out


def softmax_rows(a) -> Tensor:
    """Row-stabilized softmax of a matrix; every output row sums to one."""
    a = _coerce(a)
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.shape}")
    if np.isnan(a.data).any():
        raise NumericError("softmax_rows: NaN in input")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=1, keepdims=True)
    rec = _recording(a)
    out = _result(val, rec)
    if rec:
        def backward(g, s=val):
            dot = (g * s).sum(axis=1, keepdims=True)
            return (s * (g - dot),)

        _record(out, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# Strided 1-D convolution and its exact adjoint
# ---------------------------------------------------------------------------

def _check_conv_args(signal: Tensor, filt: Tensor, stride: int, boundary: str):
    if signal.ndim != 1 or filt.ndim != 1:
        raise ShapeError(f"conv1d: signal and filter must be 1-D, got {signal.shape}, {filt.shape}")
    if stride < 1:
        raise ArgumentError(f"conv1d: stride must be >= 1, got {stride}")
    if boundary not in ("periodic", "zero"):
        raise ArgumentError(f"conv1d: unknown boundary '{boundary}'")


def _conv_forward(x: np.ndarray, f: np.ndarray, stride: int, boundary: str) -> np.ndarray:
    L, F = x.shape[0], f.shape[0]
    out_len = -(-L // stride)
    base = np.arange(out_len, dtype=np.int64) * stride
    acc = np.zeros(out_len)
    if boundary == "periodic":
        for k in range(F):
            acc += x[(base + k) % L] * f[k]
    else:
        for k in range(F):
            idx = base + k
            valid = idx < L
            acc[valid] += x[idx[valid]] * f[k]
    return acc


def _conv_scatter(y: np.ndarray, f: np.ndarray, stride: int, boundary: str, out_len: int) -> np.ndarray:
    """Scatter y through the filter taps: the exact adjoint of _conv_forward."""
    F = f.shape[0]
    base = np.arange(y.shape[0], dtype=np.int64) * stride
    acc = np.zeros(out_len)
    if boundary == "periodic":
        for k in range(F):
            np.add.at(acc, (base + k) % out_len, y * f[k])
    else:
        for k in range(F):
            idx = base + k
            valid = idx < out_len
            np.add.at(acc, idx[valid], y[valid] * f[k])
    return acc


def _conv_filter_grad(x: np.ndarray, g: np.ndarray, stride: int, boundary: str, F: int) -> np.ndarray:
    L = x.shape[0]
    base = np.arange(g.shape[0], dtype=np.int64) * stride
    gf = np.zeros(F)
    if boundary == "periodic":
        for k in range(F):
            gf[k] = np.dot(g, x[(base + k) % L])
    else:
        for k in range(F):
            idx = base + k
            valid = idx < L
            gf[k] = np.dot(g[valid], x[idx[valid]])
    return gf


def conv1d_stride(signal, filt, stride: int, boundary: str = "periodic") -> Tensor:
    """Strided correlation: out[n] = sum_k signal[n*stride + k] * filt[k].

    Periodic mode wraps indices modulo the signal length (filters longer
    than the signal fold onto it, which keeps the dyadic cascade exact at
    short lengths); zero mode treats out-of-range samples as zero.
    """
    signal, filt = _coerce(signal), _coerce(filt)
    _check_conv_args(signal, filt, stride, boundary)
    rec = _recording(signal, filt)
    out = _result(_conv_forward(signal.data, filt.data, stride, boundary), rec)
    if rec:
        def backward(g, x=signal.data, f=filt.data):
            gs = _conv_scatter(g, f, stride, boundary, x.shape[0])
            gf = _conv_filter_grad(x, g, stride, boundary, f.shape[0])
            return (gs, gf)

        _record(out, (signal, filt), backward)
    return out


def conv1d_transpose(coeffs, filt, stride: int, out_len: int, boundary: str = "periodic") -> Tensor:
    """Exact adjoint of :func:`conv1d_stride` as a forward operation.

    Equivalent to upsample-by-zeros followed by correlation with the
    time-reversed filter (circularly re-aligned); used as the synthesis
    branch of the wavelet filter bank.
    """
    coeffs, filt = _coerce(coeffs), _coerce(filt)
    _check_conv_args(coeffs, filt, stride, boundary)
    expected = -(-out_len // stride)
    if coeffs.shape[0] != expected:
        raise ShapeError(
            f"conv1d_transpose: {coeffs.shape[0]} coefficients inconsistent with "
            f"out_len {out_len} at stride {stride} (expected {expected})")
    rec = _recording(coeffs, filt)
    out = _result(_conv_scatter(coeffs.data, filt.data, stride, boundary, out_len), rec)
    if rec:
        def backward(g, y=coeffs.data, f=filt.data):
            gy = _conv_forward(g, f, stride, boundary)
            gf = _conv_filter_grad(g, y, stride, boundary, f.shape[0])
            return (gy, gf)

        _record(out, (coeffs, filt), backward)
    return out


def upsample_zeros(a, stride: int, out_len=None) -> Tensor:
    """Insert stride-1 zeros after each sample (adjoint of plain downsampling)."""
    a = _coerce(a)
    if a.ndim != 1:
        raise ShapeError(f"upsample_zeros expects a 1-D tensor, got shape {a.shape}")
    if stride < 1:
        raise ArgumentError(f"upsample_zeros: stride must be >= 1, got {stride}")
    n = a.shape[0]
    out_len = n * stride if out_len is None else int(out_len)
    if out_len < (n - 1) * stride + 1:
        raise ShapeError(f"upsample_zeros: out_len {out_len} too short for {n} samples at stride {stride}")
    val = np.zeros(out_len)
    val[::stride][:n] = a.data
    rec = _recording(a)
    out = _result(val, rec)
    if rec:
        _record(out, (a,), lambda g: (g[::stride][:n].copy(),))
    return out


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from ``loss``.

    Gradients accumulate across shared uses.  The tape is freed afterwards.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ArgumentError("backward: loss must be a scalar tensor")
    tape = _STATE.tape
    loss.grad = np.ones_like(loss.data)
    for out, inputs, back in reversed(tape.nodes):
        g = out.grad
        if g is None:
            continue
        grads = back(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += gt
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# Seedable counter-based randomness
# ---------------------------------------------------------------------------

class Rng:
    """Counter-based (Philox) generator: one seed, bitwise-replayable stream."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def normal(self, shape, std: float = 1.0, mean: float = 0.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def split(self, key: int) -> "Rng":
        """Derive an independent stream (e.g. one per ablation variant)."""
        return Rng((self.seed * 0x9E3779B1 + key + 1) & 0x7FFFFFFFFFFFFFFF)

    def get_state(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        st = self._gen.bit_generator.state
        st["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        st["state"]["key"] = np.array(state["key"], dtype=np.uint64)
        st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        st["buffer_pos"] = int(state["buffer_pos"])
        st["has_uint32"] = int(state["has_uint32"])
        st["uinteger"] = int(state["uinteger"])
        self._gen.bit_generator.state = st


def randn(rng: Rng, shape, std: float = 1.0, requires_grad: bool = False) -> Tensor:
    return Tensor(rng.normal(shape, std=std), requires_grad=requires_grad)


def rand(rng: Rng, shape, low: float = 0.0, high: float = 1.0, requires_grad: bool = False) -> Tensor:
    return Tensor(rng.uniform(shape, low=low, high=high), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)
