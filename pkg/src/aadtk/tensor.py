"""Dense float tensors with tape-based reverse-mode differentiation.

Everything the encoders need is covered by a small set of primitives
(matmul, conv1d, gelu, channel_norm, softmax, elementwise arithmetic,
cosine similarity, cross entropy). Each primitive knows how to push a
gradient back to its inputs; a :class:`Tape` records the primitives in
execution order and :func:`backward` replays them in reverse.

Float32 is the working precision. Float64 tensors are accepted and
propagate their dtype, which is what the finite-difference tests use.
"""

from __future__ import annotations

import warnings
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "set_debug_checks",
    "as_tensor",
    "matmul",
    "conv1d",
    "gelu",
    "channel_norm",
    "softmax",
    "add",
    "sub",
    "mul",
    "scale_features",
    "reshape",
    "tensor_sum",
    "tensor_mean",
    "stack",
    "cosine_similarity",
    "cross_entropy",
    "backward",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

# When enabled, every primitive asserts that its output is finite.
_DEBUG_FINITE = False


class ShapeError(ValueError):
    """Operands have incompatible shapes; the message carries both."""


class NonFiniteError(FloatingPointError):
    """A tensor contains NaN or Inf (debug-mode detection, never clamped)."""


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions on every primitive's output."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


class Tensor:
    """A dense n-dimensional float array, optionally tracking a gradient.

    ``data`` is a row-major float32 or float64 numpy array. Tensors are
    treated as immutable once created; only ``grad`` accumulates, and the
    caller zeroes it between optimization steps.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d to 1-d; keep scalars 0-d
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self) -> None:
        """Raise :class:`NonFiniteError` if any element is NaN or Inf."""
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(
                f"tensor of shape {self.shape} contains non-finite values"
            )

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x`` in a Tensor unless it already is one."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class _TapeEntry:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple, backward_fn: Callable):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications for reverse-mode replay.

    Recording order is topological by construction (an op can only consume
    tensors that already exist), and :func:`backward` walks the entries in
    exact reverse order. A tape and its tensors belong to one worker at a
    time; independent tapes may run in parallel.
    """

    def __init__(self):
        self._entries: list[_TapeEntry] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, output: Tensor, inputs: tuple, backward_fn: Callable) -> None:
        self._entries.append(_TapeEntry(output, inputs, backward_fn))
        self._produced.add(id(output))

    def needs_grad(self, t: Tensor) -> bool:
        """Whether a gradient for ``t`` is of any use on this tape."""
        return t.requires_grad or id(t) in self._produced

    def clear(self) -> None:
        """Drop all recorded entries.

        Backward closures reference the tape and the tape references them,
        so a dropped tape is only reclaimed on a full GC cycle; clearing
        breaks that cycle and releases the cached activations immediately.
        """
        self._entries.clear()
        self._produced.clear()


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor
    with ``requires_grad``.

    ``loss`` must be a single-element tensor whose ancestry the tape
    covers. Gradients add onto any existing ``grad`` buffers; callers
    zero them between steps. The tape is cleared afterwards (replay is
    single-shot); build a fresh tape for each backward pass.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    try:
        grads: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
        for entry in reversed(tape._entries):
            slot = grads.pop(id(entry.output), None)
            if slot is None:
                continue
            out_tensor, g = slot
            if out_tensor.requires_grad:
                out_tensor.grad = g.copy() if out_tensor.grad is None else out_tensor.grad + g
            for t, gt in zip(entry.inputs, entry.backward_fn(g)):
                if gt is None:
                    continue
                key = id(t)
                if key in grads:
                    grads[key][1] = grads[key][1] + gt
                else:
                    grads[key] = [t, gt]
        for t, g in grads.values():
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
    finally:
        tape.clear()


def _finish(out: Tensor, tape: Optional[Tape], inputs: tuple, backward_fn) -> Tensor:
    if _DEBUG_FINITE:
        out.assert_finite()
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Matrix product. 2-D x 2-D, plus the broadcast forms 2-D x 3-D and
    3-D x 3-D used for batched encoding (leading axis is the batch)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        da = db = None
        if tape.needs_grad(a):
            da = np.matmul(g, b.data.swapaxes(-1, -2))
            while da.ndim > a.ndim:
                da = da.sum(axis=0)
        if tape.needs_grad(b):
            db = np.matmul(a.data.swapaxes(-1, -2), g)
            while db.ndim > b.ndim:
                db = db.sum(axis=0)
        return da, db

    return _finish(out, tape, (a, b), bwd)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Same-length 1-D cross-correlation along the last axis.

    ``x`` is (Cin, T) or (B, Cin, T); ``kernels`` is (Cout, Cin, K) with K
    odd; ``bias`` is (Cout,). The input is zero-padded by (K-1)/2 on each
    side so the output keeps T.
    """
    if kernels.ndim != 3:
        raise ShapeError(f"conv1d: kernels must be (Cout, Cin, K), got {kernels.shape}")
    cout, cin, k = kernels.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d: kernel length must be odd, got {k}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} != ({cout},)")
    batched = x.ndim == 3
    if x.ndim not in (2, 3) or x.shape[-2] != cin:
        raise ShapeError(
            f"conv1d: input shape {x.shape} incompatible with kernels {kernels.shape}"
        )
    xd = x.data if batched else x.data[None]
    b, _, t = xd.shape
    pad = (k - 1) // 2
    tp = t + 2 * pad
    # One GEMM per tap on a flat (Cin, B*Tp) layout. Each item keeps its own
    # zero padding, so shifted column slices never read a neighbouring item.
    xf = np.zeros((cin, b * tp), dtype=xd.dtype)
    xf.reshape(cin, b, tp)[:, :, pad : pad + t] = xd.transpose(1, 0, 2)
    yf = np.zeros((cout, b * tp), dtype=xd.dtype)
    # per-tap kernel slices are strided views; BLAS needs them contiguous
    taps = [np.ascontiguousarray(kernels.data[:, :, j]) for j in range(k)]
    for j in range(k):
        s = j - pad
        lo, hi = max(0, -s), b * tp - max(0, s)
        yf[:, lo:hi] += taps[j] @ xf[:, lo + s : hi + s]
    y = yf.reshape(cout, b, tp)[:, :, pad : pad + t].transpose(1, 0, 2)
    y += bias.data[None, :, None]
    out = Tensor(y if batched else y[0])

    def bwd(g):
        gb = g if batched else g[None]
        gf = np.zeros((cout, b * tp), dtype=g.dtype)
        gf.reshape(cout, b, tp)[:, :, pad : pad + t] = gb.transpose(1, 0, 2)
        dx = dw = dbias = None
        if tape.needs_grad(kernels):
            dw = np.empty_like(kernels.data)
            for j in range(k):
                s = j - pad
                lo, hi = max(0, -s), b * tp - max(0, s)
                dw[:, :, j] = gf[:, lo:hi] @ xf[:, lo + s : hi + s].T
        if tape.needs_grad(bias):
            dbias = gb.sum(axis=(0, 2))
        if tape.needs_grad(x):
            dxf = np.zeros_like(xf)
            for j in range(k):
                s = j - pad
                lo, hi = max(0, -s), b * tp - max(0, s)
                dxf[:, lo + s : hi + s] += taps[j].T @ gf[:, lo:hi]
            dx = dxf.reshape(cin, b, tp)[:, :, pad : pad + t].transpose(1, 0, 2)
            dx = np.ascontiguousarray(dx)
            if not batched:
                dx = dx[0]
        return dx, dw, dbias

    return _finish(out, tape, (x, kernels, bias), bwd)


def gelu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Gaussian error linear unit, exact erf form: 0.5*x*(1 + erf(x/sqrt(2)))."""
    # built with in-place ufuncs; this op sits in every encoder layer
    phi = x.data * _INV_SQRT2
    erf(phi, out=phi)
    phi += 1.0
    phi *= 0.5
    out = Tensor(x.data * phi)

    def bwd(g):
        if not tape.needs_grad(x):
            return (None,)
        dens = x.data * x.data
        dens *= -0.5
        np.exp(dens, out=dens)
        dens *= _INV_SQRT2PI
        dens *= x.data
        dens += phi
        dens *= g
        return (dens,)

    return _finish(out, tape, (x,), bwd)


def channel_norm(
    x: Tensor, scale: Tensor, shift: Tensor, tape: Optional[Tape] = None, eps: float = 1e-5
) -> Tensor:
    """Normalize each time step's feature vector to zero mean / unit variance,
    then apply per-feature scale and shift.

    ``x`` is (F, T) or (B, F, T); normalization runs over the feature axis
    independently at every time index, so single-sample inference behaves
    exactly like training.
    """
    batched = x.ndim == 3
    if x.ndim not in (2, 3):
        raise ShapeError(f"channel_norm: input must be 2-D or 3-D, got {x.shape}")
    f = x.shape[-2]
    if scale.shape != (f,) or shift.shape != (f,):
        raise ShapeError(
            f"channel_norm: scale/shift must be ({f},), got {scale.shape}/{shift.shape}"
        )
    xd = x.data if batched else x.data[None]
    mean = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv_std
    y = scale.data[None, :, None] * xhat + shift.data[None, :, None]
    out = Tensor(y if batched else y[0])

    def bwd(g):
        gb = g if batched else g[None]
        dscale = dshift = dx = None
        if tape.needs_grad(scale):
            dscale = (gb * xhat).sum(axis=(0, 2))
        if tape.needs_grad(shift):
            dshift = gb.sum(axis=(0, 2))
        if tape.needs_grad(x):
            dxhat = gb * scale.data[None, :, None]
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            dx = inv_std * (dxhat - m1 - xhat * m2)
            if not batched:
                dx = dx[0]
        return dx, dscale, dshift

    return _finish(out, tape, (x, scale, shift), bwd)


def softmax(
    x: Tensor, temperature: float = 1.0, axis: int = -1, tape: Optional[Tape] = None
) -> Tensor:
    """Temperature softmax along ``axis``, computed with max subtraction."""
    if temperature <= 0:
        raise ValueError(f"softmax: temperature must be positive, got {temperature}")
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def bwd(g):
        if not tape.needs_grad(x):
            return (None,)
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner) / temperature,)

    return _finish(out, tape, (x,), bwd)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return (g if tape.needs_grad(a) else None, g if tape.needs_grad(b) else None)

    return _finish(out, tape, (a, b), bwd)


def sub(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        return (g if tape.needs_grad(a) else None, -g if tape.needs_grad(b) else None)

    return _finish(out, tape, (a, b), bwd)


def mul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise (Hadamard) product of same-shaped tensors."""
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        da = g * b.data if tape.needs_grad(a) else None
        db = g * a.data if tape.needs_grad(b) else None
        return da, db

    return _finish(out, tape, (a, b), bwd)


def scale_features(z: Tensor, w: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Multiply feature row i of ``z`` (.., F, T) by ``w[i]``: diag(w) @ z."""
    if z.ndim not in (2, 3) or w.ndim != 1 or z.shape[-2] != w.shape[0]:
        raise ShapeError(f"scale_features: shapes {z.shape} and {w.shape} differ")
    wcol = w.data[:, None] if z.ndim == 2 else w.data[None, :, None]
    out = Tensor(z.data * wcol)

    def bwd(g):
        dz = g * wcol if tape.needs_grad(z) else None
        dw = None
        if tape.needs_grad(w):
            axes = (1,) if z.ndim == 2 else (0, 2)
            dw = (g * z.data).sum(axis=axes)
        return dz, dw

    return _finish(out, tape, (z, w), bwd)


def reshape(x: Tensor, shape: Sequence[int], tape: Optional[Tape] = None) -> Tensor:
    old = x.shape
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(old) if tape.needs_grad(x) else None,)

    return _finish(out, tape, (x,), bwd)


def tensor_sum(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype))

    def bwd(g):
        return (np.full_like(x.data, g.reshape(())) if tape.needs_grad(x) else None,)

    return _finish(out, tape, (x,), bwd)


def tensor_mean(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    n = x.size
    out = Tensor(np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype))

    def bwd(g):
        if not tape.needs_grad(x):
            return (None,)
        return (np.full_like(x.data, g.reshape(()) / n),)

    return _finish(out, tape, (x,), bwd)


def stack(parts: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    """Stack same-shaped tensors along a new trailing axis."""
    if not parts:
        raise ShapeError("stack: need at least one tensor")
    for p in parts[1:]:
        _same_shape(parts[0], p, "stack")
    out = Tensor(np.stack([p.data for p in parts], axis=-1))

    def bwd(g):
        return tuple(
            g[..., i] if tape.needs_grad(p) else None for i, p in enumerate(parts)
        )

    return _finish(out, tape, tuple(parts), bwd)


def cosine_similarity(
    u: Tensor, v: Tensor, tape: Optional[Tape] = None, degenerate_eps: float = 1e-12
) -> Tensor:
    """Cosine similarity of two vectors, or row-wise for (B, N) inputs.

    A near-zero norm on either side yields similarity 0 (with a warning)
    and a zero gradient; the value is otherwise in [-1, 1].
    """
    _same_shape(u, v, "cosine_similarity")
    if u.ndim not in (1, 2):
        raise ShapeError(f"cosine_similarity: expected 1-D or 2-D, got {u.shape}")
    ud = u.data if u.ndim == 2 else u.data[None]
    vd = v.data if v.ndim == 2 else v.data[None]
    dot = np.einsum("bn,bn->b", ud, vd)
    nu = np.sqrt(np.einsum("bn,bn->b", ud, ud))
    nv = np.sqrt(np.einsum("bn,bn->b", vd, vd))
    # zero out only *finite* near-zero norms; NaN/Inf must propagate so
    # callers can detect divergence rather than read a silent 0
    small = (np.isfinite(nu) & np.isfinite(nv)) & (
        (nu <= degenerate_eps) | (nv <= degenerate_eps)
    )
    if small.any():
        warnings.warn("cosine_similarity: degenerate (near-zero) vector, returning 0")
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = np.where(small, 1.0, nu * nv)
        s = np.where(small, 0.0, dot / denom).astype(ud.dtype)
    out = Tensor(s if u.ndim == 2 else s[0])

    def bwd(g):
        gb = (g if u.ndim == 2 else g[None])[:, None]
        smb = small[:, None]
        du = dv = None
        with np.errstate(invalid="ignore", divide="ignore"):
            if tape.needs_grad(u):
                du = np.where(
                    smb,
                    0.0,
                    gb * (vd / denom[:, None] - s[:, None] * ud / np.maximum(nu, degenerate_eps)[:, None] ** 2),
                ).astype(ud.dtype)
                if u.ndim == 1:
                    du = du[0]
            if tape.needs_grad(v):
                dv = np.where(
                    smb,
                    0.0,
                    gb * (ud / denom[:, None] - s[:, None] * vd / np.maximum(nv, degenerate_eps)[:, None] ** 2),
                ).astype(vd.dtype)
                if v.ndim == 1:
                    dv = dv[0]
        return du, dv

    return _finish(out, tape, (u, v), bwd)


def cross_entropy(
    scores: Tensor,
    labels: np.ndarray | Sequence[int] | int,
    temperature: float,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Mean negative log-likelihood of the labeled class under the
    temperature softmax of ``scores``.

    ``scores`` is (N,) or (B, N); ``labels`` are 1-based class indices
    (a single int for the 1-D case). Computed from the scores via
    log-sum-exp, never through explicit probabilities.
    """
    if temperature <= 0:
        raise ValueError(f"cross_entropy: temperature must be positive, got {temperature}")
    batched = scores.ndim == 2
    if scores.ndim not in (1, 2):
        raise ShapeError(f"cross_entropy: scores must be 1-D or 2-D, got {scores.shape}")
    z = (scores.data if batched else scores.data[None]) / temperature
    b, n = z.shape
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64)) - 1
    if y.shape != (b,):
        raise ShapeError(f"cross_entropy: labels shape {y.shape} != ({b},)")
    if np.any((y < 0) | (y >= n)):
        raise ValueError(f"cross_entropy: labels must be in 1..{n}")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    losses = lse - z[np.arange(b), y]
    out = Tensor(np.asarray(losses.mean(dtype=np.float64), dtype=scores.dtype))

    def bwd(g):
        if not tape.needs_grad(scores):
            return (None,)
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), y] -= 1.0
        ds = (g.reshape(()) / (b * temperature)) * p
        return (ds.astype(scores.dtype) if batched else ds[0].astype(scores.dtype),)

    return _finish(out, tape, (scores,), bwd)
