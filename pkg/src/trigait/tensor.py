"""Dense float64 tensors with reverse-mode automatic differentiation.

Every feature map in the network is carried by a :class:`Tensor`. Ops build a
computation graph; ``Tensor.backward()`` walks it in reverse topological order
and accumulates gradients into every ``requires_grad`` leaf. Gradients keep
accumulating across backward calls until explicitly zeroed, matching the usual
training-loop semantics.

All math is float64 and single-threaded-deterministic: identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "concat",
    "stack",
    "matmul",
    "conv",
    "linear",
    "batch_norm_stats",
    "softmax",
    "sigmoid",
    "leaky_relu",
    "relu",
    "softplus",
    "gem",
    "pool",
    "take",
    "pairwise_part_distances",
    "batch_all_triplet",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (forward-only mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # Sum away extra leading axes, then axes that were broadcast from 1.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction of graph nodes -------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad)  # copy: callers may reuse their buffer
        else:
            self.grad += grad

    # -- basic introspection ----------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar; accumulates into leaf ``.grad``."""
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        data = self.data + other.data
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._result(data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._result(-self.data, (a,), backward)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other
        data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._result(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self, other
        data = a.data / b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._result(data, (a, b), backward)

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent):
        """Elementwise power; exponent may be a float or a Tensor (base > 0)."""
        exp = exponent if isinstance(exponent, Tensor) else Tensor(exponent)
        a, e = self, exp
        data = a.data ** e.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * e.data * a.data ** (e.data - 1.0), a.shape))
            if e.requires_grad:
                e._accumulate(_unbroadcast(g * data * np.log(a.data), e.shape))

        return Tensor._result(data, (a, e), backward)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.reshape(old))

        return Tensor._result(self.data.reshape(shape), (a,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inverse = tuple(np.argsort(axes))

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.transpose(inverse))

        return Tensor._result(self.data.transpose(axes), (a,), backward)

    def __getitem__(self, key):
        a = self
        data = self.data[key]

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[key] += g
                a._accumulate(full)

        return Tensor._result(data, (a,), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = self.data.sum(axis=axis, keepdims=keepdims)
        axes = _normalize_axes(axis, self.ndim)

        def backward(g):
            if a.requires_grad:
                gg = g
                if not keepdims and axes is not None:
                    gg = np.expand_dims(gg, axes)
                a._accumulate(np.broadcast_to(gg, a.shape).copy())

        return Tensor._result(data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        axes = _normalize_axes(axis, self.ndim)
        if axes is None:
            count = self.size
        else:
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis=None, keepdims: bool = False):
        """Max over `axis`; ties route gradient to the first argmax in
        row-major order, so backward is deterministic."""
        a = self
        axes = _normalize_axes(axis, self.ndim)
        if axes is None:
            axes = tuple(range(self.ndim))
        kept = tuple(i for i in range(self.ndim) if i not in axes)
        perm = kept + axes
        moved = self.data.transpose(perm)
        kept_shape = tuple(self.shape[i] for i in kept)
        red = int(np.prod([self.shape[i] for i in axes])) if axes else 1
        flat = moved.reshape(kept_shape + (red,))
        idx = flat.argmax(axis=-1)  # np.argmax takes the first maximum
        data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def backward(g):
            if not a.requires_grad:
                return
            gg = g.reshape(kept_shape)
            scat = np.zeros_like(flat)
            np.put_along_axis(scat, idx[..., None], gg[..., None], axis=-1)
            full = scat.reshape(tuple(a.shape[i] for i in perm)).transpose(np.argsort(perm))
            a._accumulate(full)

        out_shape = kept_shape
        if keepdims:
            out_shape = tuple(1 if i in axes else s for i, s in enumerate(self.shape))
            data = data.reshape(out_shape)

        def backward_kd(g):
            backward(g.reshape(kept_shape))

        return Tensor._result(data, (a,), backward_kd if keepdims else backward)

    # -- elementwise nonlinearities ---------------------------------------------

    def exp(self):
        a = self
        data = np.exp(self.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * data)

        return Tensor._result(data, (a,), backward)

    def log(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._result(np.log(self.data), (a,), backward)

    def sqrt(self):
        a = self
        data = np.sqrt(self.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * 0.5 / data)

        return Tensor._result(data, (a,), backward)


def _normalize_axes(axis, ndim) -> tuple[int, ...] | None:
    if axis is None:
        return None
    if isinstance(axis, (int, np.integer)):
        axis = (int(axis),)
    axes = tuple(sorted(a % ndim for a in axis))
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes {axis}")
    for a in axes:
        if a >= ndim:
            raise ShapeError(f"axis {a} out of range for ndim {ndim}")
    return axes


# ---------------------------------------------------------------------------
# free functions
# ---------------------------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                t._accumulate(g[tuple(sl)])

    return Tensor._result(data, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    expanded = [t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics on leading axes."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._result(data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` for x (..., Din), weight (Din, Dout)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"linear: input feature dim {x.shape} does not match weight {weight.shape}"
        )
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * data * (1.0 - data))

    return Tensor._result(data, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    pos = x.data > 0
    data = np.where(pos, x.data, slope * x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.where(pos, 1.0, slope))

    return Tensor._result(data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, slope=0.0)


def softplus(x: Tensor) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    d = x.data
    data = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    sig = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * sig)

    return Tensor._result(data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`; rows sum to 1 and the map is shift-invariant."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            x._accumulate(data * (g - dot))

    return Tensor._result(data, (x,), backward)


def pool(x: Tensor, axes, kind: str = "max") -> Tensor:
    """Reduce `axes` of x away by max or average pooling."""
    if kind == "max":
        return x.max(axis=axes)
    if kind == "avg":
        return x.mean(axis=axes)
    raise ValueError(f"unknown pool kind {kind!r}")


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Select `indices` along `axis` (duplicates allowed; grads scatter-add)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(x.data, idx, axis=axis)

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
            x._accumulate(full)

    return Tensor._result(data, (x,), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _per_axis(value, nd: int, name: str) -> tuple[int, ...]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * nd
    value = tuple(int(v) for v in value)
    if len(value) != nd:
        raise ShapeError(f"{name} must have {nd} entries, got {value}")
    return value


def conv(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    dilation=1,
    padding=0,
) -> Tensor:
    """N-dimensional cross-correlation.

    x: (N, Cin, *spatial); weight: (Cout, Cin, *kernel); bias: (Cout,) or None.
    Covers the 1-D, 2-D, and 3-D cases uniformly; differentiable w.r.t. input,
    kernel, and bias.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    weight = weight if isinstance(weight, Tensor) else Tensor(weight)
    nd = weight.ndim - 2
    if x.ndim != nd + 2:
        raise ShapeError(f"conv: input {x.shape} does not fit kernel {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv: input channels {x.shape} do not match kernel channels {weight.shape}"
        )
    stride = _per_axis(stride, nd, "stride")
    dilation = _per_axis(dilation, nd, "dilation")
    padding = _per_axis(padding, nd, "padding")
    ksizes = weight.shape[2:]
    eff = tuple((k - 1) * d + 1 for k, d in zip(ksizes, dilation))

    pad_spec = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad_spec) if any(padding) else x.data
    spatial = xp.shape[2:]
    out_sizes = tuple((s - e) // st + 1 for s, e, st in zip(spatial, eff, stride))
    if any(o < 1 for o in out_sizes):
        raise ShapeError(
            f"conv: kernel {weight.shape} does not fit padded input {xp.shape}"
        )

    win = np.lib.stride_tricks.sliding_window_view(xp, eff, axis=tuple(range(2, 2 + nd)))
    # win: (N, Cin, *out_full, *eff) -> subsample output stride and kernel dilation
    sel = (slice(None), slice(None))
    sel += tuple(slice(None, None, st) for st in stride)
    sel += tuple(slice(None, None, d) for d in dilation)
    win = win[sel]  # (N, Cin, *out, *k)

    sum_axes_win = [1] + [2 + nd + i for i in range(nd)]
    sum_axes_w = [1] + [2 + i for i in range(nd)]
    data = np.tensordot(win, weight.data, axes=(sum_axes_win, sum_axes_w))
    data = np.moveaxis(data, -1, 1)  # (N, Cout, *out)
    if bias is not None:
        data = data + bias.data.reshape((1, -1) + (1,) * nd)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        # g: (N, Cout, *out)
        if weight.requires_grad:
            gw = np.tensordot(
                g, win, axes=([0] + list(range(2, 2 + nd)), [0] + list(range(2, 2 + nd)))
            )  # (Cout, Cin, *k)
            weight._accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=tuple([0] + list(range(2, 2 + nd)))))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            # one GEMM for all kernel taps: (N, *out, Cin, *k)
            contrib = np.tensordot(g, weight.data, axes=([1], [0]))
            contrib = np.moveaxis(contrib, 1 + nd, 1)  # (N, Cin, *out, *k)
            for kidx in itertools.product(*(range(k) for k in ksizes)):
                sl = (slice(None), slice(None)) + tuple(
                    slice(ki * d, ki * d + o * st, st)
                    for ki, d, o, st in zip(kidx, dilation, out_sizes, stride)
                )
                gxp[sl] += contrib[(slice(None), slice(None)) + (slice(None),) * nd + kidx]
            if any(padding):
                core = (slice(None), slice(None)) + tuple(
                    slice(p, p + s) for p, s in zip(padding, x.shape[2:])
                )
                x._accumulate(gxp[core])
            else:
                x._accumulate(gxp)

    return Tensor._result(data, parents, backward)


# ---------------------------------------------------------------------------
# batch normalization statistics helper
# ---------------------------------------------------------------------------


def batch_norm_stats(x: Tensor, axes: tuple[int, ...], eps: float):
    """Differentiable (mean, var, normalized) over `axes` with biased variance."""
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    xhat = centered / (var + eps).sqrt()
    return mu, var, xhat


# ---------------------------------------------------------------------------
# generalized-mean pooling
# ---------------------------------------------------------------------------


def gem(x: Tensor, p: Tensor, axis: int = -1) -> Tensor:
    """Generalized-mean pool over one axis: (mean(x**p))**(1/p), x >= 0.

    p = 1 reduces to the average exactly; p -> inf approaches the max.
    Zero entries get a zero subgradient so fractional p stays finite.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    p = p if isinstance(p, Tensor) else Tensor(p)
    if p.size != 1:
        raise ShapeError("gem: p must be a scalar")
    if np.any(x.data < 0):
        raise ValueError("gem: negative inputs are rejected")
    pv = float(p.data.reshape(-1)[0])
    if pv <= 0:
        raise ValueError(f"gem: p must be positive, got {pv}")
    axis = axis % x.ndim
    w = x.shape[axis]

    xd = x.data
    xp = xd ** pv
    m = xp.mean(axis=axis)  # (kept...)
    data = m ** (1.0 / pv)

    def backward(g):
        safe_m = np.where(m > 0, m, 1.0)
        if x.requires_grad:
            outer = np.where(m > 0, safe_m ** (1.0 / pv - 1.0), 1.0 if pv == 1.0 else 0.0)
            codata = np.expand_dims(g * outer, axis)
            if pv == 1.0:
                xpow = np.ones_like(xd)
            else:
                xpow = np.where(xd > 0, np.where(xd > 0, xd, 1.0) ** (pv - 1.0), 0.0)
            x._accumulate(codata * xpow / w)
        if p.requires_grad:
            # d/dp of exp(log(m(p))/p)
            xlogx = np.where(xd > 0, xp * np.log(np.where(xd > 0, xd, 1.0)), 0.0)
            mprime = xlogx.mean(axis=axis)
            dlog = np.where(
                m > 0,
                mprime / safe_m / pv - np.log(safe_m) / pv**2,
                0.0,
            )
            p._accumulate(np.array((g * data * dlog).sum()).reshape(p.shape))

    return Tensor._result(data, (x, p), backward)


# ---------------------------------------------------------------------------
# metric-learning kernels
# ---------------------------------------------------------------------------


def pairwise_part_distances(emb: Tensor) -> Tensor:
    """Per-part Euclidean distance matrices.

    emb: (N, C, P) part embeddings -> (P, N, N) distances over the C channels.
    The diagonal is exactly zero; zero-distance pairs get zero gradient.
    """
    emb = emb if isinstance(emb, Tensor) else Tensor(emb)
    if emb.ndim != 3:
        raise ShapeError(f"pairwise_part_distances: want (N, C, P), got {emb.shape}")
    e = emb.data.transpose(2, 0, 1)  # (P, N, C)
    sq = (e * e).sum(axis=2)
    gram = e @ e.transpose(0, 2, 1)
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * gram
    np.maximum(d2, 0.0, out=d2)
    data = np.sqrt(d2)
    for m in data:
        np.fill_diagonal(m, 0.0)

    def backward(g):
        if not emb.requires_grad:
            return
        safe = np.where(data > 1e-12, data, 1.0)
        w = np.where(data > 1e-12, (g + g.transpose(0, 2, 1)) / safe, 0.0)
        ge = w.sum(axis=2)[:, :, None] * e - w @ e  # (P, N, C)
        emb._accumulate(ge.transpose(1, 2, 0))

    return Tensor._result(data, (emb,), backward)


def batch_all_triplet(dist: Tensor, labels: np.ndarray, margin: float):
    """Batch-all triplet hinge on per-part distance matrices.

    dist: (P, N, N); labels: (N,). For every valid (anchor, positive, negative)
    triplet the term is max(0, margin + d_ap - d_an); each part averages its
    strictly positive terms (0 if none) and the loss is the mean over parts.

    Returns (loss Tensor, active_fraction float).
    """
    dist = dist if isinstance(dist, Tensor) else Tensor(dist)
    labels = np.asarray(labels)
    P, n, n2 = dist.shape
    if n != n2 or labels.shape != (n,):
        raise ShapeError(f"batch_all_triplet: dist {dist.shape} vs labels {labels.shape}")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    n_valid_per_anchor = pos_mask.sum(1) * neg_mask.sum(1)
    total_valid = int(n_valid_per_anchor.sum())
    if total_valid == 0:
        raise ValueError("batch_all_triplet: no valid (anchor, positive, negative) triplet")

    tri_mask = pos_mask[:, :, None] & neg_mask[:, None, :]  # (N, N, N)
    coeff = np.zeros_like(dist.data)
    total = 0.0
    active = 0
    for pi in range(P):
        d = dist.data[pi]
        terms = margin + d[:, :, None] - d[:, None, :]
        act = tri_mask & (terms > 0)
        cnt = int(act.sum())
        active += cnt
        if cnt:
            total += terms[act].sum() / cnt
            coeff[pi] = (act.sum(axis=2) - act.sum(axis=1)) / (cnt * P)
    loss_val = total / P
    active_fraction = active / (total_valid * P)

    def backward(g):
        if dist.requires_grad:
            dist._accumulate(float(g) * coeff)

    out = Tensor._result(np.asarray(loss_val), (dist,), backward)
    return out, active_fraction
