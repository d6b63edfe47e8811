"""Tensor type, operator library, and reverse-mode backward pass.

Conventions:
  * all data is float64, row-major
  * an op participates in the graph only if some input requires grad
  * backward() accumulates into .grad (repeated backward accumulates; call
    zero_grad on the optimizer or clear .grad manually between steps)
  * masks passed to ops are plain float64/bool numpy arrays, never Tensors:
    they are data-dependent constants and receive no gradient
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DiffcoreError",
    "ShapeError",
    "Tensor",
    "backward",
]


class DiffcoreError(Exception):
    pass


class ShapeError(DiffcoreError):
    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _wrap(out_data: np.ndarray, parents: tuple[Tensor, ...], bw) -> Tensor:
    out = Tensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bw
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into .grad for every reachable tensor."""
    if loss.data.size != 1:
        raise DiffcoreError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    if not loss.requires_grad:
        raise DiffcoreError("loss does not depend on any tensor requiring grad")
    # iterative DFS postorder; valid topological order for any DAG
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # reduce leading axes, then broadcast axes of extent 1
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        out_data = a.data + b.data
        a_shape, b_shape = a.data.shape, b.data.shape

        def bw(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a_shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b_shape))

        return _wrap(out_data, (a, b), bw)
    const = np.asarray(b, dtype=np.float64)
    a_shape = a.data.shape

    def bwc(g):
        _accum(a, _unbroadcast(g, a_shape))

    return _wrap(a.data + const, (a,), bwc)


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        a_shape, b_shape = a.data.shape, b.data.shape

        def bw(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a_shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b_shape))

        return _wrap(a.data - b.data, (a, b), bw)
    if isinstance(a, Tensor):
        a_shape = a.data.shape

        def bwa(g):
            _accum(a, _unbroadcast(g, a_shape))

        return _wrap(a.data - np.asarray(b, dtype=np.float64), (a,), bwa)
    b_shape = b.data.shape

    def bwb(g):
        _accum(b, _unbroadcast(-g, b_shape))

    return _wrap(np.asarray(a, dtype=np.float64) - b.data, (b,), bwb)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        a_shape, b_shape = a.data.shape, b.data.shape
        ad, bd = a.data, b.data

        def bw(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g * bd, a_shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * ad, b_shape))

        return _wrap(ad * bd, (a, b), bw)
    const = np.asarray(b, dtype=np.float64)
    a_shape = a.data.shape

    def bwc(g):
        _accum(a, _unbroadcast(g * const, a_shape))

    return _wrap(a.data * const, (a,), bwc)


def div(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        a_shape, b_shape = a.data.shape, b.data.shape
        ad, bd = a.data, b.data

        def bw(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g / bd, a_shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g * ad / (bd * bd), b_shape))

        return _wrap(ad / bd, (a, b), bw)
    if isinstance(a, Tensor):
        const = np.asarray(b, dtype=np.float64)
        a_shape = a.data.shape

        def bwa(g):
            _accum(a, _unbroadcast(g / const, a_shape))

        return _wrap(a.data / const, (a,), bwa)
    const = np.asarray(a, dtype=np.float64)
    bd = b.data

    def bwb(g):
        _accum(b, -g * const / (bd * bd))

    return _wrap(const / bd, (b,), bwb)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _wrap(-a.data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul", f"expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", f"inner extents differ: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ bd.T)
        if b.requires_grad:
            _accum(b, ad.T @ g)

    return _wrap(ad @ bd, (a, b), bw)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing the transpose."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul_t", f"expects 2-d operands, got {a.data.shape} x {b.data.shape}")
    if a.data.shape[1] != b.data.shape[1]:
        raise ShapeError("matmul_t", f"inner extents differ: {a.data.shape} @ {b.data.shape}.T")
    ad, bd = a.data, b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ bd)
        if b.requires_grad:
            _accum(b, g.T @ ad)

    return _wrap(ad @ bd.T, (a, b), bw)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b for 2-d x; one graph node instead of two."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("affine", f"bad ranks: x{x.data.shape} w{w.data.shape} b{b.data.shape}")
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError("affine", f"extents differ: x{x.data.shape} w{w.data.shape} b{b.data.shape}")
    xd, wd = x.data, w.data

    def bw(g):
        if x.requires_grad:
            _accum(x, g @ wd.T)
        if w.requires_grad:
            _accum(w, xd.T @ g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    return _wrap(xd @ wd + b.data, (x, w, b), bw)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _wrap(out_data, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)

    def bw(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _wrap(out_data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def bw(g):
        _accum(a, g * (a.data > 0.0))

    return _wrap(out_data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)

    return _wrap(out_data, (a,), bw)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)
    ad = a.data

    def bw(g):
        _accum(a, g / ad)

    return _wrap(out_data, (a,), bw)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    out_data = np.maximum(a.data, floor)

    def bw(g):
        _accum(a, g * (a.data > floor))

    return _wrap(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out_data = a.data.sum(axis=axis)
    shape = a.data.shape

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), shape).copy())

    return _wrap(out_data, (a,), bw)


def sum_to_scalar(a: Tensor) -> Tensor:
    return tsum(a, axis=None)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _wrap(out_data, tuple(tensors), bw)


def stack1(tensors: list[Tensor]) -> Tensor:
    """Stack (B, h) tensors into (B, L, h) along a new token axis."""
    out_data = np.stack([t.data for t in tensors], axis=1)

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, g[:, i, :])

    return _wrap(out_data, tuple(tensors), bw)


def mean_pool(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean over axis 1 of a (B, L, h) tensor.

    mask: optional (B, L) 0/1 array; pooling runs over mask=1 positions only.
    Rows with an all-zero mask pool to the zero vector.
    """
    if x.data.ndim == 2:
        # (L, h) convenience form
        if mask is not None:
            raise ShapeError("mean_pool", "mask requires batched (B, L, h) input")
        L = x.data.shape[0]
        out_data = x.data.mean(axis=0)

        def bw2(g):
            _accum(x, np.broadcast_to(g / L, x.data.shape).copy())

        return _wrap(out_data, (x,), bw2)
    if x.data.ndim != 3:
        raise ShapeError("mean_pool", f"expects (B, L, h), got {x.data.shape}")
    B, L, _ = x.data.shape
    if mask is None:
        out_data = x.data.mean(axis=1)

        def bw(g):
            _accum(x, np.broadcast_to(g[:, None, :] / L, x.data.shape).copy())

        return _wrap(out_data, (x,), bw)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (B, L):
        raise ShapeError("mean_pool", f"mask shape {m.shape} does not match tokens {(B, L)}")
    denom = np.maximum(m.sum(axis=1), 1.0)
    out_data = np.einsum("blh,bl->bh", x.data, m) / denom[:, None]

    def bwm(g):
        _accum(x, (g / denom[:, None])[:, None, :] * m[:, :, None])

    return _wrap(out_data, (x,), bwm)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def masked_softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; masked entries are exactly zero.

    mask: 0/1 array broadcastable to a's shape. Every row must keep at least
    one unmasked entry.
    """
    x = a.data
    if mask is None:
        mx = x.max(axis=-1, keepdims=True)
        e = np.exp(x - mx)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not m.any(axis=-1).all():
            raise DiffcoreError("masked_softmax: a row has no unmasked entry")
        z = np.where(m, x, -np.inf)
        mx = z.max(axis=-1, keepdims=True)
        e = np.exp(z - mx)
    s = e.sum(axis=-1, keepdims=True)
    out_data = e / s

    def bw(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(a, out_data * (g - inner))

    return _wrap(out_data, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    return masked_softmax(a, None)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    x = logits.data
    if x.ndim != 2:
        raise ShapeError("cross_entropy", f"expects (B, K) logits, got {x.shape}")
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (x.shape[0],):
        raise ShapeError("cross_entropy", f"targets shape {t.shape} does not match batch {x.shape[0]}")
    B = x.shape[0]
    mx = x.max(axis=-1, keepdims=True)
    e = np.exp(x - mx)
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    ll = np.log(probs[np.arange(B), t])
    out_data = np.array(-ll.mean())

    def bw(g):
        d = probs.copy()
        d[np.arange(B), t] -= 1.0
        _accum(logits, (float(g) / B) * d)

    return _wrap(out_data, (logits,), bw)


def sse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Sum of squared errors against a constant target."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ShapeError("sse", f"target shape {t.shape} differs from prediction {pred.data.shape}")
    diff = pred.data - t
    out_data = np.array((diff * diff).sum())

    def bw(g):
        _accum(pred, (2.0 * float(g)) * diff)

    return _wrap(out_data, (pred,), bw)


# ---------------------------------------------------------------------------
# straight-through selection
# ---------------------------------------------------------------------------


def st_select(y_soft: Tensor, indices: np.ndarray) -> Tensor:
    """Straight-through one-hot: forward is exact one-hot at the given index
    per row, backward passes the gradient to the softened distribution
    unchanged."""
    p = y_soft.data
    if p.ndim != 2:
        raise ShapeError("st_select", f"expects (B, n) distribution, got {p.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (p.shape[0],):
        raise ShapeError("st_select", f"indices shape {idx.shape} does not match batch {p.shape[0]}")
    out_data = np.zeros_like(p)
    out_data[np.arange(p.shape[0]), idx] = 1.0

    def bw(g):
        _accum(y_soft, g)

    return _wrap(out_data, (y_soft,), bw)


# ---------------------------------------------------------------------------
# fused recurrent / attention kernels
# ---------------------------------------------------------------------------


def gru_cell(
    x: Tensor,
    h: Tensor,
    w: Tensor,
    u: Tensor,
    b: Tensor,
    c: Tensor,
) -> Tensor:
    """One GRU step. Gate layout along the last axis is [reset | update | new].

    x: (B, in), h: (B, hid), w: (in, 3*hid), u: (hid, 3*hid), b, c: (3*hid,).
    """
    B, hid = h.data.shape
    if x.data.ndim != 2 or x.data.shape[0] != B:
        raise ShapeError("gru_cell", f"x batch {x.data.shape} does not match h {h.data.shape}")
    if w.data.shape != (x.data.shape[1], 3 * hid) or u.data.shape != (hid, 3 * hid):
        raise ShapeError(
            "gru_cell",
            f"weights w{w.data.shape} u{u.data.shape} do not match x{x.data.shape} h{h.data.shape}",
        )
    gi = x.data @ w.data + b.data
    gh = h.data @ u.data + c.data
    ir, iz, inn = gi[:, :hid], gi[:, hid : 2 * hid], gi[:, 2 * hid :]
    hr, hz, hn = gh[:, :hid], gh[:, hid : 2 * hid], gh[:, 2 * hid :]
    r = _sigmoid(ir + hr)
    z = _sigmoid(iz + hz)
    n = np.tanh(inn + r * hn)
    out_data = (1.0 - z) * n + z * h.data
    xd, hd = x.data, h.data

    def bw(g):
        dz = g * (hd - n)
        dn = g * (1.0 - z)
        dh_direct = g * z
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hn
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        if x.requires_grad:
            _accum(x, dgi @ w.data.T)
        if w.requires_grad:
            _accum(w, xd.T @ dgi)
        if b.requires_grad:
            _accum(b, dgi.sum(axis=0))
        if h.requires_grad:
            _accum(h, dgh @ u.data.T + dh_direct)
        if u.requires_grad:
            _accum(u, hd.T @ dgh)
        if c.requires_grad:
            _accum(c, dgh.sum(axis=0))

    return _wrap(out_data, (x, h, w, u, b, c), bw)


def self_attention(
    tokens: Tensor,
    mask: np.ndarray | None,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
) -> Tensor:
    """Single-head scaled dot-product self-attention over (B, L, h) tokens.

    mask: optional (B, L) 0/1 key mask; masked keys receive zero attention.
    Rows whose mask is all zero fall back to attending everything (their
    output is discarded downstream by the pooling mask).
    """
    T = tokens.data
    if T.ndim != 3:
        raise ShapeError("self_attention", f"expects (B, L, h) tokens, got {T.shape}")
    B, L, h = T.shape
    if wq.data.shape != (h, h) or wk.data.shape != (h, h) or wv.data.shape != (h, h):
        raise ShapeError("self_attention", f"projection shapes must be ({h}, {h})")
    scale = 1.0 / math.sqrt(h)
    T2 = T.reshape(B * L, h)
    Q = (T2 @ wq.data + bq.data).reshape(B, L, h)
    K = (T2 @ wk.data + bk.data).reshape(B, L, h)
    V = (T2 @ wv.data + bv.data).reshape(B, L, h)
    S = np.matmul(Q, K.transpose(0, 2, 1)) * scale
    if mask is not None:
        km = np.asarray(mask, dtype=np.float64)
        if km.shape != (B, L):
            raise ShapeError("self_attention", f"mask shape {km.shape} does not match ({B}, {L})")
        km = np.where(km.sum(axis=1, keepdims=True) > 0, km, 1.0)
        S = S + (1.0 - km)[:, None, :] * -1e30
    # row-wise softmax over keys
    mx = S.max(axis=-1, keepdims=True)
    E = np.exp(S - mx)
    A = E / E.sum(axis=-1, keepdims=True)
    out_data = np.matmul(A, V)

    def bw(g):
        dA = np.matmul(g, V.transpose(0, 2, 1))
        dV = np.matmul(A.transpose(0, 2, 1), g)
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
        dS *= scale
        dQ = np.matmul(dS, K)
        dK = np.matmul(dS.transpose(0, 2, 1), Q)
        dQ2 = dQ.reshape(B * L, h)
        dK2 = dK.reshape(B * L, h)
        dV2 = dV.reshape(B * L, h)
        if tokens.requires_grad:
            dT2 = dQ2 @ wq.data.T
            dT2 += dK2 @ wk.data.T
            dT2 += dV2 @ wv.data.T
            _accum(tokens, dT2.reshape(B, L, h))
        if wq.requires_grad:
            _accum(wq, T2.T @ dQ2)
        if bq.requires_grad:
            _accum(bq, dQ2.sum(axis=0))
        if wk.requires_grad:
            _accum(wk, T2.T @ dK2)
        if bk.requires_grad:
            _accum(bk, dK2.sum(axis=0))
        if wv.requires_grad:
            _accum(wv, T2.T @ dV2)
        if bv.requires_grad:
            _accum(bv, dV2.sum(axis=0))

    return _wrap(out_data, (tokens, wq, bq, wk, bk, wv, bv), bw)
