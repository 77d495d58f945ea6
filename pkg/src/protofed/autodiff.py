"""Reverse-mode automatic differentiation on an append-only tape.

Values are float64 numpy arrays.  Ops record nodes (op kind, tracked parent
ids, saved activations inside the backward closure) on a Tape; backward walks
the tape in exact reverse append order, so the visit order is deterministic
and bit-reproducible for a fixed graph.

A Tape is single-threaded and owned by one local update.  Constants never
touch the tape; only tensors created through Tape.leaf (and anything computed
from them) are tracked.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, LayoutError, NumericError, ShapeError

__all__ = [
    "Tensor", "Tape", "ParamStore", "constant", "forward_op", "sgd_step",
    "matmul", "add", "mul", "scalar_mul", "relu", "tanh", "sigmoid",
    "softmax", "log", "exp", "mean", "sum_", "concat", "slice_",
    "conv1d", "maxpool1d", "l2norm", "cosine_sim", "OP_KINDS",
]


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _ensure_finite(kind: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"op '{kind}' produced a non-finite value")


class Tensor:
    """A float64 array, optionally tracked on a tape.

    grad_id is the owning tape's node id, or None for constants.
    """

    __slots__ = ("data", "tape", "grad_id")

    def __init__(self, data, tape: "Tape | None" = None, grad_id: int | None = None):
        self.data = _f64(data)
        self.tape = tape
        self.grad_id = grad_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.grad_id is not None

    def __repr__(self):
        tag = f", node={self.grad_id}" if self.tracked else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Arithmetic sugar; composes the primitive ops so the op set stays closed.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else constant(other)
        return add(self, scalar_mul(other, -1.0))

    def __rsub__(self, other):
        other = other if isinstance(other, Tensor) else constant(other)
        return add(other, scalar_mul(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x) -> Tensor:
    """Wrap an array or scalar as an untracked tensor."""
    if isinstance(x, Tensor):
        return x
    return Tensor(_f64(x))


class _Node:
    __slots__ = ("kind", "parents", "backward", "shape")

    def __init__(self, kind, parents, backward, shape):
        self.kind = kind
        self.parents = parents
        self.backward = backward
        self.shape = shape


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.param_ids: set[int] = set()

    def leaf(self, data, param: bool = False) -> Tensor:
        """Register a tracked leaf.  param=True marks it for gradient output."""
        value = _f64(data)
        nid = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None, value.shape))
        if param:
            self.param_ids.add(nid)
        return Tensor(value, self, nid)

    def _record(self, kind, value, parents, backward) -> Tensor:
        _ensure_finite(kind, value)
        nid = len(self.nodes)
        self.nodes.append(_Node(kind, parents, backward, value.shape))
        return Tensor(value, self, nid)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(param) for every registered param leaf.

        loss must be a tracked scalar on this tape.  Params the loss does not
        depend on get zero gradients of the right shape.
        """
        if loss.tape is not self or not loss.tracked:
            raise ShapeError("backward: loss is not tracked on this tape")
        if loss.data.shape != ():
            raise ShapeError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.grad_id: np.ones(())}
        for nid in range(loss.grad_id, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            if nid in self.param_ids:
                grads[nid] = g  # keep param grads around for the result map
                continue
            if node.backward is None:
                continue
            for pid, contrib in node.backward(g):
                if pid in grads:
                    grads[pid] = grads[pid] + contrib
                else:
                    grads[pid] = contrib
        out = {}
        for pid in self.param_ids:
            out[pid] = grads.get(pid, np.zeros(self.nodes[pid].shape))
        return out


# ---------------------------------------------------------------------------
# op plumbing
# ---------------------------------------------------------------------------

def _prep(kind, *xs):
    """Coerce inputs to tensors and find the common tape (or None)."""
    tensors = [x if isinstance(x, Tensor) else constant(x) for x in xs]
    tape = None
    for t in tensors:
        if t.tracked:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ShapeError(f"op '{kind}': operands belong to different tapes")
    return tensors, tape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to an operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    """2-D matrix product a @ b (or a @ b.T with transpose_b)."""
    (a, b), tape = _prep("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    bd = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} vs {b.data.shape}"
                         f"{' (transposed)' if transpose_b else ''}")
    value = a.data @ bd
    if tape is None:
        _ensure_finite("matmul", value)
        return Tensor(value)
    ad, braw = a.data, b.data
    aid, bid = a.grad_id, b.grad_id

    def bwd(g):
        out = []
        if aid is not None:
            out.append((aid, g @ (braw if transpose_b else braw.T)))
        if bid is not None:
            out.append((bid, g.T @ ad if transpose_b else ad.T @ g))
        return out

    return tape._record("matmul", value, (aid, bid), bwd)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    (a, b), tape = _prep("add", a, b)
    try:
        value = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {exc}") from None
    if tape is None:
        _ensure_finite("add", value)
        return Tensor(value)
    ash, bsh = a.data.shape, b.data.shape
    aid, bid = a.grad_id, b.grad_id

    def bwd(g):
        out = []
        if aid is not None:
            out.append((aid, _unbroadcast(g, ash)))
        if bid is not None:
            out.append((bid, _unbroadcast(g, bsh)))
        return out

    return tape._record("add", value, (aid, bid), bwd)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    (a, b), tape = _prep("mul", a, b)
    try:
        value = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {exc}") from None
    if tape is None:
        _ensure_finite("mul", value)
        return Tensor(value)
    ad, bd = a.data, b.data
    aid, bid = a.grad_id, b.grad_id

    def bwd(g):
        out = []
        if aid is not None:
            out.append((aid, _unbroadcast(g * bd, ad.shape)))
        if bid is not None:
            out.append((bid, _unbroadcast(g * ad, bd.shape)))
        return out

    return tape._record("mul", value, (aid, bid), bwd)


def scalar_mul(a, c: float) -> Tensor:
    """Multiply by a python scalar."""
    (a,), tape = _prep("scalar_mul", a)
    c = float(c)
    value = a.data * c
    if tape is None:
        _ensure_finite("scalar_mul", value)
        return Tensor(value)
    aid = a.grad_id
    return tape._record("scalar_mul", value, (aid,), lambda g: [(aid, g * c)])


def relu(a) -> Tensor:
    (a,), tape = _prep("relu", a)
    value = np.maximum(a.data, 0.0)
    if tape is None:
        return Tensor(value)
    mask = a.data > 0.0
    aid = a.grad_id
    return tape._record("relu", value, (aid,), lambda g: [(aid, g * mask)])


def tanh(a) -> Tensor:
    (a,), tape = _prep("tanh", a)
    value = np.tanh(a.data)
    if tape is None:
        return Tensor(value)
    aid = a.grad_id
    # d tanh = 1 - tanh^2
    return tape._record("tanh", value, (aid,), lambda g: [(aid, g * (1.0 - value * value))])


def sigmoid(a) -> Tensor:
    (a,), tape = _prep("sigmoid", a)
    x = a.data
    value = np.empty_like(x)
    pos = x >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    value[~pos] = ex / (1.0 + ex)
    if tape is None:
        return Tensor(value)
    aid = a.grad_id
    # d sigma = sigma (1 - sigma)
    return tape._record("sigmoid", value, (aid,), lambda g: [(aid, g * value * (1.0 - value))])


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-stable softmax along one axis."""
    (a,), tape = _prep("softmax", a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)
    if tape is None:
        _ensure_finite("softmax", value)
        return Tensor(value)
    aid = a.grad_id

    def bwd(g):
        # dx = y * (g - sum(g * y))
        inner = (g * value).sum(axis=axis, keepdims=True)
        return [(aid, value * (g - inner))]

    return tape._record("softmax", value, (aid,), bwd)


def log(a) -> Tensor:
    (a,), tape = _prep("log", a)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(a.data)
    if tape is None:
        _ensure_finite("log", value)
        return Tensor(value)
    ad = a.data
    aid = a.grad_id
    return tape._record("log", value, (aid,), lambda g: [(aid, g / ad)])


def exp(a) -> Tensor:
    (a,), tape = _prep("exp", a)
    with np.errstate(over="ignore"):
        value = np.exp(a.data)
    if tape is None:
        _ensure_finite("exp", value)
        return Tensor(value)
    aid = a.grad_id
    return tape._record("exp", value, (aid,), lambda g: [(aid, g * value)])


def _axis_grad_shape(shape, axis):
    """Shape g must be expanded to before broadcasting back over `shape`."""
    expanded = list(shape)
    expanded[axis] = 1
    return tuple(expanded)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over all elements (axis=None) or one axis."""
    (a,), tape = _prep("mean", a)
    value = a.data.mean(axis=axis, keepdims=keepdims)
    if tape is None:
        _ensure_finite("mean", value)
        return Tensor(value)
    ash = a.data.shape
    aid = a.grad_id
    if axis is None:
        n = a.data.size

        def bwd(g):
            return [(aid, np.full(ash, g.reshape(()) / n))]
    else:
        n = ash[axis]
        gshape = _axis_grad_shape(ash, axis)

        def bwd(g):
            return [(aid, np.broadcast_to(g.reshape(gshape) / n, ash).copy())]

    return tape._record("mean", value, (aid,), bwd)


def sum_(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Sum over all elements (axis=None) or one axis."""
    (a,), tape = _prep("sum", a)
    value = a.data.sum(axis=axis, keepdims=keepdims)
    if tape is None:
        _ensure_finite("sum", value)
        return Tensor(value)
    ash = a.data.shape
    aid = a.grad_id
    if axis is None:
        def bwd(g):
            return [(aid, np.full(ash, g.reshape(())))]
    else:
        gshape = _axis_grad_shape(ash, axis)

        def bwd(g):
            return [(aid, np.broadcast_to(g.reshape(gshape), ash).copy())]

    return tape._record("sum", value, (aid,), bwd)


def concat(parts, axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    tensors, tape = _prep("concat", *parts)
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    if tape is None:
        _ensure_finite("concat", value)
        return Tensor(value)
    sizes = [t.data.shape[axis] for t in tensors]
    ids = tuple(t.grad_id for t in tensors)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i, pid in enumerate(ids):
            if pid is None:
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append((pid, g[tuple(sl)]))
        return pieces

    return tape._record("concat", value, ids, bwd)


def slice_(a, axis: int, start: int, stop: int | None = None) -> Tensor:
    """Take a contiguous range [start, stop) along axis, or a single index.

    With stop=None, `start` is an integer index and the axis is dropped
    (numpy x[..., i, ...] semantics).
    """
    (a,), tape = _prep("slice", a)
    ndim = a.data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"slice: axis {axis} out of range for shape {a.data.shape}")
    axis = axis % ndim
    n = a.data.shape[axis]
    index_mode = stop is None
    if index_mode:
        if not 0 <= start < n:
            raise ShapeError(f"slice: index {start} out of range for axis of size {n}")
        key = [slice(None)] * ndim
        key[axis] = start
    else:
        if not (0 <= start <= stop <= n):
            raise ShapeError(f"slice: range [{start}, {stop}) invalid for axis of size {n}")
        key = [slice(None)] * ndim
        key[axis] = slice(start, stop)
    key = tuple(key)
    value = a.data[key].copy()
    if tape is None:
        return Tensor(value)
    ash = a.data.shape
    aid = a.grad_id

    def bwd(g):
        full = np.zeros(ash)
        full[key] = g
        return [(aid, full)]

    return tape._record("slice", value, (aid,), bwd)


def _window_index(length_out: int, kernel: int, stride: int) -> np.ndarray:
    # (L_out, K) gather index into the (padded) length axis
    return np.arange(length_out)[:, None] * stride + np.arange(kernel)[None, :]


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution (cross-correlation) over (B, C_in, L).

    w has shape (C_out, C_in, K); explicit zero padding on both ends.
    Returns (B, C_out, L_out) with L_out = (L + 2*padding - K) // stride + 1.
    """
    inputs = (x, w) if b is None else (x, w, b)
    tensors, tape = _prep("conv1d", *inputs)
    x, w = tensors[0], tensors[1]
    b = tensors[2] if len(tensors) == 3 else None
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv1d expects x (B,C,L) and w (O,C,K), got {x.data.shape}, {w.data.shape}")
    B, C, L = x.data.shape
    O, Cw, K = w.data.shape
    if C != Cw:
        raise ShapeError(f"conv1d: channel mismatch, x has {C}, w expects {Cw}")
    if b is not None and b.data.shape != (O,):
        raise ShapeError(f"conv1d: bias shape {b.data.shape} != ({O},)")
    Lp = L + 2 * padding
    if Lp < K:
        raise ShapeError(f"conv1d: kernel {K} longer than padded input {Lp}")
    Lout = (Lp - K) // stride + 1
    xp = np.zeros((B, C, Lp)) if padding else x.data
    if padding:
        xp[:, :, padding:padding + L] = x.data
    idx = _window_index(Lout, K, stride)
    cols = xp[:, :, idx]                       # (B, C, Lout, K)
    value = np.einsum("bclk,ock->bol", cols, w.data, optimize=True)
    if b is not None:
        value = value + b.data[None, :, None]
    if tape is None:
        _ensure_finite("conv1d", value)
        return Tensor(value)
    xid, wid = x.grad_id, w.grad_id
    bid = b.grad_id if b is not None else None
    wd = w.data

    def bwd(g):
        out = []
        if xid is not None:
            dcols = np.einsum("bol,ock->bclk", g, wd, optimize=True)
            dxp = np.zeros((B, C, Lp))
            np.add.at(dxp, (slice(None), slice(None), idx), dcols)
            out.append((xid, dxp[:, :, padding:padding + L] if padding else dxp))
        if wid is not None:
            out.append((wid, np.einsum("bol,bclk->ock", g, cols, optimize=True)))
        if bid is not None:
            out.append((bid, g.sum(axis=(0, 2))))
        return out

    return tape._record("conv1d", value, (xid, wid, bid), bwd)


def maxpool1d(x, kernel: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling over the last axis of (B, C, L); trailing remainder is dropped."""
    (x,), tape = _prep("maxpool1d", x)
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool1d expects (B,C,L), got {x.data.shape}")
    stride = kernel if stride is None else stride
    B, C, L = x.data.shape
    if L < kernel:
        raise ShapeError(f"maxpool1d: kernel {kernel} longer than input {L}")
    Lout = (L - kernel) // stride + 1
    idx = _window_index(Lout, kernel, stride)
    windows = x.data[:, :, idx]                # (B, C, Lout, K)
    arg = windows.argmax(axis=3)
    value = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    if tape is None:
        return Tensor(value)
    xid = x.grad_id
    # position of each window max on the original L axis
    src = arg + (np.arange(Lout) * stride)[None, None, :]

    def bwd(g):
        dx = np.zeros((B, C, L))
        bi = np.arange(B)[:, None, None]
        ci = np.arange(C)[None, :, None]
        np.add.at(dx, (bi, ci, src), g)
        return [(xid, dx)]

    return tape._record("maxpool1d", value, (xid,), bwd)


_NORM_EPS = 1e-12


def l2norm(a, axis: int = -1, eps: float = _NORM_EPS) -> Tensor:
    """Normalize along an axis: y = x / (||x|| + eps)."""
    (a,), tape = _prep("l2norm", a)
    x = a.data
    n = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    denom = n + eps
    value = x / denom
    if tape is None:
        _ensure_finite("l2norm", value)
        return Tensor(value)
    aid = a.grad_id

    def bwd(g):
        # dy/dx = I/denom - x x^T / (n denom^2); zero-norm rows fall back to g/denom
        inner = (g * x).sum(axis=axis, keepdims=True)
        correction = np.where(n > 0.0, x * inner / np.where(n > 0.0, n * denom * denom, 1.0), 0.0)
        return [(aid, g / denom - correction)]

    return tape._record("l2norm", value, (aid,), bwd)


def cosine_sim(u, v, eps: float = _NORM_EPS) -> Tensor:
    """Cosine similarity along the last axis.

    Accepts matching 1-D or 2-D shapes, or a 2-D u with a 1-D v broadcast over
    rows.  Each norm is guarded by eps so zero vectors give similarity 0.
    """
    (u, v), tape = _prep("cosine_sim", u, v)
    ud, vd = u.data, v.data
    if ud.ndim == 2 and vd.ndim == 1:
        vd = np.broadcast_to(vd, ud.shape)
        v_was_1d = True
    elif ud.shape != vd.shape or ud.ndim not in (1, 2):
        raise ShapeError(f"cosine_sim: incompatible shapes {u.data.shape} and {v.data.shape}")
    else:
        v_was_1d = False
    dot = (ud * vd).sum(axis=-1)
    nu = np.sqrt((ud * ud).sum(axis=-1))
    nv = np.sqrt((vd * vd).sum(axis=-1))
    denom = (nu + eps) * (nv + eps)
    value = dot / denom
    if tape is None:
        _ensure_finite("cosine_sim", value)
        return Tensor(value)
    uid, vid = u.grad_id, v.grad_id

    def bwd(g):
        ge = g[..., None]
        out = []
        if uid is not None:
            safe = np.where(nu > 0.0, nu * (nu + eps) ** 2 * (nv + eps), 1.0)
            du = ge * (vd / denom[..., None] - np.where(nu > 0.0, dot / safe, 0.0)[..., None] * ud)
            out.append((uid, du))
        if vid is not None:
            safe = np.where(nv > 0.0, nv * (nv + eps) ** 2 * (nu + eps), 1.0)
            dv = ge * (ud / denom[..., None] - np.where(nv > 0.0, dot / safe, 0.0)[..., None] * vd)
            if v_was_1d:
                dv = dv.sum(axis=0)
            out.append((vid, dv))
        return out

    return tape._record("cosine_sim", value, (uid, vid), bwd)


_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scalar_mul": scalar_mul,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log": log,
    "exp": exp,
    "mean": mean,
    "sum": sum_,
    "concat": concat,
    "slice": slice_,
    "conv1d": conv1d,
    "maxpool1d": maxpool1d,
    "l2norm": l2norm,
    "cosine_sim": cosine_sim,
}

OP_KINDS = tuple(sorted(_OPS))


def forward_op(kind: str, *args, **kwargs) -> Tensor:
    """Apply an op by kind name.  Unknown kinds are rejected."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ConfigError(f"unknown op kind '{kind}'; valid kinds: {', '.join(OP_KINDS)}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class ParamStore:
    """Named float64 parameter tensors with a stable flat layout.

    The flatten/unflatten layout orders parameters by sorted name, so any two
    stores built from the same architecture agree on it.
    """

    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays = {name: _f64(arrays[name]).copy() for name in sorted(arrays)}

    def __contains__(self, name):
        return name in self._arrays

    def __getitem__(self, name) -> np.ndarray:
        return self._arrays[name]

    def __len__(self):
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParamStore":
        return ParamStore(self._arrays)

    def n_scalars(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def layout(self) -> list[dict]:
        """Flat layout descriptor: name, shape, offset per parameter."""
        out = []
        offset = 0
        for name, a in self._arrays.items():
            out.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.size
        return out

    def flatten(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([a.reshape(-1) for a in self._arrays.values()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, layout: list[dict]) -> "ParamStore":
        vec = _f64(vec)
        total = sum(int(np.prod(e["shape"])) for e in layout)
        if vec.ndim != 1 or vec.size != total:
            raise LayoutError(f"flat vector has {vec.size} scalars, layout expects {total}")
        arrays = {}
        for e in layout:
            size = int(np.prod(e["shape"]))
            arrays[e["name"]] = vec[e["offset"]:e["offset"] + size].reshape(e["shape"])
        return cls(arrays)

    def tracked(self, tape: Tape) -> dict[str, Tensor]:
        """Register every parameter as a tracked leaf on `tape`.

        Registration follows sorted-name order, making node ids deterministic.
        """
        return {name: tape.leaf(a, param=True) for name, a in self._arrays.items()}


def sgd_step(params: ParamStore, grads: dict[str, np.ndarray], lr: float,
             weight_decay: float = 0.0) -> ParamStore:
    """In-place SGD with decoupled-from-nothing L2: p <- p - lr*(g + wd*p)."""
    if set(grads) != set(params.names()):
        missing = set(params.names()) ^ set(grads)
        raise LayoutError(f"sgd_step: gradient keys do not match parameters: {sorted(missing)}")
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise LayoutError(f"sgd_step: shape mismatch for '{name}': {g.shape} vs {p.shape}")
        p -= lr * (g + weight_decay * p)
    return params
