"""Dense float64 arrays with reverse-mode differentiation.

The engine is define-by-run: every forward op returns a new Tensor that
remembers its parents and a closure propagating gradients to them.  Calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order.  Tapes are rebuilt every training step, so graphs never
outlive the step that created them.

Also home to the CSR sparse matrix used for graph propagation, the Adam
optimizer, Glorot initialization, and tensor (de)serialization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import DataError, ShapeError

Array = np.ndarray


def _as_f64(data) -> Array:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Shape-tagged float64 array, optionally tracked on the computation tape.

    ``grad`` is populated by ``backward()`` and accumulates across calls;
    zero it (``grad = None``) between optimization steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output.

        Every tensor reachable from ``self`` gets its gradient accumulated
        into ``grad``; leaves that never appear on the tape keep whatever
        ``grad`` they already had (``None`` reads as zero).
        """
        if self.data.ndim != 0:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        # Iterative post-order topological sort; recursion would overflow on
        # deep tapes.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate(np.array(1.0))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Operator sugar delegates to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return elementwise_mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op) -> Tensor:
    return Tensor(data, _parents=tuple(parents), _backward=backward, op=op)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} incompatible")
    out_data = a.data @ b.data

    def backward(g: Array) -> None:
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return _node(out_data, (a, b), backward, "matmul")


def spmm(s: "SparseMatrix", d) -> Tensor:
    """Sparse @ dense; the sparse operand is a constant (graphs do not train)."""
    d = _tensor(d)
    if d.data.ndim != 2 or s.cols != d.shape[0]:
        raise ShapeError(f"spmm: shapes {(s.rows, s.cols)} and {d.shape} incompatible")
    out_data = s.matrix @ d.data

    def backward(g: Array) -> None:
        d.accumulate(s.matrix.T @ g)

    return _node(out_data, (d,), backward, "spmm")


def add(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    _check_same_shape("add", a, b)

    def backward(g: Array) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return _node(a.data + b.data, (a, b), backward, "add")


def neg(a) -> Tensor:
    a = _tensor(a)

    def backward(g: Array) -> None:
        a.accumulate(-g)

    return _node(-a.data, (a,), backward, "neg")


def bias_add(m, v) -> Tensor:
    """Add a row vector to every row of a matrix."""
    m, v = _tensor(m), _tensor(v)
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"bias_add: shapes {m.shape} and {v.shape} incompatible")

    def backward(g: Array) -> None:
        m.accumulate(g)
        v.accumulate(g.sum(axis=0))

    return _node(m.data + v.data[None, :], (m, v), backward, "bias_add")


def elementwise_mul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    _check_same_shape("elementwise_mul", a, b)

    def backward(g: Array) -> None:
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), backward, "elementwise_mul")


def scale(a, s) -> Tensor:
    """Multiply a tensor by a scalar tensor (both sides differentiable)."""
    a, s = _tensor(a), _tensor(s)
    if s.data.ndim != 0:
        raise ShapeError(f"scale: scalar expected, got shape {s.shape}")

    def backward(g: Array) -> None:
        a.accumulate(g * s.data)
        s.accumulate(np.array((g * a.data).sum()))

    return _node(a.data * s.data, (a, s), backward, "scale")


def cmul(a, c: float) -> Tensor:
    """Multiply by a plain float constant."""
    a = _tensor(a)
    c = float(c)

    def backward(g: Array) -> None:
        a.accumulate(g * c)

    return _node(a.data * c, (a,), backward, "cmul")


def prelu(a, slope) -> Tensor:
    """Leaky rectifier with a learnable scalar slope on the negative side."""
    a, slope = _tensor(a), _tensor(slope)
    if slope.data.ndim != 0:
        raise ShapeError(f"prelu: scalar slope expected, got shape {slope.shape}")
    positive = a.data >= 0

    def backward(g: Array) -> None:
        a.accumulate(g * np.where(positive, 1.0, slope.data))
        slope.accumulate(np.array((g * np.where(positive, 0.0, a.data)).sum()))

    return _node(np.where(positive, a.data, slope.data * a.data), (a, slope), backward, "prelu")


def sigmoid(a) -> Tensor:
    a = _tensor(a)
    y = expit(a.data)

    def backward(g: Array) -> None:
        a.accumulate(g * y * (1.0 - y))

    return _node(y, (a,), backward, "sigmoid")


def logsigmoid(a) -> Tensor:
    """log(sigmoid(x)) computed without overflow; backbone of the BCE losses."""
    a = _tensor(a)
    x = a.data
    out_data = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def backward(g: Array) -> None:
        a.accumulate(g * expit(-x))

    return _node(out_data, (a,), backward, "logsigmoid")


def log(a) -> Tensor:
    a = _tensor(a)

    def backward(g: Array) -> None:
        a.accumulate(g / a.data)

    return _node(np.log(a.data), (a,), backward, "log")


def softmax(v) -> Tensor:
    """Softmax of a 1-D vector."""
    v = _tensor(v)
    if v.data.ndim != 1:
        raise ShapeError(f"softmax: vector expected, got shape {v.shape}")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def backward(g: Array) -> None:
        v.accumulate(y * (g - float(g @ y)))

    return _node(y, (v,), backward, "softmax")


def log_softmax_rows(m) -> Tensor:
    """Row-wise log-softmax of a matrix; stable for cross-entropy losses."""
    m = _tensor(m)
    if m.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows: matrix expected, got shape {m.shape}")
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - logz
    probs = np.exp(out_data)

    def backward(g: Array) -> None:
        m.accumulate(g - probs * g.sum(axis=1, keepdims=True))

    return _node(out_data, (m,), backward, "log_softmax_rows")


def mean_rows(m) -> Tensor:
    """Mean over the rows of a matrix, returning one vector of column means."""
    m = _tensor(m)
    if m.data.ndim != 2:
        raise ShapeError(f"mean_rows: matrix expected, got shape {m.shape}")
    n = m.shape[0]

    def backward(g: Array) -> None:
        m.accumulate(np.broadcast_to(g[None, :] / n, m.shape).copy())

    return _node(m.data.mean(axis=0), (m,), backward, "mean_rows")


def row_sums(m) -> Tensor:
    """Sum along each row of a matrix, returning one value per row."""
    m = _tensor(m)
    if m.data.ndim != 2:
        raise ShapeError(f"row_sums: matrix expected, got shape {m.shape}")

    def backward(g: Array) -> None:
        m.accumulate(np.broadcast_to(g[:, None], m.shape).copy())

    return _node(m.data.sum(axis=1), (m,), backward, "row_sums")


def sum_all(a) -> Tensor:
    a = _tensor(a)

    def backward(g: Array) -> None:
        a.accumulate(np.broadcast_to(g, a.shape).copy())

    return _node(np.array(a.data.sum()), (a,), backward, "sum_all")


def mean_all(a) -> Tensor:
    a = _tensor(a)
    n = a.size

    def backward(g: Array) -> None:
        a.accumulate(np.broadcast_to(g / n, a.shape).copy())

    return _node(np.array(a.data.mean()), (a,), backward, "mean_all")


def dot(u, v) -> Tensor:
    u, v = _tensor(u), _tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError(f"dot: vectors expected, got shapes {u.shape} and {v.shape}")
    _check_same_shape("dot", u, v)

    def backward(g: Array) -> None:
        u.accumulate(g * v.data)
        v.accumulate(g * u.data)

    return _node(np.array(u.data @ v.data), (u, v), backward, "dot")


def transpose(m) -> Tensor:
    m = _tensor(m)

    def backward(g: Array) -> None:
        m.accumulate(g.T)

    return _node(m.data.T.copy(), (m,), backward, "transpose")


def reshape(a, new_shape) -> Tensor:
    a = _tensor(a)
    old_shape = a.shape

    def backward(g: Array) -> None:
        a.accumulate(g.reshape(old_shape))

    return _node(a.data.reshape(new_shape), (a,), backward, "reshape")


def gather_rows(m, indices) -> Tensor:
    """Select rows of a matrix by an index array (gradient scatters back)."""
    m = _tensor(m)
    idx = np.asarray(indices, dtype=np.int64)
    if m.data.ndim != 2:
        raise ShapeError(f"gather_rows: matrix expected, got shape {m.shape}")

    def backward(g: Array) -> None:
        acc = np.zeros_like(m.data)
        np.add.at(acc, idx, g)
        m.accumulate(acc)

    return _node(m.data[idx], (m,), backward, "gather_rows")


def vitem(v, i: int) -> Tensor:
    """Extract one entry of a vector as a scalar tensor."""
    v = _tensor(v)
    if v.data.ndim != 1:
        raise ShapeError(f"vitem: vector expected, got shape {v.shape}")

    def backward(g: Array) -> None:
        acc = np.zeros_like(v.data)
        acc[i] = g
        v.accumulate(acc)

    return _node(np.array(v.data[i]), (v,), backward, "vitem")


def stack_scalars(scalars) -> Tensor:
    """Stack scalar tensors into one vector."""
    scalars = [_tensor(s) for s in scalars]
    for s in scalars:
        if s.data.ndim != 0:
            raise ShapeError(f"stack_scalars: scalar expected, got shape {s.shape}")

    def backward(g: Array) -> None:
        for i, s in enumerate(scalars):
            s.accumulate(np.array(g[i]))

    return _node(np.array([s.data for s in scalars]), tuple(scalars), backward, "stack_scalars")


# ---------------------------------------------------------------------------
# Sparse matrices
# ---------------------------------------------------------------------------

class SparseMatrix:
    """Immutable CSR matrix; one entry per (row, col), indices in range."""

    __slots__ = ("matrix",)

    def __init__(self, matrix: sp.spmatrix):
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        csr.sum_duplicates()
        self.matrix = csr

    @classmethod
    def from_triplets(cls, rows: int, cols: int, entries) -> "SparseMatrix":
        entries = list(entries)
        if entries:
            r, c, v = (np.asarray(x) for x in zip(*entries))
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        if len(r) and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise DataError("sparse entry index out of range")
        if len(set(zip(r.tolist(), c.tolist()))) != len(r):
            raise DataError("duplicate (row, col) entry in sparse triplets")
        return cls(sp.csr_matrix((v, (r, c)), shape=(rows, cols)))

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        return cls(sp.csr_matrix(_as_f64(arr)))

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def entries(self) -> list[tuple[int, int, float]]:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[i]), int(coo.col[i]), float(coo.data[i])) for i in order]

    def to_dense(self) -> Array:
        return self.matrix.toarray()


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam; moments are kept per parameter, in step order."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[Array] = field(default_factory=list)
    v: list[Array] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float = 1e-3) -> "AdamState":
        state = cls(lr=lr)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(state: AdamState, params: list[Tensor], grads: list[Array] | None = None) -> list[Tensor]:
    """One in-place Adam update; grads default to each parameter's .grad."""
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or len(params) != len(state.m):
        raise ShapeError("adam_step: parameter/gradient/state lengths differ")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.data.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all .grad buffers so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> Tensor:
    """Uniform fan-averaged init in +-sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise ShapeError(f"glorot_init: extents must be positive, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return parameter(rng.uniform(-limit, limit, size=(rows, cols)))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

MAGIC = b"HEMI"


def save_tensor(path, array) -> None:
    """Little-endian binary: magic, u32 rank, u64 extents, f64 payload."""
    arr = _as_f64(array)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            f.write(struct.pack("<Q", extent))
        f.write(arr.astype("<f8").tobytes(order="C"))


def load_tensor(path) -> Array:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        (rank,) = struct.unpack("<I", f.read(4))
        shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = np.frombuffer(f.read(8 * count), dtype="<f8", count=count)
        if payload.size != count:
            raise DataError(f"{path}: truncated payload")
        return payload.astype(np.float64).reshape(shape)


def save_tsv(path, array) -> None:
    """Tab-separated text export, one matrix row per line."""
    arr = np.atleast_2d(_as_f64(array))
    with open(path, "w", encoding="utf-8") as f:
        for row in arr:
            f.write("\t".join(repr(float(x)) for x in row))
            f.write("\n")


def load_tsv(path) -> Array:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split("\t")])
    return np.array(rows, dtype=np.float64)
