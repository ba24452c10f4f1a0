"""Dense-matrix reverse-mode differentiation on an append-only tape.

Every value is a 2-D float array (scalars are 1x1). Operations record
themselves on a :class:`Tape` whenever gradients can flow to one of their
operands; the backward pass walks the tape once, in reverse topological
order, and accumulates adjoints.

The twist needed here is that backward itself can run in *traced* mode, in
which case every adjoint is emitted through the same primitive operations
and lands back on the tape. Gradients produced that way stay differentiable,
which is what lets a whole training run (forward passes plus gradient-descent
updates) be unrolled and differentiated end to end with respect to an input
matrix such as a graph adjacency.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Operand values lie outside the operation's domain (e.g. log of <= 0)."""


class NonFiniteError(ArithmeticError):
    """A computation produced NaN or infinity."""


class Node:
    """One recorded operation: kind, parent node ids, saved output value."""

    __slots__ = ("kind", "parents", "value", "requires_grad", "aux")

    def __init__(self, kind, parents, value, requires_grad, aux=None):
        self.kind = kind
        self.parents = parents
        self.value = value
        self.requires_grad = requires_grad
        self.aux = aux


class TracedValue:
    """Handle to a matrix, optionally backed by a tape node.

    ``node_id is None`` marks a plain constant: it never accumulates
    gradient and recording skips over it.
    """

    __slots__ = ("tape", "node_id", "value", "requires_grad")

    def __init__(self, tape, node_id, value, requires_grad):
        self.tape = tape
        self.node_id = node_id
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 value, got {self.value.shape}")
        return float(self.value[0, 0])

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    def __repr__(self):
        tag = "const" if self.node_id is None else f"node {self.node_id}"
        return f"TracedValue({tag}, shape={self.value.shape}, grad={self.requires_grad})"


class Tape:
    """Append-only record of operations plus a registry of leaf nodes."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.leaf_ids: list[int] = []
        self.recording = True

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, requires_grad: bool = True) -> TracedValue:
        """Register an input matrix (parameter, adjacency, ...) on the tape."""
        arr = _as_matrix(value, self.dtype)
        nid = len(self.nodes)
        self.nodes.append(Node("leaf", (), arr, requires_grad))
        self.leaf_ids.append(nid)
        return TracedValue(self, nid, arr, requires_grad)

    def constant(self, value) -> TracedValue:
        """Wrap a matrix that never needs gradient; not recorded until used."""
        return TracedValue(self, None, _as_matrix(value, self.dtype), False)

    def handle(self, node_id: int) -> TracedValue:
        node = self.nodes[node_id]
        return TracedValue(self, node_id, node.value, node.requires_grad)

    def _intern(self, tv: TracedValue) -> int:
        # constants get a node only once they feed a recorded operation
        if tv.node_id is None:
            nid = len(self.nodes)
            self.nodes.append(Node("leaf", (), tv.value, False))
            tv.node_id = nid
            tv.tape = self
        return tv.node_id


def _as_matrix(value, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={arr.ndim}")
    return arr


def _as_traced(x, tape=None) -> TracedValue:
    if isinstance(x, TracedValue):
        return x
    dtype = tape.dtype if tape is not None else np.float64
    return TracedValue(tape, None, _as_matrix(x, dtype), False)


def _tape_of(*tvs) -> Tape | None:
    for tv in tvs:
        if tv.tape is not None:
            return tv.tape
    return None


def constant(value, tape: Tape | None = None) -> TracedValue:
    """Wrap a matrix as a gradient-free constant."""
    return _as_traced(value, tape)


def _emit(kind: str, operands: Sequence[TracedValue], value: np.ndarray, aux=None) -> TracedValue:
    tape = _tape_of(*operands)
    requires = any(op.requires_grad for op in operands)
    if tape is None or not tape.recording or not requires:
        return TracedValue(tape, None, value, False)
    parents = tuple(tape._intern(op) for op in operands)
    nid = len(tape.nodes)
    tape.nodes.append(Node(kind, parents, value, True, aux))
    return TracedValue(tape, nid, value, True)


def _check_same_shape(a: TracedValue, b: TracedValue, op: str):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


# ---------------------------------------------------------------------------
# forward primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> TracedValue:
    a, b = _as_traced(a), _as_traced(b, _tape_of(a))
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims differ, {a.value.shape} @ {b.value.shape}")
    return _emit("matmul", (a, b), a.value @ b.value)


def transpose(a) -> TracedValue:
    a = _as_traced(a)
    return _emit("transpose", (a,), a.value.T.copy())


def add(a, b) -> TracedValue:
    a = _as_traced(a)
    b = _as_traced(b, _tape_of(a))
    _check_same_shape(a, b, "add")
    return _emit("add", (a, b), a.value + b.value)


def sub(a, b) -> TracedValue:
    a = _as_traced(a)
    b = _as_traced(b, _tape_of(a))
    _check_same_shape(a, b, "sub")
    return _emit("sub", (a, b), a.value - b.value)


def mul(a, b) -> TracedValue:
    a = _as_traced(a)
    b = _as_traced(b, _tape_of(a))
    _check_same_shape(a, b, "mul")
    return _emit("mul", (a, b), a.value * b.value)


def scale(a, c: float) -> TracedValue:
    a = _as_traced(a)
    return _emit("scale", (a,), a.value * c, aux=float(c))


def add_scalar(a, c: float) -> TracedValue:
    a = _as_traced(a)
    return _emit("add_scalar", (a,), a.value + c, aux=float(c))


def sigmoid(a) -> TracedValue:
    a = _as_traced(a)
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", (a,), out)


def exp(a) -> TracedValue:
    a = _as_traced(a)
    out = np.exp(a.value)
    if not np.isfinite(out).all():
        raise NonFiniteError("exp overflowed")
    return _emit("exp", (a,), out)


def log(a) -> TracedValue:
    a = _as_traced(a)
    if (a.value <= 0).any():
        raise DomainError("log needs strictly positive entries")
    return _emit("log", (a,), np.log(a.value))


def relu(a) -> TracedValue:
    a = _as_traced(a)
    return _emit("relu", (a,), np.maximum(a.value, 0.0))


def leaky_relu(a, slope: float = 0.2) -> TracedValue:
    a = _as_traced(a)
    out = np.where(a.value > 0, a.value, slope * a.value)
    return _emit("leaky_relu", (a,), out, aux=float(slope))


def clip(a, lo: float, hi: float) -> TracedValue:
    a = _as_traced(a)
    return _emit("clip", (a,), np.clip(a.value, lo, hi), aux=(float(lo), float(hi)))


def power(a, p: float) -> TracedValue:
    a = _as_traced(a)
    out = a.value ** p
    if not np.isfinite(out).all():
        raise DomainError(f"power({p}) produced non-finite entries")
    return _emit("power", (a,), out, aux=float(p))


def matrix_sum(a) -> TracedValue:
    a = _as_traced(a)
    return _emit("sum", (a,), np.array([[a.value.sum()]], dtype=a.value.dtype))


def matrix_mean(a) -> TracedValue:
    a = _as_traced(a)
    return _emit("mean", (a,), np.array([[a.value.mean()]], dtype=a.value.dtype))


def frobenius_norm(a) -> TracedValue:
    """sqrt of the sum of squared entries, as a 1x1 traced scalar."""
    a = _as_traced(a)
    return power(matrix_sum(mul(a, a)), 0.5)


def row_sum(a) -> TracedValue:
    a = _as_traced(a)
    return _emit("row_sum", (a,), a.value.sum(axis=1, keepdims=True))


def diag(v) -> TracedValue:
    v = _as_traced(v)
    if v.cols != 1:
        raise ShapeError(f"diag expects a column vector, got {v.value.shape}")
    return _emit("diag", (v,), np.diagflat(v.value))


def diag_part(a) -> TracedValue:
    a = _as_traced(a)
    if a.rows != a.cols:
        raise ShapeError("diag_part expects a square matrix")
    return _emit("diag_part", (a,), np.diagonal(a.value).reshape(-1, 1).copy())


def broadcast_scalar(s, rows: int, cols: int) -> TracedValue:
    s = _as_traced(s)
    if s.value.shape != (1, 1):
        raise ShapeError("broadcast_scalar expects a 1x1 operand")
    out = np.full((rows, cols), s.value[0, 0], dtype=s.value.dtype)
    return _emit("broadcast_scalar", (s,), out, aux=(rows, cols))


def scalar_mul(s, a) -> TracedValue:
    """Multiply a matrix by a 1x1 traced scalar."""
    s = _as_traced(s)
    a = _as_traced(a, _tape_of(s))
    if s.value.shape != (1, 1):
        raise ShapeError("scalar_mul expects a 1x1 first operand")
    return _emit("scalar_mul", (s, a), s.value[0, 0] * a.value)


def gather_pairs(a, pairs) -> TracedValue:
    """Pick entries a[i, j] for each (i, j) in pairs, as a column vector."""
    a = _as_traced(a)
    ri = np.asarray([p[0] for p in pairs], dtype=np.intp)
    ci = np.asarray([p[1] for p in pairs], dtype=np.intp)
    if len(ri) == 0:
        raise ShapeError("gather_pairs: empty index set")
    out = a.value[ri, ci].reshape(-1, 1).copy()
    return _emit("gather_pairs", (a,), out, aux=(ri, ci, a.value.shape))


def scatter_pairs(v, pairs, shape) -> TracedValue:
    """Adjoint of gather_pairs: add v[t] at position pairs[t] of a zero matrix."""
    v = _as_traced(v)
    ri = np.asarray([p[0] for p in pairs], dtype=np.intp)
    ci = np.asarray([p[1] for p in pairs], dtype=np.intp)
    out = np.zeros(shape, dtype=v.value.dtype)
    np.add.at(out, (ri, ci), v.value.ravel())
    return _emit("scatter_pairs", (v,), out, aux=(ri, ci, shape))


def one_minus(a) -> TracedValue:
    return add_scalar(scale(a, -1.0), 1.0)


# dispatchers kept for callers that select operations by name

_ELEMENTWISE: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "relu": relu,
    "scale": scale,
}

_REDUCE: dict[str, Callable] = {
    "sum": matrix_sum,
    "mean": matrix_mean,
    "frobenius-norm": frobenius_norm,
}


def elementwise(kind: str, *operands) -> TracedValue:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


def reduce(kind: str, a) -> TracedValue:
    try:
        fn = _REDUCE[kind]
    except KeyError:
        raise ValueError(f"unknown reduce kind {kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# backward rules
#
# Each rule maps (tape, node, out_handle, adjoint) to a list of
# (parent_position, contribution) pairs, with every contribution built from
# the forward primitives above so that the same rule works in traced and
# plain mode.
# ---------------------------------------------------------------------------

def _bw_matmul(tape, node, out, g):
    a, b = (tape.handle(p) for p in node.parents)
    return [(0, lambda: matmul(g, transpose(b))), (1, lambda: matmul(transpose(a), g))]


def _bw_transpose(tape, node, out, g):
    return [(0, lambda: transpose(g))]


def _bw_add(tape, node, out, g):
    return [(0, lambda: g), (1, lambda: g)]


def _bw_sub(tape, node, out, g):
    return [(0, lambda: g), (1, lambda: scale(g, -1.0))]


def _bw_mul(tape, node, out, g):
    a, b = (tape.handle(p) for p in node.parents)
    return [(0, lambda: mul(g, b)), (1, lambda: mul(g, a))]


def _bw_scale(tape, node, out, g):
    return [(0, lambda: scale(g, node.aux))]


def _bw_add_scalar(tape, node, out, g):
    return [(0, lambda: g)]


def _bw_sigmoid(tape, node, out, g):
    return [(0, lambda: mul(g, mul(out, one_minus(out))))]


def _bw_exp(tape, node, out, g):
    return [(0, lambda: mul(g, out))]


def _bw_log(tape, node, out, g):
    a = tape.handle(node.parents[0])
    return [(0, lambda: mul(g, power(a, -1.0)))]


def _bw_relu(tape, node, out, g):
    mask = (tape.nodes[node.parents[0]].value > 0).astype(node.value.dtype)
    return [(0, lambda: mul(g, _as_traced(mask, tape)))]


def _bw_leaky_relu(tape, node, out, g):
    x = tape.nodes[node.parents[0]].value
    mask = np.where(x > 0, 1.0, node.aux).astype(node.value.dtype)
    return [(0, lambda: mul(g, _as_traced(mask, tape)))]


def _bw_clip(tape, node, out, g):
    lo, hi = node.aux
    x = tape.nodes[node.parents[0]].value
    mask = ((x > lo) & (x < hi)).astype(node.value.dtype)
    return [(0, lambda: mul(g, _as_traced(mask, tape)))]


def _bw_power(tape, node, out, g):
    a = tape.handle(node.parents[0])
    p = node.aux
    return [(0, lambda: mul(g, scale(power(a, p - 1.0), p)))]


def _bw_sum(tape, node, out, g):
    r, c = tape.nodes[node.parents[0]].value.shape
    return [(0, lambda: broadcast_scalar(g, r, c))]


def _bw_mean(tape, node, out, g):
    r, c = tape.nodes[node.parents[0]].value.shape
    return [(0, lambda: scale(broadcast_scalar(g, r, c), 1.0 / (r * c)))]


def _bw_row_sum(tape, node, out, g):
    cols = tape.nodes[node.parents[0]].value.shape[1]
    ones = _as_traced(np.ones((1, cols), dtype=node.value.dtype), tape)
    return [(0, lambda: matmul(g, ones))]


def _bw_diag(tape, node, out, g):
    return [(0, lambda: diag_part(g))]


def _bw_diag_part(tape, node, out, g):
    return [(0, lambda: diag(g))]


def _bw_broadcast_scalar(tape, node, out, g):
    return [(0, lambda: matrix_sum(g))]


def _bw_scalar_mul(tape, node, out, g):
    s, a = (tape.handle(p) for p in node.parents)
    return [(0, lambda: matrix_sum(mul(g, a))), (1, lambda: scalar_mul(s, g))]


def _bw_gather_pairs(tape, node, out, g):
    ri, ci, shape = node.aux
    pairs = list(zip(ri.tolist(), ci.tolist()))
    return [(0, lambda: scatter_pairs(g, pairs, shape))]


def _bw_scatter_pairs(tape, node, out, g):
    ri, ci, _ = node.aux
    pairs = list(zip(ri.tolist(), ci.tolist()))
    return [(0, lambda: gather_pairs(g, pairs))]


_BACKWARD = {
    "matmul": _bw_matmul,
    "transpose": _bw_transpose,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "add_scalar": _bw_add_scalar,
    "sigmoid": _bw_sigmoid,
    "exp": _bw_exp,
    "log": _bw_log,
    "relu": _bw_relu,
    "leaky_relu": _bw_leaky_relu,
    "clip": _bw_clip,
    "power": _bw_power,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "row_sum": _bw_row_sum,
    "diag": _bw_diag,
    "diag_part": _bw_diag_part,
    "broadcast_scalar": _bw_broadcast_scalar,
    "scalar_mul": _bw_scalar_mul,
    "gather_pairs": _bw_gather_pairs,
    "scatter_pairs": _bw_scatter_pairs,
}


def _adjoints(root: TracedValue, need: set[int], stop_at: Iterable[int], traced: bool):
    """Reverse sweep from root; returns adjoint TracedValues for ids in `need`.

    The tape's recording flag is temporarily set to `traced`, so all rule
    emissions either land on the tape (traced) or stay eager constants.
    """
    tape = root.tape
    if tape is None or root.node_id is None:
        return {}
    if root.value.shape != (1, 1):
        raise ShapeError(f"backward root must be 1x1, got {root.value.shape}")

    stop = frozenset(stop_at)
    seed = TracedValue(tape, None, np.ones((1, 1), dtype=tape.dtype), False)
    pending: dict[int, TracedValue] = {root.node_id: seed}
    found: dict[int, TracedValue] = {}

    prev = tape.recording
    tape.recording = traced
    try:
        for nid in range(root.node_id, -1, -1):
            g = pending.pop(nid, None)
            if g is None:
                continue
            if nid in need:
                found[nid] = g
            node = tape.nodes[nid]
            if node.kind == "leaf" or nid in stop:
                continue
            out = tape.handle(nid)
            for pos, make in _BACKWARD[node.kind](tape, node, out, g):
                pid = node.parents[pos]
                if not tape.nodes[pid].requires_grad:
                    continue
                contrib = make()
                if pid in pending:
                    pending[pid] = add(pending[pid], contrib)
                else:
                    pending[pid] = contrib
    finally:
        tape.recording = prev
    return found


def grad(root: TracedValue, wrt: Sequence[TracedValue], traced: bool = False,
         stop_at: Iterable[int] = ()) -> list:
    """Gradients of a scalar root with respect to the given tape values.

    Returns one entry per `wrt` value: a TracedValue in traced mode, else a
    plain ndarray. Values with no path from the root get zeros. `stop_at`
    cuts gradient flow at the listed node ids (their own adjoint is still
    collected if requested).
    """
    ids = []
    for tv in wrt:
        if tv.node_id is None:
            raise ValueError("cannot differentiate with respect to an untracked constant")
        ids.append(tv.node_id)
    found = _adjoints(root, set(ids), stop_at, traced)
    out = []
    for tv, nid in zip(wrt, ids):
        g = found.get(nid)
        if g is None:
            zeros = np.zeros_like(tv.value)
            g = TracedValue(root.tape, None, zeros, False) if traced else zeros
            out.append(g)
        else:
            out.append(g if traced else g.value)
    return out


def backward(root: TracedValue) -> dict[int, np.ndarray]:
    """Gradient table for every requires-grad leaf on the root's tape.

    Leaves unreachable from the root get explicit zero matrices. The tape is
    not modified, so further roots can be differentiated afterwards.
    """
    tape = root.tape
    if tape is None:
        return {}
    grad_leaves = [lid for lid in tape.leaf_ids if tape.nodes[lid].requires_grad]
    found = _adjoints(root, set(grad_leaves), (), traced=False)
    table = {}
    for lid in grad_leaves:
        g = found.get(lid)
        table[lid] = g.value if g is not None else np.zeros_like(tape.nodes[lid].value)
    return table
