"""Dense float64 tensors with tape-based reverse-mode differentiation.

The op set is deliberately closed: matmul, add, sub, scale, exp, log,
reductions, row softmax, cosine similarity, reshape and a last-axis index.
That is everything the guided sampling pipeline needs, and keeping the list
short keeps every adjoint rule auditable by hand.

Ops dispatch on their arguments: called with plain :class:`Tensor` values
(or anything array-like) they return a ``Tensor``; called with at least one
:class:`Node` they record onto that node's tape and return a new ``Node``.
The plain-value path doubles as the cheap evaluator used by the
finite-difference oracle.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, NumericError


class Tensor:
    """Immutable, C-contiguous float64 array whose entries are all finite."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor holds non-finite entries")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal constructor that takes ownership of ``arr`` without copying.
        if not np.all(np.isfinite(arr)):
            raise NumericError("operation produced non-finite values")
        out = object.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)  # keeps rank 0, unlike ascontiguousarray
        if not arr.flags["C_CONTIGUOUS"]:
            arr = arr.copy(order="C")
        arr.setflags(write=False)
        out._data = arr
        return out

    @property
    def data(self) -> np.ndarray:
        """Read-only ndarray view of the contents."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def tolist(self):
        return self._data.tolist()

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, Node):
        raise ContractError("expected a plain value, got a tape node")
    return Tensor(value)


def zeros(shape) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=np.float64))


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 stream for the given 64-bit seed.

    Every consumer in this package draws from such a stream in a fixed,
    documented order, so a seed pins a run exactly.
    """
    return np.random.Generator(np.random.PCG64(seed))


def standard_normal(rng: np.random.Generator, shape) -> Tensor:
    return Tensor._wrap(rng.standard_normal(shape))


class Node:
    """A forward value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "value", "_index")

    def __init__(self, tape: "Tape", value: Tensor, index: int):
        self.tape = tape
        self.value = value
        self._index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.shape}, index={self._index})"


class Tape:
    """Ordered record of primitive ops, replayed in reverse by :func:`backward`.

    Recording is single-threaded and a tape must not be shared while a
    computation is still being recorded; independent tapes are independent.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._parents: list[tuple[Node, ...]] = []
        self._vjps: list[tuple] = []
        self._variables: list[Node] = []

    def variable(self, value) -> Node:
        """Record ``value`` as a differentiable input."""
        node = self._emit(as_tensor(value), (), ())
        self._variables.append(node)
        return node

    def constant(self, value) -> Node:
        node = self._emit(as_tensor(value), (), ())
        return node

    @property
    def variables(self) -> tuple[Node, ...]:
        return tuple(self._variables)

    def __len__(self) -> int:
        return len(self._nodes)

    def _emit(self, value: Tensor, parents: tuple, vjps: tuple) -> Node:
        node = Node(self, value, len(self._nodes))
        self._nodes.append(node)
        self._parents.append(parents)
        self._vjps.append(vjps)
        return node


def backward(tape: Tape, output: Node) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to the tape's variables.

    Returns one tensor per marked variable, in marking order; variables the
    output does not depend on get a zero gradient. The reverse sweep visits
    every recorded node exactly once.
    """
    if not isinstance(output, Node) or output.tape is not tape:
        raise ContractError("output node was not recorded on this tape")
    if output.value.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.value.shape}")
    adjoints: list[np.ndarray | None] = [None] * len(tape._nodes)
    adjoints[output._index] = np.ones_like(output.value.data)
    for index in range(output._index, -1, -1):
        grad_out = adjoints[index]
        if grad_out is None:
            continue
        for parent, vjp in zip(tape._parents[index], tape._vjps[index]):
            contribution = vjp(grad_out)
            if adjoints[parent._index] is None:
                adjoints[parent._index] = contribution
            else:
                adjoints[parent._index] = adjoints[parent._index] + contribution
    grads = []
    for var in tape._variables:
        g = adjoints[var._index]
        grads.append(Tensor._wrap(g) if g is not None else zeros(var.value.shape))
    return grads


def _raw(x) -> np.ndarray:
    return x.value.data if isinstance(x, Node) else as_tensor(x).data


def _tape_for(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ContractError("operands were recorded on different tapes")
    return tape


def _finish(tape: Tape | None, out: np.ndarray, links):
    if tape is None:
        return Tensor._wrap(out)
    parents = tuple(node for node, _ in links)
    vjps = tuple(vjp for _, vjp in links)
    return tape._emit(Tensor._wrap(out), parents, vjps)


def matmul(a, b):
    """Matrix product of two rank-2 operands."""
    av, bv = _raw(a), _raw(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} do not chain")
    tape = _tape_for(a, b)
    links = []
    if isinstance(a, Node):
        links.append((a, lambda g: g @ bv.T))
    if isinstance(b, Node):
        links.append((b, lambda g: av.T @ g))
    return _finish(tape, av @ bv, links)


def add(a, b):
    av, bv = _raw(a), _raw(b)
    if av.shape != bv.shape:
        raise DimensionError(f"add: shapes {av.shape} and {bv.shape} differ")
    tape = _tape_for(a, b)
    links = []
    if isinstance(a, Node):
        links.append((a, lambda g: g))
    if isinstance(b, Node):
        links.append((b, lambda g: g))
    return _finish(tape, av + bv, links)


def sub(a, b):
    av, bv = _raw(a), _raw(b)
    if av.shape != bv.shape:
        raise DimensionError(f"sub: shapes {av.shape} and {bv.shape} differ")
    tape = _tape_for(a, b)
    links = []
    if isinstance(a, Node):
        links.append((a, lambda g: g))
    if isinstance(b, Node):
        links.append((b, lambda g: -g))
    return _finish(tape, av - bv, links)


def scale(a, factor: float):
    """Multiply every entry by a plain (non-differentiable) scalar."""
    factor = float(factor)
    av = _raw(a)
    tape = _tape_for(a)
    links = [(a, lambda g: g * factor)] if isinstance(a, Node) else []
    return _finish(tape, av * factor, links)


def exp(a):
    av = _raw(a)
    out = np.exp(av)
    tape = _tape_for(a)
    links = [(a, lambda g: g * out)] if isinstance(a, Node) else []
    return _finish(tape, out, links)


def log(a):
    av = _raw(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    tape = _tape_for(a)
    links = [(a, lambda g: g / av)] if isinstance(a, Node) else []
    return _finish(tape, out, links)


def reduce_sum(a):
    av = _raw(a)
    tape = _tape_for(a)
    links = [(a, lambda g: np.full(av.shape, float(g)))] if isinstance(a, Node) else []
    return _finish(tape, np.asarray(av.sum()), links)


def reduce_mean(a):
    av = _raw(a)
    tape = _tape_for(a)
    size = av.size
    links = [(a, lambda g: np.full(av.shape, float(g) / size))] if isinstance(a, Node) else []
    return _finish(tape, np.asarray(av.mean()), links)


def softmax_rows(a):
    """Row-wise softmax of a rank-2 operand, stabilised by max subtraction."""
    av = _raw(a)
    if av.ndim != 2:
        raise DimensionError(f"softmax_rows: need a rank-2 operand, got shape {av.shape}")
    shifted = av - av.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    tape = _tape_for(a)
    links = []
    if isinstance(a, Node):
        def vjp(g, p=out):
            return p * (g - (g * p).sum(axis=1, keepdims=True))
        links.append((a, vjp))
    return _finish(tape, out, links)


def reshape(a, shape):
    av = _raw(a)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != av.size:
        raise DimensionError(f"reshape: cannot view {av.shape} as {shape}")
    tape = _tape_for(a)
    links = [(a, lambda g: g.reshape(av.shape))] if isinstance(a, Node) else []
    return _finish(tape, av.reshape(shape).copy(), links)


def index_last(a, index: int):
    """Select one slice along the last axis (used for per-token maps)."""
    av = _raw(a)
    extent = av.shape[-1]
    index = int(index)
    if not 0 <= index < extent:
        raise IndexError(f"index {index} out of range for last axis of extent {extent}")
    tape = _tape_for(a)
    links = []
    if isinstance(a, Node):
        def vjp(g, j=index, shape=av.shape):
            full = np.zeros(shape)
            full[..., j] = g
            return full
        links.append((a, vjp))
    return _finish(tape, av[..., index].copy(), links)


def cosine_sim(u, v):
    """Cosine similarity of two operands, flattened to vectors."""
    uv = _raw(u).reshape(-1)
    vv = _raw(v).reshape(-1)
    if uv.shape != vv.shape:
        raise DimensionError(f"cosine_sim: sizes {uv.size} and {vv.size} differ")
    nu = float(np.linalg.norm(uv))
    nv = float(np.linalg.norm(vv))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    sim = float(uv @ vv) / (nu * nv)
    tape = _tape_for(u, v)
    links = []
    if isinstance(u, Node):
        def vjp_u(g, shape=_raw(u).shape):
            return (float(g) * (vv / (nu * nv) - sim * uv / (nu * nu))).reshape(shape)
        links.append((u, vjp_u))
    if isinstance(v, Node):
        def vjp_v(g, shape=_raw(v).shape):
            return (float(g) * (uv / (nu * nv) - sim * vv / (nv * nv))).reshape(shape)
        links.append((v, vjp_v))
    return _finish(tape, np.asarray(sim), links)
