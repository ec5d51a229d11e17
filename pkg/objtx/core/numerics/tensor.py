"""
Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps an immutable numpy buffer of rank <= 3. Operations on tensors that
require gradients record their parents and a vector-Jacobian product; `backward`
walks the recorded `Graph` once in reverse topological order.
"""

import contextvars
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from objtx.utils.errors import DimensionError, UsageError

MAX_RANK = 3
PRECISIONS = {"float32": np.float32, "float64": np.float64}

_default_dtype: contextvars.ContextVar = contextvars.ContextVar("objtx_dtype", default=np.float32)

Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def default_dtype() -> type:
    return _default_dtype.get()


@contextmanager
def precision(mode: str) -> Iterator[None]:
    """Run the enclosed block with `mode` ("float32" or "float64") as the default dtype."""
    if mode not in PRECISIONS:
        raise UsageError(f"Unknown precision mode: {mode}")
    token = _default_dtype.set(PRECISIONS[mode])
    try:
        yield
    finally:
        _default_dtype.reset(token)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # Sum gradients across broadcasted dimensions to match shape
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[type] = None,
        name: Optional[str] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = default_dtype()
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"Tensors are limited to rank {MAX_RANK}, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._vjp: Optional[Vjp] = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], vjp: Vjp, op: str) -> "Tensor":
        """Wrap an op output; the graph edge is only kept when some parent needs gradients."""
        if data.ndim > MAX_RANK:
            raise DimensionError(f"Tensors are limited to rank {MAX_RANK}, got shape {data.shape}")
        out = cls.__new__(cls)
        data = np.asarray(data)
        data.setflags(write=False)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # Basic properties

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad}{label})"

    def _const(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other), dtype=self.dtype)

    # Elementwise arithmetic

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._const(other)
        a_shape, b_shape = self.shape, other.shape

        def vjp(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._result(self.data + other.data, (self, other), vjp, "add")

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return self + other

    def __neg__(self) -> "Tensor":
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return self + (-self._const(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._const(other) + (-self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._const(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._result(a * b, (self, other), vjp, "mul")

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self * other

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = self._const(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._result(a / b, (self, other), vjp, "div")

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return self._const(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        exponent = float(exponent)

        def vjp(g):
            return (g * exponent * a ** (exponent - 1.0),)

        return Tensor._result(a**exponent, (self,), vjp, "pow")

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from objtx.core.numerics.functional import matmul

        return matmul(self, other)

    # Shape manipulation

    def __getitem__(self, index) -> "Tensor":
        a_shape, dtype = self.shape, self.dtype

        def vjp(g):
            out = np.zeros(a_shape, dtype=dtype)
            np.add.at(out, index, g)
            return (out,)

        return Tensor._result(self.data[index], (self,), vjp, "getitem")

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.shape
        return Tensor._result(self.data.reshape(shape), (self,), lambda g: (g.reshape(old_shape),), "reshape")

    def swapaxes(self, axis1: int = -1, axis2: int = -2) -> "Tensor":
        return Tensor._result(
            np.swapaxes(self.data, axis1, axis2), (self,), lambda g: (np.swapaxes(g, axis1, axis2),), "swapaxes"
        )

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    # Reductions

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        a_shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a_shape).copy(),)

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp, "sum")

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int = 0) -> "Tensor":
        """Max along `axis`; the gradient flows to the first maximal element."""
        a = self.data
        winners = np.argmax(a, axis=axis)

        def vjp(g):
            out = np.zeros_like(a)
            np.put_along_axis(out, np.expand_dims(winners, axis), np.expand_dims(g, axis), axis=axis)
            return (out,)

        return Tensor._result(a.max(axis=axis), (self,), vjp, "max")

    # Elementwise functions

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._result(out, (self,), lambda g: (g * out,), "exp")

    def log(self, floor: Optional[float] = None) -> "Tensor":
        """Natural log; with `floor` the input is clamped below at `floor` (zero gradient there)."""
        a = self.data
        if floor is None:
            return Tensor._result(np.log(a), (self,), lambda g: (g / a,), "log")
        clamped = np.maximum(a, floor)
        live = a > floor

        def vjp(g):
            return (np.where(live, g / clamped, 0.0).astype(a.dtype),)

        return Tensor._result(np.log(clamped), (self,), vjp, "clamped_log")


class Graph:
    """
    Operation records reachable from an output, in topological order.

    Every node appears after all of its inputs; `leaves` are the parameters
    (or any gradient-requiring inputs) the graph was built from.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        return cls(order)

    @property
    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, output: Tensor, seed: np.ndarray) -> Dict[Tensor, np.ndarray]:
        grads: Dict[int, np.ndarray] = {id(output): seed}
        leaf_grads: Dict[Tensor, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            if node.is_leaf:
                leaf_grads[node] = g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.dtype)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        return leaf_grads


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """
    Reverse-mode gradients of a scalar `loss` with respect to every leaf that requires them.

    The leaves' `.grad` fields are overwritten with the result as well.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    graph = Graph.from_output(loss)
    grads = graph.backward(loss, np.ones_like(loss.data))
    for leaf, g in grads.items():
        leaf.grad = g
    return grads
