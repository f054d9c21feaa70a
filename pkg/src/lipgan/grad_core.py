"""Reverse-mode automatic differentiation over dense float64 arrays.

A graph is an append-only list of nodes; handles (:class:`Expr`) wrap a node
index and support operator composition.  Differentiation walks the node list
backwards and emits the adjoint computation as new nodes in the same graph,
so a gradient is an ordinary sub-graph and second-order derivatives come from
running the same pass over a gradient node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "Expr",
    "ExprGraph",
    "FdReport",
    "GraphError",
    "ShapeError",
    "UnsupportedOpError",
    "evaluate",
    "fd_check",
    "gradient",
    "gradient_graph",
]


class GraphError(Exception):
    """Graph construction or evaluation failed."""


class ShapeError(GraphError):
    """Operand shapes are incompatible for an operation."""


class DomainError(GraphError):
    """An operation produced or received values outside its domain."""


class UnsupportedOpError(GraphError):
    """No derivative rule is registered for an operation kind."""


@dataclass
class Node:
    op: str
    parents: tuple[int, ...]
    shape: tuple[int, ...]
    attrs: dict
    value: np.ndarray | None = None


class Expr:
    """Handle to one node of an :class:`ExprGraph`."""

    __slots__ = ("graph", "idx")

    def __init__(self, graph: "ExprGraph", idx: int):
        self.graph = graph
        self.idx = idx

    @property
    def shape(self) -> tuple[int, ...]:
        return self.graph.nodes[self.idx].shape

    @property
    def op(self) -> str:
        return self.graph.nodes[self.idx].op

    def __repr__(self) -> str:
        return f"Expr(idx={self.idx}, op={self.op!r}, shape={self.shape})"

    # arithmetic
    def __add__(self, other):
        return _binary("add", self, _coerce(self.graph, other))

    def __radd__(self, other):
        return _binary("add", _coerce(self.graph, other), self)

    def __sub__(self, other):
        return _binary("sub", self, _coerce(self.graph, other))

    def __rsub__(self, other):
        return _binary("sub", _coerce(self.graph, other), self)

    def __mul__(self, other):
        return _binary("mul", self, _coerce(self.graph, other))

    def __rmul__(self, other):
        return _binary("mul", _coerce(self.graph, other), self)

    def __truediv__(self, other):
        return _binary("div", self, _coerce(self.graph, other))

    def __rtruediv__(self, other):
        return _binary("div", _coerce(self.graph, other), self)

    def __neg__(self):
        return self.graph._add("neg", (self.idx,), self.shape)

    def __matmul__(self, other):
        other = _coerce(self.graph, other)
        sa, sb = self.shape, other.shape
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            raise ShapeError(
                f"node {len(self.graph.nodes)} (matmul): incompatible shapes {sa} @ {sb}"
            )
        return self.graph._add("matmul", (self.idx, other.idx), (sa[0], sb[1]))

    @property
    def T(self):
        if len(self.shape) != 2:
            raise ShapeError(f"transpose requires a matrix, got shape {self.shape}")
        return self.graph._add("transpose", (self.idx,), self.shape[::-1])

    # nonlinearities
    def relu(self):
        return self.graph._add("relu", (self.idx,), self.shape)

    def relu_mask(self):
        """Indicator of positive entries; treated as locally constant."""
        return self.graph._add("relu_mask", (self.idx,), self.shape)

    def tanh(self):
        return self.graph._add("tanh", (self.idx,), self.shape)

    def sigmoid(self):
        return self.graph._add("sigmoid", (self.idx,), self.shape)

    def softplus(self):
        return self.graph._add("softplus", (self.idx,), self.shape)

    def exp(self):
        return self.graph._add("exp", (self.idx,), self.shape)

    def log(self):
        return self.graph._add("log", (self.idx,), self.shape)

    def sqrt(self):
        return self.graph._add("sqrt", (self.idx,), self.shape)

    def square(self):
        return self.graph._add("square", (self.idx,), self.shape)

    # reductions and shape ops
    def sum(self):
        return self.graph._add("sum_all", (self.idx,), ())

    def mean(self):
        if _size(self.shape) == 0:
            raise ShapeError("mean of an empty tensor")
        return self.graph._add("mean_all", (self.idx,), ())

    def sum0(self):
        if len(self.shape) != 2:
            raise ShapeError(f"sum over rows requires a matrix, got {self.shape}")
        return self.graph._add("sum0", (self.idx,), (self.shape[1],))

    def sum1(self):
        if len(self.shape) != 2:
            raise ShapeError(f"sum over columns requires a matrix, got {self.shape}")
        return self.graph._add("sum1", (self.idx,), (self.shape[0],))

    def max(self):
        """Maximum over a vector; ties backpropagate to the first index."""
        if len(self.shape) != 1 or self.shape[0] < 1:
            raise ShapeError(f"max requires a non-empty vector, got {self.shape}")
        return self.graph._add("batch_max", (self.idx,), ())

    def argmax_mask(self):
        """One-hot of the first maximal entry; treated as locally constant."""
        if len(self.shape) != 1:
            raise ShapeError(f"argmax_mask requires a vector, got {self.shape}")
        return self.graph._add("argmax_mask", (self.idx,), self.shape)

    def broadcast_to(self, shape):
        shape = tuple(int(s) for s in shape)
        try:
            np.broadcast_shapes(self.shape, shape)
        except ValueError:
            raise ShapeError(f"cannot broadcast {self.shape} to {shape}") from None
        if np.broadcast_shapes(self.shape, shape) != shape:
            raise ShapeError(f"cannot broadcast {self.shape} to {shape}")
        return self.graph._add("broadcast_to", (self.idx,), shape, target=shape)

    def expand_cols(self, n: int):
        """Replicate a vector (B,) into a matrix (B, n)."""
        if len(self.shape) != 1:
            raise ShapeError(f"expand_cols requires a vector, got {self.shape}")
        return self.graph._add(
            "expand_cols", (self.idx,), (self.shape[0], int(n)), cols=int(n)
        )


class ExprGraph:
    """Append-only computation graph of float64 array operations."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._inputs: dict[str, int] = {}
        self._adjoint_cache: dict[int, dict[int, int]] = {}
        self._plan_cache: dict[tuple[int, ...], list] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _add(self, op: str, parents: tuple[int, ...], shape, **attrs) -> Expr:
        self.nodes.append(Node(op, tuple(parents), tuple(shape), attrs))
        return Expr(self, len(self.nodes) - 1)

    def input(self, name: str, shape: Sequence[int] = ()) -> Expr:
        if name in self._inputs:
            raise GraphError(f"duplicate input name '{name}'")
        ref = self._add("input", (), tuple(int(s) for s in shape), name=name)
        self._inputs[name] = ref.idx
        return ref

    def constant(self, value) -> Expr:
        arr = np.asarray(value, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise DomainError("constant contains non-finite values")
        return self._add("const", (), arr.shape, value=arr)

    def input_names(self) -> dict[str, int]:
        return dict(self._inputs)


def _size(shape) -> int:
    return int(np.prod(shape)) if shape else 1


def _coerce(graph: ExprGraph, value) -> Expr:
    if isinstance(value, Expr):
        if value.graph is not graph:
            raise GraphError("operands belong to different graphs")
        return value
    return graph.constant(value)


def _binary(op: str, a: Expr, b: Expr) -> Expr:
    graph = a.graph
    if b.graph is not graph:
        raise GraphError("operands belong to different graphs")
    shape = _binary_shape(op, a.shape, b.shape, len(graph.nodes))
    return graph._add(op, (a.idx, b.idx), shape)


def _binary_shape(op, sa, sb, node_id):
    if sa == sb:
        return sa
    if sa == ():
        return sb
    if sb == ():
        return sa
    if len(sa) == 2 and sb == (sa[1],):
        return sa
    if len(sb) == 2 and sa == (sb[1],):
        return sb
    raise ShapeError(f"node {node_id} ({op}): incompatible shapes {sa} and {sb}")


# ---------------------------------------------------------------------------
# evaluation


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(np.shape(x))


def _k_input(idx, node, pv, bindings):
    name = node.attrs["name"]
    if name not in bindings:
        raise ValueError(f"missing binding for input '{name}'")
    arr = np.asarray(bindings[name], dtype=np.float64)
    if arr.shape != node.shape:
        raise ShapeError(
            f"node {idx} (input '{name}'): bound shape {arr.shape} != declared {node.shape}"
        )
    return arr


def _k_log(idx, node, pv, bindings):
    x = pv[0]
    if np.any(x <= 0.0):
        raise DomainError(f"node {idx} (log): non-positive argument")
    return np.log(x)


def _k_sqrt(idx, node, pv, bindings):
    x = pv[0]
    if np.any(x < 0.0):
        raise DomainError(f"node {idx} (sqrt): negative argument")
    return np.sqrt(x)


def _k_argmax_mask(idx, node, pv, bindings):
    out = np.zeros(node.shape, dtype=np.float64)
    out[int(np.argmax(pv[0]))] = 1.0
    return out


_KERNELS = {
    "input": _k_input,
    "const": lambda idx, node, pv, b: node.attrs["value"],
    "add": lambda idx, node, pv, b: pv[0] + pv[1],
    "sub": lambda idx, node, pv, b: pv[0] - pv[1],
    "mul": lambda idx, node, pv, b: pv[0] * pv[1],
    "div": lambda idx, node, pv, b: pv[0] / pv[1],
    "neg": lambda idx, node, pv, b: -pv[0],
    "matmul": lambda idx, node, pv, b: pv[0] @ pv[1],
    "transpose": lambda idx, node, pv, b: pv[0].T,
    "relu": lambda idx, node, pv, b: np.maximum(pv[0], 0.0),
    "relu_mask": lambda idx, node, pv, b: (pv[0] > 0.0).astype(np.float64),
    "tanh": lambda idx, node, pv, b: np.tanh(pv[0]),
    "sigmoid": lambda idx, node, pv, b: _stable_sigmoid(pv[0]),
    "softplus": lambda idx, node, pv, b: np.logaddexp(0.0, pv[0]),
    "exp": lambda idx, node, pv, b: np.exp(pv[0]),
    "log": _k_log,
    "sqrt": _k_sqrt,
    "square": lambda idx, node, pv, b: pv[0] * pv[0],
    "sum_all": lambda idx, node, pv, b: np.asarray(np.sum(pv[0])),
    "mean_all": lambda idx, node, pv, b: np.asarray(np.mean(pv[0])),
    "sum0": lambda idx, node, pv, b: pv[0].sum(axis=0),
    "sum1": lambda idx, node, pv, b: pv[0].sum(axis=1),
    "batch_max": lambda idx, node, pv, b: np.asarray(np.max(pv[0])),
    "argmax_mask": _k_argmax_mask,
    "broadcast_to": lambda idx, node, pv, b: np.broadcast_to(
        pv[0], node.attrs["target"]
    ),
    "expand_cols": lambda idx, node, pv, b: np.broadcast_to(
        pv[0][:, None], (node.shape[0], node.attrs["cols"])
    ),
}


def evaluate(graph: ExprGraph, bindings: dict, outputs=None):
    """Evaluate one or more nodes under the given input bindings.

    All intermediate values along the way are recomputed from scratch and
    cached on the nodes, so re-evaluating with changed bindings can never see
    stale state.  Raises :class:`DomainError` if any node produces a
    non-finite value.
    """
    if outputs is None:
        if not graph.nodes:
            raise GraphError("cannot evaluate an empty graph")
        outputs = Expr(graph, len(graph.nodes) - 1)
    single = isinstance(outputs, Expr)
    outs = [outputs] if single else list(outputs)
    nodes = graph.nodes

    plan_key = tuple(o.idx for o in outs)
    plan = graph._plan_cache.get(plan_key)
    if plan is None:
        needed = np.zeros(len(nodes), dtype=bool)
        stack = [o.idx for o in outs]
        while stack:
            i = stack.pop()
            if needed[i]:
                continue
            needed[i] = True
            stack.extend(nodes[i].parents)
        plan = []
        for i in np.flatnonzero(needed):
            node = nodes[i]
            kernel = _KERNELS.get(node.op)
            if kernel is None:
                raise UnsupportedOpError(
                    f"node {i}: unknown operation kind '{node.op}'"
                )
            plan.append((int(i), node, kernel, node.parents))
        graph._plan_cache[plan_key] = plan

    values: list[np.ndarray | None] = [None] * len(nodes)
    isfinite = math.isfinite
    for i, node, kernel, parents in plan:
        pv = [values[p] for p in parents]
        val = kernel(i, node, pv, bindings)
        # cheap screen first: a finite sum implies all entries are finite
        if not isfinite(val.sum()):
            if not np.isfinite(val).all():
                raise DomainError(f"node {i} ({node.op}): non-finite values produced")
        values[i] = val
        node.value = val

    result = [values[o.idx] for o in outs]
    return result[0] if single else result


# ---------------------------------------------------------------------------
# differentiation


def _reduce_to(g: Expr, target: tuple[int, ...]) -> Expr:
    if g.shape == target:
        return g
    if target == ():
        return g.sum()
    if len(g.shape) == 2 and target == (g.shape[1],):
        return g.sum0()
    raise ShapeError(f"cannot reduce adjoint of shape {g.shape} to {target}")


def _vjp_add(out, ps, g, attrs):
    return [_reduce_to(g, ps[0].shape), _reduce_to(g, ps[1].shape)]


def _vjp_sub(out, ps, g, attrs):
    return [_reduce_to(g, ps[0].shape), _reduce_to(-g, ps[1].shape)]


def _vjp_mul(out, ps, g, attrs):
    a, b = ps
    return [_reduce_to(g * b, a.shape), _reduce_to(g * a, b.shape)]


def _vjp_div(out, ps, g, attrs):
    a, b = ps
    return [_reduce_to(g / b, a.shape), _reduce_to(-(g * out / b), b.shape)]


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": lambda out, ps, g, attrs: [-g],
    "matmul": lambda out, ps, g, attrs: [g @ ps[1].T, ps[0].T @ g],
    "transpose": lambda out, ps, g, attrs: [g.T],
    "relu": lambda out, ps, g, attrs: [g * ps[0].relu_mask()],
    "relu_mask": lambda out, ps, g, attrs: [None],
    "tanh": lambda out, ps, g, attrs: [g * (1.0 - out.square())],
    "sigmoid": lambda out, ps, g, attrs: [g * (out * (1.0 - out))],
    "softplus": lambda out, ps, g, attrs: [g * ps[0].sigmoid()],
    "exp": lambda out, ps, g, attrs: [g * out],
    "log": lambda out, ps, g, attrs: [g / ps[0]],
    "sqrt": lambda out, ps, g, attrs: [g / (out * 2.0)],
    "square": lambda out, ps, g, attrs: [g * (ps[0] * 2.0)],
    "sum_all": lambda out, ps, g, attrs: [g.broadcast_to(ps[0].shape)],
    "mean_all": lambda out, ps, g, attrs: [
        (g * (1.0 / _size(ps[0].shape))).broadcast_to(ps[0].shape)
    ],
    "sum0": lambda out, ps, g, attrs: [g.broadcast_to(ps[0].shape)],
    "sum1": lambda out, ps, g, attrs: [g.expand_cols(ps[0].shape[1])],
    "batch_max": lambda out, ps, g, attrs: [
        g.broadcast_to(ps[0].shape) * ps[0].argmax_mask()
    ],
    "argmax_mask": lambda out, ps, g, attrs: [None],
    "broadcast_to": lambda out, ps, g, attrs: [_reduce_to(g, ps[0].shape)],
    "expand_cols": lambda out, ps, g, attrs: [g.sum1()],
}


def _adjoint_map(graph: ExprGraph, out_idx: int) -> dict[int, int]:
    cached = graph._adjoint_cache.get(out_idx)
    if cached is not None:
        return cached
    nodes = graph.nodes
    if nodes[out_idx].shape != ():
        raise ValueError(
            f"gradient requires a scalar output, node {out_idx} has shape "
            f"{nodes[out_idx].shape}"
        )

    ancestors: set[int] = set()
    stack = [out_idx]
    while stack:
        i = stack.pop()
        if i in ancestors:
            continue
        ancestors.add(i)
        stack.extend(nodes[i].parents)

    adj: dict[int, int] = {out_idx: graph.constant(np.ones(())).idx}
    for i in sorted(ancestors, reverse=True):
        g_idx = adj.get(i)
        if g_idx is None:
            continue
        node = nodes[i]
        if not node.parents:
            continue
        rule = _VJP.get(node.op)
        if rule is None:
            raise UnsupportedOpError(
                f"node {i}: no derivative rule for operation kind '{node.op}'"
            )
        out_ref = Expr(graph, i)
        parent_refs = [Expr(graph, p) for p in node.parents]
        g_ref = Expr(graph, g_idx)
        for p, contrib in zip(node.parents, rule(out_ref, parent_refs, g_ref, node.attrs)):
            if contrib is None:
                continue
            if p in adj:
                adj[p] = (Expr(graph, adj[p]) + contrib).idx
            else:
                adj[p] = contrib.idx

    graph._adjoint_cache[out_idx] = adj
    return adj


def gradient_graph(graph: ExprGraph, output: Expr, wrt: Expr) -> Expr:
    """Handle to a sub-graph computing d(output)/d(wrt).

    The returned expression lives in the same graph and can itself be
    differentiated, which is how second-order terms are obtained.
    """
    adj = _adjoint_map(graph, output.idx)
    g_idx = adj.get(wrt.idx)
    if g_idx is None:
        return graph.constant(np.zeros(graph.nodes[wrt.idx].shape))
    return Expr(graph, g_idx)


def gradient(
    graph: ExprGraph,
    output: Expr,
    wrt: Iterable[Expr],
    bindings: dict | None = None,
) -> dict[Expr, np.ndarray]:
    """Exact reverse-mode derivatives of a scalar output.

    With ``bindings`` omitted, the values cached by the most recent
    :func:`evaluate` call are reused.
    """
    wrt = list(wrt)
    refs = [gradient_graph(graph, output, h) for h in wrt]
    if bindings is None:
        bindings = {}
        for name, idx in graph._inputs.items():
            val = graph.nodes[idx].value
            if val is None:
                raise ValueError(
                    f"input '{name}' has no cached value; evaluate first or pass bindings"
                )
            bindings[name] = val
    vals = evaluate(graph, bindings, refs)
    return dict(zip(wrt, vals))


@dataclass(frozen=True)
class FdReport:
    """Central-difference comparison against reverse-mode gradients."""

    max_rel_error: float
    mean_rel_error: float
    n_coords: int


def fd_check(
    graph: ExprGraph,
    output: Expr,
    wrt: Iterable[Expr],
    epsilon: float,
    bindings: dict,
) -> FdReport:
    """Compare reverse-mode gradients against central finite differences.

    ``wrt`` must be input nodes; every coordinate of each is perturbed by
    +/- epsilon and the relative error is collected.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    wrt = list(wrt)
    work = {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}
    grads = gradient(graph, output, wrt, work)

    rels = []
    for h in wrt:
        node = graph.nodes[h.idx]
        if node.op != "input":
            raise ValueError("fd_check perturbs bindings, so wrt must be inputs")
        name = node.attrs["name"]
        arr = work[name]
        flat = arr.reshape(-1)
        ad = np.asarray(grads[h]).reshape(-1)
        for c in range(flat.size):
            orig = flat[c]
            flat[c] = orig + epsilon
            hi = float(evaluate(graph, work, output))
            flat[c] = orig - epsilon
            lo = float(evaluate(graph, work, output))
            flat[c] = orig
            fd = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(ad[c]), abs(fd), 1e-6)
            rels.append(abs(ad[c] - fd) / denom)

    rels_arr = np.asarray(rels)
    return FdReport(
        max_rel_error=float(rels_arr.max()) if rels_arr.size else 0.0,
        mean_rel_error=float(rels_arr.mean()) if rels_arr.size else 0.0,
        n_coords=int(rels_arr.size),
    )
