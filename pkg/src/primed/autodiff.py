"""Reverse-mode automatic differentiation on a flat tape of float64 arrays.

A Graph is built per training step (define-by-run) and thrown away. Nodes
are appended to a list; a node's inputs always have strictly smaller ids,
so one reverse pass over the id range visits every node exactly once and
sees the full accumulated adjoint before emitting its input adjoints.

Two deliberate restrictions keep gradient checks trustworthy:

- float64 everywhere, no other dtype;
- no implicit broadcasting. Binary elementwise ops demand identical shapes
  and matrix ops demand exact inner-dimension agreement. Callers align
  shapes explicitly (e.g. a bias row is added to a batch via an all-ones
  column times the bias row, which is a plain matmul).
"""
from __future__ import annotations

import numpy as np

from primed import kernels as K


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DomainError(ValueError):
    """Operand values fall outside an operation's numeric domain."""


ELEMENTWISE_BINARY = ("add", "sub", "mul")
ELEMENTWISE_UNARY = ("sigmoid", "tanh", "relu", "exp", "log")


def _as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor values must be finite")
    return arr


class Tensor:
    """Handle to one graph node; holds the cached forward value (read-only)."""

    __slots__ = ("graph", "nid", "values")

    def __init__(self, graph: "Graph", nid: int, values: np.ndarray):
        self.graph = graph
        self.nid = nid
        self.values = values

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(nid={self.nid}, shape={self.shape})"


class _Node:
    __slots__ = ("op", "inputs", "out", "aux", "needs_grad")

    def __init__(self, op, inputs, out, aux, needs_grad):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.aux = aux
        self.needs_grad = needs_grad


class Graph:
    """Append-only computation tape. Build, run backward once, discard."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._param_ids: list[int] = []

    # ------------------------------------------------------------------ leaves

    def constant(self, values) -> Tensor:
        return self._emit("constant", (), _as_array(values), needs_grad=False)

    def parameter(self, values) -> Tensor:
        t = self._emit("parameter", (), _as_array(values), needs_grad=True)
        self._param_ids.append(t.nid)
        return t

    @property
    def parameter_ids(self) -> tuple[int, ...]:
        return tuple(self._param_ids)

    @property
    def num_nodes(self) -> int:
        return len(self._nodes)

    # -------------------------------------------------------------- structural

    def _emit(self, op, input_tensors, out, aux=None, needs_grad=None) -> Tensor:
        ids = tuple(t.nid for t in input_tensors)
        if needs_grad is None:
            needs_grad = any(self._nodes[i].needs_grad for i in ids)
        out = np.ascontiguousarray(out, dtype=np.float64)
        out.flags.writeable = False
        self._nodes.append(_Node(op, ids, out, aux, needs_grad))
        return Tensor(self, len(self._nodes) - 1, out)

    def _check_owned(self, *tensors):
        for t in tensors:
            if not isinstance(t, Tensor) or t.graph is not self:
                raise ValueError("operand is not a tensor of this graph")

    def _check_same_shape(self, op, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")

    # --------------------------------------------------------------------- ops

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_owned(a, b)
        if a.values.ndim != 2 or b.values.ndim != 2:
            raise ShapeError(f"matmul: rank-2 operands required, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
        return self._emit("matmul", (a, b), a.values @ b.values)

    def transpose(self, a: Tensor) -> Tensor:
        self._check_owned(a)
        if a.values.ndim != 2:
            raise ShapeError(f"transpose: rank-2 operand required, got {a.shape}")
        return self._emit("transpose", (a,), a.values.T)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_owned(a, b)
        self._check_same_shape("add", a, b)
        return self._emit("add", (a, b), a.values + b.values)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_owned(a, b)
        self._check_same_shape("sub", a, b)
        return self._emit("sub", (a, b), a.values - b.values)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_owned(a, b)
        self._check_same_shape("mul", a, b)
        return self._emit("mul", (a, b), a.values * b.values)

    def sigmoid(self, a: Tensor) -> Tensor:
        self._check_owned(a)
        return self._emit("sigmoid", (a,), K.sigmoid_fw(a.values))

    def tanh(self, a: Tensor) -> Tensor:
        self._check_owned(a)
        return self._emit("tanh", (a,), K.tanh_fw(a.values))

    def relu(self, a: Tensor) -> Tensor:
        self._check_owned(a)
        return self._emit("relu", (a,), K.relu_fw(a.values))

    def exp(self, a: Tensor) -> Tensor:
        self._check_owned(a)
        return self._emit("exp", (a,), K.exp_fw(a.values))

    def log(self, a: Tensor) -> Tensor:
        self._check_owned(a)
        if np.any(a.values <= 0.0):
            raise DomainError("log: operand has entries <= 0")
        return self._emit("log", (a,), K.log_fw(a.values))

    def elementwise(self, op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
        """Dispatch by op name; the named methods are the primary interface."""
        if op in ELEMENTWISE_BINARY:
            if b is None:
                raise ValueError(f"elementwise: {op!r} needs two operands")
            return getattr(self, op)(a, b)
        if op in ELEMENTWISE_UNARY:
            if b is not None:
                raise ValueError(f"elementwise: {op!r} takes one operand")
            return getattr(self, op)(a)
        raise ValueError(f"elementwise: unknown op {op!r}")

    def softmax(self, v: Tensor) -> Tensor:
        """Softmax of a rank-1 vector."""
        self._check_owned(v)
        if v.values.ndim != 1:
            raise ShapeError(f"softmax: rank-1 operand required, got {v.shape}")
        if v.values.size == 0:
            raise ShapeError("softmax: empty vector")
        out = K.softmax_fw(np.ascontiguousarray(v.values.reshape(1, -1)))
        return self._emit("softmax", (v,), out.reshape(-1))

    def softmax_rows(self, m: Tensor) -> Tensor:
        """Independent softmax over each row of a rank-2 tensor."""
        self._check_owned(m)
        if m.values.ndim != 2:
            raise ShapeError(f"softmax_rows: rank-2 operand required, got {m.shape}")
        if m.values.shape[1] == 0:
            raise ShapeError("softmax_rows: rows are empty")
        return self._emit("softmax_rows", (m,), K.softmax_fw(m.values))

    def concat(self, parts: list[Tensor]) -> Tensor:
        """Concatenate rank-1 tensors end to end."""
        if len(parts) == 0:
            raise ShapeError("concat: empty parts list")
        self._check_owned(*parts)
        for p in parts:
            if p.values.ndim != 1:
                raise ShapeError(f"concat: rank-1 parts required, got {p.shape}")
        lengths = tuple(p.values.shape[0] for p in parts)
        out = np.concatenate([p.values for p in parts])
        return self._emit("concat", tuple(parts), out, aux=lengths)

    def reduce_sum(self, a: Tensor) -> Tensor:
        self._check_owned(a)
        return self._emit("reduce_sum", (a,), np.array(K.sum_all(a.values)))

    def scale(self, a: Tensor, c: float) -> Tensor:
        self._check_owned(a)
        c = float(c)
        return self._emit("scale", (a,), a.values * c, aux=c)

    def clip(self, a: Tensor, lo: float, hi: float) -> Tensor:
        self._check_owned(a)
        lo, hi = float(lo), float(hi)
        if not lo < hi:
            raise ValueError(f"clip: lo must be < hi, got [{lo}, {hi}]")
        return self._emit("clip", (a,), K.clip_fw(a.values, lo, hi), aux=(lo, hi))

    def bce_logits(self, logits: Tensor, targets: Tensor) -> Tensor:
        """Elementwise binary cross-entropy on logits: softplus(l) - y*l.

        Fused so saturated sigmoids never pass through log(); the adjoint
        for the logits is exactly sigmoid(l) - y.
        """
        self._check_owned(logits, targets)
        self._check_same_shape("bce_logits", logits, targets)
        t = targets.values
        if np.any((t != 0.0) & (t != 1.0)):
            raise DomainError("bce_logits: targets must be 0 or 1")
        return self._emit("bce_logits", (logits, targets), K.bce_logits_fw(logits.values, t))

    # ---------------------------------------------------------------- backward

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Adjoints of a scalar loss w.r.t. every parameter node.

        Returns {parameter id: gradient array}; parameters the loss does not
        depend on get zero gradients of the matching shape.
        """
        self._check_owned(loss)
        if self._nodes[loss.nid].out.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.nid: np.ones_like(self._nodes[loss.nid].out)}
        param_grads: dict[int, np.ndarray | None] = {pid: None for pid in self._param_ids}
        for nid in range(loss.nid, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.op == "parameter":
                param_grads[nid] = g
            elif node.op != "constant":
                _ADJOINTS[node.op](self, node, g, grads)
        return {
            pid: (g if g is not None else np.zeros_like(self._nodes[pid].out))
            for pid, g in param_grads.items()
        }

    def _accum(self, grads: dict, nid: int, g: np.ndarray) -> None:
        if not self._nodes[nid].needs_grad:
            return
        cur = grads.get(nid)
        grads[nid] = g if cur is None else cur + g


def _bw_matmul(graph, node, g, grads):
    a_id, b_id = node.inputs
    a = graph._nodes[a_id].out
    b = graph._nodes[b_id].out
    if graph._nodes[a_id].needs_grad:
        graph._accum(grads, a_id, g @ b.T)
    if graph._nodes[b_id].needs_grad:
        graph._accum(grads, b_id, a.T @ g)


def _bw_transpose(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], np.ascontiguousarray(g.T))


def _bw_add(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], g)
    graph._accum(grads, node.inputs[1], g)


def _bw_sub(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], g)
    graph._accum(grads, node.inputs[1], -g)


def _bw_mul(graph, node, g, grads):
    a_id, b_id = node.inputs
    a = graph._nodes[a_id].out
    b = graph._nodes[b_id].out
    if graph._nodes[a_id].needs_grad:
        graph._accum(grads, a_id, g * b)
    if graph._nodes[b_id].needs_grad:
        graph._accum(grads, b_id, g * a)


def _bw_sigmoid(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], K.sigmoid_bw(g, node.out))


def _bw_tanh(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], K.tanh_bw(g, node.out))


def _bw_relu(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], K.relu_bw(g, graph._nodes[node.inputs[0]].out))


def _bw_exp(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], K.exp_bw(g, node.out))


def _bw_log(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], K.log_bw(g, graph._nodes[node.inputs[0]].out))


def _bw_softmax(graph, node, g, grads):
    p = node.out.reshape(1, -1)
    gx = K.softmax_bw(np.ascontiguousarray(g.reshape(1, -1)), np.ascontiguousarray(p))
    graph._accum(grads, node.inputs[0], gx.reshape(-1))


def _bw_softmax_rows(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], K.softmax_bw(np.ascontiguousarray(g), node.out))


def _bw_concat(graph, node, g, grads):
    offset = 0
    for nid, length in zip(node.inputs, node.aux):
        graph._accum(grads, nid, np.ascontiguousarray(g[offset:offset + length]))
        offset += length


def _bw_reduce_sum(graph, node, g, grads):
    src = graph._nodes[node.inputs[0]].out
    graph._accum(grads, node.inputs[0], np.full(src.shape, float(g.reshape(()))))


def _bw_scale(graph, node, g, grads):
    graph._accum(grads, node.inputs[0], g * node.aux)


def _bw_clip(graph, node, g, grads):
    lo, hi = node.aux
    src = graph._nodes[node.inputs[0]].out
    graph._accum(grads, node.inputs[0], K.clip_bw(g, src, lo, hi))


def _bw_bce_logits(graph, node, g, grads):
    l_id, t_id = node.inputs
    logits = graph._nodes[l_id].out
    targets = graph._nodes[t_id].out
    if graph._nodes[l_id].needs_grad:
        graph._accum(grads, l_id, K.bce_logits_bw(g, logits, targets))
    if graph._nodes[t_id].needs_grad:
        graph._accum(grads, t_id, -g * logits)


_ADJOINTS = {
    "matmul": _bw_matmul,
    "transpose": _bw_transpose,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "relu": _bw_relu,
    "exp": _bw_exp,
    "log": _bw_log,
    "softmax": _bw_softmax,
    "softmax_rows": _bw_softmax_rows,
    "concat": _bw_concat,
    "reduce_sum": _bw_reduce_sum,
    "scale": _bw_scale,
    "clip": _bw_clip,
    "bce_logits": _bw_bce_logits,
}
