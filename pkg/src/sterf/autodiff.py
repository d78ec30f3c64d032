"""Tape-based reverse-mode automatic differentiation over dense arrays.

A :class:`Tape` records every operation of one forward pass as a
:class:`Node`. Node ids increase monotonically and inputs always refer to
earlier ids, so a reverse sweep over ids is a valid topological order.
Backward passes never mutate the tape; any number of them may be run from
different output stimuli.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphReferenceError, NumericError, ShapeError

# vjp(grad_out, needs) -> one gradient (or None) per input
Vjp = Callable[[np.ndarray, tuple[bool, ...]], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    params: dict = field(default_factory=dict)
    requires_grad: bool = False
    vjp: Vjp | None = None
    # tensors saved by the forward for use in backward or inspection
    aux: dict = field(default_factory=dict)


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.id]

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(id={self.id}, op={self.node.op!r}, shape={self.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: dict[str, int] = {}
        self.input_ids: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _add(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, node.id)

    def input(self, value, name: str | None = None) -> Var:
        """Register a designated network input (always differentiable)."""
        arr = np.array(value, dtype=np.float64)
        var = self._add(Node(len(self.nodes), "input", (), arr, {"name": name}, True))
        self.input_ids.append(var.id)
        return var

    def param(self, name: str, value, requires_grad: bool = False) -> Var:
        if name in self.parameters:
            return Var(self, self.parameters[name])
        arr = np.asarray(value, dtype=np.float64)
        var = self._add(Node(len(self.nodes), "param", (), arr, {"name": name}, requires_grad))
        self.parameters[name] = var.id
        return var

    def constant(self, value) -> Var:
        arr = np.asarray(value, dtype=np.float64)
        return self._add(Node(len(self.nodes), "const", (), arr))

    def record(self, op: str, inputs: Iterable[Var], value: np.ndarray, vjp: Vjp,
               aux: dict | None = None, **params) -> Var:
        ids = []
        for v in inputs:
            if v.tape is not self:
                raise GraphReferenceError(f"{op}: operand {v!r} belongs to a different tape")
            ids.append(v.id)
        ids = tuple(ids)
        needs = any(self.nodes[i].requires_grad for i in ids)
        node = Node(len(self.nodes), op, ids, value, params, needs, vjp if needs else None,
                    aux or {})
        return self._add(node)

    def _resolve(self, ref: Var | int) -> int:
        node_id = ref.id if isinstance(ref, Var) else int(ref)
        if isinstance(ref, Var) and ref.tape is not self:
            raise GraphReferenceError(f"{ref!r} is not on this tape")
        if not 0 <= node_id < len(self.nodes):
            raise GraphReferenceError(f"node {node_id} is not on this tape")
        return node_id

    def backward(self, output: Var | int, stimulus, check_finite: bool = True) -> dict[int, np.ndarray]:
        """Seed ``output``'s adjoint with ``stimulus`` and sweep in reverse id order.

        Returns the adjoint of every differentiable node reached. Semantics are
        the gradient of ``<stimulus, output>`` with respect to each node value.
        """
        out_id = self._resolve(output)
        out_node = self.nodes[out_id]
        stim = np.asarray(stimulus, dtype=np.float64)
        if stim.shape != out_node.value.shape:
            raise ShapeError(f"stimulus shape {stim.shape} != output shape {out_node.value.shape}")
        adj: dict[int, np.ndarray] = {out_id: stim.copy()}
        for node_id in range(out_id, -1, -1):
            g = adj.get(node_id)
            if g is None:
                continue
            node = self.nodes[node_id]
            if check_finite and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite adjoint at node {node_id} ({node.op})", node_id)
            if node.vjp is None:
                continue
            needs = tuple(self.nodes[i].requires_grad for i in node.inputs)
            grads = node.vjp(g, needs)
            for i, gi in zip(node.inputs, grads):
                if gi is None or not self.nodes[i].requires_grad:
                    continue
                prev = adj.get(i)
                adj[i] = gi if prev is None else prev + gi
        return adj

    def param_grads(self, adjoints: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
        """Accumulated gradients of differentiable parameters from a backward result."""
        out = {}
        for name, pid in self.parameters.items():
            if self.nodes[pid].requires_grad:
                g = adjoints.get(pid)
                out[name] = np.zeros_like(self.nodes[pid].value) if g is None else g
        return out


def backward_from_stimulus(tape: Tape, output_node: Var | int, stimulus) -> dict[int, np.ndarray]:
    """Adjoints at the tape's designated inputs for the given output stimulus.

    Inputs the stimulus cannot reach get an explicit zero tensor.
    """
    adj = tape.backward(output_node, stimulus)
    return {i: adj[i] if i in adj else np.zeros_like(tape.nodes[i].value) for i in tape.input_ids}
