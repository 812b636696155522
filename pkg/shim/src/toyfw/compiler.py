"""The "compiled" path: concrete tracing, naive rewrite passes, and graph
re-execution with the compiled kernel set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import COMPILED_KERNELS


class ToyCompileError(RuntimeError):
    """Raised only by the compiled path (the planted behavioral fault)."""


@dataclass
class Node:
    id: int
    op: str  # "input", "const", or an operator name
    input_refs: list[tuple[int, int]] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    n_out: int = 1
    const_value: np.ndarray | None = None


@dataclass
class Graph:
    nodes: list[Node]
    output_refs: list[tuple[int, int]]


class TraceContext:
    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, op: str, refs, params: dict, n_out: int = 1) -> int:
        node = Node(id=len(self.nodes), op=op, input_refs=list(refs),
                    params=dict(params), n_out=n_out)
        self.nodes.append(node)
        return node.id

    def record_input(self, index: int) -> int:
        return self.record("input", [], {"index": index})

    def record_const(self, array: np.ndarray) -> int:
        node = Node(id=len(self.nodes), op="const", const_value=np.asarray(array))
        self.nodes.append(node)
        return node.id

    def ref_of(self, tensor) -> tuple[int, int]:
        if tensor.ref is None:
            # Tensors built outside the trace (model constants) enter as consts.
            tensor.ref = (self.record_const(tensor.array), 0)
        return tensor.ref


_ACTIVE: TraceContext | None = None


def active_trace() -> TraceContext | None:
    return _ACTIVE


def trace(model, inputs) -> Graph:
    """Run forward once on concrete values, recording every operator call."""
    global _ACTIVE
    from . import Tensor

    ctx = TraceContext()
    tagged = []
    for index, value in enumerate(inputs):
        clone = Tensor(value.array)
        clone.ref = (ctx.record_input(index), 0)
        tagged.append(clone)
    _ACTIVE = ctx
    try:
        result = model.forward(*tagged)
    finally:
        _ACTIVE = None
    outputs = result if isinstance(result, (tuple, list)) else (result,)
    output_refs = [ctx.ref_of(t) for t in outputs]
    return Graph(nodes=ctx.nodes, output_refs=output_refs)


def lower_pads(graph: Graph) -> None:
    # PLANTED BEHAVIORAL FAULT: the pad lowering mishandles asymmetric widths
    # and reports a negative dimension, so such models crash only here.
    for node in graph.nodes:
        if node.op == "pad" and node.params["before"] != node.params["after"]:
            raise ToyCompileError(
                "negative dimension size computed while lowering "
                f"pad(before={node.params['before']}, after={node.params['after']})"
            )


def execute(graph: Graph, inputs) -> list:
    from . import Tensor

    env: dict[tuple[int, int], np.ndarray] = {}
    for node in graph.nodes:
        if node.op == "input":
            env[(node.id, 0)] = inputs[node.params["index"]].array
        elif node.op == "const":
            env[(node.id, 0)] = node.const_value
        else:
            args = [env[ref] for ref in node.input_refs]
            result = COMPILED_KERNELS[node.op](*args, **node.params)
            if node.n_out == 1:
                env[(node.id, 0)] = np.asarray(result)
            else:
                for slot, piece in enumerate(result):
                    env[(node.id, slot)] = np.asarray(piece)
    return [Tensor(env[ref]) for ref in graph.output_refs]


class CompiledModel:
    def __init__(self, model):
        self.model = model

    def __call__(self, *inputs):
        graph = trace(self.model, inputs)
        lower_pads(graph)
        return execute(graph, inputs)


def compile(model) -> CompiledModel:  # noqa: A001 (mirrors the SUT entry point)
    return CompiledModel(model)
