"""Security state transition graph built from an FSM description."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

from fsmguard.expr import Expr
from fsmguard.model import BitVector, FsmSpec, SignalDecl


@dataclass(frozen=True)
class StateNode:
    id: str
    is_reset: bool
    protected: bool
    encoding: Optional[BitVector]
    outputs: tuple[tuple[str, Expr], ...]
    in_degree: int
    out_degree: int


@dataclass(frozen=True)
class Edge:
    index: int
    src: str
    dst: str
    guard: Expr

    @property
    def label(self) -> str:
        return f"{self.src}->{self.dst}#{self.index}"


@dataclass(frozen=True)
class SecurityStateGraph:
    name: str
    kind: str
    nodes: tuple[StateNode, ...]
    edges: tuple[Edge, ...]
    inputs: tuple[SignalDecl, ...]
    outputs: tuple[SignalDecl, ...]
    register_width: Optional[int]

    @cached_property
    def node_map(self) -> dict[str, StateNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def successors(self) -> dict[str, list[str]]:
        succ: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            succ[e.src].append(e.dst)
        return succ

    @cached_property
    def incoming(self) -> dict[str, list[Edge]]:
        inc: dict[str, list[Edge]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            inc[e.dst].append(e)
        return inc

    @property
    def reset(self) -> StateNode:
        return next(n for n in self.nodes if n.is_reset)

    @cached_property
    def input_widths(self) -> dict[str, int]:
        return {s.id: s.width for s in self.inputs}

    @cached_property
    def output_widths(self) -> dict[str, int]:
        return {s.id: s.width for s in self.outputs}

    def reachable_from(self, start: str) -> set[str]:
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in self.successors[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    @cached_property
    def reachable_from_reset(self) -> frozenset[str]:
        return frozenset(self.reachable_from(self.reset.id))

    def dont_care_count(self) -> Optional[int]:
        """Register values left unassigned, or None when the width is unknown."""
        if self.register_width is None:
            return None
        codes = {n.encoding.value for n in self.nodes if n.encoding is not None}
        used = len(codes) if codes else len(self.nodes)
        return max(0, (1 << self.register_width) - used)

    def is_incomplete(self) -> bool:
        """True when the state register can hold more values than there are states."""
        return self.register_width is not None and (1 << self.register_width) > len(self.nodes)


def build_graph(spec: FsmSpec) -> SecurityStateGraph:
    """Build the graph for a validated spec, one node per state and one edge per transition."""
    in_deg = {s.id: 0 for s in spec.states}
    out_deg = {s.id: 0 for s in spec.states}
    for t in spec.transitions:
        out_deg[t.src] += 1
        in_deg[t.dst] += 1
    nodes = tuple(
        StateNode(
            id=s.id,
            is_reset=s.id == spec.reset_state,
            protected=s.protected,
            encoding=s.encoding,
            outputs=s.outputs,
            in_degree=in_deg[s.id],
            out_degree=out_deg[s.id],
        )
        for s in spec.states
    )
    edges = tuple(Edge(i, t.src, t.dst, t.guard) for i, t in enumerate(spec.transitions))
    return SecurityStateGraph(
        name=spec.name,
        kind=spec.kind,
        nodes=nodes,
        edges=edges,
        inputs=spec.inputs,
        outputs=spec.outputs,
        register_width=spec.register_width,
    )
