"""FSM security knowledge graph: ontology, file format, validation and queries.

File format (UTF-8, one record per line)::

    version 2026.1
    # comment
    node CWE-190 Vulnerability "Integer overflow in an output expression" cwe=190
    node CWE-190.stage stage "coding"
    edge CWE-190 -[:stage]-> CWE-190.stage

Payloads are double-quoted with ``\\"``, ``\\\\`` and ``\\n`` escapes.
Attribute values are bare words or double-quoted strings. Node ids may
contain letters, digits and ``_ - . :``.

A ``confirm`` node carries a machine-checkable rule in its attributes:
``kind=<predicate>`` plus the parameters documented in
:data:`CONFIRM_SCHEMAS`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Optional

VULNERABILITY = "Vulnerability"
NODE_TYPES = (
    "Vulnerability", "stage", "type", "Check", "Consequence", "GoodExample", "BadExample",
    "suggestions", "manner", "confirm", "confirm_positive", "confirm_negative",
    "positive_example", "negative_example",
)

# label -> (source node type, target node type); every row of the ontology
ONTOLOGY = {
    "stage": ("Vulnerability", "stage"),
    "type": ("Vulnerability", "type"),
    "Check": ("Vulnerability", "Check"),
    "Consequence": ("Vulnerability", "Consequence"),
    "GoodExample": ("Vulnerability", "GoodExample"),
    "BadExample": ("Vulnerability", "BadExample"),
    "suggestions": ("Vulnerability", "suggestions"),
    "manner": ("suggestions", "manner"),
    "confirm": ("Vulnerability", "confirm"),
    "confirm_positive": ("confirm", "confirm_positive"),
    "confirm_negative": ("confirm", "confirm_negative"),
    "positive_example": ("confirm_positive", "positive_example"),
    "negative_example": ("confirm_negative", "negative_example"),
}
MANDATORY_LABELS = ("type", "stage", "Check", "suggestions")

STAGE_DESIGN = "design"
STAGE_CODING = "coding"
REPORT_ONLY = "ReportOnly"
CODEGEN = "Codegen"
STAGE_PARTITION = {STAGE_DESIGN: REPORT_ONLY, STAGE_CODING: CODEGEN}

# predicate kind -> {param: allowed values (None = any positive integer)}
CONFIRM_SCHEMAS: dict[str, dict[str, Optional[tuple[str, ...]]]] = {
    "OutputExprArithmetic": {"bound": ("width", "interval", "exact")},
    "EncodingPairDistanceBelow": {"threshold": None, "scope": ("any", "protected")},
    "DontCareCountPositive": {},
    "AlwaysTrueGuardIntoProtected": {},
}
CUSTOM = "Custom"

NODE_ID_RE = r"[A-Za-z0-9_.:\-]+"
_NODE_RE = re.compile(
    rf'node\s+(?P<id>{NODE_ID_RE})\s+(?P<type>\S+)\s+"(?P<payload>(?:[^"\\]|\\.)*)"(?P<attrs>.*)$'
)
_EDGE_RE = re.compile(
    rf"edge\s+(?P<src>{NODE_ID_RE})\s+-\[:(?P<label>\w+)\]->\s+(?P<dst>{NODE_ID_RE})\s*$"
)
_ATTR_RE = re.compile(r'\s*(?P<key>\w+)=(?:"(?P<quoted>(?:[^"\\]|\\.)*)"|(?P<bare>[^\s"]+))')
_BARE_VALUE_RE = re.compile(r'[^\s"\\]+\Z')


@dataclass(frozen=True)
class KgNode:
    id: str
    node_type: str
    payload: str
    attrs: tuple[tuple[str, str], ...] = ()

    @property
    def attr_map(self) -> dict[str, str]:
        return dict(self.attrs)


@dataclass(frozen=True)
class KgEdge:
    src: str
    label: str
    dst: str

    def __str__(self) -> str:
        return f"{self.src}-[:{self.label}]->{self.dst}"


@dataclass(frozen=True)
class KnowledgeGraph:
    nodes: tuple[KgNode, ...]
    edges: tuple[KgEdge, ...]
    version: str

    @cached_property
    def node_map(self) -> dict[str, KgNode]:
        out: dict[str, KgNode] = {}
        for n in self.nodes:
            out.setdefault(n.id, n)
        return out

    @cached_property
    def out_edges(self) -> dict[str, list[KgEdge]]:
        out: dict[str, list[KgEdge]] = {}
        for e in self.edges:
            out.setdefault(e.src, []).append(e)
        return out

    @property
    def vulnerability_ids(self) -> list[str]:
        return sorted(n.id for n in self.node_map.values() if n.node_type == VULNERABILITY)

    def children(self, node_id: str, label: str) -> list[KgNode]:
        kids = [self.node_map[e.dst] for e in self.out_edges.get(node_id, [])
                if e.label == label and e.dst in self.node_map]
        return sorted(set(kids), key=lambda n: n.id)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    subject: str
    message: str
    line: Optional[int] = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.code} [{self.subject}]: {self.message}"


class KgError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))

    @property
    def codes(self) -> list[str]:
        return [d.code for d in self.diagnostics]


class UnknownVulnerability(KeyError):
    pass


# Parsing and serialization ------------------------------------------------


def _unescape(s: str) -> str:
    return re.sub(r"\\(.)", lambda m: "\n" if m.group(1) == "n" else m.group(1), s)


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def parse_kg(text: str) -> KnowledgeGraph:
    """Read the file format without validating graph invariants."""
    nodes: list[KgNode] = []
    edges: list[KgEdge] = []
    version: Optional[str] = None
    errors: list[Diagnostic] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("version"):
            parts = line.split(None, 1)
            if len(parts) != 2 or parts[0] != "version" or version is not None:
                errors.append(Diagnostic("syntax-error", f"line {lineno}",
                                         "expected a single 'version <text>' header", lineno))
            else:
                version = parts[1]
            continue
        m = _NODE_RE.match(line)
        if m:
            attrs, rest = [], m.group("attrs")
            while rest.strip():
                am = _ATTR_RE.match(rest)
                if not am:
                    errors.append(Diagnostic("syntax-error", m.group("id"),
                                             f"bad attribute list {rest.strip()!r}", lineno))
                    break
                value = am.group("bare") if am.group("bare") is not None else _unescape(
                    am.group("quoted"))
                attrs.append((am.group("key"), value))
                rest = rest[am.end():]
            nodes.append(KgNode(m.group("id"), m.group("type"), _unescape(m.group("payload")),
                                tuple(attrs)))
            continue
        m = _EDGE_RE.match(line)
        if m:
            edges.append(KgEdge(m.group("src"), m.group("label"), m.group("dst")))
            continue
        errors.append(Diagnostic("syntax-error", f"line {lineno}",
                                 f"unrecognised record {line[:40]!r}", lineno))
    if version is None:
        errors.append(Diagnostic("missing-version", "header", "no 'version <text>' line"))
    if errors:
        raise KgError(errors)
    return KnowledgeGraph(tuple(nodes), tuple(edges), version)


def serialize_kg(g: KnowledgeGraph) -> str:
    lines = [f"version {g.version}"]
    for n in g.nodes:
        attrs = "".join(
            f" {k}={v}" if _BARE_VALUE_RE.match(v) else f' {k}="{_escape(v)}"'
            for k, v in n.attrs
        )
        lines.append(f'node {n.id} {n.node_type} "{_escape(n.payload)}"{attrs}')
    lines += [f"edge {e.src} -[:{e.label}]-> {e.dst}" for e in g.edges]
    return "\n".join(lines) + "\n"


def load_kg(text: str) -> KnowledgeGraph:
    """Parse and validate; raises :class:`KgError` listing every violation."""
    g = parse_kg(text)
    diags = validate_kg(g)
    if diags:
        raise KgError(diags)
    return g


def load_seed_kg() -> KnowledgeGraph:
    return load_kg(seed_kg_text())


def seed_kg_text() -> str:
    return resources.files("fsmguard").joinpath("data/seed.kg").read_text(encoding="utf-8")


# Validation ---------------------------------------------------------------


def _confirm_rule_problem(node: KgNode) -> Optional[str]:
    attrs = node.attr_map
    kind = attrs.pop("kind", None)
    if kind is None:
        return "confirm node lacks kind=<predicate>"
    if kind == CUSTOM:
        return None
    if kind not in CONFIRM_SCHEMAS:
        return f"unknown predicate kind {kind!r}"
    schema = CONFIRM_SCHEMAS[kind]
    if set(attrs) != set(schema):
        return f"{kind} expects parameters {sorted(schema)}, got {sorted(attrs)}"
    for key, allowed in schema.items():
        value = attrs[key]
        if allowed is None:
            if not value.isdigit() or int(value) < 1:
                return f"{key} must be a positive integer, got {value!r}"
        elif value not in allowed:
            return f"{key} must be one of {list(allowed)}, got {value!r}"
    return None


def validate_kg(g: KnowledgeGraph) -> list[Diagnostic]:
    """Every invariant violation in ``g``; empty when the graph is well formed."""
    diags: list[Diagnostic] = []
    seen: set[str] = set()
    for n in g.nodes:
        if n.id in seen:
            diags.append(Diagnostic("duplicate-id", n.id, "node id declared more than once"))
        seen.add(n.id)
    nodes = g.node_map
    if not any(n.node_type == VULNERABILITY for n in nodes.values()):
        diags.append(Diagnostic("no-vulnerability-nodes", "graph",
                                "graph has no Vulnerability node"))
    for n in nodes.values():
        if n.node_type not in NODE_TYPES:
            diags.append(Diagnostic("unknown-node-type", n.id,
                                    f"{n.node_type!r} is not an ontology node type"))
        elif n.node_type == "stage" and n.payload not in STAGE_PARTITION:
            diags.append(Diagnostic("invalid-stage-payload", n.id,
                                    f"stage must be one of {sorted(STAGE_PARTITION)}, "
                                    f"got {n.payload!r}"))
        elif n.node_type == "confirm":
            problem = _confirm_rule_problem(n)
            if problem:
                diags.append(Diagnostic("invalid-confirm-rule", n.id, problem))

    valid_edges: list[KgEdge] = []
    seen_edges: set[KgEdge] = set()
    for e in g.edges:
        if e in seen_edges:
            diags.append(Diagnostic("duplicate-edge", str(e), "edge declared more than once"))
            continue
        seen_edges.add(e)
        missing = [x for x in (e.src, e.dst) if x not in nodes]
        if missing:
            diags.append(Diagnostic("dangling-edge", str(e), f"unknown node(s) {missing}"))
            continue
        if e.label not in ONTOLOGY:
            diags.append(Diagnostic("unknown-edge-label", str(e),
                                    f"{e.label!r} is not an ontology relationship"))
            continue
        want = ONTOLOGY[e.label]
        got = (nodes[e.src].node_type, nodes[e.dst].node_type)
        if got != want:
            diags.append(Diagnostic("edge-type-violation", str(e),
                                    f"[:{e.label}] connects {want[0]} -> {want[1]}, "
                                    f"not {got[0]} -> {got[1]}"))
            continue
        valid_edges.append(e)

    for vid in sorted(n.id for n in nodes.values() if n.node_type == VULNERABILITY):
        labels = {e.label for e in valid_edges if e.src == vid}
        for label in MANDATORY_LABELS:
            if label not in labels:
                diags.append(Diagnostic("missing-mandatory-edge", vid,
                                        f"Vulnerability lacks a [:{label}] edge"))

    adjacency: dict[str, list[str]] = {}
    for e in g.edges:
        if e.src in nodes and e.dst in nodes:
            adjacency.setdefault(e.src, []).append(e.dst)
    reached = {n.id for n in nodes.values() if n.node_type == VULNERABILITY}
    stack = list(reached)
    while stack:
        for nxt in adjacency.get(stack.pop(), []):
            if nxt not in reached:
                reached.add(nxt)
                stack.append(nxt)
    for nid in sorted(set(nodes) - reached):
        diags.append(Diagnostic("orphan-node", nid, "not reachable from any Vulnerability"))
    return diags


# Queries ------------------------------------------------------------------


@dataclass(frozen=True)
class ConfirmRule:
    vuln_id: str
    rule_id: str
    predicate_kind: str
    params: tuple[tuple[str, str], ...]
    positive_text: str
    negative_text: str

    @property
    def param_map(self) -> dict[str, str]:
        return dict(self.params)


@dataclass(frozen=True)
class Suggestion:
    text: str
    manners: tuple[str, ...] = ()


@dataclass(frozen=True)
class VulnKnowledge:
    vuln_id: str
    description: str
    stage: tuple[str, ...]
    types: tuple[str, ...]
    checks: tuple[str, ...]
    consequences: tuple[str, ...]
    good_examples: tuple[str, ...]
    bad_examples: tuple[str, ...]
    suggestions: tuple[Suggestion, ...]
    confirms: tuple[ConfirmRule, ...] = field(default=())


def _vuln_node(g: KnowledgeGraph, vuln_id: str) -> KgNode:
    node = g.node_map.get(vuln_id)
    if node is None or node.node_type != VULNERABILITY:
        raise UnknownVulnerability(vuln_id)
    return node


def _payloads(nodes: Iterable[KgNode]) -> tuple[str, ...]:
    return tuple(n.payload for n in nodes)


def confirm_rules(g: KnowledgeGraph, vuln_id: str) -> list[ConfirmRule]:
    """One rule per ``confirm`` node of the vulnerability, ordered by node id."""
    _vuln_node(g, vuln_id)
    rules = []
    for c in g.children(vuln_id, "confirm"):
        attrs = c.attr_map
        kind = attrs.pop("kind", CUSTOM)
        pos = g.children(c.id, "confirm_positive")
        neg = g.children(c.id, "confirm_negative")
        rules.append(ConfirmRule(
            vuln_id=vuln_id,
            rule_id=c.id,
            predicate_kind=kind,
            params=tuple(sorted(attrs.items())),
            positive_text="\n".join(_payloads(pos)),
            negative_text="\n".join(_payloads(neg)),
        ))
    return rules


def query_vuln(g: KnowledgeGraph, vuln_id: str) -> VulnKnowledge:
    """Payloads of everything hanging off a Vulnerability, grouped by relationship."""
    node = _vuln_node(g, vuln_id)

    def kids(label: str) -> tuple[str, ...]:
        return _payloads(g.children(vuln_id, label))

    suggestions = tuple(
        Suggestion(s.payload, _payloads(g.children(s.id, "manner")))
        for s in g.children(vuln_id, "suggestions")
    )
    return VulnKnowledge(
        vuln_id=vuln_id,
        description=node.payload,
        stage=kids("stage"),
        types=kids("type"),
        checks=kids("Check"),
        consequences=kids("Consequence"),
        good_examples=kids("GoodExample"),
        bad_examples=kids("BadExample"),
        suggestions=suggestions,
        confirms=tuple(confirm_rules(g, vuln_id)),
    )


def partition_stage(g: KnowledgeGraph, vuln_id: str) -> str:
    """``ReportOnly`` for design-stage vulnerabilities, ``Codegen`` for coding-stage ones."""
    _vuln_node(g, vuln_id)
    stages = {n.payload for n in g.children(vuln_id, "stage")}
    if len(stages) != 1:
        raise ValueError(f"{vuln_id} needs exactly one stage value, has {sorted(stages)}")
    stage = stages.pop()
    try:
        return STAGE_PARTITION[stage]
    except KeyError:
        raise ValueError(f"{vuln_id}: unknown stage {stage!r}") from None
