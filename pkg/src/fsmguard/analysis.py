"""Vulnerability pre-analysis over the security state graph.

Detectors come in two phases. Structural detectors look at the shape of
the graph (dead, unreachable and terminal states, exposed protected
states, missing reset recovery). Potential detectors flag conditions that
still need confirmation against the knowledge graph (don't-care register
values, arithmetic output overflow, duplicate or weakly separated state
encodings).

Every detector is a per-state predicate. :func:`pre_analyze` runs the
structural phase and then the potential phase, each as a loop over states
with an inner loop over detectors, and sorts the result by
``(detector_id, location, evidence)``.

Locations are strings:

* a state id, e.g. ``S1``
* a transition, ``SRC->DST#index``
* an unordered state pair, ``A,B`` (names sorted)
* the whole machine, ``*``
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

from fsmguard.expr import arithmetic_nodes, expr_width, format_expr, is_true_literal, references
from fsmguard.graph import SecurityStateGraph, StateNode
from fsmguard.model import hamming_distance

STRUCTURAL = "Structural"
POTENTIAL = "Potential"

RAW = "Raw"
CONFIRMED = "Confirmed"
REFUTED = "Refuted"
UNCONFIRMED = "Unconfirmed"

MACHINE = "*"
WEAK_HAMMING_THRESHOLD = 2


@dataclass(frozen=True)
class Finding:
    detector_id: str
    vuln_id: str
    phase: str
    location: str
    evidence: str
    status: str = RAW

    def __post_init__(self):
        if self.phase == STRUCTURAL and self.status != RAW:
            raise ValueError("structural findings are never confirmed or refuted")

    def sort_key(self) -> tuple[str, str, str]:
        return self.detector_id, self.location, self.evidence

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Finding":
        return cls(**{k: data[k] for k in ("detector_id", "vuln_id", "phase", "location",
                                           "evidence", "status")})


def sort_findings(findings: Iterable[Finding]) -> list[Finding]:
    return sorted(findings, key=Finding.sort_key)


def findings_to_json(findings: Iterable[Finding]) -> str:
    return json.dumps([f.to_dict() for f in findings], indent=2) + "\n"


def findings_from_json(text: str) -> list[Finding]:
    return [Finding.from_dict(d) for d in json.loads(text)]


def pair_location(a: str, b: str) -> str:
    return ",".join(sorted((a, b)))


def location_exists(g: SecurityStateGraph, location: str) -> bool:
    if location == MACHINE:
        return True
    if "->" in location:
        head, _, idx = location.rpartition("#")
        if not idx.isdigit() or int(idx) >= len(g.edges):
            return False
        return g.edges[int(idx)].label == location
    if "," in location:
        parts = location.split(",")
        return len(parts) == 2 and all(p in g.node_map for p in parts)
    return location in g.node_map


StateCheck = Callable[[StateNode, SecurityStateGraph], list[Finding]]


@dataclass(frozen=True)
class Detector:
    id: str
    vuln_id: str
    phase: str
    check: StateCheck = field(compare=False)

    def __call__(self, g: SecurityStateGraph) -> list[Finding]:
        out: list[Finding] = []
        for node in g.nodes:
            out.extend(self.check(node, g))
        return sort_findings(out)


def _finding(det_id: str, vuln: str, phase: str, loc: str, evidence: str) -> Finding:
    return Finding(det_id, vuln, phase, loc, evidence)


# Structural ---------------------------------------------------------------


def _no_incoming(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    if s.is_reset or s.in_degree > 0:
        return []
    return [_finding("DEAD_STATE_NO_INCOMING", "DEAD_STATE", STRUCTURAL, s.id,
                     f"state {s.id} has no incoming transition")]


def _unreachable(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    if s.id in g.reachable_from_reset:
        return []
    return [_finding("UNREACHABLE_FROM_RESET", "UNREACHABLE_FROM_RESET", STRUCTURAL, s.id,
                     f"no path from reset state {g.reset.id} reaches {s.id}")]


def _terminal(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    if s.out_degree > 0:
        return []
    return [_finding("TERMINAL_STATE", "TERMINAL_STATE", STRUCTURAL, s.id,
                     f"state {s.id} has no outgoing transition")]


def _guard_is_unconditional(guard) -> bool:
    return is_true_literal(guard) or not references(guard)


def _protected_exposure(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    if not s.protected:
        return []
    out = []
    for e in g.incoming[s.id]:
        if g.node_map[e.src].protected or not _guard_is_unconditional(e.guard):
            continue
        out.append(_finding(
            "PROTECTED_EXPOSURE", "PROTECTED_EXPOSURE", STRUCTURAL, e.label,
            f"protected state {s.id} entered from {e.src} under input-free guard "
            f"'{format_expr(e.guard)}'"))
    return out


def reset_reenterable(g: SecurityStateGraph) -> bool:
    """True when some other reachable state has a transition back into reset."""
    reset = g.reset.id
    reach = g.reachable_from_reset
    return any(e.src != reset and e.src in reach for e in g.incoming[reset])


def _missing_reset_coverage(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    if not s.is_reset or reset_reenterable(g) or not g.is_incomplete():
        return []
    return [_finding(
        "MISSING_RESET_COVERAGE", "CWE-1245", STRUCTURAL, s.id,
        f"reset state {s.id} cannot be re-entered once left and the {g.register_width}-bit "
        f"register leaves {g.dont_care_count()} don't-care values with no recovery path")]


# Potential ----------------------------------------------------------------


def _dont_care(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    if not s.is_reset or not g.is_incomplete():
        return []
    return [_finding(
        "DONT_CARE_STATES", "DONT_CARE_STATES", POTENTIAL, MACHINE,
        f"{g.dont_care_count()} of {1 << g.register_width} register values are unassigned "
        f"({len(g.nodes)} states, {g.register_width}-bit register)")]


def overflowing_outputs(s: StateNode, g: SecurityStateGraph) -> list[tuple[str, int, int]]:
    """``(output, needed_width, declared_width)`` for outputs whose arithmetic outgrows them."""
    hits = []
    for out, e in s.outputs:
        declared = g.output_widths[out]
        widths = [expr_width(n, g.input_widths) for n in arithmetic_nodes(e)]
        if widths and max(widths) > declared:
            hits.append((out, max(widths), declared))
    return hits


def _overflow_output(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    return [
        _finding("OVERFLOW_OUTPUT", "CWE-190", POTENTIAL, s.id,
                 f"output {out} of state {s.id} is {declared} bits but "
                 f"'{format_expr(dict(s.outputs)[out])}' needs {need}")
        for out, need, declared in overflowing_outputs(s, g)
    ]


def _later_encoded(s: StateNode, g: SecurityStateGraph):
    if s.encoding is None:
        return
    after = False
    for t in g.nodes:
        if t.id == s.id:
            after = True
        elif after:
            yield t


def _duplicate_encoding(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    return [
        _finding("DUPLICATE_ENCODING", "DUPLICATE_ENCODING", POTENTIAL,
                 pair_location(s.id, t.id),
                 f"states {s.id} and {t.id} share encoding {s.encoding}")
        for t in _later_encoded(s, g)
        if t.encoding == s.encoding
    ]


def _weak_hamming(s: StateNode, g: SecurityStateGraph) -> list[Finding]:
    out = []
    for t in _later_encoded(s, g):
        if not (s.protected or t.protected):
            continue
        d = hamming_distance(s.encoding, t.encoding)
        if d < WEAK_HAMMING_THRESHOLD:
            prot = s.id if s.protected else t.id
            out.append(_finding(
                "WEAK_HAMMING", "WEAK_HAMMING", POTENTIAL, pair_location(s.id, t.id),
                f"protected state {prot}: {s.id}={s.encoding} and {t.id}={t.encoding} "
                f"are at Hamming distance {d}"))
    return out


detect_no_incoming = Detector("DEAD_STATE_NO_INCOMING", "DEAD_STATE", STRUCTURAL, _no_incoming)
detect_unreachable = Detector("UNREACHABLE_FROM_RESET", "UNREACHABLE_FROM_RESET", STRUCTURAL,
                              _unreachable)
detect_terminal = Detector("TERMINAL_STATE", "TERMINAL_STATE", STRUCTURAL, _terminal)
detect_protected_exposure = Detector("PROTECTED_EXPOSURE", "PROTECTED_EXPOSURE", STRUCTURAL,
                                     _protected_exposure)
detect_missing_reset_coverage = Detector("MISSING_RESET_COVERAGE", "CWE-1245", STRUCTURAL,
                                         _missing_reset_coverage)
detect_dont_care = Detector("DONT_CARE_STATES", "DONT_CARE_STATES", POTENTIAL, _dont_care)
detect_overflow_output = Detector("OVERFLOW_OUTPUT", "CWE-190", POTENTIAL, _overflow_output)
detect_duplicate_encoding = Detector("DUPLICATE_ENCODING", "DUPLICATE_ENCODING", POTENTIAL,
                                     _duplicate_encoding)
detect_weak_hamming = Detector("WEAK_HAMMING", "WEAK_HAMMING", POTENTIAL, _weak_hamming)


@dataclass(frozen=True)
class DetectorRegistry:
    structural: tuple[Detector, ...]
    potential: tuple[Detector, ...]

    def __post_init__(self):
        ids = [d.id for d in self.structural + self.potential]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate detector ids in {ids}")
        if any(d.phase != STRUCTURAL for d in self.structural) or any(
            d.phase != POTENTIAL for d in self.potential
        ):
            raise ValueError("detector registered under the wrong phase")

    @property
    def all(self) -> tuple[Detector, ...]:
        return self.structural + self.potential

    def get(self, detector_id: str) -> Detector:
        return next(d for d in self.all if d.id == detector_id)


DEFAULT_REGISTRY = DetectorRegistry(
    structural=(
        detect_no_incoming,
        detect_unreachable,
        detect_terminal,
        detect_protected_exposure,
        detect_missing_reset_coverage,
    ),
    potential=(
        detect_dont_care,
        detect_overflow_output,
        detect_duplicate_encoding,
        detect_weak_hamming,
    ),
)


def pre_analyze(
    g: SecurityStateGraph, reg: DetectorRegistry = DEFAULT_REGISTRY
) -> tuple[list[Finding], list[Finding]]:
    """Run the structural phase, then the potential phase. Returns ``(V_S, V_P)``."""
    structural: list[Finding] = []
    for s in g.nodes:
        for det in reg.structural:
            structural.extend(det.check(s, g))
    potential: list[Finding] = []
    for s in g.nodes:
        for det in reg.potential:
            potential.extend(det.check(s, g))
    return sort_findings(structural), sort_findings(potential)
