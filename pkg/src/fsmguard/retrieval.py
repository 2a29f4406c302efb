"""Confirmation of potential findings, knowledge retrieval and the security report."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from fsmguard import __version__
from fsmguard.analysis import (
    CONFIRMED,
    MACHINE,
    POTENTIAL,
    REFUTED,
    STRUCTURAL,
    UNCONFIRMED,
    Finding,
    overflowing_outputs,
    sort_findings,
)
from fsmguard.expr import arithmetic_nodes, arithmetic_peak, is_true_literal, references, value_bounds
from fsmguard.graph import SecurityStateGraph
from fsmguard.kg import (
    CODEGEN,
    CUSTOM,
    ConfirmRule,
    KnowledgeGraph,
    UnknownVulnerability,
    VulnKnowledge,
    confirm_rules,
    partition_stage,
    query_vuln,
)
from fsmguard.model import hamming_distance

REPORT = "Report"
CODEGEN_AUDIENCE = "Codegen"

NO_KNOWLEDGE = "no-knowledge"
UNCONFIRMED_CAVEAT = "unconfirmed"


class PredicateError(LookupError):
    """The finding points at something the graph does not contain."""


# Confirmation -------------------------------------------------------------


def _state(g: SecurityStateGraph, state_id: str):
    try:
        return g.node_map[state_id]
    except KeyError:
        raise PredicateError(f"state {state_id!r} not in graph") from None


def _pair(g: SecurityStateGraph, location: str):
    parts = location.split(",")
    if len(parts) != 2:
        raise PredicateError(f"{location!r} is not a state pair")
    a, b = (_state(g, p) for p in parts)
    if a.encoding is None or b.encoding is None:
        raise PredicateError(f"states in {location!r} carry no encodings")
    return a, b


def _output_arithmetic(rule: ConfirmRule, f: Finding, g: SecurityStateGraph) -> bool:
    s = _state(g, f.location)
    bound = rule.param_map["bound"]
    if bound == "width":
        return bool(overflowing_outputs(s, g))
    if bound == "exact":
        return any(arithmetic_peak(e, g.input_widths)[0] >= 1 << g.output_widths[out]
                   for out, e in s.outputs)
    for out, e in s.outputs:
        limit = 1 << g.output_widths[out]
        for node in arithmetic_nodes(e):
            if value_bounds(node, g.input_widths)[1] >= limit:
                return True
    return False


def _pair_distance(rule: ConfirmRule, f: Finding, g: SecurityStateGraph) -> bool:
    a, b = _pair(g, f.location)
    if rule.param_map["scope"] == "protected" and not (a.protected or b.protected):
        return False
    return hamming_distance(a.encoding, b.encoding) < int(rule.param_map["threshold"])


def _dont_care(rule: ConfirmRule, f: Finding, g: SecurityStateGraph) -> bool:
    if f.location != MACHINE:
        raise PredicateError(f"{f.location!r} is not a machine-level location")
    return bool(g.dont_care_count())


def _unguarded_entry(rule: ConfirmRule, f: Finding, g: SecurityStateGraph) -> bool:
    head, _, idx = f.location.rpartition("#")
    if not idx.isdigit() or int(idx) >= len(g.edges) or g.edges[int(idx)].label != f.location:
        raise PredicateError(f"transition {f.location!r} not in graph")
    e = g.edges[int(idx)]
    if not g.node_map[e.dst].protected or g.node_map[e.src].protected:
        return False
    return is_true_literal(e.guard) or not references(e.guard)


PREDICATES = {
    "OutputExprArithmetic": _output_arithmetic,
    "EncodingPairDistanceBelow": _pair_distance,
    "DontCareCountPositive": _dont_care,
    "AlwaysTrueGuardIntoProtected": _unguarded_entry,
}


def confirm_finding(f: Finding, g: SecurityStateGraph, kg: KnowledgeGraph) -> Finding:
    if f.phase != POTENTIAL:
        return f
    try:
        rules = confirm_rules(kg, f.vuln_id)
    except UnknownVulnerability:
        return replace(f, status=UNCONFIRMED,
                       evidence=f"{f.evidence} [{NO_KNOWLEDGE}: {f.vuln_id} not in knowledge graph]")
    machine_rules = [r for r in rules if r.predicate_kind != CUSTOM]
    if not machine_rules:
        return replace(f, status=UNCONFIRMED)
    try:
        hit = any(PREDICATES[r.predicate_kind](r, f, g) for r in machine_rules)
    except PredicateError as exc:
        return replace(f, status=UNCONFIRMED, evidence=f"{f.evidence} [confirmation failed: {exc}]")
    return replace(f, status=CONFIRMED if hit else REFUTED)


def confirm_potential(
    v_p: Iterable[Finding], g: SecurityStateGraph, kg: KnowledgeGraph
) -> list[Finding]:
    """Check each potential finding against the knowledge graph's confirm rules.

    Confirmed when any machine rule holds at the finding's location, Refuted
    when all of them fail, Unconfirmed when the vulnerability has no machine
    rule or the location cannot be resolved.
    """
    return [confirm_finding(f, g, kg) for f in v_p]


# Retrieval ----------------------------------------------------------------


@dataclass(frozen=True)
class BundleItem:
    finding: Finding
    knowledge: Optional[VulnKnowledge]
    markers: tuple[str, ...] = ()


@dataclass(frozen=True)
class KnowledgeBundle:
    audience: str
    items: tuple[BundleItem, ...]

    @property
    def findings(self) -> list[Finding]:
        return [i.finding for i in self.items]


def retrieve_knowledge(
    v_s: Iterable[Finding], v_p: Iterable[Finding], kg: KnowledgeGraph
) -> tuple[KnowledgeBundle, KnowledgeBundle]:
    """Split findings into report-side (K_S) and code-generation (K_C) knowledge.

    ``v_p`` holds potential findings after :func:`confirm_potential`.
    Refuted findings are dropped. Unconfirmed ones and anything the graph
    has no knowledge for go to the report so they are never lost.
    """
    report: list[BundleItem] = []
    codegen: list[BundleItem] = []
    for f in sort_findings(list(v_s) + list(v_p)):
        if f.status == REFUTED:
            continue
        try:
            knowledge = query_vuln(kg, f.vuln_id)
            target = partition_stage(kg, f.vuln_id)
        except UnknownVulnerability:
            report.append(BundleItem(f, None, (NO_KNOWLEDGE,)))
            continue
        if f.phase == POTENTIAL and f.status != CONFIRMED:
            report.append(BundleItem(f, knowledge, (UNCONFIRMED_CAVEAT,)))
        elif target == CODEGEN:
            codegen.append(BundleItem(f, knowledge))
        else:
            report.append(BundleItem(f, knowledge))
    return KnowledgeBundle(REPORT, tuple(report)), KnowledgeBundle(CODEGEN_AUDIENCE, tuple(codegen))


# Report -------------------------------------------------------------------


@dataclass(frozen=True)
class SecurityReport:
    fsm_name: str
    findings: tuple[Finding, ...]
    report_items: tuple[BundleItem, ...]
    codegen_items: tuple[BundleItem, ...]
    refuted: tuple[Finding, ...]
    tool_version: str = __version__

    @property
    def counts(self) -> dict[str, int]:
        return {
            "findings": len(self.findings),
            "structural": sum(f.phase == STRUCTURAL for f in self.findings),
            "potential_confirmed": sum(f.status == CONFIRMED for f in self.findings),
            "potential_unconfirmed": sum(f.status == UNCONFIRMED for f in self.findings),
            "refuted": len(self.refuted),
            "report_knowledge": len(self.report_items),
            "codegen_knowledge": len(self.codegen_items),
        }

    def to_dict(self) -> dict:
        return {
            "fsm": self.fsm_name,
            "tool_version": self.tool_version,
            "summary": self.counts,
            "findings": [f.to_dict() for f in self.findings],
            "knowledge": [_item_dict(i) for i in self.report_items],
            "codegen": [
                {"detector_id": i.finding.detector_id, "location": i.finding.location,
                 "vuln_id": i.finding.vuln_id}
                for i in self.codegen_items
            ],
            "appendix_refuted": [f.to_dict() for f in self.refuted],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self) -> str:
        return render_markdown(self)


def knowledge_to_dict(k: Optional[VulnKnowledge]) -> Optional[dict]:
    if k is None:
        return None
    return {
        "description": k.description,
        "stage": list(k.stage),
        "type": list(k.types),
        "check": list(k.checks),
        "consequence": list(k.consequences),
        "suggestions": [{"text": s.text, "manner": list(s.manners)} for s in k.suggestions],
        "good_examples": list(k.good_examples),
        "bad_examples": list(k.bad_examples),
    }


def _item_dict(item: BundleItem) -> dict:
    return {
        "detector_id": item.finding.detector_id,
        "location": item.finding.location,
        "vuln_id": item.finding.vuln_id,
        "markers": list(item.markers),
        "knowledge": knowledge_to_dict(item.knowledge),
    }


def build_report(
    fsm_name: str,
    findings: Iterable[Finding],
    k_s: KnowledgeBundle,
    k_c: Optional[KnowledgeBundle] = None,
) -> SecurityReport:
    """Assemble the report. Refuted findings move to the appendix."""
    ordered = sort_findings(findings)
    return SecurityReport(
        fsm_name=fsm_name,
        findings=tuple(f for f in ordered if f.status != REFUTED),
        report_items=k_s.items,
        codegen_items=k_c.items if k_c else (),
        refuted=tuple(f for f in ordered if f.status == REFUTED),
    )


def _bullets(label: str, values: Iterable[str]) -> list[str]:
    return [f"- **{label}:** {v}" for v in values]


def render_markdown(r: SecurityReport) -> str:
    lines = [f"# Security report: {r.fsm_name}", "",
             f"Generated by fsmguard {r.tool_version}.", "", "## Summary", ""]
    lines += [f"- {k.replace('_', ' ')}: {v}" for k, v in r.counts.items()]
    lines += ["", "## Findings", ""]
    if not r.findings:
        lines.append("No vulnerabilities detected.")
    else:
        lines += ["| detector | vulnerability | phase | status | location | evidence |",
                  "|---|---|---|---|---|---|"]
        for f in r.findings:
            lines.append(f"| {f.detector_id} | {f.vuln_id} | {f.phase} | {f.status} | "
                         f"`{f.location}` | {f.evidence.replace('|', '/')} |")
    lines += ["", "## Design knowledge", ""]
    if not r.report_items:
        lines += ["Nothing to report for the design stage.", ""]
    for item in r.report_items:
        f = item.finding
        lines += [f"### {f.vuln_id} at `{f.location}` ({f.detector_id})", ""]
        if NO_KNOWLEDGE in item.markers:
            lines += ["_No knowledge for this vulnerability in the knowledge graph._", ""]
            continue
        if UNCONFIRMED_CAVEAT in item.markers:
            lines += ["_Caveat: potential vulnerability that could not be confirmed "
                      "automatically; review manually._", ""]
        k = item.knowledge
        lines.append(k.description)
        lines.append("")
        lines += _bullets("Check", k.checks)
        lines += _bullets("Consequence", k.consequences)
        for s in k.suggestions:
            lines.append(f"- **Suggestion:** {s.text}")
            lines += [f"  - manner: {m}" for m in s.manners]
        lines += _bullets("Good example", (f"`{x}`" for x in k.good_examples))
        lines += _bullets("Bad example", (f"`{x}`" for x in k.bad_examples))
        lines.append("")
    lines += ["## Addressed in the code-generation prompt", ""]
    if not r.codegen_items:
        lines.append("None.")
    for item in r.codegen_items:
        f = item.finding
        lines.append(f"- {f.vuln_id} at `{f.location}` ({f.detector_id})")
    lines += ["", "## Appendix: refuted potential findings", ""]
    if not r.refuted:
        lines.append("None.")
    for f in r.refuted:
        lines.append(f"- {f.detector_id} at `{f.location}`: {f.evidence}")
    return "\n".join(lines).rstrip() + "\n"
