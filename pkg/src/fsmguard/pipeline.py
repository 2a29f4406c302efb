"""The analysis pipeline end to end, up to (not including) code generation."""

from __future__ import annotations

from dataclasses import dataclass

from fsmguard.analysis import DEFAULT_REGISTRY, DetectorRegistry, Finding, pre_analyze
from fsmguard.graph import SecurityStateGraph, build_graph
from fsmguard.kg import KnowledgeGraph
from fsmguard.model import FsmSpec
from fsmguard.planning import SecurityPrompt, assemble_security_prompt, build_template
from fsmguard.retrieval import (
    KnowledgeBundle,
    SecurityReport,
    build_report,
    confirm_potential,
    retrieve_knowledge,
)


@dataclass(frozen=True)
class PipelineResult:
    graph: SecurityStateGraph
    structural: list[Finding]
    potential: list[Finding]
    k_s: KnowledgeBundle
    k_c: KnowledgeBundle
    report: SecurityReport
    prompt: SecurityPrompt


def run_pipeline(
    spec: FsmSpec, kg: KnowledgeGraph, registry: DetectorRegistry = DEFAULT_REGISTRY
) -> PipelineResult:
    g = build_graph(spec)
    v_s, v_p = pre_analyze(g, registry)
    v_p = confirm_potential(v_p, g, kg)
    k_s, k_c = retrieve_knowledge(v_s, v_p, kg)
    report = build_report(spec.name, v_s + v_p, k_s, k_c)
    prompt = assemble_security_prompt(build_template(spec), k_c)
    return PipelineResult(g, v_s, v_p, k_s, k_c, report, prompt)

