"""Command-line entry point.

Exit status: 0 ok / nothing found, 1 findings present, 2 usage or input
error, 3 provider error. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import enum
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from fsmguard import __version__
from fsmguard.analysis import Finding, findings_to_json, pre_analyze
from fsmguard.errors import FsmError
from fsmguard.fsmfile import dump_fsm, load_fsm
from fsmguard.graph import build_graph
from fsmguard.injection import VARIANTS, InjectionError, InjectionRecipe, generate_random_spec, inject
from fsmguard.kg import (
    KgError,
    KnowledgeGraph,
    UnknownVulnerability,
    load_kg,
    load_seed_kg,
    parse_kg,
    query_vuln,
    seed_kg_text,
    validate_kg,
)
from fsmguard.lint import LintParseError, extract_lint_model, lint, render_verilog
from fsmguard.pipeline import run_pipeline
from fsmguard.provider import ProviderError, generate, load_provider_config
from fsmguard.retrieval import knowledge_to_dict

HELP_WIDTH = 80


class ExitStatus(enum.IntEnum):
    OK = 0
    FINDINGS = 1
    USAGE = 2
    PROVIDER = 3


class InputError(Exception):
    """Bad user input; reported and mapped to exit status 2."""


def _formatter(prog: str) -> argparse.HelpFormatter:
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


# io helpers ---------------------------------------------------------------


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_spec(path: str):
    try:
        return load_fsm(_read(path))
    except FsmError as exc:
        raise InputError(f"{path}:{exc}") from None


def _load_kg(path: Optional[str]) -> KnowledgeGraph:
    if path is None:
        return load_seed_kg()
    try:
        return load_kg(_read(path))
    except KgError as exc:
        raise InputError(f"{path}: invalid knowledge graph\n" +
                         "\n".join(f"  {d}" for d in exc.diagnostics)) from None


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def format_findings(findings: Sequence[Finding], fmt: str) -> str:
    if fmt == "structured":
        return findings_to_json(findings)
    if not findings:
        return "No findings.\n"
    return "".join(
        f"{f.detector_id} [{f.vuln_id}] {f.phase}/{f.status} at {f.location}: {f.evidence}\n"
        for f in findings
    )


# subcommands --------------------------------------------------------------


def cmd_analyze(args) -> int:
    spec = _load_spec(args.fsm)
    v_s, v_p = pre_analyze(build_graph(spec))
    findings = v_s + v_p
    _emit(format_findings(findings, args.format), args.output)
    return ExitStatus.FINDINGS if findings else ExitStatus.OK


def cmd_report(args) -> int:
    result = run_pipeline(_load_spec(args.fsm), _load_kg(args.kg))
    r = result.report
    _emit(r.to_json() if args.format == "structured" else r.to_markdown(), args.output)
    return ExitStatus.FINDINGS if r.findings else ExitStatus.OK


def cmd_prompt(args) -> int:
    result = run_pipeline(_load_spec(args.fsm), _load_kg(args.kg))
    text = result.prompt.render()
    if args.output:
        _emit(text, args.output)
    sys.stdout.write(text)
    return ExitStatus.OK


def cmd_kg_validate(args) -> int:
    path = args.kg_file
    try:
        g = parse_kg(_read(path)) if path else parse_kg(seed_kg_text())
        diags = validate_kg(g)
    except KgError as exc:
        diags = exc.diagnostics
    if args.format == "structured":
        sys.stdout.write(json.dumps([vars(d) for d in diags], indent=2) + "\n")
    else:
        sys.stdout.write("".join(f"{d}\n" for d in diags) or "ok: 0 diagnostics\n")
    return ExitStatus.FINDINGS if diags else ExitStatus.OK


def cmd_kg_query(args) -> int:
    g = _load_kg(args.kg)
    try:
        k = query_vuln(g, args.vuln_id)
    except UnknownVulnerability:
        raise InputError(f"{args.vuln_id}: no such vulnerability in the knowledge graph") from None
    data = knowledge_to_dict(k)
    if args.format == "structured":
        sys.stdout.write(json.dumps({"vuln_id": k.vuln_id, **data}, indent=2) + "\n")
        return ExitStatus.OK
    lines = [f"{k.vuln_id}: {k.description}"]
    for key in ("stage", "type", "check", "consequence", "good_examples", "bad_examples"):
        lines += [f"  {key}: {v}" for v in data[key]]
    for s in k.suggestions:
        lines.append(f"  suggestion: {s.text}")
        lines += [f"    manner: {m}" for m in s.manners]
    for c in k.confirms:
        params = " ".join(f"{a}={b}" for a, b in c.params)
        lines.append(f"  confirm: {c.predicate_kind} {params}".rstrip())
    sys.stdout.write("\n".join(lines) + "\n")
    return ExitStatus.OK


def cmd_inject(args) -> int:
    spec = _load_spec(args.fsm)
    try:
        recipe = InjectionRecipe.for_variant(args.variant, args.seed, args.target)
        mutated, truth = inject(spec, recipe)
    except InjectionError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{spec.name}.injected.fsm").write_text(dump_fsm(mutated, args.format), encoding="utf-8")
    (out / f"{spec.name}.truth").write_text(truth.to_json(), encoding="utf-8")
    sys.stdout.write(truth.to_json())
    return ExitStatus.OK


def cmd_lint(args) -> int:
    spec = _load_spec(args.spec) if args.spec else None
    try:
        model = extract_lint_model(Path(args.verilog).read_bytes())
    except OSError as exc:
        raise InputError(f"{args.verilog}: {exc}") from None
    except LintParseError as exc:
        raise InputError(f"{args.verilog}: {exc}") from None
    findings = lint(model, spec)
    _emit(format_findings(findings, args.format), args.output)
    return ExitStatus.FINDINGS if findings else ExitStatus.OK


def cmd_generate(args) -> int:
    spec = _load_spec(args.fsm)
    result = run_pipeline(spec, _load_kg(args.kg))
    cfg = load_provider_config(args.provider)
    verilog = generate(result.prompt, cfg, timeout=args.timeout, retries=args.retries)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{spec.name}.v").write_text(verilog, encoding="utf-8")
    (out / f"{spec.name}.security-report.md").write_text(result.report.to_markdown(), encoding="utf-8")
    (out / f"{spec.name}.security-report.json").write_text(result.report.to_json(), encoding="utf-8")
    try:
        findings = lint(extract_lint_model(verilog), spec)
    except LintParseError as exc:
        print(f"generated Verilog is malformed: {exc}", file=sys.stderr)
        return ExitStatus.FINDINGS
    sys.stdout.write(format_findings(findings, args.format))
    return ExitStatus.FINDINGS if findings else ExitStatus.OK


def cmd_convert(args) -> int:
    _emit(dump_fsm(_load_spec(args.fsm), args.format), args.output)
    return ExitStatus.OK


def cmd_sample(args) -> int:
    if args.states < 1 or args.inputs < 0:
        raise InputError("--states must be >= 1 and --inputs >= 0")
    spec = generate_random_spec(args.seed, args.states, args.inputs, name=args.name)
    _emit(dump_fsm(spec, args.format), args.output)
    return ExitStatus.OK


def cmd_render(args) -> int:
    _emit(render_verilog(_load_spec(args.fsm), default_arm=not args.no_default_arm), args.output)
    return ExitStatus.OK


# parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fsmguard", formatter_class=_formatter,
        description="Security analysis and secure code-generation prompts for finite state machines.",
        epilog="exit status: 0 ok, 1 findings present, 2 usage or input error, 3 provider error",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=_formatter)
        sp.set_defaults(func=func)
        return sp

    def fmt(sp):
        sp.add_argument("--format", choices=("text", "structured"), default="text",
                        help="output format: human-readable text or JSON (default: text)")

    def out(sp):
        sp.add_argument("-o", "--output", metavar="PATH",
                        help="write the result to PATH instead of standard output")

    def kg(sp):
        sp.add_argument("--kg", metavar="PATH",
                        help="knowledge graph file (default: the bundled seed graph)")

    sp = add("analyze", cmd_analyze, "run the structural and potential detectors on an FSM file")
    sp.add_argument("fsm", help="FSM description (text or JSON)")
    fmt(sp)
    out(sp)

    sp = add("report", cmd_report, "write the security report (Markdown, or JSON with --format structured)")
    sp.add_argument("fsm", help="FSM description (text or JSON)")
    kg(sp)
    fmt(sp)
    out(sp)

    sp = add("prompt", cmd_prompt, "print the security-augmented code-generation prompt")
    sp.add_argument("fsm", help="FSM description (text or JSON)")
    kg(sp)
    sp.add_argument("-o", "--output", metavar="PATH",
                    help="also write the prompt to PATH (conventionally <name>.prompt.txt)")

    kgp = add("kg", None, "validate or query a knowledge graph")
    kgsub = kgp.add_subparsers(dest="kg_command", metavar="ACTION", required=True)
    sp = kgsub.add_parser("validate", help="check a knowledge graph against the ontology",
                          description="check a knowledge graph against the ontology",
                          formatter_class=_formatter)
    sp.add_argument("kg_file", nargs="?", metavar="KG",
                    help="knowledge graph file (default: the bundled seed graph)")
    fmt(sp)
    sp.set_defaults(func=cmd_kg_validate)
    sp = kgsub.add_parser("query", help="print the knowledge attached to one vulnerability",
                          description="print the knowledge attached to one vulnerability",
                          formatter_class=_formatter)
    sp.add_argument("vuln_id", metavar="VULN", help="vulnerability id, e.g. CWE-190")
    kg(sp)
    fmt(sp)
    sp.set_defaults(func=cmd_kg_query)

    sp = add("inject", cmd_inject, "plant one vulnerability and write <name>.injected.fsm and <name>.truth")
    sp.add_argument("fsm", help="FSM description (text or JSON)")
    sp.add_argument("--variant", required=True, choices=sorted(VARIANTS), metavar="VARIANT",
                    help="vulnerability to plant: " + ", ".join(sorted(VARIANTS)))
    sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    sp.add_argument("--target", metavar="STATE", help="state to mutate (default: chosen by seed)")
    sp.add_argument("--out-dir", default=".", metavar="DIR", help="output directory (default: .)")
    sp.add_argument("--format", choices=("text", "structured"), default="text",
                    help="format of the injected FSM file (default: text)")

    sp = add("lint-verilog", cmd_lint, "check Verilog against the coding-stage security checklist")
    sp.add_argument("verilog", metavar="FILE", help="Verilog source")
    sp.add_argument("--spec", metavar="FSM", help="FSM description naming the protected states")
    fmt(sp)
    out(sp)

    sp = add("generate", cmd_generate,
             "full pipeline: prompt, provider, lint; writes <name>.v and the security report")
    sp.add_argument("fsm", help="FSM description (text or JSON)")
    kg(sp)
    sp.add_argument("--provider", required=True, metavar="PATH", help="provider config (JSON)")
    sp.add_argument("--timeout", type=float, default=60.0, metavar="S",
                    help="provider timeout in seconds (default: 60)")
    sp.add_argument("--retries", type=int, default=0, metavar="N",
                    help="extra provider attempts after a failure (default: 0)")
    sp.add_argument("--out-dir", default=".", metavar="DIR", help="output directory (default: .)")
    fmt(sp)

    sp = add("convert", cmd_convert, "re-serialize an FSM file in canonical form")
    sp.add_argument("fsm", help="FSM description (text or JSON)")
    fmt(sp)
    out(sp)

    sp = add("sample", cmd_sample, "emit a random FSM with no findings")
    sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    sp.add_argument("--states", type=int, default=4, help="number of states (default: 4)")
    sp.add_argument("--inputs", type=int, default=2, help="number of inputs (default: 2)")
    sp.add_argument("--name", default="sample", help="machine name (default: sample)")
    fmt(sp)
    out(sp)

    sp = add("render-verilog", cmd_render, "render reference Verilog for an FSM")
    sp.add_argument("fsm", help="FSM description (text or JSON)")
    sp.add_argument("--no-default-arm", action="store_true",
                    help="omit the default arm of the next-state case")
    out(sp)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return int(args.func(args))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ExitStatus.USAGE
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return ExitStatus.PROVIDER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ExitStatus.USAGE


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
