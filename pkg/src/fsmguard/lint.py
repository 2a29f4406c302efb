"""Security lint for generated Verilog, plus a reference renderer.

The recognizer handles a small Verilog-2001 subset line by line: the module
header, ``parameter``/``localparam`` declarations with sized literals, ``reg``
declarations, ``case``/``casex``/``casez`` blocks with their arm labels and
the ``if (!rst...)`` reset idiom. Every other non-blank line is skipped and
counted. Comments are stripped first.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Union

from fsmguard.analysis import STRUCTURAL, Finding, pair_location, sort_findings
from fsmguard.expr import format_expr
from fsmguard.model import FsmSpec, min_register_width

log = logging.getLogger(__name__)

LINT_VULNS = {
    "LINT_MISSING_DEFAULT": "CWE-1245",
    "LINT_MISSING_RESET": "MISSING_RESET_BRANCH",
    "LINT_DUPLICATE_ENCODING": "DUPLICATE_ENCODING",
    "LINT_WEAK_HAMMING": "WEAK_HAMMING",
    "LINT_WIDTH": "ENCODING_WIDTH",
}


class LintParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class StateParam:
    name: str
    width: int
    value: int
    line: int = 0


@dataclass(frozen=True)
class CaseBlock:
    selector: str
    labels: tuple[str, ...]
    has_default: bool
    line: int = 0


@dataclass(frozen=True)
class RegDecl:
    name: str
    width: int


@dataclass
class LintModel:
    module_name: Optional[str] = None
    state_params: list[StateParam] = field(default_factory=list)
    case_blocks: list[CaseBlock] = field(default_factory=list)
    has_reset_branch: bool = False
    declared_regs: list[RegDecl] = field(default_factory=list)
    skip_count: int = 0


# recognizer ---------------------------------------------------------------

_BLOCK_COMMENT = re.compile(r"/\*.*?\*/", re.S)
_LINE_COMMENT = re.compile(r"//.*")
_IDENT = r"[A-Za-z_][A-Za-z0-9_$]*"
_RANGE = r"\[\s*(\d+)\s*:\s*(\d+)\s*\]"
_SIZED = re.compile(r"(\d+)\s*'\s*([bBhHdDoO])\s*([0-9a-fA-F_]+)\Z")
_MODULE = re.compile(rf"^\s*module\s+({_IDENT})")
_PARAM_KW = re.compile(r"\b(?:parameter|localparam)\b")
_PARAM_HEAD = re.compile(rf"^\s*(?:parameter|localparam)\s*(?:(?:integer|signed)\s*)?(?:{_RANGE})?(.*)$", re.S)
_REG = re.compile(rf"\breg\b\s*(?:signed\s*)?(?:{_RANGE})?\s*([^;=]*)")
_CASE = re.compile(rf"\bcase[xz]?\s*\(\s*([^)]*?)\s*\)")
_ARM = re.compile(rf"^\s*((?:{_IDENT}|\d+\s*'\s*[bBhHdDoO]\s*[0-9a-fA-F_xXzZ?]+)"
                  rf"(?:\s*,\s*(?:{_IDENT}|\d+\s*'\s*[bBhHdDoO]\s*[0-9a-fA-F_xXzZ?]+))*)\s*:(?!:)")
_DEFAULT = re.compile(r"^\s*default\s*:?")
_RESET_IF = re.compile(r"\bif\s*\(\s*[!~]?\s*\(?\s*(?:rst|reset)\w*", re.I)
_WORDS = re.compile(r"\b(begin|end|endcase|endmodule|case[xz]?|always|assign|input|output|wire|"
                    r"else|if|initial)\b")
_BASES = {"b": 2, "h": 16, "d": 10, "o": 8}


def _sized_literal(text: str) -> Optional[tuple[int, int]]:
    m = _SIZED.match(text.strip())
    if not m:
        return None
    try:
        value = int(m.group(3).replace("_", ""), _BASES[m.group(2).lower()])
    except ValueError:
        return None
    width = int(m.group(1))
    return (value, width) if width > 0 else None


def _split_top(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _params(stmt: str, line: int) -> list[StateParam]:
    m = _PARAM_HEAD.match(stmt)
    if not m:
        return []
    declared = int(m.group(1)) - int(m.group(2)) + 1 if m.group(1) else None
    out = []
    for part in _split_top(m.group(3).rstrip().rstrip(";")):
        name, eq, rhs = part.partition("=")
        name = name.strip()
        if not eq or not re.fullmatch(_IDENT, name):
            continue
        lit = _sized_literal(rhs)
        if lit is None:
            continue
        value, lit_width = lit
        width = declared if declared and declared > 0 else lit_width
        out.append(StateParam(name, width, value, line))
    return out


@dataclass
class _Case:
    selector: str
    line: int
    depth: int
    labels: list[str] = field(default_factory=list)
    has_default: bool = False


def extract_lint_model(text: Union[str, bytes]) -> LintModel:
    """Recognize the supported subset of ``text``.

    Raises :class:`LintParseError` for unbalanced ``begin``/``end``,
    ``case``/``endcase`` or ``module``/``endmodule``; any other input yields
    a model.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    # keep line numbers stable while dropping block comments
    text = _BLOCK_COMMENT.sub(lambda m: "\n" * m.group(0).count("\n"), text)
    model = LintModel()
    modules: list[int] = []
    cases: list[_Case] = []
    begins: list[int] = []
    pending: Optional[tuple[str, int]] = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _LINE_COMMENT.sub("", raw).strip()
        if not line:
            continue
        recognized = False

        if pending is not None:
            stmt, start = pending
            stmt += " " + line
            if ";" in line:
                model.state_params += _params(stmt[: stmt.index(";") + 1], start)
                pending = None
            else:
                pending = (stmt, start)
            continue

        m = _MODULE.match(line)
        if m:
            if model.module_name is None:
                model.module_name = m.group(1)
            modules.append(lineno)
            recognized = True

        if _PARAM_KW.search(line) and not m:
            stmt = line[_PARAM_KW.search(line).start():]
            if ";" in stmt:
                model.state_params += _params(stmt[: stmt.index(";") + 1], lineno)
            else:
                pending = (stmt, lineno)
            continue

        rm = _REG.search(line)
        if rm:
            width = int(rm.group(1)) - int(rm.group(2)) + 1 if rm.group(1) else 1
            for name in _split_top(rm.group(3)):
                name = name.strip()
                if re.fullmatch(_IDENT, name) and width > 0:
                    model.declared_regs.append(RegDecl(name, width))
            recognized = True

        if _RESET_IF.search(line):
            model.has_reset_branch = True
            recognized = True

        # arm labels sit directly inside the innermost case block
        if cases and len(begins) == cases[-1].depth:
            if _DEFAULT.match(line):
                cases[-1].has_default = True
                recognized = True
            else:
                am = _ARM.match(line)
                if am and not _CASE.search(am.group(1)):
                    cases[-1].labels += [x.strip() for x in am.group(1).split(",")]
                    recognized = True

        for w in _WORDS.finditer(line):
            word = w.group(1)
            recognized = True
            if word == "begin":
                begins.append(lineno)
            elif word == "end":
                if not begins or (cases and len(begins) == cases[-1].depth):
                    raise LintParseError(lineno, "end without begin")
                begins.pop()
            elif word.startswith("case"):
                cm = _CASE.match(line, w.start())
                if cm:
                    cases.append(_Case(cm.group(1).strip(), lineno, len(begins)))
            elif word == "endcase":
                if not cases:
                    raise LintParseError(lineno, "endcase without case")
                if len(begins) != cases[-1].depth:
                    raise LintParseError(begins[-1], "begin not closed before endcase")
                c = cases.pop()
                model.case_blocks.append(
                    CaseBlock(c.selector, tuple(c.labels), c.has_default, c.line))
            elif word == "endmodule":
                if not modules:
                    raise LintParseError(lineno, "endmodule without module")
                if cases:
                    raise LintParseError(cases[-1].line, "case not closed before endmodule")
                if begins:
                    raise LintParseError(begins[-1], "begin not closed before endmodule")
                modules.pop()

        if not recognized:
            model.skip_count += 1

    if cases:
        raise LintParseError(cases[-1].line, "case without endcase")
    if begins:
        raise LintParseError(begins[-1], "begin without end")
    if modules:
        raise LintParseError(modules[-1], "module without endmodule")
    if pending is not None:
        model.skip_count += 1
    model.case_blocks.sort(key=lambda c: c.line)
    return model


# checks -------------------------------------------------------------------


def _finding(det: str, location: str, evidence: str) -> Finding:
    return Finding(det, LINT_VULNS[det], STRUCTURAL, location, evidence)


def _state_selector(block: CaseBlock, model: LintModel) -> bool:
    names = {p.name for p in model.state_params}
    return "state" in block.selector.lower() or any(l in names for l in block.labels)


def lint(model: LintModel, spec: Optional[FsmSpec] = None) -> list[Finding]:
    """Coding-stage checklist over an extracted model, sorted."""
    out: list[Finding] = []
    for i, block in enumerate(model.case_blocks):
        if _state_selector(block, model) and not block.has_default:
            out.append(_finding("LINT_MISSING_DEFAULT", f"case#{i}({block.selector})",
                                f"case on {block.selector} (line {block.line}) has no default arm"))
    if model.module_name is not None and not model.has_reset_branch:
        out.append(_finding("LINT_MISSING_RESET", model.module_name,
                            "no if (!rst...) / if (rst...) reset branch found"))
    for p in model.state_params:
        if p.value >= 1 << p.width:
            out.append(_finding("LINT_WIDTH", p.name,
                                f"value {p.value} does not fit in {p.width} bits"))
    for a, b in combinations(model.state_params, 2):
        if a.width == b.width and a.value == b.value and a.name != b.name:
            out.append(_finding("LINT_DUPLICATE_ENCODING", pair_location(a.name, b.name),
                                f"{a.name} and {b.name} share value {a.value}"))
    if spec is not None:
        out += _weak_hamming(model, spec)
    return sort_findings(out)


def _weak_hamming(model: LintModel, spec: FsmSpec) -> list[Finding]:
    protected = [s.id for s in spec.states if s.protected]
    if not protected:
        return []
    by_name = {p.name.lower(): p for p in model.state_params}
    missing = [s for s in protected if s.lower() not in by_name]
    if missing:
        log.warning("protected states %s have no matching parameter; "
                    "Hamming check disabled", ", ".join(missing))
        return []
    mapped = [by_name[s.id.lower()] for s in spec.states if s.id.lower() in by_name]
    prot = {by_name[s.lower()].name for s in protected}
    out = []
    for a, b in combinations(mapped, 2):
        if a.width != b.width or not ({a.name, b.name} & prot):
            continue
        d = bin(a.value ^ b.value).count("1")
        if d < 2:
            out.append(_finding("LINT_WEAK_HAMMING", pair_location(a.name, b.name),
                                f"{a.name} and {b.name} differ in {d} bit(s)"))
    return out


# reference renderer -------------------------------------------------------


def _range(width: int) -> str:
    return f"[{width - 1}:0] " if width > 1 else ""


def render_codes(spec: FsmSpec) -> tuple[int, dict[str, str]]:
    """Register width and literal per state used by :func:`render_verilog`.

    Declared encodings are kept. Otherwise states get sequential binary
    codes, or one-hot codes when any state is protected so that every
    pair stays at least two bit flips apart.
    """
    if spec.encoded:
        return spec.register_width, {s.id: str(s.encoding) for s in spec.states}
    n = len(spec.states)
    if any(s.protected for s in spec.states):
        return n, {s.id: f"{n}'b{1 << i:0{n}b}" for i, s in enumerate(spec.states)}
    w = spec.register_width or min_register_width(n)
    return w, {s.id: f"{w}'b{i:0{w}b}" for i, s in enumerate(spec.states)}


def render_verilog(spec: FsmSpec, default_arm: bool = True) -> str:
    """Two-process Verilog for ``spec`` in the subset the linter reads."""
    width, codes = render_codes(spec)
    ports = ["  input wire clk", "  input wire rst_n"]
    ports += [f"  input wire {_range(s.width)}{s.id}" for s in spec.inputs]
    ports += [f"  output reg {_range(s.width)}{s.id}" for s in spec.outputs]
    lines = [f"module {spec.name} (", ",\n".join(ports), ");"]
    for i, s in enumerate(spec.states):
        lead = f"  localparam {_range(width)}" if i == 0 else "             " + " " * len(_range(width))
        end = ";" if i == len(spec.states) - 1 else ","
        lines.append(f"{lead}{s.id} = {codes[s.id]}{end}")
    lines.append(f"  reg {_range(width)}state, next_state;")
    lines += ["", "  always @(*) begin", "    next_state = state;", "    case (state)"]
    for s in spec.states:
        outgoing = [t for t in spec.transitions if t.src == s.id]
        if not outgoing:
            continue
        lines.append(f"      {s.id}: begin")
        for k, t in enumerate(outgoing):
            kw = "if" if k == 0 else "else if"
            lines.append(f"        {kw} ({format_expr(t.guard)}) next_state = {t.dst};")
        lines.append("      end")
    if default_arm:
        lines.append(f"      default: next_state = {spec.reset_state};")
    lines += ["    endcase", "  end", "",
              "  always @(posedge clk or negedge rst_n) begin",
              f"    if (!rst_n) state <= {spec.reset_state};",
              "    else state <= next_state;",
              "  end"]
    if spec.outputs:
        lines += ["", "  always @(*) begin"]
        lines += [f"    {o.id} = 0;" for o in spec.outputs]
        lines.append("    case (state)")
        for s in spec.states:
            if s.outputs:
                lines.append(f"      {s.id}: begin")
                lines += [f"        {o} = {format_expr(e)};" for o, e in s.outputs]
                lines.append("      end")
        lines += ["      default: ;", "    endcase", "  end"]
    lines.append("endmodule")
    return "\n".join(lines) + "\n"
