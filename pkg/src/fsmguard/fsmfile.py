"""Reading and writing FSM description files.

Two interchangeable spellings are supported. The canonical text format is
line oriented::

    # traffic light
    fsm traffic moore
    width 2
    input go 1
    output light 2
    state RED encoding 2'b00 protected { light = 2'd0; }
    state GREEN encoding 2'b01 { light = 1; }
    reset RED
    trans RED -> GREEN when go
    trans GREEN -> RED when !go

A ``state`` block may span several lines between its braces. Expressions
use C-style operators; mixing different binary operators at one nesting
level requires parentheses. The JSON mirror uses the same field names as
:class:`~fsmguard.model.FsmSpec` with expressions written as strings.
"""

from __future__ import annotations

import json
import re
from typing import Optional

from fsmguard.errors import FsmError
from fsmguard.expr import Expr, ExprParser, format_expr
from fsmguard.model import (
    KEYWORDS,
    MEALY,
    MOORE,
    BitVector,
    FsmSpec,
    SignalDecl,
    StateDecl,
    TransitionDecl,
    validate_spec,
)

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>\d+'[bBhHdDoO][0-9a-fA-F_]+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|==|!=|<=|>=|&&|\|\||[-+*&|^!~<>=])
  | (?P<punct>[(){};])
    """,
    re.VERBOSE,
)

Token = tuple[str, str, int, int]


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into ``(kind, text, line, col)`` tokens.

    Newlines inside ``{ ... }`` are dropped so state blocks may span lines.
    The list always ends with an ``eof`` token.
    """
    tokens: list[Token] = []
    line, line_start, depth, pos = 1, 0, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise FsmError("syntax-error", f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        pos = m.end()
        if kind == "newline":
            if depth == 0:
                tokens.append(("newline", "", line, col))
            line += 1
            line_start = pos
        elif kind == "punct":
            depth += {"{": 1, "}": -1}.get(value, 0)
            tokens.append((value, value, line, col))
        elif kind not in ("ws", "comment"):
            tokens.append((kind, value, line, col))
    tokens.append(("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.positions: dict[tuple, tuple[int, int]] = {}

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[Token] = None, code: str = "syntax-error"):
        tok = tok or self.peek()
        return FsmError(code, message, tok[2], tok[3])

    def expect(self, kind: str, what: str) -> Token:
        tok = self.peek()
        if tok[0] != kind:
            raise self.error(f"expected {what}, found {tok[1] or tok[0]!r}")
        return self.next()

    def keyword(self, word: str) -> Token:
        tok = self.peek()
        if tok[0] != "ident" or tok[1] != word:
            raise self.error(f"expected {word!r}, found {tok[1] or tok[0]!r}")
        return self.next()

    def ident(self, what: str) -> Token:
        tok = self.expect("ident", what)
        if tok[1] in KEYWORDS:
            raise self.error(f"{tok[1]!r} is a reserved word", tok)
        return tok

    def integer(self, what: str) -> int:
        tok = self.expect("number", what)
        if not tok[1].isdigit():
            raise self.error(f"{what} must be a plain integer", tok)
        return int(tok[1])

    def expr(self) -> Expr:
        p = ExprParser(self.tokens, self.pos)
        e = p.parse()
        self.pos = p.pos
        return e

    def end_of_statement(self):
        tok = self.peek()
        if tok[0] == "eof":
            return
        if tok[0] != "newline":
            raise self.error(f"unexpected {tok[1] or tok[0]!r} at end of statement")
        self.next()

    def skip_blank(self):
        while self.peek()[0] == "newline":
            self.next()

    def parse(self) -> FsmSpec:
        self.skip_blank()
        head = self.peek()
        if head[0] != "ident" or head[1] != "fsm":
            raise self.error("file must start with 'fsm <name> <mealy|moore>'")
        self.next()
        name = self.ident("machine name")[1]
        kind_tok = self.expect("ident", "mealy or moore")
        if kind_tok[1] not in (MEALY, MOORE):
            raise self.error("machine kind must be 'mealy' or 'moore'", kind_tok)
        self.positions[("fsm",)] = head[2:]
        self.end_of_statement()

        states: list[StateDecl] = []
        inputs: list[SignalDecl] = []
        outputs: list[SignalDecl] = []
        transitions: list[TransitionDecl] = []
        reset: Optional[str] = None
        width: Optional[int] = None

        while True:
            self.skip_blank()
            tok = self.peek()
            if tok[0] == "eof":
                break
            if tok[0] != "ident":
                raise self.error(f"expected a statement keyword, found {tok[1] or tok[0]!r}")
            word = tok[1]
            self.next()
            if word in ("input", "output"):
                sig_tok = self.ident("signal name")
                w = self.integer("signal width")
                key = ("signal", sig_tok[1])
                self.positions.setdefault(key, sig_tok[2:])
                (inputs if word == "input" else outputs).append(SignalDecl(sig_tok[1], w, word))
            elif word == "width":
                if width is not None:
                    raise self.error("register width declared twice", tok)
                width = self.integer("register width")
                self.positions[("width",)] = tok[2:]
            elif word == "reset":
                if reset is not None:
                    raise self.error("reset state declared twice", tok)
                reset = self.ident("reset state")[1]
                self.positions[("reset",)] = tok[2:]
            elif word == "state":
                states.append(self.state_decl())
            elif word == "trans":
                src = self.ident("source state")
                arrow = self.peek()
                if arrow[:2] != ("op", "->"):
                    raise self.error("expected '->'")
                self.next()
                dst = self.ident("target state")
                self.keyword("when")
                guard = self.expr()
                self.positions[("trans", len(transitions))] = tok[2:]
                transitions.append(TransitionDecl(src[1], dst[1], guard))
            else:
                raise self.error(f"unknown statement {word!r}", tok)
            self.end_of_statement()

        if reset is None:
            raise FsmError("missing-reset", "no 'reset <state>' declaration", *self.peek()[2:])
        if width is None:
            widths = {s.encoding.width for s in states if s.encoding is not None}
            if len(widths) == 1:
                width = widths.pop()
        spec = FsmSpec(
            name=name,
            kind=kind_tok[1],
            states=tuple(states),
            inputs=tuple(inputs),
            outputs=tuple(outputs),
            reset_state=reset,
            transitions=tuple(transitions),
            register_width=width,
        )
        return validate_spec(spec, lambda key: self.positions.get(key, (None, None)))

    def state_decl(self) -> StateDecl:
        name_tok = self.ident("state name")
        self.positions.setdefault(("state", name_tok[1]), name_tok[2:])
        encoding = None
        protected = False
        if self.peek()[:2] == ("ident", "encoding"):
            self.next()
            enc_tok = self.expect("number", "encoding literal")
            try:
                encoding = BitVector.parse(enc_tok[1])
            except FsmError as exc:
                raise FsmError(exc.code, exc.message, enc_tok[2], enc_tok[3]) from None
        if self.peek()[:2] == ("ident", "protected"):
            self.next()
            protected = True
        outs: list[tuple[str, Expr]] = []
        if self.peek()[0] == "{":
            self.next()
            while self.peek()[0] != "}":
                sig = self.expect("ident", "output name or '}'")
                if self.peek()[:2] != ("op", "="):
                    raise self.error("expected '='")
                self.next()
                outs.append((sig[1], self.expr()))
                self.expect(";", "';'")
            self.next()
        return StateDecl(name_tok[1], encoding, protected, tuple(outs))


def parse_fsm(text: str) -> FsmSpec:
    """Parse the canonical text format into a validated :class:`FsmSpec`."""
    return _Parser(text).parse()


def parse_expr(text: str) -> Expr:
    p = _Parser(text)
    e = p.expr()
    if p.peek()[0] not in ("eof", "newline"):
        raise p.error(f"trailing input {p.peek()[1]!r} after expression")
    return e


def serialize_fsm(spec: FsmSpec) -> str:
    """Canonical text form. Byte-identical for equal specs."""
    lines = [f"fsm {spec.name} {spec.kind}"]
    if spec.register_width is not None:
        lines.append(f"width {spec.register_width}")
    lines += [f"input {s.id} {s.width}" for s in spec.inputs]
    lines += [f"output {s.id} {s.width}" for s in spec.outputs]
    for s in spec.states:
        parts = ["state", s.id]
        if s.encoding is not None:
            parts += ["encoding", str(s.encoding)]
        if s.protected:
            parts.append("protected")
        if s.outputs:
            body = " ".join(f"{o} = {format_expr(e)};" for o, e in s.outputs)
            parts.append("{ " + body + " }")
        lines.append(" ".join(parts))
    lines.append(f"reset {spec.reset_state}")
    lines += [f"trans {t.src} -> {t.dst} when {format_expr(t.guard)}" for t in spec.transitions]
    return "\n".join(lines) + "\n"


# JSON mirror ---------------------------------------------------------------


def spec_to_dict(spec: FsmSpec) -> dict:
    return {
        "name": spec.name,
        "kind": spec.kind,
        "register_width": spec.register_width,
        "inputs": [{"id": s.id, "width": s.width} for s in spec.inputs],
        "outputs": [{"id": s.id, "width": s.width} for s in spec.outputs],
        "states": [
            {
                "id": s.id,
                "encoding": None if s.encoding is None else str(s.encoding),
                "protected": s.protected,
                "outputs": {o: format_expr(e) for o, e in s.outputs},
            }
            for s in spec.states
        ],
        "reset_state": spec.reset_state,
        "transitions": [
            {"from": t.src, "to": t.dst, "guard": format_expr(t.guard)} for t in spec.transitions
        ],
    }


def spec_to_json(spec: FsmSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def spec_from_dict(data: dict) -> FsmSpec:
    try:
        states = []
        for s in data["states"]:
            enc = s.get("encoding")
            states.append(
                StateDecl(
                    id=_check_ident(s["id"]),
                    encoding=None if enc is None else BitVector.parse(enc),
                    protected=bool(s.get("protected", False)),
                    outputs=tuple((o, parse_expr(e)) for o, e in s.get("outputs", {}).items()),
                )
            )
        width = data.get("register_width")
        if width is None:
            widths = {s.encoding.width for s in states if s.encoding is not None}
            width = widths.pop() if len(widths) == 1 else None
        spec = FsmSpec(
            name=_check_ident(data["name"]),
            kind=data["kind"],
            states=tuple(states),
            inputs=tuple(SignalDecl(_check_ident(s["id"]), int(s["width"]), "input")
                         for s in data.get("inputs", [])),
            outputs=tuple(SignalDecl(_check_ident(s["id"]), int(s["width"]), "output")
                          for s in data.get("outputs", [])),
            reset_state=data.get("reset_state") or "",
            transitions=tuple(
                TransitionDecl(t["from"], t["to"], parse_expr(t["guard"]))
                for t in data.get("transitions", [])
            ),
            register_width=width,
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise FsmError("syntax-error", f"malformed FSM document: {exc!r}") from None
    return validate_spec(spec)


def spec_from_json(text: str) -> FsmSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FsmError("syntax-error", exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(data, dict):
        raise FsmError("syntax-error", "FSM document must be a JSON object")
    return spec_from_dict(data)


def _check_ident(name) -> str:
    if not isinstance(name, str) or not IDENT_RE.match(name) or name in KEYWORDS:
        raise FsmError("syntax-error", f"invalid identifier {name!r}")
    return name


def load_fsm(text: str) -> FsmSpec:
    """Parse either spelling, picking JSON when the text starts with ``{``."""
    if text.lstrip().startswith("{"):
        return spec_from_json(text)
    return parse_fsm(text)


def dump_fsm(spec: FsmSpec, fmt: str = "text") -> str:
    return spec_to_json(spec) if fmt == "structured" else serialize_fsm(spec)
