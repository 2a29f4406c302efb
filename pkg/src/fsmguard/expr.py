"""Expression trees for guards and state outputs.

Expressions are small immutable trees. Every node has a bit width derived
from the signal widths it references:

* ``add``/``sub`` grow by one bit over the wider operand,
* ``mul`` takes the sum of both operand widths,
* bitwise ``and``/``or``/``xor`` and ``bitnot``/``negate`` keep the wider width,
* comparisons and logical operators are one bit wide.

Node values are unsigned and wrap at the node's own width, so ``add`` and
``mul`` never lose bits while ``sub`` wraps like an unsigned Verilog
subtraction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Union

from fsmguard.errors import FsmError

UNARY_OPS = ("not", "bitnot", "negate")
ARITH_OPS = ("add", "sub", "mul")
BITWISE_OPS = ("and", "or", "xor")
LOGICAL_OPS = ("land", "lor")
COMPARE_OPS = ("eq", "neq", "lt", "gt", "le", "ge")
BINARY_OPS = ARITH_OPS + BITWISE_OPS + LOGICAL_OPS + COMPARE_OPS

UNARY_SYMBOLS = {"not": "!", "bitnot": "~", "negate": "-"}
BINARY_SYMBOLS = {
    "add": "+",
    "sub": "-",
    "mul": "*",
    "and": "&",
    "or": "|",
    "xor": "^",
    "land": "&&",
    "lor": "||",
    "eq": "==",
    "neq": "!=",
    "lt": "<",
    "gt": ">",
    "le": "<=",
    "ge": ">=",
}
SYMBOL_TO_UNARY = {v: k for k, v in UNARY_SYMBOLS.items()}
SYMBOL_TO_BINARY = {v: k for k, v in BINARY_SYMBOLS.items()}


class ExprError(ValueError):
    """Raised for malformed expressions or references to unknown signals."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class Lit:
    value: int
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ExprError("width-violation", f"literal width must be >= 1, got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise ExprError(
                "width-violation",
                f"literal value {self.value} does not fit in {self.width} bits",
            )


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ExprError("syntax-error", f"unknown unary operator {self.op!r}")


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ExprError("syntax-error", f"unknown binary operator {self.op!r}")


Expr = Union[Lit, Ref, Unary, Binary]


def literal(value: int) -> Lit:
    """Unsized literal: the narrowest width that holds ``value``."""
    return Lit(value, max(1, value.bit_length()))


def expr_width(e: Expr, widths: Mapping[str, int]) -> int:
    """Bit width of ``e`` given a mapping of signal name to width."""
    if isinstance(e, Lit):
        return e.width
    if isinstance(e, Ref):
        try:
            return widths[e.name]
        except KeyError:
            raise ExprError("unknown-signal", f"unknown signal {e.name!r}") from None
    if isinstance(e, Unary):
        w = expr_width(e.operand, widths)
        return 1 if e.op == "not" else w
    lw = expr_width(e.lhs, widths)
    rw = expr_width(e.rhs, widths)
    if e.op in ("add", "sub"):
        return max(lw, rw) + 1
    if e.op == "mul":
        return lw + rw
    if e.op in BITWISE_OPS:
        return max(lw, rw)
    return 1


def walk(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal of every node in ``e``."""
    yield e
    if isinstance(e, Unary):
        yield from walk(e.operand)
    elif isinstance(e, Binary):
        yield from walk(e.lhs)
        yield from walk(e.rhs)


def references(e: Expr) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Ref)}


def arithmetic_nodes(e: Expr) -> list[Binary]:
    return [n for n in walk(e) if isinstance(n, Binary) and n.op in ARITH_OPS]


def is_true_literal(e: Expr) -> bool:
    return isinstance(e, Lit) and e.value != 0


def value_bounds(e: Expr, widths: Mapping[str, int]) -> tuple[int, int]:
    """Sound (lower, upper) bounds on the value of ``e`` over all inputs.

    Signals are treated as independent, so the bounds are exact for
    expressions in which every signal occurs once and only ``add``/``mul``
    are used, and over-approximate otherwise.
    """
    if isinstance(e, Lit):
        return e.value, e.value
    if isinstance(e, Ref):
        return 0, (1 << expr_width(e, widths)) - 1
    if isinstance(e, Unary):
        w = expr_width(e.operand, widths)
        lo, hi = value_bounds(e.operand, widths)
        if e.op == "not":
            return (0 if hi else 1), (0 if lo else 1)
        if e.op == "bitnot":
            return (1 << w) - 1 - hi, (1 << w) - 1 - lo
        if lo == hi == 0:
            return 0, 0
        return 0, (1 << w) - 1
    llo, lhi = value_bounds(e.lhs, widths)
    rlo, rhi = value_bounds(e.rhs, widths)
    w = expr_width(e, widths)
    if e.op == "add":
        return llo + rlo, lhi + rhi
    if e.op == "mul":
        return llo * rlo, lhi * rhi
    if e.op == "sub":
        if llo >= rhi:
            return llo - rhi, lhi - rlo
        return 0, (1 << w) - 1
    if e.op == "and":
        return 0, min(lhi, rhi)
    if e.op in ("or", "xor"):
        hi = (1 << max(lhi, rhi).bit_length()) - 1
        return (max(llo, rlo) if e.op == "or" else 0), hi
    return 0, 1


def evaluate(e: Expr, env: Mapping[str, int], widths: Mapping[str, int]) -> int:
    """Value of ``e`` for one assignment of its signals."""
    return _Evaluator(widths).run(e, env)


class _Evaluator:
    def __init__(self, widths: Mapping[str, int]):
        self.widths = widths
        self.masks: dict[Expr, int] = {}
        self.peak = 0

    def mask(self, e: Expr) -> int:
        m = self.masks.get(e)
        if m is None:
            m = self.masks[e] = (1 << expr_width(e, self.widths)) - 1
        return m

    def run(self, e: Expr, env: Mapping[str, int]) -> int:
        if isinstance(e, Lit):
            return e.value
        if isinstance(e, Ref):
            return env[e.name]
        if isinstance(e, Unary):
            x = self.run(e.operand, env)
            if e.op == "not":
                return int(x == 0)
            return (~x if e.op == "bitnot" else -x) & self.mask(e)
        a, b = self.run(e.lhs, env), self.run(e.rhs, env)
        op = e.op
        if op in ARITH_OPS:
            v = a + b if op == "add" else a * b if op == "mul" else (a - b) & self.mask(e)
            if v > self.peak:
                self.peak = v
            return v
        if op == "and":
            return a & b
        if op == "or":
            return a | b
        if op == "xor":
            return a ^ b
        if op == "land":
            return int(bool(a) and bool(b))
        if op == "lor":
            return int(bool(a) or bool(b))
        return int({"eq": a == b, "neq": a != b, "lt": a < b, "gt": a > b,
                    "le": a <= b, "ge": a >= b}[op])


def arithmetic_peak(e: Expr, widths: Mapping[str, int], max_bits: int = 12) -> tuple[int, bool]:
    """Largest value any ``add``/``sub``/``mul`` node of ``e`` can take.

    When the referenced signals hold at most ``max_bits`` bits together the
    input space is enumerated and the result is exact (second item True).
    Otherwise it falls back to :func:`value_bounds`, which is an upper bound.
    """
    nodes = arithmetic_nodes(e)
    if not nodes:
        return 0, True
    names = sorted(references(e))
    if sum(widths[n] for n in names) > max_bits:
        return max(value_bounds(n, widths)[1] for n in nodes), False
    ev = _Evaluator(widths)
    for values in itertools.product(*(range(1 << widths[n]) for n in names)):
        ev.run(e, dict(zip(names, values)))
    return ev.peak, True


def format_literal(lit: Lit) -> str:
    if lit.width == max(1, lit.value.bit_length()):
        return str(lit.value)
    return f"{lit.width}'d{lit.value}"


def format_expr(e: Expr) -> str:
    """Render ``e`` in the canonical C-style spelling.

    Binary operands that are themselves binary are always parenthesised,
    so the output reparses to the same tree.
    """
    if isinstance(e, Lit):
        return format_literal(e)
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Unary):
        inner = format_expr(e.operand)
        if isinstance(e.operand, Binary):
            inner = f"({inner})"
        return UNARY_SYMBOLS[e.op] + inner

    def side(x: Expr) -> str:
        s = format_expr(x)
        return f"({s})" if isinstance(x, Binary) else s

    return f"{side(e.lhs)} {BINARY_SYMBOLS[e.op]} {side(e.rhs)}"


# Parsing ------------------------------------------------------------------

_COMPARE_SYMBOLS = {BINARY_SYMBOLS[o] for o in COMPARE_OPS}


def parse_sized_literal(text: str) -> Lit:
    """Parse ``8'hA5``, ``2'b01``, ``3'd5`` or a plain decimal number."""
    if "'" not in text:
        return literal(int(text))
    size, rest = text.split("'", 1)
    base = {"b": 2, "h": 16, "d": 10, "o": 8}[rest[0].lower()]
    digits = rest[1:].replace("_", "")
    return Lit(int(digits, base), int(size))


class ExprParser:
    """Recursive-descent parser over a token cursor.

    ``tokens`` is a list of ``(kind, text, line, col)`` tuples as produced
    by :func:`fsmguard.fsmfile.tokenize`; parsing starts at ``pos`` and
    stops at the first token that cannot continue an expression.
    Mixed binary operators at one nesting level are rejected: ``a + b * c``
    must be written ``a + (b * c)``.
    """

    def __init__(self, tokens, pos: int = 0):
        self.tokens = tokens
        self.pos = pos

    def peek(self):
        return self.tokens[self.pos]

    def error(self, message: str, tok=None):
        tok = tok or self.peek()
        return FsmError("syntax-error", message, tok[2], tok[3])

    def parse(self) -> Expr:
        first = self.operand()
        kind, text = self.peek()[:2]
        if kind != "op" or text not in SYMBOL_TO_BINARY:
            return first
        op_text = text
        result = first
        while True:
            kind, text = self.peek()[:2]
            if kind != "op" or text not in SYMBOL_TO_BINARY:
                return result
            if text != op_text:
                raise self.error(
                    f"mixed operators {op_text!r} and {text!r} need parentheses"
                )
            if text in _COMPARE_SYMBOLS and result is not first:
                raise self.error(f"comparison {text!r} cannot be chained")
            self.pos += 1
            result = Binary(SYMBOL_TO_BINARY[text], result, self.operand())

    def operand(self) -> Expr:
        tok = self.peek()
        kind, text = tok[:2]
        if kind == "op" and text in SYMBOL_TO_UNARY:
            self.pos += 1
            return Unary(SYMBOL_TO_UNARY[text], self.operand())
        if kind == "(":
            self.pos += 1
            inner = self.parse()
            if self.peek()[0] != ")":
                raise self.error("expected ')'")
            self.pos += 1
            return inner
        if kind == "number":
            self.pos += 1
            try:
                return parse_sized_literal(text)
            except ExprError as exc:
                raise FsmError(exc.code, str(exc), tok[2], tok[3]) from None
            except (ValueError, KeyError):
                raise self.error(f"malformed literal {text!r}", tok) from None
        if kind == "ident":
            self.pos += 1
            return Ref(text)
        raise self.error(f"expected expression, found {text or kind!r}")
