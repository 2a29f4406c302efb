"""FSM domain model: states, signals, transitions and their invariants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from fsmguard.errors import FsmError
from fsmguard.expr import Expr, ExprError, expr_width, parse_sized_literal, references

MEALY = "mealy"
MOORE = "moore"

KEYWORDS = frozenset(
    {"fsm", "input", "output", "state", "reset", "trans", "when", "width",
     "encoding", "protected", "mealy", "moore"}
)


@dataclass(frozen=True, order=True)
class BitVector:
    value: int
    width: int

    def __post_init__(self):
        if self.width < 1 or not 0 <= self.value < (1 << self.width):
            raise FsmError("width-violation", f"{self.value} does not fit in {self.width} bits")

    def __str__(self) -> str:
        return f"{self.width}'b{self.value:0{self.width}b}"

    @classmethod
    def parse(cls, text: str) -> "BitVector":
        if "'" not in text:
            raise FsmError("syntax-error", f"encoding {text!r} must be a sized literal")
        try:
            lit = parse_sized_literal(text)
        except (ExprError, ValueError, KeyError) as exc:
            raise FsmError("width-violation", f"bad encoding {text!r}: {exc}") from None
        return cls(lit.value, lit.width)


def hamming_distance(a: BitVector, b: BitVector) -> int:
    """Number of bit positions in which two equal-width vectors differ."""
    if a.width != b.width:
        raise ValueError(f"width mismatch: {a.width} vs {b.width}")
    return bin(a.value ^ b.value).count("1")


@dataclass(frozen=True)
class SignalDecl:
    id: str
    width: int
    direction: str  # "input" | "output"


@dataclass(frozen=True)
class StateDecl:
    id: str
    encoding: Optional[BitVector] = None
    protected: bool = False
    # (output signal, expression) pairs in declaration order
    outputs: tuple[tuple[str, Expr], ...] = ()

    @property
    def output_map(self) -> dict[str, Expr]:
        return dict(self.outputs)


@dataclass(frozen=True)
class TransitionDecl:
    src: str
    dst: str
    guard: Expr


@dataclass(frozen=True)
class FsmSpec:
    name: str
    kind: str
    states: tuple[StateDecl, ...]
    inputs: tuple[SignalDecl, ...]
    outputs: tuple[SignalDecl, ...]
    reset_state: str
    transitions: tuple[TransitionDecl, ...]
    register_width: Optional[int] = None

    def state(self, state_id: str) -> StateDecl:
        for s in self.states:
            if s.id == state_id:
                return s
        raise KeyError(state_id)

    @property
    def state_ids(self) -> list[str]:
        return [s.id for s in self.states]

    @property
    def input_widths(self) -> dict[str, int]:
        return {s.id: s.width for s in self.inputs}

    @property
    def output_widths(self) -> dict[str, int]:
        return {s.id: s.width for s in self.outputs}

    @property
    def encoded(self) -> bool:
        return any(s.encoding is not None for s in self.states)


def min_register_width(n_states: int) -> int:
    return max(1, math.ceil(math.log2(n_states))) if n_states >= 2 else 1


Locator = Callable[[tuple], tuple[Optional[int], Optional[int]]]


def _no_position(_key: tuple) -> tuple[None, None]:
    return None, None


def validate_spec(spec: FsmSpec, where: Locator = _no_position) -> FsmSpec:
    """Check every FsmSpec invariant, raising :class:`FsmError` on the first violation.

    ``where`` maps an element key such as ``("state", "S0")`` or
    ``("trans", 3)`` to a source position for diagnostics.
    """

    def fail(code: str, message: str, key: tuple = ()):
        raise FsmError(code, message, *where(key))

    if spec.kind not in (MEALY, MOORE):
        fail("syntax-error", f"kind must be mealy or moore, got {spec.kind!r}", ("fsm",))

    seen: set[str] = set()
    for s in spec.states:
        if s.id in seen:
            fail("duplicate-id", f"state {s.id!r} declared twice", ("state", s.id))
        seen.add(s.id)
    for sig in spec.inputs + spec.outputs:
        if sig.id in seen:
            fail("duplicate-id", f"identifier {sig.id!r} declared twice", ("signal", sig.id))
        seen.add(sig.id)
        if sig.width < 1:
            fail("width-violation", f"signal {sig.id!r} width must be >= 1", ("signal", sig.id))

    if not spec.states:
        fail("missing-reset", "machine declares no states", ("fsm",))
    if not spec.reset_state:
        fail("missing-reset", "no reset state declared", ("fsm",))
    state_ids = {s.id for s in spec.states}
    if spec.reset_state not in state_ids:
        fail("unknown-state", f"reset state {spec.reset_state!r} is not declared", ("reset",))

    n = len(spec.states)
    if spec.register_width is not None:
        need = min_register_width(n)
        if spec.register_width < need:
            fail(
                "width-violation",
                f"register width {spec.register_width} cannot encode {n} states (needs {need})",
                ("width",),
            )

    encoded = [s for s in spec.states if s.encoding is not None]
    if encoded and len(encoded) != n:
        missing = next(s for s in spec.states if s.encoding is None)
        fail("encoding-mismatch", f"state {missing.id!r} has no encoding but others do",
             ("state", missing.id))
    for s in encoded:
        if spec.register_width is None or s.encoding.width != spec.register_width:
            fail("encoding-mismatch",
                 f"state {s.id!r} encoding width {s.encoding.width} differs from register width "
                 f"{spec.register_width}", ("state", s.id))

    in_widths = spec.input_widths
    out_widths = spec.output_widths
    for s in spec.states:
        seen_out: set[str] = set()
        for out, e in s.outputs:
            if out not in out_widths:
                fail("unknown-signal", f"state {s.id!r} assigns undeclared output {out!r}",
                     ("state", s.id))
            if out in seen_out:
                fail("duplicate-id", f"state {s.id!r} assigns {out!r} twice", ("state", s.id))
            seen_out.add(out)
            _check_expr(e, in_widths, fail, ("state", s.id))
            if spec.kind == MOORE and references(e):
                fail("moore-input-reference",
                     f"Moore output {out!r} in state {s.id!r} references inputs "
                     f"{sorted(references(e))}", ("state", s.id))

    for i, t in enumerate(spec.transitions):
        for end in (t.src, t.dst):
            if end not in state_ids:
                fail("unknown-state", f"transition references undeclared state {end!r}",
                     ("trans", i))
        w = _check_expr(t.guard, in_widths, fail, ("trans", i))
        if w != 1:
            fail("width-violation", f"guard of transition {t.src}->{t.dst} is {w} bits wide, "
                 "expected 1", ("trans", i))
    return spec


def _check_expr(e: Expr, widths: Mapping[str, int], fail, key) -> int:
    for name in sorted(references(e)):
        if name not in widths:
            fail("unknown-signal", f"{name!r} is not a declared input", key)
    try:
        return expr_width(e, widths)
    except ExprError as exc:
        fail(exc.code, str(exc), key)
