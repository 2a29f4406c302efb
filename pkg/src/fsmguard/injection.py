"""Vulnerability injection for benchmark construction.

Each variant applies a small documented edit to a valid spec and returns
the finding the detectors must report for it.

=====================  ==========  =====================================================
variant                class       edit
=====================  ==========  =====================================================
dead-state             Structural  add one state with a single outgoing edge, no incoming
unreachable-state      Structural  add one state with a self-loop and one outgoing edge
remove-reset-incoming  Structural  delete every edge into reset; widen register by one bit
                                   if it has no don't-care values
protected-exposure     Structural  mark a state protected; add one edge into it guarded by 1
weak-hamming           Coding      one-hot encode; mark a state protected and move its code
                                   to distance 1 of a neighbour
duplicate-encoding     Coding      one-hot encode if unencoded; copy one state's code to another
missing-default        Coding      widen (or declare) the register so don't-care values exist
overflow-output        Potential   shrink one output below its arithmetic width, or add a
                                   fresh output assigned an overflowing sum in one state
=====================  ==========  =====================================================

Encodings added by a variant widen existing codes with leading zeros.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, replace
from typing import Optional

from fsmguard.analysis import MACHINE, pair_location, pre_analyze
from fsmguard.expr import (
    Binary,
    Expr,
    Lit,
    Ref,
    Unary,
    arithmetic_nodes,
    arithmetic_peak,
    expr_width,
    references,
)
from fsmguard.graph import build_graph
from fsmguard.model import (
    MEALY,
    MOORE,
    BitVector,
    FsmSpec,
    SignalDecl,
    StateDecl,
    TransitionDecl,
    validate_spec,
)

CODING = "Coding"
STRUCTURAL = "Structural"
POTENTIAL = "Potential"
CLASS_MARKS = {CODING: "*", STRUCTURAL: "†", POTENTIAL: "△"}

VARIANTS: dict[str, tuple[str, str]] = {
    # variant: (class, detector that must flag it)
    "dead-state": (STRUCTURAL, "DEAD_STATE_NO_INCOMING"),
    "unreachable-state": (STRUCTURAL, "UNREACHABLE_FROM_RESET"),
    "remove-reset-incoming": (STRUCTURAL, "MISSING_RESET_COVERAGE"),
    "protected-exposure": (STRUCTURAL, "PROTECTED_EXPOSURE"),
    "weak-hamming": (CODING, "WEAK_HAMMING"),
    "duplicate-encoding": (CODING, "DUPLICATE_ENCODING"),
    "missing-default": (CODING, "DONT_CARE_STATES"),
    "overflow-output": (POTENTIAL, "OVERFLOW_OUTPUT"),
}


class InjectionError(ValueError):
    """The recipe cannot be applied to this spec."""


@dataclass(frozen=True)
class InjectionRecipe:
    cls: str
    variant: str
    seed: int = 0
    target: Optional[str] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InjectionError(f"unknown variant {self.variant!r}")
        if VARIANTS[self.variant][0] != self.cls:
            raise InjectionError(
                f"variant {self.variant!r} belongs to class {VARIANTS[self.variant][0]}, "
                f"not {self.cls}")

    @classmethod
    def for_variant(cls, variant: str, seed: int = 0, target: Optional[str] = None):
        if variant not in VARIANTS:
            raise InjectionError(f"unknown variant {variant!r}")
        return cls(VARIANTS[variant][0], variant, seed, target)


@dataclass(frozen=True)
class GroundTruth:
    detector_id: str
    location: str
    recipe: InjectionRecipe

    def to_dict(self) -> dict:
        return {"detector_id": self.detector_id, "location": self.location,
                "recipe": asdict(self.recipe)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# helpers ------------------------------------------------------------------


def _fresh(spec: FsmSpec, base: str) -> str:
    taken = {s.id for s in spec.states} | {s.id for s in spec.inputs + spec.outputs}
    if base not in taken:
        return base
    i = 1
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


def _pick(rng: random.Random, options: list[str], target: Optional[str], what: str) -> str:
    if target is not None:
        if target not in options:
            raise InjectionError(f"target {target!r} is not a valid {what}")
        return target
    if not options:
        raise InjectionError(f"no candidate {what}")
    return rng.choice(options)


def _widen(spec: FsmSpec, width: int) -> FsmSpec:
    """Set the register width, zero-extending existing encodings."""
    states = tuple(
        replace(s, encoding=BitVector(s.encoding.value, width)) if s.encoding else s
        for s in spec.states
    )
    return replace(spec, states=states, register_width=width)


def _one_hot(spec: FsmSpec) -> FsmSpec:
    n = len(spec.states)
    states = tuple(replace(s, encoding=BitVector(1 << i, n)) for i, s in enumerate(spec.states))
    return replace(spec, states=states, register_width=n)


def _add_state(spec: FsmSpec, state: StateDecl, edges: list[TransitionDecl]) -> FsmSpec:
    n = len(spec.states) + 1
    if spec.encoded:
        used = {s.encoding.value for s in spec.states}
        width = spec.register_width
        free = next((v for v in range(1 << width) if v not in used), None)
        if free is None:
            spec = _widen(spec, width + 1)
            free = 1 << width
            width += 1
        state = replace(state, encoding=BitVector(free, width))
    elif spec.register_width is not None and (1 << spec.register_width) < n:
        spec = replace(spec, register_width=spec.register_width + 1)
    return replace(spec, states=spec.states + (state,),
                   transitions=spec.transitions + tuple(edges))


def _make_incomplete(spec: FsmSpec) -> FsmSpec:
    n = len(spec.states)
    if spec.register_width is None:
        return replace(spec, register_width=n.bit_length())
    if (1 << spec.register_width) > n:
        return spec
    return _widen(spec, spec.register_width + 1)


TRUE = Lit(1, 1)


# variants -----------------------------------------------------------------


def _dead_state(spec, rng, target):
    dst = _pick(rng, spec.state_ids, target, "state") if target else spec.reset_state
    name = _fresh(spec, "DEAD")
    return _add_state(spec, StateDecl(name), [TransitionDecl(name, dst, TRUE)]), name


def _unreachable_state(spec, rng, target):
    dst = _pick(rng, spec.state_ids, target, "state") if target else spec.reset_state
    name = _fresh(spec, "ORPHAN")
    edges = [TransitionDecl(name, name, TRUE), TransitionDecl(name, dst, TRUE)]
    return _add_state(spec, StateDecl(name), edges), name


def _remove_reset_incoming(spec, rng, target):
    reset = spec.reset_state
    spec = _make_incomplete(spec)
    kept = tuple(t for t in spec.transitions if t.dst != reset)
    return replace(spec, transitions=kept), reset


def _protected_exposure(spec, rng, target):
    if len(spec.states) < 2:
        raise InjectionError("protected-exposure needs at least two states")
    prot = {s.id for s in spec.states if s.protected}

    def clean_entries(p: str) -> bool:
        return all(
            t.src in prot or t.src == p or references(t.guard)
            for t in spec.transitions if t.dst == p
        )

    candidates = [s.id for s in spec.states if clean_entries(s.id)
                  and any(u not in prot and u != s.id for u in spec.state_ids)]
    p = _pick(rng, candidates, target, "protected-exposure target")
    sources = [u for u in spec.state_ids if u not in prot and u != p]
    u = rng.choice(sources)
    states = tuple(replace(s, protected=True) if s.id == p else s for s in spec.states)
    index = len(spec.transitions)
    spec = replace(spec, states=states,
                   transitions=spec.transitions + (TransitionDecl(u, p, TRUE),))
    return spec, f"{u}->{p}#{index}"


def _weak_hamming(spec, rng, target):
    if len(spec.states) < 2:
        raise InjectionError("weak-hamming needs at least two states")
    prot = [s.id for s in spec.states if s.protected]
    p = _pick(rng, prot or spec.state_ids, target if target else None, "state")
    q = rng.choice([x for x in spec.state_ids if x != p])
    spec = _one_hot(spec)
    n = len(spec.states)
    q_code = spec.state(q).encoding.value
    p_code = spec.state(p).encoding.value
    states = tuple(
        replace(s, protected=True, encoding=BitVector(q_code | p_code, n)) if s.id == p else s
        for s in spec.states
    )
    return replace(spec, states=states), pair_location(p, q)


def _duplicate_encoding(spec, rng, target):
    if len(spec.states) < 2:
        raise InjectionError("duplicate-encoding needs at least two states")
    if not spec.encoded:
        spec = _one_hot(spec)
    p = _pick(rng, spec.state_ids, target, "state")
    q = rng.choice([x for x in spec.state_ids if x != p])
    code = spec.state(q).encoding
    states = tuple(replace(s, encoding=code) if s.id == p else s for s in spec.states)
    return replace(spec, states=states), pair_location(p, q)


def _missing_default(spec, rng, target):
    return _make_incomplete(spec), MACHINE


def _overflow_output(spec, rng, target):
    s_id = _pick(rng, spec.state_ids, target, "state")
    state = spec.state(s_id)
    widths = spec.input_widths
    # prefer shrinking an existing output that carries arithmetic only here
    for out, e in state.outputs:
        nodes = arithmetic_nodes(e)
        if not nodes:
            continue
        new_width = arithmetic_peak(e, widths)[0].bit_length() - 1
        need = max(expr_width(n, widths) for n in nodes)
        if not 1 <= new_width < need:
            continue
        others = [
            max((expr_width(n, widths) for n in arithmetic_nodes(x)), default=0)
            for s in spec.states if s.id != s_id for o, x in s.outputs if o == out
        ]
        if all(w <= new_width for w in others):
            outputs = tuple(replace(sig, width=new_width) if sig.id == out else sig
                            for sig in spec.outputs)
            return replace(spec, outputs=outputs), s_id
    name = _fresh(spec, "ovf")
    if spec.kind == MEALY and spec.inputs:
        a = rng.choice(spec.inputs)
        b = rng.choice(spec.inputs)
        expr: Expr = Binary("add", Ref(a.id), Ref(b.id))
        width = max(a.width, b.width)
    else:
        expr = Binary("add", Lit(3, 2), Lit(1, 1))
        width = 2
    states = tuple(replace(s, outputs=s.outputs + ((name, expr),)) if s.id == s_id else s
                   for s in spec.states)
    outputs = spec.outputs + (SignalDecl(name, width, "output"),)
    return replace(spec, states=states, outputs=outputs), s_id


_INJECTORS = {
    "dead-state": _dead_state,
    "unreachable-state": _unreachable_state,
    "remove-reset-incoming": _remove_reset_incoming,
    "protected-exposure": _protected_exposure,
    "weak-hamming": _weak_hamming,
    "duplicate-encoding": _duplicate_encoding,
    "missing-default": _missing_default,
    "overflow-output": _overflow_output,
}


def inject(spec: FsmSpec, recipe: InjectionRecipe) -> tuple[FsmSpec, GroundTruth]:
    """Plant the recipe's vulnerability; the result is a valid spec."""
    rng = random.Random(f"{recipe.seed}:{recipe.variant}")
    mutated, location = _INJECTORS[recipe.variant](spec, rng, recipe.target)
    validate_spec(mutated)
    return mutated, GroundTruth(VARIANTS[recipe.variant][1], location, recipe)


# clean corpus -------------------------------------------------------------


def _random_guard(rng: random.Random, inputs: list[SignalDecl]) -> Expr:
    if not inputs:
        return TRUE
    a = rng.choice(inputs)
    shape = rng.randrange(4)
    if shape == 0 and a.width == 1:
        return Ref(a.id)
    cmp = Binary(rng.choice(("eq", "neq", "lt", "gt", "le", "ge")), Ref(a.id),
                 Lit(rng.randrange(1 << a.width), a.width))
    if shape == 1:
        return Unary("not", cmp)
    if shape == 2 and len(inputs) > 1:
        b = rng.choice(inputs)
        other = Ref(b.id) if b.width == 1 else Binary("neq", Ref(b.id), Lit(0, b.width))
        return Binary(rng.choice(("land", "lor")), cmp, other)
    return cmp


def _random_output(rng: random.Random, kind: str, inputs: list[SignalDecl]) -> Expr:
    if kind == MEALY and inputs and rng.random() < 0.6:
        a, b = rng.choice(inputs), rng.choice(inputs)
        op = rng.choice(("add", "sub", "mul", "and", "xor"))
        return Binary(op, Ref(a.id), Ref(b.id))
    if rng.random() < 0.3:
        return Binary("add", Lit(rng.randrange(8), 3), Lit(rng.randrange(4), 2))
    return Lit(rng.randrange(8), 3)


def _candidate_spec(rng: random.Random, name: str, n_states: int, n_inputs: int) -> FsmSpec:
    kind = rng.choice((MEALY, MOORE))
    inputs = [SignalDecl(f"in{i}", rng.randint(1, 8), "input") for i in range(n_inputs)]
    ids = [f"S{i}" for i in range(n_states)]

    out_names = [f"out{i}" for i in range(rng.randint(0, 2))]
    state_outputs: dict[str, list[tuple[str, Expr]]] = {s: [] for s in ids}
    for s in ids:
        for o in out_names:
            if rng.random() < 0.7:
                state_outputs[s].append((o, _random_output(rng, kind, inputs)))
    widths = {i.id: i.width for i in inputs}
    out_width = {}
    for o in out_names:
        need = [1]
        for s in ids:
            for name_, e in state_outputs[s]:
                if name_ == o:
                    need.append(expr_width(e, widths))
                    need += [expr_width(n, widths) for n in arithmetic_nodes(e)]
        out_width[o] = max(need)
    outputs = [SignalDecl(o, out_width[o], "output") for o in out_names]

    protected = set()
    if inputs:
        protected = {s for s in ids[1:] if rng.random() < 0.25}

    transitions = [TransitionDecl(ids[i], ids[(i + 1) % n_states], _random_guard(rng, inputs))
                   for i in range(n_states)]
    for _ in range(rng.randint(0, n_states)):
        transitions.append(TransitionDecl(rng.choice(ids), rng.choice(ids),
                                          _random_guard(rng, inputs)))
    rng.shuffle(transitions)

    encodings: dict[str, BitVector] = {}
    register_width = None
    power_of_two = n_states >= 2 and n_states & (n_states - 1) == 0
    if power_of_two and not protected:
        register_width = n_states.bit_length() - 1
        if rng.random() < 0.7:
            codes = list(range(n_states))
            rng.shuffle(codes)
            encodings = {s: BitVector(c, register_width) for s, c in zip(ids, codes)}
    states = tuple(
        StateDecl(s, encodings.get(s), s in protected, tuple(state_outputs[s])) for s in ids
    )
    return FsmSpec(name, kind, states, tuple(inputs), tuple(outputs), ids[0],
                   tuple(transitions), register_width)


def generate_random_spec(seed: int, n_states: int, n_inputs: int, name: str = "rand") -> FsmSpec:
    """A valid spec with no findings at all, deterministic per arguments.

    Every state sits on a cycle through reset. Candidates that still trip a
    detector are rejected and redrawn.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    rng = random.Random(f"{seed}:{n_states}:{n_inputs}")
    for _ in range(1000):
        spec = validate_spec(_candidate_spec(rng, name, n_states, n_inputs))
        v_s, v_p = pre_analyze(build_graph(spec))
        if not v_s and not v_p:
            return spec
    raise RuntimeError("could not draw a clean spec")  # pragma: no cover
