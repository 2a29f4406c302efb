"""Acceptance gate. Each test records one PASS/FAIL line (see conftest)."""

import json
import random
import re
import time
from collections import deque

import numpy as np
from conftest import FIXTURES
from goldens import CASES, GOLDEN, capture
from randspec import rand_expr, rand_spec
from test_kg import MALFORMED, diagnostics, expected_code, random_kg

from fsmguard.analysis import CONFIRMED, REFUTED, STRUCTURAL, pre_analyze
from fsmguard.expr import Binary, Lit, Ref, Unary
from fsmguard.fsmfile import load_fsm
from fsmguard.graph import build_graph
from fsmguard.injection import CODING, POTENTIAL, STRUCTURAL as STRUCTURAL_CLASS
from fsmguard.injection import VARIANTS, InjectionRecipe, generate_random_spec, inject
from fsmguard.kg import (
    CODEGEN,
    REPORT_ONLY,
    KgError,
    load_kg,
    load_seed_kg,
    partition_stage,
    seed_kg_text,
    serialize_kg,
    validate_kg,
)
from fsmguard.model import (
    MEALY,
    BitVector,
    FsmSpec,
    SignalDecl,
    StateDecl,
    TransitionDecl,
    min_register_width,
    validate_spec,
)
from fsmguard.pipeline import run_pipeline

KG = load_seed_kg()


# 1 -------------------------------------------------------------------------


def test_criterion_1_injection_recall(acceptance):
    start = time.perf_counter()
    total = hit = 0
    misses = []
    for variant, (cls, detector) in sorted(VARIANTS.items()):
        for seed in range(50):
            spec = generate_random_spec(seed, 2 + seed % 11, 1 + seed % 3)
            mutated, truth = inject(spec, InjectionRecipe(cls, variant, seed))
            v_s, v_p = pre_analyze(build_graph(mutated))
            total += 1
            if truth.location in [f.location for f in v_s + v_p if f.detector_id == detector]:
                hit += 1
            else:
                misses.append((variant, seed))
    elapsed = time.perf_counter() - start
    classes = {c for c, _ in VARIANTS.values()}
    ok = (hit == total and elapsed < 10 and len(VARIANTS) >= 5
          and classes == {CODING, STRUCTURAL_CLASS, POTENTIAL}
          and {"dead-state", "weak-hamming", "overflow-output", "duplicate-encoding",
               "missing-default"} <= set(VARIANTS))
    acceptance(1, ok, f"injection recall {hit}/{total} over {len(VARIANTS)} variants in "
                      f"{elapsed:.2f}s (limit 10s){'; misses ' + str(misses[:5]) if misses else ''}")


# 2 -------------------------------------------------------------------------


def _bfs(spec):
    adj = {s: [] for s in spec.state_ids}
    for t in spec.transitions:
        adj[t.src].append(t.dst)
    seen, q = {spec.reset_state}, deque([spec.reset_state])
    while q:
        for v in adj[q.popleft()]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    return seen


def _random_encoding_set(rng):
    n = rng.randint(2, 9)
    width = rng.randint(min_register_width(n), 6)
    states = tuple(
        StateDecl(f"S{i}", BitVector(rng.randrange(1 << width), width), rng.random() < 0.3)
        for i in range(n))
    trans = tuple(TransitionDecl(f"S{i}", f"S{(i + 1) % n}", Lit(1, 1)) for i in range(n))
    return validate_spec(FsmSpec(name="enc", kind=MEALY, states=states,
                                 inputs=(SignalDecl("k", 1, "input"),), outputs=(),
                                 reset_state="S0", transitions=trans, register_width=width))


def test_criterion_2_oracle_equivalence(acceptance):
    graph_mismatch = 0
    for seed in range(1000):
        spec = rand_spec(random.Random(seed), max_states=12)
        v_s, _ = pre_analyze(build_graph(spec))
        unreachable = {f.location for f in v_s if f.detector_id == "UNREACHABLE_FROM_RESET"}
        dead = {f.location for f in v_s if f.detector_id == "DEAD_STATE_NO_INCOMING"}
        indeg = {s: 0 for s in spec.state_ids}
        for t in spec.transitions:
            indeg[t.dst] += 1
        if unreachable != set(spec.state_ids) - _bfs(spec):
            graph_mismatch += 1
        if dead != {s for s, d in indeg.items() if d == 0 and s != spec.reset_state}:
            graph_mismatch += 1
    enc_mismatch = 0
    rng = random.Random(2024)
    for _ in range(500):
        spec = _random_encoding_set(rng)
        _, v_p = pre_analyze(build_graph(spec))
        dup, weak = set(), set()
        for i, a in enumerate(spec.states):
            for b in spec.states[i + 1:]:
                d = sum(((a.encoding.value ^ b.encoding.value) >> k) & 1
                        for k in range(a.encoding.width))
                pair = ",".join(sorted((a.id, b.id)))
                if d == 0:
                    dup.add(pair)
                if d < 2 and (a.protected or b.protected):
                    weak.add(pair)
        if {f.location for f in v_p if f.detector_id == "DUPLICATE_ENCODING"} != dup:
            enc_mismatch += 1
        if {f.location for f in v_p if f.detector_id == "WEAK_HAMMING"} != weak:
            enc_mismatch += 1
    acceptance(2, graph_mismatch == 0 and enc_mismatch == 0,
               f"BFS/in-degree oracles on 1000 graphs: {graph_mismatch} mismatches; "
               f"Hamming/duplicate pair scans on 500 encoding sets: {enc_mismatch} mismatches")


# 3 -------------------------------------------------------------------------

_NP_BIN = {
    "and": np.bitwise_and, "or": np.bitwise_or, "xor": np.bitwise_xor,
    "land": lambda a, b: ((a != 0) & (b != 0)).astype(np.int64),
    "lor": lambda a, b: ((a != 0) | (b != 0)).astype(np.int64),
    "eq": lambda a, b: (a == b).astype(np.int64), "neq": lambda a, b: (a != b).astype(np.int64),
    "lt": lambda a, b: (a < b).astype(np.int64), "gt": lambda a, b: (a > b).astype(np.int64),
    "le": lambda a, b: (a <= b).astype(np.int64), "ge": lambda a, b: (a >= b).astype(np.int64),
}


def _np_eval(e, env, widths, arith_values):
    """(values, width) of ``e`` over every assignment at once."""
    if isinstance(e, Lit):
        return np.full_like(next(iter(env.values())), e.value), e.width
    if isinstance(e, Ref):
        return env[e.name], widths[e.name]
    if isinstance(e, Unary):
        x, w = _np_eval(e.operand, env, widths, arith_values)
        if e.op == "not":
            return (x == 0).astype(np.int64), 1
        mask = (1 << w) - 1
        return ((~x if e.op == "bitnot" else -x) & mask), w
    a, wa = _np_eval(e.lhs, env, widths, arith_values)
    b, wb = _np_eval(e.rhs, env, widths, arith_values)
    if e.op == "add":
        v, w = a + b, max(wa, wb) + 1
    elif e.op == "sub":
        w = max(wa, wb) + 1
        v = (a - b) & ((1 << w) - 1)
    elif e.op == "mul":
        v, w = a * b, wa + wb
    else:
        return _NP_BIN[e.op](a, b), max(wa, wb) if e.op in ("and", "or", "xor") else 1
    arith_values.append(v)
    return v, w


def _oracle_overflows(e, widths, out_width):
    names = sorted(widths)
    grids = np.meshgrid(*(np.arange(1 << widths[n], dtype=np.int64) for n in names), indexing="ij")
    env = {n: g.ravel() for n, g in zip(names, grids)}
    arith = []
    _np_eval(e, env, widths, arith)
    return any(int(v.max()) >= 1 << out_width for v in arith)


def _has_arith(e):
    if isinstance(e, Unary):
        return _has_arith(e.operand)
    if isinstance(e, Binary):
        return e.op in ("add", "sub", "mul") or _has_arith(e.lhs) or _has_arith(e.rhs)
    return False


def test_criterion_3_overflow_soundness(acceptance):
    rng = random.Random(190)
    names = ["a", "b", "c"]
    checked = mismatches = confirmed = raw_unsound = raw_flags = 0
    while checked < 500:
        widths = {n: rng.randint(1, 4) for n in names}
        e = rand_expr(rng, names, rng.randint(1, 4))
        if not _has_arith(e):
            continue
        out_width = rng.randint(1, 10)
        spec = validate_spec(FsmSpec(
            name="ovf", kind=MEALY, states=(StateDecl("A", outputs=(("o", e),)),),
            inputs=tuple(SignalDecl(n, w, "input") for n, w in widths.items()),
            outputs=(SignalDecl("o", out_width, "output"),),
            reset_state="A", transitions=(TransitionDecl("A", "A", Lit(1, 1)),)))
        r = run_pipeline(spec, KG)
        raw = [f for f in r.potential if f.detector_id == "OVERFLOW_OUTPUT"]
        flag = any(f.status == CONFIRMED for f in raw)
        truth = _oracle_overflows(e, widths, out_width)
        checked += 1
        confirmed += flag
        raw_flags += bool(raw)
        mismatches += flag != truth
        raw_unsound += truth and not raw
    acceptance(3, mismatches == 0 and raw_unsound == 0,
               f"CWE-190 flag vs exhaustive numpy evaluation on {checked} expressions: "
               f"{mismatches} mismatches ({confirmed} overflowing); raw width rule flagged "
               f"{raw_flags} and missed {raw_unsound}")


# 4 -------------------------------------------------------------------------


def test_criterion_4_knowledge_graph(acceptance):
    seed_diags = validate_kg(load_seed_kg())
    rejected = 0
    for path in MALFORMED:
        code = expected_code(path)
        try:
            load_kg(path.read_text())
        except KgError as exc:
            rejected += code in exc.codes and code in [d.code for d in diagnostics(path.read_text())]
    fix = 0
    g = load_kg(seed_kg_text())
    fix += load_kg(serialize_kg(g)) == g
    rng = random.Random(42)
    for _ in range(200):
        h = random_kg(rng)
        once = load_kg(serialize_kg(h))
        fix += once == h and load_kg(serialize_kg(once)) == once
    ok = not seed_diags and len(MALFORMED) >= 8 and rejected == len(MALFORMED) and fix == 201
    acceptance(4, ok, f"seed KG {len(seed_diags)} diagnostics; {rejected}/{len(MALFORMED)} "
                      f"malformed fixtures rejected with expected code; fixpoint {fix}/201")


# 5 -------------------------------------------------------------------------

SECTION_RE = re.compile(r"^### Section (\d): ", re.M)


def test_criterion_5_pipeline_determinism(acceptance):
    unstable, drift, bad_sections = [], [], []
    for name, argv in CASES:
        first, second = capture(argv)[1], capture(argv)[1]
        if first != second:
            unstable.append(name)
        if first != (GOLDEN / name).read_text(encoding="utf-8"):
            drift.append(name)
        if name.endswith(".prompt.txt") and SECTION_RE.findall(first) != ["1", "2", "3", "4", "5"]:
            bad_sections.append(name)
    fixtures = sorted(p.stem for p in FIXTURES.glob("*.fsm"))
    covered = sorted({name.split(".")[0] for name, _ in CASES})
    ok = not (unstable or drift or bad_sections) and fixtures == covered
    acceptance(5, ok, f"{len(CASES)} analyze/report/prompt outputs over {len(fixtures)} fixtures: "
                      f"{len(unstable)} unstable, {len(drift)} differ from goldens, "
                      f"{len(bad_sections)} prompts without five ordered sections")


# 6 -------------------------------------------------------------------------


def test_criterion_6_retrieval_partition(acceptance):
    r = run_pipeline(load_fsm((FIXTURES / "partition.fsm").read_text()), KG)
    everything = r.structural + r.potential
    structural = [f for f in everything if f.phase == STRUCTURAL]
    coding = [f for f in everything if f.status == CONFIRMED]
    refuted = [f for f in everything if f.status == REFUTED]
    shape = len(structural) == 1 and len(coding) == 1 and len(refuted) == 1
    stage_ok = all(partition_stage(KG, f.vuln_id) == REPORT_ONLY for f in r.k_s.findings) and \
        all(partition_stage(KG, f.vuln_id) == CODEGEN for f in r.k_c.findings)
    membership = r.k_s.findings == structural and r.k_c.findings == coding
    md = r.report.to_markdown()
    appendix_at = md.find("## Appendix")
    (ref,) = refuted or [None]
    only_appendix = (
        ref is not None and appendix_at >= 0
        and f"`{ref.location}`" not in md[:appendix_at] and f"`{ref.location}`" in md[appendix_at:]
        and ref not in r.k_s.findings + r.k_c.findings
        and f"`{ref.location}`" not in r.prompt.render()
        and [f["location"] for f in r.report.to_dict()["appendix_refuted"]] == [ref.location])
    acceptance(6, shape and stage_ok and membership and only_appendix,
               f"partition.fsm K_S={[f.location for f in r.k_s.findings]} "
               f"K_C={[f.location for f in r.k_c.findings]} "
               f"refuted={[f.location for f in refuted]} appendix-only={only_appendix}")


# 7 -------------------------------------------------------------------------


def test_criterion_7_replay_end_to_end(acceptance, tmp_path):
    good, _ = capture(["generate", "fixtures/lock.fsm", "--provider",
                       "fixtures/providers/replay_good.json", "--out-dir", str(tmp_path / "g")])
    bad, out = capture(["generate", "fixtures/lock.fsm", "--provider",
                        "fixtures/providers/replay_bad.json", "--out-dir", str(tmp_path / "b"),
                        "--format", "structured"])
    found = {f["detector_id"] for f in json.loads(out)}
    ok = good == 0 and found == {"LINT_MISSING_DEFAULT", "LINT_WEAK_HAMMING"} and \
        len(json.loads(out)) == 2
    acceptance(7, ok, f"replay good exit {good}; replay bad exit {bad} with {sorted(found)}")
