import random
from pathlib import Path

import pytest

from fsmguard.kg import (
    CODEGEN,
    REPORT_ONLY,
    KgEdge,
    KgError,
    KgNode,
    KnowledgeGraph,
    UnknownVulnerability,
    confirm_rules,
    load_kg,
    load_seed_kg,
    parse_kg,
    partition_stage,
    query_vuln,
    seed_kg_text,
    serialize_kg,
    validate_kg,
)

MALFORMED = sorted((Path(__file__).parent / "kg_malformed").glob("*.kg"))


def expected_code(path: Path) -> str:
    first = path.read_text().splitlines()[0]
    assert first.startswith("# expect: ")
    return first.split(": ", 1)[1].strip()


def diagnostics(text):
    try:
        return validate_kg(parse_kg(text))
    except KgError as exc:
        return exc.diagnostics


def test_seed_validates_clean():
    g = load_seed_kg()
    assert validate_kg(g) == []
    assert set(g.vulnerability_ids) == {
        "DEAD_STATE", "UNREACHABLE_FROM_RESET", "TERMINAL_STATE", "PROTECTED_EXPOSURE",
        "DONT_CARE_STATES", "CWE-190", "CWE-1245", "DUPLICATE_ENCODING", "WEAK_HAMMING",
    }


def test_at_least_eight_malformed_fixtures():
    assert len(MALFORMED) >= 8
    assert len({expected_code(p) for p in MALFORMED}) == len(MALFORMED)


@pytest.mark.parametrize("path", MALFORMED, ids=lambda p: p.stem)
def test_malformed_fixture_rejected(path):
    code = expected_code(path)
    diags = diagnostics(path.read_text())
    assert code in [d.code for d in diags]
    with pytest.raises(KgError) as exc:
        load_kg(path.read_text())
    assert code in exc.value.codes


def test_diagnostics_name_the_offender():
    text = (Path(__file__).parent / "kg_malformed" / "dangling-edge.kg").read_text()
    (d,) = [d for d in diagnostics(text) if d.code == "dangling-edge"]
    assert "nowhere" in d.subject + d.message


def test_missing_check_gives_one_diagnostic():
    text = (Path(__file__).parent / "kg_malformed" / "missing-mandatory-edge.kg").read_text()
    assert [d.code for d in diagnostics(text)] == ["missing-mandatory-edge"]


def test_query_and_partition():
    g = load_seed_kg()
    k = query_vuln(g, "DEAD_STATE")
    assert k.consequences and k.suggestions and k.suggestions[0].manners
    assert partition_stage(g, "DEAD_STATE") == REPORT_ONLY
    assert partition_stage(g, "CWE-1245") == CODEGEN
    assert [r.predicate_kind for r in confirm_rules(g, "CWE-190")] == ["OutputExprArithmetic"]
    assert confirm_rules(g, "DEAD_STATE") == []
    with pytest.raises(UnknownVulnerability):
        query_vuln(g, "NOPE")
    with pytest.raises(UnknownVulnerability):
        confirm_rules(g, "NOPE")


def test_unknown_stage_payload_rejected_by_partition():
    g = load_seed_kg()
    nodes = tuple(KgNode(n.id, n.node_type, "runtime" if n.id == "stage:design" else n.payload,
                         n.attrs) for n in g.nodes)
    bad = KnowledgeGraph(nodes, g.edges, g.version)
    with pytest.raises(ValueError):
        partition_stage(bad, "DEAD_STATE")


def test_query_independent_of_order():
    g = load_seed_kg()
    rng = random.Random(5)
    for _ in range(5):
        nodes, edges = list(g.nodes), list(g.edges)
        rng.shuffle(nodes)
        rng.shuffle(edges)
        h = KnowledgeGraph(tuple(nodes), tuple(edges), g.version)
        for vid in g.vulnerability_ids:
            assert query_vuln(h, vid) == query_vuln(g, vid)


# random conformant graphs ---------------------------------------------------

_TEXT = "abc xyz \"quoted\" back\\slash :;{}"


def _payload(rng):
    return "".join(rng.choice(_TEXT) for _ in range(rng.randint(0, 20)))


def random_kg(rng: random.Random) -> KnowledgeGraph:
    nodes = [KgNode("stage:design", "stage", "design"), KgNode("stage:coding", "stage", "coding")]
    edges = []
    for v in range(rng.randint(1, 4)):
        vid = f"V{v}"
        nodes.append(KgNode(vid, "Vulnerability", _payload(rng),
                            (("class", rng.choice(["a", "b c", 'q"x'])),)))
        edges.append(KgEdge(vid, "stage", rng.choice(["stage:design", "stage:coding"])))
        for label in ("type", "Check", "suggestions", "Consequence", "GoodExample", "BadExample"):
            for k in range(rng.randint(1 if label in ("type", "Check", "suggestions") else 0, 2)):
                nid = f"{vid}.{label}{k}"
                nodes.append(KgNode(nid, label, _payload(rng)))
                edges.append(KgEdge(vid, label, nid))
                if label == "suggestions" and rng.random() < 0.5:
                    nodes.append(KgNode(nid + ".m", "manner", _payload(rng)))
                    edges.append(KgEdge(nid, "manner", nid + ".m"))
        if rng.random() < 0.5:
            cid = f"{vid}.confirm"
            attrs = rng.choice([
                (("kind", "OutputExprArithmetic"), ("bound", "width")),
                (("kind", "EncodingPairDistanceBelow"), ("threshold", str(rng.randint(1, 4))),
                 ("scope", "any")),
                (("kind", "Custom"), ("note", "free text")),
            ])
            nodes.append(KgNode(cid, "confirm", _payload(rng), attrs))
            edges.append(KgEdge(vid, "confirm", cid))
            for side, ex in (("confirm_positive", "positive_example"),
                             ("confirm_negative", "negative_example")):
                nodes.append(KgNode(f"{cid}.{side}", side, _payload(rng)))
                nodes.append(KgNode(f"{cid}.{ex}", ex, _payload(rng)))
                edges.append(KgEdge(cid, side, f"{cid}.{side}"))
                edges.append(KgEdge(f"{cid}.{side}", ex, f"{cid}.{ex}"))
    # a stage node nobody uses would be an orphan
    used = {e.dst for e in edges}
    nodes = [n for n in nodes if n.node_type != "stage" or n.id in used]
    rng.shuffle(nodes)
    rng.shuffle(edges)
    return KnowledgeGraph(tuple(nodes), tuple(edges), f"r{rng.randint(0, 99)}")


def test_fixpoint_seed_and_200_random():
    seed = load_kg(seed_kg_text())
    assert load_kg(serialize_kg(seed)) == seed
    rng = random.Random(42)
    for _ in range(200):
        g = random_kg(rng)
        assert validate_kg(g) == []
        once = load_kg(serialize_kg(g))
        assert once == g
        assert load_kg(serialize_kg(once)) == once


def test_validate_empty_iff_load_accepts():
    rng = random.Random(9)
    for path in MALFORMED:
        g = None
        try:
            g = parse_kg(path.read_text())
        except KgError:
            continue
        assert validate_kg(g)
        with pytest.raises(KgError):
            load_kg(serialize_kg(g))
    for _ in range(20):
        g = random_kg(rng)
        assert validate_kg(g) == [] and load_kg(serialize_kg(g)) == g
