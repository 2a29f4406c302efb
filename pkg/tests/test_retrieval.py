import random

from conftest import load_fixture
from randspec import rand_spec

from fsmguard.analysis import CONFIRMED, POTENTIAL, REFUTED, STRUCTURAL, UNCONFIRMED, Finding, pre_analyze
from fsmguard.fsmfile import parse_fsm
from fsmguard.graph import build_graph
from fsmguard.kg import CODEGEN, load_kg, load_seed_kg, partition_stage, query_vuln, seed_kg_text
from fsmguard.pipeline import run_pipeline
from fsmguard.retrieval import (
    NO_KNOWLEDGE,
    UNCONFIRMED_CAVEAT,
    build_report,
    confirm_potential,
    retrieve_knowledge,
)

KG = load_seed_kg()

OVERFLOW = ("fsm m mealy\ninput a 8\ninput b 8\ninput ctr 3\noutput sum {w}\noutput idx 4\n"
            "state A {{ sum = a + b; }}\nstate B {{ idx = ctr + 4'd1; }}\nreset A\n"
            "trans A -> B when 1\ntrans B -> A when 1\n")


def confirmed(text):
    g = build_graph(parse_fsm(text))
    _, v_p = pre_analyze(g)
    return {f.location: f.status for f in confirm_potential(v_p, g, KG)}


def test_overflow_confirmed_and_refuted():
    assert confirmed(OVERFLOW.format(w=8)) == {"A": CONFIRMED, "B": REFUTED}


def test_width_bound_variant_confirms_everything_flagged():
    text = seed_kg_text().replace("bound=exact", "bound=width")
    kg = load_kg(text)
    g = build_graph(parse_fsm(OVERFLOW.format(w=8)))
    _, v_p = pre_analyze(g)
    assert {f.status for f in confirm_potential(v_p, g, kg)} == {CONFIRMED}


def test_exact_bound_refutes_what_intervals_cannot():
    text = ("fsm m mealy\ninput a 2\ninput b 2\noutput o 2\nstate A { o = (a & b) + (a ^ b); }\n"
            "reset A\ntrans A -> A when 1\n")
    assert confirmed(text) == {"A": REFUTED}
    kg = load_kg(seed_kg_text().replace("bound=exact", "bound=interval"))
    g = build_graph(parse_fsm(text))
    _, v_p = pre_analyze(g)
    assert [f.status for f in confirm_potential(v_p, g, kg)] == [CONFIRMED]


def test_vuln_without_confirm_rule_is_unconfirmed():
    g = build_graph(parse_fsm(OVERFLOW.format(w=8)))
    f = Finding("X", "DEAD_STATE", POTENTIAL, "A", "synthetic")
    (out,) = confirm_potential([f], g, KG)
    assert out.status == UNCONFIRMED


def test_unknown_location_is_unconfirmed_not_crash():
    g = build_graph(parse_fsm(OVERFLOW.format(w=8)))
    f = Finding("OVERFLOW_OUTPUT", "CWE-190", POTENTIAL, "GHOST", "synthetic")
    (out,) = confirm_potential([f], g, KG)
    assert out.status == UNCONFIRMED
    assert "confirmation failed" in out.evidence


def test_confirmation_is_order_independent():
    for seed in range(200):
        g = build_graph(rand_spec(random.Random(seed)))
        _, v_p = pre_analyze(g)
        forward = {f.sort_key(): f.status for f in confirm_potential(v_p, g, KG)}
        backward = {f.sort_key(): f.status for f in confirm_potential(v_p[::-1], g, KG)}
        assert forward == backward


def test_routing():
    dead = Finding("DEAD_STATE_NO_INCOMING", "DEAD_STATE", STRUCTURAL, "D", "e")
    dup = Finding("DUPLICATE_ENCODING", "DUPLICATE_ENCODING", POTENTIAL, "A,B", "e", CONFIRMED)
    k_s, k_c = retrieve_knowledge([dead], [], KG)
    assert k_s.findings == [dead] and k_c.findings == []
    k_s, k_c = retrieve_knowledge([], [dup], KG)
    assert k_s.findings == [] and k_c.findings == [dup]
    k_s, k_c = retrieve_knowledge([], [], KG)
    assert k_s.items == () and k_c.items == ()


def test_unconfirmed_and_unknown_go_to_report():
    unc = Finding("WEAK_HAMMING", "WEAK_HAMMING", POTENTIAL, "A,B", "e", UNCONFIRMED)
    unknown = Finding("NEW", "CWE-9999", STRUCTURAL, "A", "e")
    k_s, k_c = retrieve_knowledge([unknown], [unc], KG)
    markers = {i.finding.vuln_id: i.markers for i in k_s.items}
    assert markers == {"WEAK_HAMMING": (UNCONFIRMED_CAVEAT,), "CWE-9999": (NO_KNOWLEDGE,)}
    assert k_c.items == ()


def test_partition_totality_on_random_specs():
    for seed in range(300):
        spec = rand_spec(random.Random(seed))
        r = run_pipeline(spec, KG)
        everything = r.structural + r.potential
        in_bundles = r.k_s.findings + r.k_c.findings
        refuted = [f for f in everything if f.status == REFUTED]
        assert sorted(in_bundles + refuted, key=lambda f: f.sort_key()) == \
            sorted(everything, key=lambda f: f.sort_key())
        for f in r.k_c.findings:
            assert partition_stage(KG, f.vuln_id) == CODEGEN
            assert f.status == CONFIRMED or f.phase == STRUCTURAL
        md = r.report.to_markdown()
        for f in everything:
            assert f.detector_id in md and f"`{f.location}`" in md
        c = r.report.counts
        assert c["findings"] == len(r.report.findings)
        assert c["refuted"] == len(refuted)
        assert c["report_knowledge"] + c["codegen_knowledge"] + c["refuted"] == len(everything)


def test_empty_report():
    r = run_pipeline(load_fixture("minimal.fsm"), KG)
    md = r.report.to_markdown()
    assert "No vulnerabilities detected." in md
    assert all(v == 0 for v in r.report.counts.values())


def test_dead_state_report_quotes_knowledge():
    r = run_pipeline(load_fixture("dead.fsm"), KG)
    md = r.report.to_markdown()
    k = query_vuln(KG, "DEAD_STATE")
    assert k.consequences[0] in md
    assert k.suggestions[0].text in md
    assert md == run_pipeline(load_fixture("dead.fsm"), KG).report.to_markdown()


def test_report_json_mirror():
    r = run_pipeline(load_fixture("partition.fsm"), KG).report
    doc = r.to_dict()
    assert doc["summary"] == r.counts
    assert [f["location"] for f in doc["appendix_refuted"]] == ["STEP"]
    assert build_report("x", [], r_empty := retrieve_knowledge([], [], KG)[0]).counts["findings"] == 0
    assert r_empty.audience == "Report"
