import logging
import random

import pytest
from conftest import FIXTURES, load_fixture
from hypothesis import given, settings
from hypothesis import strategies as st

from fsmguard.fsmfile import parse_fsm
from fsmguard.injection import InjectionRecipe, generate_random_spec, inject
from fsmguard.lint import (
    LintParseError,
    extract_lint_model,
    lint,
    render_codes,
    render_verilog,
)

VERILOG = FIXTURES / "verilog"


def detectors(findings):
    return sorted(f.detector_id for f in findings)


def test_good_fixture_is_clean():
    model = extract_lint_model((VERILOG / "good_fsm.v").read_bytes())
    assert model.module_name == "lock" and model.has_reset_branch
    assert [p.name for p in model.state_params] == ["IDLE", "CHECK", "UNLOCKED"]
    assert all(b.has_default for b in model.case_blocks)
    assert lint(model, load_fixture("lock.fsm")) == []


def test_bad_fixture():
    model = extract_lint_model((VERILOG / "bad_fsm.v").read_text())
    found = lint(model, load_fixture("lock.fsm"))
    assert detectors(found) == ["LINT_MISSING_DEFAULT", "LINT_WEAK_HAMMING"]
    (weak,) = [f for f in found if f.detector_id == "LINT_WEAK_HAMMING"]
    assert weak.location == "CHECK,UNLOCKED"
    # no FSM given, so nothing is known to be protected
    assert detectors(lint(model)) == ["LINT_MISSING_DEFAULT"]


MODULE = """module m (input wire clk, input wire rst_n);
  localparam {decl};
  reg [{hi}:0] state;
  always @(posedge clk or negedge rst_n) begin
    if (!rst_n) state <= A;
    else case (state)
      A: state = B;
      default: state = A;
    endcase
  end
endmodule
"""


def test_duplicate_values():
    text = MODULE.format(decl="A = 2'b01, B = 2'b01", hi=1)
    (f,) = lint(extract_lint_model(text))
    assert (f.detector_id, f.location) == ("LINT_DUPLICATE_ENCODING", "A,B")


def test_weak_hamming_with_protected_mapping():
    text = MODULE.format(decl="A = 3'b110, B = 3'b111", hi=2)
    spec = parse_fsm("fsm m moore\nstate A\nstate B protected\nreset A\n"
                     "trans A -> B when 1\ntrans B -> A when 1\n")
    (f,) = lint(extract_lint_model(text), spec)
    assert (f.detector_id, f.location) == ("LINT_WEAK_HAMMING", "A,B")


def test_width_and_missing_reset():
    text = MODULE.format(decl="A = 2'd5, B = 2'b01", hi=1).replace("if (!rst_n) state <= A;\n    else ", "")
    found = lint(extract_lint_model(text))
    assert detectors(found) == ["LINT_MISSING_RESET", "LINT_WIDTH"]
    assert extract_lint_model(text).state_params[0].value == 5


def test_unmatched_protected_disables_check(caplog):
    spec = load_fixture("lock.fsm")
    text = (VERILOG / "bad_fsm.v").read_text().replace("UNLOCKED", "OPEN_ST")
    with caplog.at_level(logging.WARNING, logger="fsmguard.lint"):
        found = lint(extract_lint_model(text), spec)
    assert "LINT_WEAK_HAMMING" not in detectors(found)
    assert "UNLOCKED" in caplog.text


def test_case_insensitive_match():
    spec = load_fixture("lock.fsm")
    text = (VERILOG / "bad_fsm.v").read_text().replace("UNLOCKED", "unlocked")
    assert "LINT_WEAK_HAMMING" in detectors(lint(extract_lint_model(text), spec))


def test_empty_file():
    model = extract_lint_model("")
    assert model.module_name is None and model.skip_count == 0
    assert lint(model) == []


def test_comments_stripped():
    text = "/* module fake;\n */ // localparam X = 1'b1;\n"
    model = extract_lint_model(text)
    assert model.module_name is None and model.state_params == []


@pytest.mark.parametrize("text,line", [
    ("module m;\n  always @(*) begin\n    x = 1;\nendmodule\n", 2),
    ("module m;\n  case (state)\n  A: x = 1;\nendmodule\n", 2),
    ("module m;\n  end\nendmodule\n", 2),
])
def test_unbalanced_blocks(text, line):
    with pytest.raises(LintParseError) as exc:
        extract_lint_model(text)
    assert exc.value.line == line


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=400))
def test_random_bytes_total(data):
    try:
        model = extract_lint_model(data)
    except LintParseError:
        return
    lint(model)


TOKENS = ["module m;", "endmodule", "begin", "end", "case (state)", "endcase", "default: ;",
          "localparam [1:0] A = 2'b01;", "A: x = 1;", "if (!rst_n) s <= A;", "x = y;", "//c"]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(TOKENS), max_size=25))
def test_token_soup_total(lines):
    try:
        lint(extract_lint_model("\n".join(lines)))
    except LintParseError:
        pass


def test_rendered_specs():
    for seed in range(300):
        spec = generate_random_spec(seed, 1 + seed % 10, seed % 3)
        text = render_verilog(spec)
        model = extract_lint_model(text)
        width, codes = render_codes(spec)
        assert [p.name for p in model.state_params] == spec.state_ids
        assert {p.width for p in model.state_params} == {width}
        assert lint(model, spec) == [], seed
        assert detectors(lint(extract_lint_model(render_verilog(spec, default_arm=False)), spec)) \
            == ["LINT_MISSING_DEFAULT"]


def test_encoding_injections_reach_lint():
    rng = random.Random(3)
    seen = 0
    for seed in range(200):
        spec = generate_random_spec(seed, 2 + seed % 8, 1 + seed % 2)
        for variant, det in (("weak-hamming", "LINT_WEAK_HAMMING"),
                             ("duplicate-encoding", "LINT_DUPLICATE_ENCODING")):
            mutated, truth = inject(spec, InjectionRecipe.for_variant(variant, rng.randrange(99)))
            found = lint(extract_lint_model(render_verilog(mutated)), mutated)
            assert truth.location in [f.location for f in found if f.detector_id == det]
            seen += 1
    assert seen == 400
