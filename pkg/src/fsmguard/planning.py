"""Five-section code-generation template and the security prompt built on it.

The template wording and the worked example in the preamble are written
for this project; they are fixed text so prompts are byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

from fsmguard.expr import format_expr
from fsmguard.model import MOORE, FsmSpec, min_register_width
from fsmguard.retrieval import CODEGEN_AUDIENCE, KnowledgeBundle

SECTION_TITLES = (
    "Input-Output Interface",
    "State Encoding and Associated Declarations",
    "State Transition Logic",
    "State Update Logic",
    "State Output Logic",
)

PREAMBLE = """\
You are an RTL engineer. Write one synthesizable Verilog-2001 module that
implements the finite state machine described below. Follow the security
knowledge exactly; it lists weaknesses that were found in this design.

Worked example (style only, not part of this design):
  localparam [1:0] IDLE = 2'b00, RUN = 2'b11;
  always @(*) begin
    next_state = state;
    case (state)
      IDLE: if (start) next_state = RUN;
      RUN:  if (stop)  next_state = IDLE;
      default: next_state = IDLE;
    endcase
  end
  always @(posedge clk or negedge rst_n)
    if (!rst_n) state <= IDLE; else state <= next_state;
"""

NO_CODEGEN_KNOWLEDGE = "No coding-stage security knowledge applies to this design."


@dataclass(frozen=True)
class PromptTemplate:
    io_interface: str
    state_encoding: str
    transition_logic: str
    update_logic: str
    output_logic: str

    @property
    def sections(self) -> tuple[str, str, str, str, str]:
        return (self.io_interface, self.state_encoding, self.transition_logic,
                self.update_logic, self.output_logic)

    def render(self) -> str:
        parts = []
        for i, (title, body) in enumerate(zip(SECTION_TITLES, self.sections), 1):
            parts.append(f"### Section {i}: {title}\n{body.rstrip()}\n")
        return "\n".join(parts)


@dataclass(frozen=True)
class SecurityPrompt:
    template: PromptTemplate
    security_knowledge: str
    preamble: str = PREAMBLE

    def render(self) -> str:
        return (
            f"{self.preamble.rstrip()}\n\n"
            f"## Security knowledge\n{self.security_knowledge.rstrip()}\n\n"
            f"## Design plan\n{self.template.render()}"
        )


def build_template(spec: FsmSpec) -> PromptTemplate:
    io = ["Module name: " + spec.name,
          "- input clk (1 bit): clock",
          "- input rst_n (1 bit): active-low reset"]
    io += [f"- input {s.id} ({s.width} bit{'s' if s.width > 1 else ''})" for s in spec.inputs]
    io += [f"- output {s.id} ({s.width} bit{'s' if s.width > 1 else ''})" for s in spec.outputs]

    if spec.encoded:
        w = spec.register_width
        enc = [f"State register: reg [{w - 1}:0] state, next_state;"]
        enc += [f"localparam [{w - 1}:0] {s.id} = {s.encoding};" for s in spec.states]
    else:
        w = spec.register_width or min_register_width(len(spec.states))
        enc = [f"State register width: {w} bits ({len(spec.states)} states)."]
        enc += [f"- state {s.id}" for s in spec.states]
    protected = [s.id for s in spec.states if s.protected]
    if protected:
        enc.append("Protected states: " + ", ".join(protected))

    trans = ["Combinational next-state logic (always @(*)), next_state defaults to state:"]
    trans += [f"- {t.src} -> {t.dst} when {format_expr(t.guard)}" for t in spec.transitions]
    if not spec.transitions:
        trans.append("- (no transitions: the machine stays in its reset state)")

    update = [
        "Registered update in a separate sequential block:",
        "always @(posedge clk or negedge rst_n)",
        f"  if (!rst_n) state <= {spec.reset_state};",
        "  else state <= next_state;",
        f"Reset state: {spec.reset_state}",
    ]

    if spec.kind == MOORE:
        outs = ["Moore outputs (depend on the current state only):"]
    else:
        outs = ["Mealy outputs (depend on the current state and the inputs):"]
    assigned = False
    for s in spec.states:
        for o, e in s.outputs:
            outs.append(f"- in {s.id}: {o} = {format_expr(e)}")
            assigned = True
    if not assigned:
        outs.append("- (no outputs are driven)")
    elif spec.outputs:
        outs.append("Outputs not listed for a state are driven to 0.")

    return PromptTemplate(*("\n".join(x) for x in (io, enc, trans, update, outs)))


def render_codegen_knowledge(k_c: KnowledgeBundle) -> str:
    if not k_c.items:
        return NO_CODEGEN_KNOWLEDGE
    by_vuln: dict[str, list] = {}
    for item in k_c.items:
        by_vuln.setdefault(item.finding.vuln_id, []).append(item)
    lines = []
    for vuln_id in sorted(by_vuln):
        items = by_vuln[vuln_id]
        k = items[0].knowledge
        lines.append(f"### {vuln_id}: {k.description}")
        for item in items:
            lines.append(f"- location `{item.finding.location}`: {item.finding.evidence}")
        for s in k.suggestions:
            lines.append(f"- Suggestion: {s.text}")
            lines += [f"  - How: {m}" for m in s.manners]
        lines += [f"- Good example: {x}" for x in k.good_examples]
        lines += [f"- Bad example (avoid): {x}" for x in k.bad_examples]
        lines.append("")
    return "\n".join(lines)


def assemble_security_prompt(p: PromptTemplate, k_c: KnowledgeBundle) -> SecurityPrompt:
    if k_c.audience != CODEGEN_AUDIENCE:
        raise ValueError(f"expected a code-generation bundle, got {k_c.audience!r}")
    return SecurityPrompt(template=p, security_knowledge=render_codegen_knowledge(k_c))
