"""Agent role tests over scripted backends, plus the two-agent pipeline."""

from __future__ import annotations

import json

import pytest

from cadclarify.agents import (
    AgentEndpoints,
    PromptRecord,
    PromptTemplate,
    RunSettings,
    TemplateRegistry,
    clarify,
    finalize_spec,
    generate_code,
    lint_program,
    parse_answer_list,
    run_two_agent,
    simulate_user,
)
from cadclarify.errors import ArityMismatch, SchemaViolation, TemplateError
from cadclarify.execution import ExecutorClient
from cadclarify.gateway import Endpoint, Gateway, ScriptedBackend, ScriptedReply
from cadclarify.geometry import TriMesh
from cadclarify.protocol import Accept, Ask, CorrectedSpec, Phase, Prompt
from conftest import MOCK_WORKER, make_cylinder_mesh

EP = Endpoint(base_url="scripted://", model_name="scripted")
ENDPOINTS = AgentEndpoints(clarifier=EP, coder=EP, user_sim=EP)


def gw_with(*replies: str) -> Gateway:
    return Gateway(
        backend=ScriptedBackend([ScriptedReply(reply=r) for r in replies]), backoff_base=0.0
    )


@pytest.fixture(scope="module")
def templates() -> TemplateRegistry:
    return TemplateRegistry()


def accept_json(text: str, misleading: bool = False) -> str:
    return json.dumps({"is_misleading": misleading, "standardized_prompt": text})


def ask_json(*questions: str) -> str:
    return json.dumps({"is_misleading": True, "questions": list(questions)})


# --- clarify ---------------------------------------------------------------

def test_clarify_accept_is_identity(templates):
    p = Prompt(text="a 10x10x10 cube", id="c1")
    gw = gw_with(accept_json(p.text))
    action = clarify(p, gw, EP, templates.get("clarifier"))
    assert action == Accept(p.text)
    assert action.standardized == p.text  # unambiguous path passes through


def test_clarify_ask(templates):
    gw = gw_with(ask_json("What radius?"))
    action = clarify(Prompt("a cylinder", "c2"), gw, EP, templates.get("clarifier"))
    assert action == Ask(("What radius?",))


def test_clarify_malformed_twice_surfaces_transcript(templates):
    gw = gw_with("garbage", "more garbage")
    with pytest.raises(SchemaViolation) as err:
        clarify(Prompt("a part", "c3"), gw, EP, templates.get("clarifier"))
    assert err.value.transcript is not None
    assert len(err.value.transcript) == 2


# --- finalize_spec ----------------------------------------------------------

def test_finalize_spec_happy_path(templates):
    corrected = (
        "a solid cylinder of radius 19 and length 200 on the XY workplane "
        "with origin shifted to (-19, 0, -100)"
    )
    gw = gw_with(accept_json(corrected, misleading=True))
    spec = finalize_spec(
        Prompt("an ambiguous cylinder", "c4"),
        ["What are the coordinates of the shifted workplane origin?", "What radius?"],
        ["Shifted workplane origin: (-19, 0, -100).", "Circle radius: 19."],
        gw, EP, templates.get("clarifier"),
    )
    assert "(-19, 0, -100)" in spec.text
    assert "19" in spec.text


def test_finalize_spec_rejects_ask_shaped_reply(templates):
    gw = gw_with(ask_json("another question?"), ask_json("yet another?"))
    with pytest.raises(SchemaViolation):
        finalize_spec(Prompt("p", "c5"), ["q"], ["a"], gw, EP, templates.get("clarifier"))


def test_finalize_spec_preconditions(templates):
    gw = gw_with()
    with pytest.raises(ValueError):
        finalize_spec(Prompt("p", "c6"), [], [], gw, EP, templates.get("clarifier"))
    with pytest.raises(ArityMismatch):
        finalize_spec(Prompt("p", "c7"), ["q1", "q2"], ["a1"], gw, EP, templates.get("clarifier"))


# --- generate_code -----------------------------------------------------------

def test_generate_code_strips_fences(templates):
    reply = "```python\nimport cadquery as cq\nr = cq.Workplane('XY').box(1, 1, 1)\n```"
    gw = gw_with(reply)
    program = generate_code(CorrectedSpec("a unit cube"), gw, EP, templates.get("coder"))
    assert program.text.startswith("import cadquery as cq")
    assert program.lints == ()


def test_generate_code_lints_missing_result_variable(templates):
    gw = gw_with("import cadquery as cq\nresult = cq.Workplane('XY').box(1, 1, 1)")
    program = generate_code(CorrectedSpec("a cube"), gw, EP, templates.get("coder"))
    assert "missing-result-variable" in program.lints


def test_lint_program_missing_import():
    assert "missing-cadquery-import" in lint_program("r = 1")
    assert lint_program("import cadquery as cq\nr = cq.Workplane('XY')") == ()


# --- simulate_user -----------------------------------------------------------

def test_simulate_user_two_answers(templates):
    gw = gw_with("1. Shifted workplane origin: (-19, 0, -100).\n2. Circle radius: 19.")
    answers, style = simulate_user(
        Prompt("cylinder radius 19 at origin (-19, 0, -100)", "gt"),
        Prompt("a cylinder", "mis"),
        ["Where is the origin?", "What radius?"],
        gw, EP, templates.get("user_sim"),
    )
    assert len(answers) == 2
    assert style == "numbered"
    assert "19" in answers[1]


def test_simulate_user_repair_then_arity_mismatch(templates):
    gw = gw_with("only one answer", "still a single line")
    with pytest.raises(ArityMismatch):
        simulate_user(
            Prompt("gt", "gt"), Prompt("mis", "mis"),
            ["q1", "q2"], gw, EP, templates.get("user_sim"),
        )


def test_parse_answer_list_styles():
    assert parse_answer_list("1. a\n2. b", 2)[0] == ["a", "b"]
    assert parse_answer_list("- a\n- b", 2)[0] == ["a", "b"]
    assert parse_answer_list("alpha\nbeta", 2)[0] == ["alpha", "beta"]
    answers, style = parse_answer_list("The radius is 19.", 1)
    assert answers == ["The radius is 19."] and style == "lines"
    answers, style = parse_answer_list("The radius\nis 19.", 1)
    assert answers == ["The radius is 19."] and style == "prose"
    with pytest.raises(ArityMismatch):
        parse_answer_list("a\nb\nc", 2)


# --- run_two_agent -----------------------------------------------------------

@pytest.fixture
def executor():
    client = ExecutorClient(MOCK_WORKER)
    yield client
    client.close()


def test_run_two_agent_unambiguous(templates, executor):
    prompt_text = "a plate 200 by 150 extruded 7"
    record = PromptRecord(prompt=Prompt(prompt_text, "u1"))
    gw = gw_with(accept_json(prompt_text), "r = box(200, 150, 7)")
    traj = run_two_agent(record, gw, ENDPOINTS, templates, executor)
    assert traj.session.phase is Phase.FINALIZED
    assert traj.rounds == 0
    assert traj.session.corrected.text == prompt_text
    assert traj.validity.valid
    assert traj.failure is None


def test_run_two_agent_full_loop(templates, executor):
    gt_text = "a solid cylinder of radius 19 and length 200 centered at (0, 0, -100)"
    record = PromptRecord(
        prompt=Prompt("a solid cylinder of length 200 (radius unstated)", "u2"),
        ground_truth_text=gt_text,
        truly_ambiguous=True,
    )
    corrected = "a solid cylinder of radius 19 and length 200 centered at (0, 0, -100)"
    gw = gw_with(
        ask_json("What radius should the cylinder have?"),
        "1. Circle radius: 19.",
        accept_json(corrected, misleading=True),
        "r = cylinder(19, 200, center=(0, 0, -100))",
    )
    gt_mesh = TriMesh(*make_cylinder_mesh(19, 200, center=(0, 0, -100)))
    traj = run_two_agent(
        record, gw, ENDPOINTS, templates, executor,
        RunSettings(sample_count=2048, seed=7), reference_mesh=gt_mesh,
    )
    assert traj.session.phase is Phase.FINALIZED
    assert traj.rounds == 1
    assert "19" in traj.session.corrected.text
    assert traj.validity.valid
    assert traj.metrics is not None
    assert traj.metrics.value < 2e-4  # matches the reference geometry
    # the corrected spec is fed verbatim to the coder
    coder_call = gw.transcript.calls[-1]
    assert corrected in coder_call.messages[-1]["content"]


def test_run_two_agent_coder_error_counts_invalid(templates, executor):
    record = PromptRecord(prompt=Prompt("a cube", "u3"))
    gw = gw_with(accept_json("a cube"))  # script exhausted at the coder call
    traj = run_two_agent(record, gw, ENDPOINTS, templates, executor)
    assert traj.program is None
    assert traj.failure is not None and traj.failure[0] == "generate_code"
    assert traj.validity is not None and not traj.validity.valid


def test_run_two_agent_deterministic_under_scripts(templates, executor):
    record = PromptRecord(prompt=Prompt("a plate", "u4"))

    def run():
        gw = gw_with(accept_json("a plate"), "r = box(2, 2, 2)")
        t = run_two_agent(record, gw, ENDPOINTS, templates, executor)
        return (t.session, t.program.text, t.validity, [c.reply for c in gw.transcript.calls])

    assert run() == run()


# --- templates ---------------------------------------------------------------

def test_template_registry_manifest_stable(templates):
    manifest = templates.manifest()
    assert set(manifest) >= {"clarifier", "coder", "user_sim", "describe", "perturb"}
    assert manifest == TemplateRegistry().manifest()


def test_template_unfilled_slot_raises():
    t = PromptTemplate("demo", "sys", "hello {{name}}")
    with pytest.raises(TemplateError):
        t.render(other="x")
    assert t.render(name="world")[1].content == "hello world"


def test_template_registry_unknown_role(templates):
    with pytest.raises(TemplateError):
        templates.get("nonexistent")
