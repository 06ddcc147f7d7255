"""Agent roles over the gateway: clarifier, coder, user simulator, pipeline.

Each role is a prompt template rendered into a system+user message pair and
sent through the gateway; templates live in versioned text assets so prompt
ablations never require code changes. ``run_two_agent`` strings the roles
together into a full trajectory: decide, optionally ask/answer, finalize,
generate code, execute, measure.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ArityMismatch, TemplateError
from .execution import DEFAULT_TIMEOUT, ExecOutcome
from .gateway import ChatMessage, Endpoint, Gateway, assistant, system, user
from .geometry import ChamferResult, TriMesh, ValidityVerdict, classify_validity, mesh_chamfer
from .jsonio import strip_code_fences
from .protocol import (
    Accept,
    AnswersSubmitted,
    Ask,
    ClarifierAction,
    CorrectedSpec,
    Prompt,
    SessionState,
    advance,
    clarifier_action_from_obj,
    new_session,
    serialize_clarifier_action,
    validate_clarifier_obj,
)

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")
TEMPLATES_DIR = Path(__file__).parent / "templates"
CADQUERY_IMPORT = "import cadquery as cq"


@dataclass(frozen=True)
class PromptTemplate:
    role_name: str
    system_text: str
    user_layout: str

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.system_text.encode("utf-8"))
        h.update(b"\0")
        h.update(self.user_layout.encode("utf-8"))
        return h.hexdigest()[:16]

    def render(self, **slots) -> list[ChatMessage]:
        """System + user message pair; every placeholder must be filled."""

        def fill(text: str) -> str:
            def sub(match):
                name = match.group(1)
                if name not in slots:
                    raise TemplateError(f"{self.role_name}: unfilled slot {{{{{name}}}}}")
                return str(slots[name])

            return _SLOT_RE.sub(sub, text)

        return [system(fill(self.system_text)), user(fill(self.user_layout))]


class TemplateRegistry:
    """Loads role templates from a directory holding registry.json."""

    def __init__(self, directory: str | Path = TEMPLATES_DIR):
        self.directory = Path(directory)
        registry_path = self.directory / "registry.json"
        if not registry_path.exists():
            raise TemplateError(f"no registry.json under {self.directory}")
        mapping = json.loads(registry_path.read_text(encoding="utf-8"))
        self._templates: dict[str, PromptTemplate] = {}
        for role, entry in mapping.items():
            system_text = (self.directory / entry["system"]).read_text(encoding="utf-8").strip()
            user_layout = (self.directory / entry["user"]).read_text(encoding="utf-8").strip()
            self._templates[role] = PromptTemplate(role, system_text, user_layout)

    def get(self, role: str) -> PromptTemplate:
        if role not in self._templates:
            raise TemplateError(f"unknown template role {role!r}")
        return self._templates[role]

    def manifest(self) -> dict[str, str]:
        return {role: t.content_hash for role, t in sorted(self._templates.items())}


@dataclass(frozen=True)
class CadProgram:
    """Generated program text plus lint flags and execution outcome."""

    text: str
    lints: tuple[str, ...] = ()
    execution: ExecOutcome | None = None


@dataclass(frozen=True)
class PromptRecord:
    """An evaluation sample: the user-visible prompt plus provenance."""

    prompt: Prompt
    ground_truth_text: str | None = None
    ground_truth_program: str | None = None
    ground_truth_questions: tuple[str, ...] = ()
    truly_ambiguous: bool = False


@dataclass(frozen=True)
class Trajectory:
    record: PromptRecord
    session: SessionState
    program: CadProgram | None
    validity: ValidityVerdict | None
    metrics: ChamferResult | None
    wall_time: float
    transcript_range: tuple[int, int]
    failure: tuple[str, str] | None = None  # (stage, message)
    notes: tuple[str, ...] = ()

    @property
    def rounds(self) -> int:
        return len(self.session.history)


def clarify(prompt: Prompt, gw: Gateway, endpoint: Endpoint, template: PromptTemplate) -> ClarifierAction:
    """First-round decision: Accept the prompt or Ask targeted questions."""
    messages = template.render(prompt=prompt.text)
    obj = gw.complete_json(endpoint, messages, validate_clarifier_obj)
    return clarifier_action_from_obj(obj)


def _numbered(items) -> str:
    return "\n".join(f"{i + 1}. {text}" for i, text in enumerate(items))


def finalize_spec(
    prompt: Prompt,
    questions: list[str] | tuple[str, ...],
    answers: list[str] | tuple[str, ...],
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
) -> CorrectedSpec:
    """Second-round call: must accept and emit the corrected specification."""
    if not questions:
        raise ValueError("finalize_spec needs at least one question")
    if len(questions) != len(answers):
        raise ArityMismatch(f"{len(answers)} answers for {len(questions)} questions")

    def accept_only(obj) -> str | None:
        err = validate_clarifier_obj(obj)
        if err is not None:
            return err
        if obj.get("questions"):
            return "the second round must accept: reply with a standardized_prompt, not questions"
        return None

    messages = template.render(prompt=prompt.text)
    messages.append(assistant(serialize_clarifier_action(Ask(tuple(questions)))))
    messages.append(user("Answers to your questions:\n" + _numbered(answers)))
    obj = gw.complete_json(endpoint, messages, accept_only)
    return CorrectedSpec(text=obj["standardized_prompt"], source_session=prompt.id)


def lint_program(text: str) -> tuple[str, ...]:
    """Static checks; advisory only, the executor is the ground truth."""
    lints = []
    first_line = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    if not first_line.startswith(CADQUERY_IMPORT):
        lints.append("missing-cadquery-import")
    if not re.search(r"^\s*r\s*=", text, flags=re.MULTILINE):
        lints.append("missing-result-variable")
    return tuple(lints)


def generate_code(spec: CorrectedSpec, gw: Gateway, endpoint: Endpoint, template: PromptTemplate) -> CadProgram:
    if not spec.text:
        raise ValueError("spec must be non-empty")
    reply = gw.complete(endpoint, template.render(spec=spec.text))
    text = strip_code_fences(reply)
    return CadProgram(text=text, lints=lint_program(text))


_ANSWER_LINE = re.compile(r"^\s*(?:(\d+)[.)]\s*|[-*]\s+)(.*\S)\s*$")


def parse_answer_list(reply: str, n: int) -> tuple[list[str], str]:
    """Extract n answers from a simulator reply.

    Accepts a numbered list, a bullet list, or exactly n non-empty lines;
    returns the answers plus the style that matched so callers can flag
    lenient parses.
    """
    numbered: list[str] = []
    bullets: list[str] = []
    plain: list[str] = []
    for line in reply.splitlines():
        if not line.strip():
            continue
        m = _ANSWER_LINE.match(line)
        if m and m.group(1):
            numbered.append(m.group(2))
        elif m:
            bullets.append(m.group(2))
        plain.append(line.strip())
    if len(numbered) == n:
        return numbered, "numbered"
    if len(bullets) == n:
        return bullets, "bullets"
    if len(plain) == n:
        return plain, "lines"
    if n == 1 and reply.strip():
        return [" ".join(reply.split())], "prose"
    raise ArityMismatch(f"could not extract {n} answers from reply")


def simulate_user(
    ground_truth: Prompt,
    misleading: Prompt,
    questions: list[str] | tuple[str, ...],
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
) -> tuple[list[str], str]:
    """Answer each question from the ground truth; one answer per question."""
    if not questions:
        raise ValueError("simulate_user needs at least one question")
    messages = template.render(
        ground_truth=ground_truth.text,
        misleading=misleading.text,
        questions=_numbered(questions),
    )
    reply = gw.complete(endpoint, messages)
    try:
        return parse_answer_list(reply, len(questions))
    except ArityMismatch:
        repair = messages + [
            assistant(reply),
            user(
                f"Your reply did not contain exactly {len(questions)} answers. "
                f"Reply again with a numbered list of exactly {len(questions)} answers, "
                "one per question, in order."
            ),
        ]
        reply2 = gw.complete(endpoint, repair)
        return parse_answer_list(reply2, len(questions))


@dataclass(frozen=True)
class AgentEndpoints:
    clarifier: Endpoint
    coder: Endpoint
    user_sim: Endpoint


@dataclass(frozen=True)
class RunSettings:
    sample_count: int = 8192
    seed: int = 0
    execution_timeout: float = DEFAULT_TIMEOUT
    max_ask_rounds: int = 1


def run_two_agent(
    record: PromptRecord,
    gw: Gateway,
    endpoints: AgentEndpoints,
    templates: TemplateRegistry,
    executor,
    settings: RunSettings = RunSettings(),
    reference_mesh: TriMesh | None = None,
) -> Trajectory:
    """Full trajectory: clarify -> (simulate/answer) -> finalize -> code -> mesh.

    Stage failures never raise; they are recorded on the trajectory so
    invalidity accounting sees them. The corrected spec is handed to the
    coder verbatim.
    """
    start = time.monotonic()
    transcript_start = len(gw.transcript)
    state = new_session(record.prompt, max_ask_rounds=settings.max_ask_rounds)
    notes: list[str] = []
    program: CadProgram | None = None
    validity: ValidityVerdict | None = None
    metrics: ChamferResult | None = None
    failure: tuple[str, str] | None = None

    def finish() -> Trajectory:
        return Trajectory(
            record=record,
            session=state,
            program=program,
            validity=validity,
            metrics=metrics,
            wall_time=time.monotonic() - start,
            transcript_range=(transcript_start, len(gw.transcript)),
            failure=failure,
            notes=tuple(notes),
        )

    try:
        action = clarify(record.prompt, gw, endpoints.clarifier, templates.get("clarifier"))
    except Exception as exc:
        failure = ("clarify", str(exc))
        validity = ValidityVerdict(valid=False, failure_kind="ExecutionError")
        return finish()

    try:
        if isinstance(action, Ask):
            state = advance(state, action)
            gt = Prompt(text=record.ground_truth_text, id=record.prompt.id + ":gt") \
                if record.ground_truth_text else record.prompt
            answers, style = simulate_user(
                gt, record.prompt, action.questions, gw, endpoints.user_sim, templates.get("user_sim")
            )
            if style != "numbered":
                notes.append(f"lenient-answer-parse:{style}")
            state = advance(state, AnswersSubmitted(tuple(answers)))
            corrected = finalize_spec(
                record.prompt, action.questions, answers, gw, endpoints.clarifier,
                templates.get("clarifier"),
            )
            state = advance(state, Accept(corrected.text, misleading=True))
        else:
            state = advance(state, action)
    except Exception as exc:
        failure = ("clarification-loop", str(exc))
        validity = ValidityVerdict(valid=False, failure_kind="ExecutionError")
        return finish()

    try:
        program = generate_code(
            CorrectedSpec(state.corrected.text, record.prompt.id), gw, endpoints.coder,
            templates.get("coder"),
        )
    except Exception as exc:
        failure = ("generate_code", str(exc))
        validity = ValidityVerdict(valid=False, failure_kind="ExecutionError")
        return finish()

    outcome = executor.execute(program.text, settings.execution_timeout)
    program = replace(program, execution=outcome)
    validity = classify_validity(outcome.status, outcome.mesh)

    if validity.valid and reference_mesh is not None:
        metrics = mesh_chamfer(
            reference_mesh, outcome.mesh, n=settings.sample_count, seed=settings.seed
        )
    return finish()
