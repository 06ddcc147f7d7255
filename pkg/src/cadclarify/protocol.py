"""Clarification session protocol: states, actions, transitions, cost, reward.

The session is a small finite-horizon decision process. A state holds the
original prompt plus the question/answer history; the deciding agent either
accepts the specification (finalizing it) or asks a batch of clarification
questions, after which the environment supplies one answer per question.
Under the default policy at most one ask round is legal, so every session
finishes in at most two decisions.

No model calls happen here; this module is pure data and transition logic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Union

from .errors import ArityMismatch, IllegalTransition, NonFiniteValue, SchemaViolation
from .jsonio import canonical_json, extract_first_json_object


class AmbiguityKind(str, enum.Enum):
    UNDER_SPECIFIED = "UnderSpecified"
    CONFLICTING = "Conflicting"


@dataclass(frozen=True)
class AmbiguityLabel:
    kind: AmbiguityKind
    note: str = ""


@dataclass(frozen=True)
class Prompt:
    """A natural-language CAD specification with a stable identifier."""

    text: str
    id: str
    ambiguity_labels: tuple[AmbiguityLabel, ...] = ()

    def __post_init__(self):
        if not self.text:
            raise ValueError("prompt text must be non-empty")
        if not self.id:
            raise ValueError("prompt id must be non-empty")


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str

    def __post_init__(self):
        if not self.question:
            raise ValueError("question must be non-empty")


class Phase(str, enum.Enum):
    AWAITING_DECISION = "AwaitingDecision"
    AWAITING_ANSWERS = "AwaitingAnswers"
    FINALIZED = "Finalized"


@dataclass(frozen=True)
class CorrectedSpec:
    """The finalized, self-consistent specification."""

    text: str
    source_session: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError("corrected spec text must be non-empty")


@dataclass(frozen=True)
class Accept:
    """Accept the specification, emitting its standardized form.

    ``misleading`` is False on a first-round direct accept and True on the
    mandatory second-round accept that follows a question round; the flag is
    preserved so serialization round-trips exactly.
    """

    standardized: str
    misleading: bool = False

    def __post_init__(self):
        if not self.standardized:
            raise ValueError("Accept requires non-empty standardized text")


@dataclass(frozen=True)
class Ask:
    questions: tuple[str, ...]

    def __post_init__(self):
        if not self.questions:
            raise ValueError("Ask requires at least one question")
        if any(not q for q in self.questions):
            raise ValueError("Ask questions must be non-empty")


ClarifierAction = Union[Accept, Ask]


@dataclass(frozen=True)
class AnswersSubmitted:
    answers: tuple[str, ...]


class CostMode(str, enum.Enum):
    ROUNDS = "Rounds"
    TOKENS = "Tokens"


@dataclass(frozen=True)
class RewardParams:
    lam: float = 0.0
    cost_mode: CostMode = CostMode.ROUNDS

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@dataclass(frozen=True)
class SessionState:
    """Immutable session snapshot; transitions return a new state."""

    prompt: Prompt
    history: tuple[QAPair, ...] = ()
    phase: Phase = Phase.AWAITING_DECISION
    corrected: CorrectedSpec | None = None
    pending: tuple[str, ...] = ()
    ask_rounds_taken: int = 0
    max_ask_rounds: int = 1

    def __post_init__(self):
        if (self.phase is Phase.FINALIZED) != (self.corrected is not None):
            raise ValueError("Finalized phase iff corrected spec present")
        if self.phase is not Phase.AWAITING_ANSWERS and self.pending:
            raise ValueError("pending questions only while awaiting answers")


def new_session(prompt: Prompt, max_ask_rounds: int = 1) -> SessionState:
    return SessionState(prompt=prompt, max_ask_rounds=max_ask_rounds)


def advance(state: SessionState, event: ClarifierAction | AnswersSubmitted) -> SessionState:
    """Apply one event to the session, returning the successor state.

    Raises IllegalTransition when the event is not legal in the current
    phase (including an Ask beyond the configured round budget) and
    ArityMismatch when submitted answers don't match the pending questions.
    """
    if state.phase is Phase.FINALIZED:
        raise IllegalTransition("session already finalized")

    if isinstance(event, Accept):
        if state.phase is not Phase.AWAITING_DECISION:
            raise IllegalTransition(f"Accept not legal in phase {state.phase.value}")
        return replace(
            state,
            phase=Phase.FINALIZED,
            corrected=CorrectedSpec(text=event.standardized, source_session=""),
        )

    if isinstance(event, Ask):
        if state.phase is not Phase.AWAITING_DECISION:
            raise IllegalTransition(f"Ask not legal in phase {state.phase.value}")
        if state.ask_rounds_taken >= state.max_ask_rounds:
            raise IllegalTransition(
                f"ask round budget exhausted ({state.ask_rounds_taken}/{state.max_ask_rounds})"
            )
        return replace(state, phase=Phase.AWAITING_ANSWERS, pending=tuple(event.questions))

    if isinstance(event, AnswersSubmitted):
        if state.phase is not Phase.AWAITING_ANSWERS:
            raise IllegalTransition(f"answers not legal in phase {state.phase.value}")
        if len(event.answers) != len(state.pending):
            raise ArityMismatch(
                f"{len(event.answers)} answers for {len(state.pending)} questions"
            )
        pairs = tuple(QAPair(q, a) for q, a in zip(state.pending, event.answers))
        return replace(
            state,
            phase=Phase.AWAITING_DECISION,
            history=state.history + pairs,
            pending=(),
            ask_rounds_taken=state.ask_rounds_taken + 1,
        )

    raise IllegalTransition(f"unknown event {event!r}")


def whitespace_tokens(text: str) -> int:
    return len(text.split())


def interaction_cost(history: tuple[QAPair, ...] | list[QAPair], params: RewardParams) -> float:
    """Interaction burden of a history: QA-pair count or whitespace tokens."""
    if params.cost_mode is CostMode.ROUNDS:
        return float(len(history))
    return float(sum(whitespace_tokens(p.question) + whitespace_tokens(p.answer) for p in history))


def reward(cd: float, cost: float, params: RewardParams) -> float:
    """Negative geometric error minus lambda-weighted interaction cost."""
    if not math.isfinite(cd):
        raise NonFiniteValue(f"cd must be finite, got {cd}")
    if not math.isfinite(cost):
        raise NonFiniteValue(f"cost must be finite, got {cost}")
    return -cd - params.lam * cost


# --- clarifier JSON wire shape -------------------------------------------

def validate_clarifier_obj(obj) -> str | None:
    """Check a parsed dict against the clarifier output schema.

    Returns None when valid, otherwise a human-readable error suitable for a
    repair turn. Three shapes are legal:
      {"is_misleading": false, "standardized_prompt": <non-empty str>}
      {"is_misleading": true,  "questions": [<non-empty str>, ...]}
      {"is_misleading": true,  "standardized_prompt": <non-empty str>}
    The third is the mandatory second-round accept after a question round.
    """
    if not isinstance(obj, dict):
        return "reply must be a JSON object"
    if "is_misleading" not in obj:
        return 'missing required key "is_misleading"'
    flag = obj["is_misleading"]
    if not isinstance(flag, bool):
        return '"is_misleading" must be a boolean'
    questions = obj.get("questions")
    standardized = obj.get("standardized_prompt")
    if not flag:
        if questions is not None:
            return 'a clear prompt must not carry "questions"'
        if not isinstance(standardized, str) or not standardized.strip():
            return '"standardized_prompt" must be a non-empty string'
        return None
    if questions is not None:
        if not isinstance(questions, list) or not questions:
            return '"questions" must be a non-empty list'
        if any(not isinstance(q, str) or not q.strip() for q in questions):
            return "every question must be a non-empty string"
        return None
    if isinstance(standardized, str) and standardized.strip():
        return None
    return 'misleading reply must carry "questions" or "standardized_prompt"'


def clarifier_action_from_obj(obj: dict) -> ClarifierAction:
    err = validate_clarifier_obj(obj)
    if err is not None:
        raise SchemaViolation(err)
    if not obj["is_misleading"]:
        return Accept(standardized=obj["standardized_prompt"], misleading=False)
    if "questions" in obj and obj["questions"] is not None:
        return Ask(questions=tuple(obj["questions"]))
    return Accept(standardized=obj["standardized_prompt"], misleading=True)


def parse_clarifier_output(raw: str) -> ClarifierAction:
    """Strictly parse a clarifier reply, tolerating prose/fence wrapping."""
    obj = extract_first_json_object(raw)
    if obj is None:
        raise SchemaViolation("no JSON object found in reply")
    return clarifier_action_from_obj(obj)


def serialize_clarifier_action(action: ClarifierAction) -> str:
    if isinstance(action, Accept):
        return canonical_json(
            {"is_misleading": action.misleading, "standardized_prompt": action.standardized}
        )
    return canonical_json({"is_misleading": True, "questions": list(action.questions)})


# --- canonical session serialization --------------------------------------

def session_to_dict(session_id: str, state: SessionState, timestamps: dict | None = None) -> dict:
    return {
        "id": session_id,
        "prompt": {
            "text": state.prompt.text,
            "id": state.prompt.id,
            "ambiguity_labels": [
                {"kind": lb.kind.value, "note": lb.note} for lb in state.prompt.ambiguity_labels
            ],
        },
        "history": [{"question": p.question, "answer": p.answer} for p in state.history],
        "phase": state.phase.value,
        "corrected": None
        if state.corrected is None
        else {"text": state.corrected.text, "source_session": state.corrected.source_session},
        "pending": list(state.pending),
        "ask_rounds_taken": state.ask_rounds_taken,
        "max_ask_rounds": state.max_ask_rounds,
        "timestamps": timestamps or {},
    }


def session_from_dict(obj: dict) -> tuple[str, SessionState]:
    prompt = Prompt(
        text=obj["prompt"]["text"],
        id=obj["prompt"]["id"],
        ambiguity_labels=tuple(
            AmbiguityLabel(kind=AmbiguityKind(lb["kind"]), note=lb.get("note", ""))
            for lb in obj["prompt"].get("ambiguity_labels", [])
        ),
    )
    corrected = obj.get("corrected")
    state = SessionState(
        prompt=prompt,
        history=tuple(QAPair(p["question"], p["answer"]) for p in obj.get("history", [])),
        phase=Phase(obj["phase"]),
        corrected=None
        if corrected is None
        else CorrectedSpec(corrected["text"], corrected.get("source_session", "")),
        pending=tuple(obj.get("pending", [])),
        ask_rounds_taken=obj.get("ask_rounds_taken", 0),
        max_ask_rounds=obj.get("max_ask_rounds", 1),
    )
    return obj["id"], state
