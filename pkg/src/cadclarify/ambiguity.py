"""Ambiguous-prompt manufacturing and SFT supervision emission.

A generator model rewrites a verified specification into a plausible but
ambiguous request, documenting exactly K planted issues across five fixed
sections. Records then pass a self-refine step, the three harm-selection
rules (reference CD below threshold, perturbed CD above it, degradation
ratio at least 10), dataset balancing against an unambiguous pool, and
finally emission as chat-format supervision records for external
fine-tuning.
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, replace

from .agents import PromptTemplate
from .errors import FormatViolation, InsufficientPool
from .gateway import Endpoint, Gateway, assistant, user
from .geometry import TriMesh, mesh_chamfer
from .jsonio import canonical_json, strip_code_fences
from .protocol import AmbiguityKind, parse_clarifier_output

logger = logging.getLogger(__name__)

SELECTION_CD_THRESHOLD = 2e-4
SELECTION_MIN_RATIO = 10.0

SECTION_HEADERS = (
    "MISLEADING_DESCRIPTION",
    "WHAT_I_CHANGED",
    "AMBIGUITY SCAN",
    "QUESTIONS_TO_ASK",
    "ANSWER_TO_QUESTIONS",
)

_TYPE_ALIASES = {
    "under-specified": AmbiguityKind.UNDER_SPECIFIED,
    "underspecified": AmbiguityKind.UNDER_SPECIFIED,
    "under specified": AmbiguityKind.UNDER_SPECIFIED,
    "conflicting": AmbiguityKind.CONFLICTING,
    "inconsistent": AmbiguityKind.CONFLICTING,
}

TYPE_WIRE_NAMES = {
    AmbiguityKind.UNDER_SPECIFIED: "under-specified",
    AmbiguityKind.CONFLICTING: "conflicting",
}


@dataclass(frozen=True)
class Change:
    kind: AmbiguityKind
    quote: str
    why: str


@dataclass(frozen=True)
class ScanItem:
    trigger_phrase: str
    why_unclear: str


@dataclass(frozen=True)
class PerturbedRecord:
    right_prompt: str
    misleading: str
    changes: tuple[Change, ...]
    scan: tuple[ScanItem, ...]
    questions: tuple[str, ...]
    answers: tuple[str, ...]
    refine_failed: bool = False

    def __post_init__(self):
        k = len(self.changes)
        if not (len(self.scan) == len(self.questions) == len(self.answers) == k):
            raise ValueError(
                f"section arity mismatch: changes={k} scan={len(self.scan)} "
                f"questions={len(self.questions)} answers={len(self.answers)}"
            )

    @property
    def k(self) -> int:
        return len(self.changes)

    @property
    def kinds(self) -> tuple[AmbiguityKind, ...]:
        return tuple(c.kind for c in self.changes)


# --- five-section parsing ----------------------------------------------------

_HEADER_RES = {
    h: re.compile(rf"^\s*(?:\d+\)\s*)?{re.escape(h)}\b.*$", re.MULTILINE) for h in SECTION_HEADERS
}
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _split_sections(text: str) -> dict[str, str]:
    spans: list[tuple[int, int, str]] = []
    for header in SECTION_HEADERS:
        m = _HEADER_RES[header].search(text)
        if not m:
            raise FormatViolation(f"missing section header {header!r}")
        spans.append((m.start(), m.end(), header))
    spans.sort()
    if [s[2] for s in spans] != list(SECTION_HEADERS):
        raise FormatViolation("section headers out of order")
    bodies: dict[str, str] = {}
    for i, (_, end, header) in enumerate(spans):
        stop = spans[i + 1][0] if i + 1 < len(spans) else len(text)
        bodies[header] = text[end:stop].strip()
    return bodies


def _bullets(body: str) -> list[str]:
    items = [m.group(1) for m in (_BULLET_RE.match(ln) for ln in body.splitlines()) if m]
    if items:
        return items
    return [ln.strip() for ln in body.splitlines() if ln.strip()]


def _kind_of(bullet: str, allowed: tuple[AmbiguityKind, ...]) -> AmbiguityKind:
    low = bullet.lower()
    for alias, kind in _TYPE_ALIASES.items():
        if alias in low and kind in allowed:
            return kind
    raise FormatViolation(f"bullet names no allowed ambiguity type: {bullet!r}")


_QUOTE_RE = re.compile(r'"([^"]+)"|“([^”]+)”|\'([^\']{2,})\'')


def _quoted(bullet: str) -> str:
    m = _QUOTE_RE.search(bullet)
    if m:
        return next(g for g in m.groups() if g)
    return bullet


def _scan_items(body: str) -> list[ScanItem]:
    triggers = re.findall(r"Trigger phrase:\s*(.+)", body)
    whys = re.findall(r"Why it'?s unclear:\s*(.+)", body)
    if triggers and len(triggers) == len(whys):
        return [
            ScanItem(_quoted(t.strip()) if '"' in t else t.strip().strip('"'), w.strip())
            for t, w in zip(triggers, whys)
        ]
    raise FormatViolation("AMBIGUITY SCAN items must pair a trigger phrase with a reason")


def parse_five_sections(
    text: str, k: int, allowed_types: tuple[AmbiguityKind, ...], right_prompt: str
) -> PerturbedRecord:
    """Parse the generator's five-section reply and enforce all arities."""
    bodies = _split_sections(text)
    misleading = bodies["MISLEADING_DESCRIPTION"].strip()
    if not misleading:
        raise FormatViolation("MISLEADING_DESCRIPTION is empty")
    change_bullets = _bullets(bodies["WHAT_I_CHANGED"])
    if len(change_bullets) != k:
        raise FormatViolation(f"WHAT_I_CHANGED must list exactly {k} bullets, got {len(change_bullets)}")
    changes = tuple(
        Change(kind=_kind_of(b, allowed_types), quote=_quoted(b), why=b) for b in change_bullets
    )
    scan = tuple(_scan_items(bodies["AMBIGUITY SCAN"]))
    if len(scan) != k:
        raise FormatViolation(f"AMBIGUITY SCAN must list exactly {k} items, got {len(scan)}")
    questions = tuple(_bullets(bodies["QUESTIONS_TO_ASK"]))
    if len(questions) != k:
        raise FormatViolation(f"QUESTIONS_TO_ASK must list exactly {k} questions, got {len(questions)}")
    answers = tuple(_bullets(bodies["ANSWER_TO_QUESTIONS"]))
    if len(answers) != k:
        raise FormatViolation(f"ANSWER_TO_QUESTIONS must list exactly {k} answers, got {len(answers)}")
    record = PerturbedRecord(
        right_prompt=right_prompt,
        misleading=misleading,
        changes=changes,
        scan=scan,
        questions=questions,
        answers=answers,
    )
    violations = numeric_preservation_violations(record)
    if violations:
        raise FormatViolation(
            "numbers altered outside declared changes: " + ", ".join(violations)
        )
    return record


def numeric_preservation_violations(record: PerturbedRecord) -> list[str]:
    """Numbers in the right prompt that vanished without being declared.

    A number is declared when it appears in any change's quote or
    why-sentence; every undeclared number must survive verbatim in the
    misleading text.
    """
    declared = set()
    for change in record.changes:
        declared.update(_NUMBER_RE.findall(change.quote))
        declared.update(_NUMBER_RE.findall(change.why))
    present = set(_NUMBER_RE.findall(record.misleading))
    missing = []
    for num in _NUMBER_RE.findall(record.right_prompt):
        if num not in declared and num not in present:
            missing.append(num)
    return sorted(set(missing))


def record_to_json(record: PerturbedRecord) -> dict:
    return {
        "right_prompt": record.right_prompt,
        "misleading": record.misleading,
        "changes": [
            {"type": c.kind.value, "quote": c.quote, "why": c.why} for c in record.changes
        ],
        "scan": [
            {"trigger_phrase": s.trigger_phrase, "why_unclear": s.why_unclear}
            for s in record.scan
        ],
        "questions": list(record.questions),
        "answers": list(record.answers),
        "refine_failed": record.refine_failed,
    }


def record_from_json(obj: dict) -> PerturbedRecord:
    return PerturbedRecord(
        right_prompt=obj["right_prompt"],
        misleading=obj["misleading"],
        changes=tuple(
            Change(AmbiguityKind(c["type"]), c["quote"], c.get("why", "")) for c in obj["changes"]
        ),
        scan=tuple(
            ScanItem(s["trigger_phrase"], s.get("why_unclear", "")) for s in obj["scan"]
        ),
        questions=tuple(obj["questions"]),
        answers=tuple(obj["answers"]),
        refine_failed=obj.get("refine_failed", False),
    )


def _ambiguity_types_text(types: tuple[AmbiguityKind, ...]) -> str:
    return ", ".join(TYPE_WIRE_NAMES[t] for t in types)


def perturb(
    right: str,
    types: tuple[AmbiguityKind, ...],
    k: int,
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
) -> PerturbedRecord:
    """Generate a misleading rewrite with exactly k declared ambiguities.

    One repair turn quotes the parser's complaint (including any missing
    header) back to the generator; a second malformed reply is terminal.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    if not types or any(t not in AmbiguityKind for t in types):
        raise ValueError("types must be a non-empty subset of the ambiguity kinds")
    messages = template.render(
        right_prompt=right, ambiguity_types=_ambiguity_types_text(types), k=k
    )
    reply = gw.complete(endpoint, messages)
    try:
        return parse_five_sections(reply, k, types, right)
    except FormatViolation as first_error:
        repair = messages + [
            assistant(reply),
            user(
                f"Your reply was malformed: {first_error}. Reply again with all five "
                "sections (MISLEADING_DESCRIPTION, WHAT_I_CHANGED, AMBIGUITY SCAN, "
                "QUESTIONS_TO_ASK, ANSWER_TO_QUESTIONS) in order."
            ),
        ]
        reply2 = gw.complete(endpoint, repair)
        return parse_five_sections(reply2, k, types, right)


def render_five_sections(record: PerturbedRecord) -> str:
    """Inverse of the parser, used to feed a record back for refinement."""
    lines = ["1) MISLEADING_DESCRIPTION", record.misleading, "", "2) WHAT_I_CHANGED"]
    for c in record.changes:
        lines.append(f'- {TYPE_WIRE_NAMES[c.kind]}: "{c.quote}" - {c.why}')
    lines += ["", "3) AMBIGUITY SCAN"]
    for s in record.scan:
        lines.append(f'- Trigger phrase: "{s.trigger_phrase}"')
        lines.append(f"  Why it's unclear: {s.why_unclear}")
    lines += ["", "4) QUESTIONS_TO_ASK"]
    for i, q in enumerate(record.questions, 1):
        lines.append(f"{i}. {q}")
    lines += ["", "5) ANSWER_TO_QUESTIONS"]
    for i, a in enumerate(record.answers, 1):
        lines.append(f"{i}. {a}")
    return "\n".join(lines)


def self_refine(
    record: PerturbedRecord,
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
) -> PerturbedRecord:
    """One refinement pass; a malformed refinement keeps the original, flagged."""
    types = tuple(dict.fromkeys(record.kinds))
    messages = template.render(
        right_prompt=record.right_prompt,
        ambiguity_types=_ambiguity_types_text(types),
        k=record.k,
        record=render_five_sections(record),
    )
    reply = gw.complete(endpoint, messages)
    try:
        return parse_five_sections(reply, record.k, types, record.right_prompt)
    except FormatViolation as exc:
        logger.warning("self-refine produced a malformed record, keeping original: %s", exc)
        return replace(record, refine_failed=True)


# --- selection ----------------------------------------------------------------

@dataclass(frozen=True)
class SelectionVerdict:
    keep: bool
    cd_right: float
    cd_misleading: float
    ratio: float
    reason: str


def _coder_cd(
    prompt_text: str,
    gw: Gateway,
    coder_endpoint: Endpoint,
    coder_template: PromptTemplate,
    executor,
    gt_mesh: TriMesh,
    sample_count: int,
    seed: int,
    timeout: float,
) -> float:
    reply = gw.complete(coder_endpoint, coder_template.render(spec=prompt_text))
    program = strip_code_fences(reply)
    outcome = executor.execute(program, timeout)
    if outcome.status != "ok" or outcome.mesh is None or outcome.mesh.n_triangles == 0:
        return math.inf
    return mesh_chamfer(gt_mesh, outcome.mesh, n=sample_count, seed=seed).value


def selection_rule(
    cd_right: float, cd_misleading: float, threshold: float = SELECTION_CD_THRESHOLD,
    min_ratio: float = SELECTION_MIN_RATIO,
) -> SelectionVerdict:
    """The three-rule conjunction, total over +inf CD conventions."""
    ratio = math.inf if cd_right == 0 else cd_misleading / cd_right
    if not cd_right < threshold:
        return SelectionVerdict(False, cd_right, cd_misleading, ratio, "rule(i)")
    if not cd_misleading > threshold:
        return SelectionVerdict(False, cd_right, cd_misleading, ratio, "rule(ii)")
    if not ratio >= min_ratio:
        return SelectionVerdict(False, cd_right, cd_misleading, ratio, "rule(iii)")
    return SelectionVerdict(True, cd_right, cd_misleading, ratio, "keep")


def select(
    record: PerturbedRecord,
    gw: Gateway,
    coder_endpoint: Endpoint,
    coder_template: PromptTemplate,
    executor,
    gt_mesh: TriMesh,
    threshold: float = SELECTION_CD_THRESHOLD,
    sample_count: int = 4096,
    seed: int = 0,
    timeout: float = 30.0,
) -> SelectionVerdict:
    """Run the coder on both prompts and apply the selection conjunction.

    A perturbed prompt whose program fails to execute is maximally harmful:
    its CD maps to +inf, so the ratio rule is trivially satisfied.
    """
    cd_right = _coder_cd(
        record.right_prompt, gw, coder_endpoint, coder_template, executor, gt_mesh,
        sample_count, seed, timeout,
    )
    cd_mis = _coder_cd(
        record.misleading, gw, coder_endpoint, coder_template, executor, gt_mesh,
        sample_count, seed, timeout,
    )
    return selection_rule(cd_right, cd_mis, threshold)


# --- balance, split, stats ------------------------------------------------------

@dataclass(frozen=True)
class SplitResult:
    train_ambiguous: tuple[PerturbedRecord, ...]
    test_ambiguous: tuple[PerturbedRecord, ...]
    train_unambiguous: tuple[str, ...]
    test_unambiguous: tuple[str, ...]

    @property
    def train_size(self) -> int:
        return len(self.train_ambiguous) + len(self.train_unambiguous)

    @property
    def test_size(self) -> int:
        return len(self.test_ambiguous) + len(self.test_unambiguous)


def balance_and_split(
    kept: list[PerturbedRecord],
    unambiguous_pool: list[str],
    seed: int = 0,
    test_fraction: float = 0.2,
    balance: bool = True,
) -> SplitResult:
    """Deterministic seeded split keeping ambiguous:unambiguous near 1:1."""
    if not kept or not unambiguous_pool:
        raise InsufficientPool("both pools must be non-empty")
    rng = random.Random(seed)
    ambiguous = list(kept)
    unambiguous = list(unambiguous_pool)
    rng.shuffle(ambiguous)
    rng.shuffle(unambiguous)
    if balance:
        size = min(len(ambiguous), len(unambiguous))
        ambiguous = ambiguous[:size]
        unambiguous = unambiguous[:size]

    def test_count(n: int) -> int:
        if n <= 1 or test_fraction <= 0:
            return 0
        return max(1, round(n * test_fraction))

    a_test = test_count(len(ambiguous))
    u_test = test_count(len(unambiguous))
    return SplitResult(
        train_ambiguous=tuple(ambiguous[a_test:]),
        test_ambiguous=tuple(ambiguous[:a_test]),
        train_unambiguous=tuple(unambiguous[u_test:]),
        test_unambiguous=tuple(unambiguous[:u_test]),
    )


_STATS_ROWS = (
    ("Unambiguous", None, None),
    ("Under-specified (1 issue)", AmbiguityKind.UNDER_SPECIFIED, 1),
    ("Under-specified (2 issues)", AmbiguityKind.UNDER_SPECIFIED, 2),
    ("Conflicting (1 issue)", AmbiguityKind.CONFLICTING, 1),
    ("Conflicting (2 issues)", AmbiguityKind.CONFLICTING, 2),
)


def _bucket(records: tuple[PerturbedRecord, ...], kind: AmbiguityKind, issues: int) -> int:
    return sum(1 for r in records if r.k == issues and set(r.kinds) == {kind})


def split_statistics(split: SplitResult) -> dict:
    """Counts by ambiguity type and issue count, one row per bucket."""
    rows = []
    for label, kind, issues in _STATS_ROWS:
        if kind is None:
            train, test = len(split.train_unambiguous), len(split.test_unambiguous)
        else:
            train = _bucket(split.train_ambiguous, kind, issues)
            test = _bucket(split.test_ambiguous, kind, issues)
        rows.append({"label": label, "train": train, "test": test})
    mixed_train = len(split.train_ambiguous) - sum(
        r["train"] for r in rows if r["label"] != "Unambiguous"
    )
    mixed_test = len(split.test_ambiguous) - sum(
        r["test"] for r in rows if r["label"] != "Unambiguous"
    )
    if mixed_train or mixed_test:
        rows.append({"label": "Mixed types", "train": mixed_train, "test": mixed_test})
    return {"train_total": split.train_size, "test_total": split.test_size, "rows": rows}


def render_split_statistics(stats: dict) -> str:
    lines = [f"{'':<28}Train (N={stats['train_total']})  Test (N={stats['test_total']})"]
    for row in stats["rows"]:
        lines.append(f"{row['label']:<28}{row['train']:>8}  {row['test']:>8}")
    return "\n".join(lines) + "\n"


# --- supervision emission ---------------------------------------------------------

@dataclass(frozen=True)
class SupervisionRecord:
    kind: str  # coder_pair | clarifier_accept | clarifier_ask | clarifier_clarify
    messages: tuple[dict, ...]
    target: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "messages": list(self.messages), "target": self.target}


def emit_supervision(
    records: list[PerturbedRecord],
    unambiguous: list[str],
    clarifier_system: str,
    coder_system: str | None = None,
    coder_pairs: list[tuple[str, str]] | None = None,
) -> list[SupervisionRecord]:
    """Emit chat-format supervision for the clarifier (and optionally coder).

    Every unambiguous prompt yields one direct-accept record; every
    ambiguous record yields an ask record (questions as target) plus a
    clarify record (corrected prompt as target, questions and answers in
    context). Targets are canonical JSON that the action parser accepts.
    """
    out: list[SupervisionRecord] = []
    for prompt in unambiguous:
        target = canonical_json({"is_misleading": False, "standardized_prompt": prompt})
        out.append(
            SupervisionRecord(
                kind="clarifier_accept",
                messages=(
                    {"role": "system", "content": clarifier_system},
                    {"role": "user", "content": prompt},
                ),
                target=target,
            )
        )
    for record in records:
        ask_target = canonical_json(
            {"is_misleading": True, "questions": list(record.questions)}
        )
        out.append(
            SupervisionRecord(
                kind="clarifier_ask",
                messages=(
                    {"role": "system", "content": clarifier_system},
                    {"role": "user", "content": record.misleading},
                ),
                target=ask_target,
            )
        )
        answers_text = "Answers to your questions:\n" + "\n".join(
            f"{i + 1}. {a}" for i, a in enumerate(record.answers)
        )
        clr_target = canonical_json(
            {"is_misleading": True, "standardized_prompt": record.right_prompt}
        )
        out.append(
            SupervisionRecord(
                kind="clarifier_clarify",
                messages=(
                    {"role": "system", "content": clarifier_system},
                    {"role": "user", "content": record.misleading},
                    {"role": "assistant", "content": ask_target},
                    {"role": "user", "content": answers_text},
                ),
                target=clr_target,
            )
        )
    for prompt, program in coder_pairs or []:
        out.append(
            SupervisionRecord(
                kind="coder_pair",
                messages=(
                    {"role": "system", "content": coder_system or ""},
                    {"role": "user", "content": prompt},
                ),
                target=program,
            )
        )
    for rec in out:
        if rec.kind != "coder_pair":
            parse_clarifier_output(rec.target)  # corpus-wide schema assertion
    return out
