"""Description annotation pipeline: generate, verify, retry, escalate.

For each source program the pipeline drafts a three-part natural-language
description, rejects drafts that leak code surface syntax (a local lexical
gate runs before the judge; the judge stays authoritative for borderline
cases), and verifies completeness by regenerating a program from the
description alone and requiring its geometry to land within a Chamfer
threshold of the source geometry. Three failed attempts escalate the
sample to the human-review queue.
"""

from __future__ import annotations

import hashlib
import logging
import re
import threading
from dataclasses import dataclass

import numpy as np

from .agents import PromptTemplate
from .errors import SchemaViolation
from .gateway import Attachment, Endpoint, Gateway
from .geometry import (
    DEFAULT_SAMPLE_COUNT,
    TriMesh,
    cd_census,
    mesh_chamfer,
    normalize_pair,
    sample_surface,
)
from .jsonio import append_jsonl, strip_code_fences

logger = logging.getLogger(__name__)

COMPLETENESS_CD_THRESHOLD = 2e-4
MAX_ATTEMPTS = 3
DEDUP_GRID = 1e-4

# Lexical hard-fail gate: raw code surface syntax that must never appear in
# a description. Ordinary geometric language (plane names, "workplane",
# "origin", coordinate tuples, "extrude 25 units") is deliberately absent.
_METHOD_CALLS = (
    ".extrude(", ".circle(", ".rect(", ".cut(", ".union(", ".faces(", ".edges(",
    ".fillet(", ".chamfer(", ".translate(", ".rotate(", ".workplane(", ".sketch(",
    ".finalize(", ".box(", ".val(",
)
_HARD_FAIL_SUBSTRINGS = (
    "import cadquery",
    "from cadquery",
    "cq.",
    "Workplane(",
    "```",
) + _METHOD_CALLS
_HARD_FAIL_PATTERNS = tuple(
    re.compile(p)
    for p in (
        r"\bdef\s+\w+\s*\(",      # function definitions
        r"\breturn\b",
        r"\blambda\b",
        r"\bclass\s+\w+\s*[:(]",  # class definitions
        r"\b\w+\s*=\s*\w+(\.\w+)*\([^)]*\)\.",  # assignment to a method chain
        r"\bresult\s*=",
    )
)


def scan_for_leakage(text: str, code_identifiers: tuple[str, ...] = ()) -> list[str]:
    """Return the code-surface snippets found in a description.

    ``code_identifiers`` optionally extends the gate with variable names
    from the source script (matched as whole words); generic geometric
    words are never flagged.
    """
    hits: list[str] = []
    for token in _HARD_FAIL_SUBSTRINGS:
        if token in text:
            hits.append(token)
    for pattern in _HARD_FAIL_PATTERNS:
        m = pattern.search(text)
        if m:
            hits.append(m.group(0))
    for ident in code_identifiers:
        if ident in ("origin", "workplane", "r"):
            continue
        if re.search(rf"\b{re.escape(ident)}\b", text):
            hits.append(ident)
    return hits


_IDENT_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*=", re.MULTILINE)


def code_identifiers(code: str) -> tuple[str, ...]:
    """Assigned variable names in a script, for the identifier-reuse gate."""
    names = {m.group(1) for m in _IDENT_RE.finditer(code)}
    return tuple(sorted(names - {"r"}))


@dataclass(frozen=True)
class SourceSample:
    id: str
    cadquery_code: str
    gt_mesh: TriMesh
    images: tuple[str, ...] = ()


@dataclass(frozen=True)
class LeakageVerdict:
    contains_code: bool
    snippets: tuple[str, ...]
    explanation: str

    def __post_init__(self):
        if self.contains_code and not self.snippets:
            raise ValueError("a leakage verdict must cite snippets")


@dataclass(frozen=True)
class Description:
    text: str
    lints: tuple[str, ...] = ()


@dataclass(frozen=True)
class CompletenessResult:
    cd: float | None
    passed: bool
    program: str
    reason: str = ""


@dataclass(frozen=True)
class AnnotationOutcome:
    status: str  # "Accepted" | "Escalated"
    description: str | None
    attempts: int
    completeness_cd: float | None
    lints: tuple[str, ...] = ()
    failures: tuple[str, ...] = ()


_SECTION_MARKERS = ("general shape", "setup", "build")


def lint_description_structure(text: str) -> tuple[str, ...]:
    """Check the three-part order: general shape, then setup, then build."""
    low = text.lower()
    positions = [low.find(marker) for marker in _SECTION_MARKERS]
    if any(p < 0 for p in positions):
        missing = [m for m, p in zip(_SECTION_MARKERS, positions) if p < 0]
        return (f"missing-sections:{','.join(missing)}",)
    if positions != sorted(positions):
        return ("sections-out-of-order",)
    return ()


def describe(
    sample: SourceSample, gw: Gateway, endpoint: Endpoint, template: PromptTemplate
) -> Description:
    """Draft a three-part description of the sample's program."""
    if not sample.cadquery_code:
        raise ValueError("sample has no code")
    messages = template.render(code=sample.cadquery_code)
    if sample.images and endpoint.supports_vision:
        attachments = tuple(Attachment(path=p) for p in sample.images)
        messages[-1] = type(messages[-1])(
            role="user", content=messages[-1].content, attachments=attachments
        )
    text = gw.complete(endpoint, messages).strip()
    return Description(text=text, lints=lint_description_structure(text))


def _leakage_validator(obj) -> str | None:
    if not isinstance(obj, dict):
        return "reply must be a JSON object"
    if not isinstance(obj.get("contains_code"), bool):
        return '"contains_code" must be a boolean'
    snippets = obj.get("detected_code_snippets", [])
    if not isinstance(snippets, list):
        return '"detected_code_snippets" must be a list'
    if obj["contains_code"] and not snippets:
        return "a positive verdict must cite detected_code_snippets"
    if not isinstance(obj.get("explanation", ""), str):
        return '"explanation" must be a string'
    return None


def leakage_check(
    code: str, description: str, gw: Gateway, endpoint: Endpoint, template: PromptTemplate
) -> LeakageVerdict:
    """Judge-backed leakage verdict over (code, description)."""
    if not code or not description:
        raise ValueError("code and description must be non-empty")
    obj = gw.complete_json(
        endpoint, template.render(code=code, description=description), _leakage_validator
    )
    return LeakageVerdict(
        contains_code=obj["contains_code"],
        snippets=tuple(obj.get("detected_code_snippets", [])),
        explanation=obj.get("explanation", ""),
    )


def completeness_check(
    description: str,
    gt_mesh: TriMesh,
    gw: Gateway,
    coder_endpoint: Endpoint,
    coder_template: PromptTemplate,
    executor,
    threshold: float = COMPLETENESS_CD_THRESHOLD,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
    seed: int = 0,
    timeout: float = 30.0,
) -> CompletenessResult:
    """Regenerate a program from the description alone and compare geometry.

    The source code is never placed in the generation context; only the
    description travels to the coder.
    """
    if not description:
        raise ValueError("description must be non-empty")
    reply = gw.complete(coder_endpoint, coder_template.render(spec=description))
    program = strip_code_fences(reply)
    outcome = executor.execute(program, timeout)
    if outcome.status != "ok" or outcome.mesh is None or outcome.mesh.n_triangles == 0:
        reason = {"execution_error": "ExecutionError", "timeout": "Timeout",
                  "no_result": "NoResultVariable"}.get(outcome.status, "EmptyGeometry")
        return CompletenessResult(cd=None, passed=False, program=program, reason=reason)
    result = mesh_chamfer(gt_mesh, outcome.mesh, n=sample_count, seed=seed)
    return CompletenessResult(
        cd=result.value,
        passed=result.value < threshold,
        program=program,
        reason="" if result.value < threshold else "cd-above-threshold",
    )


@dataclass
class AnnotationDeps:
    gw: Gateway
    describe_endpoint: Endpoint
    judge_endpoint: Endpoint
    coder_endpoint: Endpoint
    describe_template: PromptTemplate
    leakage_template: PromptTemplate
    coder_template: PromptTemplate
    executor: object
    threshold: float = COMPLETENESS_CD_THRESHOLD
    sample_count: int = DEFAULT_SAMPLE_COUNT
    seed: int = 0
    escalation_path: str | None = None


_escalation_lock = threading.Lock()


def annotate_with_retry(
    sample: SourceSample, deps: AnnotationDeps, max_attempts: int = MAX_ATTEMPTS
) -> AnnotationOutcome:
    """Run describe -> leakage -> completeness, retrying up to three times.

    The first attempt that passes every check is accepted; exhausting the
    budget appends the sample to the escalation queue instead of raising.
    """
    failures: list[str] = []
    identifiers = code_identifiers(sample.cadquery_code)
    for attempt in range(1, max_attempts + 1):
        desc = describe(sample, deps.gw, deps.describe_endpoint, deps.describe_template)
        local_hits = scan_for_leakage(desc.text, identifiers)
        if local_hits:
            failures.append(f"attempt{attempt}:prefilter:{local_hits[0]}")
            continue
        try:
            verdict = leakage_check(
                sample.cadquery_code, desc.text, deps.gw, deps.judge_endpoint,
                deps.leakage_template,
            )
        except SchemaViolation as exc:
            failures.append(f"attempt{attempt}:leakage-judge-error:{exc}")
            continue
        if verdict.contains_code:
            failures.append(f"attempt{attempt}:leakage:{verdict.snippets[0]}")
            continue
        completeness = completeness_check(
            desc.text, sample.gt_mesh, deps.gw, deps.coder_endpoint, deps.coder_template,
            deps.executor, deps.threshold, deps.sample_count, deps.seed,
        )
        if not completeness.passed:
            failures.append(f"attempt{attempt}:completeness:{completeness.reason}")
            continue
        return AnnotationOutcome(
            status="Accepted",
            description=desc.text,
            attempts=attempt,
            completeness_cd=completeness.cd,
            lints=desc.lints,
            failures=tuple(failures),
        )
    if deps.escalation_path:
        with _escalation_lock:
            append_jsonl(
                deps.escalation_path,
                {"id": sample.id, "attempts": max_attempts,
                 "last_failure": failures[-1] if failures else "unknown"},
            )
    return AnnotationOutcome(
        status="Escalated",
        description=None,
        attempts=max_attempts,
        completeness_cd=None,
        failures=tuple(failures),
    )


# --- corpus curation ---------------------------------------------------------

@dataclass(frozen=True)
class CuratedSample:
    id: str
    code: str
    cd: float
    mesh: TriMesh


def geometry_digest(mesh: TriMesh, grid: float = DEDUP_GRID, n: int = 2048, seed: int = 0) -> str:
    """Quantized sorted point-cloud digest for near-exact geometry dedup.

    The cloud is normalized on its own bounding box, snapped to ``grid``,
    and hashed after a lexicographic sort, so byte-identical and
    trivially-resampled duplicates collide.
    """
    cloud = sample_surface(mesh, n, seed)
    normalized, _, _ = normalize_pair(cloud, cloud)
    snapped = np.round(normalized.points / grid).astype(np.int64)
    order = np.lexsort((snapped[:, 2], snapped[:, 1], snapped[:, 0]))
    return hashlib.sha256(np.ascontiguousarray(snapped[order]).tobytes()).hexdigest()


@dataclass(frozen=True)
class CurationResult:
    kept: tuple[CuratedSample, ...]
    dropped_cd: tuple[str, ...]
    dropped_dup: tuple[str, ...]
    census_rows: tuple[dict, ...]


def curate_corpus(
    samples: list[CuratedSample], cd_filter_threshold: float = COMPLETENESS_CD_THRESHOLD
) -> CurationResult:
    """Drop high-CD samples, dedup by geometry digest, emit a census."""
    census_rows = tuple(cd_census([s.cd for s in samples]))
    kept: list[CuratedSample] = []
    dropped_cd: list[str] = []
    dropped_dup: list[str] = []
    seen: set[str] = set()
    for sample in samples:
        if not (sample.cd < cd_filter_threshold):
            dropped_cd.append(sample.id)
            continue
        digest = geometry_digest(sample.mesh)
        if digest in seen:
            dropped_dup.append(sample.id)
            continue
        seen.add(digest)
        kept.append(sample)
    return CurationResult(
        kept=tuple(kept),
        dropped_cd=tuple(dropped_cd),
        dropped_dup=tuple(dropped_dup),
        census_rows=census_rows,
    )
