"""Interaction-quality scoring and report assembly.

Edge-case gates come first: a prompt that was never ambiguous and never
flagged scores (1, 1) with no judge calls; a wrong flag in either
direction scores (0, 0). Only truly-ambiguous, correctly-flagged sessions
reach the judges: question matching drives an F1 efficiency score and a
rubric judge scores resolution in {0, 0.5, 1}. Pairwise description
preference is judged in both presentation orders to expose position bias.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .agents import PromptTemplate, Trajectory
from .gateway import Endpoint, Gateway
from .geometry import GeometryReport, aggregate
from .protocol import CorrectedSpec, Prompt

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScorePair:
    efficiency: float
    resolution: float

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if self.resolution not in (0.0, 0.5, 1.0):
            raise ValueError("resolution must be one of 0, 0.5, 1")


@dataclass(frozen=True)
class GateDecision:
    proceed: bool
    forced: ScorePair | None = None

    def __post_init__(self):
        if self.proceed == (self.forced is not None):
            raise ValueError("either proceed or carry a forced score")


def gate(flagged_ambiguous: bool, truly_ambiguous: bool) -> GateDecision:
    """Four-cell decision table guarding the judge calls."""
    if not flagged_ambiguous and not truly_ambiguous:
        return GateDecision(proceed=False, forced=ScorePair(1.0, 1.0))
    if flagged_ambiguous and not truly_ambiguous:
        return GateDecision(proceed=False, forced=ScorePair(0.0, 0.0))
    if not flagged_ambiguous and truly_ambiguous:
        return GateDecision(proceed=False, forced=ScorePair(0.0, 0.0))
    return GateDecision(proceed=True)


@dataclass(frozen=True)
class QuestionMatching:
    matched: tuple[tuple[str, str], ...]  # (generated, matched ground truth)
    hallucinated: tuple[str, ...]
    n_ground_truth: int


def _matching_validator(generated: list[str], ground_truth: list[str]):
    gen_set = list(generated)

    def validate(obj) -> str | None:
        if not isinstance(obj, dict):
            return "reply must be a JSON object"
        halluc = obj.get("hallucinated_questions")
        matched = obj.get("matched_questions")
        if not isinstance(halluc, list) or not isinstance(matched, list):
            return 'reply needs list keys "hallucinated_questions" and "matched_questions"'
        for entry in matched:
            if not isinstance(entry, dict) or "generated_question" not in entry \
                    or "matched_ground_truth" not in entry:
                return "each match needs generated_question and matched_ground_truth"
        claimed = [e["matched_ground_truth"] for e in matched]
        duplicates = {c for c in claimed if claimed.count(c) > 1}
        if duplicates:
            return (
                "each ground-truth question may be matched at most once; "
                f"claimed repeatedly: {sorted(duplicates)!r}"
            )
        for c in claimed:
            if c not in ground_truth:
                return f"matched_ground_truth {c!r} is not a ground-truth question"
        covered = [e["generated_question"] for e in matched] + list(halluc)
        if sorted(covered) != sorted(gen_set):
            return "matched + hallucinated must partition the generated questions exactly"
        return None

    return validate


def match_questions(
    generated: list[str] | tuple[str, ...],
    ground_truth: list[str] | tuple[str, ...],
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
) -> QuestionMatching:
    """Judge-aligned partition of generated questions against ground truth.

    Partition and single-claim invariants are enforced locally, not
    judge-trusted; a violated reply gets one repair turn.
    """
    generated = list(generated)
    ground_truth = list(ground_truth)
    if not generated:
        return QuestionMatching(matched=(), hallucinated=(), n_ground_truth=len(ground_truth))
    numbered = lambda items: "\n".join(f"{i + 1}. {q}" for i, q in enumerate(items))  # noqa: E731
    obj = gw.complete_json(
        endpoint,
        template.render(generated=numbered(generated), ground_truth=numbered(ground_truth)),
        _matching_validator(generated, ground_truth),
    )
    matched = tuple(
        (e["generated_question"], e["matched_ground_truth"]) for e in obj["matched_questions"]
    )
    return QuestionMatching(
        matched=matched,
        hallucinated=tuple(obj["hallucinated_questions"]),
        n_ground_truth=len(ground_truth),
    )


def efficiency(m: QuestionMatching) -> float:
    """Question-matching F1: precision over generated, recall over ground truth."""
    if m.n_ground_truth < 1:
        raise ValueError("efficiency needs at least one ground-truth question")
    n_matched = len(m.matched)
    n_generated = n_matched + len(m.hallucinated)
    if n_generated == 0:
        return 0.0
    precision = n_matched / n_generated
    recall = n_matched / m.n_ground_truth
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _resolution_validator(obj) -> str | None:
    if not isinstance(obj, dict):
        return "reply must be a JSON object"
    if obj.get("score") not in (0, 0.5, 1, 0.0, 1.0):
        return '"score" must be 0.0, 0.5, or 1.0'
    if not isinstance(obj.get("reasoning", ""), str):
        return '"reasoning" must be a string'
    return None


def resolution(
    corrected: CorrectedSpec,
    ground_truth: Prompt,
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
) -> float:
    """Rubric-judged resolution score in {0, 0.5, 1}."""
    obj = gw.complete_json(
        endpoint,
        template.render(ground_truth=ground_truth.text, corrected=corrected.text),
        _resolution_validator,
    )
    return float(obj["score"])


# --- pairwise preference -----------------------------------------------------

class Criterion(str, enum.Enum):
    CLARITY = "Clarity"
    HUMAN_LIKENESS = "HumanLikeness"
    OVERALL = "Overall"


class Order(str, enum.Enum):
    A_FIRST = "AFirst"
    B_FIRST = "BFirst"


@dataclass(frozen=True)
class PreferenceResult:
    criterion: Criterion
    winner: str  # "A" | "B" | "Tie" in original pair labels
    order: Order
    reasoning: str


_PREF_KEYS = {
    Criterion.CLARITY: ("clarity_winner", "clarity_reasoning"),
    Criterion.HUMAN_LIKENESS: ("human_likeness_winner", "human_likeness_reasoning"),
    Criterion.OVERALL: ("overall_winner", "overall_reasoning"),
}


def _preference_validator(obj) -> str | None:
    if not isinstance(obj, dict):
        return "reply must be a JSON object"
    for winner_key, _ in _PREF_KEYS.values():
        v = obj.get(winner_key)
        if not isinstance(v, str) or v.strip().lower() not in ("a", "b", "tie"):
            return f'"{winner_key}" must be "A", "B", or "tie"'
    return None


def preference_ab(
    desc_a: str,
    desc_b: str,
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
    order: Order = Order.A_FIRST,
) -> list[PreferenceResult]:
    """One judge call in the given presentation order, three verdicts out.

    With ``Order.B_FIRST`` the pair is presented swapped and the judge's
    positional labels are mapped back, so the returned winners always refer
    to the original A/B identities.
    """
    first, second = (desc_a, desc_b) if order is Order.A_FIRST else (desc_b, desc_a)
    obj = gw.complete_json(
        endpoint, template.render(a=first, b=second), _preference_validator
    )
    results = []
    for criterion, (winner_key, reason_key) in _PREF_KEYS.items():
        raw = obj[winner_key].strip().lower()
        if raw == "tie":
            winner = "Tie"
        elif order is Order.A_FIRST:
            winner = "A" if raw == "a" else "B"
        else:
            winner = "B" if raw == "a" else "A"
        results.append(
            PreferenceResult(
                criterion=criterion,
                winner=winner,
                order=order,
                reasoning=str(obj.get(reason_key, "")),
            )
        )
    return results


def preference_batch(
    pairs: list[tuple[str, str]],
    gw: Gateway,
    endpoint: Endpoint,
    template: PromptTemplate,
) -> dict:
    """Both presentation orders for every pair; win rates reported per order."""
    per_order: dict[Order, list[PreferenceResult]] = {Order.A_FIRST: [], Order.B_FIRST: []}
    for a, b in pairs:
        for order in (Order.A_FIRST, Order.B_FIRST):
            per_order[order].extend(preference_ab(a, b, gw, endpoint, template, order))
    rows = []
    for criterion in Criterion:
        for order in (Order.A_FIRST, Order.B_FIRST):
            verdicts = [r for r in per_order[order] if r.criterion is criterion]
            n = len(verdicts)
            rows.append(
                {
                    "criterion": criterion.value,
                    "order": order.value,
                    "a_win_percent": 100.0 * sum(r.winner == "A" for r in verdicts) / n if n else 0.0,
                    "b_win_percent": 100.0 * sum(r.winner == "B" for r in verdicts) / n if n else 0.0,
                    "tie_percent": 100.0 * sum(r.winner == "Tie" for r in verdicts) / n if n else 0.0,
                    "n": n,
                }
            )
    return {"rows": rows, "n_pairs": len(pairs), "calls": 2 * len(pairs)}


# --- trajectory scoring and reports ---------------------------------------------

@dataclass(frozen=True)
class JudgeEndpoints:
    efficiency: Endpoint
    resolution: Endpoint


def score_trajectory(
    trajectory: Trajectory,
    gw: Gateway,
    judges: JudgeEndpoints,
    efficiency_template: PromptTemplate,
    resolution_template: PromptTemplate,
) -> ScorePair:
    """Gate first, then judge a correctly-flagged ambiguous session."""
    record = trajectory.record
    flagged = trajectory.session.ask_rounds_taken > 0 or bool(trajectory.session.pending)
    decision = gate(flagged_ambiguous=flagged, truly_ambiguous=record.truly_ambiguous)
    if not decision.proceed:
        return decision.forced
    generated = [p.question for p in trajectory.session.history]
    matching = match_questions(
        generated, list(record.ground_truth_questions), gw, judges.efficiency,
        efficiency_template,
    )
    eff = efficiency(matching)
    if trajectory.session.corrected is None or record.ground_truth_text is None:
        return ScorePair(eff, 0.0)
    res = resolution(
        trajectory.session.corrected,
        Prompt(record.ground_truth_text, record.prompt.id + ":gt"),
        gw, judges.resolution, resolution_template,
    )
    return ScorePair(eff, res)


@dataclass(frozen=True)
class EvalReport:
    label: str
    geometry: GeometryReport
    efficiency_mean: float
    resolution_mean: float
    n_scored: int
    models: dict
    template_hashes: dict
    seeds: dict
    thresholds: dict

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "label": self.label,
            "efficiency_mean": self.efficiency_mean,
            "resolution_mean": self.resolution_mean,
            "n_scored": self.n_scored,
            **self.geometry.to_json(),
            "models": self.models,
            "template_hashes": self.template_hashes,
            "seeds": self.seeds,
            "thresholds": self.thresholds,
        }


def build_report(
    trajectories: list[Trajectory],
    scores: list[ScorePair],
    label: str = "two-agent",
    models: dict | None = None,
    template_hashes: dict | None = None,
    seeds: dict | None = None,
    thresholds: dict | None = None,
) -> EvalReport:
    """Join geometry aggregates with interaction scores and run metadata.

    Geometry numbers come from the single aggregate() source of truth; the
    report never recomputes them.
    """
    if not trajectories:
        raise ValueError("no trajectories to report on")
    if len(scores) != len(trajectories):
        raise ValueError("one score pair per trajectory required")
    geo = aggregate([(t.metrics, t.validity) for t in trajectories])
    eff = sum(s.efficiency for s in scores) / len(scores)
    res = sum(s.resolution for s in scores) / len(scores)
    return EvalReport(
        label=label,
        geometry=geo,
        efficiency_mean=eff,
        resolution_mean=res,
        n_scored=len(scores),
        models=models or {},
        template_hashes=template_hashes or {},
        seeds=seeds or {},
        thresholds=thresholds or {},
    )


_COLUMNS = "Efficiency ^  Resolution ^  Mean CD v  Median CD v  IR % v"


def render_report_table(report: EvalReport) -> str:
    """Fixed-width table with the canonical metric column order."""
    mean_cd = "-" if report.geometry.mean_cd_e3 is None else f"{report.geometry.mean_cd_e3:.3f}"
    median_cd = "-" if report.geometry.median_cd_e3 is None else f"{report.geometry.median_cd_e3:.3f}"
    header = f"{'Setting':<18}{_COLUMNS}"
    row = (
        f"{report.label:<18}"
        f"{report.efficiency_mean:>10.4f}  "
        f"{report.resolution_mean:>10.4f}  "
        f"{mean_cd:>9}  "
        f"{median_cd:>11}  "
        f"{report.geometry.ir_percent:>5.1f}"
    )
    return header + "\n" + row + "\n"
