"""Session state machine, cost, reward, and clarifier wire-shape tests."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadclarify.errors import ArityMismatch, IllegalTransition, NonFiniteValue, SchemaViolation
from cadclarify.protocol import (
    Accept,
    AnswersSubmitted,
    Ask,
    CostMode,
    Phase,
    Prompt,
    QAPair,
    RewardParams,
    SessionState,
    advance,
    interaction_cost,
    new_session,
    parse_clarifier_output,
    reward,
    serialize_clarifier_action,
    session_from_dict,
    session_to_dict,
)

P = Prompt(text="a 10x10x10 cube", id="p1")


def test_direct_accept_finalizes():
    s = advance(new_session(P), Accept("a 10x10x10 cube"))
    assert s.phase is Phase.FINALIZED
    assert s.corrected.text == "a 10x10x10 cube"
    assert s.history == ()


def test_answer_arity_mismatch():
    s = advance(new_session(P), Ask(("What radius?", "What thickness?")))
    with pytest.raises(ArityMismatch):
        advance(s, AnswersSubmitted(("19",)))


def test_two_question_round_trip_is_unique_completion():
    # Enumerate by hand: the only legal 2-round completion from a fresh
    # session that uses an Ask is Ask -> Answers (matching arity) -> Accept.
    s0 = new_session(P)
    s1 = advance(s0, Ask(("What radius?", "What thickness?")))
    assert s1.phase is Phase.AWAITING_ANSWERS
    with pytest.raises(IllegalTransition):
        advance(s1, Accept("x"))
    with pytest.raises(IllegalTransition):
        advance(s1, Ask(("again?",)))
    s2 = advance(s1, AnswersSubmitted(("19", "7")))
    assert s2.phase is Phase.AWAITING_DECISION
    assert len(s2.history) == 2
    with pytest.raises(IllegalTransition):  # two-round bound: second Ask illegal
        advance(s2, Ask(("more?",)))
    s3 = advance(s2, Accept("cylinder radius 19 thickness 7", misleading=True))
    assert s3.phase is Phase.FINALIZED
    assert len(s3.history) == 2


def test_no_transition_after_finalized():
    s = advance(new_session(P), Accept("done"))
    for event in (Accept("x"), Ask(("q",)), AnswersSubmitted(("a",))):
        with pytest.raises(IllegalTransition):
            advance(s, event)


def test_relaxed_round_budget_allows_second_ask():
    s = new_session(P, max_ask_rounds=2)
    s = advance(s, Ask(("q1",)))
    s = advance(s, AnswersSubmitted(("a1",)))
    s = advance(s, Ask(("q2",)))
    s = advance(s, AnswersSubmitted(("a2",)))
    assert len(s.history) == 2
    with pytest.raises(IllegalTransition):
        advance(s, Ask(("q3",)))


def test_state_invariant_checks():
    with pytest.raises(ValueError):
        SessionState(prompt=P, phase=Phase.FINALIZED, corrected=None)
    with pytest.raises(ValueError):
        SessionState(prompt=P, pending=("q",))


def test_interaction_cost_rounds():
    params = RewardParams(cost_mode=CostMode.ROUNDS)
    assert interaction_cost([], params) == 0
    assert interaction_cost([QAPair("q1", "a1"), QAPair("q2", "a2")], params) == 2


def test_interaction_cost_tokens_hand_count():
    params = RewardParams(cost_mode=CostMode.TOKENS)
    # "What radius?" -> 2 tokens, "19" -> 1 token
    assert interaction_cost([QAPair("What radius?", "19")], params) == 3


def test_reward_arithmetic():
    assert reward(0.0, 0.0, RewardParams()) == 0.0
    assert reward(0.002, 2.0, RewardParams(lam=0.0005)) == pytest.approx(-0.003)
    assert reward(0.7, 5.0, RewardParams(lam=0.0)) == reward(0.7, 0.0, RewardParams(lam=0.0))


def test_reward_rejects_non_finite():
    with pytest.raises(NonFiniteValue):
        reward(math.inf, 0.0, RewardParams())
    with pytest.raises(NonFiniteValue):
        reward(0.1, math.nan, RewardParams())


@given(
    cd=st.floats(min_value=0, max_value=1e3),
    cd2=st.floats(min_value=0, max_value=1e3),
    cost=st.floats(min_value=0, max_value=1e3),
    cost2=st.floats(min_value=0, max_value=1e3),
    lam=st.floats(min_value=1e-6, max_value=10),
)
def test_reward_monotone_nonincreasing(cd, cd2, cost, cost2, lam):
    params = RewardParams(lam=lam)
    if cd2 >= cd:
        assert reward(cd2, cost, params) <= reward(cd, cost, params)
    if cost2 >= cost:
        assert reward(cd, cost2, params) <= reward(cd, cost, params)


def test_parse_accept_shape():
    action = parse_clarifier_output('{"is_misleading": false, "standardized_prompt": "a cube"}')
    assert action == Accept("a cube")


def test_parse_ask_shape():
    action = parse_clarifier_output('{"is_misleading": true, "questions": ["q1", "q2"]}')
    assert action == Ask(("q1", "q2"))


def test_parse_second_round_accept_shape():
    action = parse_clarifier_output('{"is_misleading": true, "standardized_prompt": "fixed"}')
    assert action == Accept("fixed", misleading=True)


def test_parse_missing_field_is_violation():
    with pytest.raises(SchemaViolation):
        parse_clarifier_output('{"is_misleading": true}')
    with pytest.raises(SchemaViolation):
        parse_clarifier_output('{"standardized_prompt": "x"}')
    with pytest.raises(SchemaViolation):
        parse_clarifier_output('{"is_misleading": true, "questions": []}')
    with pytest.raises(SchemaViolation):
        parse_clarifier_output("not json at all")


def test_parse_tolerates_fences_and_prose():
    raw = 'Sure thing:\n```json\n{"is_misleading": false, "standardized_prompt": "a plate"}\n```\nDone.'
    assert parse_clarifier_output(raw) == Accept("a plate")


@st.composite
def clarifier_actions(draw):
    if draw(st.booleans()):
        text = draw(st.text(min_size=1, max_size=40).filter(str.strip))
        return Accept(text, misleading=draw(st.booleans()))
    qs = draw(st.lists(st.text(min_size=1, max_size=30).filter(str.strip), min_size=1, max_size=4))
    return Ask(tuple(qs))


@given(clarifier_actions())
@settings(max_examples=200)
def test_parse_serialize_round_trip(action):
    assert parse_clarifier_output(serialize_clarifier_action(action)) == action


def test_two_round_bound_under_random_event_sequences():
    rng = random.Random(20260810)
    for _ in range(300):
        state = new_session(P)
        asks_accepted = 0
        for _ in range(rng.randint(1, 12)):
            event = rng.choice(
                [
                    Accept("std text"),
                    Ask(tuple(f"q{i}" for i in range(rng.randint(1, 3)))),
                    AnswersSubmitted(tuple(f"a{i}" for i in range(rng.randint(0, 3)))),
                ]
            )
            try:
                new_state = advance(state, event)
            except (IllegalTransition, ArityMismatch):
                continue
            if isinstance(event, Ask):
                asks_accepted += 1
            state = new_state
        assert asks_accepted <= 1
        if not state.history:
            # first decision always happens on an empty history
            assert state.ask_rounds_taken == 0


def test_session_serialization_round_trip():
    s = advance(new_session(P), Ask(("What radius?",)))
    s = advance(s, AnswersSubmitted(("19",)))
    s = advance(s, Accept("cylinder radius 19", misleading=True))
    obj = session_to_dict("sess-1", s, {"created": "2026-01-01T00:00:00Z"})
    sid, restored = session_from_dict(obj)
    assert sid == "sess-1"
    assert restored == s
