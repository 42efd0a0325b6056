import random

import pytest

from helpers import synthetic_fixtures
from milepost.engine import (
    DialogueEngine,
    FLAG_STAGNATION,
    FLAG_TOPIC_DRIFT,
    PriorityContext,
    combine_priority,
    find_missing_information,
    prioritize_milestone,
    select_transition,
)
from milepost.errors import (
    InvalidWeights,
    ProviderError,
    SessionNotActive,
    UnsupportedCapability,
)
from milepost.model import (
    ActionKind,
    ActionSpec,
    EducationLevel,
    Entity,
    EntityRequirement,
    Goal,
    LanguageProficiency,
    MachineState,
    Milestone,
    SessionConfig,
    SessionStatus,
    Speaker,
    Transition,
    TriggerCondition,
    UserProfile,
)
from milepost.nlu import RuleNluProvider
from milepost.snapshot import session_to_dict, dumps_canonical

GOLDEN_TURNS = [
    "I'm interested in starting a bakery in San Ysidro, San Diego County, California. What do I need to know?",
    "Let's start with the market. What should I know about San Ysidro?",
    "That's a good point. What adjustments would you recommend?",
    "Yes, I could include traditional Mexican baked goods like pan dulce. I'd also like to know how this impacts my budget.",
    "Let's refine the budget. I estimate around $120,000 in startup costs, but I'm unsure about permit fees.",
    "Sure, let's focus on the health permit. My layout includes areas for baking, cooling, and retail space.",
    "Yes, and I've secured a loan for $80,000. I'd like to understand how this affects my timeline.",
    "No, I think I have a clear picture now. Thanks for your help!",
]


def run_golden(engine, profile, upto=len(GOLDEN_TURNS), session_id="golden"):
    session = engine.create_session(session_id, profile)
    outcomes = [engine.step(session, text) for text in GOLDEN_TURNS[:upto]]
    return session, outcomes


class TestStateMachine:
    def test_market_question_moves_s1_to_s2(self, engine, profile):
        session, outcomes = run_golden(engine, profile, upto=2)
        assert outcomes[0].decisions.state_id == "s1"
        assert outcomes[1].decisions.state_id == "s2"
        assert outcomes[1].fired_transition.id == "t1"

    def test_second_market_question_does_not_refire(self, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        outcome = engine.step(session, "What about the market demographics again?")
        assert outcome.fired_transition is None
        assert session.current_state_id == "s2"

    def test_recommendation_with_confirmed_entities_moves_to_s3(self, engine, profile):
        session, outcomes = run_golden(engine, profile, upto=3)
        assert outcomes[2].decisions.state_id == "s3"
        assert outcomes[2].fired_transition.id == "t2"

    def test_unresolved_external_keeps_s4(self, engine, fixtures):
        # same profile but no registration facts: work authorization is never
        # resolved, so the regulatory transition cannot fire
        bare_profile = UserProfile(
            user_id="noauth",
            education_level=EducationLevel.INTERMEDIATE,
            language_proficiency=LanguageProficiency.MEDIUM,
        )
        session, _ = run_golden(engine, bare_profile, upto=4, session_id="noauth")
        assert session.current_state_id == "s4"
        outcome = engine.step(session, GOLDEN_TURNS[4])
        assert session.current_state_id == "s4"
        assert outcome.fired_transition is None

    def test_select_transition_prefers_priority_then_state_id(self):
        t_a = Transition(
            id="a", from_state="s", to_state="x",
            trigger=TriggerCondition(), action=ActionSpec(kind=ActionKind.QUERY),
        )
        t_b = Transition(
            id="b", from_state="s", to_state="y",
            trigger=TriggerCondition(), action=ActionSpec(kind=ActionKind.QUERY),
        )
        states = {
            "x": MachineState(id="x", label="", goal_id="gx"),
            "y": MachineState(id="y", label="", goal_id="gy"),
        }
        goals = {
            "gx": Goal(id="gx", description="", subgoal_ids=("mx",)),
            "gy": Goal(id="gy", description="", subgoal_ids=("my",)),
        }
        priorities = {"mx": 0.9, "my": 0.3}
        assert select_transition([t_a, t_b], priorities, states, goals).id == "a"
        # scale invariance: positive scaling never changes the winner
        for c in (0.1, 3.0, 100.0):
            scaled = {k: v * c for k, v in priorities.items()}
            assert select_transition([t_a, t_b], scaled, states, goals).id == "a"
        # exact tie falls back to the lexicographically smaller state id
        assert (
            select_transition([t_b, t_a], {"mx": 0.5, "my": 0.5}, states, goals).id
            == "a"
        )


class TestMissingInformation:
    def make_milestone(self, mid, reqs, priority):
        return Milestone(
            id=mid,
            description=mid,
            prerequisites=tuple(reqs),
            progress=0.0,
            priority=priority,
        )

    def entity(self, etype, value="v"):
        return Entity(type=etype, value=value, priority=0.5, source_utterance_id="u")

    def test_set_difference(self):
        m5 = self.make_milestone(
            "m5",
            [
                EntityRequirement(label="Permits", entity_type="Permit"),
                EntityRequirement(label="Licenses", entity_type="License"),
            ],
            0.5,
        )
        missing = find_missing_information([m5], [self.entity("Permit")])
        assert [r.label for r in missing] == ["Licenses"]

    def test_all_present(self):
        m5 = self.make_milestone(
            "m5", [EntityRequirement(label="Permits", entity_type="Permit")], 0.5
        )
        assert find_missing_information([m5], [self.entity("Permit")]) == ()

    def test_financial_feasibility_example(self):
        m4 = self.make_milestone(
            "m4",
            [
                EntityRequirement(label="Rental Costs", entity_type="RentalCost"),
                EntityRequirement(label="Pricing", entity_type="Pricing"),
            ],
            0.5,
        )
        missing = find_missing_information([m4], [self.entity("Pricing", "2800-3200")])
        assert [r.label for r in missing] == ["Rental Costs"]

    def test_milestone_priority_orders_requirements(self):
        low = self.make_milestone(
            "low", [EntityRequirement(label="A", entity_type="Permit")], 0.1
        )
        high = self.make_milestone(
            "high", [EntityRequirement(label="B", entity_type="License")], 0.9
        )
        missing = find_missing_information([low, high], [])
        assert [r.label for r in missing] == ["B", "A"]


class TestPriorities:
    def test_convex_identity_exact(self):
        for weights in [(0.4, 0.4, 0.2), (0.5, 0.3, 0.2), (1.0, 0.0, 0.0), (0.2, 0.5, 0.3)]:
            for p in [i / 10 for i in range(11)]:
                assert combine_priority(p, p, p, *weights) == p

    def test_hand_computed_value(self):
        # 0.5*0.4 + 0.3*1.0 + 0.2*0.5 = 0.60
        assert combine_priority(0.4, 1.0, 0.5, 0.5, 0.3, 0.2) == pytest.approx(
            0.60, abs=1e-9
        )

    def test_matches_weighted_sum_oracle(self):
        for weights in [(0.4, 0.4, 0.2), (0.5, 0.3, 0.2), (0.6, 0.2, 0.2)]:
            for a in [i / 9 for i in range(10)]:
                for b in [i / 9 for i in range(10)]:
                    for c in [i / 9 for i in range(10)]:
                        expected = weights[0] * a + weights[1] * b + weights[2] * c
                        got = combine_priority(a, b, c, *weights)
                        assert abs(got - expected) <= 1e-9

    def test_component_monotonicity(self):
        grid = [i / 4 for i in range(5)]
        weights = (0.4, 0.4, 0.2)
        for a in grid:
            for b in grid:
                for c in grid:
                    base = combine_priority(a, b, c, *weights)
                    for bumped in (
                        combine_priority(min(1, a + 0.25), b, c, *weights),
                        combine_priority(a, min(1, b + 0.25), c, *weights),
                        combine_priority(a, b, min(1, c + 0.25), *weights),
                    ):
                        assert bumped >= base - 1e-12

    def test_invalid_weights(self):
        with pytest.raises(InvalidWeights):
            combine_priority(0.5, 0.5, 0.5, 0.9, 0.5, 0.5)

    def test_prioritize_milestone_scenario(self, fixtures):
        # progress 0.6 -> urgency 0.4; intent inside the milestone's subtree
        # -> relevance 1.0; one of two external deps resolved -> 0.5
        m = Milestone(
            id="m",
            description="",
            prerequisites=tuple(
                EntityRequirement(label=t, entity_type=t)
                for t in ("Permit", "License", "Layout", "Funding", "Pricing")
            ),
            progress=0.6,
            priority=0.0,
            hierarchy_node="1",
        )
        from milepost.model import ExternalKind, ExternalMilestone

        external = {
            "business:a": ExternalMilestone(
                id="business:a",
                kind=ExternalKind.BUSINESS,
                description="a",
                resolved=True,
                source_utterance_id="u",
            ),
            "business:b": ExternalMilestone(
                id="business:b", kind=ExternalKind.BUSINESS, description="b"
            ),
        }
        ctx = PriorityContext(
            w_progress=0.5,
            w_relevance=0.3,
            w_external=0.2,
            domain_intent="1.1",
            hierarchy=fixtures.hierarchy,
            goals={
                "g": Goal(
                    id="g",
                    description="",
                    subgoal_ids=("m",),
                    external_dep_ids=("business:a", "business:b"),
                )
            },
            external=external,
            known_external=frozenset(external),
            present_entity_types=frozenset(),
        )
        assert prioritize_milestone(m, ctx) == pytest.approx(0.60, abs=1e-9)

    def test_priority_in_unit_interval_over_random_turns(self, fixtures):
        rng = random.Random(5)
        engine = DialogueEngine(fixtures)
        profile = UserProfile(
            user_id="r",
            education_level=EducationLevel.INTERMEDIATE,
            language_proficiency=LanguageProficiency.MEDIUM,
        )
        session = engine.create_session("random-walk", profile)
        phrases = [
            "I want to start a bakery in San Ysidro.",
            "What about permits?",
            "What should I know about the market?",
            "My layout includes a retail area.",
            "I've been looking at conchas and bolillos.",
            "The rent is $2,000 per month.",
        ]
        for _ in range(100):
            if session.status is not SessionStatus.ACTIVE:
                break
            engine.step(session, rng.choice(phrases))
            for m in session.milestones.values():
                assert 0.0 <= m.priority <= 1.0
            for record in session.entities.values():
                assert 0.0 <= record.entity.priority <= 1.0


class TestEntityPriorities:
    def test_boost_and_decay(self, engine, profile):
        session, _ = run_golden(engine, profile, upto=1)
        bakery = session.entities["BusinessType:bakery"].entity
        # referenced by the current stage's milestone prerequisites: boosted
        assert bakery.priority == pytest.approx(0.7)

    def test_decay_floor(self, fixtures, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        record = session.entities["Location:san diego county"]
        # not a prerequisite; goes stale after three quiet turns and decays
        # toward the floor but never below it
        for text in (
            "What adjustments would you recommend?",
            "Yes, pan dulce sounds right. How does it impact my budget?",
            "What about my budget overall?",
            "And the budget again?",
        ):
            if session.status is not SessionStatus.ACTIVE:
                break
            engine.step(session, text)
        decayed = session.entities["Location:san diego county"].entity
        assert decayed.priority <= record.entity.priority
        assert decayed.priority >= 0.1


class TestIntentMasking:
    def test_completed_milestone_masks_subtree(self, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        # m2 (target market) completed from retrieved facts at turn 2
        assert session.milestones["m2"].complete
        assert "4.1" in session.masked_nodes

    def test_masked_domain_resolves_conversational_only(self, fixtures, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        provider = engine.provider
        from milepost.model import Utterance

        utt = Utterance(
            id="probe", timestamp=999, speaker=Speaker.USER,
            text="What about the market?",
        )
        masked = provider.recognize_intent(
            utt, fixtures.hierarchy, session.history, frozenset(session.masked_nodes), 3
        )
        unmasked = provider.recognize_intent(
            utt, fixtures.hierarchy, session.history, frozenset(), 3
        )
        assert unmasked.domain == "4.1"
        assert masked.domain is None
        assert masked.conversational == "factual-question"

    def test_masking_leaves_other_subtrees_alone(self, fixtures, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        from milepost.nlu import score_domain_nodes

        text = "How do I secure financing and loans?"
        scores = score_domain_nodes(text, fixtures.hierarchy, fixtures.lexicon, session.history)
        masked_scores = {
            nid: s for nid, s in scores.items() if nid not in session.masked_nodes
        }
        for nid in fixtures.hierarchy.subtree("3"):
            assert masked_scores.get(nid) == scores[nid]


class TestAlgorithmOrder:
    def test_missing_gate_means_one_clarification_no_retrieval(self, engine):
        vague = UserProfile(
            user_id="v",
            education_level=EducationLevel.BASIC,
            language_proficiency=LanguageProficiency.MEDIUM,
        )
        session = engine.create_session("vague", vague)
        outcome = engine.step(session, "Hello, I could use some guidance.")
        assert outcome.decisions.clarifications == 1
        assert outcome.decisions.retrievals == 0
        assert len(outcome.system_utterances) == 1

    def test_external_clarification_not_in_transcript(self, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        before = len(session.history.utterances)
        outcome = engine.step(session, "Do I need a health permit for that?")
        prompts = [
            u.text
            for u in outcome.system_utterances
            if "have you already obtained" in u.text.lower()
        ]
        assert len(prompts) == 1
        transcript = [u.text for u in session.history.utterances]
        assert prompts[0] not in transcript
        # the milestone is logged, flagged as clarified, and unresolved
        m = session.external["business:health_permit"]
        assert m.clarified and not m.resolved
        assert any(h.id == m.id for h in session.history.external)
        # exactly two transcript entries: the user turn and the answer
        assert len(session.history.utterances) == before + 2

    def test_resolution_update_is_monotone(self, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        engine.step(session, "Do I need a health permit for the bakery?")
        assert not session.external["business:health_permit"].resolved
        engine.step(session, "Good news: I have obtained the health permit already.")
        record = session.external["business:health_permit"]
        assert record.resolved
        assert record.source_utterance_id is not None

    def test_registration_facts_preseed_external(self, engine, profile):
        session = engine.create_session("seeded", profile)
        record = session.external["user_state:work_authorization"]
        assert record.resolved
        assert record.source_utterance_id == "registration"


class TestLifecycle:
    def test_step_on_terminated_session_errors(self, engine, profile):
        session, _ = run_golden(engine, profile)
        assert session.status is SessionStatus.TERMINATED
        with pytest.raises(SessionNotActive):
            engine.step(session, "One more question?")

    def test_goal_achievement_terminates(self):
        fixtures = synthetic_fixtures([])  # no gates -> answers immediately
        fixtures.goals["g"] = Goal(id="g", description="", subgoal_ids=("gm0",))
        fixtures.milestones["gm0"] = Milestone(
            id="gm0",
            description="name a business",
            prerequisites=(
                EntityRequirement(label="BusinessType", entity_type="BusinessType"),
            ),
            progress=0.0,
            priority=0.0,
        )
        fixtures.machine_states["st1"] = MachineState(
            id="st1", label="only", goal_id="g", gates=()
        )
        engine = DialogueEngine(fixtures)
        profile = UserProfile(
            user_id="t",
            education_level=EducationLevel.BASIC,
            language_proficiency=LanguageProficiency.LOW,
        )
        session = engine.create_session("tiny", profile)
        outcome = engine.step(session, "ask:overview biz=bakery please")
        assert session.goals["g"].achieved
        assert session.status is SessionStatus.TERMINATED
        assert outcome.decisions.terminated_reason == "goals_achieved"

    def test_farewell_terminates_with_farewell_text(self, engine, profile):
        session, outcomes = run_golden(engine, profile)
        assert outcomes[-1].decisions.terminated_reason == "user_ended"
        assert "Best of luck" in outcomes[-1].system_utterances[-1].text

    def test_status_transitions_are_one_way(self, engine, profile):
        session, _ = run_golden(engine, profile)
        with pytest.raises(SessionNotActive):
            session.set_status(SessionStatus.REFERRED)


class TestDrift:
    def test_zero_new_entities_no_flags(self, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        outcome = engine.step(session, "Could you repeat the key figures?")
        assert outcome.decisions.drift_flags == ()

    def test_catering_pivot_refers(self, engine, profile):
        session, _ = run_golden(engine, profile, upto=2)
        outcome = engine.step(
            session, "Actually, I'm now thinking about a catering business in Chula Vista instead."
        )
        assert outcome.decisions.drift_flags == (FLAG_TOPIC_DRIFT,)
        assert session.status is SessionStatus.REFERRED
        assert outcome.decisions.retrievals == 0
        assert "human advisor" in outcome.system_utterances[-1].text

    def test_stagnation_after_repeat_limit(self, engine, profile):
        session = engine.create_session("stall", profile)
        for i in range(3):
            outcome = engine.step(session, "Tell me again how permits affect my budget?")
        assert outcome.decisions.drift_flags == (FLAG_STAGNATION,)
        assert session.status is SessionStatus.REFERRED


class TestProviderFailures:
    class FlakyProvider(RuleNluProvider):
        name = "flaky"

        def __init__(self, inner, fail_turns):
            super().__init__(inner.lexicon, inner.milestone_rules, inner.gazetteer)
            self.fail_turns = set(fail_turns)
            self.calls = 0

        def recognize_intent(self, *args, **kwargs):
            self.calls += 1
            if self.calls in self.fail_turns:
                raise RuntimeError("backend unavailable")
            return super().recognize_intent(*args, **kwargs)

    def test_provider_error_rolls_back_and_is_retryable(self, fixtures, profile):
        flaky = self.FlakyProvider(fixtures.build_provider(), fail_turns={2})
        engine = DialogueEngine(fixtures, provider=flaky)
        session = engine.create_session("flaky", profile)
        engine.step(session, GOLDEN_TURNS[0])
        before = dumps_canonical(session_to_dict(session, None))
        outcome = engine.step(session, GOLDEN_TURNS[1])
        assert "sorry" in outcome.system_utterances[0].text.lower()
        after = dumps_canonical(session_to_dict(session, None))
        assert before == after  # turn rolled back; nothing recorded
        retry = engine.step(session, GOLDEN_TURNS[1])
        assert retry.decisions.state_id == "s2"

    def test_undeclared_capability_rejected(self, fixtures, profile):
        class NoEntities(RuleNluProvider):
            capabilities = frozenset({"Intent", "Milestone"})

        provider = NoEntities(
            fixtures.lexicon, fixtures.milestone_rules, fixtures.build_provider().gazetteer
        )
        engine = DialogueEngine(fixtures, provider=provider)
        session = engine.create_session("nocap", profile)
        with pytest.raises(UnsupportedCapability):
            engine.step(session, GOLDEN_TURNS[0])


class TestHistoryInvariants:
    def test_transcript_alternates_and_is_append_only(self, engine, profile):
        session = engine.create_session("inv", profile)
        prefixes = []
        for text in GOLDEN_TURNS:
            engine.step(session, text)
            prefixes.append(session.history.utterances)
        final = session.history.utterances
        for prefix in prefixes:
            assert final[: len(prefix)] == prefix
        speakers = [u.speaker for u in final]
        assert speakers[0] is Speaker.USER
        for first, second in zip(speakers, speakers[1:]):
            assert first is not second
        timestamps = [u.timestamp for u in final]
        assert timestamps == sorted(timestamps)
        assert len(set(u.id for u in final)) == len(final)

    def test_every_turn_has_system_utterance(self, engine, profile):
        session, outcomes = run_golden(engine, profile)
        for outcome in outcomes:
            assert len(outcome.system_utterances) >= 1

    def test_external_registry_monotone(self, engine, profile):
        session = engine.create_session("mono", profile)
        sizes = []
        resolved_flags = {}
        for text in GOLDEN_TURNS:
            engine.step(session, text)
            sizes.append(len(session.external))
            for eid, record in session.external.items():
                if eid in resolved_flags and resolved_flags[eid]:
                    assert record.resolved  # never reverts
                resolved_flags[eid] = record.resolved
        assert sizes == sorted(sizes)
