import random

import pytest

from milepost.errors import (
    AlternationViolation,
    DanglingReference,
    InvalidWeights,
    NonMonotonicTimestamp,
)
from milepost.model import (
    ConversationHistory,
    Entity,
    EntityRequirement,
    ExternalKind,
    ExternalMilestone,
    Goal,
    HierarchyNode,
    IntentHierarchy,
    Milestone,
    SessionConfig,
    Speaker,
    Transition,
    TriggerCondition,
    ActionKind,
    ActionSpec,
    Utterance,
    append_utterance,
    external_milestone_id,
    goal_achieved,
)
from milepost.taxonomy import ENTITY_TYPES, canonicalize, format_money


def user(uid, ts, text="hello"):
    return Utterance(id=uid, timestamp=ts, speaker=Speaker.USER, text=text)


def system(uid, ts, text="ok"):
    return Utterance(id=uid, timestamp=ts, speaker=Speaker.SYSTEM, text=text)


class TestTranscript:
    def test_append_extends_by_one(self):
        history = ConversationHistory()
        history = append_utterance(history, user("u1", 1, "I want to open a bakery"))
        assert len(history.utterances) == 1
        assert history.intents == () and history.entities == ()

    def test_append_leaves_other_logs_alone(self):
        history = append_utterance(ConversationHistory(), user("u1", 1))
        longer = append_utterance(history, system("u2", 2))
        assert longer.intents == history.intents
        assert longer.entities == history.entities
        assert longer.external == history.external

    def test_non_monotonic_timestamp_rejected(self):
        history = append_utterance(ConversationHistory(), user("u1", 5))
        with pytest.raises(NonMonotonicTimestamp):
            append_utterance(history, system("u2", 5))

    def test_two_user_turns_rejected(self):
        history = append_utterance(ConversationHistory(), user("u1", 1))
        with pytest.raises(AlternationViolation):
            append_utterance(history, user("u2", 2))

    def test_system_cannot_open(self):
        with pytest.raises(AlternationViolation):
            append_utterance(ConversationHistory(), system("u1", 1))

    def test_append_is_persistent(self):
        base = append_utterance(ConversationHistory(), user("u1", 1))
        extended = append_utterance(base, system("u2", 2))
        assert len(base.utterances) == 1  # earlier reference untouched
        assert extended.utterances[: len(base.utterances)] == base.utterances

    def test_external_log_rejects_duplicate_description(self):
        m = ExternalMilestone(
            id="business:health_permit",
            kind=ExternalKind.BUSINESS,
            description="health permit",
        )
        twin = ExternalMilestone(
            id="business:health_permit2",
            kind=ExternalKind.BUSINESS,
            description="Health  Permit",
        )
        history = ConversationHistory().with_external(m)
        with pytest.raises(ValueError):
            history.with_external(twin)


class TestGoalAchievement:
    def test_empty_goal_is_achieved(self):
        goal = Goal(id="g", description="nothing to do")
        assert goal_achieved(goal, {}, {}) is True

    def test_partial_milestone_blocks(self):
        m = Milestone(
            id="m",
            description="halfway",
            prerequisites=(
                EntityRequirement(label="a", entity_type="Permit"),
                EntityRequirement(label="b", entity_type="License"),
            ),
            progress=0.5,
            priority=0.0,
        )
        goal = Goal(id="g", description="", subgoal_ids=("m",))
        assert goal_achieved(goal, {"m": m}, {}) is False

    def test_regulatory_goal_with_both_prerequisites_extracted(self):
        # conjunction evaluated by hand: both prerequisite types present with
        # any value means progress 2/2, no external deps -> achieved
        m5 = Milestone(
            id="m5",
            description="Complete regulatory steps",
            prerequisites=(
                EntityRequirement(label="Permits", entity_type="Permit"),
                EntityRequirement(label="Licenses", entity_type="License"),
            ),
            progress=0.0,
            priority=0.0,
        )
        entities = [
            Entity(type="Permit", value="health permit", priority=0.5, source_utterance_id="u1"),
            Entity(type="License", value="business license", priority=0.5, source_utterance_id="u2"),
        ]
        m5 = type(m5)(
            id=m5.id,
            description=m5.description,
            prerequisites=m5.prerequisites,
            progress=m5.recompute_progress(entities),
            priority=0.0,
        )
        g4 = Goal(id="g4", description="Identify regulatory requirements", subgoal_ids=("m5",))
        assert m5.progress == 1.0
        assert goal_achieved(g4, {"m5": m5}, {}) is True

    def test_dangling_milestone_reference(self):
        goal = Goal(id="g", description="", subgoal_ids=("missing",))
        with pytest.raises(DanglingReference):
            goal_achieved(goal, {}, {})

    def test_declared_external_dep_defaults_unresolved(self):
        goal = Goal(id="g", description="", external_dep_ids=("user_state:x",))
        assert goal_achieved(goal, {}, {}, known_external=frozenset({"user_state:x"})) is False
        with pytest.raises(DanglingReference):
            goal_achieved(goal, {}, {})


class TestMilestoneProgress:
    def test_recompute_matches_ratio_oracle(self):
        rng = random.Random(7)
        for _ in range(50):
            req_types = rng.sample(ENTITY_TYPES, k=rng.randint(1, 5))
            reqs = tuple(EntityRequirement(label=t, entity_type=t) for t in req_types)
            present = {
                t for t in req_types if rng.random() < 0.5
            }
            entities = [
                Entity(type=t, value="v", priority=0.5, source_utterance_id="u")
                for t in present
            ]
            m = Milestone(
                id="m", description="", prerequisites=reqs, progress=0.0, priority=0.0
            )
            expected = len(present) / len(req_types)
            assert m.recompute_progress(entities) == pytest.approx(expected)

    def test_prerequisite_free_milestone_needs_explicit_progress(self):
        with pytest.raises(ValueError):
            Milestone(id="m", description="", prerequisites=(), progress=0.5, priority=0.0)
        for progress in (0.0, 1.0):
            m = Milestone(
                id="m", description="", prerequisites=(), progress=progress, priority=0.0
            )
            assert m.recompute_progress([]) == progress

    def test_value_pinned_requirement(self):
        req = EntityRequirement(label="Business Type", entity_type="BusinessType", value="bakery")
        bakery = Entity(type="BusinessType", value="bakery", priority=0.5, source_utterance_id="u")
        catering = Entity(type="BusinessType", value="catering", priority=0.5, source_utterance_id="u")
        assert req.satisfied_by([bakery])
        assert not req.satisfied_by([catering])


class TestCanonicalization:
    def test_currency_to_cents(self):
        assert canonicalize("Funding", "$80,000") == "8000000"
        assert canonicalize("StartupCost", "$120,000") == "12000000"

    def test_currency_range(self):
        assert canonicalize("Pricing", "$28-$32") == "2800-3200"

    def test_casefold_and_whitespace(self):
        assert canonicalize("Location", "  San   Ysidro ") == "san ysidro"

    def test_idempotent(self):
        rng = random.Random(3)
        samples = ["$80,000", "$28-$32", "San  Ysidro", "PAN DULCE", "8000000", "2800-3200"]
        for raw in samples:
            for entity_type in ("Funding", "Location", "Pricing"):
                once = canonicalize(entity_type, raw)
                assert canonicalize(entity_type, once) == once
        for _ in range(100):
            raw = "".join(rng.choice("ab $0123,.-") for _ in range(rng.randint(1, 12)))
            for entity_type in ENTITY_TYPES:
                once = canonicalize(entity_type, raw)
                assert canonicalize(entity_type, once) == once

    def test_money_display(self):
        assert format_money("8000000") == "$80,000"
        assert format_money("2800-3200") == "$28-$32"
        assert format_money("123456") == "$1,234.56"

    def test_entity_requires_canonical_value(self):
        with pytest.raises(ValueError):
            Entity(type="Location", value="San Ysidro", priority=0.5, source_utterance_id="u")


class TestStructuralRules:
    def test_self_loop_requires_clarify(self):
        trigger = TriggerCondition()
        with pytest.raises(ValueError):
            Transition(
                id="t",
                from_state="s1",
                to_state="s1",
                trigger=trigger,
                action=ActionSpec(kind=ActionKind.QUERY),
            )
        Transition(
            id="t",
            from_state="s1",
            to_state="s1",
            trigger=trigger,
            action=ActionSpec(kind=ActionKind.CLARIFY),
        )

    def test_config_weights_must_sum_to_one(self):
        with pytest.raises(InvalidWeights):
            SessionConfig(w_progress=0.5, w_relevance=0.5, w_external=0.5)
        with pytest.raises(InvalidWeights):
            SessionConfig(w_progress=-0.2, w_relevance=1.0, w_external=0.2)

    def test_hierarchy_dotted_ids_consistent(self):
        with pytest.raises(ValueError):
            IntentHierarchy(
                nodes={
                    "3.2": HierarchyNode(id="3.2", label="x", parent=None),
                }
            )
        hierarchy = IntentHierarchy(
            nodes={
                "3": HierarchyNode(id="3", label="root", parent=None),
                "3.2": HierarchyNode(id="3.2", label="child", parent="3"),
            }
        )
        assert hierarchy.depth("3.2") == 2
        assert list(hierarchy.ancestors_and_self("3.2")) == ["3.2", "3"]
        assert hierarchy.subtree("3") == ("3", "3.2")

    def test_external_milestone_id_slug(self):
        assert (
            external_milestone_id(ExternalKind.USER_STATE, "Financial  Readiness")
            == "user_state:financial_readiness"
        )

    def test_resolved_external_requires_source(self):
        with pytest.raises(ValueError):
            ExternalMilestone(
                id="user_state:x",
                kind=ExternalKind.USER_STATE,
                description="x",
                resolved=True,
            )
