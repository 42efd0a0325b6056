"""Per-turn conversation orchestration.

A turn runs in a fixed order: log the utterance, harvest external
milestones (clarifying unresolved new ones), recognize intent, extract
entities, move the state machine, gate on missing prerequisites (a gated
turn asks one clarification and performs no retrieval), then retrieve,
respond, update priorities and intent masks, pick the next adaptive-query
decision, and finally check termination. Drift checks run between the
state move and the gate; a drifting session is referred to a human advisor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from . import graph as kgraph
from . import respond as rgen
from .errors import (
    InvalidWeights,
    MilepostError,
    NoTemplate,
    NothingToExpand,
    NothingToRefine,
    ProviderError,
    SessionNotActive,
)
from .model import (
    ActionKind,
    ConversationHistory,
    DialogueState,
    Entity,
    EntitySet,
    ExternalKind,
    ExternalMilestone,
    Goal,
    IntentResult,
    MachineState,
    Milestone,
    SessionConfig,
    SessionStatus,
    Speaker,
    Transition,
    UserProfile,
    Utterance,
    external_milestone_id,
    goal_achieved,
)
from .nlu import CAP_ENTITY, CAP_INTENT, CAP_MILESTONE
from .taxonomy import canonicalize

FAREWELL_CATEGORY = "farewell"
FLAG_TOPIC_DRIFT = "TopicDrift"
FLAG_STAGNATION = "Stagnation"


@dataclass(frozen=True)
class EntityRecord:
    entity: Entity
    last_referenced_turn: int


@dataclass(frozen=True)
class TurnDecisions:
    """Observable record of what the turn decided, for tests and the UI."""

    adapt_decision: Optional[str] = None
    applied_adapt: Optional[str] = None
    drift_flags: tuple[str, ...] = ()
    milestones_added: tuple[str, ...] = ()
    clarifications: int = 0
    retrievals: int = 0
    axes: tuple[str, ...] = ()
    state_id: str = ""
    terminated_reason: Optional[str] = None


@dataclass(frozen=True)
class TurnOutcome:
    system_utterances: tuple[Utterance, ...]
    fired_transition: Optional[Transition]
    decisions: TurnDecisions


class Session:
    """Single-writer conversation state. All contained values are immutable;
    mutation replaces references."""

    def __init__(self, session_id, profile, config, fixtures):
        self.id = session_id
        self.profile: UserProfile = profile
        self.config: SessionConfig = config
        self.history = ConversationHistory()
        self.goals: dict[str, Goal] = dict(fixtures.goals)
        self.milestones: dict[str, Milestone] = dict(fixtures.milestones)
        self.external: dict[str, ExternalMilestone] = {}
        self.entities: dict[str, EntityRecord] = {}
        self.current_state_id: str = fixtures.machine_initial
        self.status = SessionStatus.ACTIVE
        self.clock = 0
        self.turn_index = 0
        self.masked_nodes: tuple[str, ...] = ()
        self.pending_adapt: Optional[str] = None
        self.repeat_count = 0
        self.last_outcome: Optional[TurnOutcome] = None

    def set_status(self, status: SessionStatus) -> None:
        if self.status is not SessionStatus.ACTIVE and status is not self.status:
            raise SessionNotActive(
                f"session {self.id} is {self.status.value}; cannot become {status.value}"
            )
        self.status = status

    def entity_values(self):
        return [record.entity for record in self.entities.values()]

    def _backup(self):
        return (
            self.history,
            dict(self.goals),
            dict(self.milestones),
            dict(self.external),
            dict(self.entities),
            self.current_state_id,
            self.status,
            self.clock,
            self.turn_index,
            self.masked_nodes,
            self.pending_adapt,
            self.repeat_count,
            self.last_outcome,
        )

    def _restore(self, backup) -> None:
        (
            self.history,
            self.goals,
            self.milestones,
            self.external,
            self.entities,
            self.current_state_id,
            self.status,
            self.clock,
            self.turn_index,
            self.masked_nodes,
            self.pending_adapt,
            self.repeat_count,
            self.last_outcome,
        ) = backup


@dataclass(frozen=True)
class PriorityContext:
    """Inputs to milestone prioritization, independent of the session object."""

    w_progress: float
    w_relevance: float
    w_external: float
    domain_intent: Optional[str]
    hierarchy: object
    goals: dict
    external: dict
    known_external: frozenset
    present_entity_types: frozenset


def combine_priority(
    p_progress: float,
    p_relevance: float,
    p_external: float,
    w_progress: float,
    w_relevance: float,
    w_external: float,
) -> float:
    """Convex combination of the three priority components, clamped to [0, 1].

    Written around the progress component so equal components reproduce the
    shared value exactly, not merely to rounding."""
    weights = (w_progress, w_relevance, w_external)
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
        raise InvalidWeights(f"bad priority weights {weights}")
    value = p_progress + w_relevance * (p_relevance - p_progress) + w_external * (
        p_external - p_progress
    )
    return min(1.0, max(0.0, value))


def prioritize_milestone(m: Milestone, ctx: PriorityContext) -> float:
    """Weighted blend of urgency, intent relevance, and external readiness."""
    return combine_priority(
        1.0 - m.progress,
        _relevance_component(m, ctx),
        _external_component(m, ctx),
        ctx.w_progress,
        ctx.w_relevance,
        ctx.w_external,
    )


def _relevance_component(m: Milestone, ctx: PriorityContext) -> float:
    if ctx.domain_intent is not None and m.hierarchy_node is not None:
        hierarchy = ctx.hierarchy
        if hierarchy.in_subtree(ctx.domain_intent, m.hierarchy_node) or hierarchy.in_subtree(
            m.hierarchy_node, ctx.domain_intent
        ):
            return 1.0
    if not m.prerequisites:
        return 0.0
    req_types = {req.entity_type for req in m.prerequisites}
    return len(req_types & ctx.present_entity_types) / len(req_types)


def _external_component(m: Milestone, ctx: PriorityContext) -> float:
    owner = next(
        (g for g in ctx.goals.values() if m.id in g.subgoal_ids), None
    )
    if owner is None or not owner.external_dep_ids:
        return 1.0
    resolved = sum(
        1
        for eid in owner.external_dep_ids
        if eid in ctx.external and ctx.external[eid].resolved
    )
    return resolved / len(owner.external_dep_ids)


def find_missing_information(
    gate_milestones: list[Milestone], entities
) -> tuple:
    """Unmet prerequisites of the gating milestones, highest priority first.

    Milestones order by descending priority (id tie-break); within one
    milestone the declared prerequisite order is the priority order.
    """
    missing = []
    for m in sorted(gate_milestones, key=lambda m: (-m.priority, m.id)):
        for req in m.prerequisites:
            if not req.satisfied_by(entities) and req not in missing:
                missing.append(req)
    return tuple(missing)


def select_transition(
    candidates: list[Transition],
    milestone_priority: dict[str, float],
    states: dict[str, MachineState],
    goals: dict[str, Goal],
) -> Transition:
    """Among simultaneously-firing transitions, prefer the target state whose
    goal carries the highest-priority milestone; ties break on state id."""

    def target_priority(t: Transition) -> float:
        state = states[t.to_state]
        goal = goals[state.goal_id]
        priorities = [milestone_priority.get(mid, 0.0) for mid in goal.subgoal_ids]
        return max(priorities, default=0.0)

    return sorted(candidates, key=lambda t: (-target_priority(t), t.to_state))[0]


class DialogueEngine:
    """Executes turns against one fixture bundle; sessions are independent."""

    def __init__(self, fixtures, provider=None):
        self.fixtures = fixtures
        self.provider = provider if provider is not None else fixtures.build_provider()

    # --- session lifecycle -----------------------------------------------

    def create_session(self, session_id, profile, config=None) -> Session:
        session = Session(session_id, profile, config or SessionConfig(), self.fixtures)
        for fact in profile.registration_facts:
            milestone = ExternalMilestone(
                id=external_milestone_id(fact.kind, fact.description),
                kind=fact.kind,
                description=fact.description,
                resolved=fact.resolved,
                source_utterance_id="registration" if fact.resolved else None,
            )
            session.external[milestone.id] = milestone
            session.history = session.history.with_external(milestone)
        self._recompute_milestones(session)
        self._reprioritize(session, domain_intent=None)
        self._sync_goals(session)
        return session

    # --- turn execution -----------------------------------------------------

    def step(self, session: Session, text: str) -> TurnOutcome:
        if session.status is not SessionStatus.ACTIVE:
            raise SessionNotActive(f"session {session.id} is {session.status.value}")
        backup = session._backup()
        try:
            outcome = self._run_turn(session, text)
        except ProviderError as exc:
            # failed provider call: the session is rolled back untouched and
            # the same user text can simply be sent again
            session._restore(backup)
            outcome = self._apology_outcome(session, exc)
        except Exception:
            session._restore(backup)
            raise
        session.last_outcome = outcome
        return outcome

    def _call_provider(self, fn, *args):
        try:
            return fn(*args)
        except MilepostError:
            raise
        except Exception as exc:
            raise ProviderError(f"{self.provider.name}: {exc}") from exc

    def _apology_outcome(self, session, exc) -> TurnOutcome:
        apology = Utterance(
            id=f"u{session.clock + 1}-retry",
            timestamp=session.clock + 1,
            speaker=Speaker.SYSTEM,
            text=(
                "I'm sorry, something went wrong on my side while reading that. "
                "Could you send it again?"
            ),
            speaker_id="system",
        )
        decisions = TurnDecisions(state_id=session.current_state_id)
        return TurnOutcome(
            system_utterances=(apology,), fired_transition=None, decisions=decisions
        )

    def _run_turn(self, session: Session, text: str) -> TurnOutcome:
        fixtures = self.fixtures
        session.turn_index += 1
        user_utt = self._new_utterance(session, Speaker.USER, text, session.profile.user_id)
        session.history = session.history.with_utterance(user_utt)

        emitted: list[Utterance] = []
        clarifications = 0
        retrievals = 0
        axes: list[str] = []

        # external milestones: harvest, resolve updates, clarify unresolved new ones
        self.provider.require(CAP_MILESTONE)
        state_snapshot = self.state_snapshot(session)
        new_milestones = self._call_provider(
            self.provider.extract_milestones,
            user_utt,
            state_snapshot,
            session.history,
            session.history.external,
        )
        added_ids = []
        for m in new_milestones:
            if m.id not in session.external:
                session.external[m.id] = m
                added_ids.append(m.id)
        for _, candidate in self._call_provider(self.provider.milestone_hits, user_utt):
            existing = session.external.get(candidate.id)
            if existing is not None and candidate.resolved and not existing.resolved:
                session.external[candidate.id] = replace(
                    existing, resolved=True, source_utterance_id=user_utt.id
                )
        logged_ids = {m.id for m in session.history.external}
        for m in list(session.external.values()):
            if m.id in logged_ids:
                continue
            if not m.resolved:
                question = fixtures.clarifications.for_external(m)
                emitted.append(
                    self._new_utterance(session, Speaker.SYSTEM, question, "system")
                )
                clarifications += 1
                session.external[m.id] = replace(m, clarified=True)
            session.history = session.history.with_external(session.external[m.id])

        # recognition
        self.provider.require(CAP_INTENT)
        intent = self._call_provider(
            self.provider.recognize_intent,
            user_utt,
            fixtures.hierarchy,
            session.history,
            frozenset(session.masked_nodes),
            session.turn_index,
        )
        session.history = session.history.with_intent(intent)

        self.provider.require(CAP_ENTITY)
        entity_set = self._call_provider(
            self.provider.extract_entities, user_utt, session.history
        )
        session.history = session.history.with_entities(entity_set)
        new_keys = self._register_entities(session, entity_set)
        self._recompute_milestones(session)

        # state move
        previous_state = session.current_state_id
        fired = self._update_state(session, intent)
        if session.current_state_id == previous_state:
            session.repeat_count += 1
        else:
            session.repeat_count = 0

        ends_conversation = intent.conversational == FAREWELL_CATEGORY or (
            fired is not None and fired.action.kind is ActionKind.TERMINATE
        )

        def finish(reason=None, adapt=None, applied=None, flags=()):
            self._sync_goals(session)
            decisions = TurnDecisions(
                adapt_decision=adapt,
                applied_adapt=applied,
                drift_flags=tuple(flags),
                milestones_added=tuple(added_ids),
                clarifications=clarifications,
                retrievals=retrievals,
                axes=tuple(axes),
                state_id=session.current_state_id,
                terminated_reason=reason,
            )
            return TurnOutcome(
                system_utterances=tuple(emitted),
                fired_transition=fired,
                decisions=decisions,
            )

        if fired is not None and fired.action.kind is ActionKind.REFER:
            self._emit_referral(session, emitted, FLAG_TOPIC_DRIFT)
            return finish(flags=(FLAG_TOPIC_DRIFT,))

        # pragmatics: drift and stagnation referral (skipped when the user is
        # closing the conversation)
        if not ends_conversation:
            flags = self.detect_drift(session, entity_set, new_keys)
            if flags:
                flag = flags[0]
                self._emit_referral(session, emitted, flag)
                return finish(flags=flags)

        # missing-information gate: clarify and stop before any retrieval
        gates = [
            session.milestones[mid]
            for mid in fixtures.machine_states[session.current_state_id].gates
        ]
        missing = find_missing_information(gates, session.entity_values())
        force_clarify = fired is not None and fired.action.kind is ActionKind.CLARIFY
        if (missing or force_clarify) and not ends_conversation:
            if missing:
                question = rgen.get_clarification(missing, fixtures.clarifications)
            else:
                question = fixtures.clarifications.fallback_question.format(
                    label="your plans"
                )
            reply = self._new_utterance(session, Speaker.SYSTEM, question, "system")
            session.history = session.history.with_utterance(reply)
            emitted.append(reply)
            clarifications += 1
            return finish()

        # respond
        if ends_conversation:
            chunks = self._render_special(session, "farewell")
            self._append_response(session, emitted, chunks)
            session.set_status(SessionStatus.TERMINATED)
            self._after_response_updates(session, intent, entity_set)
            return finish(reason="user_ended")

        try:
            templates = fixtures.query_templates.lookup(intent, fixtures.hierarchy)
        except NoTemplate:
            question = fixtures.clarifications.fallback_question.format(
                label="your question"
            )
            reply = self._new_utterance(session, Speaker.SYSTEM, question, "system")
            session.history = session.history.with_utterance(reply)
            emitted.append(reply)
            clarifications += 1
            return finish()

        factsets = []
        applied_adapt = None
        for template in templates:
            query = kgraph.bind_template(template, session.entity_values())
            if session.pending_adapt in (kgraph.EXPAND, kgraph.REFINE):
                try:
                    query = kgraph.adapt_query(
                        query,
                        session.pending_adapt,
                        template=template,
                        pending_entities=session.entity_values(),
                    )
                    applied_adapt = session.pending_adapt
                except (NothingToExpand, NothingToRefine):
                    pass
            factsets.append(kgraph.retrieve_facts(query, fixtures.kb))
            retrievals += 1
            axes.append(template.axis)

        active_incomplete = self._active_milestone_incomplete(session)
        chunks = rgen.generate_response(
            factsets,
            fixtures.response_templates,
            session.profile,
            rgen.build_context_slots(session.entity_values()),
            active_incomplete,
            session.config.max_response_chunks,
        )
        response = self._append_response(session, emitted, chunks)
        self._register_fact_entities(session, templates, factsets, response.id)
        self._recompute_milestones(session)

        # post-response updates and the next adaptive-query decision
        self._after_response_updates(session, intent, entity_set)
        estimate = kgraph.estimate_readiness(
            self.state_snapshot(session), session.profile, session.history
        )
        decision = kgraph.adapt_decision(estimate, session.config.tau)
        session.pending_adapt = decision

        reason = None
        if all(g.achieved for g in session.goals.values()) and session.goals:
            session.set_status(SessionStatus.TERMINATED)
            reason = "goals_achieved"
        return finish(reason=reason, adapt=decision, applied=applied_adapt)

    # --- helpers ------------------------------------------------------------

    def _new_utterance(self, session, speaker, text, speaker_id) -> Utterance:
        session.clock += 1
        return Utterance(
            id=f"u{session.clock}",
            timestamp=session.clock,
            speaker=speaker,
            text=text,
            speaker_id=speaker_id,
        )

    def _append_response(self, session, emitted, chunks) -> Utterance:
        reply = self._new_utterance(session, Speaker.SYSTEM, "\n".join(chunks), "system")
        session.history = session.history.with_utterance(reply)
        for i, chunk in enumerate(chunks):
            emitted.append(
                Utterance(
                    id=f"{reply.id}.c{i + 1}",
                    timestamp=reply.timestamp,
                    speaker=Speaker.SYSTEM,
                    text=chunk,
                    speaker_id="system",
                )
            )
        return reply

    def _render_special(self, session, axis) -> list[str]:
        template = self.fixtures.response_templates[axis]
        return rgen.render_plain(
            template,
            session.profile,
            rgen.build_context_slots(session.entity_values()),
            session.config.max_response_chunks,
        )

    def _emit_referral(self, session, emitted, flag) -> None:
        axis = "referral_drift" if flag == FLAG_TOPIC_DRIFT else "referral_stagnation"
        chunks = self._render_special(session, axis)
        self._append_response(session, emitted, chunks)
        session.set_status(SessionStatus.REFERRED)

    def _register_entities(self, session, entity_set: EntitySet) -> set[str]:
        new_keys = set()
        for entity in entity_set.entities:
            existing = session.entities.get(entity.key)
            if existing is None:
                new_keys.add(entity.key)
                session.entities[entity.key] = EntityRecord(entity, session.turn_index)
            else:
                session.entities[entity.key] = EntityRecord(
                    existing.entity, session.turn_index
                )
        return new_keys

    def _register_fact_entities(self, session, templates, factsets, source_id) -> None:
        """Prerequisite information the knowledge graph supplied counts toward
        milestone progress; such entities carry the response utterance as source."""
        by_axis = {t.axis: t for t in templates}
        for fs in factsets:
            template = by_axis.get(fs.axis)
            if template is None:
                continue
            yields = dict(template.yields)
            for row in fs.rows:
                for projection, value in row.values:
                    entity_type = yields.get(projection)
                    if entity_type is None or value is None:
                        continue
                    entity = Entity(
                        type=entity_type,
                        value=canonicalize(entity_type, str(value)),
                        priority=0.5,
                        source_utterance_id=source_id,
                    )
                    if entity.key not in session.entities:
                        session.entities[entity.key] = EntityRecord(
                            entity=entity, last_referenced_turn=session.turn_index
                        )

    def _recompute_milestones(self, session) -> None:
        entities = session.entity_values()
        for mid, m in session.milestones.items():
            session.milestones[mid] = replace(
                m, progress=m.recompute_progress(entities)
            )

    def _sync_goals(self, session) -> None:
        for gid, g in session.goals.items():
            session.goals[gid] = replace(
                g,
                achieved=goal_achieved(
                    g, session.milestones, session.external, self.fixtures.known_external_ids
                ),
            )

    def _priority_context(self, session, domain_intent) -> PriorityContext:
        return PriorityContext(
            w_progress=session.config.w_progress,
            w_relevance=session.config.w_relevance,
            w_external=session.config.w_external,
            domain_intent=domain_intent,
            hierarchy=self.fixtures.hierarchy,
            goals=session.goals,
            external=session.external,
            known_external=self.fixtures.known_external_ids,
            present_entity_types=frozenset(
                record.entity.type for record in session.entities.values()
            ),
        )

    def _reprioritize(self, session, domain_intent) -> None:
        ctx = self._priority_context(session, domain_intent)
        for mid, m in session.milestones.items():
            session.milestones[mid] = replace(m, priority=prioritize_milestone(m, ctx))

    def update_entity_priorities(self, session, entity_set: EntitySet) -> None:
        """Boost entities the current stage's milestones need; decay entities
        untouched for three turns. Values stay within [0.1 floor, 1.0]."""
        state = self.fixtures.machine_states[session.current_state_id]
        goal = session.goals[state.goal_id]
        prereqs = [
            req
            for mid in goal.subgoal_ids
            for req in session.milestones[mid].prerequisites
        ]
        mentioned = {e.key for e in entity_set.entities}
        for key, record in list(session.entities.items()):
            entity = record.entity
            referenced = any(req.satisfied_by([entity]) for req in prereqs)
            if referenced:
                entity = replace(entity, priority=min(1.0, entity.priority + 0.2))
                session.entities[key] = EntityRecord(entity, session.turn_index)
            elif key in mentioned:
                session.entities[key] = EntityRecord(entity, session.turn_index)
            elif session.turn_index - record.last_referenced_turn >= 3:
                entity = replace(entity, priority=max(0.1, entity.priority - 0.1))
                session.entities[key] = EntityRecord(entity, record.last_referenced_turn)

    def update_intents(self, session) -> tuple[str, ...]:
        """Completed milestones mask their content subtree from future argmax."""
        masked = set(session.masked_nodes)
        for m in session.milestones.values():
            if m.complete and m.hierarchy_node:
                masked.update(self.fixtures.hierarchy.subtree(m.hierarchy_node))
        return tuple(sorted(masked))

    def _after_response_updates(self, session, intent: IntentResult, entity_set) -> None:
        self.update_entity_priorities(session, entity_set)
        self._reprioritize(session, intent.domain)
        session.masked_nodes = self.update_intents(session)
        self._sync_goals(session)

    def _active_milestone_incomplete(self, session) -> bool:
        state = self.fixtures.machine_states[session.current_state_id]
        goal = session.goals[state.goal_id]
        return any(
            not session.milestones[mid].complete for mid in goal.subgoal_ids
        )

    # --- state machine ----------------------------------------------------------

    def trigger_holds(self, trigger, intent: IntentResult, session: Session) -> bool:
        hierarchy = self.fixtures.hierarchy
        if trigger.conversational and intent.conversational not in trigger.conversational:
            return False
        if trigger.domain_subtree is not None:
            if intent.domain is None or not hierarchy.in_subtree(
                intent.domain, trigger.domain_subtree
            ):
                return False
        if trigger.entity_types:
            present = {r.entity.type for r in session.entities.values()}
            if not set(trigger.entity_types) <= present:
                return False
        for mid in trigger.milestones_complete:
            if not session.milestones[mid].complete:
                return False
        for eid in trigger.external_resolved:
            record = session.external.get(eid)
            if record is None or not record.resolved:
                return False
        prior = session.history.intents[:-1]
        if trigger.no_prior_domain is not None:
            if any(
                i.domain is not None
                and hierarchy.in_subtree(i.domain, trigger.no_prior_domain)
                for i in prior
            ):
                return False
        if trigger.prior_domain is not None:
            if not any(
                i.domain is not None
                and hierarchy.in_subtree(i.domain, trigger.prior_domain)
                for i in prior
            ):
                return False
        return True

    def _update_state(self, session, intent: IntentResult) -> Optional[Transition]:
        candidates = [
            t
            for t in self.fixtures.machine_transitions
            if t.from_state == session.current_state_id
            and self.trigger_holds(t.trigger, intent, session)
        ]
        if not candidates:
            return None
        priorities = {mid: m.priority for mid, m in session.milestones.items()}
        chosen = select_transition(
            candidates, priorities, self.fixtures.machine_states, session.goals
        )
        session.current_state_id = chosen.to_state
        return chosen

    def detect_drift(self, session, entity_set: EntitySet, new_keys: set[str]):
        """Topic drift: mostly-new entities none of which the mission's
        prerequisites recognize. Stagnation: the state has not moved for
        the configured number of consecutive user turns."""
        flags = []
        total = len(entity_set.entities)
        new_entities = [e for e in entity_set.entities if e.key in new_keys]
        ratio = len(new_entities) / max(1, total)
        if new_entities and ratio > session.config.drift_new_entity_ratio:
            mission_reqs = [
                req
                for g in session.goals.values()
                for mid in g.subgoal_ids
                for req in session.milestones[mid].prerequisites
            ]
            on_mission = any(
                req.satisfied_by([e]) for e in new_entities for req in mission_reqs
            )
            if not on_mission:
                flags.append(FLAG_TOPIC_DRIFT)
        if session.repeat_count >= session.config.repeat_state_limit:
            flags.append(FLAG_STAGNATION)
        return tuple(flags)

    def state_snapshot(self, session) -> DialogueState:
        state = self.fixtures.machine_states[session.current_state_id]
        return DialogueState(
            id=session.current_state_id,
            context_entities=tuple(sorted(session.entities)),
            goal_id=state.goal_id,
            milestone_progress={
                mid: m.progress for mid, m in session.milestones.items()
            },
            external_resolved={
                eid: m.resolved for eid, m in session.external.items()
            },
        )
