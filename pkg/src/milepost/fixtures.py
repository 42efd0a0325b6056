"""Fixture file loading and validation.

The knowledge graph ships as JSON-lines (one node or edge per line); the
hierarchy, lexicon, rule tables, state machine, and templates are YAML.
All loaders raise FixtureLoadError carrying the file (and the line, when
it is known) so a broken fixture points at itself.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .errors import FixtureLoadError
from .graph import (
    GraphNode,
    KnowledgeGraph,
    OptionalExpansion,
    PatternEdge,
    PatternNode,
    QueryTemplate,
    TemplateRegistry,
)
from .model import (
    ActionKind,
    ActionSpec,
    EntityRequirement,
    ExternalKind,
    Goal,
    HierarchyNode,
    IntentHierarchy,
    MachineState,
    Milestone,
    Transition,
    TriggerCondition,
    external_milestone_id,
)
from .nlu import (
    Lexicon,
    LexiconRule,
    MilestoneRule,
    RuleNluProvider,
    TARGET_CATEGORY,
    TARGET_ENTITY,
    TARGET_NODE,
    build_gazetteer,
)
from .respond import (
    ClarificationTable,
    JargonList,
    LevelVariant,
    ResponseTemplate,
    validate_basic_variants,
)

TEMPLATE_DIR_FILES = (
    "lexicon.yaml",
    "milestone_rules.yaml",
    "query_templates.yaml",
    "response_templates.yaml",
    "clarifications.yaml",
    "jargon.yaml",
)


def _read_yaml(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FixtureLoadError(path, f"cannot read file: {exc}")
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise FixtureLoadError(path, f"invalid YAML: {exc.problem}", line)
    except yaml.YAMLError as exc:
        raise FixtureLoadError(path, f"invalid YAML: {exc}")


def _item_lines(path: Path, key: str) -> list[Optional[int]]:
    """Line numbers of the top-level list items under `key`, for error reports."""
    try:
        root = yaml.compose(path.read_text(encoding="utf-8"))
    except Exception:
        return []
    if root is None or not hasattr(root, "value"):
        return []
    for node_key, node_value in root.value:
        if getattr(node_key, "value", None) == key and hasattr(node_value, "value"):
            return [item.start_mark.line + 1 for item in node_value.value]
    return []


def _require(mapping, key, path, line=None):
    if not isinstance(mapping, dict) or key not in mapping:
        raise FixtureLoadError(path, f"missing required field {key!r}", line)
    return mapping[key]


# --- knowledge graph (JSON lines) ---------------------------------------------


def load_kb(path) -> KnowledgeGraph:
    path = Path(path)
    nodes: dict[str, GraphNode] = {}
    edges: list[tuple[int, tuple[str, str, str]]] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FixtureLoadError(path, f"cannot read file: {exc}")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FixtureLoadError(path, f"invalid JSON: {exc.msg}", lineno)
        if not isinstance(record, dict) or "kind" not in record:
            raise FixtureLoadError(path, "record needs a 'kind' of node or edge", lineno)
        if record["kind"] == "node":
            node_id = _require(record, "id", path, lineno)
            if node_id in nodes:
                raise FixtureLoadError(path, f"duplicate node id {node_id!r}", lineno)
            attrs = record.get("attrs", {})
            if not isinstance(attrs, dict):
                raise FixtureLoadError(path, "node attrs must be a mapping", lineno)
            try:
                nodes[node_id] = GraphNode(
                    id=node_id, type=_require(record, "type", path, lineno), attrs=attrs
                )
            except ValueError as exc:
                raise FixtureLoadError(path, str(exc), lineno)
        elif record["kind"] == "edge":
            edges.append(
                (
                    lineno,
                    (
                        _require(record, "src", path, lineno),
                        _require(record, "rel", path, lineno),
                        _require(record, "dst", path, lineno),
                    ),
                )
            )
        else:
            raise FixtureLoadError(path, f"unknown kind {record['kind']!r}", lineno)
    for lineno, (src, _, dst) in edges:
        for endpoint in (src, dst):
            if endpoint not in nodes:
                raise FixtureLoadError(
                    path, f"edge endpoint {endpoint!r} is not a node", lineno
                )
    return KnowledgeGraph(nodes=nodes, edges=tuple(e for _, e in edges))


# --- hierarchy -------------------------------------------------------------------


def load_hierarchy(path) -> IntentHierarchy:
    path = Path(path)
    data = _read_yaml(path)
    items = _require(data, "nodes", path)
    lines = _item_lines(path, "nodes")
    nodes = {}
    for i, item in enumerate(items):
        line = lines[i] if i < len(lines) else None
        node_id = str(_require(item, "id", path, line))
        segments = node_id.split(".")
        parent = ".".join(segments[:-1]) if len(segments) > 1 else None
        nodes[node_id] = HierarchyNode(
            id=node_id,
            label=str(_require(item, "label", path, line)),
            parent=parent,
            vocab=tuple(item.get("vocab", ())),
        )
    try:
        return IntentHierarchy(nodes=nodes)
    except ValueError as exc:
        raise FixtureLoadError(path, str(exc))


# --- lexicon ----------------------------------------------------------------------


def load_lexicon(path) -> tuple[Lexicon, dict[str, str]]:
    path = Path(path)
    data = _read_yaml(path)
    raw_rules = _require(data, "rules", path)
    lines = _item_lines(path, "rules")
    rules = []
    for i, item in enumerate(raw_rules):
        line = lines[i] if i < len(lines) else None
        targets = [k for k in (TARGET_CATEGORY, TARGET_NODE, TARGET_ENTITY) if k in item]
        if len(targets) != 1:
            raise FixtureLoadError(
                path, "rule needs exactly one of category/node/entity", line
            )
        kind = targets[0]
        try:
            rules.append(
                LexiconRule(
                    pattern=str(_require(item, "pattern", path, line)),
                    target_kind=kind,
                    target=str(item[kind]),
                    weight=float(_require(item, "weight", path, line)),
                )
            )
        except (ValueError, TypeError) as exc:
            raise FixtureLoadError(path, str(exc), line)
    try:
        lexicon = Lexicon(
            rules=tuple(rules),
            categories=tuple(_require(data, "categories", path)),
            context_bonus_weight=float(data.get("context_bonus_weight", 1.0)),
            domain_floor=float(data.get("domain_floor", 1.0)),
            opening_category=data.get("opening_category", "factual-question"),
            followup_category=data.get("followup_category", "opinion"),
        )
    except ValueError as exc:
        raise FixtureLoadError(path, str(exc))
    gazetteer_types = dict(data.get("gazetteer_types", {}))
    return lexicon, gazetteer_types


def load_milestone_rules(path) -> tuple[MilestoneRule, ...]:
    path = Path(path)
    data = _read_yaml(path)
    raw = _require(data, "rules", path)
    lines = _item_lines(path, "rules")
    rules = []
    for i, item in enumerate(raw):
        line = lines[i] if i < len(lines) else None
        try:
            rules.append(
                MilestoneRule(
                    pattern=str(_require(item, "pattern", path, line)),
                    kind=ExternalKind(_require(item, "kind", path, line)),
                    description=str(_require(item, "description", path, line)),
                    resolved=bool(item.get("resolved", False)),
                )
            )
        except ValueError as exc:
            raise FixtureLoadError(path, str(exc), line)
    return tuple(rules)


# --- state machine -----------------------------------------------------------------


def load_machine(path, hierarchy: IntentHierarchy):
    path = Path(path)
    data = _read_yaml(path)

    milestones: dict[str, Milestone] = {}
    lines = _item_lines(path, "milestones")
    for i, item in enumerate(_require(data, "milestones", path)):
        line = lines[i] if i < len(lines) else None
        prereqs = []
        for raw_req in item.get("prerequisites", []):
            try:
                prereqs.append(
                    EntityRequirement(
                        label=str(_require(raw_req, "label", path, line)),
                        entity_type=str(_require(raw_req, "type", path, line)),
                        value=raw_req.get("value"),
                    )
                )
            except ValueError as exc:
                raise FixtureLoadError(path, str(exc), line)
        node = item.get("hierarchy_node")
        if node is not None and str(node) not in hierarchy.nodes:
            raise FixtureLoadError(path, f"unknown hierarchy node {node!r}", line)
        mid = str(_require(item, "id", path, line))
        milestones[mid] = Milestone(
            id=mid,
            description=str(_require(item, "description", path, line)),
            prerequisites=tuple(prereqs),
            progress=float(item.get("progress", 0.0)),
            priority=float(item.get("priority", 0.0)),
            hierarchy_node=None if node is None else str(node),
        )

    known_external = []
    for item in data.get("known_external", []):
        kind = ExternalKind(_require(item, "kind", path))
        known_external.append((kind, str(_require(item, "description", path))))
    known_ids = frozenset(
        external_milestone_id(kind, desc) for kind, desc in known_external
    )

    goals: dict[str, Goal] = {}
    lines = _item_lines(path, "goals")
    for i, item in enumerate(_require(data, "goals", path)):
        line = lines[i] if i < len(lines) else None
        gid = str(_require(item, "id", path, line))
        subgoals = tuple(str(m) for m in item.get("milestones", []))
        for mid in subgoals:
            if mid not in milestones:
                raise FixtureLoadError(path, f"goal {gid}: unknown milestone {mid}", line)
        deps = tuple(str(d) for d in item.get("external_deps", []))
        for dep in deps:
            if dep not in known_ids:
                raise FixtureLoadError(
                    path, f"goal {gid}: undeclared external dependency {dep}", line
                )
        goals[gid] = Goal(
            id=gid,
            description=str(_require(item, "description", path, line)),
            subgoal_ids=subgoals,
            external_dep_ids=deps,
        )

    states: dict[str, MachineState] = {}
    lines = _item_lines(path, "states")
    for i, item in enumerate(_require(data, "states", path)):
        line = lines[i] if i < len(lines) else None
        sid = str(_require(item, "id", path, line))
        goal_id = str(_require(item, "goal", path, line))
        if goal_id not in goals:
            raise FixtureLoadError(path, f"state {sid}: unknown goal {goal_id}", line)
        gates = tuple(str(m) for m in item.get("gates", []))
        for mid in gates:
            if mid not in milestones:
                raise FixtureLoadError(path, f"state {sid}: unknown gate {mid}", line)
        states[sid] = MachineState(
            id=sid, label=str(item.get("label", sid)), goal_id=goal_id, gates=gates
        )

    transitions = []
    lines = _item_lines(path, "transitions")
    for i, item in enumerate(_require(data, "transitions", path)):
        line = lines[i] if i < len(lines) else None
        tid = str(item.get("id", f"t{i + 1}"))
        src = str(_require(item, "from", path, line))
        dst = str(_require(item, "to", path, line))
        for sid in (src, dst):
            if sid not in states:
                raise FixtureLoadError(path, f"transition {tid}: unknown state {sid}", line)
        when = item.get("when", {}) or {}
        for node_key in ("domain_subtree", "no_prior_domain", "prior_domain"):
            value = when.get(node_key)
            if value is not None and str(value) not in hierarchy.nodes:
                raise FixtureLoadError(
                    path, f"transition {tid}: unknown hierarchy node {value!r}", line
                )
        for mid in when.get("milestones_complete", []):
            if str(mid) not in milestones:
                raise FixtureLoadError(
                    path, f"transition {tid}: unknown milestone {mid}", line
                )
        for eid in when.get("external_resolved", []):
            if str(eid) not in known_ids:
                raise FixtureLoadError(
                    path, f"transition {tid}: undeclared external milestone {eid}", line
                )
        trigger = TriggerCondition(
            conversational=tuple(when.get("conversational", ())),
            domain_subtree=_opt_str(when.get("domain_subtree")),
            entity_types=tuple(when.get("entity_types", ())),
            milestones_complete=tuple(str(m) for m in when.get("milestones_complete", ())),
            external_resolved=tuple(str(e) for e in when.get("external_resolved", ())),
            no_prior_domain=_opt_str(when.get("no_prior_domain")),
            prior_domain=_opt_str(when.get("prior_domain")),
        )
        try:
            action_kind = ActionKind(str(item.get("action", "Query")).capitalize())
        except ValueError:
            raise FixtureLoadError(
                path, f"transition {tid}: unknown action {item.get('action')!r}", line
            )
        try:
            transitions.append(
                Transition(
                    id=tid,
                    from_state=src,
                    to_state=dst,
                    trigger=trigger,
                    action=ActionSpec(kind=action_kind, template=item.get("template")),
                )
            )
        except ValueError as exc:
            raise FixtureLoadError(path, str(exc), line)

    initial = str(_require(data, "initial", path))
    if initial not in states:
        raise FixtureLoadError(path, f"initial state {initial!r} is not defined")
    return goals, milestones, states, tuple(transitions), initial, tuple(known_external)


def _opt_str(value):
    return None if value is None else str(value)


# --- query templates ------------------------------------------------------------------


def _parse_pattern_node(raw, path, line) -> tuple[PatternNode, list]:
    equals = []
    slots = []
    var = str(_require(raw, "var", path, line))
    for attr, value in (raw.get("equals") or {}).items():
        if isinstance(value, str) and value.startswith("$"):
            slots.append((value[1:], var, attr))
        else:
            equals.append((attr, value))
    node = PatternNode(var=var, type=_opt_str(raw.get("type")), equals=tuple(equals))
    return node, slots


def load_query_templates(path, hierarchy: IntentHierarchy) -> TemplateRegistry:
    path = Path(path)
    data = _read_yaml(path)
    raw_templates = _require(data, "templates", path)
    lines = _item_lines(path, "templates")
    out = []
    for i, item in enumerate(raw_templates):
        line = lines[i] if i < len(lines) else None
        key = str(_require(item, "key", path, line))
        if not key.startswith("category:") and key not in hierarchy.nodes:
            raise FixtureLoadError(path, f"template key {key!r} not in hierarchy", line)
        nodes = []
        slots = []
        for raw_node in _require(item, "nodes", path, line):
            node, node_slots = _parse_pattern_node(raw_node, path, line)
            nodes.append(node)
            slots.extend(node_slots)
        edges = [
            PatternEdge(src=str(e[0]), rel=str(e[1]), dst=str(e[2]))
            for e in item.get("edges", [])
        ]
        expansions = []
        for raw_opt in item.get("optional", []):
            opt_node, opt_slots = _parse_pattern_node(
                _require(raw_opt, "node", path, line), path, line
            )
            if opt_slots:
                raise FixtureLoadError(path, "optional nodes cannot carry slots", line)
            raw_edge = _require(raw_opt, "edge", path, line)
            expansions.append(
                OptionalExpansion(
                    node=opt_node,
                    edge=PatternEdge(
                        src=str(raw_edge[0]),
                        rel=str(raw_edge[1]),
                        dst=str(raw_edge[2]),
                        optional=True,
                    ),
                )
            )
        refine_slots = tuple(
            (str(entity_type), str(target[0]), str(target[1]))
            for entity_type, target in (item.get("refine") or {}).items()
        )
        out.append(
            QueryTemplate(
                key=key,
                axis=str(_require(item, "axis", path, line)),
                pattern_nodes=tuple(nodes),
                pattern_edges=tuple(edges),
                projections=tuple(str(p) for p in item.get("project", [])),
                slots=tuple(slots),
                refine_slots=refine_slots,
                yields=tuple(
                    (str(k), str(v)) for k, v in (item.get("yields") or {}).items()
                ),
                optional_expansions=tuple(expansions),
            )
        )
    return TemplateRegistry(templates=tuple(out))


# --- response templates ----------------------------------------------------------------


def load_response_templates(path) -> dict[str, ResponseTemplate]:
    path = Path(path)
    data = _read_yaml(path)
    raw_templates = _require(data, "templates", path)
    lines = _item_lines(path, "templates")
    out: dict[str, ResponseTemplate] = {}
    for i, item in enumerate(raw_templates):
        line = lines[i] if i < len(lines) else None
        levels = {}
        for level, raw_variant in _require(item, "levels", path, line).items():
            levels[level] = LevelVariant(
                text=str(_require(raw_variant, "text", path, line)),
                followup=raw_variant.get("followup"),
                empty_text=raw_variant.get("empty"),
            )
        axis = str(_require(item, "axis", path, line))
        try:
            template = ResponseTemplate(
                id=str(item.get("id", axis)),
                axis=axis,
                level_variants=levels,
                max_slots=int(item.get("max_slots", 8)),
                defaults=tuple((str(k), str(v)) for k, v in (item.get("defaults") or {}).items()),
            )
        except ValueError as exc:
            raise FixtureLoadError(path, str(exc), line)
        if axis in out:
            raise FixtureLoadError(path, f"duplicate axis {axis!r}", line)
        out[axis] = template
    return out


def load_clarifications(path) -> ClarificationTable:
    path = Path(path)
    data = _read_yaml(path)
    return ClarificationTable(
        entity_questions={
            str(k): str(v) for k, v in _require(data, "entity_questions", path).items()
        },
        external_questions={
            str(k): str(v) for k, v in _require(data, "external_questions", path).items()
        },
        fallback_question=str(_require(data, "fallback", path)),
    )


def load_jargon(path) -> JargonList:
    path = Path(path)
    data = _read_yaml(path)
    glossary = tuple(
        (str(k), str(v)) for k, v in _require(data, "glossary", path).items()
    )
    return JargonList(glossary=glossary)


# --- bundle ---------------------------------------------------------------------------


@dataclass
class FixtureSet:
    """Everything a session needs, loaded once and shared immutably."""

    kb: KnowledgeGraph
    hierarchy: IntentHierarchy
    lexicon: Lexicon
    gazetteer_types: dict[str, str]
    milestone_rules: tuple[MilestoneRule, ...]
    goals: dict[str, Goal]
    milestones: dict[str, Milestone]
    machine_states: dict[str, MachineState]
    machine_transitions: tuple[Transition, ...]
    machine_initial: str
    known_external: tuple
    query_templates: TemplateRegistry
    response_templates: dict[str, ResponseTemplate]
    clarifications: ClarificationTable
    jargon: JargonList
    paths: dict[str, str] = field(default_factory=dict)

    @property
    def known_external_ids(self) -> frozenset[str]:
        return frozenset(
            external_milestone_id(kind, desc) for kind, desc in self.known_external
        )

    def build_provider(self) -> RuleNluProvider:
        gazetteer = build_gazetteer(self.kb, self.gazetteer_types)
        return RuleNluProvider(
            lexicon=self.lexicon,
            milestone_rules=self.milestone_rules,
            gazetteer=gazetteer,
        )

    def fingerprint(self) -> dict[str, str]:
        out = {}
        for name, raw_path in sorted(self.paths.items()):
            digest = hashlib.sha256(Path(raw_path).read_bytes()).hexdigest()
            out[name] = digest
        return out

    def validate_cross_references(self) -> None:
        """Checks that only make sense with the whole bundle in hand."""
        for template in self.query_templates.templates:
            if template.axis not in self.response_templates:
                raise FixtureLoadError(
                    self.paths.get("query_templates", "query_templates"),
                    f"query axis {template.axis!r} has no response template",
                )
        try:
            validate_basic_variants(self.response_templates.values(), self.jargon)
        except ValueError as exc:
            raise FixtureLoadError(
                self.paths.get("response_templates", "response_templates"), str(exc)
            )

    @classmethod
    def load(cls, kb_path, hierarchy_path, machine_path, templates_dir) -> "FixtureSet":
        templates_dir = Path(templates_dir)
        kb = load_kb(kb_path)
        hierarchy = load_hierarchy(hierarchy_path)
        lexicon, gazetteer_types = load_lexicon(templates_dir / "lexicon.yaml")
        milestone_rules = load_milestone_rules(templates_dir / "milestone_rules.yaml")
        goals, milestones, states, transitions, initial, known = load_machine(
            machine_path, hierarchy
        )
        fixtures = cls(
            kb=kb,
            hierarchy=hierarchy,
            lexicon=lexicon,
            gazetteer_types=gazetteer_types,
            milestone_rules=milestone_rules,
            goals=goals,
            milestones=milestones,
            machine_states=states,
            machine_transitions=transitions,
            machine_initial=initial,
            known_external=known,
            query_templates=load_query_templates(
                templates_dir / "query_templates.yaml", hierarchy
            ),
            response_templates=load_response_templates(
                templates_dir / "response_templates.yaml"
            ),
            clarifications=load_clarifications(templates_dir / "clarifications.yaml"),
            jargon=load_jargon(templates_dir / "jargon.yaml"),
            paths={
                "kb": str(kb_path),
                "hierarchy": str(hierarchy_path),
                "machine": str(machine_path),
                **{
                    name.split(".")[0]: str(templates_dir / name)
                    for name in TEMPLATE_DIR_FILES
                },
            },
        )
        fixtures.validate_cross_references()
        return fixtures


def default_fixture_dir() -> Path:
    return Path(resources.files("milepost") / "fixtures")


def load_default_fixtures() -> FixtureSet:
    base = default_fixture_dir()
    return FixtureSet.load(
        kb_path=base / "kb.jsonl",
        hierarchy_path=base / "hierarchy.yaml",
        machine_path=base / "machine.yaml",
        templates_dir=base,
    )
