"""Embedded property-graph knowledge store and query-graph machinery.

The graph is immutable after load. Retrieval enumerates every subgraph
match of a connected pattern (homomorphism semantics: two variables may
bind the same node) with rows ordered by the bound node ids. The inner
enumeration loop runs on a compiled kernel when available.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

from . import _match
from .errors import (
    NoTemplate,
    NothingToExpand,
    NothingToRefine,
    SchemaMismatch,
)
from .model import (
    ConversationHistory,
    DialogueState,
    EducationLevel,
    Entity,
    IntentHierarchy,
    IntentResult,
    UserProfile,
)
from .taxonomy import ENTITY_TYPES

EXPAND = "Expand"
REFINE = "Refine"
NO_CHANGE = "NoChange"


@dataclass(frozen=True)
class GraphNode:
    id: str
    type: str
    attrs: Mapping[str, object]

    def __post_init__(self):
        for key in self.attrs:
            if not key:
                raise ValueError(f"node {self.id}: empty attribute key")


@dataclass(frozen=True)
class KnowledgeGraph:
    nodes: Mapping[str, GraphNode]
    edges: tuple[tuple[str, str, str], ...]

    def __post_init__(self):
        for src, rel, dst in self.edges:
            if src not in self.nodes or dst not in self.nodes:
                raise ValueError(f"edge ({src}, {rel}, {dst}) has a missing endpoint")

    @property
    def node_types(self) -> frozenset[str]:
        return frozenset(n.type for n in self.nodes.values())

    @property
    def relations(self) -> frozenset[str]:
        return frozenset(rel for _, rel, _ in self.edges)

    def nodes_of_type(self, type_label: str):
        return [n for n in self.nodes.values() if n.type == type_label]


@dataclass(frozen=True)
class PatternNode:
    var: str
    type: Optional[str] = None
    equals: tuple[tuple[str, object], ...] = ()


@dataclass(frozen=True)
class PatternEdge:
    src: str
    rel: str
    dst: str
    optional: bool = False


@dataclass(frozen=True)
class QueryGraph:
    pattern_nodes: tuple[PatternNode, ...]
    pattern_edges: tuple[PatternEdge, ...]
    projections: tuple[str, ...]  # "var.attr" or bare "var"
    axis: str = ""

    def __post_init__(self):
        vars_ = {n.var for n in self.pattern_nodes}
        if len(vars_) != len(self.pattern_nodes):
            raise ValueError("duplicate pattern variable")
        for proj in self.projections:
            var = proj.split(".", 1)[0]
            if var not in vars_:
                raise ValueError(f"projection {proj!r} references unknown variable")
        for e in self.pattern_edges:
            if e.src not in vars_ or e.dst not in vars_:
                raise ValueError(f"pattern edge {e} references unknown variable")
        if len(self.pattern_nodes) > 1 and not self._connected():
            raise ValueError("pattern graph must be connected")

    def _connected(self) -> bool:
        adjacency: dict[str, set[str]] = {n.var: set() for n in self.pattern_nodes}
        for e in self.pattern_edges:
            adjacency[e.src].add(e.dst)
            adjacency[e.dst].add(e.src)
        seen = {self.pattern_nodes[0].var}
        frontier = [self.pattern_nodes[0].var]
        while frontier:
            for neighbor in adjacency[frontier.pop()]:
                if neighbor not in seen:
                    seen.add(neighbor)
                    frontier.append(neighbor)
        return len(seen) == len(self.pattern_nodes)

    def node(self, var: str) -> PatternNode:
        for n in self.pattern_nodes:
            if n.var == var:
                return n
        raise KeyError(var)


@dataclass(frozen=True)
class FactRow:
    bindings: tuple[tuple[str, Optional[str]], ...]  # var -> node id (None: optional miss)
    values: tuple[tuple[str, object], ...]  # projection -> attribute value
    provenance_nodes: tuple[str, ...] = ()
    provenance_edges: tuple[tuple[str, str, str], ...] = ()

    def value(self, projection: str):
        for key, val in self.values:
            if key == projection:
                return val
        raise KeyError(projection)


@dataclass(frozen=True)
class FactSet:
    axis: str
    rows: tuple[FactRow, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.rows


def _validate_schema(q: QueryGraph, kg: KnowledgeGraph) -> None:
    known_types = kg.node_types
    known_rels = kg.relations
    for n in q.pattern_nodes:
        if n.type is not None and n.type not in known_types:
            raise SchemaMismatch(f"unknown node type {n.type!r}")
    for e in q.pattern_edges:
        if e.rel not in known_rels:
            raise SchemaMismatch(f"unknown relation {e.rel!r}")


def _candidates(node: PatternNode, kg: KnowledgeGraph) -> list[str]:
    out = []
    for graph_node in kg.nodes.values():
        if node.type is not None and graph_node.type != node.type:
            continue
        if all(graph_node.attrs.get(k) == v for k, v in node.equals):
            out.append(graph_node.id)
    return out


def retrieve_facts(q: QueryGraph, kg: KnowledgeGraph) -> FactSet:
    """All subgraph matches of `q`, rows ordered by bound node ids."""
    _validate_schema(q, kg)

    required_edges = [e for e in q.pattern_edges if not e.optional]
    optional_edges = [e for e in q.pattern_edges if e.optional]
    required_vars = [n.var for n in q.pattern_nodes]
    optional_vars: list[str] = []
    if optional_edges:
        # variables that only appear via optional edges are bound by left-join
        mentioned = {e.src for e in optional_edges} | {e.dst for e in optional_edges}
        optional_vars = [
            v for v in required_vars if v in mentioned and not _is_required_var(v, q)
        ]
        required_vars = [v for v in required_vars if v not in optional_vars]

    node_ids = sorted(kg.nodes)
    index_of = {nid: i for i, nid in enumerate(node_ids)}
    rels = sorted(kg.relations | {e.rel for e in q.pattern_edges})
    rel_of = {rel: i for i, rel in enumerate(rels)}
    n_rel = max(1, len(rels))
    n_nodes = max(1, len(node_ids))
    edge_keys = {
        (index_of[s] * n_rel + rel_of[r]) * n_nodes + index_of[d]
        for s, r, d in kg.edges
    }

    var_level = {var: i for i, var in enumerate(required_vars)}
    candidates = [
        sorted(index_of[nid] for nid in _candidates(q.node(var), kg))
        for var in required_vars
    ]
    checks: list[list[tuple[int, int, int]]] = [[] for _ in required_vars]
    for e in required_edges:
        src_level, dst_level = var_level[e.src], var_level[e.dst]
        rel = rel_of[e.rel]
        if src_level == dst_level:
            checks[src_level].append((src_level, rel, 1))
        elif src_level < dst_level:
            checks[dst_level].append((src_level, rel, 1))
        else:
            checks[src_level].append((dst_level, rel, 0))

    matches = _match.find_matches(
        candidates, checks, edge_keys, n_rel, n_nodes
    )

    edge_set = frozenset(kg.edges)
    rows = []
    for assignment in matches:
        binding = {
            var: node_ids[assignment[level]] for var, level in var_level.items()
        }
        rows.extend(
            _left_join_optionals(binding, optional_edges, optional_vars, q, kg, edge_set)
        )
    rows.sort(key=lambda b: tuple(b.get(n.var) or "" for n in q.pattern_nodes))

    fact_rows = tuple(_build_row(b, q, kg, edge_set) for b in rows)
    return FactSet(axis=q.axis, rows=fact_rows)


def _is_required_var(var: str, q: QueryGraph) -> bool:
    if q.pattern_nodes[0].var == var:
        return True
    return any(
        var in (e.src, e.dst) for e in q.pattern_edges if not e.optional
    )


def _left_join_optionals(binding, optional_edges, optional_vars, q, kg, edge_set):
    """Extend a required-part binding across optional edges, keeping the row
    (with a None binding) when an optional edge has no match."""
    rows = [dict(binding)]
    for var in optional_vars:
        extended = []
        var_candidates = sorted(_candidates(q.node(var), kg))
        relevant = [e for e in optional_edges if var in (e.src, e.dst)]
        for row in rows:
            found = False
            for cand in var_candidates:
                trial = dict(row)
                trial[var] = cand
                if all(
                    (trial[e.src], e.rel, trial[e.dst]) in edge_set
                    for e in relevant
                    if _edge_ready(e, trial)
                ):
                    extended.append(trial)
                    found = True
            if not found:
                row[var] = None
                extended.append(row)
        rows = extended
    return rows


def _edge_ready(e, binding) -> bool:
    return binding.get(e.src) is not None and binding.get(e.dst) is not None


def _build_row(binding: dict, q: QueryGraph, kg: KnowledgeGraph, edge_set) -> FactRow:
    values = []
    for proj in q.projections:
        if "." in proj:
            var, attr = proj.split(".", 1)
            node_id = binding.get(var)
            values.append((proj, None if node_id is None else kg.nodes[node_id].attrs.get(attr)))
        else:
            values.append((proj, binding.get(proj)))
    bound_nodes = tuple(sorted(v for v in binding.values() if v is not None))
    prov_edges = tuple(
        (binding[e.src], e.rel, binding[e.dst])
        for e in q.pattern_edges
        if _edge_ready(e, binding) and (binding[e.src], e.rel, binding[e.dst]) in edge_set
    )
    return FactRow(
        bindings=tuple(sorted(binding.items())),
        values=tuple(values),
        provenance_nodes=bound_nodes,
        provenance_edges=prov_edges,
    )


# --- query templates ---------------------------------------------------------


@dataclass(frozen=True)
class OptionalExpansion:
    """Extra pattern node + edge a template allows Expand to pull in."""

    node: PatternNode
    edge: PatternEdge


@dataclass(frozen=True)
class QueryTemplate:
    key: str  # hierarchy node id or "category:<name>"
    axis: str
    pattern_nodes: tuple[PatternNode, ...]
    pattern_edges: tuple[PatternEdge, ...]
    projections: tuple[str, ...]
    slots: tuple[tuple[str, str, str], ...] = ()  # (entity type, var, attr), bound at construct
    refine_slots: tuple[tuple[str, str, str], ...] = ()  # extra constraints Refine may add
    yields: tuple[tuple[str, str], ...] = ()  # projection -> entity type
    optional_expansions: tuple[OptionalExpansion, ...] = ()


@dataclass(frozen=True)
class TemplateRegistry:
    templates: tuple[QueryTemplate, ...]

    def for_key(self, key: str) -> tuple[QueryTemplate, ...]:
        return tuple(t for t in self.templates if t.key == key)

    def lookup(
        self, intent: IntentResult, hierarchy: IntentHierarchy
    ) -> tuple[QueryTemplate, ...]:
        """Nearest-ancestor template lookup for the intent's content area."""
        if intent.domain is not None:
            for node_id in hierarchy.ancestors_and_self(intent.domain):
                found = self.for_key(node_id)
                if found:
                    return found
        found = self.for_key(f"category:{intent.conversational}")
        if found:
            return found
        raise NoTemplate(
            f"no template for domain {intent.domain!r} or category "
            f"{intent.conversational!r}"
        )


def bind_template(template: QueryTemplate, entities) -> QueryGraph:
    """Fill template slots from entities by type; unfilled slots stay variables."""
    best: dict[str, Entity] = {}
    for e in entities:
        current = best.get(e.type)
        # highest priority wins; ties broken by lexicographically smaller value
        if (
            current is None
            or e.priority > current.priority
            or (e.priority == current.priority and e.value < current.value)
        ):
            best[e.type] = e
    nodes = {n.var: n for n in template.pattern_nodes}
    for entity_type, var, attr in template.slots:
        entity = best.get(entity_type)
        node = nodes[var]
        equals = tuple(kv for kv in node.equals if kv[0] != attr)
        if entity is not None:
            equals = equals + ((attr, entity.value),)
        nodes[var] = replace(node, equals=equals)
    return QueryGraph(
        pattern_nodes=tuple(nodes[n.var] for n in template.pattern_nodes),
        pattern_edges=template.pattern_edges,
        projections=template.projections,
        axis=template.axis,
    )


def construct_query_graph(
    intent: IntentResult,
    entities,
    registry: TemplateRegistry,
    hierarchy: IntentHierarchy,
) -> QueryGraph:
    """Bind the first template registered for the intent (nearest ancestor)."""
    return bind_template(registry.lookup(intent, hierarchy)[0], entities)


# --- adaptive queries ---------------------------------------------------------


def adapt_query(
    q: QueryGraph,
    decision: str,
    template: Optional[QueryTemplate] = None,
    pending_entities=(),
) -> QueryGraph:
    """Expand relaxes the most-constrained equality (and pulls in one declared
    optional edge); Refine pins the highest-priority unbound entity; NoChange
    is the identity."""
    if decision == NO_CHANGE:
        return q
    if decision == EXPAND:
        return _expand(q, template)
    if decision == REFINE:
        return _refine(q, template, pending_entities)
    raise ValueError(f"unknown adapt decision {decision!r}")


def _expand(q: QueryGraph, template: Optional[QueryTemplate]) -> QueryGraph:
    target = None
    for node in q.pattern_nodes:  # most-specific first: most equalities
        if node.equals and (
            target is None or len(node.equals) > len(target.equals)
        ):
            target = node
    expansions = tuple(template.optional_expansions) if template else ()
    existing_vars = {n.var for n in q.pattern_nodes}
    expansions = tuple(e for e in expansions if e.node.var not in existing_vars)
    if target is None and not expansions:
        raise NothingToExpand("pattern is already fully variable")
    nodes = list(q.pattern_nodes)
    edges = list(q.pattern_edges)
    if target is not None:
        relaxed_key = sorted(target.equals)[-1][0]
        idx = nodes.index(target)
        nodes[idx] = replace(
            target, equals=tuple(kv for kv in target.equals if kv[0] != relaxed_key)
        )
    if expansions:
        extra = expansions[0]
        nodes.append(extra.node)
        edges.append(replace(extra.edge, optional=True))
    return replace(
        q, pattern_nodes=tuple(nodes), pattern_edges=tuple(edges)
    )


def _refine(
    q: QueryGraph, template: Optional[QueryTemplate], pending_entities
) -> QueryGraph:
    slots = tuple(template.refine_slots) if template else ()
    bound = {
        (n.var, key) for n in q.pattern_nodes for key, _ in n.equals
    }
    ranked = sorted(pending_entities, key=lambda e: (-e.priority, e.type, e.value))
    for entity in ranked:
        for entity_type, var, attr in slots:
            if entity_type != entity.type or (var, attr) in bound:
                continue
            nodes = list(q.pattern_nodes)
            idx = next(i for i, n in enumerate(nodes) if n.var == var)
            nodes[idx] = replace(
                nodes[idx], equals=nodes[idx].equals + ((attr, entity.value),)
            )
            return replace(q, pattern_nodes=tuple(nodes))
    raise NothingToRefine("no unbound slot matches a pending entity")


# --- readiness estimate --------------------------------------------------------


_EDUCATION_SCORE = {
    EducationLevel.BASIC: 0.0,
    EducationLevel.INTERMEDIATE: 0.5,
    EducationLevel.ADVANCED: 1.0,
}


def estimate_readiness(
    state: DialogueState,
    profile: UserProfile,
    history: ConversationHistory,
) -> float:
    """0.4 * education + 0.3 * entity-type coverage + 0.3 * mean milestone progress."""
    education = _EDUCATION_SCORE[profile.education_level]
    seen_types = {
        e.type for entity_set in history.entities for e in entity_set.entities
    }
    coverage = len(seen_types) / len(ENTITY_TYPES)
    progress_values = list(state.milestone_progress.values())
    mean_progress = (
        sum(progress_values) / len(progress_values) if progress_values else 0.0
    )
    return 0.4 * education + 0.3 * coverage + 0.3 * mean_progress


def adapt_decision(estimate: float, tau: float) -> str:
    return EXPAND if estimate < tau else REFINE
