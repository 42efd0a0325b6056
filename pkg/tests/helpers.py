"""Test-only oracles and builders, independent of the engine code paths."""

from __future__ import annotations

import itertools
import random

from milepost.graph import GraphNode, KnowledgeGraph, PatternEdge, PatternNode, QueryGraph
from milepost.fixtures import FixtureSet
from milepost.graph import OptionalExpansion, QueryTemplate, TemplateRegistry
from milepost.model import (
    EntityRequirement,
    Goal,
    HierarchyNode,
    IntentHierarchy,
    MachineState,
    Milestone,
)
from milepost.nlu import Lexicon, LexiconRule
from milepost.respond import ClarificationTable, JargonList, LevelVariant, ResponseTemplate


def brute_force_rows(q: QueryGraph, kg: KnowledgeGraph):
    """Naive oracle: enumerate every node tuple and keep the ones where all
    pattern constraints hold. Returns sorted (bindings, values) tuples."""
    variables = [n.var for n in q.pattern_nodes]
    node_ids = sorted(kg.nodes)
    edge_set = set(kg.edges)
    rows = []
    for assignment in itertools.product(node_ids, repeat=len(variables)):
        bound = dict(zip(variables, assignment))
        ok = True
        for pattern_node in q.pattern_nodes:
            node = kg.nodes[bound[pattern_node.var]]
            if pattern_node.type is not None and node.type != pattern_node.type:
                ok = False
                break
            for attr, expected in pattern_node.equals:
                if node.attrs.get(attr) != expected:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            for edge in q.pattern_edges:
                if edge.optional:
                    continue
                if (bound[edge.src], edge.rel, bound[edge.dst]) not in edge_set:
                    ok = False
                    break
        if not ok:
            continue
        values = []
        for proj in q.projections:
            if "." in proj:
                var, attr = proj.split(".", 1)
                values.append((proj, kg.nodes[bound[var]].attrs.get(attr)))
            else:
                values.append((proj, bound[proj]))
        rows.append((tuple(sorted(bound.items())), tuple(values)))
    rows.sort()
    return rows


def engine_rows(factset):
    rows = [
        (
            tuple((v, node) for v, node in row.bindings if node is not None),
            row.values,
        )
        for row in factset.rows
    ]
    rows.sort()
    return rows


def random_kb(rng: random.Random, n_nodes: int) -> KnowledgeGraph:
    types = ["A", "B", "C", "D"]
    rels = ["r1", "r2", "r3"]
    attr_values = ["x", "y", "z", 1, 2]
    nodes = {}
    for i in range(n_nodes):
        attrs = {
            key: rng.choice(attr_values)
            for key in rng.sample(["p", "q", "s"], k=rng.randint(0, 2))
        }
        node_id = f"n{i:03d}"
        nodes[node_id] = GraphNode(id=node_id, type=rng.choice(types), attrs=attrs)
    ids = list(nodes)
    n_edges = rng.randint(0, max(1, n_nodes * 2))
    edges = set()
    for _ in range(n_edges):
        edges.add((rng.choice(ids), rng.choice(rels), rng.choice(ids)))
    return KnowledgeGraph(nodes=nodes, edges=tuple(sorted(edges)))


def random_pattern(rng: random.Random, kg: KnowledgeGraph, n_vars: int) -> QueryGraph:
    # draw labels from the graph's actual schema so patterns stay valid
    types = sorted(kg.node_types)
    rels = sorted(kg.relations)
    if not rels:
        n_vars = 1
    attr_values = ["x", "y", "z", 1, 2]
    variables = [f"v{i}" for i in range(n_vars)]
    nodes = []
    for var in variables:
        node_type = rng.choice(types + [None])
        equals = []
        if rng.random() < 0.4:
            equals.append((rng.choice(["p", "q", "s"]), rng.choice(attr_values)))
        nodes.append(PatternNode(var=var, type=node_type, equals=tuple(equals)))
    edges = []
    for i in range(1, n_vars):  # spanning tree keeps the pattern connected
        other = variables[rng.randrange(i)]
        src, dst = (variables[i], other) if rng.random() < 0.5 else (other, variables[i])
        edges.append(PatternEdge(src=src, rel=rng.choice(rels), dst=dst))
    if n_vars > 1 and rng.random() < 0.3:
        src, dst = rng.sample(variables, 2)
        edges.append(PatternEdge(src=src, rel=rng.choice(rels), dst=dst))
    projections = [f"{rng.choice(variables)}.p"]
    if rng.random() < 0.5:
        projections.append(rng.choice(variables))
    return QueryGraph(
        pattern_nodes=tuple(nodes),
        pattern_edges=tuple(edges),
        projections=tuple(projections),
        axis="test",
    )


# --- synthetic fixture bundle for randomized engine scripts ----------------------


def synthetic_fixtures(gate_types: list[str]) -> FixtureSet:
    """Minimal in-memory bundle: one state whose gate requires one entity of
    each type in gate_types, one content node with an answer template."""
    kb = KnowledgeGraph(
        nodes={
            "info1": GraphNode(
                id="info1", type="Info", attrs={"text": "Here is the information."}
            )
        },
        edges=(),
    )
    hierarchy = IntentHierarchy(
        nodes={"9": HierarchyNode(id="9", label="general info", parent=None, vocab=())}
    )
    lexicon = Lexicon(
        rules=(
            LexiconRule(pattern=r"ask:overview", target_kind="node", target="9", weight=2.0),
            LexiconRule(pattern=r"\?", target_kind="category", target="factual-question", weight=1.0),
            LexiconRule(pattern=r"biz=(\w+)", target_kind="entity", target="BusinessType", weight=1.0),
            LexiconRule(pattern=r"loc=(\w+)", target_kind="entity", target="Location", weight=1.0),
            LexiconRule(pattern=r"prod=(\w+)", target_kind="entity", target="ProductType", weight=1.0),
        ),
        categories=("factual-question", "opinion", "farewell"),
        opening_category="factual-question",
        followup_category="opinion",
    )
    milestones = {}
    gate_ids = []
    for i, entity_type in enumerate(gate_types):
        mid = f"gm{i}"
        gate_ids.append(mid)
        milestones[mid] = Milestone(
            id=mid,
            description=f"need {entity_type}",
            prerequisites=(
                EntityRequirement(label=entity_type, entity_type=entity_type),
            ),
            progress=0.0,
            priority=0.0,
        )
    # an open-ended milestone outside the gates keeps the mission unachieved,
    # so scripted sessions never self-terminate
    milestones["m_open"] = Milestone(
        id="m_open",
        description="long-tail work",
        prerequisites=(EntityRequirement(label="Funding", entity_type="Funding"),),
        progress=0.0,
        priority=0.0,
    )
    goals = {
        "g": Goal(
            id="g",
            description="answer things",
            subgoal_ids=tuple(gate_ids) + ("m_open",),
        )
    }
    states = {
        "st1": MachineState(id="st1", label="only", goal_id="g", gates=tuple(gate_ids))
    }
    info_template = QueryTemplate(
        key="9",
        axis="info",
        pattern_nodes=(PatternNode(var="i", type="Info"),),
        pattern_edges=(),
        projections=("i.text",),
    )
    category_template = QueryTemplate(
        key="category:factual-question",
        axis="info",
        pattern_nodes=(PatternNode(var="i", type="Info"),),
        pattern_edges=(),
        projections=("i.text",),
    )
    variant = LevelVariant(text="{text}", followup="Anything else?", empty_text="Nothing found.")
    response_templates = {
        "info": ResponseTemplate(
            id="info",
            axis="info",
            level_variants={"Basic": variant, "Intermediate": variant, "Advanced": variant},
        )
    }
    clarifications = ClarificationTable(
        entity_questions={
            "BusinessType": "Which business do you mean?",
            "Location": "Which location do you mean?",
            "ProductType": "Which product do you mean?",
        },
        external_questions={
            "UserState": "Done with {label}?",
            "Business": "Obtained {label}?",
        },
        fallback_question="Tell me more about {label}?",
    )
    return FixtureSet(
        kb=kb,
        hierarchy=hierarchy,
        lexicon=lexicon,
        gazetteer_types={},
        milestone_rules=(),
        goals=goals,
        milestones=milestones,
        machine_states=states,
        machine_transitions=(),
        machine_initial="st1",
        known_external=(),
        query_templates=TemplateRegistry(templates=(info_template, category_template)),
        response_templates=response_templates,
        clarifications=clarifications,
        jargon=JargonList(glossary=()),
        paths={},
    )
