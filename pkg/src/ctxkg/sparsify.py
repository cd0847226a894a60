"""Graph pruning ledger: every graph variant as a pure graph-to-graph step.

A SparsifyPlan is an ordered list of steps applied left to right; each step
is idempotent (except rewire_random, which is seeded) and every output graph
passes kg_core validation. Plans serialize to a one-step-per-line text block
inside the pipeline config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph import (ENDPOINTS, KnowledgeGraph, NodeClass, RelationClass,
                    _canonical_relation, _finalize, coerce_relation_class,
                    graph_stats, induced_subgraph)

# the local variant-to-gene relation names kept by default
DEFAULT_LOCAL_V2G = ("exon", "promoter", "eqtl", "eqtlgen_finemap")
DEFAULT_G2G_MIN_COUNT = 10_000


@dataclass(frozen=True)
class RemovePrograms:
    pass


@dataclass(frozen=True)
class RestrictV2G:
    allowed: tuple = DEFAULT_LOCAL_V2G


@dataclass(frozen=True)
class RestrictG2GMajor:
    min_count: int = DEFAULT_G2G_MIN_COUNT


@dataclass(frozen=True)
class CollapseClass:
    relation_class: str = "g2g"
    merged_name: str = ""


@dataclass(frozen=True)
class RestrictGenes:
    gene_ids: tuple = ()


@dataclass(frozen=True)
class RewireRandom:
    relation_class: str = "g2g"
    seed: int = 0


@dataclass(frozen=True)
class DropClass:
    relation_class: str = "g2g"


@dataclass(frozen=True)
class SparsifyPlan:
    steps: tuple = ()


def remove_program_nodes(graph: KnowledgeGraph) -> KnowledgeGraph:
    if graph.n_nodes(NodeClass.PROGRAM) == 0:
        return graph
    return induced_subgraph(graph, {NodeClass.PROGRAM: []})


def restrict_v2g(graph: KnowledgeGraph, allowed_names=DEFAULT_LOCAL_V2G):
    """Keep only V2G relations whose name is allowed; emptied types vanish.

    Returns (graph, warnings): an allowed name absent from the graph is a
    warning, not an error.
    """
    allowed = set(allowed_names)
    if not allowed:
        raise ValidationError("allowed V2G name set must be non-empty")
    present = {r.name for r in graph.relations_of_class(RelationClass.V2G)}
    warnings = [f"allowed V2G name not present: {n}" for n in sorted(allowed - present)]
    relations = {name: rel for name, rel in graph.relations.items()
                 if rel.relation_class is not RelationClass.V2G or name in allowed}
    out = _finalize(graph.ids, graph.features, graph.chrom, graph.pos,
                    relations, graph.meta)
    return out, warnings


def restrict_g2g_major(graph: KnowledgeGraph, min_count=DEFAULT_G2G_MIN_COUNT):
    """Drop G2G relation types whose edge count (self-loops included) is
    <= min_count. Counts are taken before any removal, in a single pass."""
    if min_count < 0:
        raise ValidationError("min_count must be >= 0")
    relations = {name: rel for name, rel in graph.relations.items()
                 if rel.relation_class is not RelationClass.G2G
                 or rel.n_edges > min_count}
    return _finalize(graph.ids, graph.features, graph.chrom, graph.pos,
                     relations, graph.meta)


def collapse_class(graph: KnowledgeGraph, relation_class, merged_name=None):
    """Replace all relations of a class by one relation holding the union of
    their node pairs (deduplicated)."""
    rc = coerce_relation_class(relation_class)
    members = graph.relations_of_class(rc)
    if not members:
        raise ValidationError(f"no relations of class {rc.value} to collapse")
    if not merged_name:
        merged_name = f"{rc.value}_collapsed"
    src = np.concatenate([r.src for r in members])
    dst = np.concatenate([r.dst for r in members])
    sc, dc = ENDPOINTS[rc]
    relations = {name: rel for name, rel in graph.relations.items()
                 if rel.relation_class is not rc}
    if merged_name in relations:
        raise ValidationError(f"merged relation name already in use: {merged_name!r}")
    relations[merged_name] = _canonical_relation(merged_name, rc, sc, dc, src, dst)
    return _finalize(graph.ids, graph.features, graph.chrom, graph.pos,
                     relations, graph.meta)


def restrict_genes(graph: KnowledgeGraph, gene_ids) -> KnowledgeGraph:
    return induced_subgraph(graph, {NodeClass.GENE: gene_ids})


def rewire_random(graph: KnowledgeGraph, relation_class, seed=0) -> KnowledgeGraph:
    """Resample every edge of the class uniformly over valid endpoint pairs,
    keeping per-relation edge counts exact; rejection-resamples duplicates."""
    rc = coerce_relation_class(relation_class)
    members = graph.relations_of_class(rc)
    if not members:
        raise ValidationError(f"no relations of class {rc.value} to rewire")
    rng = np.random.default_rng(seed)
    relations = dict(graph.relations)
    for rel in sorted(members, key=lambda r: r.name):
        n_src = graph.n_nodes(rel.src_class)
        n_dst = graph.n_nodes(rel.dst_class)
        need = rel.n_edges
        if need > n_src * n_dst:
            raise ValidationError(
                f"cannot rewire {rel.name!r}: {need} edges exceed "
                f"{n_src * n_dst} distinct pairs")
        chosen = {}
        while len(chosen) < need:
            m = max(need - len(chosen), 16)
            s = rng.integers(0, n_src, size=2 * m)
            d = rng.integers(0, n_dst, size=2 * m)
            for a, b in zip(s, d):
                if (a, b) not in chosen:
                    chosen[(a, b)] = None
                    if len(chosen) == need:
                        break
        pairs = np.array(list(chosen), dtype=np.int64)
        relations[rel.name] = _canonical_relation(
            rel.name, rc, rel.src_class, rel.dst_class, pairs[:, 0], pairs[:, 1])
    return _finalize(graph.ids, graph.features, graph.chrom, graph.pos,
                     relations, graph.meta)


def drop_class(graph: KnowledgeGraph, relation_class) -> KnowledgeGraph:
    rc = coerce_relation_class(relation_class)
    relations = {name: rel for name, rel in graph.relations.items()
                 if rel.relation_class is not rc}
    return _finalize(graph.ids, graph.features, graph.chrom, graph.pos,
                     relations, graph.meta)


def _step_name(step) -> str:
    return {
        RemovePrograms: "remove_programs",
        RestrictV2G: "restrict_v2g",
        RestrictG2GMajor: "restrict_g2g_major",
        CollapseClass: "collapse_class",
        RestrictGenes: "restrict_genes",
        RewireRandom: "rewire_random",
        DropClass: "drop_class",
    }[type(step)]


def apply_step(graph: KnowledgeGraph, step) -> KnowledgeGraph:
    if isinstance(step, RemovePrograms):
        return remove_program_nodes(graph)
    if isinstance(step, RestrictV2G):
        out, _warn = restrict_v2g(graph, step.allowed)
        return out
    if isinstance(step, RestrictG2GMajor):
        return restrict_g2g_major(graph, step.min_count)
    if isinstance(step, CollapseClass):
        return collapse_class(graph, step.relation_class, step.merged_name or None)
    if isinstance(step, RestrictGenes):
        return restrict_genes(graph, step.gene_ids)
    if isinstance(step, RewireRandom):
        return rewire_random(graph, step.relation_class, step.seed)
    if isinstance(step, DropClass):
        return drop_class(graph, step.relation_class)
    raise ValidationError(f"unknown plan step: {step!r}")


def apply_plan(graph: KnowledgeGraph, plan: SparsifyPlan):
    """Apply steps left to right; returns (graph, stages) where stages is a
    list of (stage name, GraphStats) starting with the input graph."""
    stages = [("input", graph_stats(graph))]
    for step in plan.steps:
        graph = apply_step(graph, step)
        stages.append((_step_name(step), graph_stats(graph)))
    return graph, stages


# ------------------------------------------------------------- serialization

def format_plan(plan: SparsifyPlan) -> str:
    lines = []
    for step in plan.steps:
        if isinstance(step, RemovePrograms):
            lines.append("remove_programs")
        elif isinstance(step, RestrictV2G):
            lines.append("restrict_v2g " + ",".join(step.allowed))
        elif isinstance(step, RestrictG2GMajor):
            lines.append(f"restrict_g2g_major {step.min_count}")
        elif isinstance(step, CollapseClass):
            name = step.merged_name or f"{step.relation_class}_collapsed"
            lines.append(f"collapse_class {step.relation_class} {name}")
        elif isinstance(step, RestrictGenes):
            lines.append("restrict_genes " + ",".join(step.gene_ids))
        elif isinstance(step, RewireRandom):
            lines.append(f"rewire_random {step.relation_class} {step.seed}")
        elif isinstance(step, DropClass):
            lines.append(f"drop_class {step.relation_class}")
        else:
            raise ValidationError(f"unknown plan step: {step!r}")
    return "\n".join(lines)


def parse_plan(text: str, base_dir=".") -> SparsifyPlan:
    """Parse the one-step-per-line plan syntax. restrict_genes accepts either
    a comma-separated id list or @path to a one-id-per-line file, resolved
    relative to base_dir."""
    steps = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        op, arg = parts[0], (parts[1].strip() if len(parts) > 1 else "")
        try:
            if op == "remove_programs":
                steps.append(RemovePrograms())
            elif op == "restrict_v2g":
                allowed = tuple(a for a in arg.split(",") if a) if arg else DEFAULT_LOCAL_V2G
                steps.append(RestrictV2G(allowed))
            elif op == "restrict_g2g_major":
                steps.append(RestrictG2GMajor(int(arg) if arg else DEFAULT_G2G_MIN_COUNT))
            elif op == "collapse_class":
                bits = arg.split()
                rc = coerce_relation_class(bits[0]).value if bits else "g2g"
                merged = bits[1] if len(bits) > 1 else ""
                steps.append(CollapseClass(rc, merged))
            elif op == "restrict_genes":
                if arg.startswith("@"):
                    path = os.path.join(base_dir, arg[1:])
                    if not os.path.exists(path):
                        raise ValidationError(f"missing gene list file: {path}")
                    with open(path, "r", encoding="utf-8") as fh:
                        ids = tuple(s.strip() for s in fh
                                    if s.strip() and not s.startswith("#"))
                else:
                    ids = tuple(a for a in arg.split(",") if a)
                steps.append(RestrictGenes(ids))
            elif op == "rewire_random":
                bits = arg.split()
                rc = coerce_relation_class(bits[0]).value if bits else "g2g"
                seed = int(bits[1]) if len(bits) > 1 else 0
                steps.append(RewireRandom(rc, seed))
            elif op == "drop_class":
                steps.append(DropClass(coerce_relation_class(arg).value))
            else:
                raise ValidationError(f"unknown plan step {op!r}")
        except (IndexError, TypeError, ValueError) as exc:
            raise ValidationError(f"plan line {ln}: malformed {op!r}: {exc}") from None
    return SparsifyPlan(tuple(steps))


def stages_tsv_lines(stages):
    """Flatten apply_plan stage stats into TSV lines for stages.tsv."""
    lines = ["# stage\titem\tcount"]
    for name, stats in stages:
        for cls, n in sorted(stats.node_counts.items()):
            lines.append(f"{name}\tnodes/{cls}\t{n}")
        for rel, n in sorted(stats.edge_counts.items()):
            lines.append(f"{name}\tedges/{rel}\t{n}")
        for rel, n in sorted(stats.self_loop_counts.items()):
            if n:
                lines.append(f"{name}\tselfloops/{rel}\t{n}")
        lines.append(f"{name}\tedges/_total\t{stats.total_edges}")
    return lines
