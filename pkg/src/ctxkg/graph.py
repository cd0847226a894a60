"""Typed heterogeneous variant-gene-program graph.

Nodes come in three classes (variant, gene, program) and edges in three
relation classes (v2g, g2g, g2p), each relation carrying a free-form name.
String node ids map to dense integer indices in first-seen order; edges are
stored per relation as index arrays in a canonical sort (relation name, src,
dst) so that serialization is byte-stable. Graphs are immutable: every
mutating operation returns a new value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError


class NodeClass(Enum):
    VARIANT = "variant"
    GENE = "gene"
    PROGRAM = "program"


class RelationClass(Enum):
    V2G = "v2g"
    G2G = "g2g"
    G2P = "g2p"


# endpoint node classes implied by each relation class
ENDPOINTS = {
    RelationClass.V2G: (NodeClass.VARIANT, NodeClass.GENE),
    RelationClass.G2G: (NodeClass.GENE, NodeClass.GENE),
    RelationClass.G2P: (NodeClass.GENE, NodeClass.PROGRAM),
}

DEFAULT_FEATURE_DIMS = {
    NodeClass.VARIANT: 70,
    NodeClass.GENE: 16,
    NodeClass.PROGRAM: 16,
}


def coerce_node_class(value) -> NodeClass:
    if isinstance(value, NodeClass):
        return value
    try:
        return NodeClass(str(value).strip().lower())
    except ValueError:
        raise ValidationError(f"unknown node class: {value!r}") from None


def coerce_relation_class(value) -> RelationClass:
    if isinstance(value, RelationClass):
        return value
    try:
        return RelationClass(str(value).strip().lower())
    except ValueError:
        raise ValidationError(f"unknown relation class: {value!r}") from None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Relation:
    """One named edge set; src/dst are dense indices into their node classes."""

    name: str
    relation_class: RelationClass
    src_class: NodeClass
    dst_class: NodeClass
    src: np.ndarray
    dst: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def n_self_loops(self) -> int:
        if self.src_class is not self.dst_class:
            return 0
        return int(np.count_nonzero(self.src == self.dst))


@dataclass(frozen=True)
class GraphStats:
    node_counts: dict
    edge_counts: dict
    self_loop_counts: dict
    collapsed_duplicates: int = 0

    @property
    def total_edges(self) -> int:
        return sum(self.edge_counts.values())


@dataclass(frozen=True)
class KnowledgeGraph:
    ids: dict            # NodeClass -> tuple of node id strings, index order
    index: dict          # NodeClass -> {id: dense index}
    features: dict       # NodeClass -> float64 matrix, one row per node
    chrom: tuple         # per-variant chromosome labels
    pos: np.ndarray      # per-variant base-pair positions
    relations: dict      # relation name -> Relation, keys sorted
    meta: dict

    def n_nodes(self, node_class) -> int:
        return len(self.ids[coerce_node_class(node_class)])

    def relations_of_class(self, relation_class) -> list:
        rc = coerce_relation_class(relation_class)
        return [r for r in self.relations.values() if r.relation_class is rc]

    def node_id(self, node_class, idx: int) -> str:
        return self.ids[coerce_node_class(node_class)][idx]


def _canonical_relation(name, relation_class, src_class, dst_class, src, dst,
                        dedup_counter=None) -> Relation:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape[0] == 0:
        pairs = np.empty((0, 2), dtype=np.int64)
    else:
        pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
    if dedup_counter is not None:
        dedup_counter[0] += src.shape[0] - pairs.shape[0]
    return Relation(name, relation_class, src_class, dst_class,
                    _frozen(pairs[:, 0].copy()), _frozen(pairs[:, 1].copy()))


def _finalize(ids, features, chrom, pos, relations, meta) -> KnowledgeGraph:
    ids = {cls: tuple(ids.get(cls, ())) for cls in NodeClass}
    index = {cls: {nid: i for i, nid in enumerate(ids[cls])} for cls in NodeClass}
    feats = {}
    for cls in NodeClass:
        m = np.asarray(features[cls], dtype=np.float64)
        if m.ndim != 2:
            m = m.reshape(len(ids[cls]), -1)
        feats[cls] = _frozen(m.copy())
    rels = {name: relations[name] for name in sorted(relations)}
    return KnowledgeGraph(
        ids=ids,
        index=index,
        features=feats,
        chrom=tuple(chrom),
        pos=_frozen(np.asarray(pos, dtype=np.int64).copy()),
        relations=rels,
        meta=dict(meta),
    )


def with_meta(graph: KnowledgeGraph, **updates) -> KnowledgeGraph:
    meta = dict(graph.meta)
    meta.update(updates)
    return _finalize(graph.ids, graph.features, graph.chrom, graph.pos,
                     graph.relations, meta)


def build_graph(node_spec, edge_records, feature_tables=None,
                feature_dims=None, program_feature_seed=0):
    """Construct a canonical KnowledgeGraph from string-id records.

    node_spec: iterable of (node_id, node_class[, chrom, pos]).
    edge_records: iterable of (src_id, dst_id, relation_name, relation_class).
    feature_tables: optional {node_class: {node_id: vector}}; a present table
      must cover its class exactly. Absent variant/gene tables zero-fill;
    absent program features are drawn from a seeded standard normal.
    Returns (graph, stats); duplicate edge records collapse silently and the
    collapsed count is reported on the stats.
    """
    ids = {cls: [] for cls in NodeClass}
    index = {cls: {} for cls in NodeClass}
    chrom, pos = [], []
    for rec in node_spec:
        nid, cls = str(rec[0]), coerce_node_class(rec[1])
        if nid in index[cls]:
            raise ValidationError(f"duplicate node id within class: {nid!r} ({cls.value})")
        index[cls][nid] = len(ids[cls])
        ids[cls].append(nid)
        if cls is NodeClass.VARIANT:
            chrom.append(str(rec[2]) if len(rec) > 2 else "")
            pos.append(int(rec[3]) if len(rec) > 3 and str(rec[3]) != "" else 0)

    raw = {}   # name -> (relation_class, [src], [dst])
    for src_id, dst_id, name, rclass in edge_records:
        name = str(name)
        rc = coerce_relation_class(rclass)
        if name in raw:
            if raw[name][0] is not rc:
                raise ValidationError(
                    f"relation class mismatch for {name!r}: "
                    f"{raw[name][0].value} vs {rc.value}")
        else:
            raw[name] = (rc, [], [])
        sc, dc = ENDPOINTS[rc]
        try:
            si = index[sc][str(src_id)]
        except KeyError:
            raise ValidationError(
                f"unknown node id {src_id!r} ({sc.value}) in relation {name!r}") from None
        try:
            di = index[dc][str(dst_id)]
        except KeyError:
            raise ValidationError(
                f"unknown node id {dst_id!r} ({dc.value}) in relation {name!r}") from None
        raw[name][1].append(si)
        raw[name][2].append(di)

    dedup = [0]
    relations = {}
    for name in sorted(raw):
        rc, src, dst = raw[name]
        sc, dc = ENDPOINTS[rc]
        relations[name] = _canonical_relation(name, rc, sc, dc, src, dst, dedup)

    dims = dict(DEFAULT_FEATURE_DIMS)
    if feature_dims:
        for cls, d in feature_dims.items():
            dims[coerce_node_class(cls)] = int(d)
    tables = {}
    if feature_tables:
        for cls, table in feature_tables.items():
            tables[coerce_node_class(cls)] = table

    features = {}
    seed_used = None
    for cls in NodeClass:
        n = len(ids[cls])
        table = tables.get(cls)
        if table is not None:
            missing = [nid for nid in ids[cls] if nid not in table]
            if missing or len(table) != n:
                raise ValidationError(
                    f"feature table for {cls.value} does not cover its nodes "
                    f"exactly (missing {missing[:3]!r}, got {len(table)} rows for {n} nodes)")
            rows = [np.asarray(table[nid], dtype=np.float64).ravel() for nid in ids[cls]]
            widths = {r.shape[0] for r in rows}
            if len(widths) > 1:
                raise ValidationError(
                    f"inconsistent feature widths for {cls.value}: {sorted(widths)}")
            features[cls] = np.vstack(rows) if rows else np.empty((0, dims[cls]))
        elif cls is NodeClass.PROGRAM and n > 0:
            rng = np.random.default_rng(program_feature_seed)
            features[cls] = rng.standard_normal((n, dims[cls]))
            seed_used = int(program_feature_seed)
        else:
            features[cls] = np.zeros((n, dims[cls]))

    meta = {"collapsed_duplicates": int(dedup[0]), "program_feature_seed": seed_used}
    graph = _finalize(ids, features, chrom, pos, relations, meta)
    return graph, graph_stats(graph)


def graph_stats(graph: KnowledgeGraph) -> GraphStats:
    return GraphStats(
        node_counts={cls.value: len(graph.ids[cls]) for cls in NodeClass},
        edge_counts={name: r.n_edges for name, r in graph.relations.items()},
        self_loop_counts={name: r.n_self_loops for name, r in graph.relations.items()},
        collapsed_duplicates=int(graph.meta.get("collapsed_duplicates", 0)),
    )


def validate(graph: KnowledgeGraph) -> list:
    """Return a list of human-readable invariant violations (empty iff valid)."""
    out = []
    for cls in NodeClass:
        n = len(graph.ids[cls])
        f = graph.features[cls]
        if f.shape[0] != n:
            out.append(f"feature shape: {cls.value} has {f.shape[0]} rows for {n} nodes")
        elif f.size and not np.all(np.isfinite(f)):
            out.append(f"non-finite feature: {cls.value}")
        if len(set(graph.ids[cls])) != n:
            out.append(f"duplicate node id: class {cls.value}")
    nv = len(graph.ids[NodeClass.VARIANT])
    if len(graph.chrom) != nv or graph.pos.shape[0] != nv:
        out.append("variant metadata length mismatch")
    for key, rel in graph.relations.items():
        if key != rel.name:
            out.append(f"name mismatch: key {key!r} vs relation {rel.name!r}")
        sc, dc = ENDPOINTS[rel.relation_class]
        if rel.src_class is not sc or rel.dst_class is not dc:
            out.append(f"class mismatch: relation {rel.name!r} declares "
                       f"{rel.src_class.value}->{rel.dst_class.value} "
                       f"for class {rel.relation_class.value}")
            continue
        ns, nd = len(graph.ids[sc]), len(graph.ids[dc])
        if rel.n_edges:
            if rel.src.min(initial=0) < 0 or (rel.n_edges and rel.src.max() >= ns):
                out.append(f"dangling endpoint: relation {rel.name!r} src out of range")
            if rel.dst.min(initial=0) < 0 or (rel.n_edges and rel.dst.max() >= nd):
                out.append(f"dangling endpoint: relation {rel.name!r} dst out of range")
            pairs = np.stack([rel.src, rel.dst], axis=1)
            if np.unique(pairs, axis=0).shape[0] != rel.n_edges:
                out.append(f"duplicate edge: relation {rel.name!r}")
            order = np.lexsort((rel.dst, rel.src))
            if not np.array_equal(order, np.arange(rel.n_edges)):
                out.append(f"canonical order: relation {rel.name!r} not sorted")
    return out


def add_self_loops(graph: KnowledgeGraph, relation_class) -> KnowledgeGraph:
    """Add (g, g) to every relation of the class, for every gene; idempotent."""
    rc = coerce_relation_class(relation_class)
    if rc is not RelationClass.G2G:
        raise ValidationError(f"self-loops only supported for g2g, got {rc.value}")
    n = len(graph.ids[NodeClass.GENE])
    loops = np.arange(n, dtype=np.int64)
    relations = {}
    for name, rel in graph.relations.items():
        if rel.relation_class is rc:
            src = np.concatenate([rel.src, loops])
            dst = np.concatenate([rel.dst, loops])
            relations[name] = _canonical_relation(
                name, rc, rel.src_class, rel.dst_class, src, dst)
        else:
            relations[name] = rel
    return _finalize(graph.ids, graph.features, graph.chrom, graph.pos,
                     relations, graph.meta)


def induced_subgraph(graph: KnowledgeGraph, keep) -> KnowledgeGraph:
    """Node-induced subgraph. keep maps node class -> iterable of node ids;
    classes not listed keep all nodes. Indices re-densify in original order."""
    keep_sets = {}
    for cls_key, nids in keep.items():
        cls = coerce_node_class(cls_key)
        nids = set(str(x) for x in nids)
        unknown = nids - set(graph.ids[cls])
        if unknown:
            raise ValidationError(
                f"unknown {cls.value} id(s) in keep set: {sorted(unknown)[:3]!r}")
        keep_sets[cls] = nids

    old_to_new, new_ids = {}, {}
    for cls in NodeClass:
        if cls in keep_sets:
            kept = [i for i, nid in enumerate(graph.ids[cls]) if nid in keep_sets[cls]]
        else:
            kept = list(range(len(graph.ids[cls])))
        remap = -np.ones(len(graph.ids[cls]), dtype=np.int64)
        remap[kept] = np.arange(len(kept), dtype=np.int64)
        old_to_new[cls] = remap
        new_ids[cls] = [graph.ids[cls][i] for i in kept]

    features = {cls: graph.features[cls][old_to_new[cls] >= 0] for cls in NodeClass}
    vmask = old_to_new[NodeClass.VARIANT] >= 0
    chrom = [c for c, m in zip(graph.chrom, vmask) if m]
    pos = graph.pos[vmask]

    relations = {}
    for name, rel in graph.relations.items():
        s = old_to_new[rel.src_class][rel.src]
        d = old_to_new[rel.dst_class][rel.dst]
        ok = (s >= 0) & (d >= 0)
        if not ok.any():
            continue
        relations[name] = _canonical_relation(
            name, rel.relation_class, rel.src_class, rel.dst_class, s[ok], d[ok])
    return _finalize(new_ids, features, chrom, pos, relations, graph.meta)
