"""Variant-rooted critical networks from attention records.

Attention logits are normalized within each (layer, relation), max-pooled
per directed node pair across relations (reverse-direction records count
toward their forward edge), expanded from a root variant by top-k selection
at each hop, and merged across seeds with per-edge occurrence counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ValidationError
from .gat import REVERSE_SUFFIX
from .graph import KnowledgeGraph, NodeClass, coerce_node_class
from .io import canonical_json, fmt_float, write_lines
from .perturb import CONTEXT_RELATION

DEFAULT_V2G_LAYER = 0
DEFAULT_G2G_LAYER = 1


@dataclass(frozen=True)
class NetworkNode:
    id: str
    node_class: NodeClass
    context_flag: bool


@dataclass(frozen=True)
class NetworkEdge:
    src: str
    dst: str
    hop: int
    score: float
    occurrence: int = 1
    relation: str = ""


@dataclass(frozen=True)
class CriticalNetwork:
    root: str
    nodes: tuple
    edges: tuple
    no_v2g: bool = False
    n_networks: int = 1


def pooled_scores(records, layer: int, norm: str = "minmax"):
    """Per directed node pair, the max normalized attention score across
    relations of one layer; returns {(src_class, src, dst_class, dst):
    (score, relation)}. Records from reverse relations are mapped back to
    their forward orientation so both directions of the same stored edge
    pool together. Normalization is per relation: min-max to [0,1]
    (constant logits -> 0.5) or average-rank scaled to [0,1]."""
    if norm not in ("minmax", "rank"):
        raise ValidationError(f"unknown normalization {norm!r}")
    layer_records = [r for r in records if r.layer == layer]
    if not layer_records:
        raise ValidationError(f"no attention records for layer {layer}")
    pool = {}
    for rec in sorted(layer_records, key=lambda r: r.relation):
        logits = np.asarray(rec.logits, dtype=np.float64)
        if norm == "minmax":
            lo, hi = logits.min(), logits.max()
            scores = ((logits - lo) / (hi - lo) if hi > lo
                      else np.full(logits.shape, 0.5))
        else:
            if logits.shape[0] == 1 or logits.min() == logits.max():
                scores = np.full(logits.shape, 0.5)
            else:
                ranks = sps.rankdata(logits, method="average")
                scores = (ranks - 1.0) / (logits.shape[0] - 1.0)
        name = rec.relation
        if name.endswith(REVERSE_SUFFIX):
            name = name[: -len(REVERSE_SUFFIX)]
            sc, dc = rec.dst_class, rec.src_class
            src, dst = rec.dst, rec.src
        else:
            sc, dc = rec.src_class, rec.dst_class
            src, dst = rec.src, rec.dst
        for e in range(src.shape[0]):
            key = (sc, int(src[e]), dc, int(dst[e]))
            val = (float(scores[e]), name)
            cur = pool.get(key)
            if cur is None or val[0] > cur[0] or (val[0] == cur[0]
                                                  and val[1] < cur[1]):
                pool[key] = val
    return pool


def _top_k(candidates, k):
    """candidates: [(node_id, score, relation)]; best score first, ties by id."""
    return sorted(candidates, key=lambda c: (-c[1], c[0]))[:k]


def extract_network(graph: KnowledgeGraph, v2g_pool, g2g_pool, root_id: str,
                    k: int = 5) -> CriticalNetwork:
    """Top-k genes by pooled variant->gene score from the root, then per
    hop-1 gene the top-k genes by pooled gene->gene score (self pairs
    excluded). A root with no variant->gene attention yields an empty
    network with no_v2g set."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if root_id not in graph.index[NodeClass.VARIANT]:
        raise ValidationError(f"unknown variant {root_id!r}")
    root = graph.index[NodeClass.VARIANT][root_id]
    gene_ids = graph.ids[NodeClass.GENE]

    hop1 = _top_k([(gene_ids[key[3]], sc, rel)
                   for key, (sc, rel) in v2g_pool.items()
                   if key[0] is NodeClass.VARIANT and key[1] == root
                   and key[2] is NodeClass.GENE], k)
    if not hop1:
        node = NetworkNode(id=root_id, node_class=NodeClass.VARIANT,
                           context_flag=False)
        return CriticalNetwork(root=root_id, nodes=(node,), edges=(),
                               no_v2g=True)

    edges = [NetworkEdge(src=root_id, dst=gid, hop=1, score=score,
                         relation=rel) for gid, score, rel in hop1]
    flags = {root_id: False}
    classes = {root_id: NodeClass.VARIANT}
    for gid, _score, rel in hop1:
        flags[gid] = flags.get(gid, False) or rel == CONTEXT_RELATION
        classes[gid] = NodeClass.GENE
    for gid, _score, _rel in hop1:
        g = graph.index[NodeClass.GENE][gid]
        nbrs = _top_k([(gene_ids[key[3]], sc, rel)
                       for key, (sc, rel) in g2g_pool.items()
                       if key[0] is NodeClass.GENE and key[1] == g
                       and key[2] is NodeClass.GENE and key[3] != g], k)
        for hid, score, rel in nbrs:
            edges.append(NetworkEdge(src=gid, dst=hid, hop=2, score=score,
                                     relation=rel))
            flags[hid] = flags.get(hid, False) or rel == CONTEXT_RELATION
            classes[hid] = NodeClass.GENE
    nodes = tuple(NetworkNode(id=nid, node_class=classes[nid],
                              context_flag=flags[nid])
                  for nid in sorted(classes,
                                    key=lambda n: (classes[n].value, n)))
    edges = tuple(sorted(edges, key=lambda e: (e.hop, e.src, e.dst)))
    return CriticalNetwork(root=root_id, nodes=nodes, edges=edges)


def network_from_records(records, graph: KnowledgeGraph, root_id: str,
                         k: int = 5, v2g_layer: int = DEFAULT_V2G_LAYER,
                         g2g_layer: int = DEFAULT_G2G_LAYER,
                         norm: str = "minmax") -> CriticalNetwork:
    v2g_pool = pooled_scores(records, v2g_layer, norm=norm)
    g2g_pool = pooled_scores(records, g2g_layer, norm=norm)
    return extract_network(graph, v2g_pool, g2g_pool, root_id, k=k)


def merge_seed_networks(networks) -> CriticalNetwork:
    """Edge union keyed on (src, dst, hop): occurrence = number of input
    networks containing the edge, score = mean over those networks; node
    context flags are OR-ed. All inputs must share the root."""
    networks = list(networks)
    if not networks:
        raise ValidationError("no networks to merge")
    roots = {n.root for n in networks}
    if len(roots) != 1:
        raise ValidationError(f"mismatched roots: {sorted(roots)}")
    node_class = {}
    node_flag = {}
    edge_scores = {}
    edge_rel = {}
    for net in networks:
        for node in net.nodes:
            prev = node_class.get(node.id)
            if prev is not None and prev is not node.node_class:
                raise ValidationError(f"node {node.id!r} changes class across networks")
            node_class[node.id] = node.node_class
            node_flag[node.id] = node_flag.get(node.id, False) or node.context_flag
        for edge in net.edges:
            key = (edge.src, edge.dst, edge.hop)
            edge_scores.setdefault(key, []).append(edge.score)
            if key not in edge_rel or (edge.relation and edge.relation < edge_rel[key]):
                edge_rel[key] = edge.relation
    edges = tuple(NetworkEdge(src=s, dst=d, hop=hp,
                              score=float(np.mean(edge_scores[(s, d, hp)])),
                              occurrence=len(edge_scores[(s, d, hp)]),
                              relation=edge_rel[(s, d, hp)])
                  for s, d, hp in sorted(edge_scores))
    nodes = tuple(NetworkNode(id=nid, node_class=node_class[nid],
                              context_flag=node_flag[nid])
                  for nid in sorted(node_class,
                                    key=lambda n: (node_class[n].value, n)))
    return CriticalNetwork(root=networks[0].root, nodes=nodes, edges=edges,
                           no_v2g=all(n.no_v2g for n in networks),
                           n_networks=len(networks))


def consistency_score(network: CriticalNetwork, n_networks: int = None) -> float:
    """Mean over edges of occurrence / S; 1.0 iff every edge appears in
    every seed network."""
    s = network.n_networks if n_networks is None else int(n_networks)
    if s < 1:
        raise ValidationError("need at least one network")
    if not network.edges:
        raise ValidationError("cannot score an empty network")
    return float(np.mean([e.occurrence / s for e in network.edges]))


# -------------------------------------------------------------------- files

def network_payload(network: CriticalNetwork) -> dict:
    return {
        "root": network.root,
        "no_v2g": network.no_v2g,
        "nodes": [{"id": n.id, "class": n.node_class.value,
                   "context_flag": n.context_flag} for n in network.nodes],
        "edges": [{"src": e.src, "dst": e.dst, "hop": e.hop,
                   "score": e.score, "occurrence": e.occurrence}
                  for e in network.edges],
    }


def write_network_json(network: CriticalNetwork, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(network_payload(network)))


def read_network_json(path) -> CriticalNetwork:
    import json
    import os
    if not os.path.exists(path):
        raise ValidationError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    for key in ("root", "nodes", "edges"):
        if key not in payload:
            raise ValidationError(f"network file missing {key!r}: {path}")
    nodes = tuple(NetworkNode(id=str(n["id"]),
                              node_class=coerce_node_class(n["class"]),
                              context_flag=bool(n["context_flag"]))
                  for n in payload["nodes"])
    edges = tuple(NetworkEdge(src=str(e["src"]), dst=str(e["dst"]),
                              hop=int(e["hop"]), score=float(e["score"]),
                              occurrence=int(e["occurrence"]))
                  for e in payload["edges"])
    return CriticalNetwork(root=str(payload["root"]), nodes=nodes,
                           edges=edges, no_v2g=bool(payload.get("no_v2g", False)))


def write_network_tsv(network: CriticalNetwork, path):
    lines = ["# root\thop\tsrc\tdst\tscore\toccurrence"]
    for e in network.edges:
        lines.append("\t".join([network.root, str(e.hop), e.src, e.dst,
                                fmt_float(e.score), str(e.occurrence)]))
    write_lines(path, lines)
