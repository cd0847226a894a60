"""TSV and bundle serialization for graphs, stats tables, and targets.

All writers emit floats via repr() so values round-trip bit-exactly, and all
row orders are canonical, which makes every file byte-stable for identical
inputs. Lines starting with '#' are comments.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ValidationError
from .graph import (KnowledgeGraph, NodeClass, build_graph, graph_stats,
                    with_meta)

FORMAT_VERSION = 1


def fmt_float(x) -> str:
    return repr(float(x))


def _read_rows(path, n_min_cols):
    if not os.path.exists(path):
        raise ValidationError(f"missing file: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < n_min_cols:
                raise ValidationError(f"{path}:{ln}: expected >= {n_min_cols} columns")
            rows.append(cols)
    return rows


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------- node files

def write_nodes(graph: KnowledgeGraph, path):
    lines = ["# node_id\tnode_class\tchrom\tpos"]
    for i, nid in enumerate(graph.ids[NodeClass.VARIANT]):
        lines.append(f"{nid}\tvariant\t{graph.chrom[i]}\t{int(graph.pos[i])}")
    for cls in (NodeClass.GENE, NodeClass.PROGRAM):
        for nid in graph.ids[cls]:
            lines.append(f"{nid}\t{cls.value}\t\t")
    write_lines(path, lines)


def read_nodes(path):
    """Return node records (id, class, chrom, pos) in file order."""
    recs = []
    for cols in _read_rows(path, 2):
        nid, ncls = cols[0], cols[1]
        chrom = cols[2] if len(cols) > 2 else ""
        pos = cols[3] if len(cols) > 3 else ""
        recs.append((nid, ncls, chrom, pos if pos else 0))
    return recs


# ---------------------------------------------------------------- edge files

def write_edges(graph: KnowledgeGraph, path):
    lines = ["# src_id\tdst_id\trelation_name\trelation_class"]
    for rel in graph.relations.values():
        src_ids = graph.ids[rel.src_class]
        dst_ids = graph.ids[rel.dst_class]
        for s, d in zip(rel.src, rel.dst):
            lines.append(f"{src_ids[s]}\t{dst_ids[d]}\t{rel.name}\t{rel.relation_class.value}")
    write_lines(path, lines)


def read_edges(path):
    return [(c[0], c[1], c[2], c[3]) for c in _read_rows(path, 4)]


def write_edge_records(records, path):
    """records: iterable of (src_id, dst_id, relation_name, relation_class str)."""
    lines = ["# src_id\tdst_id\trelation_name\trelation_class"]
    for src, dst, name, rcls in records:
        lines.append(f"{src}\t{dst}\t{name}\t{rcls}")
    write_lines(path, lines)


# ------------------------------------------------------------- feature files

def write_features(graph: KnowledgeGraph, path):
    lines = ["# node_id\tfeature values"]
    for cls in (NodeClass.VARIANT, NodeClass.GENE, NodeClass.PROGRAM):
        feats = graph.features[cls]
        for i, nid in enumerate(graph.ids[cls]):
            vals = "\t".join(fmt_float(v) for v in feats[i])
            lines.append(f"{nid}\t{vals}" if vals else nid)
    write_lines(path, lines)


def read_features(path, class_of_id):
    """Parse features into {NodeClass: {id: vector}} using class_of_id lookup.

    class_of_id maps a node id to its NodeClass; ids claimed by more than one
    class cannot be resolved and must be rejected upstream.
    """
    tables = {}
    for cols in _read_rows(path, 1):
        nid = cols[0]
        cls = class_of_id.get(nid)
        if cls is None:
            raise ValidationError(f"feature row for unknown node id {nid!r}")
        vec = np.array([float(v) for v in cols[1:]], dtype=np.float64)
        tables.setdefault(cls, {})[nid] = vec
    return tables


# ------------------------------------------------------------------- bundles

def write_bundle(graph: KnowledgeGraph, outdir):
    os.makedirs(outdir, exist_ok=True)
    write_nodes(graph, os.path.join(outdir, "nodes.tsv"))
    write_edges(graph, os.path.join(outdir, "edges.tsv"))
    write_features(graph, os.path.join(outdir, "features.tsv"))
    stats = graph_stats(graph)
    manifest = {
        "format_version": FORMAT_VERSION,
        "node_counts": stats.node_counts,
        "edge_counts": stats.edge_counts,
        "self_loop_counts": stats.self_loop_counts,
        "collapsed_duplicates": stats.collapsed_duplicates,
        "program_feature_seed": graph.meta.get("program_feature_seed"),
        "feature_dims": {cls.value: int(graph.features[cls].shape[1])
                         for cls in NodeClass},
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(manifest))


def read_bundle(indir) -> KnowledgeGraph:
    nodes = read_nodes(os.path.join(indir, "nodes.tsv"))
    edges = read_edges(os.path.join(indir, "edges.tsv"))
    class_of_id = {}
    for nid, ncls, _c, _p in nodes:
        from .graph import coerce_node_class
        cls = coerce_node_class(ncls)
        if nid in class_of_id and class_of_id[nid] is not cls:
            raise ValidationError(f"node id {nid!r} appears in two classes")
        class_of_id[nid] = cls
    features = read_features(os.path.join(indir, "features.tsv"), class_of_id)
    mpath = os.path.join(indir, "manifest.json")
    if not os.path.exists(mpath):
        raise ValidationError(f"missing file: {mpath}")
    with open(mpath, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    graph, stats = build_graph(nodes, edges, feature_tables=features)
    for cls in NodeClass:
        want = manifest.get("node_counts", {}).get(cls.value)
        if want is not None and want != stats.node_counts[cls.value]:
            raise ValidationError(
                f"manifest node count mismatch for {cls.value}: "
                f"{want} vs {stats.node_counts[cls.value]}")
    return with_meta(
        graph,
        collapsed_duplicates=int(manifest.get("collapsed_duplicates", 0)),
        program_feature_seed=manifest.get("program_feature_seed"),
    )


# ------------------------------------------------------- association tables

def write_stats_tsv(stats, path):
    """stats: assoc.GwasStats."""
    lines = ["# variant_id\tchrom\tpos\tchi2\tp\tld_score"]
    for i in range(len(stats.ids)):
        lines.append("\t".join([
            stats.ids[i], stats.chrom[i], str(int(stats.pos[i])),
            fmt_float(stats.chi2[i]), fmt_float(stats.p[i]),
            fmt_float(stats.ld_score[i]),
        ]))
    write_lines(path, lines)


def read_stats_tsv(path):
    from .assoc import GwasStats
    rows = _read_rows(path, 6)
    return GwasStats(
        ids=tuple(r[0] for r in rows),
        chrom=tuple(r[1] for r in rows),
        pos=np.array([int(r[2]) for r in rows], dtype=np.int64),
        chi2=np.array([float(r[3]) for r in rows]),
        p=np.array([float(r[4]) for r in rows]),
        ld_score=np.array([float(r[5]) for r in rows]),
    )


def write_targets_tsv(ids, chi2, ld_score, path):
    lines = ["# variant_id\tchi2\tld_score"]
    for i, nid in enumerate(ids):
        lines.append(f"{nid}\t{fmt_float(chi2[i])}\t{fmt_float(ld_score[i])}")
    write_lines(path, lines)


def read_targets_tsv(path):
    rows = _read_rows(path, 3)
    ids = tuple(r[0] for r in rows)
    chi2 = np.array([float(r[1]) for r in rows])
    ld = np.array([float(r[2]) for r in rows])
    return ids, chi2, ld


def write_pred_tsv(ids, chi2_pred, path):
    lines = ["# variant_id\tchi2_pred"]
    for i, nid in enumerate(ids):
        lines.append(f"{nid}\t{fmt_float(chi2_pred[i])}")
    write_lines(path, lines)


def read_pred_tsv(path):
    rows = _read_rows(path, 2)
    return tuple(r[0] for r in rows), np.array([float(r[1]) for r in rows])


def write_loci_tsv(loci, path):
    lines = ["# rank\tlead_variant\tchrom\tpos\tlead_p\tn_members"]
    for rank, locus in enumerate(loci, 1):
        lines.append("\t".join([
            str(rank), locus.lead_id, locus.chrom, str(int(locus.pos)),
            fmt_float(locus.lead_p), str(len(locus.members)),
        ]))
    write_lines(path, lines)


def read_loci_tsv(path):
    from .assoc import Locus
    loci = []
    for r in _read_rows(path, 6):
        loci.append(Locus(lead_id=r[1], chrom=r[2], pos=int(r[3]),
                          lead_p=float(r[4]), members=(r[1],) * int(r[5])))
    return loci


# ------------------------------------------------------------ count matrices

def write_counts_dir(cm, outdir):
    """cm: perturb.CellMatrix -> counts.tsv (sparse triplets), guides.tsv,
    controls.txt."""
    os.makedirs(outdir, exist_ok=True)
    lines = ["# cell_id\tfeature_id\tcount"]
    for i, cid in enumerate(cm.cell_ids):
        row = cm.counts[i]
        for j in np.nonzero(row)[0]:
            lines.append(f"{cid}\t{cm.feature_ids[j]}\t{int(row[j])}")
    write_lines(os.path.join(outdir, "counts.tsv"), lines)
    glines = ["# cell_id\ttarget_id\tguide_id"]
    for cell, target, guide in cm.guides:
        glines.append(f"{cell}\t{target}\t{guide}")
    write_lines(os.path.join(outdir, "guides.tsv"), glines)
    write_lines(os.path.join(outdir, "controls.txt"), sorted(cm.controls))


def read_counts_dir(indir):
    from .perturb import CellMatrix
    triplets = _read_rows(os.path.join(indir, "counts.tsv"), 3)
    guides = [(c[0], c[1], c[2]) for c in
              _read_rows(os.path.join(indir, "guides.tsv"), 3)]
    cpath = os.path.join(indir, "controls.txt")
    if not os.path.exists(cpath):
        raise ValidationError(f"missing file: {cpath}")
    with open(cpath, "r", encoding="utf-8") as fh:
        controls = frozenset(line.strip() for line in fh
                             if line.strip() and not line.startswith("#"))
    cell_ids, feat_ids = [], []
    cell_idx, feat_idx = {}, {}
    for cid, fid, _ in triplets:
        if cid not in cell_idx:
            cell_idx[cid] = len(cell_ids)
            cell_ids.append(cid)
        if fid not in feat_idx:
            feat_idx[fid] = len(feat_ids)
            feat_ids.append(fid)
    for cid, _t, _g in guides:
        if cid not in cell_idx:
            cell_idx[cid] = len(cell_ids)
            cell_ids.append(cid)
    counts = np.zeros((len(cell_ids), len(feat_ids)), dtype=np.int64)
    for cid, fid, val in triplets:
        counts[cell_idx[cid], feat_idx[fid]] += int(val)
    return CellMatrix(counts=counts, cell_ids=tuple(cell_ids),
                      feature_ids=tuple(feat_ids), guides=tuple(guides),
                      controls=controls)
