"""End-to-end orchestration: graph-variant assembly, training runs, and the
experiment matrix (variant x cohort x seed) with per-cell aggregation.

Every run is reconstructed deterministically from (config, seed): the world,
the GWAS draws, the perturbation screen, and the model initialization all
derive their streams from the run seed, so matrix cells are independent and
safe to execute in parallel worker processes.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .assoc import GwasStats, clump_loci, recalibrate, weighted_bh
from .config import PipelineConfig, VariantSpec
from .errors import ValidationError
from .gat import GatConfig, TrainTarget, init_model, predict, train
from .graph import KnowledgeGraph, NodeClass, build_graph
from .io import fmt_float
from .perturb import (CellMatrix, compute_lfc, fast_ica, filter_cells,
                      program_similarity, select_features, threshold_edges,
                      zscore)
from .simulate import SimScenario, simulate_gwas, simulate_kg, simulate_perturb
from .sparsify import apply_plan, drop_class, parse_plan, rewire_random

# per-purpose offsets mixed into np.random seed sequences so the streams of
# one run never overlap
_GWAS_FULL = 10
_GWAS_SMALL = 11


def graph_node_spec(graph: KnowledgeGraph):
    rows = []
    for i, nid in enumerate(graph.ids[NodeClass.VARIANT]):
        rows.append((nid, "variant", graph.chrom[i], int(graph.pos[i])))
    for cls in (NodeClass.GENE, NodeClass.PROGRAM):
        rows.extend((nid, cls.value) for nid in graph.ids[cls])
    return rows


def graph_edge_records(graph: KnowledgeGraph):
    records = []
    for rel in graph.relations.values():
        src_ids = graph.ids[rel.src_class]
        dst_ids = graph.ids[rel.dst_class]
        for s, d in zip(rel.src, rel.dst):
            records.append((src_ids[int(s)], dst_ids[int(d)], rel.name,
                            rel.relation_class.value))
    return records


def add_edge_records(graph: KnowledgeGraph, records) -> KnowledgeGraph:
    """Rebuild the graph with extra edge records appended; nodes, features
    and existing edges are preserved exactly."""
    tables = {cls: {nid: graph.features[cls][i]
                    for i, nid in enumerate(graph.ids[cls])}
              for cls in NodeClass if len(graph.ids[cls])}
    dims = {cls.value: int(graph.features[cls].shape[1]) for cls in NodeClass}
    out, _stats = build_graph(graph_node_spec(graph),
                              graph_edge_records(graph) + list(records),
                              feature_tables=tables, feature_dims=dims)
    return out


def context_edge_records(cm: CellMatrix, params, k_hint: int = 0):
    """Perturbation screen to context G2G edge records: cell filter, LFC
    against controls, z-scoring, feature selection (clamped to what the
    matrix offers), ICA into programs, cosine similarity, tau binarization.
    Returns (records, SimilarityGraph, info dict)."""
    cm = filter_cells(cm)
    lfc = compute_lfc(cm, pseudo_count=params.pseudo_count)
    z = zscore(lfc)
    n_cols = len(z.feature_ids) - len(z.notes.get("zero_variance", ()))
    n_dev = min(params.n_dev, n_cols)
    n_hvg = min(params.n_hvg, n_cols - n_dev)
    sel = select_features(cm, z, n_dev=n_dev, n_hvg=n_hvg)
    k = params.k if params.k > 0 else k_hint
    if k <= 0:
        raise ValidationError(
            "number of programs k must be set (config [perturb] k) when the "
            "scenario does not imply one")
    prog, ica = fast_ica(sel, k=k, seed=params.seed)
    sim = program_similarity(prog)
    sim, records = threshold_edges(sim, tau=params.tau)
    info = {"n_perturbations": len(prog.perturbation_ids),
            "n_features_selected": len(sel.feature_ids),
            "k_requested": ica.k_requested, "k_effective": ica.k_effective,
            "ica_converged": ica.converged, "tau": params.tau,
            "n_pairs": len(sim.edges), "excluded": list(sim.excluded)}
    return records, sim, info


def assemble_variant(graph: KnowledgeGraph, spec: VariantSpec, records,
                     seed: int = 0) -> KnowledgeGraph:
    """Apply a variant's sparsify plan, then its context-edge strategy:
    none keeps the plan's G2G, add unions in the context records, replace
    swaps all G2G for them. rewire_seed >= 0 rewires G2G afterwards."""
    plan = parse_plan(spec.plan_text())
    out, _stages = apply_plan(graph, plan)
    if spec.perturb_edges == "replace":
        out = drop_class(out, "g2g")
        out = add_edge_records(out, records)
    elif spec.perturb_edges == "add":
        out = add_edge_records(out, records)
    if spec.rewire_seed >= 0:
        out = rewire_random(out, "g2g", seed=spec.rewire_seed + seed)
    return out


def align_target(graph: KnowledgeGraph, stats: GwasStats) -> TrainTarget:
    """Training target in the graph's variant order."""
    pos = {vid: i for i, vid in enumerate(stats.ids)}
    vids = graph.ids[NodeClass.VARIANT]
    missing = [v for v in vids if v not in pos]
    if missing:
        raise ValidationError(
            f"{len(missing)} graph variants lack GWAS rows, e.g. {missing[0]!r}")
    idx = np.array([pos[v] for v in vids], dtype=np.int64)
    return TrainTarget.create(vids, stats.chi2[idx], stats.ld_score[idx])


def train_and_predict(graph: KnowledgeGraph, stats: GwasStats,
                      cfg: GatConfig):
    """Train on the graph against the stats and return (model, history,
    chi2_hat) with predictions aligned to stats.ids order."""
    target = align_target(graph, stats)
    model = init_model(graph, cfg)
    model, history = train(model, graph, target)
    yhat = predict(model, graph)
    by_id = {vid: float(yhat[i])
             for i, vid in enumerate(graph.ids[NodeClass.VARIANT])}
    chi2_hat = np.array([by_id[vid] for vid in stats.ids])
    return model, history, chi2_hat


def reference_loci(stats_full: GwasStats, alpha: float = 0.05,
                   window_bp: int = 500_000, max_loci: int = 100):
    """Discoveries of the fully-powered study: plain-BH significant variants
    of the full-cohort GWAS, clumped. The recall denominator downstream."""
    mask, _cut = weighted_bh(stats_full.p, np.ones(stats_full.n), alpha=alpha)
    if not mask.any():
        raise ValidationError("full-cohort reference has no significant variants")
    return clump_loci(stats_full.take(mask), window_bp=window_bp,
                      max_loci=max_loci)


@dataclasses.dataclass(frozen=True)
class CellResult:
    variant: str
    cohort: int
    seed: int
    recall: float = float("nan")
    n_rejected: int = 0
    error: str = ""


def run_cell(cfg: PipelineConfig, variant_name: str, cohort: int,
             seed: int) -> CellResult:
    """One experiment-matrix run: simulate the world at this seed, assemble
    the graph variant, train, recalibrate the small-cohort GWAS, and score
    top-k locus recall against the full-cohort reference."""
    spec = cfg.variant(variant_name)
    scenario = dataclasses.replace(cfg.scenario, seed=seed)
    graph, truth = simulate_kg(scenario)

    records = []
    if spec.perturb_edges != "none":
        cm = simulate_perturb(truth, scenario)
        k_hint = scenario.n_modules + scenario.n_private_targets
        records, _sim, _info = context_edge_records(cm, cfg.perturb, k_hint)

    variant_graph = assemble_variant(graph, spec, records, seed=seed)

    stats_full = simulate_gwas(truth, cfg.matrix.full_cohort,
                               seed=[seed, _GWAS_FULL])
    stats_small = simulate_gwas(truth, cohort, seed=[seed, _GWAS_SMALL])
    full_loci = reference_loci(stats_full, alpha=cfg.assoc.alpha,
                               window_bp=cfg.assoc.window_bp,
                               max_loci=cfg.assoc.max_loci)

    train_cfg = dataclasses.replace(cfg.train, seed=cfg.train.seed + seed)
    _model, _history, chi2_hat = train_and_predict(variant_graph, stats_small,
                                                   train_cfg)
    report = recalibrate(stats_small, chi2_hat, alpha=cfg.assoc.alpha,
                         window_bp=cfg.assoc.window_bp,
                         max_loci=cfg.assoc.max_loci,
                         full_loci=full_loci, recall_k=cfg.assoc.recall_k)
    return CellResult(variant=variant_name, cohort=cohort, seed=seed,
                      recall=report.recall, n_rejected=report.n_rejected)


def _cell_task(args):
    cfg, variant_name, cohort, seed = args
    try:
        return run_cell(cfg, variant_name, cohort, seed)
    except Exception as exc:
        msg = f"{type(exc).__name__}: {exc}".replace("\t", " ").replace("\n", " ")
        return CellResult(variant=variant_name, cohort=cohort, seed=seed,
                          error=msg)


MATRIX_HEADER = ("# variant\tcohort\tseeds\tn_ok\tmean_recall\tsd_recall"
                 "\terrors")


def run_matrix(cfg: PipelineConfig, jobs: int = 1):
    """Run every (variant, cohort, seed) combination, aggregate per
    (variant, cohort) cell, and return (results, tsv_lines). Failures are
    recorded in the cell's error column; the matrix keeps going."""
    cfg.check()
    if not cfg.matrix.variants or not cfg.matrix.cohorts:
        raise ValidationError("matrix needs at least one variant and one cohort")
    if jobs < 1:
        raise ValidationError("jobs must be >= 1")
    tasks = [(cfg, v, c, s) for v in cfg.matrix.variants
             for c in cfg.matrix.cohorts for s in cfg.matrix.seeds]
    if jobs == 1:
        outcomes = [_cell_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cell_task, tasks))

    by_cell = {}
    for res in outcomes:
        by_cell.setdefault((res.variant, res.cohort), []).append(res)

    lines = [MATRIX_HEADER]
    results = []
    for v in cfg.matrix.variants:
        for c in cfg.matrix.cohorts:
            runs = sorted(by_cell[(v, c)], key=lambda r: r.seed)
            ok = [r for r in runs if not r.error]
            recalls = np.array([r.recall for r in ok])
            mean = float(recalls.mean()) if ok else float("nan")
            sd = float(recalls.std(ddof=1)) if len(ok) > 1 else None
            errors = "|".join(f"seed={r.seed}:{r.error}"
                              for r in runs if r.error)
            results.append({"variant": v, "cohort": c,
                            "seeds": [r.seed for r in runs],
                            "n_ok": len(ok), "mean_recall": mean,
                            "sd_recall": sd, "errors": errors,
                            "recalls": {r.seed: r.recall for r in ok}})
            lines.append("\t".join([
                v, str(c), ",".join(str(r.seed) for r in runs), str(len(ok)),
                fmt_float(mean) if ok else "",
                fmt_float(sd) if sd is not None else "",
                errors]))
    return results, lines
