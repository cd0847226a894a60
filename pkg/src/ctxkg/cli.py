"""ctxkg command line: one binary, one shared config format.

Subcommands: simulate, build-kg, sparsify, perturb-edges, train, evaluate,
dcn, dcn-merge, run-matrix. Logs go to stderr (level from CTXKG_LOG), data
goes to files under --out only, and every run drops a resolved-config
snapshot next to its outputs. Exit codes: 0 success, 1 validation or
missing-input failure, 2 runtime failure, 64 unknown subcommand.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import __version__
from . import io as kio
from .assoc import recalibrate
from .config import (PipelineConfig, load_config, write_resolved_config)
from .dcn import (merge_seed_networks, network_from_records, network_payload,
                  read_network_json, write_network_json, write_network_tsv)
from .errors import ValidationError
from .gat import forward, load_checkpoint, save_checkpoint
from .graph import NodeClass, build_graph, graph_stats, validate
from .io import canonical_json
from .pipeline import (context_edge_records, reference_loci, run_matrix,
                       train_and_predict)
from .simulate import simulate_gwas, simulate_kg, simulate_perturb
from .sparsify import apply_plan, parse_plan, stages_tsv_lines

log = logging.getLogger("ctxkg")

SUBCOMMANDS = ("simulate", "build-kg", "sparsify", "perturb-edges", "train",
               "evaluate", "dcn", "dcn-merge", "run-matrix")

USAGE = (
    "usage: ctxkg <subcommand> [options]\n"
    "subcommands: " + " ".join(SUBCOMMANDS) + "\n"
    "common flags: --config FILE --out DIR --seed N --jobs N\n"
    "ctxkg --version prints the version.\n")


def _setup_logging():
    level = os.environ.get("CTXKG_LOG", "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "INFO"
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level),
                        format="%(levelname)s %(name)s: %(message)s")


def _out_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_cfg(args) -> PipelineConfig:
    path = getattr(args, "config", None)
    if path:
        return load_config(path)
    return PipelineConfig()


def _snapshot(cfg: PipelineConfig, out: str):
    write_resolved_config(cfg, os.path.join(out, "resolved_config.ini"))


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(payload))


# ----------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    scenario = cfg.scenario
    if args.scenario:
        scenario = load_config(args.scenario).scenario
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    cfg = dataclasses.replace(cfg, scenario=scenario)
    out = _out_dir(args.out)
    graph, truth = simulate_kg(scenario)
    problems = validate(graph)
    if problems:
        raise ValidationError("; ".join(problems))
    kio.write_bundle(graph, os.path.join(out, "kg"))
    log.info("simulated graph: %s", graph_stats(graph).node_counts)
    for i, cohort in enumerate(scenario.cohort_sizes):
        stats = simulate_gwas(truth, cohort, seed=[scenario.seed, 17, i])
        kio.write_stats_tsv(stats, os.path.join(out, f"gwas_{cohort}.tsv"))
        log.info("wrote GWAS for cohort %d (%d variants)", cohort, stats.n)
    cm = simulate_perturb(truth, scenario)
    kio.write_counts_dir(cm, os.path.join(out, "counts"))
    log.info("wrote %d cells x %d genes", cm.counts.shape[0], cm.counts.shape[1])
    _write_json({
        "causal_blocks": list(truth.causal_blocks),
        "causal_modules": list(truth.causal_modules),
        "causal_variants": [vid for vid, c in
                            zip(truth.variant_ids, truth.causal) if c],
        "module_edges": sorted(list(p) for p in truth.module_edges),
        "gene_module": {g: int(m) for g, m in
                        zip(truth.gene_ids, truth.gene_module)},
    }, os.path.join(out, "truth.json"))
    _snapshot(cfg, out)
    return 0


def cmd_build_kg(args) -> int:
    cfg = _load_cfg(args)
    nodes = kio.read_nodes(args.nodes)
    edges = kio.read_edges(args.edges)
    tables = None
    if args.features:
        from .graph import coerce_node_class
        class_of_id = {nid: coerce_node_class(ncls)
                       for nid, ncls, _c, _p in nodes}
        tables = kio.read_features(args.features, class_of_id)
    graph, stats = build_graph(nodes, edges, feature_tables=tables)
    problems = validate(graph)
    if problems:
        raise ValidationError("; ".join(problems))
    out = _out_dir(args.out)
    kio.write_bundle(graph, os.path.join(out, "kg"))
    _write_json({"node_counts": stats.node_counts,
                 "edge_counts": stats.edge_counts,
                 "self_loop_counts": stats.self_loop_counts,
                 "collapsed_duplicates": stats.collapsed_duplicates},
                os.path.join(out, "stats.json"))
    _snapshot(cfg, out)
    log.info("built graph: %d edges", stats.total_edges)
    return 0


def cmd_sparsify(args) -> int:
    cfg = _load_cfg(args)
    graph = kio.read_bundle(args.graph)
    with open(args.plan, "r", encoding="utf-8") as fh:
        text = fh.read()
    plan = parse_plan(text, base_dir=os.path.dirname(os.path.abspath(args.plan)))
    out = _out_dir(args.out)
    result, stages = apply_plan(graph, plan)
    kio.write_bundle(result, os.path.join(out, "kg"))
    kio.write_lines(os.path.join(out, "stages.tsv"), stages_tsv_lines(stages))
    with open(os.path.join(out, "plan.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    _snapshot(cfg, out)
    for name, st in stages:
        log.info("stage %-20s %7d edges", name, st.total_edges)
    return 0


def cmd_perturb_edges(args) -> int:
    cfg = _load_cfg(args)
    params = cfg.perturb
    if args.seed is not None:
        params = dataclasses.replace(params, seed=args.seed)
    cm = kio.read_counts_dir(args.counts)
    records, _sim, info = context_edge_records(cm, params)
    out = _out_dir(args.out)
    kio.write_edge_records(records, os.path.join(out, "context_edges.tsv"))
    _write_json(info, os.path.join(out, "summary.json"))
    _snapshot(dataclasses.replace(cfg, perturb=params), out)
    log.info("inferred %d context G2G pairs (k=%d)", info["n_pairs"],
             info["k_effective"])
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    graph = kio.read_bundle(args.graph)
    stats = kio.read_stats_tsv(args.stats)
    model, history, chi2_hat = train_and_predict(graph, stats, train_cfg)
    out = _out_dir(args.out)
    save_checkpoint(model, os.path.join(out, "checkpoint.json"),
                    history=history)
    kio.write_lines(os.path.join(out, "history.tsv"),
                    ["# epoch\ttrain_loss\tval_mse"]
                    + [f"{e}\t{kio.fmt_float(tr)}\t{kio.fmt_float(va)}"
                       for e, tr, va in history])
    kio.write_pred_tsv(stats.ids, chi2_hat, os.path.join(out, "pred.tsv"))
    _snapshot(dataclasses.replace(cfg, train=train_cfg), out)
    log.info("trained %d epochs; final val MSE %s", len(history),
             kio.fmt_float(history[-1][2]) if history else "n/a")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    stats = kio.read_stats_tsv(args.stats)
    ids, chi2_hat = kio.read_pred_tsv(args.pred)
    if tuple(ids) != stats.ids:
        pos = {vid: i for i, vid in enumerate(ids)}
        missing = [v for v in stats.ids if v not in pos]
        if missing:
            raise ValidationError(
                f"predictions missing {len(missing)} stats ids, "
                f"e.g. {missing[0]!r}")
        chi2_hat = np.asarray(chi2_hat)[[pos[v] for v in stats.ids]]
    full_loci = None
    if args.full_stats:
        full = kio.read_stats_tsv(args.full_stats)
        full_loci = reference_loci(full, alpha=cfg.assoc.alpha,
                                   window_bp=cfg.assoc.window_bp,
                                   max_loci=cfg.assoc.max_loci)
    report = recalibrate(stats, np.asarray(chi2_hat), alpha=cfg.assoc.alpha,
                         window_bp=cfg.assoc.window_bp,
                         max_loci=cfg.assoc.max_loci,
                         full_loci=full_loci, recall_k=cfg.assoc.recall_k)
    out = _out_dir(args.out)
    payload = {"alpha": cfg.assoc.alpha, "n_rejected": report.n_rejected,
               "q_cutoff": report.q_cutoff, "n_loci": len(report.loci)}
    if report.recall is not None:
        payload["recall"] = report.recall
        payload["recall_k"] = report.recall_k
    _write_json(payload, os.path.join(out, "report.json"))
    kio.write_loci_tsv(report.loci, os.path.join(out, "loci.tsv"))
    _snapshot(cfg, out)
    log.info("rejected %d variants into %d loci", report.n_rejected,
             len(report.loci))
    return 0


def cmd_dcn(args) -> int:
    cfg = _load_cfg(args)
    graph = kio.read_bundle(args.graph)
    model = load_checkpoint(args.checkpoint, graph)
    _yhat, records = forward(model, graph)
    net = network_from_records(records, graph, args.root, k=cfg.dcn.k,
                               v2g_layer=cfg.dcn.v2g_layer,
                               g2g_layer=cfg.dcn.g2g_layer, norm=cfg.dcn.norm)
    out = _out_dir(args.out)
    write_network_json(net, os.path.join(out, "network.json"))
    write_network_tsv(net, os.path.join(out, "network.tsv"))
    _snapshot(cfg, out)
    log.info("extracted network: %d nodes, %d edges", len(net.nodes),
             len(net.edges))
    return 0


def cmd_dcn_merge(args) -> int:
    from .dcn import consistency_score
    cfg = _load_cfg(args)
    nets = [read_network_json(p) for p in args.networks]
    merged = merge_seed_networks(nets)
    out = _out_dir(args.out)
    write_network_json(merged, os.path.join(out, "merged.json"))
    write_network_tsv(merged, os.path.join(out, "merged.tsv"))
    _write_json({"n_networks": merged.n_networks,
                 "consistency": consistency_score(merged),
                 "n_nodes": len(merged.nodes), "n_edges": len(merged.edges)},
                os.path.join(out, "summary.json"))
    _snapshot(cfg, out)
    log.info("merged %d networks; consistency %s", merged.n_networks,
             kio.fmt_float(consistency_score(merged)))
    return 0


def cmd_run_matrix(args) -> int:
    if not args.config:
        raise ValidationError("run-matrix requires --config")
    cfg = load_config(args.config)
    results, lines = run_matrix(cfg, jobs=args.jobs)
    out = _out_dir(args.out)
    kio.write_lines(os.path.join(out, "results.tsv"), lines)
    _snapshot(cfg, out)
    for row in results:
        log.info("cell %s/%d: n_ok=%d mean=%s", row["variant"], row["cohort"],
                 row["n_ok"], kio.fmt_float(row["mean_recall"]))
    return 0


# ------------------------------------------------------------- dispatch

def _build_parser(sub: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=f"ctxkg {sub}")
    p.add_argument("--config", default=None, help="pipeline config file")
    p.add_argument("--out", required=True, help="output directory")
    if sub == "simulate":
        p.add_argument("--scenario", default=None,
                       help="config file whose [scenario] section to use")
        p.add_argument("--seed", type=int, default=None)
    elif sub == "build-kg":
        p.add_argument("--nodes", required=True)
        p.add_argument("--edges", required=True)
        p.add_argument("--features", default=None)
    elif sub == "sparsify":
        p.add_argument("--graph", required=True, help="graph bundle directory")
        p.add_argument("--plan", required=True, help="plan text file")
    elif sub == "perturb-edges":
        p.add_argument("--counts", required=True, help="counts directory")
        p.add_argument("--seed", type=int, default=None)
    elif sub == "train":
        p.add_argument("--graph", required=True, help="graph bundle directory")
        p.add_argument("--stats", required=True, help="GWAS stats TSV")
        p.add_argument("--seed", type=int, default=None)
    elif sub == "evaluate":
        p.add_argument("--stats", required=True, help="GWAS stats TSV")
        p.add_argument("--pred", required=True, help="predictions TSV")
        p.add_argument("--full-stats", default=None,
                       help="full-cohort stats TSV for recall")
    elif sub == "dcn":
        p.add_argument("--graph", required=True, help="graph bundle directory")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--root", required=True, help="root variant id")
    elif sub == "dcn-merge":
        p.add_argument("--networks", nargs="+", required=True,
                       help="network JSON files from per-seed runs")
    elif sub == "run-matrix":
        p.add_argument("--jobs", type=int, default=1)
    return p


_HANDLERS = {
    "simulate": cmd_simulate,
    "build-kg": cmd_build_kg,
    "sparsify": cmd_sparsify,
    "perturb-edges": cmd_perturb_edges,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "dcn": cmd_dcn,
    "dcn-merge": cmd_dcn_merge,
    "run-matrix": cmd_run_matrix,
}


def main(argv=None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] in ("--version", "-V"):
        print(f"ctxkg {__version__}")
        return 0
    if not argv or argv[0] in ("-h", "--help"):
        sys.stderr.write(USAGE)
        return 0 if argv else 64
    sub = argv[0]
    if sub not in SUBCOMMANDS:
        sys.stderr.write(f"ctxkg: unknown subcommand {sub!r}\n{USAGE}")
        return 64
    args = _build_parser(sub).parse_args(argv[1:])
    try:
        return _HANDLERS[sub](args)
    except (ValidationError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # runtime failure: report and signal exit 2
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
