"""Walk a knowledge graph through a sparsification plan, stage by stage.

Plans are small text programs: one step per line, applied in order, each
emitting a node/edge ledger so the cost of every pruning decision is
visible. Steps that name a file take @path arguments resolved against the
plan's directory.
"""

from ctxkg.simulate import SimScenario, simulate_kg
from ctxkg.sparsify import apply_plan, parse_plan


def main():
    scenario = SimScenario(seed=7, n_chromosomes=2, blocks_per_chrom=10,
                           variants_per_block=5, n_genes=60, n_modules=4,
                           module_size=6, n_causal_modules=2,
                           broad_v2g_genes=5, n_private_targets=8,
                           cells_per_target=6, control_cells=30,
                           count_baseline=200.0)
    graph, _truth = simulate_kg(scenario)

    plan = parse_plan("remove_programs\n"
                      "restrict_v2g\n"
                      "restrict_g2g_major 20\n"
                      "collapse_class g2g\n")
    sparse, stages = apply_plan(graph, plan)

    print(f"{'stage':20s} {'nodes':>7s} {'edges':>7s} {'selfloops':>9s}")
    for name, stats in stages:
        nodes = sum(stats.node_counts.values())
        loops = sum(stats.self_loop_counts.values())
        print(f"{name:20s} {nodes:7d} {stats.total_edges:7d} {loops:9d}")

    print("surviving relations:")
    for name, rel in sparse.relations.items():
        print(f"  {name:20s} {rel.relation_class.value:4s} {rel.n_edges}")


if __name__ == "__main__":
    main()
