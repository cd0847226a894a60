"""Generate a synthetic genetics world and inspect its pieces.

The simulator plants causal gene modules, wires variants to genes, and draws
GWAS chi-square statistics for a large and a small cohort from the same
truth. The large cohort discovers the reference loci that downstream demos
try to recover from the small one.
"""

import numpy as np

from ctxkg.pipeline import reference_loci
from ctxkg.simulate import SimScenario, simulate_gwas, simulate_kg


def main():
    scenario = SimScenario(seed=7, n_chromosomes=2, blocks_per_chrom=10,
                           variants_per_block=5, n_genes=60, n_modules=4,
                           module_size=6, n_causal_modules=2,
                           broad_v2g_genes=5, n_private_targets=8,
                           cells_per_target=6, control_cells=30,
                           count_baseline=200.0)
    graph, truth = simulate_kg(scenario)

    print("node counts:")
    for cls, ids in graph.ids.items():
        print(f"  {cls.value:8s} {len(ids)}")
    print("edge counts by relation:")
    for name, rel in graph.relations.items():
        print(f"  {name:20s} {rel.relation_class.value:4s} {rel.n_edges}")

    print(f"causal modules: {sorted(truth.causal_modules)}")
    print(f"within-module gene pairs: {len(truth.module_edges)}")

    for cohort in (20_000, 2_000):
        stats = simulate_gwas(truth, cohort, seed=[7, 10])
        n_sig = int(np.count_nonzero(stats.p < 0.05 / stats.n))
        print(f"cohort {cohort:6d}: {n_sig} Bonferroni-significant variants, "
              f"median chi2 {np.median(stats.chi2):.2f}")

    loci = reference_loci(simulate_gwas(truth, 20_000, seed=[7, 10]))
    print(f"reference loci from the full cohort: {len(loci)}")
    for locus in loci[:5]:
        print(f"  lead {locus.lead_id} chr{locus.chrom}:{locus.pos} "
              f"p={locus.lead_p:.2e}")


if __name__ == "__main__":
    main()
