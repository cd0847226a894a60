"""Synthetic world with planted truth.

Variants sit in LD blocks laid out along chromosomes; genes anchor to
blocks; gene modules drive both the curated G2G cliques and the latent
response directions of a simulated perturbation screen. Trait signal is
planted as chi-square noncentrality on variants whose local V2G edges
reach a causal-module gene, scaled by cohort size, and smeared within
blocks by a geometric LD decay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .assoc import GwasStats
from .errors import ValidationError
from .graph import build_graph
from .perturb import CellMatrix
from .sparsify import DEFAULT_LOCAL_V2G

CURATED_G2G = ("binding", "physical_association", "signaling")
NOISE_G2G = ("literature", "cocitation")
BROAD_V2G = "tss_proximity"
MODULE_G2P = "module_membership"
CONTROL_TARGET = "control"

_STREAM_V2G = 1
_STREAM_G2G = 2
_STREAM_VFEAT = 3
_STREAM_GFEAT = 4
_STREAM_DIRECTIONS = 5
_STREAM_CELLS = 6
_STREAM_DOUBLETS = 7


@dataclass(frozen=True)
class SimScenario:
    seed: int = 0
    n_chromosomes: int = 2
    blocks_per_chrom: int = 100
    variants_per_block: int = 10
    block_stride_bp: int = 1_200_000
    variant_spacing_bp: int = 1_000
    n_genes: int = 300
    n_modules: int = 10
    module_size: int = 12
    n_causal_modules: int = 3
    effect_scale: float = 16.0
    n_ref: int = 20_000
    cohort_sizes: tuple = (20_000, 2_000)
    ld_rho: float = 0.7
    noise_edge_rate: float = 0.5
    broad_v2g_genes: int = 18
    variant_signal: float = 0.1
    variant_noise: float = 1.0
    gene_indicator: float = 1.5
    gene_noise: float = 1.0
    variant_dim: int = 70
    gene_dim: int = 16
    program_dim: int = 16
    cells_per_target: int = 20
    control_cells: int = 200
    n_private_targets: int = 30
    count_baseline: float = 50.0
    response_strength: float = 1.0
    private_strength: float = 1.5
    cell_noise: float = 0.0
    doublet_rate: float = 0.0

    @property
    def n_blocks(self) -> int:
        return self.n_chromosomes * self.blocks_per_chrom

    @property
    def n_variants(self) -> int:
        return self.n_blocks * self.variants_per_block

    def check(self):
        if self.n_modules * self.module_size > self.n_genes:
            raise ValidationError(
                f"{self.n_modules} modules of {self.module_size} genes exceed "
                f"{self.n_genes} genes")
        if self.n_causal_modules > self.n_modules:
            raise ValidationError("causal modules exceed module count")
        if any(c <= 0 for c in self.cohort_sizes) or self.n_ref <= 0:
            raise ValidationError("cohort sizes must be positive")
        if not (0.0 < self.ld_rho < 1.0):
            raise ValidationError("ld_rho must lie in (0, 1)")
        for name in ("n_chromosomes", "blocks_per_chrom", "variants_per_block",
                     "n_genes", "variant_dim", "gene_dim", "program_dim",
                     "cells_per_target"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.n_private_targets > self.n_genes - self.n_modules * self.module_size:
            raise ValidationError("not enough unassigned genes for private targets")
        if not (0.0 <= self.doublet_rate < 1.0):
            raise ValidationError("doublet_rate must lie in [0, 1)")


@dataclass(frozen=True)
class SimTruth:
    variant_ids: tuple
    chrom: tuple
    pos: np.ndarray
    block: np.ndarray          # global block index per variant
    offset: np.ndarray         # index within the block
    causal: np.ndarray
    lam_base: np.ndarray       # noncentrality at the reference cohort size
    n_ref: int
    ld_rho: float
    gene_ids: tuple
    gene_module: np.ndarray    # module index per gene, -1 when unassigned
    causal_modules: tuple
    module_edges: frozenset    # unordered within-module gene-id pairs
    v2g_map: dict              # variant id -> tuple of local gene ids
    causal_blocks: tuple


def _gene_anchor_blocks(scenario: SimScenario) -> np.ndarray:
    b = scenario.n_blocks
    return (np.arange(scenario.n_genes, dtype=np.int64) * b) // scenario.n_genes


def simulate_kg(scenario: SimScenario):
    """Knowledge graph plus planted truth; returns (graph, truth)."""
    scenario.check()
    sc = scenario
    rng_v2g = np.random.default_rng([sc.seed, _STREAM_V2G])
    rng_g2g = np.random.default_rng([sc.seed, _STREAM_G2G])
    rng_vf = np.random.default_rng([sc.seed, _STREAM_VFEAT])
    rng_gf = np.random.default_rng([sc.seed, _STREAM_GFEAT])

    n_var = sc.n_variants
    block = np.arange(n_var) // sc.variants_per_block
    offset = np.arange(n_var) % sc.variants_per_block
    chrom_of_block = block // sc.blocks_per_chrom + 1
    chrom = tuple(str(int(c)) for c in chrom_of_block)
    pos = ((block % sc.blocks_per_chrom) * sc.block_stride_bp
           + offset * sc.variant_spacing_bp + 1)
    variant_ids = tuple(f"v{i:04d}" for i in range(n_var))
    gene_ids = tuple(f"g{j:03d}" for j in range(sc.n_genes))

    anchors = _gene_anchor_blocks(sc)
    gene_chrom = anchors // sc.blocks_per_chrom + 1

    gene_module = np.full(sc.n_genes, -1, dtype=np.int64)
    for m in range(sc.n_modules):
        gene_module[m * sc.module_size:(m + 1) * sc.module_size] = m
    causal_modules = tuple(range(sc.n_causal_modules))
    causal_module_set = set(causal_modules)

    node_spec = [(variant_ids[i], "variant", chrom[i], int(pos[i]))
                 for i in range(n_var)]
    node_spec += [(g, "gene") for g in gene_ids]
    node_spec += [(f"prog{m:02d}", "program") for m in range(sc.n_modules)]

    edges = []
    # local V2G: 1-3 of the 3 genes nearest the variant's block, same chrom
    near_by_block = {}
    for b in range(sc.n_blocks):
        c = b // sc.blocks_per_chrom + 1
        cand = [j for j in range(sc.n_genes) if gene_chrom[j] == c]
        if not cand:
            raise ValidationError(f"no genes on chromosome {c}")
        cand.sort(key=lambda j: (abs(int(anchors[j]) - b), j))
        near_by_block[b] = cand[:3]
    v2g_map = {}
    lam_base = np.zeros(n_var)
    for i in range(n_var):
        near = near_by_block[int(block[i])]
        c = int(rng_v2g.integers(1, min(3, len(near)) + 1))
        picks = rng_v2g.choice(len(near), size=c, replace=False)
        local = []
        for gj in sorted(int(near[k]) for k in picks):
            name = DEFAULT_LOCAL_V2G[int(rng_v2g.integers(len(DEFAULT_LOCAL_V2G)))]
            edges.append((variant_ids[i], gene_ids[gj], name, "v2g"))
            local.append(gene_ids[gj])
            if int(gene_module[gj]) in causal_module_set:
                lam_base[i] = sc.effect_scale
        v2g_map[variant_ids[i]] = tuple(local)
        if sc.broad_v2g_genes > 0:
            broad = rng_v2g.choice(sc.n_genes, size=min(sc.broad_v2g_genes, sc.n_genes),
                                   replace=False)
            for gj in sorted(int(x) for x in broad):
                edges.append((variant_ids[i], gene_ids[gj], BROAD_V2G, "v2g"))

    # curated G2G: within-module cliques in both directions plus noise pairs
    module_pairs = set()
    for m in range(sc.n_modules):
        members = np.flatnonzero(gene_module == m)
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                u, v = gene_ids[int(members[a])], gene_ids[int(members[b])]
                name = CURATED_G2G[int(rng_g2g.integers(len(CURATED_G2G)))]
                edges.append((u, v, name, "g2g"))
                edges.append((v, u, name, "g2g"))
                module_pairs.add((u, v))
    n_noise = int(round(sc.noise_edge_rate * sc.n_genes))
    for _ in range(n_noise):
        u, v = rng_g2g.integers(sc.n_genes, size=2)
        while v == u:
            v = rng_g2g.integers(sc.n_genes)
        name = NOISE_G2G[int(rng_g2g.integers(len(NOISE_G2G)))]
        edges.append((gene_ids[int(u)], gene_ids[int(v)], name, "g2g"))

    for j in range(sc.n_genes):
        if gene_module[j] >= 0:
            edges.append((gene_ids[j], f"prog{int(gene_module[j]):02d}",
                          MODULE_G2P, "g2p"))

    vfeat = sc.variant_noise * rng_vf.standard_normal((n_var, sc.variant_dim))
    vfeat[lam_base > 0, 0] += sc.variant_signal
    gfeat = sc.gene_noise * rng_gf.standard_normal((sc.n_genes, sc.gene_dim))
    for j in range(sc.n_genes):
        if gene_module[j] >= 0:
            gfeat[j, int(gene_module[j]) % sc.gene_dim] += sc.gene_indicator

    graph, _stats = build_graph(
        node_spec, edges,
        feature_tables={"variant": {variant_ids[i]: vfeat[i] for i in range(n_var)},
                        "gene": {gene_ids[j]: gfeat[j] for j in range(sc.n_genes)}},
        feature_dims={"variant": sc.variant_dim, "gene": sc.gene_dim,
                      "program": sc.program_dim},
        program_feature_seed=sc.seed)

    causal_blocks = tuple(sorted({int(block[i]) for i in range(n_var)
                                  if lam_base[i] > 0}))
    truth = SimTruth(variant_ids=variant_ids, chrom=chrom, pos=np.asarray(pos),
                     block=block, offset=offset, causal=lam_base > 0,
                     lam_base=lam_base, n_ref=sc.n_ref, ld_rho=sc.ld_rho,
                     gene_ids=gene_ids, gene_module=gene_module,
                     causal_modules=causal_modules,
                     module_edges=frozenset(module_pairs), v2g_map=v2g_map,
                     causal_blocks=causal_blocks)
    return graph, truth


def noncentrality(truth: SimTruth, cohort_n: int) -> np.ndarray:
    """Per-variant noncentrality at a cohort size: base value scaled by
    cohort_n / n_ref, then smeared within each block by rho^distance."""
    if cohort_n <= 0:
        raise ValidationError("cohort_n must be positive")
    lam = truth.lam_base * (cohort_n / truth.n_ref)
    out = np.zeros_like(lam)
    for b in np.unique(truth.block):
        idx = np.flatnonzero(truth.block == b)
        if not np.any(lam[idx] > 0):
            continue
        off = truth.offset[idx].astype(np.float64)
        decay = truth.ld_rho ** np.abs(off[:, None] - off[None, :])
        out[idx] = decay @ lam[idx]
    return out


def ld_scores(truth: SimTruth) -> np.ndarray:
    """1 + sum of rho^distance over same-block neighbors."""
    out = np.ones(len(truth.variant_ids))
    for b in np.unique(truth.block):
        idx = np.flatnonzero(truth.block == b)
        off = truth.offset[idx].astype(np.float64)
        decay = truth.ld_rho ** np.abs(off[:, None] - off[None, :])
        out[idx] = decay.sum(axis=1)
    return out


def simulate_gwas(truth: SimTruth, cohort_n: int, seed: int) -> GwasStats:
    """Chi-square draws (Z + sqrt(lambda))^2 with block-smeared
    noncentrality; p from the central chi-square(1) survival function."""
    lam_eff = noncentrality(truth, cohort_n)
    z = np.random.default_rng(seed).standard_normal(lam_eff.shape[0])
    chi2 = (z + np.sqrt(lam_eff)) ** 2
    p = np.maximum(sps.chi2.sf(chi2, df=1), 1e-300)
    return GwasStats.create(truth.variant_ids, truth.chrom, truth.pos,
                            chi2, p, ld_scores(truth))


def simulate_perturb(truth: SimTruth, scenario: SimScenario) -> CellMatrix:
    """Count matrix over all genes: every module gene and a set of private
    (unassigned) genes are targeted; module targets shift expression along
    their module's shared direction, private targets along a one-gene
    spike, all on top of a flat baseline with optional lognormal cell
    noise and label-level doublets."""
    scenario.check()
    sc = scenario
    rng_dir = np.random.default_rng([sc.seed, _STREAM_DIRECTIONS])
    rng_cell = np.random.default_rng([sc.seed, _STREAM_CELLS])
    rng_dbl = np.random.default_rng([sc.seed, _STREAM_DOUBLETS])

    n_genes = len(truth.gene_ids)
    module_dirs = {}
    for m in sorted(int(x) for x in set(truth.gene_module.tolist()) if x >= 0):
        members = np.flatnonzero(truth.gene_module == m)
        signs = rng_dir.choice([-1.0, 1.0], size=members.shape[0])
        d = np.zeros(n_genes)
        d[members] = sc.response_strength * signs
        module_dirs[m] = d

    module_targets = [int(j) for j in np.flatnonzero(truth.gene_module >= 0)]
    unassigned = [int(j) for j in np.flatnonzero(truth.gene_module < 0)]
    private_targets = unassigned[:sc.n_private_targets]
    private_dirs = {}
    for j in private_targets:
        d = np.zeros(n_genes)
        d[j] = sc.private_strength * float(rng_dir.choice([-1.0, 1.0]))
        private_dirs[j] = d

    rows = []
    cell_ids = []
    guides = []
    order = [(j, module_dirs[int(truth.gene_module[j])]) for j in module_targets]
    order += [(j, private_dirs[j]) for j in private_targets]
    idx = 0
    for j, direction in order:
        target = truth.gene_ids[j]
        for _ in range(sc.cells_per_target):
            cid = f"c{idx:05d}"
            idx += 1
            noise = (sc.cell_noise * rng_cell.standard_normal(n_genes)
                     if sc.cell_noise > 0 else 0.0)
            lam = sc.count_baseline * np.exp(direction + noise)
            rows.append(np.rint(lam).astype(np.int64))
            cell_ids.append(cid)
            guides.append((cid, target, f"sg_{target}"))
    n_perturbed = len(cell_ids)
    for _ in range(sc.control_cells):
        cid = f"c{idx:05d}"
        idx += 1
        noise = (sc.cell_noise * rng_cell.standard_normal(n_genes)
                 if sc.cell_noise > 0 else 0.0)
        lam = sc.count_baseline * np.exp(np.zeros(n_genes) + noise)
        rows.append(np.rint(lam).astype(np.int64))
        cell_ids.append(cid)
        guides.append((cid, CONTROL_TARGET, f"sg_{CONTROL_TARGET}"))

    n_doublets = int(round(sc.doublet_rate * n_perturbed))
    if n_doublets > 0:
        picks = rng_dbl.choice(n_perturbed, size=n_doublets, replace=False)
        all_targets = [truth.gene_ids[j] for j, _ in order]
        for c in sorted(int(x) for x in picks):
            extra = all_targets[int(rng_dbl.integers(len(all_targets)))]
            guides.append((cell_ids[c], extra, f"sg_{extra}_x"))

    return CellMatrix(counts=np.vstack(rows), cell_ids=tuple(cell_ids),
                      feature_ids=tuple(truth.gene_ids),
                      guides=tuple(guides),
                      controls=frozenset({CONTROL_TARGET}))
