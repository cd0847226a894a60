"""Perturbation response pipeline: guide-count doublet filtering, log-fold
change against non-targeting controls, column z-scoring, binomial-deviance
and high-variance feature selection, FastICA program extraction, cosine
similarity between program activations, and threshold binarization into
context gene-gene edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from .errors import ValidationError

STAGE_LFC = "LFC"
STAGE_Z = "ZScored"
STAGE_SELECTED = "Selected"
STAGE_PROGRAM = "ProgramSpace"

CONTEXT_RELATION = "perturb_similarity"


@dataclass(frozen=True)
class CellMatrix:
    counts: np.ndarray        # cells x feature genes, non-negative integers
    cell_ids: tuple
    feature_ids: tuple
    guides: tuple             # (cell_id, target_id, guide_id) records
    controls: frozenset       # target ids that are non-targeting controls

    def guide_counts(self) -> dict:
        out = {cid: 0 for cid in self.cell_ids}
        for cell, _t, _g in self.guides:
            if cell in out:
                out[cell] += 1
        return out

    def target_of_cell(self) -> dict:
        """Valid only after doublet filtering (one guide per cell)."""
        out = {}
        for cell, target, _g in self.guides:
            out[cell] = target
        return out


@dataclass(frozen=True)
class PerturbMatrix:
    values: np.ndarray
    stage: str
    perturbation_ids: tuple
    feature_ids: tuple
    k: int = 0
    notes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SimilarityGraph:
    matrix: np.ndarray        # symmetric cosine matrix over retained rows
    ids: tuple                # perturbation ids, matrix order
    excluded: tuple = ()      # all-zero rows dropped before cosine
    tau: float = 0.0
    edges: tuple = ()         # undirected (id_i, id_j) pairs, i < j in id order


@dataclass(frozen=True)
class IcaResult:
    unmixing: np.ndarray      # k x k rotation applied to whitened scores
    whitening: np.ndarray     # columns x k projection from centered data
    mean: np.ndarray
    n_iter: int
    converged: bool
    k_requested: int
    k_effective: int
    notes: tuple = ()


@dataclass(frozen=True)
class SeparationReport:
    positive_similarities: np.ndarray
    random_similarities: np.ndarray
    auc: float
    rank_sum_p: float


def filter_cells(cm: CellMatrix) -> CellMatrix:
    """Keep cells with exactly one guide record (doublets and unassigned go)."""
    if not cm.guides:
        raise ValidationError("no guide records present")
    gc = cm.guide_counts()
    keep = [i for i, cid in enumerate(cm.cell_ids) if gc[cid] == 1]
    if not keep:
        raise ValidationError("no singly-assigned cells survive the filter")
    keep_ids = {cm.cell_ids[i] for i in keep}
    return CellMatrix(
        counts=cm.counts[keep],
        cell_ids=tuple(cm.cell_ids[i] for i in keep),
        feature_ids=cm.feature_ids,
        guides=tuple(g for g in cm.guides if g[0] in keep_ids),
        controls=cm.controls,
    )


def _normalized_counts(cm: CellMatrix):
    counts = np.asarray(cm.counts, dtype=np.float64)
    totals = counts.sum(axis=1)
    if np.any(totals <= 0):
        raise ValidationError("cell with zero total count")
    median_total = float(np.median(totals))
    return counts * (median_total / totals)[:, None]


def compute_lfc(cm: CellMatrix, pseudo_count: float = 1.0) -> PerturbMatrix:
    """Row per target gene: log2 ratio of mean normalized expression in that
    perturbation's cells over control cells, with a pseudo-count on both
    means. Normalization scales each cell to the median cell total."""
    target = cm.target_of_cell()
    norm = _normalized_counts(cm)
    ctrl_rows = [i for i, cid in enumerate(cm.cell_ids)
                 if target.get(cid) in cm.controls]
    if not ctrl_rows:
        raise ValidationError("no control cells")
    ctrl_mean = norm[ctrl_rows].mean(axis=0)

    groups = {}
    for i, cid in enumerate(cm.cell_ids):
        t = target.get(cid)
        if t is None or t in cm.controls:
            continue
        groups.setdefault(t, []).append(i)
    if not groups:
        raise ValidationError("no perturbed cells")

    pert_ids = tuple(sorted(groups))
    values = np.empty((len(pert_ids), len(cm.feature_ids)))
    for r, t in enumerate(pert_ids):
        mean = norm[groups[t]].mean(axis=0)
        values[r] = np.log2((mean + pseudo_count) / (ctrl_mean + pseudo_count))
    return PerturbMatrix(values=values, stage=STAGE_LFC,
                         perturbation_ids=pert_ids, feature_ids=cm.feature_ids)


def zscore(pm: PerturbMatrix) -> PerturbMatrix:
    """Column-wise (x - mean)/sd with sd over n-1; constant columns are
    flagged, zeroed, and excluded from later feature selection."""
    if pm.stage != STAGE_LFC:
        raise ValidationError(f"zscore expects an LFC matrix, got {pm.stage}")
    if pm.values.shape[0] < 2:
        raise ValidationError("need at least 2 perturbations to z-score")
    mean = pm.values.mean(axis=0)
    sd = pm.values.std(axis=0, ddof=1)
    flat = sd == 0.0
    safe = np.where(flat, 1.0, sd)
    z = (pm.values - mean) / safe
    z[:, flat] = 0.0
    notes = dict(pm.notes)
    notes["zero_variance"] = tuple(pm.feature_ids[j] for j in np.nonzero(flat)[0])
    notes["lfc_variance"] = sd ** 2
    return PerturbMatrix(values=z, stage=STAGE_Z,
                         perturbation_ids=pm.perturbation_ids,
                         feature_ids=pm.feature_ids, notes=notes)


def binomial_deviance(cm: CellMatrix) -> np.ndarray:
    """Per-feature deviance against a constant-rate binomial null.

    For feature j with counts y_ij and cell totals n_i, the pooled rate is
    pi_j = sum_i y_ij / sum_i n_i and
    D_j = 2 sum_i [y ln(y/(n pi)) + (n-y) ln((n-y)/(n-n pi))], 0 ln 0 := 0.
    Constant features (pi in {0, 1}) get D = 0.
    """
    y = np.asarray(cm.counts, dtype=np.float64)
    n = y.sum(axis=1)
    if np.any(n <= 0):
        raise ValidationError("cell with zero total count")
    pi = y.sum(axis=0) / n.sum()
    out = np.zeros(y.shape[1])
    ok = (pi > 0) & (pi < 1)
    if not ok.any():
        return out
    yk = y[:, ok]
    mu = n[:, None] * pi[ok]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(yk > 0, yk * np.log(yk / mu), 0.0)
        rest = n[:, None] - yk
        t2 = np.where(rest > 0, rest * np.log(rest / (n[:, None] - mu)), 0.0)
    out[ok] = 2.0 * (t1 + t2).sum(axis=0)
    return out


def select_features(cm: CellMatrix, pm: PerturbMatrix,
                    n_dev: int = 3000, n_hvg: int = 2000) -> PerturbMatrix:
    """Top n_dev features by binomial deviance, then top n_hvg by LFC variance
    among the rest; ties break lexicographically by feature id. Returns the
    z-scored column subset in original feature order."""
    if pm.stage != STAGE_Z:
        raise ValidationError(f"select_features expects a z-scored matrix, got {pm.stage}")
    if "lfc_variance" not in pm.notes:
        raise ValidationError("z-scored matrix lacks LFC variance annotations")
    dev = binomial_deviance(cm)
    if cm.feature_ids != pm.feature_ids:
        raise ValidationError("count matrix and LFC matrix feature ids differ")
    excluded = set(pm.notes.get("zero_variance", ()))
    candidates = [j for j, fid in enumerate(pm.feature_ids) if fid not in excluded]
    if n_dev + n_hvg > len(candidates):
        raise ValidationError(
            f"requested {n_dev}+{n_hvg} features but only "
            f"{len(candidates)} are selectable")
    by_dev = sorted(candidates, key=lambda j: (-dev[j], pm.feature_ids[j]))
    chosen = set(by_dev[:n_dev])
    var = pm.notes["lfc_variance"]
    remaining = [j for j in candidates if j not in chosen]
    by_var = sorted(remaining, key=lambda j: (-var[j], pm.feature_ids[j]))
    chosen.update(by_var[:n_hvg])
    cols = sorted(chosen)
    notes = dict(pm.notes)
    notes["selected_by_deviance"] = tuple(pm.feature_ids[j] for j in by_dev[:n_dev])
    notes["selected_by_variance"] = tuple(pm.feature_ids[j] for j in by_var[:n_hvg])
    return PerturbMatrix(values=pm.values[:, cols], stage=STAGE_SELECTED,
                         perturbation_ids=pm.perturbation_ids,
                         feature_ids=tuple(pm.feature_ids[j] for j in cols),
                         notes=notes)


def _sym_decorrelation(w: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, 1e-12, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def fast_ica(pm: PerturbMatrix, k: int, seed: int = 0,
             tol: float = 1e-6, max_iter: int = 500):
    """Whiten to the top-k principal directions, then run symmetric
    fixed-point iteration with tanh contrast. Rows are observations
    (perturbations); returns (ProgramSpace matrix of row scores, IcaResult).
    k above the data rank is reduced with a note; non-convergence returns the
    best iterate, flagged."""
    if pm.stage not in (STAGE_SELECTED, STAGE_Z, STAGE_LFC):
        raise ValidationError(f"fast_ica cannot run on stage {pm.stage}")
    x = np.asarray(pm.values, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 rows for ICA")
    notes = []
    mean = x.mean(axis=0)
    xc = x - mean

    # eigen-whitening via SVD of the centered matrix (the right singular
    # vectors are the covariance eigenvectors, s^2/(n-1) its eigenvalues)
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol_rank = s.max(initial=0.0) * max(x.shape) * np.finfo(np.float64).eps
    rank = int(np.count_nonzero(s > tol_rank))
    if rank == 0:
        raise ValidationError("input matrix has rank 0")
    k_eff = int(k)
    if k_eff > rank:
        notes.append(f"k reduced from {k_eff} to rank {rank}")
        k_eff = rank
    if k_eff > n:
        notes.append(f"k reduced from {k_eff} to row count {n}")
        k_eff = n
    # deterministic sign convention for the principal directions
    signs = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    vt = vt * signs[:, None]
    u = u * signs[None, :]

    whitening = (vt[:k_eff].T / s[:k_eff]) * np.sqrt(n - 1)  # columns x k
    z = xc @ whitening                                       # n x k, identity cov

    rng = np.random.default_rng(seed)
    w = _sym_decorrelation(rng.standard_normal((k_eff, k_eff)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        wz = z @ w.T                      # n x k component estimates
        g = np.tanh(wz)
        g_prime = 1.0 - g ** 2
        w_new = (g.T @ z) / n - (g_prime.mean(axis=0)[:, None] * w)
        w_new = _sym_decorrelation(w_new)
        lim = float(np.max(np.abs(np.abs(np.sum(w_new * w, axis=1)) - 1.0)))
        w = w_new
        if lim < tol:
            converged = True
            break
    if not converged:
        notes.append(f"ICA did not converge in {max_iter} iterations")

    scores = z @ w.T
    result = IcaResult(unmixing=w, whitening=whitening, mean=mean,
                       n_iter=it, converged=converged, k_requested=int(k),
                       k_effective=k_eff, notes=tuple(notes))
    out = PerturbMatrix(values=scores, stage=STAGE_PROGRAM,
                        perturbation_ids=pm.perturbation_ids,
                        feature_ids=tuple(f"program_{i}" for i in range(k_eff)),
                        k=k_eff, notes=dict(pm.notes))
    return out, result


def program_similarity(pm: PerturbMatrix) -> SimilarityGraph:
    """Cosine similarity between program-activation rows; all-zero rows are
    excluded and reported."""
    if pm.stage != STAGE_PROGRAM:
        raise ValidationError(f"program_similarity expects ProgramSpace, got {pm.stage}")
    norms = np.linalg.norm(pm.values, axis=1)
    keep = norms > 0
    excluded = tuple(pid for pid, ok in zip(pm.perturbation_ids, keep) if not ok)
    vals = pm.values[keep]
    ids = tuple(pid for pid, ok in zip(pm.perturbation_ids, keep) if ok)
    unit = vals / np.linalg.norm(vals, axis=1)[:, None]
    mat = unit @ unit.T
    np.clip(mat, -1.0, 1.0, out=mat)
    np.fill_diagonal(mat, 1.0)
    return SimilarityGraph(matrix=mat, ids=ids, excluded=excluded)


def threshold_edges(sim: SimilarityGraph, tau: float = 0.5,
                    relation_name: str = CONTEXT_RELATION):
    """Binarize |cosine| >= tau into an undirected pair list and directed
    edge records (both directions) under a single new G2G relation name.
    Returns (SimilarityGraph with tau/edges set, edge records)."""
    if not (0.0 < tau <= 1.0):
        raise ValidationError(f"tau must be in (0, 1], got {tau}")
    n = len(sim.ids)
    pairs = []
    for i in range(n):
        row = np.abs(sim.matrix[i, i + 1:]) >= tau
        for j in np.nonzero(row)[0] + i + 1:
            pairs.append((sim.ids[i], sim.ids[int(j)]))
    pairs.sort()
    records = []
    for a, b in pairs:
        records.append((a, b, relation_name, "g2g"))
        records.append((b, a, relation_name, "g2g"))
    records.sort()
    out = replace(sim, tau=float(tau), edges=tuple(pairs))
    return out, records


def separation_diagnostic(sim: SimilarityGraph, positive_pairs,
                          n_random: int = 1000, seed: int = 0) -> SeparationReport:
    """Compare cosine similarity of annotated pairs against uniformly random
    background pairs (annotated pairs excluded): AUC plus a two-sided
    rank-sum test."""
    idx = {pid: i for i, pid in enumerate(sim.ids)}
    pos = []
    pos_keys = set()
    for a, b in positive_pairs:
        if a not in idx or b not in idx:
            raise ValidationError(f"positive pair references unknown id: ({a}, {b})")
        pos.append(sim.matrix[idx[a], idx[b]])
        pos_keys.add((min(idx[a], idx[b]), max(idx[a], idx[b])))
    if len(pos) < 2:
        raise ValidationError("need at least 2 positive pairs")
    n = len(sim.ids)
    if n < 2 or len(pos_keys) >= n * (n - 1) // 2:
        raise ValidationError("no background pairs left to sample")
    rng = np.random.default_rng(seed)
    ii = np.empty(0, dtype=np.int64)
    jj = np.empty(0, dtype=np.int64)
    while ii.shape[0] < n_random:
        a = rng.integers(0, n, size=2 * n_random)
        b = rng.integers(0, n, size=2 * n_random)
        ok = a != b
        a, b = a[ok], b[ok]
        bg = np.array([(x, y) not in pos_keys
                       for x, y in zip(np.minimum(a, b), np.maximum(a, b))])
        ii = np.concatenate([ii, a[bg]])[:n_random]
        jj = np.concatenate([jj, b[bg]])[:n_random]
    rand = sim.matrix[ii, jj]
    pos = np.asarray(pos)
    res = scipy.stats.mannwhitneyu(pos, rand, alternative="two-sided")
    auc = float(res.statistic) / (len(pos) * len(rand))
    return SeparationReport(positive_similarities=pos,
                            random_similarities=rand,
                            auc=auc, rank_sum_p=float(res.pvalue))
