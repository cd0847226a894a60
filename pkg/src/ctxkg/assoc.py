"""Association statistics: weighted FDR control and locus bookkeeping.

Per-variant chi-square statistics get prediction-derived weights (mean 1,
clipped), a weighted Benjamini-Hochberg pass on q = p / w, greedy distance
clumping into loci, and a rank-k recall comparison between a small-cohort
reanalysis and full-cohort reference loci.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

WEIGHT_FLOOR = 1e-6
WEIGHT_CLIP = (0.05, 20.0)
DEFAULT_WINDOW_BP = 500_000
DEFAULT_MAX_LOCI = 100


def chrom_sort_key(chrom: str):
    """Numeric chromosomes ascend first, everything else follows by name."""
    text = str(chrom)
    if text.isdigit():
        return (0, int(text), "")
    return (1, 0, text)


@dataclass(frozen=True)
class GwasStats:
    ids: tuple
    chrom: tuple
    pos: np.ndarray
    chi2: np.ndarray
    p: np.ndarray
    ld_score: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)

    @classmethod
    def create(cls, ids, chrom, pos, chi2, p, ld_score):
        """Validate and sort canonically by (chromosome, position, id)."""
        ids = [str(x) for x in ids]
        chrom = [str(x) for x in chrom]
        pos = np.asarray(pos, dtype=np.int64)
        chi2 = np.asarray(chi2, dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        ld = np.asarray(ld_score, dtype=np.float64)
        n = len(ids)
        if n == 0:
            raise ValidationError("no variants in association table")
        for name, arr in (("chrom", chrom), ("pos", pos), ("chi2", chi2),
                          ("p", p), ("ld_score", ld)):
            if len(arr) != n:
                raise ValidationError(f"{name} length {len(arr)} != ids length {n}")
        if len(set(ids)) != n:
            raise ValidationError("duplicate variant ids in association table")
        if not np.all(np.isfinite(chi2)) or np.any(chi2 < 0):
            raise ValidationError("chi2 must be finite and non-negative")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValidationError("p-values must lie in [0, 1]")
        if not np.all(np.isfinite(ld)):
            raise ValidationError("non-finite LD score")
        order = sorted(range(n),
                       key=lambda i: (chrom_sort_key(chrom[i]), pos[i], ids[i]))
        idx = np.array(order)
        return cls(ids=tuple(ids[i] for i in order),
                   chrom=tuple(chrom[i] for i in order),
                   pos=pos[idx].copy(), chi2=chi2[idx].copy(),
                   p=p[idx].copy(), ld_score=ld[idx].copy())

    def take(self, mask) -> "GwasStats":
        idx = np.flatnonzero(np.asarray(mask))
        if idx.shape[0] == 0:
            raise ValidationError("empty variant subset")
        return GwasStats(ids=tuple(self.ids[i] for i in idx),
                         chrom=tuple(self.chrom[i] for i in idx),
                         pos=self.pos[idx], chi2=self.chi2[idx],
                         p=self.p[idx], ld_score=self.ld_score[idx])


@dataclass(frozen=True)
class Locus:
    lead_id: str
    chrom: str
    pos: int
    lead_p: float
    members: tuple


def prediction_weights(chi2_hat) -> np.ndarray:
    """Mean-one weights proportional to predicted chi-square, floored at
    WEIGHT_FLOOR before normalizing, clipped, then renormalized once."""
    raw = np.asarray(chi2_hat, dtype=np.float64)
    if raw.size == 0:
        raise ValidationError("no predictions to weight")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("non-finite prediction")
    w = np.maximum(raw, WEIGHT_FLOOR)
    w = w / w.mean()
    w = np.clip(w, WEIGHT_CLIP[0], WEIGHT_CLIP[1])
    return w / w.mean()


def weighted_bh(p, weights, alpha=0.05):
    """Reject H_i where q_i = p_i / w_i falls at or below the largest
    q_(k) satisfying q_(k) <= k * alpha / m. Returns (mask, q cutoff);
    cutoff is 0.0 when nothing is rejected. Requires mean(weights) = 1
    within 1e-6 and strictly positive weights."""
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if p.shape != w.shape:
        raise ValidationError("p and weights length mismatch")
    if p.size == 0:
        raise ValidationError("empty hypothesis set")
    if np.any(w <= 0):
        raise ValidationError("weights must be strictly positive")
    if abs(w.mean() - 1.0) > 1e-6:
        raise ValidationError(f"weights must average 1, got {w.mean()!r}")
    if not (0 < alpha < 1):
        raise ValidationError("alpha must lie in (0, 1)")
    m = p.size
    q = p / w
    qs = np.sort(q)
    ok = np.flatnonzero(qs <= alpha * np.arange(1, m + 1) / m)
    if ok.size == 0:
        return np.zeros(m, dtype=bool), 0.0
    cutoff = float(qs[ok[-1]])
    return q <= cutoff, cutoff


def clump_loci(stats: GwasStats, score=None, window_bp=DEFAULT_WINDOW_BP,
               max_loci=DEFAULT_MAX_LOCI):
    """Greedy clumping: repeatedly take the best-scoring unclaimed variant
    as a lead and claim everything unclaimed on the same chromosome within
    window_bp of it. Score defaults to the p-value (smaller is better);
    ties break on (chromosome, position)."""
    sc = stats.p if score is None else np.asarray(score, dtype=np.float64)
    if sc.shape[0] != stats.n:
        raise ValidationError("score length does not match variants")
    if window_bp < 0 or max_loci < 1:
        raise ValidationError("window_bp must be >= 0 and max_loci >= 1")
    order = sorted(range(stats.n),
                   key=lambda i: (sc[i], chrom_sort_key(stats.chrom[i]),
                                  stats.pos[i]))
    claimed = np.zeros(stats.n, dtype=bool)
    loci = []
    for i in order:
        if claimed[i]:
            continue
        near = [j for j in range(stats.n)
                if not claimed[j] and stats.chrom[j] == stats.chrom[i]
                and abs(int(stats.pos[j]) - int(stats.pos[i])) <= window_bp]
        for j in near:
            claimed[j] = True
        members = tuple(stats.ids[j] for j in sorted(
            near, key=lambda j: (stats.pos[j], stats.ids[j])))
        loci.append(Locus(lead_id=stats.ids[i], chrom=stats.chrom[i],
                          pos=int(stats.pos[i]), lead_p=float(sc[i]),
                          members=members))
        if len(loci) >= max_loci:
            break
    return loci


def loci_recall(small_loci, full_loci, k, window_bp=DEFAULT_WINDOW_BP) -> float:
    """Fraction of the top-k reference loci recovered by the top-k loci of a
    reanalysis: each reanalysis lead (in rank order) consumes the nearest
    unconsumed reference locus on its chromosome within window_bp."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not full_loci:
        raise ValidationError("no reference loci to recall against")
    full_top = list(full_loci)[:k]
    consumed = [False] * len(full_top)
    matched = 0
    for locus in list(small_loci)[:k]:
        best = None
        for j, ref in enumerate(full_top):
            if consumed[j] or ref.chrom != locus.chrom:
                continue
            dist = abs(int(ref.pos) - int(locus.pos))
            if dist <= window_bp and (best is None or dist < best[0]):
                best = (dist, j)
        if best is not None:
            consumed[best[1]] = True
            matched += 1
    return matched / len(full_top)


@dataclass(frozen=True)
class RecalibrationReport:
    weights: np.ndarray
    q: np.ndarray
    reject: np.ndarray
    q_cutoff: float
    n_rejected: int
    loci: list
    recall: float = None
    recall_k: int = None


def recalibrate(stats: GwasStats, chi2_hat, alpha=0.05,
                window_bp=DEFAULT_WINDOW_BP, max_loci=DEFAULT_MAX_LOCI,
                full_loci=None, recall_k=10):
    """Weight p-values by predictions, rerun FDR control, clump the
    rejected set ranked by q, and optionally score recall against
    full-cohort reference loci."""
    chi2_hat = np.asarray(chi2_hat, dtype=np.float64)
    if chi2_hat.shape[0] != stats.n:
        raise ValidationError("prediction length does not match variants")
    weights = prediction_weights(chi2_hat)
    reject, cutoff = weighted_bh(stats.p, weights, alpha=alpha)
    q = stats.p / weights
    if reject.any():
        sub = stats.take(reject)
        loci = clump_loci(sub, score=q[reject], window_bp=window_bp,
                          max_loci=max_loci)
    else:
        loci = []
    recall = None
    if full_loci is not None:
        # zero rejections against a real reference is recall 0, not unscored
        recall = loci_recall(loci, full_loci, k=recall_k, window_bp=window_bp)
    return RecalibrationReport(weights=weights, q=q, reject=reject,
                               q_cutoff=cutoff, n_rejected=int(reject.sum()),
                               loci=loci, recall=recall,
                               recall_k=recall_k if recall is not None else None)
