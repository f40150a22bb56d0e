"""Differential-expression validation harness.

Per-gene Welch t-tests between two condition groups, Benjamini-Hochberg
FDR adjustment, variance-based gene filtering, and set-comparison
reports for judging how merging affects the recovered gene lists.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EstimationError, ParameterError, ShapeError

# degenerate zero-variance groups get this floor on the squared
# standard error so separated means still yield a decision
_SE2_FLOOR = 1e-24


def variance_filter(data, drop_fraction):
    """Indices of genes kept after dropping the least variable fraction.

    Drops ``floor(drop_fraction * n)`` genes with the smallest pooled
    sample variance (ties broken by gene index); returns ascending
    indices of the survivors.
    """
    if not 0.0 <= drop_fraction < 1.0:
        raise ParameterError("drop_fraction must be in [0, 1)")
    values = data.values if hasattr(data, "values") else np.asarray(data)
    values = np.asarray(values, dtype=float)
    variances = values.var(axis=1, ddof=1)
    n = variances.size
    n_drop = int(np.floor(drop_fraction * n + 1e-9))
    if n_drop == 0:
        return np.arange(n)
    order = np.lexsort((np.arange(n), variances))
    return np.sort(order[n_drop:])


def t_test(group_a, group_b):
    """Welch two-sample t statistic and two-sided p-value.

    Uses the Welch-Satterthwaite degrees of freedom. Two zero-variance
    groups with equal means give (0, 1); with distinct means the
    standard-error floor produces an overwhelming statistic.
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise EstimationError("each group needs at least 2 values")
    na, nb = a.size, b.size
    va = a.var(ddof=1) / na
    vb = b.var(ddof=1) / nb
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        se2 = _SE2_FLOOR
        df = na + nb - 2
    else:
        df = se2**2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    t = diff / np.sqrt(se2)
    p = 2.0 * stats.t.sf(abs(t), df)
    return float(t), float(min(p, 1.0))


def fdr_adjust(pvalues):
    """Benjamini-Hochberg step-up adjusted p-values.

    Monotone in the ranks, capped at 1, and attached to the p-value
    rather than its input position.
    """
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ParameterError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty_like(adjusted)
    out[order] = np.minimum(adjusted, 1.0)
    return out


@dataclass(frozen=True, eq=False)
class DiffResult:
    """Per-gene test results at FDR level ``q``.

    ``direction`` is the sign of mean(group1) - mean(group2); ``called``
    marks genes whose adjusted p-value is at most ``q``.
    """

    gene_ids: tuple[str, ...]
    t: np.ndarray
    p: np.ndarray
    p_adj: np.ndarray
    direction: np.ndarray
    q: float

    def __post_init__(self):
        for name in ("t", "p", "p_adj"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "direction",
                           np.asarray(self.direction, dtype=int))
        n = len(self.gene_ids)
        for name in ("t", "p", "p_adj", "direction"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"{name} must have one entry per gene")
        if not 0.0 < self.q <= 1.0:
            raise ParameterError("q must be in (0, 1]")

    @property
    def called(self):
        return self.p_adj <= self.q

    def call_set(self, direction=None, q=None):
        """Called gene ids, optionally restricted to one direction."""
        q = self.q if q is None else q
        mask = self.p_adj <= q
        if direction is not None:
            mask = mask & (self.direction == direction)
        return frozenset(g for g, keep in zip(self.gene_ids, mask) if keep)


def run_differential(matrix, labels, group_a, group_b, q=0.05, drop_fraction=0.0):
    """Welch tests with BH correction on the variance-filtered genes."""
    labels = list(labels)
    if len(labels) != matrix.n_arrays:
        raise ShapeError(f"{len(labels)} labels for {matrix.n_arrays} arrays")
    cols_a = [i for i, lab in enumerate(labels) if lab == group_a]
    cols_b = [i for i, lab in enumerate(labels) if lab == group_b]
    if len(cols_a) < 2 or len(cols_b) < 2:
        raise EstimationError("each condition group needs at least 2 arrays")

    keep = variance_filter(matrix, drop_fraction)
    values = matrix.values[keep]
    gene_ids = tuple(matrix.gene_ids[i] for i in keep)

    t_stats = np.empty(len(keep))
    p_vals = np.empty(len(keep))
    direction = np.empty(len(keep), dtype=int)
    for row in range(len(keep)):
        a = values[row, cols_a]
        b = values[row, cols_b]
        t_stats[row], p_vals[row] = t_test(a, b)
        direction[row] = int(np.sign(a.mean() - b.mean()))
    return DiffResult(gene_ids=gene_ids, t=t_stats, p=p_vals,
                      p_adj=fdr_adjust(p_vals), direction=direction, q=q)


@dataclass(frozen=True)
class CallsetComparison:
    """Per-direction overlap counts between a reference and candidates."""

    direction: int
    reference_size: int
    candidate_rows: tuple  # (name, size, overlap, ref_only, cand_only)
    pairwise_rows: tuple   # (name_a, name_b, intersection, intersection_with_ref)


def compare_callsets(reference, candidates):
    """Overlap report between a reference analysis and candidate analyses.

    ``candidates`` maps names to DiffResults sharing the reference's
    gene universe. For each direction the report gives the reference
    call-set size, each candidate's size/overlap/set differences
    against the reference, and all pairwise candidate intersections
    (plain and restricted to the reference).
    """
    items = list(candidates.items())
    reports = []
    for direction in (1, -1):
        ref_set = reference.call_set(direction=direction)
        rows = []
        sets = {}
        for name, result in items:
            cand = result.call_set(direction=direction)
            sets[name] = cand
            rows.append((name, len(cand), len(cand & ref_set),
                         len(ref_set - cand), len(cand - ref_set)))
        pairwise = []
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                na, nb = items[i][0], items[j][0]
                inter = sets[na] & sets[nb]
                pairwise.append((na, nb, len(inter), len(inter & ref_set)))
        reports.append(CallsetComparison(
            direction=direction,
            reference_size=len(ref_set),
            candidate_rows=tuple(rows),
            pairwise_rows=tuple(pairwise),
        ))
    return tuple(reports)
