"""Parameter estimation: invariant gene sets, rectification-based
initialization, gene means/variances, observation functions, and
noise variances.

Gene variances are frozen sample estimates from the initialization;
noise variances come from restricted residual mean squares on the
invariant gene set, optionally regularized by an additive constant
(squared) that acts as a tuning parameter when the true noise level is
unknown.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import splines
from .errors import EstimationError, ParameterError, ShapeError
from .splines import CubicSpline, SplineFitSpec
from .types import StudySet

GENE_VARIANCE_FLOOR = 1e-6
NOISE_VARIANCE_FLOOR = 1e-8
FALLBACK_SPLINE_DF = 10.0

RECTIFY_TOL = 1e-6
RECTIFY_MAX_ITERS = 50
# rectification splines are gentle monotone warps; capping their
# effective df makes the curvature penalty actually steer the shared
# scale toward the straightest consistent one (plain GCV follows any
# curved self-consistent scale and never straightens it)
RECTIFY_MAX_DF = 4.0


@dataclass(frozen=True)
class InvariantSetSpec:
    """Binned low-variance gene selection: bin count and kept fraction."""

    n_bins: int = 10
    fraction: float = 0.10

    def __post_init__(self):
        if self.n_bins < 2:
            raise ParameterError("n_bins must be at least 2")
        if not 0.0 < self.fraction <= 1.0:
            raise ParameterError("fraction must be in (0, 1]")


@dataclass(frozen=True)
class InvariantSet:
    """Per-study tuples of gene indices selected as quasi-invariant."""

    per_study: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        cleaned = []
        for idx in self.per_study:
            idx = tuple(int(i) for i in idx)
            if len(set(idx)) != len(idx):
                raise ParameterError("invariant gene indices contain duplicates")
            if any(i < 0 for i in idx):
                raise ParameterError("invariant gene indices must be nonnegative")
            cleaned.append(idx)
        object.__setattr__(self, "per_study", tuple(cleaned))


def select_invariant_genes(matrix, spec=None):
    """Indices of low-variance genes spanning the expression range.

    Per-gene mean observed expression is split into ``n_bins``
    equal-width intervals; within each interval the requested fraction
    of genes with smallest across-array sample variance is kept
    (ceiling, ties broken by gene index). A degenerate range collapses
    to a single bin.
    """
    spec = spec or InvariantSetSpec()
    values = matrix.values
    if values.shape[1] < 2:
        raise EstimationError("invariant selection needs at least 2 arrays")
    means = values.mean(axis=1)
    variances = values.var(axis=1, ddof=1)
    lo, hi = float(means.min()), float(means.max())
    if hi > lo:
        bins = np.clip(((means - lo) / (hi - lo) * spec.n_bins).astype(int),
                       0, spec.n_bins - 1)
    else:
        bins = np.zeros(means.size, dtype=int)

    selected = []
    for b in range(spec.n_bins):
        members = np.flatnonzero(bins == b)
        if members.size == 0:
            continue
        take = int(np.ceil(spec.fraction * members.size - 1e-9))
        take = min(max(take, 1), members.size)
        order = np.lexsort((members, variances[members]))
        selected.append(members[order[:take]])
    return np.sort(np.concatenate(selected))


def select_invariant_sets(data, spec=None):
    spec = spec or InvariantSetSpec()
    return InvariantSet(tuple(
        tuple(select_invariant_genes(s.matrix, spec)) for s in data.studies))


def _resolve_lambdas(lambdas, n_studies):
    if lambdas is None:
        return [None] * n_studies
    if np.isscalar(lambdas):
        return [float(lambdas)] * n_studies
    lams = [None if l is None else float(l) for l in lambdas]
    if len(lams) != n_studies:
        raise ShapeError("one spline penalty per study required")
    return lams


def _rectify_objective(phis, phi_y, mu, weights, lams):
    total = 0.0
    for vals, w, phi, lam in zip(phi_y, weights, phis, lams):
        total += w * float(np.sum((vals - mu[:, None]) ** 2))
        total += lam * phi.curvature_energy()
    return total


def initialize_rectification(data, lambdas=None, max_knots=200):
    """Initial intrinsic values via per-study rectification splines.

    Alternates between (i) setting the gene means to the across-study
    average of per-study means of the rectified values and (ii)
    refitting each rectification spline against those means, starting
    from the identity map. Iterates until the relative objective change
    drops below 1e-6 (at most 50 iterations) and returns the rectified
    values together with the fitted splines.
    """
    if not isinstance(data, StudySet):
        raise ShapeError("initialize_rectification expects a StudySet")
    y_list = data.values()
    k = data.n_studies
    lams = _resolve_lambdas(lambdas, k)
    weights = [1.0 / y.shape[1] for y in y_list]

    phis = [CubicSpline.identity(float(y.min()), float(y.max()))
            if y.max() > y.min() else CubicSpline.identity(float(y.min()) - 0.5,
                                                           float(y.min()) + 0.5)
            for y in y_list]
    # abscissae and weights never change across iterations, so the
    # penalized design (knots, normal equations, eigen setup) is reused
    designs = [splines.SplineDesign(y.ravel(), weights=np.full(y.size, w),
                                    max_knots=max_knots)
               for y, w in zip(y_list, weights)]
    resolved = list(lams)
    prev_obj = None
    phi_y = [phi(y) for phi, y in zip(phis, y_list)]
    for _ in range(RECTIFY_MAX_ITERS):
        mu = np.mean([v.mean(axis=1) for v in phi_y], axis=0)

        new_phis = []
        for j, (y, design) in enumerate(zip(y_list, designs)):
            targets = np.broadcast_to(mu[:, None], y.shape).ravel()
            phi = design.fit(targets, lam=resolved[j],
                             max_df=RECTIFY_MAX_DF if lams[j] is None else None,
                             need_df=False)
            if resolved[j] is None:
                # freeze the selected penalty so the alternating
                # objective stays well-defined across iterations
                resolved[j] = phi.lam
            new_phis.append(phi)
        phis = new_phis

        phi_y = [phi(y) for phi, y in zip(phis, y_list)]
        obj = _rectify_objective(phis, phi_y, mu, weights, resolved)
        if prev_obj is not None:
            denom = max(abs(prev_obj), 1e-300)
            if abs(prev_obj - obj) / denom < RECTIFY_TOL:
                break
        prev_obj = obj

    return phi_y, phis


def estimate_means(x):
    """Pooled per-gene mean over every array of every study."""
    vals = [np.asarray(v, dtype=float) for v in x]
    return np.concatenate(vals, axis=1).mean(axis=1)


def estimate_gene_variances(x0, mu0, floor=GENE_VARIANCE_FLOOR):
    """Per-gene sample variance of the initialization values.

    Uses the pooled (N_c - 1) denominator and floors the result to keep
    downstream divisions well-defined.
    """
    vals = np.concatenate([np.asarray(v, dtype=float) for v in x0], axis=1)
    n_c = vals.shape[1]
    if n_c < 2:
        raise EstimationError("gene variance estimation needs at least 2 arrays")
    dev = vals - np.asarray(mu0, dtype=float)[:, None]
    sigma2 = np.sum(dev**2, axis=1) / (n_c - 1)
    return np.maximum(sigma2, floor)


def estimate_observation_functions(data, x, invariant, lambdas=None, max_knots=200):
    """Per-study smoothing-spline fit of observed against adjusted values.

    Fits are restricted to the invariant genes (all their arrays) so
    that gene-level variability does not masquerade as distortion. Each
    returned spline carries the penalty it was fitted with and its
    effective degrees of freedom.
    """
    y_list = data.values()
    lams = _resolve_lambdas(lambdas, data.n_studies)
    if len(invariant.per_study) != data.n_studies:
        raise ShapeError("one invariant gene set per study required")
    fitted = []
    for sid, y, xk, idx, lam in zip(data.study_ids, y_list, x,
                                    invariant.per_study, lams):
        if not idx:
            raise EstimationError(f"study {sid!r}: empty invariant gene set")
        rows = np.asarray(idx, dtype=int)
        xs = np.asarray(xk, dtype=float)[rows].ravel()
        ys = y[rows].ravel()
        spline = splines.fit(xs, ys, SplineFitSpec(lam=lam, max_knots=max_knots))
        if not spline.is_monotonic():
            warnings.warn(
                f"fitted observation function for study {sid!r} is "
                "non-monotonic over the data range", RuntimeWarning)
        fitted.append(spline)
    return fitted


def estimate_noise_variances(data, x, obs_splines, invariant, lambda_reg=0.0):
    """Residual-mean-square noise variances on the invariant gene set.

    Residuals are the observed values minus the observation function
    evaluated at each invariant gene's mean adjusted value, so the
    within-gene scatter feeds the estimate (invariant genes contribute
    almost no gene-level variability, leaving the observation noise).
    Evaluating at per-entry adjusted values would be circular at
    initialization, where those values are a deterministic transform of
    the observations. The denominator discounts the degrees of freedom
    consumed by the spline fit (floored at half the residual count);
    results include the ``lambda_reg**2`` additive regularizer and are
    floored at a small positive constant.
    """
    if lambda_reg < 0:
        raise ParameterError("lambda_reg must be nonnegative")
    if len(invariant.per_study) != data.n_studies:
        raise ShapeError("one invariant gene set per study required")
    y_list = data.values()
    out = np.empty(data.n_studies)
    for j, (sid, y, xk, spline, idx) in enumerate(
            zip(data.study_ids, y_list, x, obs_splines, invariant.per_study)):
        if not idx:
            raise EstimationError(f"study {sid!r}: empty invariant gene set")
        rows = np.asarray(idx, dtype=int)
        gene_loc = np.asarray(xk, dtype=float)[rows].mean(axis=1)
        resid = y[rows] - spline(gene_loc)[:, None]
        count = resid.size
        df = spline.df if spline.df is not None else FALLBACK_SPLINE_DF
        denom = max(count - df, count / 2.0)
        tau2 = float(np.sum(resid**2)) / denom
        out[j] = max(tau2 + lambda_reg**2, NOISE_VARIANCE_FLOOR)
    return out
