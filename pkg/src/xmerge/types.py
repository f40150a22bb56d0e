"""Domain types, gene-universe alignment, and the merging objective.

Observed log-expression matrices from several studies share one gene
universe; the model couples them through per-gene mean/variance, a
per-study noise variance, and a per-study smooth observation function.
All types are immutable after construction and safe to share across
threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ParameterError, ShapeError
from .splines import CubicSpline


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    """Genes x arrays matrix of log-expression values.

    Rows follow ``gene_ids``, columns follow ``array_ids``; identifiers
    are unique and every value is finite.
    """

    gene_ids: tuple[str, ...]
    array_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))
        object.__setattr__(self, "array_ids", tuple(self.array_ids))
        values = _frozen_array(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ShapeError("values must be a 2-D matrix")
        if values.shape != (len(self.gene_ids), len(self.array_ids)):
            raise ShapeError(
                f"values shape {values.shape} does not match "
                f"{len(self.gene_ids)} genes x {len(self.array_ids)} arrays")
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise ParameterError("gene_ids contain duplicates")
        if len(set(self.array_ids)) != len(self.array_ids):
            raise ParameterError("array_ids contain duplicates")
        if values.size and not np.all(np.isfinite(values)):
            raise ParameterError("expression values must all be finite")

    @property
    def n_genes(self):
        return len(self.gene_ids)

    @property
    def n_arrays(self):
        return len(self.array_ids)

    def gene_index(self):
        return {g: i for i, g in enumerate(self.gene_ids)}

    def select_genes(self, indices):
        idx = np.asarray(indices, dtype=int)
        return ExpressionMatrix(
            gene_ids=tuple(self.gene_ids[i] for i in idx),
            array_ids=self.array_ids,
            values=self.values[idx],
        )

    def select_arrays(self, indices):
        idx = np.asarray(indices, dtype=int)
        return ExpressionMatrix(
            gene_ids=self.gene_ids,
            array_ids=tuple(self.array_ids[i] for i in idx),
            values=self.values[:, idx],
        )

    def with_values(self, values):
        return ExpressionMatrix(self.gene_ids, self.array_ids, values)


@dataclass(frozen=True, eq=False)
class Study:
    """One study: an id, its matrix, and optional per-array condition labels."""

    study_id: str
    matrix: ExpressionMatrix
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.matrix.n_arrays:
                raise ShapeError(
                    f"study {self.study_id!r}: {len(self.labels)} labels for "
                    f"{self.matrix.n_arrays} arrays")


@dataclass(frozen=True, eq=False)
class StudySet:
    """Ordered studies over one shared gene universe.

    Every member matrix has exactly the shared genes in the shared
    order, and every study contributes at least two arrays.
    """

    studies: tuple[Study, ...]

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        if not self.studies:
            raise ParameterError("a StudySet needs at least one study")
        ids = [s.study_id for s in self.studies]
        if len(set(ids)) != len(ids):
            raise ParameterError("study ids contain duplicates")
        ref = self.studies[0].matrix.gene_ids
        for s in self.studies:
            if s.matrix.gene_ids != ref:
                raise AlignmentError(
                    f"study {s.study_id!r} gene universe differs from the shared one")
            if s.matrix.n_arrays < 2:
                raise ParameterError(
                    f"study {s.study_id!r} has fewer than 2 arrays")

    @property
    def gene_ids(self):
        return self.studies[0].matrix.gene_ids

    @property
    def n_genes(self):
        return len(self.gene_ids)

    @property
    def n_studies(self):
        return len(self.studies)

    @property
    def study_ids(self):
        return tuple(s.study_id for s in self.studies)

    def values(self):
        """Per-study value matrices, in study order."""
        return [s.matrix.values for s in self.studies]

    def array_counts(self):
        return tuple(s.matrix.n_arrays for s in self.studies)

    def total_arrays(self):
        return sum(self.array_counts())

    def with_values(self, values):
        """Same studies and metadata with replaced value matrices."""
        if len(values) != self.n_studies:
            raise ShapeError("one value matrix per study required")
        studies = tuple(
            Study(s.study_id, s.matrix.with_values(v), s.labels)
            for s, v in zip(self.studies, values))
        return StudySet(studies)


@dataclass(frozen=True, eq=False)
class GeneModel:
    """Per-gene mean and variance of the intrinsic expression level."""

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu = _frozen_array(self.mu)
        sigma2 = _frozen_array(self.sigma2)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)
        if mu.ndim != 1 or sigma2.shape != mu.shape:
            raise ShapeError("mu and sigma2 must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma2))):
            raise ParameterError("gene parameters must be finite")
        if np.any(sigma2 <= 0):
            raise ParameterError("gene variances must be positive")


@dataclass(frozen=True, eq=False)
class StudyModel:
    """Per-study noise variance and fitted observation function.

    ``tau2`` is the effective (regularized) noise variance actually used
    downstream; ``lambda_reg`` records the additive regularizer whose
    square it includes.
    """

    tau2: float
    spline: CubicSpline
    lambda_reg: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.tau2) and self.tau2 > 0):
            raise ParameterError("tau2 must be positive and finite")
        if not (np.isfinite(self.lambda_reg) and self.lambda_reg >= 0):
            raise ParameterError("lambda_reg must be nonnegative and finite")


@dataclass(frozen=True)
class PosteriorValue:
    """The three additive components of the log-posterior and their sum."""

    l1: float
    l2: float
    l3: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.l1 + self.l2 + self.l3)


def align_gene_universe(raw, study_ids=None, labels=None):
    """Build a StudySet over the intersection of the gene universes.

    Rows are reordered to the first matrix's ordering of the shared
    genes. Returns the StudySet and a per-study dict of dropped gene
    ids.

    Raises AlignmentError when the intersection is empty.
    """
    raw = list(raw)
    if not raw:
        raise AlignmentError("no input matrices")
    for m in raw:
        if m.n_genes == 0:
            raise AlignmentError("input matrix has no genes")
    if study_ids is None:
        study_ids = [f"study{i + 1}" for i in range(len(raw))]
    study_ids = [str(s) for s in study_ids]
    if len(study_ids) != len(raw):
        raise ShapeError("one study id per matrix required")
    if labels is None:
        labels = [None] * len(raw)
    if len(labels) != len(raw):
        raise ShapeError("one label sequence per matrix required")

    shared = set(raw[0].gene_ids)
    for m in raw[1:]:
        shared &= set(m.gene_ids)
    if not shared:
        raise AlignmentError("gene universes have an empty intersection")
    ordered = [g for g in raw[0].gene_ids if g in shared]

    studies = []
    dropped = {}
    for sid, m, labs in zip(study_ids, raw, labels):
        index = m.gene_index()
        rows = [index[g] for g in ordered]
        dropped[sid] = tuple(g for g in m.gene_ids if g not in shared)
        studies.append(Study(sid, m.select_genes(rows), labs))
    return StudySet(tuple(studies)), dropped


def _as_value_list(x, data):
    if isinstance(x, StudySet):
        x = x.values()
    vals = [np.asarray(v, dtype=float) for v in x]
    if len(vals) != data.n_studies:
        raise ShapeError("x must hold one matrix per study")
    for v, m in zip(vals, data.values()):
        if v.shape != m.shape:
            raise ShapeError(f"x shape {v.shape} does not match data shape {m.shape}")
    return vals


def posterior(x, data, genes, studies, lambdas):
    """Log-posterior components for candidate intrinsic values ``x``.

    l1 is the observation misfit scaled by the noise variances, l2 the
    deviation of x from the gene means scaled by the gene variances,
    and l3 the curvature penalty of the observation functions; all are
    nonpositive and the total is their sum.
    """
    xs = _as_value_list(x, data)
    if len(studies) != data.n_studies:
        raise ShapeError("one StudyModel per study required")
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape != (data.n_studies,):
        raise ShapeError("one spline penalty per study required")
    mu = genes.mu
    sigma2 = genes.sigma2
    if mu.shape != (data.n_genes,):
        raise ShapeError("gene model length does not match the gene universe")

    l1 = 0.0
    l2 = 0.0
    l3 = 0.0
    for xk, yk, model, lam in zip(xs, data.values(), studies, lambdas):
        resid = yk - model.spline(xk)
        l1 -= float(np.sum(resid**2)) / (2.0 * model.tau2)
        dev = xk - mu[:, None]
        l2 -= float(np.sum(dev**2 / (2.0 * sigma2[:, None])))
        l3 -= float(lam) * model.spline.curvature_energy()
    return PosteriorValue(l1=l1, l2=l2, l3=l3)
