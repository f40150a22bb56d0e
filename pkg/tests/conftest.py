"""Shared builders for synthetic study data."""
import numpy as np
import pytest

from xmerge.distort import DistortionSpec, apply_distortion, split_balanced
from xmerge.types import ExpressionMatrix, Study, StudySet


def make_matrix(values, gene_prefix="g", array_prefix="a"):
    values = np.asarray(values, dtype=float)
    return ExpressionMatrix(
        gene_ids=tuple(f"{gene_prefix}{i}" for i in range(values.shape[0])),
        array_ids=tuple(f"{array_prefix}{j}" for j in range(values.shape[1])),
        values=values,
    )


def base_expression(seed, n_genes, n_per_class=(21, 21), delta=0.0, n_diff=0,
                    mean_range=(4.0, 12.0), var_log_mean=np.log(0.04),
                    var_log_sd=1.0):
    """Labeled matrix with long-tailed gene variances and optional
    condition-shifted genes (the first ``n_diff``, shifted in class B)."""
    rng = np.random.default_rng(seed)
    mu = rng.uniform(*mean_range, n_genes)
    sig2 = np.exp(rng.normal(var_log_mean, var_log_sd, n_genes))
    na, nb = n_per_class
    labels = ["A"] * na + ["B"] * nb
    values = mu[:, None] + rng.normal(0, np.sqrt(sig2)[:, None], (n_genes, na + nb))
    if n_diff:
        values[:n_diff, na:] += delta
    matrix = make_matrix(values)
    return matrix, tuple(labels)


def distorted_pair(seed, n_genes, noise_tune, delta=0.0, n_diff=0,
                   exponents=(0.7, 1.4), n_per_class=(20, 22)):
    """Split + distort a base matrix; returns (StudySet, truths, true tau2)."""
    matrix, labels = base_expression(seed, n_genes, delta=delta, n_diff=n_diff,
                                     n_per_class=n_per_class)
    label_map = dict(zip(matrix.array_ids, labels))
    first, second = split_balanced(matrix, labels, seed=seed)
    spec = DistortionSpec(power_exponents=exponents, noise_tune=noise_tune,
                          seed=seed)
    studies = []
    truths = []
    taus = []
    for idx, subset in enumerate((first, second)):
        distorted, truth, tau2 = apply_distortion(
            subset, exponents[idx], spec, study_index=idx)
        labs = tuple(label_map[a] for a in subset.array_ids)
        studies.append(Study(f"s{idx + 1}", distorted, labs))
        truths.append(truth)
        taus.append(tau2)
    return StudySet(tuple(studies)), truths, taus


def merged_matrix(matrices, labels_list, study_ids):
    """Concatenate study matrices column-wise with study-prefixed array ids."""
    values = np.concatenate([m.values for m in matrices], axis=1)
    array_ids = tuple(f"{sid}:{a}" for sid, m in zip(study_ids, matrices)
                      for a in m.array_ids)
    labels = tuple(l for labs in labels_list for l in labs)
    return ExpressionMatrix(matrices[0].gene_ids, array_ids, values), labels


@pytest.fixture
def rng():
    return np.random.default_rng(0)
