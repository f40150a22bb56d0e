"""Normalized-PCA coordinates of arrays for diagnostic export.

Genes are standardized across the pooled arrays, then the top two
eigenvectors of the array-by-array correlation structure give each
array's coordinates on the first factorial plane.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError


def pca_coordinates(matrices, study_ids=None, labels=None):
    """First two normalized principal-component coordinates per array.

    ``matrices`` share one gene universe; their arrays are pooled.
    Returns one row per array: (array_id, study_id, label, pc1, pc2).
    Coordinates are eigenvalue-scaled eigenvector entries, with the
    sign fixed so each component's largest-magnitude entry is positive.
    """
    matrices = list(matrices)
    if not matrices:
        raise ShapeError("no input matrices")
    ref = matrices[0].gene_ids
    for m in matrices[1:]:
        if m.gene_ids != ref:
            raise ShapeError("matrices must share one gene universe")
    if study_ids is None:
        study_ids = [f"study{i + 1}" for i in range(len(matrices))]
    if labels is None:
        labels = [["" for _ in m.array_ids] for m in matrices]

    pooled = np.concatenate([m.values for m in matrices], axis=1)
    n_arrays = pooled.shape[1]
    if n_arrays < 2:
        raise ShapeError("need at least 2 arrays for a factorial plane")
    centered = pooled - pooled.mean(axis=1, keepdims=True)
    scale = centered.std(axis=1, ddof=1)
    keep = scale > 0
    z = centered[keep] / scale[keep, None]

    corr = (z.T @ z) / max(z.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(corr)
    top = np.argsort(eigvals)[::-1][:2]
    coords = np.empty((n_arrays, 2))
    for col, idx in enumerate(top):
        vec = eigvecs[:, idx]
        anchor = int(np.argmax(np.abs(vec)))
        if vec[anchor] < 0:
            vec = -vec
        coords[:, col] = vec * np.sqrt(max(eigvals[idx], 0.0))

    rows = []
    offset = 0
    for m, sid, labs in zip(matrices, study_ids, labels):
        labs = list(labs)
        if len(labs) != m.n_arrays:
            raise ShapeError(f"{len(labs)} labels for {m.n_arrays} arrays")
        for j, aid in enumerate(m.array_ids):
            rows.append((aid, str(sid), str(labs[j]),
                         float(coords[offset + j, 0]),
                         float(coords[offset + j, 1])))
        offset += m.n_arrays
    return rows
