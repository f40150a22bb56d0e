"""Plain-text formats: expression TSV, label TSV, manifests, configs.

Expression matrices are TSV with a header row of array ids and one row
per gene (gene id first). Values must be finite; NaN is rejected at
ingestion since the model has no missing-data mechanism. All numeric
output uses shortest round-trip formatting so reruns are byte-stable.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import ParseError
from .types import ExpressionMatrix


def _fmt(value):
    return repr(float(value))


def read_expression_tsv(path, log2=False):
    """Parse an expression matrix, optionally log2-transforming values."""
    if not os.path.exists(path):
        raise ParseError(f"{path}: no such file")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise ParseError(f"{path}:1: empty header row")
        array_ids = header.rstrip("\n").split("\t")[1:]
        if not array_ids:
            raise ParseError(f"{path}:1: header names no arrays")
        n_cols = len(array_ids) + 1
        gene_ids = []
        seen = set()
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != n_cols:
                raise ParseError(
                    f"{path}:{lineno}: expected {n_cols} columns, got {len(parts)}")
            gene = parts[0]
            if gene in seen:
                raise ParseError(f"{path}:{lineno}: duplicate gene id {gene!r}")
            seen.add(gene)
            try:
                vals = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(v) for v in vals):
                raise ParseError(
                    f"{path}:{lineno}: nonfinite value in gene {gene!r}")
            if log2 and any(v <= 0 for v in vals):
                raise ParseError(
                    f"{path}:{lineno}: nonpositive value in gene {gene!r} "
                    "cannot be log2-transformed")
            gene_ids.append(gene)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no gene rows")
    values = np.asarray(rows, dtype=float)
    if log2:
        values = np.log2(values)
    return ExpressionMatrix(gene_ids=tuple(gene_ids),
                            array_ids=tuple(array_ids), values=values)


def write_expression_tsv(matrix, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("gene_id\t" + "\t".join(matrix.array_ids) + "\n")
        for i, gene in enumerate(matrix.gene_ids):
            fh.write(gene + "\t"
                     + "\t".join(_fmt(v) for v in matrix.values[i]) + "\n")


def read_labels_tsv(path):
    """Two-column (array_id, label) file as a dict; optional header."""
    if not os.path.exists(path):
        raise ParseError(f"{path}: no such file")
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            if lineno == 1 and parts[0].lower() in ("array_id", "array"):
                continue
            if parts[0] in mapping:
                raise ParseError(f"{path}:{lineno}: duplicate array id {parts[0]!r}")
            mapping[parts[0]] = parts[1]
    if not mapping:
        raise ParseError(f"{path}: no label rows")
    return mapping


def write_labels_tsv(pairs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("array_id\tlabel\n")
        for array_id, label in pairs:
            fh.write(f"{array_id}\t{label}\n")


def labels_for(matrix, mapping, path_hint=""):
    """Labels for every array of a matrix, in array order."""
    missing = [a for a in matrix.array_ids if a not in mapping]
    if missing:
        where = f" in {path_hint}" if path_hint else ""
        raise ParseError(f"no label{where} for arrays: {', '.join(missing[:5])}")
    return tuple(mapping[a] for a in matrix.array_ids)


def write_rows_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(
                _fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_manifest(mapping, path):
    """Key=value lines of every result-affecting resolved parameter."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(mapping):
            value = mapping[key]
            if isinstance(value, float):
                value = _fmt(value)
            fh.write(f"{key}={value}\n")


def read_config(path):
    """Flat key=value configuration file; '#' starts a comment line."""
    if not os.path.exists(path):
        raise ParseError(f"{path}: no such file")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, _, value = stripped.partition("=")
            out[key.strip()] = value.strip()
    return out
