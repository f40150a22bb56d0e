"""Command-line frontend: merge, simulate, diff, pca.

Exit codes: 0 success, 1 usage, 2 input error, 3 numerical failure.
The worker cap comes from --threads or the XMERGE_THREADS environment
variable; outputs are byte-identical at any thread count.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import io as xio
from .adjustment import AdjustmentConfig, run_pipeline
from .diffexpr import compare_callsets, run_differential
from .distort import (POSITIVE_SHIFT, RNG_ALGORITHM, DistortionSpec,
                      apply_distortion, split_balanced)
from .errors import (AlignmentError, EstimationError, FitError, ParameterError,
                     ParseError, ShapeError, SplitError, XMergeError)
from .estimation import InvariantSetSpec
from .pca import pca_coordinates
from .types import ExpressionMatrix, align_gene_universe

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_INPUT_ERRORS = (ParseError, AlignmentError, SplitError, FileNotFoundError)
_NUMERIC_ERRORS = (FitError, EstimationError, ParameterError, ShapeError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters of a merge run.

    Built from flags and the optional config file (flags win); the run
    manifest is written from this object, so a manifest line exists for
    every result-affecting parameter.
    """

    inputs: tuple[str, ...]
    study_ids: tuple[str, ...]
    labels: tuple[str, ...] | None
    log2: bool
    n_bins: int
    fraction: float
    lams: tuple[float, ...] | None
    lambda_reg: float
    max_outer_iters: int
    max_inner_iters: int
    rel_tol: float
    deriv_floor: float
    damping: bool
    refit_observation: bool
    max_knots: int
    seed: int
    out: str = field(compare=False)
    threads: int = field(default=1, compare=False)

    def validate(self, parser):
        if len(self.study_ids) != len(self.inputs):
            parser.error("one --study-id per --input required")
        if len(set(self.study_ids)) != len(self.study_ids):
            parser.error("study ids must be unique")
        if self.labels is not None and len(self.labels) != len(self.inputs):
            parser.error("one --labels per --input required when given")
        if self.lams is not None and len(self.lams) != len(self.inputs):
            parser.error("one --lam per --input (or a single value) required")
        for path in list(self.inputs) + list(self.labels or ()):
            if not os.path.exists(path):
                raise ParseError(f"{path}: no such file")
        return self

    def manifest(self):
        # threads and the output directory do not affect results and are
        # deliberately excluded so reruns compare byte-for-byte
        entries = {
            "command": "merge",
            "inputs": ",".join(self.inputs),
            "study_ids": ",".join(self.study_ids),
            "labels": ",".join(self.labels) if self.labels else "",
            "log2": self.log2,
            "n_bins": self.n_bins,
            "fraction": self.fraction,
            "lambda_reg": self.lambda_reg,
            "max_outer_iters": self.max_outer_iters,
            "max_inner_iters": self.max_inner_iters,
            "rel_tol": self.rel_tol,
            "deriv_floor": self.deriv_floor,
            "damping": self.damping,
            "refit_observation": self.refit_observation,
            "max_knots": self.max_knots,
            "seed": self.seed,
        }
        return entries


def _cast_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _resolve(args, config, key, cast, default):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        raw = config[key]
        if cast is bool:
            return _cast_bool(raw)
        if cast is list:
            return [p.strip() for p in raw.split(",") if p.strip()]
        return cast(raw)
    return default


def _load_config(args):
    path = getattr(args, "config", None)
    return xio.read_config(path) if path else {}


def _threads(args, config):
    value = _resolve(args, config, "threads", int, None)
    if value is None:
        env = os.environ.get("XMERGE_THREADS", "")
        value = int(env) if env.strip() else 1
    return max(int(value), 1)


def _add_common(sub):
    sub.add_argument("--config", help="flat key=value config file; flags win")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int, help="random seed (default 0)")
    sub.add_argument("--log2", action="store_const", const=True, default=None,
                     help="log2-transform values on ingestion")
    sub.add_argument("--threads", type=int,
                     help="worker cap (XMERGE_THREADS fallback, default 1)")


def build_parser():
    parser = _Parser(prog="xmerge",
                     description="Cross-study expression dataset merging")
    commands = parser.add_subparsers(dest="command", required=True)

    merge = commands.add_parser("merge", help="estimate distortions and adjust studies")
    merge.add_argument("--input", action="append",
                       help="expression TSV (repeat per study)")
    merge.add_argument("--study-id", action="append", dest="study_id",
                       help="study id (repeat; defaults to file stems)")
    merge.add_argument("--labels", action="append",
                       help="two-column array/label TSV (repeat per study)")
    merge.add_argument("--lam", action="append", type=float,
                       help="fixed spline penalty (repeat per study; default GCV)")
    merge.add_argument("--lambda-reg", type=float, dest="lambda_reg",
                       help="additive noise-variance regularizer (default 0)")
    merge.add_argument("--n-bins", type=int, dest="n_bins")
    merge.add_argument("--fraction", type=float)
    merge.add_argument("--max-outer-iters", type=int, dest="max_outer_iters")
    merge.add_argument("--max-inner-iters", type=int, dest="max_inner_iters")
    merge.add_argument("--rel-tol", type=float, dest="rel_tol")
    merge.add_argument("--deriv-floor", type=float, dest="deriv_floor")
    merge.add_argument("--no-damping", action="store_const", const=False,
                       dest="damping", default=None)
    merge.add_argument("--refit-observation", action="store_const", const=True,
                       dest="refit_observation", default=None)
    merge.add_argument("--max-knots", type=int, dest="max_knots")
    _add_common(merge)

    simulate = commands.add_parser("simulate",
                                   help="split and distort one labeled dataset")
    simulate.add_argument("--input", required=True, help="expression TSV")
    simulate.add_argument("--labels", required=True,
                          help="two-column array/label TSV")
    simulate.add_argument("--exponent", action="append", type=float,
                          help="power exponent (repeat; defaults 0.7 and 1.4)")
    simulate.add_argument("--noise-tune", type=float, dest="noise_tune")
    simulate.add_argument("--noise-multiplier", action="append", type=float,
                          dest="noise_multiplier",
                          help="per-study noise multiplier (defaults 1 and 3)")
    simulate.add_argument("--no-standardize", action="store_const", const=False,
                          dest="standardize", default=None)
    _add_common(simulate)

    diff = commands.add_parser("diff", help="differential analysis and comparisons")
    diff.add_argument("--input", action="append", required=True,
                      help="NAME=FILE expression TSV (repeat)")
    diff.add_argument("--labels", required=True,
                      help="two-column array/label TSV covering all arrays")
    diff.add_argument("--group-a", required=True, dest="group_a")
    diff.add_argument("--group-b", required=True, dest="group_b")
    diff.add_argument("--q", type=float, help="FDR level (default 0.05)")
    diff.add_argument("--drop-fraction", type=float, dest="drop_fraction",
                      help="least-variable fraction to drop (default 0)")
    diff.add_argument("--reference", help="reference dataset name (default first)")
    _add_common(diff)

    pca = commands.add_parser("pca", help="export first-plane PCA coordinates")
    pca.add_argument("--input", action="append", required=True,
                     help="NAME=FILE expression TSV (repeat)")
    pca.add_argument("--labels", help="two-column array/label TSV")
    _add_common(pca)

    return parser


def _out_dir(args, config, parser):
    out = _resolve(args, config, "out", str, None)
    if not out:
        parser.error("--out is required")
    os.makedirs(out, exist_ok=True)
    return out


def _named_inputs(args, parser):
    pairs = []
    for item in args.input:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            parser.error(f"--input expects NAME=FILE, got {item!r}")
        pairs.append((name, path))
    if len({n for n, _ in pairs}) != len(pairs):
        parser.error("--input names must be unique")
    return pairs


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def resolve_merge_config(args, parser):
    config = _load_config(args)
    out = _out_dir(args, config, parser)
    inputs = _resolve(args, config, "input", list, None)
    if not inputs:
        parser.error("--input is required (flag or config key 'input')")
    study_ids = _resolve(args, config, "study_id", list, None)
    if study_ids is None:
        study_ids = [_stem(p) for p in inputs]
    label_paths = _resolve(args, config, "labels", list, None)
    lams = _resolve(args, config, "lam", list, None)
    if lams is not None:
        lams = [float(l) for l in lams]
        if len(lams) == 1:
            lams = lams * len(inputs)
    return RunConfig(
        inputs=tuple(inputs),
        study_ids=tuple(str(s) for s in study_ids),
        labels=tuple(label_paths) if label_paths else None,
        log2=bool(_resolve(args, config, "log2", bool, False)),
        n_bins=int(_resolve(args, config, "n_bins", int, 10)),
        fraction=float(_resolve(args, config, "fraction", float, 0.10)),
        lams=tuple(lams) if lams is not None else None,
        lambda_reg=float(_resolve(args, config, "lambda_reg", float, 0.0)),
        max_outer_iters=int(_resolve(args, config, "max_outer_iters", int, 30)),
        max_inner_iters=int(_resolve(args, config, "max_inner_iters", int, 20)),
        rel_tol=float(_resolve(args, config, "rel_tol", float, 1e-5)),
        deriv_floor=float(_resolve(args, config, "deriv_floor", float, 1e-3)),
        damping=bool(_resolve(args, config, "damping", bool, True)),
        refit_observation=bool(_resolve(args, config, "refit_observation",
                                        bool, False)),
        max_knots=int(_resolve(args, config, "max_knots", int, 200)),
        seed=int(_resolve(args, config, "seed", int, 0)),
        out=out,
        threads=_threads(args, config),
    ).validate(parser)


def cmd_merge(args, parser):
    run = resolve_merge_config(args, parser)
    out = run.out

    matrices = [xio.read_expression_tsv(p, log2=run.log2) for p in run.inputs]
    labels = None
    if run.labels:
        labels = [xio.labels_for(m, xio.read_labels_tsv(p), p)
                  for m, p in zip(matrices, run.labels)]
    data, dropped = align_gene_universe(matrices, study_ids=run.study_ids,
                                        labels=labels)

    result = run_pipeline(
        data,
        spec=InvariantSetSpec(n_bins=run.n_bins, fraction=run.fraction),
        config=AdjustmentConfig(
            max_outer_iters=run.max_outer_iters,
            max_inner_iters=run.max_inner_iters,
            rel_tol=run.rel_tol,
            deriv_floor=run.deriv_floor,
            damping=run.damping,
        ),
        lambdas=list(run.lams) if run.lams is not None else None,
        lambda_reg=run.lambda_reg,
        max_knots=run.max_knots,
        threads=run.threads,
        refit_observation=run.refit_observation,
    )

    for study in result.adjusted.studies:
        xio.write_expression_tsv(study.matrix,
                                 os.path.join(out, f"adjusted_{study.study_id}.tsv"))
    merged_ids = []
    merged_cols = []
    merged_labels = []
    for study in result.adjusted.studies:
        for j, aid in enumerate(study.matrix.array_ids):
            merged_ids.append(f"{study.study_id}:{aid}")
            merged_cols.append(study.matrix.values[:, j])
            if study.labels is not None:
                merged_labels.append((f"{study.study_id}:{aid}", study.labels[j]))
    merged = ExpressionMatrix(gene_ids=data.gene_ids,
                              array_ids=tuple(merged_ids),
                              values=np.column_stack(merged_cols))
    xio.write_expression_tsv(merged, os.path.join(out, "merged_adjusted.tsv"))
    if merged_labels:
        xio.write_labels_tsv(merged_labels, os.path.join(out, "merged_labels.tsv"))

    xio.write_rows_tsv(
        os.path.join(out, "gene_params.tsv"),
        ("gene_id", "mu", "sigma2"),
        [(g, float(m), float(s)) for g, m, s in
         zip(data.gene_ids, result.genes.mu, result.genes.sigma2)])
    xio.write_rows_tsv(
        os.path.join(out, "study_params.tsv"),
        ("study_id", "tau2_hat", "lambda_reg", "lambda_smooth", "spline_df",
         "n_invariant"),
        [(sid, model.tau2, model.lambda_reg,
          float(model.spline.lam) if model.spline.lam is not None else float("nan"),
          float(model.spline.df) if model.spline.df is not None else float("nan"),
          len(result.invariant.per_study[j]))
         for j, (sid, model) in enumerate(zip(data.study_ids, result.studies))])
    for sid, model in zip(data.study_ids, result.studies):
        with open(os.path.join(out, f"spline_{sid}.tsv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write(model.spline.to_table())
    for sid, phi in zip(data.study_ids, result.phis):
        with open(os.path.join(out, f"rectification_{sid}.tsv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write(phi.to_table())
    xio.write_rows_tsv(
        os.path.join(out, "invariant_genes.tsv"),
        ("study_id", "gene_id"),
        [(sid, data.gene_ids[i])
         for sid, idx in zip(data.study_ids, result.invariant.per_study)
         for i in idx])
    xio.write_rows_tsv(
        os.path.join(out, "trace.tsv"),
        ("iteration", "objective"),
        [(i, float(v)) for i, v in enumerate(result.trace)])
    if any(dropped.values()):
        xio.write_rows_tsv(
            os.path.join(out, "dropped_genes.tsv"),
            ("study_id", "gene_id"),
            [(sid, g) for sid in data.study_ids for g in dropped[sid]])

    manifest = run.manifest()
    for sid, lam in zip(run.study_ids, result.lambdas):
        manifest[f"lambda_{sid}"] = float(lam) if lam is not None else ""
    xio.write_manifest(manifest, os.path.join(out, "run_manifest.txt"))
    return EXIT_OK


def cmd_simulate(args, parser):
    config = _load_config(args)
    out = _out_dir(args, config, parser)
    log2 = bool(_resolve(args, config, "log2", bool, False))
    seed = int(_resolve(args, config, "seed", int, 0))
    exponents = _resolve(args, config, "exponent", list, None)
    exponents = tuple(float(e) for e in exponents) if exponents else (0.7, 1.4)
    multipliers = _resolve(args, config, "noise_multiplier", list, None)
    multipliers = tuple(float(m) for m in multipliers) if multipliers else (1.0, 3.0)
    spec = DistortionSpec(
        power_exponents=exponents,
        noise_tune=float(_resolve(args, config, "noise_tune", float, 1.0)),
        noise_multipliers=multipliers,
        seed=seed,
        standardize=bool(_resolve(args, config, "standardize", bool, True)),
    )

    matrix = xio.read_expression_tsv(args.input, log2=log2)
    label_map = xio.read_labels_tsv(args.labels)
    labels = xio.labels_for(matrix, label_map, args.labels)
    first, second = split_balanced(matrix, labels, seed=seed)

    metadata = {
        "command": "simulate",
        "input": args.input,
        "labels": args.labels,
        "log2": log2,
        "seed": seed,
        "rng": RNG_ALGORITHM,
        "standardize": spec.standardize,
        "standardization": "global",
        "positive_shift": POSITIVE_SHIFT,
        "noise_tune": spec.noise_tune,
    }
    for idx, subset in enumerate((first, second)):
        exponent = spec.power_exponents[idx % len(spec.power_exponents)]
        distorted, truth, tau2 = apply_distortion(subset, exponent, spec,
                                                  study_index=idx)
        xio.write_expression_tsv(distorted,
                                 os.path.join(out, f"distorted_{idx + 1}.tsv"))
        xio.write_expression_tsv(truth, os.path.join(out, f"truth_{idx + 1}.tsv"))
        xio.write_labels_tsv(
            [(a, label_map[a]) for a in subset.array_ids],
            os.path.join(out, f"labels_{idx + 1}.tsv"))
        metadata[f"exponent_{idx + 1}"] = exponent
        metadata[f"noise_multiplier_{idx + 1}"] = spec.noise_multipliers[
            idx % len(spec.noise_multipliers)]
        metadata[f"tau2_true_{idx + 1}"] = tau2
    xio.write_manifest(metadata, os.path.join(out, "metadata.txt"))
    return EXIT_OK


def cmd_diff(args, parser):
    config = _load_config(args)
    out = _out_dir(args, config, parser)
    log2 = bool(_resolve(args, config, "log2", bool, False))
    q = float(_resolve(args, config, "q", float, 0.05))
    drop = float(_resolve(args, config, "drop_fraction", float, 0.0))
    named = _named_inputs(args, parser)
    reference = _resolve(args, config, "reference", str, named[0][0])
    if reference not in {n for n, _ in named}:
        parser.error(f"--reference {reference!r} is not an input name")

    label_map = xio.read_labels_tsv(args.labels)
    results = {}
    for name, path in named:
        matrix = xio.read_expression_tsv(path, log2=log2)
        labels = xio.labels_for(matrix, label_map, args.labels)
        results[name] = run_differential(matrix, labels, args.group_a,
                                         args.group_b, q=q, drop_fraction=drop)

    for name, res in results.items():
        xio.write_rows_tsv(
            os.path.join(out, f"diff_{name}.tsv"),
            ("gene_id", "t", "p", "p_adj", "direction", "called"),
            [(g, float(res.t[i]), float(res.p[i]), float(res.p_adj[i]),
              "+" if res.direction[i] > 0 else ("-" if res.direction[i] < 0 else "0"),
              int(res.called[i]))
             for i, g in enumerate(res.gene_ids)])

    comparisons = compare_callsets(results[reference],
                                   {n: r for n, r in results.items()})
    comp_rows = []
    for report in comparisons:
        sign = "+" if report.direction > 0 else "-"
        for name, size, overlap, ref_only, cand_only in report.candidate_rows:
            comp_rows.append((sign, "candidate", name, "", size, overlap,
                              ref_only, cand_only, report.reference_size))
        for name_a, name_b, inter, inter_ref in report.pairwise_rows:
            comp_rows.append((sign, "pairwise", name_a, name_b, inter,
                              inter_ref, "", "", report.reference_size))
    xio.write_rows_tsv(
        os.path.join(out, "comparison.tsv"),
        ("direction", "kind", "name_a", "name_b", "size", "overlap_ref",
         "ref_only", "cand_only", "reference_size"),
        comp_rows)

    long_rows = []
    for name, res in results.items():
        for i, g in enumerate(res.gene_ids):
            if res.called[i]:
                sign = "+" if res.direction[i] > 0 else "-"
                long_rows.append((name, sign, g, float(res.p[i]),
                                  float(res.p_adj[i])))
    xio.write_rows_tsv(os.path.join(out, "pvalues_long.tsv"),
                       ("dataset", "direction", "gene_id", "p", "p_adj"),
                       long_rows)

    manifest = {
        "command": "diff",
        "inputs": ",".join(f"{n}={p}" for n, p in named),
        "labels": args.labels,
        "log2": log2,
        "group_a": args.group_a,
        "group_b": args.group_b,
        "q": q,
        "drop_fraction": drop,
        "reference": reference,
    }
    xio.write_manifest(manifest, os.path.join(out, "run_manifest.txt"))
    return EXIT_OK


def cmd_pca(args, parser):
    config = _load_config(args)
    out = _out_dir(args, config, parser)
    log2 = bool(_resolve(args, config, "log2", bool, False))
    named = _named_inputs(args, parser)
    matrices = []
    study_ids = []
    for name, path in named:
        matrices.append(xio.read_expression_tsv(path, log2=log2))
        study_ids.append(name)
    labels = None
    if args.labels:
        label_map = xio.read_labels_tsv(args.labels)
        labels = [xio.labels_for(m, label_map, args.labels) for m in matrices]
    if len(matrices) > 1:
        aligned, _ = align_gene_universe(matrices, study_ids=study_ids,
                                         labels=labels)
        matrices = [s.matrix for s in aligned.studies]
        labels = [s.labels for s in aligned.studies] if labels else None

    rows = pca_coordinates(matrices, study_ids=study_ids, labels=labels)
    xio.write_rows_tsv(os.path.join(out, "pca.tsv"),
                       ("array_id", "study_id", "label", "pc1", "pc2"),
                       [(a, s, l, p1, p2) for a, s, l, p1, p2 in rows])
    return EXIT_OK


_COMMANDS = {
    "merge": cmd_merge,
    "simulate": cmd_simulate,
    "diff": cmd_diff,
    "pca": cmd_pca,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _COMMANDS[args.command]
    try:
        return handler(args, parser)
    except _INPUT_ERRORS as exc:
        print(f"xmerge {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _NUMERIC_ERRORS as exc:
        print(f"xmerge {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except XMergeError as exc:
        print(f"xmerge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
