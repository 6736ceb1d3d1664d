"""Command-line front end.

Subcommands: gen, fit, cv, predict, classify, embed. Every run is a single
batch process writing plot-ready CSV/JSON files; nothing is interactive.
Defaults that shaped a result (K, lambda grid, solver tolerance) are
recorded in the JSON outputs.

Exit codes are a stable contract: 0 success, 2 usage, 3 data or I/O,
4 numerical failure.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .data import (
    PointCloud,
    atomic_write_text,
    load_fit,
    read_table,
    save_fit,
    write_points_csv,
)
from .errors import DataError, NumericalError
from .hessian import estimate, null_embedding, write_coordinate_text
from .manifolds import KINDS, ManifoldSpec, add_noise, generate, response
from .predict import classify_fit, classify_predict, predict_oos
from .solver import (
    cv_select,
    default_lambda_grid,
    effective_dof,
    fit,
    fit_weighted,
    reweight_fit,
)

__all__ = ["main", "entry"]


class UsageError(Exception):
    """Flag-level validation failure; maps to exit code 2."""


def _fmt(value):
    return repr(float(value))


def _parse_extent(text):
    if text is None:
        return None
    spans = []
    for part in text.split(","):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise UsageError(f"bad extent component {part!r}, expected lo:hi")
        try:
            spans.append((float(pieces[0]), float(pieces[1])))
        except ValueError:
            raise UsageError(f"bad extent component {part!r}") from None
    if not spans:
        raise UsageError("empty extent")
    return tuple(spans)


def _parse_floats(text, what):
    tokens = [tok.strip() for tok in text.split(",") if tok.strip()]
    if not tokens:
        raise UsageError(f"empty {what}")
    try:
        return [float(tok) for tok in tokens]
    except ValueError as exc:
        raise UsageError(f"bad {what}: {exc}") from None


def _default_coeffs(kind, d):
    if kind == "constant":
        return 0.0
    if kind == "linear":
        return np.ones(d)
    if kind == "quadratic":
        return np.eye(d)
    if kind == "sine":
        return (1.0, 1.0)
    raise UsageError(f"unknown response kind {kind!r}")


def _resolve_coeffs(kind, text, d):
    if text is None:
        return _default_coeffs(kind, d)
    values = _parse_floats(text, "coefficients")
    if kind == "constant":
        if len(values) != 1:
            raise UsageError("constant response takes 1 coefficient")
        return values[0]
    if kind == "linear":
        if len(values) != d:
            raise UsageError(f"linear response takes {d} coefficients")
        return np.asarray(values)
    if kind == "quadratic":
        if len(values) != d * d:
            raise UsageError(
                f"quadratic response takes the {d}x{d} matrix row-major ({d * d} values)"
            )
        return np.asarray(values).reshape(d, d)
    if kind == "sine":
        if len(values) != 2:
            raise UsageError("sine response takes amplitude,frequency")
        return tuple(values)
    raise UsageError(f"unknown response kind {kind!r}")


def _load_cloud(path, fmt, d):
    table = read_table(path, fmt)
    return PointCloud(table.points, d), table


def _require_response(table, path):
    if table.response is None:
        raise DataError(f"{path} has no y column")
    return table.response


def cmd_gen(args):
    extent = _parse_extent(args.extent)
    spec = ManifoldSpec(kind=args.manifold, extent=extent, seed=args.seed)
    truth = generate(spec, args.n)
    coeffs = _resolve_coeffs(args.response, args.coeffs, spec.dim)
    y = response(truth.params, args.response, coeffs)
    if args.sigma > 0:
        # separate stream so the same surface can carry fresh noise
        y = add_noise(y, args.sigma, seed=args.seed + 1)
    values = y.values

    os.makedirs(args.out, exist_ok=True)
    write_points_csv(os.path.join(args.out, "params.csv"), truth.params)
    write_points_csv(os.path.join(args.out, "embedded.csv"), truth.embedded)
    atomic_write_text(
        os.path.join(args.out, "response.csv"),
        "y\n" + "\n".join(_fmt(v) for v in values) + "\n",
    )
    # embedded coordinates and response joined, ready for `fit --in`
    write_points_csv(os.path.join(args.out, "data.csv"), truth.embedded, response=values)
    print(
        f"gen: N={args.n} n={truth.embedded.shape[1]} d={spec.dim} "
        f"seed={args.seed} -> {args.out}"
    )
    return 0


def _write_fit_csv(path, y, result):
    lines = ["index,y,fitted,weight"]
    w = result.weights.weights
    for i in range(result.n_points):
        lines.append(f"{i},{_fmt(y[i])},{_fmt(result.fitted[i])},{_fmt(w[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_fit(args):
    cloud, table = _load_cloud(args.input, args.format, args.d)
    y = _require_response(table, args.input)
    form = estimate(
        cloud,
        k=args.k,
        policy=args.degenerate,
        trim_fraction=args.trim,
        knn_method=args.knn,
    )
    if args.reweight:
        rho = args.rho_scale
        if rho != "auto":
            try:
                rho = float(rho)
            except ValueError:
                raise UsageError(f"bad --rho-scale {rho!r}") from None
        result = reweight_fit(
            form,
            y,
            args.lam,
            rho_scale=rho,
            max_iter=args.max_iter,
            tol=args.tol,
            solver_tolerance=args.solver_tolerance,
        )
    elif args.weighted:
        if table.weights is None:
            raise DataError(f"{args.input} has no w column for --weighted")
        result = fit_weighted(
            form, y, table.weights, args.lam, solver_tolerance=args.solver_tolerance
        )
    else:
        result = fit(
            form,
            y,
            args.lam,
            solver_tolerance=args.solver_tolerance,
            method=args.method,
        )
    diagnostics = dict(result.diagnostics)
    diagnostics.update(
        skipped_points=list(form.skipped),
        solver_tolerance=args.solver_tolerance,
        policy=args.degenerate,
    )
    if args.edf:
        diagnostics["edf"] = effective_dof(form, args.lam, solver_tolerance=args.solver_tolerance)
    result = replace(result, diagnostics=diagnostics)
    save_fit(result, args.out)
    _write_fit_csv(args.fitted_csv, y, result)
    if args.dump_hessian:
        write_coordinate_text(form, args.dump_hessian)
    print(
        f"fit: N={cloud.n_points} lambda={result.lam} iterations={result.iterations} "
        f"skipped={len(form.skipped)} -> {args.out}"
    )
    return 0


_CV_METHODS = {
    "shortcut": "smoother_shortcut",
    "exact": "exact_refit",
    "smoother_shortcut": "smoother_shortcut",
    "exact_refit": "exact_refit",
}


def cmd_cv(args):
    cloud, table = _load_cloud(args.input, args.format, args.d)
    y = _require_response(table, args.input)
    form = estimate(cloud, k=args.k, policy=args.degenerate, knn_method=args.knn)
    grid = None
    if args.grid is not None:
        grid = _parse_floats(args.grid, "lambda grid")
    report = cv_select(
        form,
        y,
        grid=grid,
        method=_CV_METHODS[args.method],
        solver_tolerance=args.solver_tolerance,
    )
    payload = {
        "selected_lambda": report.selected,
        "method": report.method,
        "grid": [float(v) for v in report.grid],
        "scores": [float(v) for v in report.scores],
        "degenerate": list(report.degenerate),
        "K": args.k,
        "d": args.d,
        "solver_tolerance": args.solver_tolerance,
        "default_grid": grid is None,
    }
    atomic_write_text(args.out, json.dumps(payload, indent=2) + "\n")
    lines = ["lambda,score"]
    lines += [f"{_fmt(l)},{_fmt(s)}" for l, s in zip(report.grid, report.scores)]
    atomic_write_text(args.curve_csv, "\n".join(lines) + "\n")
    print(
        f"cv: N={cloud.n_points} grid={report.grid.size} method={report.method} "
        f"selected={report.selected!r} -> {args.out}"
    )
    return 0


def cmd_predict(args):
    cloud, table = _load_cloud(args.train, args.format, args.d)
    queries = read_table(args.queries, args.format).points
    if args.fit is not None:
        fitted = load_fit(args.fit).fitted
    else:
        y = _require_response(table, args.train)
        form = estimate(cloud, k=args.k, knn_method=args.knn)
        fitted = fit(form, y, args.lam, solver_tolerance=args.solver_tolerance).fitted
    method = "local_linear" if args.method == "convex" else args.method
    variant = "convex" if args.method == "convex" else "affine"
    values = [
        predict_oos(
            cloud,
            fitted,
            q,
            k=args.k,
            method=method,
            lambda_loc=args.lambda_loc,
            variant=variant,
        ).value
        for q in queries
    ]
    header = [f"x{j + 1}" for j in range(queries.shape[1])] + ["value", "method"]
    lines = [",".join(header)]
    for q, v in zip(queries, values):
        lines.append(",".join([_fmt(c) for c in q] + [_fmt(v), args.method]))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"predict: {len(values)} queries method={args.method} -> {args.out}")
    return 0


def cmd_classify(args):
    train = read_table(args.train, args.format)
    if train.labels is None:
        raise DataError(f"{args.train} has no label column")
    cloud = PointCloud(train.points, args.d)
    model = classify_fit(cloud, train.labels, lam=args.lam, k=args.k)
    queries = read_table(args.test, args.format).points
    method = "local_linear" if args.method == "convex" else args.method
    variant = "convex" if args.method == "convex" else "affine"
    labels = classify_predict(model, queries, method=method, variant=variant)
    write_points_csv(args.out, queries, labels=labels)
    print(
        f"classify: {len(labels)} queries classes={len(model.classes)} -> {args.out}"
    )
    return 0


def cmd_embed(args):
    cloud, _ = _load_cloud(args.input, args.format, args.d)
    form = estimate(cloud, k=args.k, policy=args.degenerate, knn_method=args.knn)
    emb = null_embedding(form, args.d, dense_cutoff=args.dense_cutoff)
    write_points_csv(args.coords_out, emb.coords)
    payload = {
        "eigenvalues": [float(v) for v in emb.eigenvalues],
        "nonconstant_eigenvalues": [float(v) for v in emb.nonconstant_eigenvalues],
        "method": emb.method,
        "K": args.k,
        "d": args.d,
    }
    atomic_write_text(args.report_out, json.dumps(payload, indent=2) + "\n")
    print(
        f"embed: N={cloud.n_points} d={args.d} method={emb.method} -> {args.coords_out}"
    )
    return 0


def _add_common(sub, *, needs_k=True):
    sub.add_argument("--format", choices=("csv", "json"), default="csv")
    sub.add_argument("--d", type=int, default=2, help="intrinsic dimension")
    if needs_k:
        sub.add_argument("--k", type=int, default=12, help="neighborhood size")
    sub.add_argument("--knn", choices=("brute", "grid"), default="brute")
    sub.add_argument(
        "--degenerate",
        choices=("skip_point", "fail"),
        default="skip_point",
        help="policy for rank-deficient neighborhoods",
    )
    sub.add_argument("--solver-tolerance", type=float, default=1e-10)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hesspline",
        description="Curvature-penalized smoothing on sampled manifolds",
        epilog="Set HESSPLINE_THREADS to parallelize per-point assembly.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="sample a synthetic manifold")
    gen.add_argument("--manifold", choices=sorted(KINDS), required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--extent", help="parameter rectangle, lo:hi per dim, comma separated")
    gen.add_argument(
        "--response",
        choices=("constant", "linear", "quadratic", "sine"),
        default="constant",
    )
    gen.add_argument("--coeffs", help="comma separated response coefficients")
    gen.add_argument("--sigma", type=float, default=0.0, help="noise level")
    gen.add_argument("--out", default=".", help="output directory")
    gen.set_defaults(func=cmd_gen)

    fit_p = commands.add_parser("fit", help="smooth a response over a point cloud")
    fit_p.add_argument("--in", dest="input", required=True)
    _add_common(fit_p)
    fit_p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    fit_p.add_argument("--trim", type=float, default=0.0, help="neighbor trim fraction")
    fit_p.add_argument("--method", choices=("direct", "cg"), default="direct")
    mode = fit_p.add_mutually_exclusive_group()
    mode.add_argument("--weighted", action="store_true", help="use the file's w column")
    mode.add_argument("--reweight", action="store_true", help="robust reweighting")
    fit_p.add_argument("--rho-scale", default="auto")
    fit_p.add_argument("--max-iter", type=int, default=20)
    fit_p.add_argument("--tol", type=float, default=1e-6)
    fit_p.add_argument("--edf", action="store_true", help="record effective dof")
    fit_p.add_argument("--dump-hessian", help="write penalty nonzeros to this path")
    fit_p.add_argument("--out", default="fit.json")
    fit_p.add_argument("--fitted-csv", default="fitted.csv")
    fit_p.set_defaults(func=cmd_fit)

    cv = commands.add_parser("cv", help="score a lambda grid by leave-one-out")
    cv.add_argument("--in", dest="input", required=True)
    _add_common(cv)
    cv.add_argument("--grid", help="comma separated lambda values (default: auto)")
    cv.add_argument("--method", choices=sorted(_CV_METHODS), default="shortcut")
    cv.add_argument("--out", default="cv.json")
    cv.add_argument("--curve-csv", default="cv_curve.csv")
    cv.set_defaults(func=cmd_cv)

    pred = commands.add_parser("predict", help="evaluate a fit off the training set")
    pred.add_argument("--train", required=True)
    pred.add_argument("--queries", required=True)
    _add_common(pred)
    pred.add_argument("--fit", help="fit JSON to reuse instead of refitting")
    pred.add_argument("--lambda", dest="lam", type=float, default=1.0)
    pred.add_argument(
        "--method",
        choices=("local_tps", "local_linear", "convex"),
        default="local_tps",
    )
    pred.add_argument("--lambda-loc", dest="lambda_loc", type=float, default=None)
    pred.add_argument("--out", default="predictions.csv")
    pred.set_defaults(func=cmd_predict)

    cls = commands.add_parser("classify", help="label queries from a labeled cloud")
    cls.add_argument("--train", required=True)
    cls.add_argument("--test", required=True)
    _add_common(cls)
    cls.add_argument("--lambda", dest="lam", type=float, default=1.0)
    cls.add_argument(
        "--method",
        choices=("local_tps", "local_linear", "convex"),
        default="local_linear",
    )
    cls.add_argument("--out", default="labels.csv")
    cls.set_defaults(func=cmd_classify)

    emb = commands.add_parser("embed", help="recover intrinsic coordinates")
    emb.add_argument("--in", dest="input", required=True)
    _add_common(emb)
    emb.add_argument("--dense-cutoff", type=int, default=4096)
    emb.add_argument("--out", dest="coords_out", default="embedding.csv")
    emb.add_argument("--report", dest="report_out", default="eigenvalues.json")
    emb.set_defaults(func=cmd_embed)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
