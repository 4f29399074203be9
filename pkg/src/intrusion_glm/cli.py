"""Command-line front end.

Commands: fit, jackknife, sweep, cases, simulate, plotdata. Reports are JSON
(canonical) or a flattened ``field,value`` CSV. Exit codes: 0 success,
1 schema/usage/data error, 2 convergence failure (report still written),
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from intrusion_glm.countglm import Family, IRLSOptions, coef_inference, irls_fit, wald_test
from intrusion_glm.dataset import (
    DEFAULT_MARGINALS,
    PredictorSchema,
    SynthConfig,
    encode,
    load_csv,
    simulate,
    summary_statistics,
    write_csv,
)
from intrusion_glm.diagnostics import diagnose, pearson_residuals
from intrusion_glm.errors import IntrusionGLMError
from intrusion_glm.linmodel import condition_number, ols_fit, pc_regression
from intrusion_glm.study import (
    CASE_LABEL_NOTE,
    CASE_LABELS,
    DEFAULT_GAMMA_GRID,
    compare_models,
    gamma_sweep,
    run_cases,
)
from intrusion_glm.validation import jackknife

EXIT_OK = 0
EXIT_SCHEMA = 1
EXIT_CONVERGENCE = 2
EXIT_IO = 3

RUN_STATE = "run_state.json"

FIT_REPORT_FIELDS = (
    "family",
    "gamma",
    "link",
    "nobs",
    "log_likelihood",
    "deviance",
    "pearson_chi2",
    "model_df",
    "residual_df",
    "converged",
    "coefficients",
    "jackknife_coefficients",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- serialization ----------------------------------------------------------


def _clean(obj):
    """Convert numpy scalars/arrays to plain Python; non-finite floats become None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}.{i}")
    else:
        yield prefix, obj


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(out_dir: Path, name: str, report: dict, fmt: str) -> Path:
    report = _clean(report)
    if fmt == "json":
        path = Path(out_dir) / f"{name}.json"
        write_atomic(path, json.dumps(report, indent=2) + "\n")
    else:
        path = Path(out_dir) / f"{name}.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["field", "value"])
        for key, value in _flatten(report):
            writer.writerow([key, _csv_value(value)])
        write_atomic(path, buf.getvalue())
    return path


def _write_tsv(path: Path, header, rows) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                               for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


# --- helpers ----------------------------------------------------------------


def _family(args) -> Family:
    if args.family == "nb2":
        if args.gamma is None:
            raise UsageError("--gamma is required for --family nb2")
        if not args.gamma > 0:
            raise UsageError("--gamma must be > 0")
        return Family.nb2(args.gamma)
    if args.gamma is not None and args.family in ("poisson", "linear", "pc"):
        raise UsageError(f"--gamma does not apply to --family {args.family}")
    if args.family == "poisson":
        return Family.poisson()
    return Family.linear()


def _grid(text: str | None):
    if text is None:
        return list(DEFAULT_GAMMA_GRID)
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise UsageError("--grid is empty")
    try:
        grid = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"--grid must be comma-separated numbers, got {text!r}") from None
    if any(not g > 0 for g in grid):
        raise UsageError("--grid values must be > 0")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("--grid values must be strictly increasing")
    return grid


def _require_input(args):
    if not args.input:
        raise UsageError("--input is required")
    return load_csv(args.input)


def _coef_rows(fit):
    return [
        {"name": r.name, "coefficient": r.coefficient, "std_err": r.std_err,
         "z": r.z, "p_value": r.p_value}
        for r in coef_inference(fit)
    ]


def _jackknife_coef_rows(jk):
    rows = []
    for name, mean, sd, se in zip(jk.column_names, jk.coef_mean, jk.coef_std, jk.coef_se):
        if math.isfinite(se):
            z, p, _ = wald_test(float(mean), float(se))
        else:
            z = p = math.nan
        rows.append({"name": name, "coefficient": mean, "std_err": se, "z": z,
                     "p_value": p, "fold_std": sd})
    return rows


def _save_run_state(out_dir: Path, command: str, fit, jk=None) -> None:
    state = {
        "command": command,
        "family": fit.family.kind,
        "gamma": fit.family.gamma if fit.family.kind == "nb2" else None,
        "residual_df": fit.residual_df,
        "row_ids": list(fit.row_ids),
        "observed": fit.response,
        "fitted": fit.fitted_means,
        "jackknife_predictions": jk.predictions if jk is not None else None,
    }
    write_atomic(Path(out_dir) / RUN_STATE, json.dumps(_clean(state), indent=2) + "\n")


# --- commands ---------------------------------------------------------------


def cmd_fit(args) -> int:
    records = _require_input(args)
    family = _family(args)
    out = Path(args.out)

    if family.kind == "linear":
        X, y = encode(records, PredictorSchema.for_case("full", seib_numeric=True))
        cond = condition_number(X)
        if args.family == "pc":
            fit = pc_regression(X, y, args.variance_target)
            basis = fit.basis
            extra = {
                "components": basis.k,
                "explained_variance_ratio": basis.explained_variance_ratio,
                "original_coefficients": [
                    {"name": n, "coefficient": c}
                    for n, c in zip(fit.original_column_names, fit.original_coefficients)
                ],
            }
        else:
            fit = ols_fit(X, y)
            extra = {}
        report = {
            "family": args.family,
            "link": "identity",
            "nobs": fit.nobs,
            "rss": fit.deviance,
            "model_df": fit.model_df,
            "residual_df": fit.residual_df,
            "condition_number": cond.value,
            "collinear": cond.collinear,
            "negative_fitted_values": int(np.sum(fit.fitted_means < 0)),
            "min_fitted_value": float(np.min(fit.fitted_means)),
            "coefficients": [{"name": n, "coefficient": c}
                             for n, c in zip(fit.column_names, fit.coefficients)],
            **extra,
        }
        write_report(out, "fit_report", report, args.format)
        return EXIT_OK

    X, y = encode(records)
    options = IRLSOptions()
    fit = irls_fit(X, y, family, options)
    jk = jackknife(X, y, family, options, args.n_jobs)
    report = {
        "family": family.kind,
        "gamma": family.gamma if family.kind == "nb2" else None,
        "link": "log",
        "nobs": fit.nobs,
        "log_likelihood": fit.log_likelihood,
        "deviance": fit.deviance,
        "pearson_chi2": fit.pearson_chi2,
        "model_df": fit.model_df,
        "residual_df": fit.residual_df,
        "converged": fit.converged,
        "coefficients": _coef_rows(fit),
        "jackknife_coefficients": _jackknife_coef_rows(jk),
    }
    write_report(out, "fit_report", report, args.format)
    _save_run_state(out, "fit", fit, jk)
    return EXIT_OK if fit.converged else EXIT_CONVERGENCE


def cmd_jackknife(args) -> int:
    records = _require_input(args)
    family = _family(args)
    if family.kind == "linear":
        raise UsageError("jackknife supports --family poisson or nb2")
    X, y = encode(records)
    jk = jackknife(X, y, family, IRLSOptions(), args.n_jobs)
    fit = jk.full_fit
    folds = []
    for f in jk.folds:
        resid = (float(pearson_residuals([y[f.left_out]], [f.prediction], family)[0])
                 if not f.failed else None)
        folds.append({
            "index": f.left_out,
            "row_id": fit.row_ids[f.left_out],
            "observed": y[f.left_out],
            "predicted": f.prediction,
            "pearson_residual": resid,
            "bic": f.bic,
            "converged": f.converged,
            "failed": f.failed,
            "error": f.error,
        })
    report = {
        "family": family.kind,
        "gamma": family.gamma if family.kind == "nb2" else None,
        "nobs": fit.nobs,
        "bic_mean": jk.bic_mean,
        "bic_std": jk.bic_std,
        "dispersion": diagnose(fit).dispersion,
        "converged_fraction": jk.converged_fraction,
        "failed_folds": jk.n_failed,
        "coefficients": [
            {**row, "full_sample": full}
            for row, full in zip(_jackknife_coef_rows(jk), fit.coefficients)
        ],
        "folds": folds,
    }
    out = Path(args.out)
    write_report(out, "jackknife_report", report, args.format)
    _save_run_state(out, "jackknife", fit, jk)
    return EXIT_OK if jk.converged_fraction == 1.0 and fit.converged else EXIT_CONVERGENCE


def cmd_sweep(args) -> int:
    if args.family not in (None, "nb2"):
        raise UsageError("sweep varies the NB2 heterogeneity; use --family nb2")
    grid = _grid(args.grid)
    records = _require_input(args)
    X, y = encode(records)
    rows = gamma_sweep(X, y, grid, IRLSOptions(), args.n_jobs)
    report = {
        "family": "nb2",
        "nobs": len(records),
        "rows": [
            {"gamma": r.gamma, "dispersion": r.dispersion, "bic_mean": r.bic_mean,
             "bic_std": r.bic_std, "converged_fraction": r.converged_fraction,
             "deviance": r.deviance, "residual_df": r.residual_df}
            for r in rows
        ],
    }
    write_report(Path(args.out), "sweep_report", report, args.format)
    return EXIT_OK if all(r.converged_fraction == 1.0 for r in rows) else EXIT_CONVERGENCE


def cmd_cases(args) -> int:
    family_kind = args.family or "nb2"
    if family_kind not in ("poisson", "nb2"):
        raise UsageError("cases supports --family poisson or nb2")
    if family_kind == "nb2":
        if args.grid is not None:
            gammas = _grid(args.grid)
        elif args.gamma is not None:
            if not args.gamma > 0:
                raise UsageError("--gamma must be > 0")
            gammas = [args.gamma]
        else:
            raise UsageError("cases with --family nb2 need --gamma or --grid")
    else:
        if args.gamma is not None or args.grid is not None:
            raise UsageError("--gamma/--grid do not apply to --family poisson")
        gammas = None
    cases = CASE_LABELS
    if args.cases:
        cases = tuple(c.strip() for c in args.cases.split(",") if c.strip())
        if not cases or any(c not in CASE_LABELS for c in cases):
            raise UsageError(f"--cases must be a subset of {','.join(CASE_LABELS)}")
    records = _require_input(args)
    reports = run_cases(records, family_kind, gammas, cases, n_jobs=args.n_jobs)

    blocks = []
    for r in reports:
        test = r.lr_test
        blocks.append({
            "case_label": r.case_label,
            "description": r.description,
            "gamma": r.gamma if r.family.kind == "nb2" else None,
            "excluded_columns": list(r.excluded_columns),
            "log_likelihood": r.log_likelihood,
            "deviance": r.deviance,
            "pearson_chi2": r.pearson_chi2,
            "residual_df": r.residual_df,
            "dispersion": r.dispersion,
            "bic": r.bic,
            "bic_mean": r.bic_mean,
            "bic_std": r.bic_std,
            "n_outliers": r.n_outliers,
            "max_abs_pearson": r.max_abs_pearson,
            "converged": r.converged,
            "lr_test": None if test is None else {
                "statistic": test.statistic, "df": test.df,
                "p_value": test.p_value, "non_nested": test.non_nested,
            },
            "coefficients": [
                {"name": c.name, "coefficient": c.coefficient, "std_err": c.std_err,
                 "p_value": c.p_value, "stars": c.stars}
                for c in r.coefficients
            ],
        })
    ranking = []
    if len(reports) >= 2:
        ranking = [
            {"rank": e.rank, "case_label": e.case_label,
             "gamma": e.gamma if e.family == "nb2" else None,
             "bic_mean": e.bic_mean, "dispersion": e.dispersion,
             "overdispersed": e.overdispersed, "n_outliers": e.n_outliers,
             "near_zero_fraction": e.near_zero_fraction}
            for e in compare_models(reports)
        ]
    report = {
        "family": family_kind,
        "nobs": len(records),
        "note": CASE_LABEL_NOTE,
        "cases": blocks,
        "ranking": ranking,
    }
    write_report(Path(args.out), "cases_report", report, args.format)
    return EXIT_OK if all(r.converged for r in reports) else EXIT_CONVERGENCE


def cmd_simulate(args) -> int:
    if args.m < 2:
        raise UsageError("--m must be >= 2")
    gamma = args.gamma if args.gamma is not None else 0.0
    if gamma < 0:
        raise UsageError("--gamma must be >= 0")
    config = SynthConfig(m=args.m, gamma=gamma, seed=args.seed)
    records = simulate(config)
    path = Path(args.output) if args.output else Path(args.out) / "simulated.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(records, path)

    stats = summary_statistics(records)
    print(f"wrote {len(records)} records to {path}")
    print(f"{'column':<14}{'target mean':>14}{'sample mean':>14}{'target sd':>14}{'sample sd':>14}")
    for name, marginal in DEFAULT_MARGINALS.items():
        if name == "seib":
            continue
        target_sd = getattr(marginal, "sd", math.sqrt(marginal.mean))
        s = stats[name]
        print(f"{name:<14}{marginal.mean:>14.6g}{s['mean']:>14.6g}{target_sd:>14.6g}{s['sd']:>14.6g}")
    shares = stats["seib"]
    targets = DEFAULT_MARGINALS["seib"].probabilities
    print("seib shares   " + "  ".join(
        f"{lvl}: {shares[f'share_{lvl}']:.3f} (target {p:.3f})"
        for lvl, p in zip((1, 3, 10), targets)))
    print(f"intrusions    mean {stats['intrusions']['mean']:.6g}  max {stats['intrusions']['max']:.6g}")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    out = Path(args.out)
    state_path = out / RUN_STATE
    if not state_path.exists():
        raise UsageError(f"no run artifacts in {out}; run fit or jackknife first")
    state = json.loads(state_path.read_text(encoding="utf-8"))
    family = Family.nb2(state["gamma"]) if state["family"] == "nb2" else Family.poisson()
    y = np.array(state["observed"], dtype=float)
    mu = np.array(state["fitted"], dtype=float)
    row_ids = state["row_ids"]
    preds = state["jackknife_predictions"]
    preds = mu if preds is None else np.array([math.nan if p is None else p for p in preds])
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")

    _write_tsv(out / "predictions.tsv", ["index", "row_id", "observed", "predicted"],
               [(i, row_ids[i], y[i], preds[i]) for i in range(len(y))])

    p = pearson_residuals(y, mu, family)
    _write_tsv(out / "pearson_residuals.tsv", ["index", "row_id", "fitted_mean", "pearson_residual"],
               [(i, row_ids[i], mu[i], p[i]) for i in range(len(y))])

    from intrusion_glm.diagnostics import deviance, dispersion, standardized_deviance_residuals
    dev = deviance(family, y, mu).total
    rdf = state["residual_df"]
    phi = dispersion(dev, rdf) if rdf >= 1 else math.nan
    std_d = standardized_deviance_residuals(family, y, mu, phi)
    finite = std_d[np.isfinite(std_d)]
    counts, edges = np.histogram(finite, bins=args.bins)
    _write_tsv(out / "deviance_histogram.tsv", ["bin_left", "bin_right", "count"],
               [(edges[k], edges[k + 1], int(counts[k])) for k in range(len(counts))])

    meta = {
        "source": state["command"],
        "family": family.kind,
        "gamma": state["gamma"],
        "predictions": "jackknife" if state["jackknife_predictions"] is not None else "fitted",
        "pearson_reference_lines": [-2.0, 2.0],
        "outlier_indices": np.flatnonzero(np.abs(p) > 2),
        "dispersion": phi,
        "histogram_bins": args.bins,
    }
    write_atomic(out / "plotdata_meta.json", json.dumps(_clean(meta), indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "jackknife": cmd_jackknife,
    "sweep": cmd_sweep,
    "cases": cmd_cases,
    "simulate": cmd_simulate,
    "plotdata": cmd_plotdata,
}


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--input", help="organization CSV")
    shared.add_argument("--family", choices=("linear", "pc", "poisson", "nb2"))
    shared.add_argument("--gamma", type=float, help="NB2 heterogeneity (simulate: generating value)")
    shared.add_argument("--grid", help="comma-separated increasing gamma values")
    shared.add_argument("--variance-target", type=float, default=0.99)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--out", default=".", help="output directory")
    shared.add_argument("--format", choices=("json", "csv"), default="json")
    shared.add_argument("--n-jobs", type=int, default=1, help="threads for jackknife folds")

    parser = _Parser(prog="intrusion-glm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("fit", parents=[shared], help="fit one model, with jackknifed coefficients")
    sub.add_parser("jackknife", parents=[shared], help="leave-one-out predictions and BIC")
    sub.add_parser("sweep", parents=[shared], help="NB2 heterogeneity sweep")
    p = sub.add_parser("cases", parents=[shared], help="restricted-predictor cases")
    p.add_argument("--cases", help=f"subset of {','.join(CASE_LABELS)}")
    p = sub.add_parser("simulate", parents=[shared], help="write a synthetic dataset")
    p.add_argument("--m", type=int, default=41, help="number of organizations")
    p.add_argument("--output", help="CSV path (default OUT/simulated.csv)")
    p = sub.add_parser("plotdata", parents=[shared], help="plot data from the last fit/jackknife")
    p.add_argument("--bins", type=int, default=10)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.family is None and args.command in ("fit", "jackknife"):
            args.family = "poisson"
        if not 0 < args.variance_target <= 1:
            raise UsageError("--variance-target must be in (0, 1]")
        if args.n_jobs < 1:
            raise UsageError("--n-jobs must be >= 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except IntrusionGLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
