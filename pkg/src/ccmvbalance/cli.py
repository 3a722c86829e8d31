"""Command-line interface: fit a CSV, run the simulation bench, merge reports.

Options resolve in three layers: built-in defaults, then a key=value config
file (--config), then explicit flags, which win.  All randomness flows from
--seed; a manifest echoing the resolved options is written next to every
output so a run can be reproduced bit for bit.

Exit codes: 0 success, 1 usage or data error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisSpec, basis_manifest
from .data import DataError, parse_dataset
from .inference import fit_result_csv, fit_weighted, logistic_psi
from .odds import OptimizationError, odds_fit_record
from .simbench import BenchOptions, METHODS, make_setting, run_study, table1_csv, \
    table2_csv
from .tuning import DEFAULT_GAMMAS, DEFAULT_LAMBDAS, CvGrid, TuningError, cv_report_csv

USAGE_EXIT = 1
NONCONVERGED_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip() != "")


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip() != "")


def read_config(path: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# option name -> (parser from string, default); None default means required
_OPTION_TYPES = {
    "input": (str, None),
    "outcome": (str, None),
    "predictors": (_str_list, ()),
    "degree": (int, 3),
    "folds": (int, 5),
    "lambda_grid": (_float_list, DEFAULT_LAMBDAS),
    "gamma_grid": (_float_list, DEFAULT_GAMMAS),
    "seed": (int, 0),
    "reps": (int, 200),
    "n": (int, 1000),
    "setting": (int, 1),
    "methods": (_str_list, METHODS),
    "out": (str, "."),
    "parallelism": (int, 1),
}


def _resolve(args: argparse.Namespace, names: list[str]) -> dict:
    """Layer config-file values under explicit flags."""
    config = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(config) - set(_OPTION_TYPES)
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for name in names:
        cli_value = getattr(args, name, None)
        if cli_value is not None:
            resolved[name] = cli_value
        elif name in config:
            parser, _ = _OPTION_TYPES[name]
            resolved[name] = parser(config[name])
        else:
            resolved[name] = _OPTION_TYPES[name][1]
    return resolved


def _manifest_text(command: str, options: dict, extra: dict | None = None) -> str:
    lines = [f"artifact=ccmvbalance {__version__}", f"command={command}"]
    for key in sorted(options):
        value = options[key]
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    for key in sorted(extra or {}):
        lines.append(f"{key}={(extra or {})[key]}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_fit(args) -> int:
    opt = _resolve(args, ["input", "outcome", "predictors", "degree", "folds",
                          "lambda_grid", "gamma_grid", "seed", "out"])
    if not opt["input"] or not opt["outcome"]:
        print("fit requires --input and --outcome", file=sys.stderr)
        return USAGE_EXIT
    try:
        ds = parse_dataset(Path(opt["input"]).read_bytes(), opt["outcome"])
    except FileNotFoundError:
        print(f"input file not found: {opt['input']}", file=sys.stderr)
        return USAGE_EXIT
    predictors = opt["predictors"] or tuple(
        name for name in ds.column_names if name != opt["outcome"])
    pred_idx = tuple(ds.column_index(name) for name in predictors)
    psi = logistic_psi(pred_idx, ds.outcome_index)
    grid = CvGrid(lambdas=opt["lambda_grid"], gammas=opt["gamma_grid"],
                  folds=opt["folds"], seed=opt["seed"])
    result = fit_weighted(ds, psi=psi, basis_spec=BasisSpec(max_degree=opt["degree"]),
                          grid=grid)

    outdir = Path(opt["out"])
    names = list(predictors) + ["intercept"]
    _write(outdir / "coefficients.csv", fit_result_csv(result, term_names=names))
    wlines = ["row,weight"] + [f"{int(i)},{w:.12g}" for i, w in
                               zip(result.complete_ids, result.weights)]
    _write(outdir / "weights.csv", "\n".join(wlines) + "\n")

    tuning = [f"patterns={len(result.per_pattern)}"]
    for p in result.per_pattern:
        tuning.append("")
        tuning.append(f"[pattern {p.pattern}]")
        tuning.append(f"chosen_lambda={p.lam:.6g}")
        tuning.append(f"chosen_gamma={p.gamma:.6g}")
        if p.cv_report is not None:
            tuning.append(f"cv_folds={p.cv_report.folds}")
            tuning.append(f"cv_fold_digest={p.cv_report.fold_digest}")
            tuning.append(f"cv_nonconverged={p.cv_report.n_nonconverged}")
            _write(outdir / f"cv_{p.pattern}.csv", cv_report_csv(p.cv_report))
        tuning.append(odds_fit_record(p.odds_fit).rstrip("\n"))
        tuning.append(basis_manifest(p.basis).rstrip("\n"))
    _write(outdir / "tuning.txt", "\n".join(tuning) + "\n")
    _write(outdir / "manifest.txt",
           _manifest_text("fit", opt, {
               "predictors_resolved": ",".join(predictors),
               "n_rows": ds.n_rows,
               "converged": result.converged,
               "newton_iters": result.newton_iters,
           }))
    print(f"wrote {outdir / 'coefficients.csv'}")
    return 0 if result.converged else NONCONVERGED_EXIT


def cmd_simulate(args) -> int:
    opt = _resolve(args, ["setting", "reps", "n", "seed", "methods", "degree",
                          "folds", "lambda_grid", "gamma_grid", "out", "parallelism"])
    if opt["setting"] not in (1, 2, 3):
        print(f"invalid setting id {opt['setting']}; choose 1, 2, or 3",
              file=sys.stderr)
        return USAGE_EXIT
    bad = [m for m in opt["methods"] if m not in METHODS]
    if bad:
        print(f"unknown methods {bad}; choose from {METHODS}", file=sys.stderr)
        return USAGE_EXIT
    setting = make_setting(opt["setting"], opt["n"])
    bench = BenchOptions(
        basis_spec=BasisSpec(max_degree=opt["degree"]),
        grid=CvGrid(lambdas=opt["lambda_grid"], gammas=opt["gamma_grid"],
                    folds=opt["folds"]))
    report = run_study([setting], opt["methods"], opt["reps"], opt["seed"],
                       parallelism=opt["parallelism"], opts=bench)
    outdir = Path(opt["out"])
    _write(outdir / "table1.csv", table1_csv(report))
    _write(outdir / "table2.csv", table2_csv(report))
    block = report.settings[0]
    dropped = {f"dropped_{m}": block.summaries[m].dropped for m in opt["methods"]}
    _write(outdir / "manifest.txt",
           _manifest_text("simulate", opt, {
               "theta0": ",".join(str(v) for v in report.theta0),
               "seed_scheme": "data=seed+1+rep; cv=seed+100003+1000*rep+pattern_rank",
               "max_cert_gap": f"{block.max_cert_gap:.6g}",
               **dropped,
           }))
    print(f"wrote {outdir / 'table1.csv'}")
    return 0


def _read_table(path: str) -> tuple[list[str], list[dict]]:
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    rows = list(reader)
    header = reader.fieldnames or []
    required = {"setting", "method"}
    if not required <= set(header) or not rows:
        raise DataError(f"{path}: not a study report (columns {header})")
    for row in rows:
        if any(v is None for v in row.values()):
            raise DataError(f"{path}: ragged row {row}")
    return header, rows


def cmd_summarize(args) -> int:
    paths = args.reports
    header = None
    rows = []
    for path in paths:
        h, r = _read_table(path)
        if header is None:
            header = h
        elif h != header:
            raise DataError(f"{path}: schema mismatch with {paths[0]}")
        rows.extend(r)
    value_cols = [c for c in header if c.startswith(("bias_", "mse_"))]
    full = {}
    for row in rows:
        if row["method"] == "full":
            full[row["setting"]] = row
    out_header = header + [f"delta_{c}" for c in value_cols]
    lines = [",".join(out_header)]
    for row in rows:
        extras = []
        base = full.get(row["setting"])
        for c in value_cols:
            if base is None:
                extras.append("")
            else:
                try:
                    extras.append(f"{float(row[c]) - float(base[c]):.12g}")
                except ValueError:
                    extras.append("nan")
        lines.append(",".join([row[c] for c in header] + extras))
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ccmvbalance",
                     description="Balancing-weight estimation for non-monotone "
                                 "missing data under CCMV")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a CSV dataset")
    fit.add_argument("--input")
    fit.add_argument("--outcome")
    fit.add_argument("--predictors", type=_str_list)
    fit.add_argument("--degree", type=int)
    fit.add_argument("--folds", type=int)
    fit.add_argument("--lambda-grid", dest="lambda_grid", type=_float_list)
    fit.add_argument("--gamma-grid", dest="gamma_grid", type=_float_list)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--out")
    fit.add_argument("--config")
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run the Monte Carlo bench")
    sim.add_argument("--setting", type=int)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--n", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--methods", type=_str_list)
    sim.add_argument("--degree", type=int)
    sim.add_argument("--folds", type=int)
    sim.add_argument("--lambda-grid", dest="lambda_grid", type=_float_list)
    sim.add_argument("--gamma-grid", dest="gamma_grid", type=_float_list)
    sim.add_argument("--out")
    sim.add_argument("--parallelism", type=int)
    sim.add_argument("--config")
    sim.set_defaults(func=cmd_simulate)

    summ = sub.add_parser("summarize", help="merge study reports")
    summ.add_argument("reports", nargs="+")
    summ.add_argument("--out")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, TuningError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (OptimizationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NONCONVERGED_EXIT


if __name__ == "__main__":
    sys.exit(main())
