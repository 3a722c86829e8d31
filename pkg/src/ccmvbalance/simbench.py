"""Monte Carlo bench: three CCMV missingness mechanisms and comparator methods.

Covariates X1..X3 are iid standard normal truncated to [-3, 3]; a binary
outcome follows logit P(Y=1|X) = th1 X1 + th2 X2 + th3 X3 + th4 with true
coefficients (1, -1, 1, -2).  Y is always observed; each row lands in one of
four response patterns (1111, 1110, 1101, 1100 over columns y,x1,x2,x3)
drawn with probabilities odds_r / (1 + sum odds), where the per-setting true
log odds are closed-form functions of the shared variables.

Methods: full-data fit, complete-case fit, true-odds weighting, unpenalized
entropy with a linear model, penalized entropy with the tensor basis, and
the tailored-loss pipeline (the only one reporting SEs and intervals).
Replications with a non-converged fit are dropped from summaries and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .basis import BasisFunction, BasisSet, BasisSpec, VarDomain
from .data import BINARY, CONTINUOUS, Column, Dataset, PatternIndex, ResponsePattern, \
    index_patterns, pattern_rows
from .inference import FitResult, assemble_weights, fit_weighted, logistic_psi, \
    solve_weighted_z
from .odds import PenaltyConfig, SolverOptions, fit_penalized
from .tuning import CvGrid

__all__ = [
    "THETA0",
    "COLUMNS",
    "MISSING_MASKS",
    "METHODS",
    "SimSetting",
    "make_setting",
    "pattern_probabilities",
    "Replication",
    "gen_replication",
    "BenchOptions",
    "MethodResult",
    "run_method",
    "MethodSummary",
    "SettingResult",
    "StudyReport",
    "run_study",
    "table1_csv",
    "table2_csv",
]

THETA0 = (1.0, -1.0, 1.0, -2.0)
COLUMNS = ("y", "x1", "x2", "x3")
MISSING_MASKS = ("1110", "1101", "1100")
METHODS = ("full", "complete", "trueweight", "entropy-linear", "entropy-basis",
           "proposed")

X_BOUND = 3.0


def _s1_1110(y, x1, x2, x3):
    return x1 + x2 - y - 0.5


def _s1_1101(y, x1, x2, x3):
    return 0.5 * x1 + x3 - 0.5 * y - 0.3


def _s1_1100(y, x1, x2, x3):
    return 1.5 * x1 - y - 0.4


def _s2_1110(y, x1, x2, x3):
    return (0.2 * (x1 ** 2 - 9.0) * (x1 + 1.5)
            + 0.2 * (x2 ** 2 - 9.0) * (x2 + 1.0)
            + 0.1 * (x1 + 2.0) * (x2 + 2.0) * (x2 - 1.0)
            - 2.0 * y + 3.0)


def _s2_1101(y, x1, x2, x3):
    return (-0.2 * (x1 ** 2 - 9.0) * (x1 + 1.0)
            + 0.2 * (x3 ** 2 - 9.0) * (x3 + 1.5)
            - 2.0 * y)


def _s2_1100(y, x1, x2, x3):
    return -0.2 * (x1 + 2.0) * (x1 + 0.5) * (x1 - 4.0) - 2.0 * y - 1.0


def _s3_1110(y, x1, x2, x3):
    return (0.1 * (x1 ** 2 - 9.0) * (x1 ** 2 - 4.0) * x1
            + 0.1 * (x2 ** 2 - 9.0) * (x2 + 1.0)
            + 0.25 * (x1 + 2.0) * (x2 + 2.0) * (x2 - 1.0)
            - 2.0 * y)


def _s3_1101(y, x1, x2, x3):
    return (0.1 * (x1 ** 2 - 9.0) * (x1 + 1.0)
            + 0.1 * (x3 ** 2 - 9.0) * (x3 ** 2 - 4.0) * x3
            + y * ((x1 + 1.0) * (x3 ** 2 - 4.0) - 2.0))


def _s3_1100(y, x1, x2, x3):
    return ((1.0 - y) * (0.2 * (x1 ** 2 - 9.0) * (x1 ** 2 - 4.0) * x1 - 1.0)
            - y * (0.1 * (x1 ** 2 - 9.0) * (x1 ** 2 - 6.25) * (x1 + 0.5)))


_LOG_ODDS = {
    1: {"1110": _s1_1110, "1101": _s1_1101, "1100": _s1_1100},
    2: {"1110": _s2_1110, "1101": _s2_1101, "1100": _s2_1100},
    3: {"1110": _s3_1110, "1101": _s3_1101, "1100": _s3_1100},
}


@dataclass(frozen=True)
class SimSetting:
    """One missingness mechanism at one sample size."""

    id: int
    n: int
    theta0: tuple[float, ...] = THETA0

    def log_odds(self, mask: str, y, x1, x2, x3):
        return _LOG_ODDS[self.id][mask](np.asarray(y, dtype=float), x1, x2, x3)


def make_setting(setting_id: int, n: int) -> SimSetting:
    if setting_id not in _LOG_ODDS:
        raise ValueError(f"setting id must be one of {sorted(_LOG_ODDS)}, "
                         f"got {setting_id}")
    if n < 1:
        raise ValueError("sample size must be positive")
    return SimSetting(id=setting_id, n=n)


def pattern_probabilities(setting: SimSetting, y, x1, x2, x3) -> np.ndarray:
    """(n, 4) probabilities of patterns (1111, 1110, 1101, 1100) given (Y, X)."""
    odds = np.column_stack(
        [np.exp(setting.log_odds(m, y, x1, x2, x3)) for m in MISSING_MASKS])
    denom = 1.0 + odds.sum(axis=1)
    return np.column_stack([np.ones(len(denom)), odds]) / denom[:, None]


def sample_truncated_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal conditioned on [-3, 3], by rejection."""
    out = rng.standard_normal(size)
    bad = np.abs(out) > X_BOUND
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > X_BOUND
    return out


@dataclass
class Replication:
    """One simulated dataset plus the pre-masking copy for the full-data fit."""

    dataset: Dataset
    full_values: np.ndarray
    setting_id: int
    seed: int


_SIM_COLUMNS = (Column("y", BINARY), Column("x1", CONTINUOUS),
                Column("x2", CONTINUOUS), Column("x3", CONTINUOUS))


def gen_replication(setting: SimSetting, seed: int) -> Replication:
    rng = np.random.default_rng(seed)
    n = setting.n
    x = sample_truncated_normal(rng, (n, 3))
    theta0 = np.asarray(setting.theta0)
    eta = x @ theta0[:3] + theta0[3]
    y = (rng.random(n) < expit(eta)).astype(float)
    probs = pattern_probabilities(setting, y, x[:, 0], x[:, 1], x[:, 2])
    u = rng.random(n)
    pat = (u[:, None] > probs.cumsum(axis=1)).sum(axis=1)  # 0..3
    full = np.column_stack([y, x])
    mask = np.ones((n, 4), dtype=bool)
    mask[pat == 1, 3] = False
    mask[pat == 2, 2] = False
    mask[pat == 3, 2:] = False
    ds = Dataset(_SIM_COLUMNS, full, mask, "y")
    return Replication(dataset=ds, full_values=full, setting_id=setting.id, seed=seed)


@dataclass(frozen=True)
class BenchOptions:
    basis_spec: BasisSpec = BasisSpec()
    grid: CvGrid = CvGrid()
    quad_nodes: int = 20
    solver: SolverOptions = SolverOptions()


@dataclass
class MethodResult:
    method: str
    theta: np.ndarray
    converged: bool
    se: np.ndarray | None = None
    ci95: np.ndarray | None = None
    max_cert_gap: float = float("-inf")
    tuning: list[tuple[str, float, float]] = field(default_factory=list)


def _default_psi():
    # columns (y, x1, x2, x3): predictors x1..x3, intercept last
    return logistic_psi((1, 2, 3), 0)


def _full_dataset(rep: Replication) -> Dataset:
    return Dataset(_SIM_COLUMNS, rep.full_values,
                   np.ones_like(rep.full_values, dtype=bool), "y")


def _linear_basis(pattern: ResponsePattern, ds: Dataset, rows: np.ndarray) -> BasisSet:
    """Intercept plus each shared variable, on its original scale."""
    funcs = [BasisFunction()]
    variables = []
    for j in pattern.observed_indices():
        col = ds.columns[int(j)]
        if col.kind == CONTINUOUS:
            lo, hi = ds.observed_range(int(j))
            variables.append(VarDomain(int(j), col.name, CONTINUOUS, lo, hi, 0.0, 1.0))
            funcs.append(BasisFunction(powers=((int(j), 1),)))
        else:
            variables.append(VarDomain(int(j), col.name, BINARY))
            funcs.append(BasisFunction(indicator=int(j)))
    K = len(funcs)
    block = ds.observed(rows, [v.index for v in variables])
    design = np.empty((len(rows), K))
    design[:, 0] = 1.0
    for k, f in enumerate(funcs[1:], start=1):
        if f.indicator is not None:
            j = [v.index for v in variables].index(f.indicator)
            design[:, k] = block[:, j] == 1.0
        else:
            j = [v.index for v in variables].index(f.powers[0][0])
            design[:, k] = block[:, j]
    return BasisSet(pattern=pattern, K=K, design=design,
                    gram_diag=np.zeros(K), transform=np.eye(K),
                    tolerance=np.ones(K), descriptors=funcs, variables=variables,
                    row_ids=np.asarray(rows, dtype=int), n_total=ds.n_rows)


def _entropy_linear(rep: Replication, opts: BenchOptions) -> MethodResult:
    ds = rep.dataset
    ix = index_patterns(ds)
    psi = _default_psi()
    fits, bases = [], []
    ok = True
    for r in ix.missing_patterns():
        rows = np.sort(np.concatenate([pattern_rows(ix, r), ix.complete_ids]))
        basis = _linear_basis(r, ds, rows)
        in_c = np.isin(basis.row_ids, ix.complete_ids)
        cfg = PenaltyConfig.for_basis(basis, 0.0, 1.0)
        fit = fit_penalized("entropy", basis, in_c, ~in_c, cfg, opts.solver)
        ok &= fit.converged
        fits.append(fit)
        bases.append(basis)
    weights = assemble_weights(fits, ix, bases)
    theta, info = solve_weighted_z(psi, weights, ds)
    return MethodResult(method="entropy-linear", theta=theta,
                        converged=bool(ok and info["converged"]))


def _true_weights(rep: Replication, setting: SimSetting, ix: PatternIndex) -> np.ndarray:
    ds = rep.dataset
    ids = ix.complete_ids
    L = ds.observed(ids, np.arange(ds.n_cols))
    y, x1, x2, x3 = L[:, 0], L[:, 1], L[:, 2], L[:, 3]
    w = np.ones(len(ids))
    for m in MISSING_MASKS:
        w += np.exp(setting.log_odds(m, y, x1, x2, x3))
    return w


def run_method(method: str, rep: Replication, setting: SimSetting,
               opts: BenchOptions = BenchOptions()) -> MethodResult:
    """One estimator on one replication; only 'proposed' reports SEs."""
    psi = _default_psi()
    ds = rep.dataset
    if method == "full":
        ds_full = _full_dataset(rep)
        theta, info = solve_weighted_z(psi, np.ones(ds_full.n_rows), ds_full)
        return MethodResult(method=method, theta=theta, converged=info["converged"])
    if method == "complete":
        ix = index_patterns(ds)
        theta, info = solve_weighted_z(psi, np.ones(len(ix.complete_ids)), ds)
        return MethodResult(method=method, theta=theta, converged=info["converged"])
    if method == "trueweight":
        ix = index_patterns(ds)
        theta, info = solve_weighted_z(psi, _true_weights(rep, setting, ix), ds)
        return MethodResult(method=method, theta=theta, converged=info["converged"])
    if method == "entropy-linear":
        return _entropy_linear(rep, opts)
    if method in ("entropy-basis", "proposed"):
        loss = "tailored" if method == "proposed" else "entropy"
        result = fit_weighted(ds, psi=psi, basis_spec=opts.basis_spec,
                              grid=opts.grid, loss_kind=loss,
                              quad_nodes=opts.quad_nodes, solver=opts.solver)
        return MethodResult(
            method=method, theta=result.theta_hat, converged=result.converged,
            se=result.se if method == "proposed" else None,
            ci95=result.ci95 if method == "proposed" else None,
            max_cert_gap=result.max_cert_gap,
            tuning=[(str(p.pattern), p.lam, p.gamma) for p in result.per_pattern])
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


@dataclass
class MethodSummary:
    method: str
    n_used: int
    dropped: int
    bias: np.ndarray
    mse: np.ndarray
    sd_ratio: np.ndarray | None = None
    coverage: np.ndarray | None = None


@dataclass
class SettingResult:
    setting_id: int
    n: int
    reps: int
    summaries: dict[str, MethodSummary]
    estimates: dict[str, np.ndarray]      # (reps, q), NaN rows for dropped
    ses: dict[str, np.ndarray]
    max_cert_gap: float


@dataclass
class StudyReport:
    master_seed: int
    reps: int
    methods: tuple[str, ...]
    settings: list[SettingResult]
    theta0: tuple[float, ...] = THETA0


def _seed_for_rep(master_seed: int, rep: int) -> tuple[int, int]:
    """Fixed affine offsets: (data seed, CV base seed) for replication `rep`."""
    return master_seed + 1 + rep, master_seed + 100003 + 1000 * rep


def _run_one(args):
    setting_id, n, rep, master_seed, methods, opts = args
    setting = make_setting(setting_id, n)
    data_seed, cv_seed = _seed_for_rep(master_seed, rep)
    replication = gen_replication(setting, data_seed)
    rep_opts = replace(opts, grid=replace(opts.grid, seed=cv_seed))
    out = {}
    for method in methods:
        try:
            out[method] = run_method(method, replication, setting, rep_opts)
        except Exception:
            out[method] = MethodResult(method=method, theta=np.full(4, np.nan),
                                       converged=False)
    return setting_id, rep, out


def run_study(settings, methods, reps: int, master_seed: int,
              parallelism: int = 1, opts: BenchOptions = BenchOptions()) -> StudyReport:
    """Replicate every setting x method; summaries drop non-converged reps.

    Replication r uses data seed master_seed+1+r and CV seed
    master_seed+100003+1000r, so reruns with the same configuration are
    bitwise identical regardless of parallelism.
    """
    if reps < 2:
        raise ValueError("need at least 2 replications")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    tasks = [(s.id, s.n, r, master_seed, methods, opts)
             for s in settings for r in range(reps)]
    if parallelism > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(processes=parallelism) as pool:
            raw = pool.map(_run_one, tasks, chunksize=1)
    else:
        raw = [_run_one(t) for t in tasks]
    by_setting: dict[int, dict[int, dict]] = {}
    for setting_id, rep, out in raw:
        by_setting.setdefault(setting_id, {})[rep] = out

    theta0 = np.asarray(THETA0)
    q = len(theta0)
    setting_results = []
    for s in settings:
        reps_out = by_setting[s.id]
        estimates = {m: np.full((reps, q), np.nan) for m in methods}
        ses = {m: np.full((reps, q), np.nan) for m in methods}
        covers = {m: np.full((reps, q), np.nan) for m in methods}
        max_cert_gap = -np.inf
        for r in range(reps):
            for m, res in reps_out[r].items():
                if not res.converged:
                    continue
                estimates[m][r] = res.theta
                if res.se is not None:
                    ses[m][r] = res.se
                    covers[m][r] = ((res.ci95[:, 0] <= theta0)
                                    & (theta0 <= res.ci95[:, 1]))
                if m in ("proposed",) and np.isfinite(res.max_cert_gap):
                    max_cert_gap = max(max_cert_gap, res.max_cert_gap)
        summaries = {}
        for m in methods:
            used = ~np.isnan(estimates[m][:, 0])
            est = estimates[m][used]
            bias = est.mean(axis=0) - theta0 if used.any() else np.full(q, np.nan)
            mse = ((est - theta0) ** 2).mean(axis=0) if used.any() else np.full(q, np.nan)
            sd_ratio = coverage = None
            if m == "proposed" and used.sum() >= 2:
                mc_sd = est.std(axis=0, ddof=1)
                sd_ratio = ses[m][used].mean(axis=0) / mc_sd
                coverage = covers[m][used].mean(axis=0)
            summaries[m] = MethodSummary(
                method=m, n_used=int(used.sum()), dropped=int(reps - used.sum()),
                bias=bias, mse=mse, sd_ratio=sd_ratio, coverage=coverage)
        setting_results.append(SettingResult(
            setting_id=s.id, n=s.n, reps=reps, summaries=summaries,
            estimates=estimates, ses=ses, max_cert_gap=float(max_cert_gap)))
    return StudyReport(master_seed=master_seed, reps=reps, methods=methods,
                       settings=setting_results)


def _fmt(x) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.12g}"


def table1_csv(report: StudyReport) -> str:
    """Bias/MSE per (setting, method, coordinate), one row per method."""
    q = len(report.theta0)
    head = ["setting", "method", "n", "reps_used", "dropped"]
    head += [f"bias_theta{j + 1}" for j in range(q)]
    head += [f"mse_theta{j + 1}" for j in range(q)]
    lines = [",".join(head)]
    for block in report.settings:
        for m in report.methods:
            s = block.summaries[m]
            row = [str(block.setting_id), m, str(block.n), str(s.n_used),
                   str(s.dropped)]
            row += [_fmt(v) for v in s.bias]
            row += [_fmt(v) for v in s.mse]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def table2_csv(report: StudyReport) -> str:
    """SD-ratio / coverage block for the proposed method."""
    q = len(report.theta0)
    head = ["setting", "n", "reps_used"]
    head += [f"sd_ratio_theta{j + 1}" for j in range(q)]
    head += [f"coverage_theta{j + 1}" for j in range(q)]
    lines = [",".join(head)]
    for block in report.settings:
        s = block.summaries.get("proposed")
        if s is None or s.sd_ratio is None:
            continue
        row = [str(block.setting_id), str(block.n), str(s.n_used)]
        row += [_fmt(v) for v in s.sd_ratio]
        row += [_fmt(v) for v in s.coverage]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
