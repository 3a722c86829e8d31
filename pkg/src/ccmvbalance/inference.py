"""Weighted Z-estimation and semiparametric sandwich variance.

The fitted per-pattern odds sum (plus the complete pattern's unit odds) into
one weight per complete row.  The parameter solves the weight-summed
estimating equations over complete rows by Newton iteration.  The variance
estimator plugs estimated influence terms into the efficient-influence form:
each row contributes its pattern's projected estimating function, complete
rows additionally carry the odds-weighted projection residuals, and the
weighted mean of the estimating function (which is ~0 at the root) is
subtracted.  Projections u^r are series regressions of the estimating
function on the pattern's own basis over complete rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .basis import BasisSet, BasisSpec, build_pattern_basis
from .data import DataError, Dataset, PatternIndex, ResponsePattern, index_patterns, pattern_rows
from .odds import OddsFit, PenaltyConfig, SolverOptions, fit_penalized
from .tuning import CvGrid, CvReport, cross_validate

__all__ = [
    "EstimatingFunction",
    "logistic_psi",
    "assemble_weights",
    "solve_weighted_z",
    "estimate_u",
    "sandwich_variance",
    "PatternFit",
    "FitResult",
    "fit_weighted",
    "fit_result_csv",
]

Z975 = 1.96  # 95% normal quantile, as reported intervals use


@dataclass(frozen=True)
class EstimatingFunction:
    """Vector estimating function psi_theta(L) with Jacobian in theta.

    `eval(theta, L)` maps an (n, d) block of full rows to (n, q);
    `jac(theta, L)` to (n, q, q).
    """

    q: int
    eval: callable
    jac: callable


def logistic_psi(predictor_idx, outcome_idx: int) -> EstimatingFunction:
    """Score of logistic regression of the outcome on (predictors, intercept).

    theta ordering is (coefficients..., intercept); psi = (y - expit(x.theta)) x.
    """
    predictor_idx = tuple(int(j) for j in predictor_idx)
    q = len(predictor_idx) + 1

    def design(L):
        L = np.atleast_2d(np.asarray(L, dtype=float))
        return np.column_stack([L[:, predictor_idx], np.ones(len(L))])

    def _eval(theta, L):
        X = design(L)
        y = np.atleast_2d(np.asarray(L, dtype=float))[:, outcome_idx]
        return (y - expit(X @ theta))[:, None] * X

    def _jac(theta, L):
        X = design(L)
        p = expit(X @ theta)
        v = -p * (1.0 - p)
        return v[:, None, None] * (X[:, :, None] * X[:, None, :])

    return EstimatingFunction(q=q, eval=_eval, jac=_jac)


def _complete_positions(basis: BasisSet, complete_ids: np.ndarray) -> np.ndarray:
    return np.isin(basis.row_ids, complete_ids)


def assemble_weights(fits: list[OddsFit], ix: PatternIndex,
                     basis_sets: list[BasisSet]) -> np.ndarray:
    """w_i = 1 + sum over missing patterns of exp(basis_i . alpha_r), per complete row."""
    complete_ids = ix.complete_ids
    if complete_ids.size == 0:
        raise DataError("no complete rows to weight")
    fitted = {fit.pattern: (fit, basis) for fit, basis in zip(fits, basis_sets)}
    w = np.ones(len(complete_ids))
    for r in ix.missing_patterns():
        if r not in fitted:
            raise DataError(f"no odds fit supplied for pattern {r}")
        fit, basis = fitted[r]
        sel = _complete_positions(basis, complete_ids)
        if sel.sum() != len(complete_ids):
            raise DataError(f"basis for pattern {r} does not cover all complete rows")
        w = w + np.exp(basis.design[sel] @ fit.alpha)
    return w


def solve_weighted_z(psi: EstimatingFunction, weights: np.ndarray, ds: Dataset,
                     init=None, max_iter: int = 100, tol: float = 1e-10):
    """Newton iteration with step halving on G(theta) = (1/N) sum_c w psi.

    Returns (theta, info) where info has converged / iterations / gnorm.
    """
    complete = np.flatnonzero(ds.mask.all(axis=1))
    if complete.size == 0:
        raise DataError("no complete rows")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (complete.size,):
        raise DataError("weights must align with the complete rows")
    L = ds.observed(complete, np.arange(ds.n_cols))
    n = float(ds.n_rows)
    theta = np.zeros(psi.q) if init is None else np.asarray(init, dtype=float).copy()

    def G(th):
        return (weights[:, None] * psi.eval(th, L)).sum(axis=0) / n

    def J(th):
        return (weights[:, None, None] * psi.jac(th, L)).sum(axis=0) / n

    g = G(theta)
    iterations = 0
    while np.abs(g).max() >= tol and iterations < max_iter:
        iterations += 1
        jac = J(theta)
        if not np.isfinite(jac).all() or np.linalg.cond(jac) > 1e12:
            raise np.linalg.LinAlgError("singular Jacobian in weighted Z-solve")
        delta = np.linalg.solve(jac, -g)
        gnorm = np.linalg.norm(g)
        s = 1.0
        for _ in range(50):
            g_new = G(theta + s * delta)
            if np.isfinite(g_new).all() and np.linalg.norm(g_new) < gnorm:
                theta = theta + s * delta
                g = g_new
                break
            s *= 0.5
        else:
            break  # no descent step found
    converged = bool(np.abs(g).max() < tol)
    return theta, {"converged": converged, "iterations": iterations,
                   "gnorm": float(np.abs(g).max())}


def estimate_u(theta_hat, psi: EstimatingFunction, basis_sets: list[BasisSet],
               ds: Dataset, ix: PatternIndex) -> dict[ResponsePattern, np.ndarray]:
    """Series-regression coefficients of psi on each pattern basis (complete rows).

    Returns {pattern: B} with B of shape (K_r, q); u_r(l) = basis(l) @ B.
    The normal matrix is ridge-stabilized by 1e-8 * trace / K.
    """
    complete_ids = ix.complete_ids
    L = ds.observed(complete_ids, np.arange(ds.n_cols))
    Psi = psi.eval(np.asarray(theta_hat, dtype=float), L)
    out = {}
    for basis in basis_sets:
        if complete_ids.size < basis.K:
            raise DataError(
                f"pattern {basis.pattern}: {complete_ids.size} complete rows "
                f"cannot support {basis.K} basis functions")
        sel = _complete_positions(basis, complete_ids)
        Phi = basis.design[sel]
        Gm = Phi.T @ Phi
        ridge = 1e-8 * np.trace(Gm) / basis.K
        out[basis.pattern] = np.linalg.solve(
            Gm + ridge * np.eye(basis.K), Phi.T @ Psi)
    return out


def sandwich_variance(theta_hat, fits: list[OddsFit], u_coefs, weights,
                      psi: EstimatingFunction, ds: Dataset, ix: PatternIndex,
                      basis_sets: list[BasisSet]):
    """Plug-in influence-function variance of the weighted Z-estimator.

    Returns (cov, se, ci95); cov is already scaled by 1/N.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    n = float(ds.n_rows)
    complete_ids = ix.complete_ids
    L_c = ds.observed(complete_ids, np.arange(ds.n_cols))
    Psi_c = psi.eval(theta_hat, L_c)
    weights = np.asarray(weights, dtype=float)

    p_hat_psi = (weights[:, None] * Psi_c).sum(axis=0) / n
    D_hat = (weights[:, None, None] * psi.jac(theta_hat, L_c)).sum(axis=0) / n
    if not np.isfinite(D_hat).all() or np.linalg.cond(D_hat) > 1e12:
        raise np.linalg.LinAlgError("singular derivative matrix in sandwich variance")

    F = np.zeros((ds.n_rows, psi.q))
    F[complete_ids] = Psi_c  # u for the complete pattern is psi itself
    by_pattern = {fit.pattern: (fit, basis) for fit, basis in zip(fits, basis_sets)}
    for r in ix.missing_patterns():
        fit, basis = by_pattern[r]
        B = u_coefs[r]
        sel_c = _complete_positions(basis, complete_ids)
        Phi_c = basis.design[sel_c]
        odds_c = np.exp(Phi_c @ fit.alpha)
        F[complete_ids] += odds_c[:, None] * (Psi_c - Phi_c @ B)
        rows_r = pattern_rows(ix, r)
        sel_r = np.isin(basis.row_ids, rows_r)
        F[rows_r] = basis.design[sel_r] @ B
    F -= p_hat_psi

    V_hat = F.T @ F / n
    Dinv_V = np.linalg.solve(D_hat, V_hat)
    cov = np.linalg.solve(D_hat, Dinv_V.T).T / n
    cov = (cov + cov.T) / 2.0
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ci95 = np.column_stack([theta_hat - Z975 * se, theta_hat + Z975 * se])
    return cov, se, ci95


@dataclass
class PatternFit:
    pattern: ResponsePattern
    basis: BasisSet
    odds_fit: OddsFit
    cv_report: CvReport | None
    lam: float
    gamma: float


@dataclass
class FitResult:
    theta_hat: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    ci95: np.ndarray
    weights: np.ndarray          # aligned with complete_ids
    complete_ids: np.ndarray
    per_pattern: list[PatternFit]
    newton_iters: int
    converged: bool
    max_cert_gap: float = float("-inf")
    term_names: list[str] | None = None


def fit_weighted(ds: Dataset, psi: EstimatingFunction | None = None,
                 basis_spec: BasisSpec = BasisSpec(), grid: CvGrid = CvGrid(),
                 loss_kind: str = "tailored", quad_nodes: int = 20,
                 solver: SolverOptions = SolverOptions(),
                 theta_init=None) -> FitResult:
    """Full pipeline: per-pattern basis, CV, penalized odds, weights, Z-solve,
    and sandwich variance.

    Per-pattern CV fold seeds derive from grid.seed by rank offset, so a
    single seed reproduces the whole fit.
    """
    ix = index_patterns(ds)
    if not ix.has_complete:
        raise DataError("dataset has no complete rows; the complete pattern is required")

    term_names = None
    if psi is None:
        outcome = ds.outcome_index
        predictors = [j for j in range(ds.n_cols) if j != outcome]
        psi = logistic_psi(predictors, outcome)
        term_names = [ds.columns[j].name for j in predictors] + ["intercept"]

    per_pattern: list[PatternFit] = []
    max_cert_gap = -math.inf
    all_converged = True
    for rank, r in enumerate(ix.missing_patterns()):
        rows_fit = np.sort(np.concatenate([pattern_rows(ix, r), ix.complete_ids]))
        basis = build_pattern_basis(basis_spec, r, ds, rows_fit, quad_nodes=quad_nodes)
        if ix.complete_ids.size < basis.K:
            raise DataError(
                f"pattern {r}: complete rows ({ix.complete_ids.size}) fewer than "
                f"basis functions ({basis.K})")
        in_c = _complete_positions(basis, ix.complete_ids)
        in_p = ~in_c
        pattern_grid = replace(grid, seed=grid.seed + rank)
        report = cross_validate(loss_kind, basis, in_c, in_p, pattern_grid)
        lam, gamma = report.chosen
        fit = fit_penalized(loss_kind, basis, in_c, in_p,
                            PenaltyConfig.for_basis(basis, lam, gamma), solver)
        all_converged &= fit.converged
        if loss_kind == "tailored":
            max_cert_gap = max(max_cert_gap, report.max_cert_gap)
            if fit.converged:
                max_cert_gap = max(max_cert_gap, fit.cert_gap)
        per_pattern.append(PatternFit(pattern=r, basis=basis, odds_fit=fit,
                                      cv_report=report, lam=lam, gamma=gamma))

    fits = [p.odds_fit for p in per_pattern]
    bases = [p.basis for p in per_pattern]
    weights = assemble_weights(fits, ix, bases) if per_pattern else \
        np.ones(len(ix.complete_ids))
    theta, info = solve_weighted_z(psi, weights, ds, init=theta_init)
    u_coefs = estimate_u(theta, psi, bases, ds, ix)
    cov, se, ci95 = sandwich_variance(theta, fits, u_coefs, weights, psi, ds, ix, bases)

    return FitResult(
        theta_hat=theta,
        se=se,
        cov=cov,
        ci95=ci95,
        weights=weights,
        complete_ids=ix.complete_ids,
        per_pattern=per_pattern,
        newton_iters=info["iterations"],
        converged=bool(all_converged and info["converged"]),
        max_cert_gap=max_cert_gap,
        term_names=term_names,
    )


def fit_result_csv(result: FitResult, term_names=None) -> str:
    """Coefficient table: term, coef, se, z, p, ci_lo, ci_hi."""
    names = term_names or result.term_names or \
        [f"theta{j + 1}" for j in range(len(result.theta_hat))]
    lines = ["term,coef,se,z,p,ci_lo,ci_hi"]
    for name, th, se, (lo, hi) in zip(names, result.theta_hat, result.se, result.ci95):
        z = th / se if se > 0 else math.inf
        p = math.erfc(abs(z) / math.sqrt(2.0)) if math.isfinite(z) else 0.0
        lines.append(f"{name},{th:.12g},{se:.12g},{z:.12g},{p:.12g},"
                     f"{lo:.12g},{hi:.12g}")
    return "\n".join(lines) + "\n"
