"""Tuning-parameter selection by stratified K-fold cross-validation.

For one pattern's odds fit, every (lambda, gamma) pair on the grid is
trained on K-1 folds and scored by the unpenalized out-of-sample loss on the
held-out fold.  Folds are stratified over the pattern rows and the complete
rows separately so both groups appear in every split.  Non-converged
training fits score +inf so runaway fits are never selected; ties break
toward more regularization (larger lambda, then larger gamma).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet
from .data import DataError, PatternIndex, ResponsePattern, pattern_rows
from .odds import ENTROPY, TAILORED, OddsFit, PenaltyConfig, SolverOptions, _Problem

__all__ = [
    "DEFAULT_LAMBDAS",
    "DEFAULT_GAMMAS",
    "CvGrid",
    "CvReport",
    "TuningError",
    "make_folds",
    "cross_validate",
    "cv_report_csv",
]

DEFAULT_LAMBDAS = tuple(10.0 ** -k for k in range(11))  # 1, 1e-1, ..., 1e-10
DEFAULT_GAMMAS = (0.0, 0.1, 0.5, 0.9, 1.0)


class TuningError(RuntimeError):
    """Every grid entry failed (no finite cross-validation loss)."""


@dataclass(frozen=True)
class CvGrid:
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if any(l <= 0 for l in self.lambdas):
            raise ValueError("lambdas must be positive")
        if any(not 0 <= g <= 1 for g in self.gammas):
            raise ValueError("gammas must lie in [0, 1]")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass
class CvReport:
    lambdas: tuple[float, ...]
    gammas: tuple[float, ...]
    mean_loss: np.ndarray          # len(lambdas) x len(gammas)
    se: np.ndarray                 # fold-wise standard error of the mean
    chosen: tuple[float, float]    # (lambda, gamma)
    fold_digest: str
    folds: int
    n_nonconverged: int = 0
    max_cert_gap: float = float("-inf")
    fits_total: int = 0


def _stratified_labels(stratum_a: np.ndarray, stratum_b: np.ndarray,
                       folds: int, seed: int, n_total: int) -> np.ndarray:
    """Round-robin fold labels 1..folds after shuffling each stratum; 0 elsewhere."""
    for name, idx in (("pattern", stratum_a), ("complete", stratum_b)):
        if len(idx) < folds:
            raise DataError(
                f"{name} stratum has {len(idx)} rows; needs at least {folds} for "
                f"{folds}-fold cross-validation")
    rng = np.random.default_rng(seed)
    labels = np.zeros(n_total, dtype=int)
    for idx in (stratum_a, stratum_b):
        perm = rng.permutation(idx)
        labels[perm] = np.arange(len(perm)) % folds + 1
    return labels


def make_folds(ix: PatternIndex, r: ResponsePattern, folds: int, seed: int) -> np.ndarray:
    """Fold labels over all dataset rows for the pattern-r odds fit.

    Rows of pattern r and complete rows get labels 1..folds (stratified,
    round-robin after a seeded shuffle); all other rows get 0.
    """
    rows_r = pattern_rows(ix, r)
    if r.is_complete:
        raise DataError("folds are defined for a missing pattern, not the complete one")
    return _stratified_labels(rows_r, ix.complete_ids, folds, seed, ix.n_rows)


def _heldout_value(loss_kind: str, design_test: np.ndarray, pat_test: np.ndarray,
                   alpha: np.ndarray, denom: float) -> float:
    """Unpenalized per-observation loss on a held-out slice only."""
    z = design_test @ alpha
    if loss_kind == TAILORED:
        zc = z[~pat_test]
        if zc.size and zc.max() > 700.0:
            return np.inf
        return float((np.exp(zc).sum() - z[pat_test].sum()) / denom)
    return float((np.logaddexp(0.0, z).sum() - z[pat_test].sum()) / denom)


def cross_validate(loss_kind: str, basis: BasisSet, in_complete, in_pattern,
                   grid: CvGrid) -> CvReport:
    """Score the (lambda, gamma) grid by K-fold out-of-sample loss.

    Training reuses the previous lambda's solution as a warm start along the
    descending lambda path (pure speed-up; the solutions are convex optima).
    Held-out evaluation sees only test-fold rows.
    """
    in_complete = np.asarray(in_complete, dtype=bool)
    in_pattern = np.asarray(in_pattern, dtype=bool)
    n_rows = basis.design.shape[0]
    labels = _stratified_labels(np.flatnonzero(in_pattern),
                                np.flatnonzero(in_complete),
                                grid.folds, grid.seed, n_rows)
    digest = hashlib.sha256(labels.astype(np.int64).tobytes()).hexdigest()

    n_union = int(in_complete.sum() + in_pattern.sum())
    n_lam, n_gam = len(grid.lambdas), len(grid.gammas)
    fold_loss = np.full((n_lam, n_gam, grid.folds), np.inf)
    n_nonconverged = 0
    fits_total = 0
    max_cert_gap = -np.inf

    for f in range(1, grid.folds + 1):
        test = labels == f
        train = (labels != 0) & ~test
        tr_c, tr_p = in_complete & train, in_pattern & train
        n_train = int(train.sum())
        # per-observation scale: the loss denominator tracks the realized
        # training share so lambda means the same thing as in the full fit
        denom_train = basis.n_total * n_train / n_union
        problem = _Problem(basis, tr_c, tr_p, loss_kind, denom=denom_train)
        test_design = basis.design[test]
        pat_test = in_pattern[test]
        denom_test = float(test.sum())
        for j, gamma in enumerate(grid.gammas):
            warm = None
            order = np.argsort([-l for l in grid.lambdas])  # largest lambda first
            for i in order:
                lam = grid.lambdas[i]
                cfg = PenaltyConfig.for_basis(basis, lam, gamma)
                fit = problem.solve(cfg, SolverOptions(alpha0=warm))
                fits_total += 1
                if fit.converged:
                    warm = fit.alpha
                    if loss_kind == TAILORED:
                        max_cert_gap = max(max_cert_gap, fit.cert_gap)
                    fold_loss[i, j, f - 1] = _heldout_value(
                        loss_kind, test_design, pat_test, fit.alpha, denom_test)
                elif fit.diverged:
                    # unboundedness is monotone in lambda (the penalty is
                    # non-negative), so every smaller lambda diverges too
                    remaining = int((np.asarray(grid.lambdas) <= lam).sum())
                    n_nonconverged += remaining
                    fits_total += remaining - 1
                    break
                else:
                    n_nonconverged += 1
                    warm = None

    mean_loss = fold_loss.mean(axis=2)
    with np.errstate(invalid="ignore"):
        se = np.where(np.isfinite(mean_loss),
                      fold_loss.std(axis=2, ddof=1) / np.sqrt(grid.folds), np.inf)

    best_key = None
    chosen = None
    for i, lam in enumerate(grid.lambdas):
        for j, gam in enumerate(grid.gammas):
            if not np.isfinite(mean_loss[i, j]):
                continue
            key = (mean_loss[i, j], -lam, -gam)  # ties -> larger lambda, then gamma
            if best_key is None or key < best_key:
                best_key = key
                chosen = (lam, gam)
    if chosen is None:
        raise TuningError("every (lambda, gamma) grid entry failed to converge")

    return CvReport(
        lambdas=tuple(grid.lambdas),
        gammas=tuple(grid.gammas),
        mean_loss=mean_loss,
        se=se,
        chosen=chosen,
        fold_digest=digest,
        folds=grid.folds,
        n_nonconverged=n_nonconverged,
        max_cert_gap=max_cert_gap,
        fits_total=fits_total,
    )


def cv_report_csv(report: CvReport) -> str:
    lines = ["lambda,gamma,mean_loss,se"]
    for i, lam in enumerate(report.lambdas):
        for j, gam in enumerate(report.gammas):
            lines.append(f"{lam:.6g},{gam:.6g},{report.mean_loss[i, j]:.12g},"
                         f"{report.se[i, j]:.12g}")
    return "\n".join(lines) + "\n"
