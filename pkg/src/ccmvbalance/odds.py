"""Propensity-odds fitting by penalized convex optimization.

For each missing pattern the log odds against the complete pattern are
modeled as a linear expansion over the pattern's basis.  Two losses are
supported: the tailored loss, whose stationarity enforces empirical balance
of every basis function between the pattern rows and the odds-weighted
complete rows, and the entropy loss (logistic negative log-likelihood on the
two-pattern subsample).  The penalty combines a tolerance-weighted l1 term
with a quadratic roughness term:

    loss(alpha) + lambda * [gamma * sum_k t_k |alpha_k|
                            + (1 - gamma) * sum_k d_k alpha_k^2]

and is minimized by accelerated proximal gradient with backtracking line
search and adaptive restart (the quadratic part is folded into the smooth
term, so the proximal step stays a per-coordinate soft threshold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .basis import BasisSet
from .data import ResponsePattern

try:
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap

__all__ = [
    "PenaltyConfig",
    "SolverOptions",
    "OddsFit",
    "OptimizationError",
    "tailored_loss",
    "entropy_loss",
    "imbalance_vector",
    "fit_penalized",
    "kkt_certificate",
    "odds_fit_record",
]

LINPRED_MAX = 700.0  # exp() overflow guard on the linear predictor

TAILORED = "tailored"
ENTROPY = "entropy"


class OptimizationError(RuntimeError):
    """The solver could not produce a finite objective."""


@_njit(cache=True)
def _tl_val(Xc, Xp_sum, qcoef, n, beta):
    z = Xc @ beta
    s = 0.0
    for i in range(z.shape[0]):
        if z[i] > LINPRED_MAX:
            return np.inf
        s += math.exp(z[i])
    lin = 0.0
    quad = 0.0
    for k in range(beta.shape[0]):
        lin += Xp_sum[k] * beta[k]
        quad += qcoef[k] * beta[k] * beta[k]
    return (s - lin) / n + quad


@_njit(cache=True)
def _tl_valgrad(Xc, Xp_sum, qcoef, n, beta):
    z = Xc @ beta
    w = np.empty_like(z)
    s = 0.0
    for i in range(z.shape[0]):
        if z[i] > LINPRED_MAX:
            return np.inf, w  # caller ignores the gradient
        w[i] = math.exp(z[i])
        s += w[i]
    grad = Xc.T @ w
    lin = 0.0
    quad = 0.0
    for k in range(beta.shape[0]):
        lin += Xp_sum[k] * beta[k]
        quad += qcoef[k] * beta[k] * beta[k]
        grad[k] = (grad[k] - Xp_sum[k]) / n + 2.0 * qcoef[k] * beta[k]
    return (s - lin) / n + quad, grad


@_njit(cache=True)
def _en_val(Xu, pat_u, qcoef, n, beta):
    z = Xu @ beta
    s = 0.0
    for i in range(z.shape[0]):
        zi = z[i]
        if zi > 33.0:
            s += zi
        else:
            s += math.log1p(math.exp(zi))
        if pat_u[i]:
            s -= zi
    quad = 0.0
    for k in range(beta.shape[0]):
        quad += qcoef[k] * beta[k] * beta[k]
    return s / n + quad


@_njit(cache=True)
def _en_valgrad(Xu, pat_u, qcoef, n, beta):
    z = Xu @ beta
    r = np.empty_like(z)
    s = 0.0
    for i in range(z.shape[0]):
        zi = z[i]
        if zi > 33.0:
            s += zi
            p = 1.0
        elif zi < -33.0:
            p = math.exp(zi)
            s += p
        else:
            e = math.exp(zi)
            s += math.log1p(e)
            p = e / (1.0 + e)
        if pat_u[i]:
            s -= zi
            r[i] = p - 1.0
        else:
            r[i] = p
    grad = Xu.T @ r
    quad = 0.0
    for k in range(beta.shape[0]):
        quad += qcoef[k] * beta[k] * beta[k]
        grad[k] = grad[k] / n + 2.0 * qcoef[k] * beta[k]
    return s / n + quad, grad


@_njit(cache=True)
def _prox_trial(point, g, step, thr):
    """Soft-thresholded gradient step plus the line-search inner products.

    Returns (z, g.dz, dz.dz) with dz = z - point; thr of zeros reduces the
    proximal map to the identity.
    """
    K = point.shape[0]
    z = np.empty(K)
    gdz = 0.0
    dzdz = 0.0
    for k in range(K):
        v = point[k] - step * g[k]
        t = step * thr[k]
        if v > t:
            zk = v - t
        elif v < -t:
            zk = v + t
        else:
            zk = 0.0
        z[k] = zk
        d = zk - point[k]
        gdz += g[k] * d
        dzdz += d * d
    return z, gdz, dzdz


@dataclass(frozen=True)
class PenaltyConfig:
    """Combined penalty: lam * [gamma * t|alpha|_1-weighted + (1-gamma) quadratic]."""

    lam: float
    gamma: float
    tolerance: np.ndarray
    gram_diag: np.ndarray

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        t = np.asarray(self.tolerance, dtype=float)
        d = np.asarray(self.gram_diag, dtype=float)
        if (t <= 0).any():
            raise ValueError("tolerances must be positive")
        if (d < 0).any():
            raise ValueError("gram_diag must be non-negative")
        object.__setattr__(self, "tolerance", t)
        object.__setattr__(self, "gram_diag", d)

    @classmethod
    def for_basis(cls, basis: BasisSet, lam: float, gamma: float) -> "PenaltyConfig":
        return cls(lam=lam, gamma=gamma, tolerance=basis.tolerance,
                   gram_diag=basis.gram_diag)


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 20000
    kkt_tol: float = 1e-7
    rel_tol: float = 1e-10
    alpha0: np.ndarray | None = None  # warm start (defaults to zeros)
    denom: float | None = None        # loss denominator (defaults to basis.n_total)
    track_history: bool = False       # record accepted objective values


@dataclass
class OddsFit:
    """Fitted coefficients for one pattern's odds model, with diagnostics."""

    pattern: ResponsePattern
    loss_kind: str
    alpha: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    imbalance: np.ndarray
    converged: bool
    diverged: bool = False
    lam: float = 0.0
    gamma: float = 0.0
    cert_gap: float = float("-inf")  # max_k imbalance_k - l1/quad bound_k
    history: list[float] | None = None


def _flags(basis: BasisSet, in_complete, in_pattern):
    c = np.asarray(in_complete, dtype=bool)
    p = np.asarray(in_pattern, dtype=bool)
    if c.shape != (basis.design.shape[0],) or p.shape != c.shape:
        raise ValueError("flag arrays must match the basis rows")
    if (c & p).any():
        raise ValueError("complete and pattern flags must be disjoint")
    return c, p


def tailored_loss(alpha, basis: BasisSet, in_complete, in_pattern,
                  denom: float | None = None, hessian: bool = False):
    """Average tailored loss, its gradient, and optionally its Hessian.

    value = (1/N) sum_i [1{complete} exp(z_i) - 1{pattern} z_i] with
    z = design @ alpha.  If any complete-row predictor exceeds the overflow
    guard the value is +inf with a None gradient (callers backtrack).
    """
    c, p = _flags(basis, in_complete, in_pattern)
    alpha = np.asarray(alpha, dtype=float)
    n = float(denom if denom is not None else basis.n_total)
    zc = basis.design[c] @ alpha
    if zc.size and zc.max() > LINPRED_MAX:
        return (np.inf, None, None) if hessian else (np.inf, None)
    w = np.exp(zc)
    zp_sum = basis.design[p] @ alpha
    value = (w.sum() - zp_sum.sum()) / n
    grad = (basis.design[c].T @ w - basis.design[p].sum(axis=0)) / n
    if hessian:
        hess = (basis.design[c].T * w) @ basis.design[c] / n
        return value, grad, hess
    return value, grad


def entropy_loss(alpha, basis: BasisSet, in_complete, in_pattern,
                 denom: float | None = None):
    """Logistic negative log-likelihood of pattern-vs-complete membership.

    value = (1/N) sum_{i in either} [log(1 + exp(z_i)) - 1{pattern} z_i],
    evaluated stably for any predictor magnitude.
    """
    c, p = _flags(basis, in_complete, in_pattern)
    alpha = np.asarray(alpha, dtype=float)
    n = float(denom if denom is not None else basis.n_total)
    u = c | p
    z = basis.design[u] @ alpha
    pat_u = p[u]
    value = (np.logaddexp(0.0, z).sum() - z[pat_u].sum()) / n
    grad = (basis.design[u].T @ (expit(z) - pat_u)) / n
    return value, grad


def imbalance_vector(alpha, basis: BasisSet, in_complete, in_pattern,
                     denom: float | None = None) -> np.ndarray:
    """Empirical imbalance of each basis function under odds exp(z):

    (1/N) | sum_{pattern} phi_k - sum_{complete} exp(z) phi_k |.
    """
    c, p = _flags(basis, in_complete, in_pattern)
    alpha = np.asarray(alpha, dtype=float)
    n = float(denom if denom is not None else basis.n_total)
    with np.errstate(over="ignore"):
        w = np.exp(basis.design[c] @ alpha)
    lhs = basis.design[p].sum(axis=0)
    rhs = basis.design[c].T @ w
    return np.abs(lhs - rhs) / n


def _kkt_residuals(alpha, grad, cfg: PenaltyConfig) -> np.ndarray:
    """Stationarity violation per coordinate of loss + combined penalty."""
    lam, gamma = cfg.lam, cfg.gamma
    thr = lam * gamma * cfg.tolerance
    quad = 2.0 * lam * (1.0 - gamma) * cfg.gram_diag * alpha
    active = np.abs(grad + quad + thr * np.sign(alpha))
    inactive = np.maximum(0.0, np.abs(grad) - thr)
    return np.where(alpha != 0.0, active, inactive)


class _Problem:
    """Preconditioned view of one penalized odds fit.

    Columns are rescaled to unit root-mean-square over the fit rows; the
    objective is invariant, and all reported quantities (alpha, gradients,
    KKT residuals, imbalance) are mapped back to the original coordinates.
    """

    def __init__(self, basis: BasisSet, in_complete, in_pattern, loss_kind: str,
                 denom: float | None = None):
        if loss_kind not in (TAILORED, ENTROPY):
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        c, p = _flags(basis, in_complete, in_pattern)
        self.basis = basis
        self.loss_kind = loss_kind
        self.in_complete = c
        self.in_pattern = p
        self.n = float(denom if denom is not None else basis.n_total)
        u = c | p
        X = basis.design
        self.Xc_raw = X[c]
        self.Xp_sum_raw = X[p].sum(axis=0)
        self.Xu_raw = X[u]
        self.pat_u = p[u]
        self.n_c = int(c.sum())
        self.n_p = int(p.sum())
        rms2 = (self.Xu_raw ** 2).mean(axis=0) if self.n_c + self.n_p else \
            np.ones(basis.K)
        self.rms2 = np.maximum(rms2, max(rms2.max(initial=0.0), 1.0) * 1e-18)

    def _precondition(self, cfg: PenaltyConfig):
        """Per-config column scaling: alpha = scale * beta.

        The combined smooth curvature per coordinate is ~ rms^2 (loss part)
        plus 2 lam (1-gamma) d_k (quadratic penalty), so scaling by its
        inverse square root keeps the preconditioned Hessian diagonal O(1)
        even when the roughness eigenvalues span many decades.
        """
        scale = 1.0 / np.sqrt(
            self.rms2 + 2.0 * cfg.lam * (1.0 - cfg.gamma) * cfg.gram_diag)
        Xc = self.Xc_raw * scale
        Xu = self.Xu_raw * scale
        Xp_sum = self.Xp_sum_raw * scale
        mat = Xc if self.loss_kind == TAILORED else Xu
        sigma = np.linalg.norm(mat, 2) if min(mat.shape) else 0.0
        curv = 1.0 if self.loss_kind == TAILORED else 0.25
        qcoef = cfg.lam * (1.0 - cfg.gamma) * cfg.gram_diag * scale ** 2
        L0 = max(curv * sigma ** 2 / self.n + 2.0 * qcoef.max(initial=0.0), 1e-12)
        return scale, Xc, Xu, Xp_sum, qcoef, L0

    @staticmethod
    def _smooth_factory(loss_kind, Xc, Xu, Xp_sum, pat_u, qcoef, n):
        # exp overflow yields an inf value, which callers treat as a rejected
        # step; gradients are only requested at finite points
        if HAVE_NUMBA:
            if loss_kind == TAILORED:
                def smooth(beta, need_grad=True):
                    if not need_grad:
                        return _tl_val(Xc, Xp_sum, qcoef, n, beta), None
                    val, grad = _tl_valgrad(Xc, Xp_sum, qcoef, n, beta)
                    return (np.inf, None) if not np.isfinite(val) else (val, grad)
            else:
                def smooth(beta, need_grad=True):
                    if not need_grad:
                        return _en_val(Xu, pat_u, qcoef, n, beta), None
                    return _en_valgrad(Xu, pat_u, qcoef, n, beta)
            return smooth
        if loss_kind == TAILORED:
            def smooth(beta, need_grad=True):
                with np.errstate(over="ignore"):
                    w = np.exp(Xc @ beta)
                val = (w.sum() - Xp_sum @ beta) / n + qcoef @ beta ** 2
                if not need_grad:
                    return val, None
                if not np.isfinite(val):
                    return np.inf, None
                return val, (Xc.T @ w - Xp_sum) / n + 2.0 * qcoef * beta
        else:
            def smooth(beta, need_grad=True):
                z = Xu @ beta
                val = (np.logaddexp(0.0, z).sum() - z[pat_u].sum()) / n \
                    + qcoef @ beta ** 2
                if not need_grad:
                    return val, None
                return val, (Xu.T @ (expit(z) - pat_u)) / n + 2.0 * qcoef * beta
        return smooth

    def loss_grad_alpha(self, alpha, cfg: PenaltyConfig):
        """Unpenalized loss gradient in original coordinates."""
        if self.loss_kind == TAILORED:
            return tailored_loss(alpha, self.basis, self.in_complete,
                                 self.in_pattern, denom=self.n)[1]
        return entropy_loss(alpha, self.basis, self.in_complete,
                            self.in_pattern, denom=self.n)[1]

    def _separated(self, zfit) -> bool:
        """Complete separation of the two groups by the fitted predictor.

        The entropy loss then has no finite minimizer along the separating
        direction and its gradient vanishes as the predictions saturate, so
        a small-gradient stop would silently accept a runaway fit.
        """
        if self.loss_kind != ENTROPY or not self.n_p or not self.n_c:
            return False
        zp, zc = zfit[self.pat_u], zfit[~self.pat_u]
        return zp.min() > 0.0 and zc.max() < 0.0 and np.abs(zfit).max() > 12.0

    def solve(self, cfg: PenaltyConfig, opts: SolverOptions) -> OddsFit:
        K = self.basis.K
        scale, Xc, Xu, Xp_sum, qcoef, L0 = self._precondition(cfg)
        smooth = self._smooth_factory(self.loss_kind, Xc, Xu, Xp_sum,
                                      self.pat_u, qcoef, self.n)
        thr_vec = cfg.lam * cfg.gamma * cfg.tolerance * scale
        use_prox = bool(thr_vec.any())

        def l1(beta):
            return float(thr_vec @ np.abs(beta)) if use_prox else 0.0

        if opts.alpha0 is not None:
            x = np.asarray(opts.alpha0, dtype=float) / scale
        else:
            x = np.zeros(K)
        vx, _ = smooth(x, need_grad=False)
        if not np.isfinite(vx):
            x = np.zeros(K)
            vx, _ = smooth(x, need_grad=False)
        obj_x = vx + l1(x)
        y = x.copy()
        t = 1.0
        step = 1.0 / L0
        step_min = step * 1e-16
        converged = False
        diverged = False
        iterations = 0
        kkt = np.inf
        history = [obj_x] if opts.track_history else None

        def backtrack(point, v_pt, g_pt):
            nonlocal step
            while True:
                if HAVE_NUMBA:
                    z, gdz, dzdz = _prox_trial(point, g_pt, step, thr_vec)
                else:
                    z = point - step * g_pt
                    if use_prox:
                        z = np.sign(z) * np.maximum(np.abs(z) - step * thr_vec, 0.0)
                    dz = z - point
                    gdz, dzdz = g_pt @ dz, dz @ dz
                vz, _ = smooth(z, need_grad=False)
                bound = v_pt + gdz + dzdz / (2.0 * step)
                if np.isfinite(vz) and vz <= bound + 1e-12 * max(1.0, abs(v_pt)):
                    return z, vz
                step *= 0.5
                if step < step_min:
                    return None, np.inf

        def kkt_at(point):
            """Stationarity residual in original coordinates, from the
            preconditioned gradient (grad_alpha = grad_beta / scale)."""
            v_pt, g_pt = smooth(point)
            if g_pt is None:
                return np.inf
            g_loss = (g_pt - 2.0 * qcoef * point) / scale
            return float(_kkt_residuals(scale * point, g_loss, cfg).max(initial=0.0))

        for it in range(1, opts.max_iter + 1):
            iterations = it
            vy, gy = smooth(y)
            if not np.isfinite(vy):
                y = x.copy()
                t = 1.0
                vy, gy = smooth(y)
                if not np.isfinite(vy):
                    raise OptimizationError("non-finite objective after max backtracks")
            z, vz = backtrack(y, vy, gy)
            if z is None:
                break  # step underflow: stalled, report non-converged
            obj_z = vz + l1(z)
            if obj_z > obj_x:
                # adaptive restart: plain proximal step from x is a descent step
                y = x.copy()
                t = 1.0
                vy, gy = smooth(y)
                z, vz = backtrack(y, vy, gy)
                if z is None:
                    break
                obj_z = vz + l1(z)
            rel = abs(obj_x - obj_z) / max(1.0, abs(obj_z))
            x_prev, x, obj_x = x, z, obj_z
            if history is not None:
                history.append(obj_x)
            near_opt = rel < opts.rel_tol
            if near_opt or it % 8 == 0:
                zfit = Xu @ x
                if zfit.size and np.abs(zfit).max() > LINPRED_MAX:
                    diverged = True
                    break
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
            step *= 1.1
            if near_opt:
                kkt = kkt_at(x)
                if kkt < opts.kkt_tol:
                    if self._separated(zfit):
                        diverged = True
                        break
                    converged = True
                    break

        alpha = scale * x
        if not np.isfinite(kkt):
            g = self.loss_grad_alpha(alpha, cfg)
            kkt = float(_kkt_residuals(alpha, g, cfg).max(initial=0.0)) \
                if g is not None else np.inf
        imb = imbalance_vector(alpha, self.basis, self.in_complete,
                               self.in_pattern, denom=self.n)
        bound = cfg.lam * cfg.gamma * cfg.tolerance \
            + 2.0 * cfg.lam * (1.0 - cfg.gamma) * cfg.gram_diag * np.abs(alpha)
        cert_gap = float((imb - bound).max(initial=-np.inf))
        return OddsFit(
            pattern=self.basis.pattern,
            loss_kind=self.loss_kind,
            alpha=alpha,
            objective=float(obj_x),
            iterations=iterations,
            kkt_residual=kkt,
            imbalance=imb,
            converged=converged,
            diverged=diverged,
            lam=cfg.lam,
            gamma=cfg.gamma,
            cert_gap=cert_gap,
            history=history,
        )


def fit_penalized(loss_kind: str, basis: BasisSet, in_complete, in_pattern,
                  cfg: PenaltyConfig, opts: SolverOptions = SolverOptions()) -> OddsFit:
    """Minimize loss + combined penalty for one pattern's odds model."""
    if len(cfg.tolerance) != basis.K or len(cfg.gram_diag) != basis.K:
        raise ValueError("penalty dimensions do not match the basis")
    problem = _Problem(basis, in_complete, in_pattern, loss_kind, denom=opts.denom)
    return problem.solve(cfg, opts)


def kkt_certificate(fit: OddsFit, basis: BasisSet, in_complete, in_pattern,
                    cfg: PenaltyConfig):
    """Per-coordinate stationarity residuals at the fitted coefficients."""
    if fit.loss_kind == TAILORED:
        _, grad = tailored_loss(fit.alpha, basis, in_complete, in_pattern)
    else:
        _, grad = entropy_loss(fit.alpha, basis, in_complete, in_pattern)
    res = _kkt_residuals(fit.alpha, grad, cfg)
    return res, float(res.max(initial=0.0))


def odds_fit_record(fit: OddsFit) -> str:
    """One-fit audit record: pattern mask, tuning, coefficients, diagnostics."""
    lines = [
        f"pattern={fit.pattern} loss={fit.loss_kind} lambda={fit.lam:.6g} "
        f"gamma={fit.gamma:.6g}",
        f"converged={fit.converged} diverged={fit.diverged} "
        f"iterations={fit.iterations} objective={fit.objective:.12g}",
        f"kkt_residual={fit.kkt_residual:.6g} max_imbalance={fit.imbalance.max(initial=0.0):.6g} "
        f"cert_gap={fit.cert_gap:.6g}",
        "alpha=" + ",".join(f"{a:.12g}" for a in fit.alpha),
    ]
    return "\n".join(lines) + "\n"
