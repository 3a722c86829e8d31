"""Per-pattern basis construction and second-order roughness penalties.

For a response pattern the basis consists of a constant, tensor products of
monomials in the observed continuous variables, and (additively) one
indicator per observed binary variable.  Continuous variables are affinely
mapped to [-1, 1] before evaluation for numerical conditioning; roughness is
computed on the original scale via the chain rule.

Roughness of f is the squared semi-norm integrating all second-order mixed
partial derivatives with multinomial weights 2!/(v1!...vd!) over the data
hyper-rectangle; binary variables carry counting measure over their two
levels and contribute no derivatives of their own.  The basis is then
orthogonalized so the roughness Gram matrix becomes diagonal, and the
per-function imbalance tolerances are the square roots of the diagonal
(zero-roughness functions fall back to the smallest positive roughness).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import BINARY, CONTINUOUS, Dataset, DataError, ResponsePattern

__all__ = [
    "BasisSpec",
    "BasisFunction",
    "VarDomain",
    "BasisSet",
    "build_raw_basis",
    "roughness_gram",
    "orthogonalize",
    "tolerance_vector",
    "build_pattern_basis",
    "basis_manifest",
]

# Relative cutoff below which a Gram eigenvalue counts as exactly zero.
ZERO_EIGENVALUE_RTOL = 1e-12


@dataclass(frozen=True)
class BasisSpec:
    """Shape of the per-pattern basis."""

    max_degree: int = 3
    include_binary_indicators: bool = True
    tensor_continuous: bool = True
    additive_binary: bool = True

    def __post_init__(self):
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")


@dataclass(frozen=True)
class VarDomain:
    """One observed variable with its integration domain and affine scale.

    Continuous variables are evaluated in u = (x - center)/halfwidth; binary
    variables have no scale and integrate as a sum over levels {0, 1}.
    """

    index: int
    name: str
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    center: float = 0.0
    halfwidth: float = 1.0


@dataclass(frozen=True)
class BasisFunction:
    """Product of scaled monomials (var index -> power) and at most one indicator."""

    powers: tuple[tuple[int, int], ...] = ()
    indicator: int | None = None

    def describe(self, names: dict[int, str]) -> str:
        parts = [f"{names[v]}^{p}" for v, p in self.powers]
        if self.indicator is not None:
            parts.append(f"1[{names[self.indicator]}=1]")
        return " * ".join(parts) if parts else "1"


@dataclass
class BasisSet:
    """Evaluated, orthogonalized basis for one pattern over a fixed row set."""

    pattern: ResponsePattern
    K: int
    design: np.ndarray          # len(row_ids) x K, orthogonalized
    gram_diag: np.ndarray       # roughness of each orthogonalized function
    transform: np.ndarray       # raw design @ transform == design
    tolerance: np.ndarray       # imbalance tolerance t_k
    descriptors: list[BasisFunction]
    variables: list[VarDomain]
    row_ids: np.ndarray
    n_total: int


def _variable_domains(pattern: ResponsePattern, ds: Dataset,
                      scales: dict[int, tuple[float, float]] | None = None) -> list[VarDomain]:
    out = []
    for j in pattern.observed_indices():
        col = ds.columns[j]
        if col.kind == CONTINUOUS:
            lo, hi = ds.observed_range(j)
            if scales and int(j) in scales:
                center, half = scales[int(j)]
            else:
                center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
            out.append(VarDomain(int(j), col.name, CONTINUOUS, lo, hi,
                                 center, half if half > 0 else 1.0))
        else:
            out.append(VarDomain(int(j), col.name, BINARY))
    return out


def _descriptors(spec: BasisSpec, variables: list[VarDomain]) -> list[BasisFunction]:
    cont = [v.index for v in variables if v.kind == CONTINUOUS]
    binv = [v.index for v in variables if v.kind == BINARY]
    funcs = [BasisFunction()]
    degs = range(spec.max_degree + 1)
    if spec.tensor_continuous:
        for combo in itertools.product(degs, repeat=len(cont)):
            if not any(combo):
                continue  # duplicate of the constant
            funcs.append(BasisFunction(
                powers=tuple((v, p) for v, p in zip(cont, combo) if p > 0)))
    else:
        for v in cont:
            for p in degs:
                if p > 0:
                    funcs.append(BasisFunction(powers=((v, p),)))
    if spec.include_binary_indicators and spec.additive_binary:
        for v in binv:
            funcs.append(BasisFunction(indicator=v))
    return funcs


def build_raw_basis(spec: BasisSpec, pattern: ResponsePattern, ds: Dataset, rows,
                    scales: dict[int, tuple[float, float]] | None = None):
    """Evaluate the raw (pre-orthogonalization) basis at the given rows.

    Only variables observed in `pattern` are read, through the dataset's
    access guard.  Monomials are taken in u = (x - center)/halfwidth; by
    default the map sends the column's observed range to [-1, 1], and
    `scales` overrides it (identity scale gives plain monomials of x).
    Returns (design, descriptors, variables).
    """
    rows = np.asarray(rows, dtype=int)
    variables = _variable_domains(pattern, ds, scales)
    funcs = _descriptors(spec, variables)
    scale = {v.index: (v.center, v.halfwidth) for v in variables if v.kind == CONTINUOUS}

    obs_idx = [v.index for v in variables]
    block = ds.observed(rows, obs_idx) if obs_idx else np.empty((len(rows), 0))
    colpos = {j: k for k, j in enumerate(obs_idx)}

    design = np.empty((len(rows), len(funcs)))
    for k, f in enumerate(funcs):
        col = np.ones(len(rows))
        for v, p in f.powers:
            c, h = scale[v]
            col = col * ((block[:, colpos[v]] - c) / h) ** p
        if f.indicator is not None:
            col = col * (block[:, colpos[f.indicator]] == 1.0)
        design[:, k] = col
    return design, funcs, variables


def _legendre_nodes(lo: float, hi: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    half = (hi - lo) / 2.0
    return lo + half * (x + 1.0), half * w


def _factor_tables(var: VarDomain, powers: list[int], quad_nodes: int):
    """Integrals I[o][p, q] = integral of d^o(u^p)/dx^o * d^o(u^q)/dx^o over the domain."""
    pmax = max(powers) if powers else 0
    nodes, wts = _legendre_nodes(var.lo, var.hi, quad_nodes)
    u = (nodes - var.center) / var.halfwidth
    vals = np.zeros((3, pmax + 1, len(nodes)))
    for p in range(pmax + 1):
        vals[0, p] = u ** p
        if p >= 1:
            vals[1, p] = p * u ** (p - 1) / var.halfwidth
        if p >= 2:
            vals[2, p] = p * (p - 1) * u ** (p - 2) / var.halfwidth ** 2
    tables = []
    for o in range(3):
        tables.append(np.einsum("pn,qn,n->pq", vals[o], vals[o], wts))
    return tables


def roughness_gram(descriptors: list[BasisFunction], variables: list[VarDomain],
                   quad_nodes: int = 20) -> np.ndarray:
    """Gram matrix of the second-order roughness inner product.

    Tensor Gauss-Legendre quadrature with `quad_nodes` points per continuous
    dimension, evaluated factor-by-factor (the integrands are products of
    univariate terms, so the tensor sum collapses exactly to a product of
    one-dimensional quadratures).
    """
    for v in variables:
        if v.kind == CONTINUOUS and not v.hi > v.lo:
            raise DataError(f"empty integration interval for variable {v.name!r}")
    K = len(descriptors)
    cont = [v for v in variables if v.kind == CONTINUOUS]
    binv = [v for v in variables if v.kind == BINARY]

    power_of = np.zeros((K, len(variables)), dtype=int)
    has_ind = np.zeros((K, len(variables)), dtype=bool)
    pos = {v.index: a for a, v in enumerate(variables)}
    for k, f in enumerate(descriptors):
        for v, p in f.powers:
            power_of[k, pos[v]] = p
        if f.indicator is not None:
            has_ind[k, pos[f.indicator]] = True

    tables = {v.index: _factor_tables(v, list(power_of[:, pos[v.index]]), quad_nodes)
              for v in cont}

    # Per-variable order-0 factors for every (i, j) pair, multiplied up once;
    # each derivative placement then swaps in the order-1/2 factor.
    base = np.ones((K, K))
    factor0 = {}
    for v in cont:
        t0 = tables[v.index][0]
        p = power_of[:, pos[v.index]]
        f0 = t0[np.ix_(p, p)]
        factor0[v.index] = f0
        base *= f0
    for v in binv:
        ind = has_ind[:, pos[v.index]]
        # sum over levels {0,1}: indicator pairs hit only level 1
        f0 = np.where(np.outer(~ind, ~ind), 2.0, 1.0)
        factor0[v.index] = f0
        base *= f0

    gram = np.zeros((K, K))
    with np.errstate(divide="ignore", invalid="ignore"):
        for a, va in enumerate(cont):
            pa = power_of[:, pos[va.index]]
            ta = tables[va.index]
            fa2 = ta[2][np.ix_(pa, pa)]
            ratio = np.where(factor0[va.index] != 0, base / factor0[va.index], 0.0)
            gram += ratio * fa2
            fa1 = ta[1][np.ix_(pa, pa)]
            for vb in cont[a + 1:]:
                pb = power_of[:, pos[vb.index]]
                fb1 = tables[vb.index][1][np.ix_(pb, pb)]
                ratio2 = np.where(factor0[vb.index] != 0,
                                  ratio / factor0[vb.index], 0.0)
                gram += 2.0 * ratio2 * fa1 * fb1
    np.nan_to_num(gram, copy=False)
    return (gram + gram.T) / 2.0


def orthogonalize(raw_design: np.ndarray, gram: np.ndarray):
    """Diagonalize the roughness Gram by an eigenvector change of basis.

    Returns (design, gram_diag, transform) with eigenvalues ascending and
    values below the relative zero cutoff clamped to exactly 0.
    """
    if not np.isfinite(gram).all():
        raise ValueError("roughness Gram has non-finite entries")
    eigval, eigvec = np.linalg.eigh((gram + gram.T) / 2.0)
    cutoff = ZERO_EIGENVALUE_RTOL * max(float(eigval[-1]), 1.0)
    eigval = np.where(eigval < cutoff, 0.0, eigval)
    return raw_design @ eigvec, eigval, eigvec


def tolerance_vector(gram_diag: np.ndarray) -> np.ndarray:
    """t_k = sqrt(roughness); zero-roughness entries borrow the smallest
    positive roughness, and an all-zero diagonal falls back to ones."""
    gram_diag = np.asarray(gram_diag, dtype=float)
    if (gram_diag < 0).any():
        raise ValueError("gram_diag must be non-negative")
    positive = gram_diag[gram_diag > 0]
    if positive.size == 0:
        return np.ones_like(gram_diag)
    floor = positive.min()
    return np.sqrt(np.where(gram_diag > 0, gram_diag, floor))


def build_pattern_basis(spec: BasisSpec, pattern: ResponsePattern, ds: Dataset,
                        rows, quad_nodes: int = 20) -> BasisSet:
    """Raw basis -> roughness Gram -> orthogonalize -> tolerances."""
    rows = np.asarray(rows, dtype=int)
    raw, funcs, variables = build_raw_basis(spec, pattern, ds, rows)
    gram = roughness_gram(funcs, variables, quad_nodes=quad_nodes)
    design, gram_diag, transform = orthogonalize(raw, gram)
    tol = tolerance_vector(gram_diag)
    return BasisSet(
        pattern=pattern,
        K=raw.shape[1],
        design=design,
        gram_diag=gram_diag,
        transform=transform,
        tolerance=tol,
        descriptors=funcs,
        variables=variables,
        row_ids=rows,
        n_total=ds.n_rows,
    )


def basis_manifest(basis: BasisSet) -> str:
    """Plain-text description of the raw basis functions and variable scales."""
    names = {v.index: v.name for v in basis.variables}
    lines = [f"pattern {basis.pattern} K={basis.K}"]
    for v in basis.variables:
        if v.kind == CONTINUOUS:
            lines.append(
                f"var {v.name}: continuous domain=[{v.lo:.6g},{v.hi:.6g}] "
                f"scale u=(x-{v.center:.6g})/{v.halfwidth:.6g}")
        else:
            lines.append(f"var {v.name}: binary levels={{0,1}}")
    for k, f in enumerate(basis.descriptors):
        lines.append(f"raw[{k}] = {f.describe(names)}")
    return "\n".join(lines) + "\n"
