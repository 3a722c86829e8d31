import numpy as np
import pytest

from ccmvbalance.basis import (
    BasisFunction,
    BasisSpec,
    VarDomain,
    build_pattern_basis,
    build_raw_basis,
    orthogonalize,
    roughness_gram,
    tolerance_vector,
)
from ccmvbalance.data import CONTINUOUS, Column, Dataset, DataError, ResponsePattern


def _xvar(index=0, lo=-3.0, hi=3.0, name="x"):
    return VarDomain(index, name, CONTINUOUS, lo, hi, 0.0, 1.0)  # identity scale


def _mono(*pairs):
    return BasisFunction(powers=tuple(pairs))


class TestRoughness:
    def test_squared_monomial_on_sym_interval(self):
        g = roughness_gram([_mono((0, 2))], [_xvar()], quad_nodes=20)
        assert g[0, 0] == pytest.approx(24.0, rel=1e-10)

    def test_bilinear_mixed_partial(self):
        vs = [_xvar(0, name="x1"), _xvar(1, name="x2")]
        g = roughness_gram([_mono((0, 1), (1, 1))], vs, quad_nodes=20)
        assert g[0, 0] == pytest.approx(72.0, rel=1e-10)

    def test_constant_and_linear_have_zero_rows(self):
        funcs = [BasisFunction(), _mono((0, 1)), _mono((0, 2)), _mono((0, 3))]
        g = roughness_gram(funcs, [_xvar()], quad_nodes=20)
        assert np.allclose(g[0], 0.0) and np.allclose(g[1], 0.0)
        # closed forms: <x^2,x^2> = 24, <x^3,x^3> = int (6x)^2 = 648,
        # <x^2,x^3> = int 2*6x dx = 0 by symmetry
        assert g[2, 2] == pytest.approx(24.0, rel=1e-10)
        assert g[3, 3] == pytest.approx(648.0, rel=1e-10)
        assert g[2, 3] == pytest.approx(0.0, abs=1e-10)

    def test_two_variable_closed_form(self):
        # f = x1^2 x2: d2/dx1^2 = 2 x2, d2/dx1 dx2 = 2 x1, d2/dx2^2 = 0
        # PEN2 = int (2 x2)^2 + 2 int (2 x1)^2 = 4*6*18 + 2*4*18*6 = 1296
        vs = [_xvar(0, name="x1"), _xvar(1, name="x2")]
        g = roughness_gram([_mono((0, 2), (1, 1))], vs, quad_nodes=20)
        assert g[0, 0] == pytest.approx(1296.0, rel=1e-10)

    def test_binary_factor_counts_levels_and_has_no_derivative(self):
        # pattern (binary b, continuous x): PEN2(x^2) integrates over both
        # variables, the indicator-free function summing 2 levels of b
        vs = [VarDomain(0, "b", "binary"), _xvar(1)]
        g = roughness_gram([_mono((1, 2)), BasisFunction(indicator=0)], vs,
                           quad_nodes=20)
        assert g[0, 0] == pytest.approx(48.0, rel=1e-10)  # 2 levels x 24
        assert np.allclose(g[1], 0.0)  # indicators are roughness-free

    def test_empty_interval_rejected(self):
        with pytest.raises(DataError):
            roughness_gram([_mono((0, 2))],
                           [VarDomain(0, "x", CONTINUOUS, 2.0, 2.0, 0.0, 1.0)])

    def test_scaled_monomials_chain_rule(self):
        # u = x/3 on [-3,3]: PEN2(u^2) = int (2/9)^2 dx = 24/81
        var = VarDomain(0, "x", CONTINUOUS, -3, 3, 0.0, 3.0)
        g = roughness_gram([_mono((0, 2))], [var], quad_nodes=20)
        assert g[0, 0] == pytest.approx(24.0 / 81.0, rel=1e-10)


class TestBuildRawBasis:
    def _dataset(self):
        rng = np.random.default_rng(0)
        values = np.column_stack([
            (rng.random(30) < 0.5).astype(float),
            rng.uniform(-3, 3, 30),
            rng.uniform(-3, 3, 30),
        ])
        mask = np.ones((30, 3), dtype=bool)
        return Dataset([Column("y", "binary"), Column("x1", CONTINUOUS),
                        Column("x2", CONTINUOUS)], values, mask, "y")

    def test_two_continuous_degree_three_gives_sixteen(self):
        ds = self._dataset()
        design, funcs, _ = build_raw_basis(
            BasisSpec(), ResponsePattern.from_string("011"), ds, np.arange(30))
        assert design.shape == (30, 16)
        assert funcs[0] == BasisFunction()

    def test_no_observed_variables_gives_constant(self):
        values = np.array([[1.0, 2.0], [0.0, 1.0]])
        ds = Dataset([Column("y", "binary"), Column("x", CONTINUOUS)],
                     values, np.ones((2, 2), bool), "y")
        design, funcs, _ = build_raw_basis(
            BasisSpec(), ResponsePattern.from_string("00"), ds, [0, 1])
        assert design.shape == (2, 1)
        assert np.allclose(design, 1.0)

    def test_binary_plus_continuous_hand_evaluation(self):
        values = np.array([[1.0, 2.0], [0.0, -1.0], [1.0, 0.5]])
        ds = Dataset([Column("y", "binary"), Column("x", CONTINUOUS)],
                     values, np.ones((3, 2), bool), "y")
        design, funcs, _ = build_raw_basis(
            BasisSpec(), ResponsePattern.from_string("11"), ds, [0, 1, 2],
            scales={1: (0.0, 1.0)})  # identity scale: plain monomials
        assert design.shape[1] == 5
        assert design[0].tolist() == [1.0, 2.0, 4.0, 8.0, 1.0]

    def test_conditioning_map_bounds_columns(self):
        ds = self._dataset()
        design, funcs, variables = build_raw_basis(
            BasisSpec(), ResponsePattern.from_string("011"), ds, np.arange(30))
        assert np.abs(design).max() <= 1.0 + 1e-12
        for v in variables:
            lo, hi = ds.observed_range(v.index)
            assert v.center == pytest.approx((lo + hi) / 2)

    def test_masked_read_guard(self):
        values = np.array([[1.0, 2.0], [0.0, np.nan]])
        mask = np.array([[True, True], [True, False]])
        ds = Dataset([Column("y", "binary"), Column("x", CONTINUOUS)],
                     values, mask, "y")
        from ccmvbalance.data import MaskedReadError

        with pytest.raises(MaskedReadError):
            build_raw_basis(BasisSpec(), ResponsePattern.from_string("11"), ds, [0, 1])


class TestOrthogonalize:
    def test_diagonal_gram_passthrough(self):
        gram = np.diag([24.0, 24.0])
        raw = np.random.default_rng(1).normal(size=(12, 2))
        design, diag, transform = orthogonalize(raw, gram)
        assert np.allclose(sorted(diag), [24.0, 24.0])
        assert np.allclose(np.abs(transform), np.eye(2)) or \
            np.allclose(np.abs(transform), np.eye(2)[::-1])

    def test_random_psd_off_diagonal_property(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            K = rng.integers(2, 9)
            A = rng.normal(size=(K, K))
            gram = A @ A.T
            raw = rng.normal(size=(30, K))
            design, diag, transform = orthogonalize(raw, gram)
            M = transform.T @ gram @ transform
            off = np.abs(M - np.diag(np.diag(M))).max()
            assert off <= 1e-8 * max(diag.max(), 1e-30)
            assert (diag >= 0).all()
            assert np.all(np.diff(diag) >= 0)

    def test_span_preservation(self):
        rng = np.random.default_rng(5)
        raw = rng.normal(size=(40, 6))
        A = rng.normal(size=(6, 6))
        design, diag, transform = orthogonalize(raw, A @ A.T)
        for _ in range(5):
            beta = rng.normal(size=6)
            lhs = raw @ beta
            rhs = design @ np.linalg.solve(transform, beta)
            assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            orthogonalize(np.ones((3, 2)), np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestTolerance:
    def test_zero_entries_borrow_smallest_positive(self):
        t = tolerance_vector(np.array([0.0, 0.0, 24.0, 96.0]))
        assert np.allclose(t, [np.sqrt(24), np.sqrt(24), np.sqrt(24), np.sqrt(96)])

    def test_all_zero_falls_back_to_one(self):
        assert tolerance_vector(np.array([0.0])).tolist() == [1.0]

    def test_square_roots(self):
        assert tolerance_vector(np.array([4.0, 9.0])).tolist() == [2.0, 3.0]

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            tolerance_vector(np.array([-1.0, 2.0]))


class TestPatternBasisPipeline:
    def test_combination_roughness_matches_symbolic(self):
        # PEN2 of a random combination via the diagonalized quadratic form
        # must match direct symbolic integration of the mixed second partials
        import sympy as sp

        rng = np.random.default_rng(9)
        values = np.column_stack([
            (rng.random(40) < 0.5).astype(float),
            rng.uniform(-2, 2, 40),
            rng.uniform(-1, 1, 40),
        ])
        ds = Dataset([Column("y", "binary"), Column("x1", CONTINUOUS),
                      Column("x2", CONTINUOUS)], values, np.ones((40, 3), bool), "y")
        basis = build_pattern_basis(BasisSpec(max_degree=2),
                                    ResponsePattern.from_string("011"), ds,
                                    np.arange(40))
        coef = rng.normal(size=basis.K)
        quad_form = float(np.sum(coef ** 2 * basis.gram_diag))

        x1s, x2s = sp.symbols("x1 x2")
        shifted = {}
        for v in basis.variables:
            sym = x1s if v.name == "x1" else x2s
            shifted[v.index] = (sym - v.center) / v.halfwidth
        raw_exprs = []
        for f in basis.descriptors:
            e = sp.Integer(1)
            for var, p in f.powers:
                e *= shifted[var] ** p
            raw_exprs.append(e)
        combined = sum(c * e for c, e in zip(basis.transform @ coef, raw_exprs))
        lo1, hi1 = [v for v in basis.variables if v.name == "x1"][0].lo, \
            [v for v in basis.variables if v.name == "x1"][0].hi
        lo2, hi2 = [v for v in basis.variables if v.name == "x2"][0].lo, \
            [v for v in basis.variables if v.name == "x2"][0].hi
        pen = (sp.integrate(sp.integrate(
            sp.diff(combined, x1s, 2) ** 2
            + 2 * sp.diff(sp.diff(combined, x1s), x2s) ** 2
            + sp.diff(combined, x2s, 2) ** 2,
            (x1s, lo1, hi1)), (x2s, lo2, hi2)))
        assert quad_form == pytest.approx(float(pen), rel=1e-8, abs=1e-10)

    def test_nonnegative_roughness_of_combinations(self):
        rng = np.random.default_rng(2)
        values = np.column_stack([(rng.random(30) < 0.5).astype(float),
                                  rng.uniform(-3, 3, 30)])
        ds = Dataset([Column("y", "binary"), Column("x1", CONTINUOUS)],
                     values, np.ones((30, 2), bool), "y")
        basis = build_pattern_basis(BasisSpec(), ResponsePattern.from_string("11"),
                                    ds, np.arange(30))
        assert (basis.gram_diag >= 0).all()
        assert (basis.tolerance > 0).all()
        assert basis.K == 5
