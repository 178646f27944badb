"""Cost-function variants, conjugates and admissibility diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from driftlab.generators import (
    IndicatorInterval,
    PowerLaw,
    Quadratic,
    Tabulated,
    TimeModulated,
    check_ti,
    conjugate,
    discrete_legendre,
    domain_interval,
    eval_g,
    eval_g_prime,
    eval_gstar,
    eval_gstar_halfline,
    gstar_lipschitz,
    spec_from_config,
    spec_to_config,
    tabulated_from_csv,
)


def brute_force_conjugate(spec, z, qlo=-60.0, qhi=60.0, n=2_000_001):
    """Independent conjugate oracle: dense grid maximization of qz - g(q)."""
    q = np.linspace(qlo, qhi, n)
    vals = q * z - np.asarray(eval_g(spec, 0.0, q))
    return float(np.max(vals[np.isfinite(vals)]))


class TestEvalG:
    def test_quadratic_value(self):
        assert eval_g(Quadratic(c=1.0), 0.3, 2.0) == 2.0

    def test_indicator_outside(self):
        assert eval_g(IndicatorInterval(K=1.0), 0.0, 1.5) == math.inf
        assert eval_g(IndicatorInterval(K=1.0), 0.0, -0.25) == 0.0

    def test_powerlaw_time_integral_matches_closed_form(self):
        # integral over (1/n, 1] of g(t^{-3/4}) for g = |q|^{5/4} equals
        # 16 (1 - n^{-1/16}); the integrand is t^{-15/16}
        g = PowerLaw(r=1.25, a=1.0)
        for n in (4, 16):
            val, _ = quad(lambda t: eval_g(g, t, t ** (-0.75)), 1.0 / n, 1.0)
            expected = 16.0 * (1.0 - n ** (-1.0 / 16.0))
            assert val == pytest.approx(expected, abs=1e-8)
            assert val <= 16.0

    def test_tabulated_outside_domain(self):
        tab = Tabulated(q=(-1.0, 0.0, 1.0), g=(1.0, 0.0, 1.0))
        assert eval_g(tab, 0.0, 2.0) == math.inf
        assert eval_g(tab, 0.0, 0.5) == pytest.approx(0.5)

    def test_time_modulated(self):
        g = TimeModulated(base=Quadratic(1.0), weights=(1.0, 3.0))
        assert eval_g(g, 0.0, 2.0) == pytest.approx(2.0)
        assert eval_g(g, 1.0, 2.0) == pytest.approx(6.0)
        assert eval_g(g, 0.5, 2.0) == pytest.approx(4.0)

    def test_lower_bound_respected(self):
        for spec in (Quadratic(2.0), PowerLaw(1.5), IndicatorInterval(3.0)):
            q = np.linspace(-5, 5, 101)
            assert np.all(np.asarray(eval_g(spec, 0.1, q)) >= 0.0)


class TestConjugate:
    def test_quadratic_self_dual(self):
        conj = conjugate(Quadratic(c=1.0))
        z = np.linspace(-4, 4, 41)
        np.testing.assert_allclose(eval_gstar(conj, 0.0, z), 0.5 * z * z)

    def test_quadratic_curvature_inverts_exactly(self):
        for c in (0.5, 1.0, 2.5):
            conj = conjugate(Quadratic(c=c))
            for z in (-3.0, 0.7, 2.0):
                assert eval_gstar(conj, 0.0, z) == z * z / (2.0 * c)

    def test_indicator_support_function(self):
        conj = conjugate(IndicatorInterval(K=1.0))
        z = np.array([-2.0, -0.5, 0.0, 3.0])
        np.testing.assert_allclose(eval_gstar(conj, 0.0, z), np.abs(z))

    def test_powerlaw_against_grid_search(self):
        spec = PowerLaw(r=1.5, a=2.0 / 3.0)
        conj = conjugate(spec)
        for z in (0.5, 1.0, 2.0):
            oracle = brute_force_conjugate(spec, z)
            assert eval_gstar(conj, 0.0, z) == pytest.approx(oracle, abs=1e-6)

    def test_powerlaw_dual_exponent(self):
        spec = PowerLaw(r=1.25, a=1.0)
        conj = conjugate(spec)
        # dual exponent r' with 1/r + 1/r' = 1
        assert conj.kind.rp == pytest.approx(5.0)

    def test_tabulated_conjugate_matches_quadratic(self):
        q = np.arange(-5.0, 5.0 + 1e-9, 1e-3)
        tab = Tabulated(q=tuple(q), g=tuple(0.5 * q * q))
        conj = conjugate(tab)
        assert eval_gstar(conj, 0.0, 1.0) == pytest.approx(0.5, abs=1e-3)

    def test_modulated_identity(self):
        # (w g)*(z) = w g*(z / w), checked against grid search at fixed t
        base = Quadratic(1.0)
        g = TimeModulated(base=base, weights=(2.0, 2.0))
        conj = conjugate(g)
        spec_frozen = Quadratic(2.0)  # w = 2 constant
        for z in (-1.0, 0.5, 3.0):
            oracle = brute_force_conjugate(spec_frozen, z)
            assert eval_gstar(conj, 0.37, z) == pytest.approx(oracle, abs=1e-6)

    def test_rejects_nonconvex_table(self):
        with pytest.raises(ValueError, match="convex"):
            Tabulated(q=(-1.0, 0.0, 1.0), g=(0.0, 1.0, 0.0))


class TestHalfline:
    def test_symmetric_halflines_recombine(self):
        for spec in (Quadratic(1.0), PowerLaw(1.5, 0.7), IndicatorInterval(2.0)):
            conj = conjugate(spec)
            z = np.linspace(-3, 3, 25)
            full = np.asarray(eval_gstar(conj, 0.0, z))
            plus = np.asarray(eval_gstar_halfline(conj, 0.0, z, +1))
            minus = np.asarray(eval_gstar_halfline(conj, 0.0, z, -1))
            np.testing.assert_allclose(np.maximum(plus, minus), full, atol=1e-12)

    def test_halfline_against_constrained_grid(self):
        spec = PowerLaw(r=1.5, a=1.0)
        conj = conjugate(spec)
        q = np.linspace(0.0, 50.0, 1_000_001)
        for z in (-1.0, 0.3, 2.0):
            oracle = float(np.max(q * z - eval_g(spec, 0.0, q)))
            assert eval_gstar_halfline(conj, 0.0, z, +1) == pytest.approx(oracle, abs=1e-6)

    def test_table_halfline_monotone(self):
        q = np.linspace(-2.0, 2.0, 401)
        tab = Tabulated(q=tuple(q), g=tuple(np.abs(q) ** 1.5))
        conj = conjugate(tab)
        z = np.linspace(-3, 3, 61)
        plus = np.asarray(eval_gstar_halfline(conj, 0.0, z, +1))
        minus = np.asarray(eval_gstar_halfline(conj, 0.0, z, -1))
        assert np.all(np.diff(plus) >= -1e-12)
        assert np.all(np.diff(minus) <= 1e-12)


class TestDiscreteLegendre:
    def test_quadratic_samples(self):
        q = np.arange(-5.0, 5.0 + 1e-9, 1e-3)
        samples = list(zip(q, 0.5 * q * q))
        out = discrete_legendre(samples, [1.0])
        assert out[0] == pytest.approx(0.5, abs=1e-3)

    def test_single_sample_point_indicator(self):
        out = discrete_legendre([(0.0, 0.0)], [-3.0, 0.0, 7.0])
        np.testing.assert_allclose(out, 0.0)

    def test_matches_quadratic_time_double_loop(self):
        q = np.linspace(-10.0, 10.0, 2001)
        g = np.abs(q) ** 1.25
        samples = list(zip(q, g))
        z_grid = np.array([2.0, -1.3, 0.0, 5.5])
        fast = discrete_legendre(samples, z_grid)
        slow = np.array([max(qj * z - gj for qj, gj in samples) for z in z_grid])
        np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            discrete_legendre([], [0.0])
        with pytest.raises(ValueError, match="empty"):
            discrete_legendre([(0.0, 0.0)], [])
        with pytest.raises(ValueError, match="convex"):
            discrete_legendre([(-1.0, 0.0), (0.0, 1.0), (1.0, 0.0)], [0.0])

    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(st.floats(-8, 8), min_size=3, max_size=12, unique=True),
        st.floats(-5, 5),
    )
    def test_double_conjugation_recovers_convex_table(self, qs, z0):
        # conjugating twice reproduces a convex sample set within resolution
        q = np.sort(np.asarray(qs))
        g = 0.7 * q * q + 0.1 * np.abs(q)
        samples = list(zip(q, g))
        z_grid = np.linspace(-25, 25, 4001)
        gstar = discrete_legendre(samples, z_grid)
        back = discrete_legendre(list(zip(z_grid, gstar)), q)
        np.testing.assert_allclose(back, g, atol=2e-2)


class TestFenchelYoung:
    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_inequality_quadratic(self, q, z):
        spec = Quadratic(1.3)
        conj = conjugate(spec)
        lhs = eval_g(spec, 0.0, q) + eval_gstar(conj, 0.0, z)
        assert lhs >= q * z - 1e-10

    def test_equality_at_subgradient(self):
        for spec in (Quadratic(0.8), PowerLaw(1.5, 0.5), PowerLaw(3.0, 2.0)):
            conj = conjugate(spec)
            for q in (-2.0, -0.3, 0.5, 1.7):
                z = eval_g_prime(spec, 0.0, q)
                lhs = eval_g(spec, 0.0, q) + eval_gstar(conj, 0.0, z)
                assert lhs == pytest.approx(q * z, abs=1e-8)

    def test_inequality_with_infinite_values(self):
        spec = IndicatorInterval(1.0)
        conj = conjugate(spec)
        for q in (-0.9, 0.0, 0.4):
            for z in (-2.0, 1.0):
                assert eval_g(spec, 0.0, q) + eval_gstar(conj, 0.0, z) >= q * z - 1e-12


class TestCheckTi:
    def test_quadratic_all_pass(self):
        report = check_ti(Quadratic(1.0))
        assert report.passed, str(report)

    def test_linear_table_fails_coercivity(self):
        q = np.linspace(-2.0 ** 20, 2.0 ** 20, 4097)
        tab = Tabulated(q=tuple(q), g=tuple(np.abs(q)))
        report = check_ti(tab)
        assert not report.clauses["coercivity"][0]
        assert report.clauses["convexity"][0]

    def test_indicator_passes(self):
        report = check_ti(IndicatorInterval(2.0))
        assert report.passed, str(report)

    def test_powerlaw_table_passes_coercivity(self):
        q = np.linspace(-(2.0 ** 20), 2.0 ** 20, 8193)
        tab = Tabulated(q=tuple(q), g=tuple(np.abs(q) ** 1.25))
        report = check_ti(tab)
        assert report.clauses["coercivity"][0]


class TestLipschitzBound:
    def test_quadratic(self):
        conj = conjugate(Quadratic(2.0))
        assert gstar_lipschitz(conj, 4.0) == pytest.approx(2.0)

    def test_bound_dominates_finite_differences(self):
        for spec in (Quadratic(1.0), PowerLaw(1.5, 1.0), IndicatorInterval(1.0)):
            conj = conjugate(spec)
            z = np.linspace(-3, 3, 601)
            vals = np.asarray(eval_gstar(conj, 0.0, z))
            slopes = np.abs(np.diff(vals) / np.diff(z))
            assert slopes.max() <= gstar_lipschitz(conj, 3.0) + 1e-9


class TestSerialization:
    def test_round_trip(self):
        specs = [
            Quadratic(2.0),
            PowerLaw(1.25, 0.5),
            IndicatorInterval(1.5),
            TimeModulated(base=Quadratic(1.0), weights=(1.0, 2.0, 1.0)),
            Tabulated(q=(-1.0, 0.0, 1.0), g=(1.0, 0.0, 1.0)),
        ]
        for spec in specs:
            assert spec_from_config(spec_to_config(spec)) == spec

    def test_tabulated_csv(self, tmp_path):
        path = tmp_path / "table.csv"
        path.write_text("# q, g\n-1.0,1.0\n0.0,0.0\n1.0,1.0\n")
        tab = tabulated_from_csv(path)
        assert tab == Tabulated(q=(-1.0, 0.0, 1.0), g=(1.0, 0.0, 1.0))

    def test_domain_interval(self):
        assert domain_interval(IndicatorInterval(2.0)) == (-2.0, 2.0)
        lo, hi = domain_interval(Quadratic(1.0))
        assert lo == -math.inf and hi == math.inf
