import decimal
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailsgd.errors import StepSizeError
from tailsgd.spectral import (
    FilterParams,
    apply_filter,
    curve,
    evaluate,
    filter_sup_gap,
    gd_filter,
    gd_residual,
    minimal_k,
    residual_constant,
    residual_sup_gap,
    tail_filter,
    tail_filter_psd,
    tail_residual,
)


def brute_gd_filter(sigma, gamma, t):
    return gamma * sum((1 - gamma * sigma) ** k for k in range(t))


def decimal_residual(sigma, p):
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        x = decimal.Decimal(p.gamma) * decimal.Decimal(sigma)
        q = 1 - x
        return float(q ** (p.S + 1) * (1 - q**p.L) / (p.L * x))


def brute_tail_filter(sigma, gamma, S, T):
    return sum(brute_gd_filter(sigma, gamma, t) for t in range(S + 1, T + 1)) / (T - S)


class TestParams:
    def test_window_length(self):
        assert FilterParams(0.1, 10, 3).L == 7

    @pytest.mark.parametrize("gamma,T,S", [(0.0, 5, 0), (-1.0, 5, 0), (math.inf, 5, 0), (0.1, 0, 0), (0.1, 5, 5), (0.1, 5, -1)])
    def test_rejects(self, gamma, T, S):
        with pytest.raises(ValueError):
            FilterParams(gamma, T, S)

    def test_rejects_float_T(self):
        with pytest.raises(TypeError):
            FilterParams(0.1, 5.0)


class TestGdFilter:
    def test_two_steps(self):
        assert gd_filter(1.0, FilterParams(0.1, 5), 2) == pytest.approx(0.19, abs=1e-15)

    def test_single_step_is_gamma(self):
        assert gd_filter(1.0, FilterParams(0.1, 5), 1) == pytest.approx(0.1, abs=1e-15)

    def test_zero_limit(self):
        assert abs(gd_filter(1e-300, FilterParams(0.1, 5), 5) - 0.5) <= 1e-12

    def test_index_range(self):
        with pytest.raises(ValueError):
            gd_filter(1.0, FilterParams(0.1, 5), 0)
        with pytest.raises(ValueError):
            gd_filter(1.0, FilterParams(0.1, 5), 6)

    def test_step_guard(self):
        with pytest.raises(StepSizeError):
            gd_filter(10.0, FilterParams(0.1, 5), 2)
        with pytest.raises(StepSizeError):
            gd_filter(0.0, FilterParams(0.1, 5), 2)

    def test_vector_input(self):
        out = gd_filter(np.array([1.0, 0.5]), FilterParams(0.1, 5), 3)
        assert out.shape == (2,)
        assert out[1] == pytest.approx(brute_gd_filter(0.5, 0.1, 3), rel=1e-14)


class TestGdResidual:
    def test_two_steps(self):
        p = FilterParams(0.1, 5)
        assert gd_residual(1.0, p, 2) == pytest.approx(0.81, abs=1e-15)
        assert gd_residual(1.0, p, 2) == pytest.approx(1 - 1.0 * gd_filter(1.0, p, 2), abs=1e-15)

    def test_zero_steps_is_identity(self):
        assert gd_residual(3.7, FilterParams(0.1, 5), 0) == 1.0


class TestTailFilter:
    def test_two_step_average(self):
        assert tail_filter(1.0, FilterParams(0.1, 2, 0)) == pytest.approx(0.145, abs=1e-15)

    @pytest.mark.parametrize("T", [1, 2, 10, 1000])
    def test_last_window_is_gd_filter(self, T):
        p = FilterParams(0.1, T, T - 1)
        for s in (1.0, 0.3, 1e-4):
            assert tail_filter(s, p) == pytest.approx(gd_filter(s, p, T), rel=1e-13)

    @pytest.mark.parametrize("S,T", [(0, 10), (5, 10), (499, 1000)])
    def test_zero_limit(self, S, T):
        gamma = 0.1
        assert tail_filter(1e-300, FilterParams(gamma, T, S)) == pytest.approx(gamma * (S + T + 1) / 2, rel=1e-14)

    @pytest.mark.parametrize("S,T", [(0, 3), (2, 9), (10, 40)])
    def test_matches_brute_force(self, S, T):
        for s in (3.0, 1.0, 0.01, 1e-5):
            got = tail_filter(s, FilterParams(0.2, T, S))
            assert got == pytest.approx(brute_tail_filter(s, 0.2, S, T), rel=1e-12)

    def test_psd_form_clips_tiny_negative(self):
        p = FilterParams(0.1, 10, 4)
        out = tail_filter_psd(np.array([-1e-17, 0.0, 1.0]), p)
        assert out[0] == out[1] == pytest.approx(0.1 * 15 / 2)
        assert out[2] == pytest.approx(tail_filter(1.0, p))


class TestTailResidual:
    def test_two_steps(self):
        assert tail_residual(1.0, FilterParams(0.1, 2, 0)) == pytest.approx(0.855, abs=1e-15)

    def test_ten_steps(self):
        assert tail_residual(1.0, FilterParams(0.1, 10, 0)) == pytest.approx(0.9 * (1 - 0.9**10), abs=1e-14)

    def test_zero_limit(self):
        assert tail_residual(1e-300, FilterParams(0.1, 10, 3)) == 1.0

    def test_both_branches_accurate_at_cutoff(self):
        # either side of the switch between the series and the closed form
        p = FilterParams(0.1, 1000, 500)
        edge = 1e-3 / (p.T + 1) / p.gamma
        for s in (edge * (1 - 1e-9), edge * (1 + 1e-9)):
            assert tail_residual(s, p) == pytest.approx(decimal_residual(s, p), rel=1e-15, abs=0)


class TestApply:
    def test_scalar_example(self):
        out = apply_filter(np.array([1.0]), np.array([1.0]), "tail_residual", FilterParams(0.5, 2, 0))
        assert out == pytest.approx([0.375], abs=1e-15)

    def test_zero_coeffs(self):
        out = apply_filter(np.array([1.0, 0.5, 0.1]), np.zeros(3), "tail_filter", FilterParams(0.5, 7, 2))
        assert np.all(out == 0)

    def test_identity_residual(self):
        coeffs = np.array([0.3, -2.0, 5.0])
        out = apply_filter(np.array([1.0, 0.5, 0.1]), coeffs, "gd_residual", FilterParams(0.5, 7), t=0)
        assert np.array_equal(out, coeffs)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            apply_filter(np.array([1.0, 0.5]), np.ones(3), "tail_filter", FilterParams(0.5, 7))

    def test_unknown_kind_and_missing_t(self):
        with pytest.raises(ValueError):
            evaluate("ridge", 1.0, FilterParams(0.5, 7))
        with pytest.raises(ValueError):
            evaluate("gd_filter", 1.0, FilterParams(0.5, 7))


class TestSupBounds:
    grid = np.geomspace(1e-6, 1.0, 400)

    def test_filter_u1_at_most_one(self):
        for S, T in [(0, 10), (5, 10), (50, 60)]:
            observed, _ = filter_sup_gap(FilterParams(0.1, T, S), 1.0, self.grid)
            assert observed <= 1.0

    def test_filter_u0_uniform(self):
        observed, bound = filter_sup_gap(FilterParams(0.1, 10, 0), 0.0, self.grid)
        assert bound == pytest.approx(1.0)
        assert observed <= 1.0

    def test_filter_u_half_tail(self):
        observed, bound = filter_sup_gap(FilterParams(0.1, 10, 5), 0.5, self.grid, K=3)
        assert observed <= bound

    def test_filter_window_too_late_for_K(self):
        with pytest.raises(ValueError):
            filter_sup_gap(FilterParams(0.1, 10, 9), 0.5, self.grid, K=3)

    def test_minimal_k(self):
        assert minimal_k(FilterParams(0.1, 10, 0)) == 1.0
        assert minimal_k(FilterParams(0.1, 10, 5)) == 3.0

    def test_residual_u0(self):
        observed, _ = residual_sup_gap(FilterParams(0.1, 10, 3), 0.0, self.grid)
        assert observed <= 1.0

    def test_residual_u1(self):
        observed, bound = residual_sup_gap(FilterParams(0.1, 10, 0), 1.0, self.grid)
        assert bound == pytest.approx(1.0)
        assert observed <= bound

    def test_residual_u2(self):
        observed, bound = residual_sup_gap(FilterParams(0.1, 10, 5), 2.0, self.grid, K=3)
        assert math.isfinite(observed)
        assert observed <= bound

    def test_residual_high_u_needs_tail(self):
        with pytest.raises(ValueError):
            residual_sup_gap(FilterParams(0.1, 10, 0), 2.0, self.grid)
        with pytest.raises(ValueError):
            residual_sup_gap(FilterParams(0.1, 10, 5), 3.5, self.grid)

    @pytest.mark.parametrize("u", [1.25, 1.5, 2.0, 3.0])
    def test_residual_constant_calibration(self, u):
        # brute-force sup of x**u R(x) * L * (S+1)**(u-1) over windows and a fine x grid
        x = np.geomspace(1e-7, 0.999, 4000)
        worst = 0.0
        for S, T in [(1, 2), (1, 3), (5, 10), (20, 30), (100, 300), (999, 1000)]:
            p = FilterParams(1.0, T, S)
            vals = x**u * tail_residual(x, p) * p.L * (S + 1) ** (u - 1)
            worst = max(worst, float(vals.max()))
        assert worst <= residual_constant(u)
        assert worst >= 0.5 * residual_constant(u)


sigma_st = st.floats(min_value=1e-12, max_value=1.0, allow_nan=False)


@st.composite
def windows(draw):
    T = draw(st.integers(min_value=1, max_value=3000))
    S = draw(st.integers(min_value=0, max_value=T - 1))
    gamma = draw(st.floats(min_value=1e-4, max_value=0.99))
    return FilterParams(gamma, T, S)


@settings(max_examples=200, deadline=None)
@given(p=windows(), s=sigma_st)
def test_residual_identity_and_range(p, s):
    R = tail_residual(s, p)
    G = tail_filter(s, p)
    assert 0.0 <= R <= 1.0
    assert 0.0 <= G <= p.gamma * p.T * (1 + 1e-12)
    assert abs(R + s * G - 1.0) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(p=windows(), s=sigma_st)
def test_tail_residual_bounded_by_gd_residual_at_S(p, s):
    # averaging q**t over a later window can only shrink the residual
    assert tail_residual(s, p) <= gd_residual(s, FilterParams(p.gamma, p.T), p.S) * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(p=windows())
def test_filter_monotone_in_sigma(p):
    sig = np.geomspace(1e-9, 0.99 / p.gamma, 50)
    vals = curve("tail_filter", sig, p).values
    assert np.all(np.diff(vals) <= 1e-12 * vals[:-1])
