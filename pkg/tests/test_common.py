"""Tests for the small shared numerics helpers."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from exmass.common import (
    bump_profile,
    fit_inverse_r_tail,
    smoothstep,
    validate_in_range,
    validate_positive,
)


class TestSmoothstep:
    def test_endpoints_and_midpoint(self):
        assert smoothstep(0.0) == 0.0
        assert smoothstep(1.0) == 1.0
        assert smoothstep(0.5) == pytest.approx(0.5, abs=1e-15)

    def test_clamps_outside_unit_interval(self):
        assert smoothstep(-3.0) == 0.0
        assert smoothstep(4.0) == 1.0

    def test_flat_to_second_order_at_ends(self):
        # quintic: first and second derivatives vanish at 0 and 1
        h = 1e-4
        assert smoothstep(h) < h**2
        assert 1.0 - smoothstep(1.0 - h) < h**2

    @given(st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.0, max_value=1.0))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert smoothstep(lo) <= smoothstep(hi) + 1e-15

    def test_integral_is_half(self):
        # closed form: integral of 6u^5-15u^4+10u^3 over [0,1] is 1/2
        u = np.linspace(0.0, 1.0, 20001)
        val = np.trapezoid(smoothstep(u), u)
        assert val == pytest.approx(0.5, abs=1e-9)


class TestBumpProfile:
    def test_plateau_support_and_range(self):
        d = np.linspace(0.0, 1.0, 101)
        q = bump_profile(d, 0.25, 0.5)
        assert np.all(q[d <= 0.25] == 1.0)
        assert np.all(q[d >= 0.5] == 0.0)
        assert q.min() >= 0.0 and q.max() <= 1.0

    @given(st.floats(min_value=1e-3, max_value=2.0), st.floats(min_value=1.1, max_value=4.0))
    def test_monotone_decreasing(self, inner, outer_factor):
        outer = inner * outer_factor
        d = np.linspace(0.0, outer * 1.2, 257)
        q = bump_profile(d, inner, outer)
        assert np.all(np.diff(q) <= 1e-15)

    def test_rejects_bad_radii(self):
        with pytest.raises(ValueError):
            bump_profile(np.array([0.1]), 0.5, 0.5)
        with pytest.raises(ValueError):
            bump_profile(np.array([0.1]), -0.1, 0.5)


class TestInverseRTail:
    def test_recovers_exact_coefficients(self):
        r = np.linspace(20.0, 100.0, 40)
        vals = 1.5 + 3.25 / r
        c0, c1, r2 = fit_inverse_r_tail(r, vals)
        assert c0 == pytest.approx(1.5, abs=1e-12)
        assert c1 == pytest.approx(3.25, abs=1e-10)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_pinned_constant(self):
        r = np.linspace(10.0, 50.0, 30)
        vals = 2.0 - 0.7 / r
        c0, c1, _ = fit_inverse_r_tail(r, vals, v_inf=2.0)
        assert c0 == 2.0
        assert c1 == pytest.approx(-0.7, abs=1e-10)


class TestValidators:
    def test_validate_positive(self):
        validate_positive("x", 0.1)
        with pytest.raises(ValueError):
            validate_positive("x", 0.0)
        with pytest.raises(ValueError):
            validate_positive("x", -1.0)

    def test_validate_in_range_open(self):
        validate_in_range("d", 0.75, 0.5, 1.0)
        with pytest.raises(ValueError):
            validate_in_range("d", 0.5, 0.5, 1.0)
        with pytest.raises(ValueError):
            validate_in_range("d", 1.0, 0.5, 1.0)

    def test_validate_in_range_closed(self):
        validate_in_range("s", 0.0, 0.0, 1.0, open_ends=False)
