import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedtradeoff import bounds, datagen
from fedtradeoff.errors import ConfigurationError


class TestPrivacyUpperBound:
    def test_gamma_two_kills_log_term(self):
        assert bounds.privacy_upper_bound(2.0, 5, 1.0, 1.0, 1.0) == 0.5

    def test_zero_distortion(self):
        assert bounds.privacy_upper_bound(2.0, 5, 1.0, 1.0, 0.0) == 1.0

    def test_substitution_example(self):
        v = bounds.privacy_upper_bound(2 * math.exp(-2), 2, 2.0, 1.0, 1.0)
        assert v == pytest.approx(math.sqrt(0.5), rel=1e-12)

    def test_preconditions(self):
        with pytest.raises(ConfigurationError):
            bounds.privacy_upper_bound(0.1, 0, 1.0, 1.0, 1.0)
        with pytest.raises(ConfigurationError):
            bounds.privacy_upper_bound(0.1, 5, 1.0, 0.0, 1.0)
        with pytest.raises(ConfigurationError):
            bounds.privacy_upper_bound(2.5, 5, 1.0, 1.0, 1.0)

    @given(gamma=st.floats(0.01, 1.99), m=st.integers(1, 10**6),
           c_a=st.floats(0.01, 10.0), cap=st.floats(0.1, 10.0),
           d1=st.floats(0.0, 10.0), d2=st.floats(0.0, 10.0))
    def test_strictly_decreasing_in_distortion(self, gamma, m, c_a, cap, d1, d2):
        lo, hi = min(d1, d2), max(d1, d2)
        if hi - lo > 1e-9 * (1.0 + hi):    # separation beyond float granularity
            assert (bounds.privacy_upper_bound(gamma, m, c_a, cap, hi)
                    < bounds.privacy_upper_bound(gamma, m, c_a, cap, lo))

    @given(gamma=st.floats(0.01, 1.99), m1=st.integers(1, 10**6),
           m2=st.integers(1, 10**6), c_a=st.floats(0.01, 10.0),
           cap=st.floats(0.1, 10.0), dup=st.floats(0.0, 10.0))
    def test_strictly_decreasing_in_one_over_m(self, gamma, m1, m2, c_a, cap, dup):
        lo, hi = min(m1, m2), max(m1, m2)
        if hi > lo * 1.001:
            assert (bounds.privacy_upper_bound(gamma, hi, c_a, cap, dup)
                    < bounds.privacy_upper_bound(gamma, lo, c_a, cap, dup))

    def test_precondition_threshold(self):
        assert bounds.privacy_precondition_threshold(2.0, 3.0, 1.5, 16) == \
            pytest.approx(2 * 2.0 * 3.0 / (1.5 * 4.0))


class TestUtilityUpperBound:
    def test_spec_substitution(self):
        # d=1, D=2, lam=2 -> N=4; eta=1 kills the ln term
        c_const, m_const, m = 1.3, 2.0, 50
        v = bounds.utility_upper_bound(c_const, 2.0, 0.0, m_const, 1, 2.0, 1.0, m)
        assert v == pytest.approx(2 * c_const + m_const * math.sqrt(8 * math.log(2) / m),
                                  rel=1e-12)

    def test_large_m_limit_is_linear_part(self):
        v = bounds.utility_upper_bound(2.0, 1.0, 0.5, 1.0, 2, 1.0, 0.5, 10**12)
        assert v == pytest.approx(2.0 * 1.0 + 2.0 * 0.5, rel=1e-4)

    def test_lambda_must_exceed_delta_two(self):
        with pytest.raises(ConfigurationError):
            bounds.utility_upper_bound(1.0, 0.5, 0.5, 1.0, 2, 1.0, 0.5, 10)

    def test_monotone_decreasing_in_m(self):
        vals = [bounds.utility_upper_bound(1.0, 1.0, 0.2, 1.0, 3, 2.0, 0.1, m)
                for m in (10, 100, 1000)]
        assert vals[0] > vals[1] > vals[2]

    def test_monotone_increasing_in_delta_two(self):
        vals = [bounds.utility_upper_bound(1.0, 1.0, d2, 1.0, 3, 2.0, 0.1, 100)
                for d2 in (0.0, 0.3, 0.6)]
        assert vals[0] < vals[1] < vals[2]

    def test_overflow_safe(self):
        # tiny lambda -> astronomically large covering number -> inf, no crash
        v = bounds.utility_upper_bound(1.0, 1e-3, 0.0, 1.0, 10, 10.0, 0.1, 100)
        assert v == math.inf

    def test_he_equals_general_at_zero_bitwise_sampled(self):
        g = np.random.default_rng(0)
        for _ in range(1000):
            c_const = float(g.uniform(0.01, 5.0))
            lam = float(g.uniform(0.05, 5.0))
            m_const = float(g.uniform(0.01, 5.0))
            d = int(g.integers(1, 40))
            cap = float(g.uniform(0.1, 5.0))
            eta = float(g.uniform(0.01, 1.0))
            m = int(g.integers(1, 10**6))
            a = bounds.utility_upper_bound(c_const, lam, 0.0, m_const, d, cap, eta, m)
            b = bounds.he_utility_upper_bound(c_const, lam, m_const, d, cap, eta, m)
            assert a == b  # bit-for-bit


class TestLambdaMinimizer:
    def test_minimizer_respects_constraint_and_beats_grid(self):
        c_const, d2, m_const, d, cap, eta, m = 1.0, 0.3, 2.0, 4, 2.0, 0.1, 200
        lam, rhs = bounds.minimize_utility_lambda(c_const, d2, m_const, d, cap, eta, m)
        assert lam > d2
        for probe in np.geomspace(d2 + 1e-6, 50.0, 200):
            assert rhs <= bounds.utility_upper_bound(
                c_const, float(probe), d2, m_const, d, cap, eta, m) + 1e-9

    def test_zero_distortion_case(self):
        lam, rhs = bounds.minimize_utility_lambda(0.5, 0.0, 1.0, 2, 1.0, 0.1, 50)
        assert lam > 0 and np.isfinite(rhs)


def make_inputs(k=3, gamma=0.05, eta=0.1, lam=1.0, rho=1.0, big_l=1.0,
                eps_p=None, eps_e=None):
    est = datagen.ConstantsEstimate(c_a=1.2, c_b=2.5, big_c=0.8, big_m=1.5,
                                    cap_d=2.0, c_0=0.5, c_2=1.0)
    return bounds.BoundInputs(
        constants=est, eta=eta, lam=lam, gamma=gamma,
        eps_p=np.array(eps_p if eps_p is not None else [0.5] * k),
        eps_e=np.array(eps_e if eps_e is not None else [20.0] * k),
        delta_up=np.array([0.3] * k), delta_two=0.3, num_clients=k, d=4, t_rounds=50,
        rho=rho, big_l=big_l)


class TestTradeoffs:
    def test_head_vanishes_with_full_leakage_and_gamma_one(self):
        inp = make_inputs(k=1, gamma=1.0, eps_p=[1.0])
        expected_tail = bounds._m_term(1.5, 4, 2.0, 1.0, 0.1, 20.0)
        assert bounds.tradeoff_general(inp) == pytest.approx(expected_tail, rel=1e-12)
        assert bounds.tradeoff_randomization(inp) == pytest.approx(expected_tail, rel=1e-12)

    def test_doubling_eps_e_decreases_rhs(self):
        a = bounds.tradeoff_general(make_inputs(eps_e=[20.0] * 3))
        b = bounds.tradeoff_general(make_inputs(eps_e=[40.0] * 3))
        assert b < a

    def test_matches_independent_arithmetic(self):
        # spreadsheet-style recomputation with scalar arithmetic
        inp = make_inputs(k=2, gamma=0.1, eta=0.2, lam=1.5, big_l=1.3,
                          eps_p=[0.4, 0.7], eps_e=[10.0, 30.0])
        c = inp.constants
        coef = 2.0 * c.cap_d / c.c_a
        head = 0.0
        for k in range(2):
            head += coef * (1 - inp.eps_p[k]) + coef * math.sqrt(
                math.log(1 / inp.gamma[k]) / inp.eps_e[k])
        head *= c.big_c * 1.3 / 2
        n_cover = (2 * 4) ** (2 * c.cap_d / 1.5 ** 2 + 1)
        tail = c.big_m * math.sqrt((2 * n_cover * math.log(2)
                                    + 2 * math.log(1 / 0.2)) / 10.0)
        assert bounds.tradeoff_general(inp, client=0) == pytest.approx(head + tail,
                                                                       rel=1e-9)

    def test_randomization_matches_independent_arithmetic(self):
        inp = make_inputs(k=2, gamma=0.1, eta=0.2, lam=1.5, rho=0.7,
                          eps_p=[0.4, 0.7], eps_e=[10.0, 30.0])
        c = inp.constants
        coef = 2.0 * c.cap_d / c.c_a
        head = 0.0
        for k in range(2):
            head += coef * (1 - inp.eps_p[k]) + coef * math.sqrt(
                math.log(1 / inp.gamma[k]) / inp.eps_e[k])
        head *= (2.0 + 0.7) * c.big_c / 2
        n_cover = (2 * 4) ** (2 * c.cap_d / 1.5 ** 2 + 1)
        tail = c.big_m * math.sqrt((2 * n_cover * math.log(2)
                                    + 2 * math.log(1 / 0.2)) / 10.0)
        assert bounds.tradeoff_randomization(inp, client=0) == pytest.approx(
            head + tail, rel=1e-9)

    def test_rho_to_zero_matches_general_with_cl_as_2c(self):
        inp_rand = make_inputs(rho=1e-12)
        inp_gen = make_inputs(big_l=2.0)
        a = bounds.tradeoff_randomization(inp_rand)
        b = bounds.tradeoff_general(inp_gen)
        assert a == pytest.approx(b, rel=1e-9)

    def test_rho_positive_required(self):
        with pytest.raises(ConfigurationError):
            bounds.tradeoff_randomization(make_inputs(rho=-1.0))

    def test_probability_budget_vacuous_flag(self):
        inp = make_inputs(k=3, gamma=0.4, eta=0.2)
        assert inp.probability_budget() < 0

    def test_eps_e_below_one_rejected(self):
        with pytest.raises(ConfigurationError):
            make_inputs(eps_e=[0.5] * 3)


class TestPrivatePacSampleSize:
    def test_example_hundred(self):
        # gap 0.1, eta = e^-1 -> ln(1/eta) = 1 -> 100
        v = bounds.private_pac_sample_size(0.6, 0.0, 0.5, math.exp(-1))
        assert v == pytest.approx(100.0, rel=1e-9)

    def test_eta_one_degenerate_zero(self):
        assert bounds.private_pac_sample_size(1.0, 0.5, 1.0, 1.0) == 0.0

    def test_boundary_alpha_rejected(self):
        with pytest.raises(ConfigurationError):
            bounds.private_pac_sample_size(0.5, 0.0, 0.5, 0.1)

    def test_constant_factor_scales(self):
        a = bounds.private_pac_sample_size(0.6, 0.0, 0.5, 0.5, constant_factor=1.0)
        b = bounds.private_pac_sample_size(0.6, 0.0, 0.5, 0.5, constant_factor=3.0)
        assert b == pytest.approx(3 * a, rel=1e-12)
