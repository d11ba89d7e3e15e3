"""Tests for the spherical samplers and densities.

Statistical checks run at fixed seeds with tolerances wide enough that a
correct implementation passes deterministically; analytic references are
computed in-test (moment integrals, quadrature of the density formulas).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from lhvsim.bloch import State, Z_AXIS, collapse, dot3, sign_pm, theta
from lhvsim.errors import DomainError
from lhvsim.sampling import (
    RhoTildeMaxSampler,
    RhoTildeSampler,
    RngStream,
    degorre_choice,
    eval_rho,
    eval_rho_tilde,
    eval_rho_tilde_max,
    improved_one_bit_threshold,
    make_generator,
    n_of_p,
    n_of_p_quadrature,
    one_bit_threshold,
    rho_tilde_bound,
    rho_tilde_max_cos,
    sample_rho_tilde,
    sample_rho_tilde_max,
    sample_theta_hemisphere,
    sample_uniform_sphere,
)

M = 10**6


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


class TestStreams:
    def test_same_key_same_sequence(self):
        a = make_generator(1, 0).random(100)
        b = make_generator(1, 0).random(100)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = make_generator(1, 0).random(100)
        b = make_generator(1, 1).random(100)
        c = make_generator(2, 0).random(100)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_rng_stream_wrapper(self):
        s = RngStream(seed=1, stream_id=0)
        v1 = sample_uniform_sphere(s.generator())
        v2 = sample_uniform_sphere(RngStream(1, 0).generator())
        assert np.array_equal(v1, v2)

    def test_draw_granularity_invariant(self):
        g1 = make_generator(9, 4)
        g2 = make_generator(9, 4)
        a = g1.random(64)
        b = np.concatenate([g2.random(17), g2.random(3), g2.random(44)])
        assert np.array_equal(a, b)


class TestUniformSphere:
    def test_moments(self):
        lam = sample_uniform_sphere(make_generator(1, 0), M)
        assert np.max(np.abs(lam.mean(axis=0))) < 0.005
        assert abs((lam[:, 2] ** 2).mean() - 1.0 / 3.0) < 0.005

    def test_unit_norm(self):
        lam = sample_uniform_sphere(make_generator(2, 0), 1000)
        np.testing.assert_allclose(np.linalg.norm(lam, axis=1), 1.0, atol=1e-12)

    def test_cos_marginal_ks(self):
        lam = sample_uniform_sphere(make_generator(3, 0), M)
        d = stats.kstest(lam[:, 2], lambda c: (1.0 + c) / 2.0).statistic
        assert d < 2.0 / np.sqrt(M)


class TestThetaHemisphere:
    def test_support_is_hemisphere(self):
        lam = sample_theta_hemisphere(make_generator(4, 0), Z_AXIS, M)
        assert np.all(lam[:, 2] >= 0.0)

    def test_mean_cos_is_two_thirds(self):
        # E[c] with density 2c on [0,1] is int 2c*c dc = 2/3
        lam = sample_theta_hemisphere(make_generator(5, 0), Z_AXIS, M)
        assert abs(lam[:, 2].mean() - 2.0 / 3.0) < 0.005

    def test_cos_marginal_ks(self):
        rng = np.random.default_rng(55)
        v = random_unit(rng)
        lam = sample_theta_hemisphere(make_generator(6, 0), v, M)
        d = stats.kstest(dot3(lam, v), lambda c: np.clip(c, 0.0, 1.0) ** 2).statistic
        assert d < 2.0 / np.sqrt(M)

    def test_qubit_statistics(self):
        # feeding draws to b = sgn(y.lam) reproduces p(b=+1) = (1 + y.v)/2
        rng = np.random.default_rng(66)
        v, y = random_unit(rng), random_unit(rng)
        lam = sample_theta_hemisphere(make_generator(7, 0), v, M)
        p_hat = float(np.mean(sign_pm(dot3(lam, y)) == 1))
        assert abs(p_hat - (1.0 + y @ v) / 2.0) < 0.005


class TestDegorreChoice:
    def test_mean_abs_cos(self):
        # density |c| on [-1,1]: E|c| = 2/3
        chosen, c, _, _ = degorre_choice(make_generator(8, 0), Z_AXIS, M)
        assert abs(np.abs(chosen[:, 2]).mean() - 2.0 / 3.0) < 0.005
        assert set(np.unique(c)) == {1, 2}

    def test_cos_marginal_ks(self):
        chosen, _, _, _ = degorre_choice(make_generator(9, 0), Z_AXIS, M)
        d = stats.kstest(chosen[:, 2], lambda c: (1.0 + c * np.abs(c)) / 2.0).statistic
        assert d < 2.0 / np.sqrt(M)

    def test_tie_picks_first(self):
        chosen, c, lam1, lam2 = degorre_choice(make_generator(10, 0), Z_AXIS, 4)
        # equality of |dot| is measure zero; force it by construction instead
        assert np.all(np.where(np.abs(lam1[:, 2]) >= np.abs(lam2[:, 2]), 1, 2) == c)
        eq = np.where(np.abs(lam1[:, 2]) >= np.abs(lam1[:, 2]), 1, 2)
        assert np.all(eq == 1)

    def test_invariant_under_axis_flip(self):
        v = np.array([0.6, 0.0, 0.8])
        a = degorre_choice(make_generator(11, 0), v, 1000)[0]
        b = degorre_choice(make_generator(11, 0), -v, 1000)[0]
        assert np.array_equal(a, b)


class TestRhoDensities:
    def test_rho_maximally_entangled_is_abs_cos(self):
        rng = np.random.default_rng(77)
        x = random_unit(rng)
        coll = collapse(State(0.5), x)
        lam = sample_uniform_sphere(make_generator(12, 0), 1000)
        want = np.abs(dot3(lam, coll.v_plus)) / (2.0 * np.pi)
        np.testing.assert_allclose(eval_rho(State(0.5), x, lam), want, atol=1e-12)

    def test_rho_product_state_is_hemisphere_law(self):
        rng = np.random.default_rng(78)
        lam = sample_uniform_sphere(make_generator(13, 0), 1000)
        want = theta(lam[:, 2]) / np.pi
        for _ in range(5):
            x = random_unit(rng)
            np.testing.assert_allclose(eval_rho(State(1.0), x, lam), want, atol=1e-12)

    def test_rho_normalized_monte_carlo(self):
        rng = np.random.default_rng(79)
        lam = sample_uniform_sphere(make_generator(14, 0), M)
        for p in (0.55, 0.8, 0.97):
            x = random_unit(rng)
            integral = 4.0 * np.pi * eval_rho(State(p), x, lam).mean()
            assert abs(integral - 1.0) < 0.01

    def test_rho_tilde_zero_at_p1(self):
        rng = np.random.default_rng(80)
        lam = sample_uniform_sphere(make_generator(15, 0), 1000)
        x = random_unit(rng)
        np.testing.assert_array_equal(eval_rho_tilde(State(1.0), x, lam), 0.0)

    def test_rho_tilde_area_monte_carlo(self):
        rng = np.random.default_rng(81)
        lam = sample_uniform_sphere(make_generator(16, 0), M)
        for p in (0.5, 0.7, 0.9):
            x = random_unit(rng)
            integral = 4.0 * np.pi * eval_rho_tilde(State(p), x, lam).mean()
            assert abs(integral - 2.0 * (1.0 - p)) < 0.01 * max(2.0 * (1.0 - p), 1.0)

    def test_rho_tilde_bounds_pointwise(self):
        rng = np.random.default_rng(82)
        lam = sample_uniform_sphere(make_generator(17, 0), 10**5)
        for p in (0.5, 0.7, 0.933, 0.99):
            state = State(p)
            x = random_unit(rng)
            rt = eval_rho_tilde(state, x, lam, clamp=False)
            assert np.min(rt) > -1e-12
            assert np.max(rt) <= rho_tilde_bound(state) + 1e-12
            assert np.max(rt - eval_rho_tilde_max(state, lam)) <= 1e-12

    def test_rho_tilde_max_constant_at_half(self):
        lam = sample_uniform_sphere(make_generator(18, 0), 1000)
        np.testing.assert_allclose(
            eval_rho_tilde_max(State(0.5), lam), 1.0 / (2.0 * np.pi), atol=1e-15
        )

    def test_rho_tilde_max_peak_at_equator(self):
        for p in (0.6, 0.8, 0.95):
            c = np.linspace(-1.0, 1.0, 20001)
            vals = rho_tilde_max_cos(State(p), c)
            assert vals.max() <= rho_tilde_bound(p) + 1e-15
            assert rho_tilde_max_cos(State(p), 0.0) == pytest.approx(
                rho_tilde_bound(p), abs=1e-15
            )


class TestNofP:
    def test_frozen_value_at_09(self):
        # derived: quadrature of the envelope (and closed form) give 0.6943755...
        assert n_of_p(0.9) == pytest.approx(0.6943755299006493, abs=1e-12)

    def test_closed_form_matches_quadrature(self):
        for p in (0.84, 0.9, 0.95, 0.99):
            assert abs(n_of_p(p) - n_of_p_quadrature(p)) < 1e-6

    def test_limit_at_p1(self):
        assert n_of_p(1.0) == 0.0
        assert n_of_p(0.9999999) < 4e-6

    def test_singular_at_half(self):
        with pytest.raises(DomainError):
            n_of_p(0.5)
        # the actual limit is 2 (the envelope is the constant 1/(2pi))
        assert n_of_p_quadrature(0.5) == pytest.approx(2.0, abs=1e-9)

    def test_threshold_root(self):
        root = improved_one_bit_threshold()
        assert n_of_p(root) == pytest.approx(1.0, abs=1e-9)
        assert root == pytest.approx(0.834261756691355, abs=1e-9)
        assert abs(root - 0.835) < 2e-3  # the coarse published rounding

    def test_one_bit_threshold_constant(self):
        t = one_bit_threshold()
        assert t == pytest.approx(0.9330127018922193, abs=1e-15)
        # at the threshold the envelope peak equals 1/(4pi) exactly
        assert rho_tilde_bound(t) == pytest.approx(1.0 / (4.0 * np.pi), abs=1e-12)


def _cos_bin_probs_rho_tilde_max(p, edges):
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda c: rho_tilde_max_cos(p, c), lo, hi, limit=100)
        out.append(2.0 * np.pi * val / n_of_p(p))
    return np.array(out)


class TestRhoTildeMaxSampler:
    def test_uniform_at_half(self):
        lam = sample_rho_tilde_max(make_generator(19, 0), State(0.5), M)
        assert abs((lam[:, 2] ** 2).mean() - 1.0 / 3.0) < 0.005

    def test_acceptance_fraction(self):
        s = RhoTildeMaxSampler(State(0.9), make_generator(20, 0))
        s.draw(M)
        want = n_of_p(0.9) / (4.0 * np.sqrt(0.9 * 0.1))
        assert abs(s.acceptance_fraction - want) < 0.01

    def test_chi2_against_density(self):
        p = 0.9
        lam = sample_rho_tilde_max(make_generator(21, 0), State(p), M)
        edges = np.linspace(-1.0, 1.0, 21)
        want = _cos_bin_probs_rho_tilde_max(p, edges)
        counts, _ = np.histogram(lam[:, 2], bins=edges)
        chi2 = float(np.sum((counts - M * want) ** 2 / (M * want)))
        assert stats.chi2.sf(chi2, len(want) - 1) > 0.001

    def test_cos_marginal_ks(self):
        p = 0.95
        lam = sample_rho_tilde_max(make_generator(22, 0), State(p), M)
        grid = np.linspace(-1.0, 1.0, 8193)
        pdf = 2.0 * np.pi * rho_tilde_max_cos(p, grid) / n_of_p(p)
        cdf_grid = integrate.cumulative_trapezoid(pdf, grid, initial=0.0)
        cdf_grid /= cdf_grid[-1]
        d = stats.kstest(lam[:, 2], lambda c: np.interp(c, grid, cdf_grid)).statistic
        assert d < 2.0 / np.sqrt(M)

    def test_rejects_p1(self):
        with pytest.raises(DomainError):
            RhoTildeMaxSampler(State(1.0), make_generator(23, 0))

    @given(cuts=st.lists(st.integers(1, 200), min_size=1, max_size=6))
    @settings(max_examples=25, deadline=None)
    def test_call_granularity_invariance(self, cuts):
        total = sum(cuts)
        a = RhoTildeMaxSampler(State(0.9), make_generator(24, 0)).draw(total)
        s = RhoTildeMaxSampler(State(0.9), make_generator(24, 0))
        b = np.concatenate([s.draw(k) for k in cuts])
        assert np.array_equal(a, b)


class TestRhoTildeSampler:
    def test_acceptance_fraction(self):
        rng = np.random.default_rng(83)
        for p in (0.7, 0.9):
            x = random_unit(rng)
            s = RhoTildeSampler(State(p), x, make_generator(25, 0))
            s.draw(2 * 10**5)
            want = 2.0 * (1.0 - p) / n_of_p(p)
            assert abs(s.acceptance_fraction - want) < 0.01

    def test_symmetry_under_point_reflection(self):
        rng = np.random.default_rng(84)
        x = random_unit(rng)
        lam = sample_rho_tilde(make_generator(26, 0), State(0.7), x, 10**5)
        t = dot3(lam, collapse(State(0.7), x).v_plus)
        assert stats.ks_2samp(t, -t).pvalue > 0.001
        assert stats.ks_2samp(lam[:, 2], -lam[:, 2]).pvalue > 0.001

    def test_support_has_positive_density(self):
        rng = np.random.default_rng(85)
        x = random_unit(rng)
        state = State(0.8)
        lam = sample_rho_tilde(make_generator(27, 0), state, x, 10**5)
        assert np.all(eval_rho_tilde(state, x, lam) > 0.0)

    def test_chi2_against_axis_marginal(self):
        # the lam.z histogram must match the quadrature of the density's
        # azimuthally-integrated marginal
        from lhvsim.verify import rho_tilde_cos_marginal

        state, x = State(0.75), np.array([0.28, -0.45, 0.848528137423857])
        x = x / np.linalg.norm(x)
        m = 2 * 10**5
        lam = sample_rho_tilde(make_generator(30, 0), state, x, m)
        edges = np.linspace(-1.0, 1.0, 21)
        want = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(
                lambda c: rho_tilde_cos_marginal(state, x, c), lo, hi, limit=100
            )
            want.append(val / (2.0 * (1.0 - state.p)))
        want = np.array(want)
        counts, _ = np.histogram(lam[:, 2], bins=edges)
        live = want > 1e-9
        assert np.all(counts[~live] == 0)
        chi2 = float(np.sum((counts[live] - m * want[live]) ** 2 / (m * want[live])))
        assert stats.chi2.sf(chi2, int(live.sum()) - 1) > 0.001

    def test_rejects_p1(self):
        with pytest.raises(DomainError):
            RhoTildeSampler(State(1.0), Z_AXIS, make_generator(28, 0))

    @given(cuts=st.lists(st.integers(1, 100), min_size=1, max_size=5))
    @settings(max_examples=20, deadline=None)
    def test_call_granularity_invariance(self, cuts):
        x = np.array([0.6, 0.0, 0.8])
        total = sum(cuts)
        a = RhoTildeSampler(State(0.8), x, make_generator(29, 0)).draw(total)
        s = RhoTildeSampler(State(0.8), x, make_generator(29, 0))
        b = np.concatenate([s.draw(k) for k in cuts])
        assert np.array_equal(a, b)
