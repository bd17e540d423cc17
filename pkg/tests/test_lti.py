import numpy as np
import pytest

from retrofit_sentinel.lti import (
    StateSpace,
    close_output_feedback,
    dc_gain,
    design_observer_gain,
    eigenvalues,
    freq_response,
    is_hurwitz,
    markov_parameters,
    series,
    solve_filter_riccati,
)

from conftest import (
    charpoly_eigs,
    random_stable_matrix,
    random_statespace,
    scalar_riccati_oracle,
)


class TestEigenvalues:
    def test_scalar(self):
        spec = eigenvalues([[-1.0]])
        assert np.allclose(spec.eigenvalues, [-1.0])
        assert spec.spectral_abscissa == -1.0

    def test_rotation(self):
        spec = eigenvalues([[0.0, 1.0], [-1.0, 0.0]])
        assert np.allclose(sorted(spec.eigenvalues.imag), [-1.0, 1.0])
        assert abs(spec.spectral_abscissa) < 1e-14

    def test_symmetric(self):
        spec = eigenvalues([[-1.0, 1.0], [1.0, -1.0]])
        assert np.allclose(sorted(spec.eigenvalues.real), [-2.0, 0.0], atol=1e-14)
        assert abs(spec.spectral_abscissa) < 1e-14

    def test_abscissa_consistent(self, rng):
        for _ in range(20):
            a = rng.standard_normal((6, 6))
            spec = eigenvalues(a)
            assert spec.spectral_abscissa == spec.eigenvalues.real.max()
            assert len(spec.eigenvalues) == 6

    def test_trace_determinant(self, rng):
        for n in (2, 5, 12, 20):
            a = rng.standard_normal((n, n))
            vals = eigenvalues(a).eigenvalues
            assert np.isclose(vals.sum().real, np.trace(a), rtol=1e-8, atol=1e-8)
            assert np.isclose(np.prod(vals).real, np.linalg.det(a),
                              rtol=1e-8, atol=1e-8)

    def test_charpoly_crosscheck(self, rng):
        for n in (1, 2, 3):
            a = rng.standard_normal((n, n))
            got = np.sort_complex(eigenvalues(a).eigenvalues)
            want = np.sort_complex(charpoly_eigs(a))
            assert np.allclose(got, want, atol=1e-8)

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            eigenvalues([[1.0, 2.0]])

    def test_empty(self):
        spec = eigenvalues(np.zeros((0, 0)))
        assert spec.spectral_abscissa == -np.inf


class TestIsHurwitz:
    def test_stable_scalar(self):
        assert is_hurwitz([[-1.0]], 0.0)

    def test_double_integrator(self):
        assert not is_hurwitz([[0.0, 1.0], [0.0, 0.0]], 0.0)

    def test_margin_semantics(self):
        assert is_hurwitz([[-1e-3]], 1e-4)
        assert not is_hurwitz([[-1e-3]], 1e-2)
        assert not is_hurwitz([[-1e-8]])  # default margin 1e-7

    def test_negative_margin_rejected(self):
        with pytest.raises(ValueError):
            is_hurwitz([[-1.0]], -0.1)


class TestDcGain:
    def test_first_order_lag(self):
        g = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        assert np.allclose(dc_gain(g), [[1.0]])

    def test_half_gain(self):
        g = StateSpace([[-2.0]], [[1.0]], [[1.0]], [[0.0]])
        assert np.allclose(dc_gain(g), [[0.5]])

    def test_pole_at_origin_rejected(self):
        g = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
        with pytest.raises(ValueError):
            dc_gain(g)

    def test_matches_low_frequency_response(self, rng):
        for _ in range(10):
            g = random_statespace(rng, 4, 2, 3)
            lo = freq_response(g, 1e-12)
            assert np.allclose(dc_gain(g), lo.real,
                               rtol=1e-6, atol=1e-6 * (1 + np.abs(lo).max()))

    def test_static_system(self):
        g = StateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((3, 0)),
                       np.arange(6.0).reshape(3, 2))
        assert np.allclose(dc_gain(g), g.d)


class TestFreqResponse:
    def test_lag_at_one(self):
        g = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        assert np.allclose(freq_response(g, 1.0), [[0.5]])

    def test_zero_input_map_gives_d(self, rng):
        d = rng.standard_normal((2, 2))
        g = StateSpace([[-1.0, 0.0], [0.0, -2.0]], np.zeros((2, 2)),
                       rng.standard_normal((2, 2)), d)
        assert np.allclose(freq_response(g, 3.0 + 1j), d)

    def test_pole_rejected(self):
        g = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        with pytest.raises(ValueError):
            freq_response(g, -1.0)


class TestMarkovParameters:
    def test_integrator(self):
        g = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
        params = markov_parameters(g, 3)
        assert np.allclose(np.array(params).ravel(), [0.0, 1.0, 0.0])

    def test_feedthrough_only(self, rng):
        d = rng.standard_normal((2, 3))
        g = StateSpace(np.zeros((0, 0)), np.zeros((0, 3)), np.zeros((2, 0)), d)
        params = markov_parameters(g, 4)
        assert np.allclose(params[0], d)
        assert all(np.allclose(p, 0) for p in params[1:])

    def test_count_validated(self):
        g = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
        with pytest.raises(ValueError):
            markov_parameters(g, 0)


class TestSeries:
    def test_identity_preserves_response(self, rng):
        g = random_statespace(rng, 3, 2, 2)
        ident = StateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((2, 0)),
                           np.eye(2))
        for s in (0.3 + 1j, 2.0, -0.5 + 0.1j):
            assert np.allclose(freq_response(series(ident, g), s),
                               freq_response(g, s))

    def test_two_lags_dc(self):
        lag = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        assert np.allclose(dc_gain(series(lag, lag)), [[1.0]])

    def test_state_dimension_adds(self, rng):
        g1 = random_statespace(rng, 2, 1, 3)
        g2 = random_statespace(rng, 4, 3, 2)
        assert series(g2, g1).n_states == 6

    def test_port_mismatch(self, rng):
        g1 = random_statespace(rng, 2, 1, 3)
        g2 = random_statespace(rng, 2, 2, 2)
        with pytest.raises(ValueError):
            series(g2, g1)

    def test_markov_convolution(self, rng):
        k = 6
        for _ in range(10):
            g1 = random_statespace(rng, 3, 2, 2, stable=False)
            g2 = random_statespace(rng, 2, 2, 3, stable=False)
            mp1 = markov_parameters(g1, k)
            mp2 = markov_parameters(g2, k)
            mp = markov_parameters(series(g2, g1), k)
            for i in range(k):
                conv = sum(mp2[j] @ mp1[i - j] for j in range(i + 1))
                assert np.allclose(mp[i], conv, rtol=1e-10, atol=1e-10)


class TestCloseOutputFeedback:
    def test_no_plant(self):
        g = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                       [[0.0]])
        k = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                       [[1.0]])
        assert np.allclose(close_output_feedback(g, k).d, [[1.0]])

    def test_static_half_gain_loop(self):
        g = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                       [[0.5]])
        k = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                       [[1.0]])
        assert np.allclose(close_output_feedback(g, k).d, [[2.0]])

    def test_singular_loop_rejected(self):
        g = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                       [[1.0]])
        k = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                       [[1.0]])
        with pytest.raises(ValueError):
            close_output_feedback(g, k)

    def test_frequency_identity(self, rng):
        for _ in range(5):
            g = random_statespace(rng, 3, 2, 2)
            k = random_statespace(rng, 2, 2, 2)
            k = StateSpace(k.a, k.b, k.c, 0.1 * k.d)  # keep the loop well posed
            q = close_output_feedback(g, k)
            for _ in range(10):
                s = complex(rng.standard_normal(), 2 + rng.random() * 3)
                gs = freq_response(g, s)
                ks = freq_response(k, s)
                want = ks @ np.linalg.inv(np.eye(2) - gs @ ks)
                got = freq_response(q, s)
                assert np.allclose(got, want, rtol=1e-9, atol=1e-9)


class TestDesignObserverGain:
    def test_scalar_riccati(self):
        h = design_observer_gain([[1.0]], [[1.0]])
        assert np.isclose(h[0, 0], -(1 + np.sqrt(2)), rtol=1e-12)
        p = solve_filter_riccati([[1.0]], [[1.0]])
        assert np.isclose(p[0, 0], scalar_riccati_oracle(1.0, 1.0, 1.0, 1.0),
                          rtol=1e-12)
        assert np.isclose(1.0 + h[0, 0] * 1.0, -np.sqrt(2), rtol=1e-12)

    def test_zero_state_weight_stable_plant(self):
        h = design_observer_gain([[-1.0]], [[1.0]], state_weight=[[0.0]])
        assert np.allclose(h, 0.0)

    def test_always_hurwitz(self, rng):
        for _ in range(25):
            n = int(rng.integers(1, 5))
            p = int(rng.integers(1, 3))
            a = rng.standard_normal((n, n))
            c = rng.standard_normal((p, n))
            h = design_observer_gain(a, c)
            assert is_hurwitz(a + h @ c, 0.0)

    def test_riccati_residual(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 6))
            a = rng.standard_normal((n, n))
            c = rng.standard_normal((2, n))
            p = solve_filter_riccati(a, c)
            resid = a @ p + p @ a.T - p @ c.T @ c @ p + np.eye(n)
            assert np.max(np.abs(resid)) <= 1e-8

    def test_undetectable_rejected(self):
        a = [[1.0, 0.0], [0.0, 2.0]]
        c = [[1.0, 0.0]]  # the mode at +2 is invisible
        with pytest.raises(ValueError, match="undetectable"):
            design_observer_gain(a, c)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            design_observer_gain([[1.0]], [[1.0]], state_weight=[[-1.0]])
        with pytest.raises(ValueError):
            design_observer_gain([[1.0]], [[1.0]], output_weight=[[0.0]])

    def test_custom_weights_shift_poles(self):
        h_soft = design_observer_gain([[1.0]], [[1.0]], state_weight=[[1.0]])
        h_hard = design_observer_gain([[1.0]], [[1.0]], state_weight=[[64.0]])
        assert 1.0 + h_hard[0, 0] < 1.0 + h_soft[0, 0] < 0.0


class TestStateSpaceValidation:
    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            StateSpace([[1.0, 0.0]], [[1.0]], [[1.0]])
        with pytest.raises(ValueError):
            StateSpace([[1.0]], [[1.0], [2.0]], [[1.0]])
        with pytest.raises(ValueError):
            StateSpace([[1.0]], [[1.0]], [[1.0, 2.0]])
        with pytest.raises(ValueError):
            StateSpace([[1.0]], [[1.0]], [[1.0]], [[1.0, 2.0]])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            StateSpace([[np.nan]], [[1.0]], [[1.0]])

    def test_default_feedthrough(self):
        g = StateSpace([[-1.0]], [[1.0, 2.0]], [[1.0]])
        assert g.d.shape == (1, 2)
        assert np.allclose(g.d, 0.0)
