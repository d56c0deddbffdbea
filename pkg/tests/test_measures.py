import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feme.core import BlochPair, ContractError, FemeState, ModelParams, build_difference_state, build_state
from feme.dynamics import IntegratorConfig, integrate
from feme.measures import (
    BasisTrajectories,
    DistanceTrace,
    angle_grid,
    backflow_onset,
    blp_from_trace,
    blp_measure,
    distance_trace,
    external_distance,
    internal_distance,
    rate_closed_form,
)
from feme.oracles import full_space_trace_distance, random_difference_state

FIG2 = ModelParams(lambda0=0.08, g=0.066, n_units=20, beta=2.0)


def series(values, dt=1.0):
    values = np.asarray(values, dtype=float)
    return DistanceTrace.from_series(np.arange(len(values)) * dt, values)


class TestInternalDistance:
    def test_pole_pair(self):
        assert internal_distance(np.diag([1.0, -1.0])) == pytest.approx(1.0, abs=1e-15)

    def test_offdiagonal(self):
        assert internal_distance(np.array([[0.0, 0.5j], [-0.5j, 0.0]])) == pytest.approx(0.5, abs=1e-15)

    def test_trace_required(self):
        with pytest.raises(ContractError):
            internal_distance(np.diag([1.0, 0.0]))

    def test_hermiticity_required(self):
        with pytest.raises(ContractError):
            internal_distance(np.array([[0.0, 1.0], [0.0, 0.0]]))

    @given(
        d=st.floats(-5, 5),
        re=st.floats(-5, 5),
        im=st.floats(-5, 5),
        scale=st.floats(-10, 10),
    )
    def test_norm_properties(self, d, re, im, scale):
        m = np.array([[d, re + 1j * im], [re - 1j * im, -d]])
        value = internal_distance(m)
        assert value >= 0
        assert abs(internal_distance(-m) - value) <= 1e-12 * (1 + value)
        assert abs(internal_distance(scale * m) - abs(scale) * value) <= 1e-12 * (1 + abs(scale) * value)
        assert abs(value - 0.5 * np.abs(np.linalg.eigvalsh(m)).sum()) <= 1e-12 * (1 + value)


class TestExternalDistance:
    def test_initial_product_state(self):
        s = build_difference_state(BlochPair(1.69), FIG2)
        d_total, i_ext = external_distance(s)
        assert d_total == pytest.approx(1.0, abs=1e-12)
        assert abs(i_ext) < 1e-12

    def test_single_block(self):
        blocks = np.zeros((4, 4))
        blocks[2] = [0.5, -0.5, 0.0, 0.0]
        d_total, i_ext = external_distance(FemeState(blocks, mode="difference"))
        assert d_total == pytest.approx(0.5)
        assert abs(i_ext) < 1e-15

    def test_needs_difference(self):
        with pytest.raises(ContractError):
            external_distance(build_state(np.diag([1.0, 0.0]), FIG2))

    @pytest.mark.parametrize("n_units", [1, 2, 3])
    def test_brute_force_small(self, n_units):
        rng = np.random.default_rng(n_units)
        for _ in range(5):
            s = random_difference_state(rng, n_units)
            assert abs(external_distance(s)[0] - full_space_trace_distance(s)) < 1e-12

    @settings(max_examples=30)
    @given(seed=st.integers(0, 2**32 - 1), n_units=st.integers(1, 40))
    def test_external_nonnegative(self, seed, n_units):
        s = random_difference_state(np.random.default_rng(seed), n_units)
        assert external_distance(s)[1] >= -1e-12


class TestBlpFromTrace:
    def test_worked_example(self):
        assert blp_from_trace(series([1.0, 0.4, 0.6, 0.3, 0.35])) == pytest.approx(0.25, abs=1e-15)

    def test_monotone_is_zero(self):
        assert blp_from_trace(series(np.exp(-np.linspace(0, 5, 50)))) == 0.0

    def test_accepts_array(self):
        assert blp_from_trace(np.array([0.2, 0.5, 0.1])) == pytest.approx(0.3)

    def test_floor_drops_roundoff(self):
        assert blp_from_trace(np.array([1.0, 0.5, 0.5 + 1e-14, 0.2])) == 0.0

    @settings(max_examples=25, deadline=None)
    @given(
        lam=st.sampled_from([0.0, 0.01, 0.05, 0.1, 0.2, 0.3]),
        g=st.floats(0.005, 0.3),
        n_units=st.integers(1, 30),
        theta=st.floats(0, 3.1),
    )
    def test_crossings_iff_backflow(self, lam, g, n_units, theta):
        p = ModelParams(lam, g, n_units)
        tr = distance_trace(BlochPair(theta), p, IntegratorConfig(t_end=40 * np.pi))
        has_up = any(direction > 0 for _, direction in tr.crossings)
        assert (blp_from_trace(tr) > 0) == has_up

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=60))
    def test_bounded_by_total_variation(self, values):
        v = np.array(values)
        assert 0 <= blp_from_trace(v) <= np.abs(np.diff(v)).sum() + 1e-12


class TestOnset:
    def test_first_upward_crossing(self):
        times = np.array([0.0, 1.0, 2.0, 3.0])
        tr = DistanceTrace.from_series(times, [1.0, 0.9, 0.8, 0.9], rate_int=[-0.3, -0.1, 0.1, 0.2])
        assert backflow_onset(tr) == pytest.approx(1.5, abs=1e-12)

    def test_no_backflow(self):
        times = np.linspace(0, 1, 5)
        tr = DistanceTrace.from_series(times, 1 - times, rate_int=-np.ones(5))
        assert backflow_onset(tr) is None


class TestTraces:
    def test_undriven_contractive(self):
        p = FIG2.replace(lambda0=0.0)
        tr = distance_trace(BlochPair(1.69), p, IntegratorConfig(t_end=200 * np.pi))
        assert np.all(tr.rate_int <= 1e-12)
        assert tr.crossings == ()
        assert blp_from_trace(tr) == 0.0

    def test_fig2_structure(self):
        tr = distance_trace(BlochPair(1.69), FIG2, IntegratorConfig(t_end=200 * np.pi))
        assert tr.rate_int[0] < 0
        assert np.all(tr.rate_total <= 1e-8)
        assert np.all(tr.i_ext >= -1e-12)
        assert blp_from_trace(tr) > 0
        assert any(d > 0 for _, d in tr.crossings)

    def test_closed_form_rate_matches_difference_quotient(self):
        s = build_difference_state(BlochPair(1.69), FIG2)
        cfg = IntegratorConfig(dt=2 * np.pi / 2000, t_end=60.0)
        rec = integrate(s, FIG2, cfg, keep_blocks=True)
        fd = np.gradient(rec.i_int, rec.times)
        for k in range(200, len(rec.times) - 1, 1500):
            if rec.i_int[k] > 0.01:
                exact = rate_closed_form(rec.snapshot(k), rec.times[k], FIG2)
                assert abs(exact - fd[k]) < 1e-6


class TestMeasure:
    def test_undriven_zero(self):
        res = blp_measure(FIG2.replace(lambda0=0.0), IntegratorConfig(t_end=100 * np.pi))
        assert res.value == 0.0
        assert res.t_r is None

    def test_angle_grid(self):
        grid = angle_grid(0.08)
        assert grid[0] == 0.0 and grid[-1] < np.pi
        assert np.allclose(np.diff(grid), 0.08)
        with pytest.raises(ValueError):
            angle_grid(0.0)

    def test_superposition_matches_direct_run(self):
        cfg = IntegratorConfig(t_end=40 * np.pi)
        basis = BasisTrajectories(FIG2, cfg, full_sphere=True)
        for theta, phi in [(0.3, 0.0), (1.69, 0.0), (2.2, 1.1)]:
            direct = distance_trace(BlochPair(theta, phi), FIG2, cfg)
            np.testing.assert_allclose(basis.i_int(theta, phi), direct.i_int, atol=1e-12)

    def test_restricted_basis_rejects_phi(self):
        basis = BasisTrajectories(FIG2, IntegratorConfig(t_end=np.pi))
        with pytest.raises(ValueError):
            basis.i_int(1.0, 0.5)

    def test_grid_tie_prefers_smallest_angles(self):
        # without drive every pair gives zero, so the first grid point wins
        res = blp_measure(FIG2.replace(lambda0=0.0), IntegratorConfig(t_end=10 * np.pi), restrict_phi=False)
        assert res.argmax_pair.theta == 0.0 and res.argmax_pair.phi == 0.0
