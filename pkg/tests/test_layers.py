import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import ContractionError
from src.layers import (LayerGrid, algebraic_first_component, decay_fit, layer_grid, layer_inputs, pi0_residual,
                        pi0_solve, pi_forcing, pik_solve, propagator, q0_residual, q0_solve, q_forcing, qk_solve)
from src.pencil import classify_and_verify
from src.regular import build_regular_series


@pytest.fixture(scope='module')
def ltp1_inputs(ltp1, ltp1_structure, ltp1_series, ltp1_leading):
    pi, q = ltp1_leading
    start = layer_inputs(ltp1, ltp1_structure, 'start', ltp1_series, [pi])
    end = layer_inputs(ltp1, ltp1_structure, 'end', ltp1_series, [q])
    return start, end


@pytest.fixture(scope='module')
def ntp1_leading(ntp1, ntp1_structure):
    pi = pi0_solve(ntp1, ntp1_structure, [0.1], layer_grid(ntp1_structure, 'start'))
    q = q0_solve(ntp1, ntp1_structure, [0.1, 0.1], layer_grid(ntp1_structure, 'end'))
    return pi, q


class TestLayerGrid:

    def test_graded_nodes(self):
        grid = LayerGrid.build('start', rate=1.0, n_nodes=50)
        assert len(grid) == 50
        assert grid.distance[0] == 0.0
        assert grid.extent == pytest.approx(40.0)
        h = np.diff(grid.distance)
        assert np.all(h > 0)
        assert h[0] < h[-1]

    def test_slow_decay_widens_the_domain(self):
        assert LayerGrid.build('end', rate=0.5).extent == pytest.approx(80.0)

    def test_end_nodes_are_non_positive(self, ltp1_structure):
        grid = layer_grid(ltp1_structure, 'end', n_nodes=20, extent=10.0)
        assert np.all(grid.nodes <= 0)
        assert grid.nodes[-1] == pytest.approx(-10.0)


class TestLeadingLayers:

    def test_linear_start_layer(self, ltp1_leading):
        pi, _ = ltp1_leading
        tau = pi.grid.nodes
        assert_allclose(pi.values[:, 2], 0.1 * np.exp(-tau), atol=1e-10)
        assert_allclose(pi.values[:, :2], 0.0, atol=1e-12)
        assert_allclose(pi.anchor_value, [0.0, 0.0, 0.1], atol=1e-12)

    def test_linear_end_layer(self, ltp1_leading):
        _, q = ltp1_leading
        xi = q.grid.nodes
        assert_allclose(q.values[:, 0], 0.1 * np.exp(3 * xi), atol=1e-10)
        assert_allclose(q.values[:, 1], 0.1 * np.exp(1.5 * xi), atol=1e-10)
        assert_allclose(q.values[:, 2], 0.0, atol=1e-12)

    def test_nonlinear_start_layer(self, ntp1_leading):
        pi, _ = ntp1_leading
        tau = pi.grid.nodes
        assert_allclose(pi.values[:, 2], 1 / (0.25 + 9.75 * np.exp(tau)), atol=1e-8)
        assert_allclose(pi.values[:, 1], 0.0, atol=1e-12)

    def test_nonlinear_end_layer(self, ntp1_leading):
        _, q = ntp1_leading
        xi = q.grid.nodes
        assert_allclose(q.values[:, 1], 1 / (-1 / 6 + 61 / 6 * np.exp(-1.5 * xi)), atol=1e-8)
        assert_allclose(q.values[:, 0], 0.1 * np.exp(3 * xi), atol=1e-10)

    def test_fixed_point_residuals(self, ntp1, ntp1_structure, ntp1_leading):
        pi, q = ntp1_leading
        assert pi0_residual(ntp1, ntp1_structure, pi) < 1e-10
        assert q0_residual(ntp1, ntp1_structure, q) < 1e-10

    def test_interpolation_and_slopes(self, ltp1_leading):
        pi, q = ltp1_leading
        assert pi.eval(1.3)[2] == pytest.approx(0.1 * np.exp(-1.3), abs=1e-8)
        assert pi.derivative(1.3)[2] == pytest.approx(-0.1 * np.exp(-1.3), abs=1e-7)
        assert q.eval(-0.7)[0] == pytest.approx(0.1 * np.exp(-2.1), abs=1e-8)

    def test_zero_beyond_the_domain(self, ltp1_leading):
        pi, q = ltp1_leading
        assert_allclose(pi.eval([-1.0, pi.grid.extent + 1.0]), 0.0)
        assert_allclose(q.eval(1.0), 0.0)

    def test_decay_estimates(self, ltp1_leading):
        pi, q = ltp1_leading
        assert pi.decay.rate == pytest.approx(1.0, rel=1e-3)
        assert pi.decay.kappa == pytest.approx(0.1, rel=1e-3)
        assert q.decay.rate == pytest.approx(1.5, rel=1e-3)

    def test_decay_fit_window(self, ltp1_leading):
        pi, _ = ltp1_leading
        fit = decay_fit(pi)
        first, last = fit.fit_window
        norms = np.abs(pi.values).max(axis=1)
        assert norms[first] <= 0.1 * norms.max()
        assert norms[last] >= 1e-10 * norms.max()
        # the envelope bounds every sample of the window
        d = pi.grid.distance[first:last + 1]
        assert np.all(norms[first:last + 1] <= fit.kappa * np.exp(-fit.rate * d) * (1 + 1e-12))

    def test_zero_constant_gives_zero_layer(self, ltp1, ltp1_structure):
        pi = pi0_solve(ltp1, ltp1_structure, [0.0], layer_grid(ltp1_structure, 'start', n_nodes=50))
        assert_allclose(pi.values, 0.0)
        assert pi.decay.undefined

    def test_parameter_shape(self, ltp1, ltp1_structure):
        with pytest.raises(ValueError):
            pi0_solve(ltp1, ltp1_structure, [0.1, 0.2], layer_grid(ltp1_structure, 'start'))
        with pytest.raises(ValueError):
            q0_solve(ltp1, ltp1_structure, [np.nan, 0.1], layer_grid(ltp1_structure, 'end'))

    def test_iteration_budget(self, ntp1, ntp1_structure):
        with pytest.raises(ContractionError) as e:
            pi0_solve(ntp1, ntp1_structure, [0.1], layer_grid(ntp1_structure, 'start'), max_iter=1)
        assert e.value.iterations == 1

    def test_frame_layout(self, ltp1_leading):
        pi, _ = ltp1_leading
        df = pi.to_frame()
        assert list(df.columns) == ['stretched_time', 'component', 'value', 'order', 'side']
        assert len(df) == 3 * len(pi.grid)


def test_algebraic_component_of_coupled_problem(coupled):
    structure, _ = classify_and_verify(coupled, build_regular_series(coupled, 0))
    assert algebraic_first_component(coupled, structure, np.array([0.2, 0.0])) == pytest.approx(-0.1, abs=1e-12)


class TestTruncation:

    def test_doubling_the_start_domain(self, ntp1, ntp1_structure, ntp1_leading):
        pi, _ = ntp1_leading
        grid = layer_grid(ntp1_structure, 'start', n_nodes=2 * len(pi.grid), extent=2 * pi.grid.extent)
        wide = pi0_solve(ntp1, ntp1_structure, [0.1], grid)
        assert_allclose(wide.eval(pi.grid.nodes), pi.values, atol=1e-8)

    def test_doubling_the_end_domain(self, ntp1, ntp1_structure, ntp1_leading):
        _, q = ntp1_leading
        grid = layer_grid(ntp1_structure, 'end', n_nodes=2 * len(q.grid), extent=2 * q.grid.extent)
        wide = q0_solve(ntp1, ntp1_structure, [0.1, 0.1], grid)
        assert_allclose(wide.eval(q.grid.nodes), q.values, atol=1e-8)

    def test_zero_anchor_data(self, ntp1, ntp1_structure):
        q = q0_solve(ntp1, ntp1_structure, [0.0, 0.0], layer_grid(ntp1_structure, 'end', n_nodes=50))
        assert_allclose(q.values, 0.0, atol=1e-12)

class TestPropagator:

    def test_stable_directions(self, ltp1, ltp1_structure, ltp1_leading):
        prop = propagator(ltp1, ltp1_structure, 'start', ltp1_leading[0])
        assert prop.apply('plus', 2.0, 0.0, np.ones(1))[0] == pytest.approx(np.exp(-2.0), rel=1e-8)
        assert prop.apply('minus', 0.0, 3.0, np.ones(1))[0] == pytest.approx(np.exp(-3.0), rel=1e-8)

    def test_unstable_direction_is_refused(self, ltp1, ltp1_structure, ltp1_leading):
        prop = propagator(ltp1, ltp1_structure, 'start', ltp1_leading[0])
        with pytest.raises(ValueError):
            prop.apply('plus', 0.0, 1.0, np.ones(1))

    def test_end_generator(self, ltp1, ltp1_structure, ltp1_leading):
        prop = propagator(ltp1, ltp1_structure, 'end', ltp1_leading[1])
        assert_allclose(prop.generator(-1.0), np.diag([3.0, 1.5, -1.5]), atol=1e-12)

    @pytest.mark.parametrize('side, which, path', [
        ('start', 'minus', (0.5, 2.0, 5.0)),
        ('start', 'plus', (6.0, 2.5, 0.2)),
        ('end', 'plus', (-0.5, -2.0, -4.5)),
        ('end', 'minus', (-4.0, -2.5, -0.3)),
    ])
    def test_cocycle(self, ntp1, ntp1_structure, ntp1_leading, side, which, path):
        leading = ntp1_leading[0] if side == 'start' else ntp1_leading[1]
        prop = propagator(ntp1, ntp1_structure, side, leading)
        s, t, u = path
        rng = np.random.default_rng(3)
        sl = prop.block(which)
        v = rng.standard_normal(sl.stop - sl.start)
        direct = prop.apply(which, s, u, v)
        composed = prop.apply(which, t, u, prop.apply(which, s, t, v))
        assert np.linalg.norm(composed - direct) <= 1e-9 * np.linalg.norm(direct)

    def test_side_must_match(self, ltp1, ltp1_structure, ltp1_leading):
        with pytest.raises(ValueError):
            propagator(ltp1, ltp1_structure, 'end', ltp1_leading[0])


class TestHigherOrderLayers:

    def test_start_forcing(self, ltp1, ltp1_inputs):
        start, _ = ltp1_inputs
        tau = start.grid.nodes
        r = pi_forcing(ltp1, start, 1)
        assert_allclose(r[:, 2], -0.1 * tau * np.exp(-tau), atol=1e-10)
        assert_allclose(r[:, :2], 0.0, atol=1e-10)

    def test_first_order_start_layer(self, ltp1, ltp1_structure, ltp1_inputs):
        start, _ = ltp1_inputs
        tau = start.grid.nodes
        for a in (0.0, 0.2):
            pi1 = pik_solve(ltp1, ltp1_structure, 1, [a], start)
            assert_allclose(pi1.values[:, 2], np.exp(-tau) * (a - 0.05 * tau ** 2), atol=1e-7)
            assert_allclose(pi1.values[:, :2], 0.0, atol=1e-9)

    def test_first_order_end_layer(self, ltp1, ltp1_structure, ltp1_inputs):
        _, end = ltp1_inputs
        xi = end.grid.nodes
        q1 = qk_solve(ltp1, ltp1_structure, 1, [0.05, -0.02], end)
        assert_allclose(q1.values[:, 0], np.exp(3 * xi) * (0.05 - 0.2 * xi ** 2), atol=1e-7)
        assert_allclose(q1.values[:, 1], np.exp(1.5 * xi) * (-0.02 + 0.05 * xi ** 2), atol=1e-7)
        assert_allclose(q1.values[:, 2], 0.0, atol=1e-9)

    def test_synthetic_forcing(self, ltp1, ltp1_structure, ltp1_inputs):
        start, _ = ltp1_inputs
        tau = start.grid.nodes
        layer = pik_solve(ltp1, ltp1_structure, 1, [0.0], start,
                          forcing=lambda s: np.array([0.0, 0.0, np.exp(-2 * s)]))
        assert_allclose(layer.values[:, 2], np.exp(-tau) - np.exp(-2 * tau), atol=1e-8)

    def test_superposition_in_anchor_and_forcing(self, ntp1, ntp1_structure, ntp1_series, ntp1_leading):
        pi, _ = ntp1_leading
        start = layer_inputs(ntp1, ntp1_structure, 'start', ntp1_series, [pi])

        def r1(s):
            return np.array([0.1 * np.exp(-s), 0.0, np.exp(-2 * s)])

        def r2(s):
            return np.array([0.0, 0.3 * s * np.exp(-s), -0.5 * np.exp(-s)])

        first = pik_solve(ntp1, ntp1_structure, 1, [0.2], start, forcing=r1)
        second = pik_solve(ntp1, ntp1_structure, 1, [-0.7], start, forcing=r2)
        both = pik_solve(ntp1, ntp1_structure, 1, [-0.5], start, forcing=lambda s: r1(s) + r2(s))
        assert_allclose(first.values + second.values, both.values, atol=1e-9)

    def test_forcing_needs_lower_orders(self, ltp1, ltp1_inputs):
        start, end = ltp1_inputs
        with pytest.raises(ValueError):
            pi_forcing(ltp1, start, 2)
        with pytest.raises(ValueError):
            q_forcing(ltp1, start, 1)

    def test_parameter_length(self, ltp1, ltp1_structure, ltp1_inputs):
        _, end = ltp1_inputs
        with pytest.raises(ValueError):
            qk_solve(ltp1, ltp1_structure, 1, [0.1], end)
