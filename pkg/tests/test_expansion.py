from os import path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import CapabilityError, StructureError
from src.expansion import assemble, build_expansion
from src.problems import LinearTurningProblem

from tests.conftest import reduced_source


@pytest.fixture(scope='module')
def ltp1_bundle0(ltp1, settings):
    return build_expansion(ltp1, 0, settings)


@pytest.fixture(scope='module')
def ltp1_bundle1(ltp1, settings):
    return build_expansion(ltp1, 1, settings)


class TestAssembly:

    def test_value_at_the_turning_point(self, ltp1_bundle0):
        assert_allclose(assemble(ltp1_bundle0, 0.0, 1e-3), [1.0, 1.0, 1.1], atol=1e-10)

    def test_value_at_the_end(self, ltp1_bundle0):
        expected = reduced_source(0.5) + np.array([0.1, 0.1, 0.0])
        assert_allclose(assemble(ltp1_bundle0, 0.5, 1e-3), expected, atol=1e-10)

    def test_outer_region_follows_reduced_solution(self, ltp1_bundle0):
        t = np.linspace(0.1, 0.4, 7)
        assert_allclose(ltp1_bundle0(t, 1e-3), reduced_source(t), atol=1e-11)

    def test_boundary_layer_profile(self, ltp1_bundle0):
        eps = 1e-2
        t = np.array([0.0, 0.01, 0.02])
        expected = np.cos(t) + 0.1 * np.exp(-t / eps)
        assert_allclose(assemble(ltp1_bundle0, t, eps)[:, 2], expected, atol=1e-9)

    def test_vectorized_shape(self, ltp1_bundle0):
        assert assemble(ltp1_bundle0, np.linspace(0.0, 0.5, 11), 1e-2).shape == (11, 3)
        assert assemble(ltp1_bundle0, 0.25, 1e-2).shape == (3,)


class TestFirstOrder:

    def test_layers_and_constants(self, ltp1_bundle1):
        assert len(ltp1_bundle1.pi_layers) == 2
        assert len(ltp1_bundle1.q_layers) == 2
        higher = ltp1_bundle1.constants.higher[1]
        assert_allclose(higher.b_kp, [-1 / 3, np.exp(-0.5) / 1.5], atol=1e-9)

    def test_boundary_condition_holds_for_every_eps(self, ltp1, ltp1_bundle1):
        for eps in (1e-2, 1e-3):
            x0, xT = assemble(ltp1_bundle1, 0.0, eps), assemble(ltp1_bundle1, ltp1.T, eps)
            assert_allclose(ltp1.bc.M @ x0 + ltp1.bc.N @ xT, ltp1.bc.d(eps), atol=1e-9)

    def test_start_layer_correction(self, ltp1_bundle1):
        eps = 1e-2
        tau = np.array([0.5, 1.0, 2.0])
        x = assemble(ltp1_bundle1, eps * tau, eps)
        t = eps * tau
        expected = (np.cos(t) + eps * np.sin(t) / (1 + t)
                    + 0.1 * np.exp(-tau) - 0.05 * eps * tau ** 2 * np.exp(-tau))
        assert_allclose(x[:, 2], expected, atol=1e-8)


class TestFailures:

    def test_order_beyond_smoothness(self, ltp1, settings):
        with pytest.raises(CapabilityError):
            build_expansion(ltp1, ltp1.max_order, settings)

    def test_negative_order(self, ltp1, settings):
        with pytest.raises(ValueError):
            build_expansion(ltp1, -1, settings)

    def test_structure_violation(self, settings):
        with pytest.raises(StructureError) as e:
            build_expansion(LinearTurningProblem(T=2.0), 0, settings)
        assert 'distinct_eigenvalues' in str(e.value)


def test_csv_export(ltp1_bundle0, tmp_path):
    saved = ltp1_bundle0.save_csv(str(tmp_path))
    assert len(saved) == 3
    assert all(path.isfile(p) for p in saved)
    df = ltp1_bundle0.sample_frame(1e-2, count=5)
    assert list(df.columns) == ['t', 'component', 'value']
    assert len(df) == 15
