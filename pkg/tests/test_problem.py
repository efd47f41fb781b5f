import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import CapabilityError, ProblemNotFoundError
from src.jets import Jet
from src.problem import BoundaryData, eval_A_coeff, eval_A_layer0_coeff, eval_f_jet
from src.problems import list_problems, registry_get

from tests.conftest import reduced_source


class TestEpsSeriesMatrix:

    def test_value_and_leading_coefficient(self, ltp1):
        assert_allclose(ltp1.A.value(0.5, 1e-2), np.diag([1 / 3, 1.0, 1.0]))
        assert_allclose(ltp1.A.coeff(0.5, 0), np.diag([1 / 3, 1.0, 1.0]))
        assert_allclose(ltp1.A.coeff(0.5, 1), np.zeros((3, 3)))
        assert_allclose(eval_A_coeff(ltp1, 0.25, 0), np.diag([0.2, 1.0, 1.0]))

    def test_layer_coefficients_at_the_start(self, ltp1):
        s = 2.0
        # t/(1+t) at t = eps*s is eps*s - eps^2 s^2 + ...
        assert_allclose(eval_A_layer0_coeff(ltp1, s, 0), np.diag([0.0, 1.0, 1.0]))
        assert_allclose(eval_A_layer0_coeff(ltp1, s, 1), np.diag([s, 0.0, 0.0]))
        assert_allclose(eval_A_layer0_coeff(ltp1, s, 2), np.diag([-s ** 2, 0.0, 0.0]))

    def test_layer_coefficients_at_the_end(self, ltp1):
        xi = -1.5
        # d/dt t/(1+t) = 1/(1+t)^2 = 4/9 at t = 1/2
        assert_allclose(eval_A_layer0_coeff(ltp1, xi, 1, anchor='end')[0, 0], 4 / 9 * xi)

    def test_mixed_partial(self, ltp1):
        assert_allclose(ltp1.A.t_partial(0.5, 1, 0)[0, 0], 4 / 9, rtol=1e-12)
        assert_allclose(ltp1.A.t_partial(0.5, 0, 1), np.zeros((3, 3)), atol=1e-14)

    def test_order_beyond_smoothness(self, ltp1):
        with pytest.raises(CapabilityError):
            ltp1.A.coeff(0.1, ltp1.max_order + 1)


class TestVectorFieldJet:

    def test_reduced_solution_is_a_root(self, ltp1, ntp1):
        t = np.linspace(0.0, 0.5, 7)
        x = reduced_source(t)
        assert_allclose(ltp1.f.eval_many(x, t, 0.0), 0.0, atol=1e-15)
        assert_allclose(ntp1.f.eval_many(x, t, 0.0), 0.0, atol=1e-15)

    def test_jacobian_of_the_nonlinear_problem(self, ntp1):
        t = 0.2
        x = reduced_source(t) + np.array([0.3, 0.2, -0.4])
        expected = np.diag([1.0, 1.2 + 0.5 * 0.2, -1.2 + 0.5 * -0.4])
        assert_allclose(ntp1.f.jac(x, t, 0.0), expected, atol=1e-14)

    def test_batched_jacobians_match_single(self, ntp1):
        t = np.array([0.0, 0.1, 0.4])
        x = reduced_source(t) + 0.1
        batched = ntp1.f.jac_many(x, t, 0.0)
        for p in range(3):
            assert_allclose(batched[p], ntp1.f.jac(x[p], t[p], 0.0), atol=1e-14)

    def test_directional_derivative(self, ntp1):
        t = np.array([0.0, 0.3])
        x = reduced_source(t) + 0.2
        v = np.array([[1.0, 2.0, -1.0], [0.0, 1.0, 1.0]])
        expected = np.einsum('pij,pj->pi', ntp1.f.jac_many(x, t, 0.0), v)
        assert_allclose(ntp1.f.directional_many(x, v, t, 0.0), expected, atol=1e-14)

    def test_no_explicit_eps_dependence(self, ltp1):
        assert_allclose(ltp1.f.d_eps(np.ones(3), 0.3), 0.0)

    def test_jet_composition(self, ntp1):
        t = 0.1
        s = reduced_source(t)
        x = Jet.from_coefficients([s, [0.0, 1.0, 0.0], np.zeros(3)])
        out = eval_f_jet(ntp1, x, t, 2)
        # 1.1 eps + 0.25 eps^2 in the second component
        assert_allclose(out.c[:, 1], [0.0, 1.1, 0.25], atol=1e-14)

    def test_composition_needs_enough_order(self, ntp1):
        with pytest.raises(ValueError):
            eval_f_jet(ntp1, Jet.variable(np.zeros(3), 1.0, order=1), 0.0, 2)


class TestBoundaryData:

    def test_d_series(self):
        bc = BoundaryData(np.eye(2), np.zeros((2, 2)), [[1.0, 2.0], [0.5, 0.0]])
        assert_allclose(bc.d(0.1), [1.05, 2.0])
        assert_allclose(bc.d_coeff(3), [0.0, 0.0])

    def test_shapes_are_checked(self):
        with pytest.raises(ValueError):
            BoundaryData(np.eye(2), np.eye(3), [[0.0, 0.0]])

    def test_builtin_boundary_values(self, ltp1):
        s_end = reduced_source(0.5)
        assert_allclose(ltp1.bc.d_coeff(0), [s_end[0] + 0.1, s_end[1] + 0.1, 1.1])
        assert_allclose(ltp1.bc.d_coeff(1), np.zeros(3))


class TestRegistry:

    def test_listing(self):
        assert list_problems() == ['ltp1', 'ntp1']

    def test_horizon_override(self):
        assert registry_get('ltp1', T=2.0).T == 2.0

    def test_unknown_problem(self):
        with pytest.raises(ProblemNotFoundError) as e:
            registry_get('nope')
        assert 'ltp1' in str(e.value)

    def test_invalid_horizon(self):
        with pytest.raises(ValueError):
            registry_get('ntp1', T=-1.0)
