from math import factorial

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src import jets
from src.jets import Jet


class TestArithmetic:

    def test_square_of_variable(self):
        x = Jet.variable(1.0, 1.0, order=3)
        assert_allclose((x * x).c, [1.0, 2.0, 1.0, 0.0])

    def test_scalar_product_keeps_order(self):
        x = Jet.variable(2.0, 1.0, order=4)
        y = 3.0 * x
        assert y.order == 4
        assert_allclose(y.c, [6.0, 3.0, 0.0, 0.0, 0.0])

    def test_division_inverts_product(self):
        x = Jet.variable(2.0, 0.5, order=5)
        y = Jet.from_coefficients([1.0, -1.0, 0.25, 0.0, 3.0, 1.0])
        assert_allclose(((x * y) / y).c, x.c, atol=1e-13)

    def test_geometric_series(self):
        x = Jet.variable(0.0, 1.0, order=6)
        assert_allclose((1.0 / (1.0 - x)).c, np.ones(7))

    def test_integer_power(self):
        x = Jet.variable(1.0, 1.0, order=3)
        assert_allclose((x ** 3).c, [1.0, 3.0, 3.0, 1.0])
        assert_allclose((x ** -1).c, [1.0, -1.0, 1.0, -1.0])

    def test_mixed_orders_truncate_to_lower(self):
        a = Jet.variable(1.0, 1.0, order=2)
        b = Jet.variable(1.0, 1.0, order=5)
        assert (a + b).order == 2

    def test_matmul(self):
        A = Jet.from_coefficients([np.eye(2), [[0.0, 1.0], [0.0, 0.0]]])
        v = np.array([1.0, 2.0])
        out = A @ v
        assert_allclose(out.c, [[1.0, 2.0], [2.0, 0.0]])

    def test_numpy_operand_on_the_left(self):
        x = Jet.variable(1.0, 1.0, order=2)
        out = np.array(2.0) * x
        assert isinstance(out, Jet)
        assert_allclose(out.c, [2.0, 2.0, 0.0])


class TestElementaryFunctions:

    def test_exp_coefficients(self):
        x = Jet.variable(0.0, 1.0, order=6)
        assert_allclose(jets.exp(x).c, [1 / factorial(k) for k in range(7)])

    def test_log_of_exp(self):
        x = Jet.variable(0.3, 1.0, order=5)
        assert_allclose(jets.log(jets.exp(x)).c, x.c, atol=1e-13)

    def test_sin_cos_identity(self):
        x = Jet.from_coefficients([0.7, 1.0, -0.5, 0.2])
        s, c = jets.sin(x), jets.cos(x)
        assert_allclose((s * s + c * c).c, [1.0, 0.0, 0.0, 0.0], atol=1e-14)

    def test_sqrt_squared(self):
        x = Jet.variable(4.0, 1.0, order=4)
        assert_allclose((jets.sqrt(x) ** 2).c, x.c, atol=1e-14)

    def test_evaluate_matches_function(self):
        h = 1e-2
        x = Jet.variable(0.5, 1.0, order=8)
        assert jets.exp(x).evaluate(h) == pytest.approx(np.exp(0.5 + h), rel=1e-14)

    def test_plain_values_pass_through(self):
        assert jets.cos(0.0) == 1.0
        assert_allclose(jets.exp(np.zeros(3)), np.ones(3))


class TestStructure:

    def test_stack_mixes_jets_and_floats(self):
        x = Jet.variable(1.0, 1.0, order=2)
        out = jets.stack([x, 2.0, x * x])
        assert out.shape == (3,)
        assert_allclose(out.c[:, 1], [2.0, 0.0, 0.0])
        assert_allclose(out.c[:, 2], [1.0, 2.0, 1.0])

    def test_stack_without_jets_is_array(self):
        out = jets.stack([1.0, np.array([2.0, 3.0])])
        assert isinstance(out, np.ndarray)
        assert out.shape == (2, 2)

    def test_diag(self):
        t = Jet.variable(0.0, 2.0, order=1)
        D = jets.diag([t, 1.0])
        assert D.shape == (2, 2)
        assert_allclose(D.coeff(1), [[2.0, 0.0], [0.0, 0.0]])

    def test_coefficient_out_of_range(self):
        with pytest.raises(IndexError):
            Jet.variable(0.0, 1.0, order=1).coeff(2)

    def test_cannot_extend_by_truncation(self):
        with pytest.raises(ValueError):
            Jet.variable(0.0, 1.0, order=1).truncate(3)

    def test_division_by_vanishing_leading_coefficient(self):
        x = Jet.variable(0.0, 1.0, order=2)
        with pytest.raises(ZeroDivisionError):
            1.0 / x
