import numpy as np
import pytest
from numpy.testing import assert_allclose

from src import jets
from src.errors import StructureError
from src.pencil import Verdict, classify_and_verify, diagonalize_at_T, pencil_spectrum, weierstrass_normalize
from src.problems import LinearTurningProblem
from src.regular import build_regular_series

from tests.conftest import NonTurningProblem


class SlowEndProblem(LinearTurningProblem):
    """The linear problem with the growing end direction slowed down: f_3 = -0.5 (1+t)(x_3 - s_3)."""

    @classmethod
    def name(cls) -> str:
        return 'slow-end'

    def vector_field(self, x, t, eps):
        s = self.source(t)
        return jets.stack([x[0] - s[0], (1 + t) * (x[1] - s[1]), -0.5 * (1 + t) * (x[2] - s[2])])


def hidden_pencil(Omega: np.ndarray, seed: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """A pencil (A0, J0) whose normal form diag(0, I), Omega is hidden by well conditioned random equivalences."""
    rng = np.random.default_rng(seed)
    n = Omega.shape[0]
    L = np.eye(n) + 0.2 * rng.standard_normal((n, n))
    R = np.eye(n) + 0.2 * rng.standard_normal((n, n))
    H = np.diag(np.r_[0.0, np.ones(n - 1)])
    return L @ H @ R, L @ Omega @ R


def assert_normal_form(A0, J0, P, Q, Omega):
    n = A0.shape[0]
    assert_allclose(P @ A0 @ Q, np.diag(np.r_[0.0, np.ones(n - 1)]), atol=1e-9)
    assert_allclose(P @ J0 @ Q, Omega, atol=1e-9)


class TestSpectrum:

    def test_finite_and_infinite_parts(self):
        spectrum = pencil_spectrum(np.diag([1.0, 1.0, -1.0]), np.diag([0.0, 1.0, 1.0]))
        assert spectrum.infinite_count == 1
        assert_allclose(spectrum.finite, [1.0, -1.0])

    def test_singular_pencil(self):
        J = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(StructureError):
            pencil_spectrum(J, J.copy())


class TestNormalization:

    def test_builtin_problem_at_the_turning_point(self):
        A0, J0 = np.diag([0.0, 1.0, 1.0]), np.diag([1.0, 1.0, -1.0])
        P, Q = weierstrass_normalize(A0, J0, 1, 1)
        assert_normal_form(A0, J0, P, Q, np.diag([1.0, 1.0, -1.0]))

    def test_semisimple_multiple_eigenvalue(self):
        Omega = np.diag([1.0, 2.0, 2.0, -0.5])
        A0, J0 = hidden_pencil(Omega)
        P, Q = weierstrass_normalize(A0, J0, 2, 1)
        assert_normal_form(A0, J0, P, Q, Omega)

    def test_jordan_chain(self):
        Omega = np.diag([1.0, 2.0, 2.0, -0.5])
        Omega[1, 2] = 1.0
        A0, J0 = hidden_pencil(Omega, seed=11)
        P, Q = weierstrass_normalize(A0, J0, 2, 1)
        assert_normal_form(A0, J0, P, Q, Omega)

    def test_multiplicities_must_match(self):
        A0, J0 = np.diag([0.0, 1.0, 1.0]), np.diag([1.0, 1.0, -1.0])
        with pytest.raises(StructureError):
            weierstrass_normalize(A0, J0, 2, 0)

    def test_nonsingular_leading_matrix(self):
        with pytest.raises(StructureError):
            weierstrass_normalize(np.eye(3), np.diag([1.0, 1.0, -1.0]), 1, 1)

    def test_diagonalization_at_the_end(self):
        U, W = diagonalize_at_T(np.diag([1 / 3, 1.0, 1.0]), np.diag([1.0, 1.5, -1.5]))
        assert_allclose(W, [3.0, 1.5, -1.5])
        assert_allclose(U, np.eye(3), atol=1e-14)

    def test_complex_spectrum_at_the_end(self):
        with pytest.raises(StructureError):
            diagonalize_at_T(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


class TestClassification:

    def test_linear_problem_passes(self, ltp1, ltp1_series):
        structure, report = classify_and_verify(ltp1, ltp1_series)
        assert report.passed, report.to_text()
        assert (structure.p, structure.q) == (1, 1)
        assert structure.eta1 == pytest.approx(1.0)
        assert structure.eta2 == pytest.approx(-1.0)
        assert_allclose(structure.W, [3.0, 1.5, -1.5], atol=1e-10)
        assert structure.alpha_star == pytest.approx(1.0)
        assert structure.beta_star == pytest.approx(1.5)

    def test_end_rate_ignores_growing_directions(self):
        problem = SlowEndProblem()
        structure, report = classify_and_verify(problem, build_regular_series(problem, 0))
        assert report.passed, report.to_text()
        assert_allclose(structure.W, [3.0, 1.5, -0.75], atol=1e-10)
        assert structure.alpha_star == pytest.approx(0.5)
        assert structure.beta_star == pytest.approx(1.5)

    def test_normalizers_of_the_linear_problem(self, ltp1_structure):
        s = ltp1_structure
        assert_allclose(s.P @ np.diag([0.0, 1.0, 1.0]) @ s.Q, np.diag([0.0, 1.0, 1.0]), atol=1e-12)
        assert_allclose(s.Omega, np.diag([1.0, 1.0, -1.0]), atol=1e-12)
        assert_allclose(s.Lambda_plus, [[1.0]], atol=1e-12)
        assert_allclose(s.Lambda_minus, [[-1.0]], atol=1e-12)

    def test_eigenvalue_crossing_on_a_long_horizon(self):
        problem = LinearTurningProblem(T=2.0)
        _, report = classify_and_verify(problem, build_regular_series(problem, 0))
        check = report.check('distinct_eigenvalues')
        assert check.verdict == Verdict.FAIL
        assert check.witness_t == pytest.approx(1.0, abs=0.05)
        assert not report.passed

    def test_no_turning_point(self):
        problem = NonTurningProblem()
        structure, report = classify_and_verify(problem, build_regular_series(problem, 0))
        assert structure is None
        assert report.check('turning_point_pencil').verdict == Verdict.FAIL

    def test_report_outputs(self, ltp1, ltp1_series):
        _, report = classify_and_verify(ltp1, ltp1_series)
        df = report.to_frame()
        assert list(df.columns) == ['name', 'verdict', 'witness_t', 'witness_value']
        assert set(df['verdict']) == {'pass'}
        assert 'eigenvalue_sign_pattern' in report.to_text()
        with pytest.raises(KeyError):
            report.check('no_such_check')
