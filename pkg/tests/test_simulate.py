import numpy as np
import pytest
import scipy.linalg

from helpers import random_scaled_model
from kfptools.analysis import slow_manifold, steady_state
from kfptools.compiler import ScaledModel
from kfptools.expm import expm
from kfptools.simulate import (
    StiffnessError,
    default_t_max,
    phase_plane_sample,
    solve_exact,
    solve_numeric,
)


def irr(k=(0.35, 0.3)):
    return ScaledModel(("X1", "X2"), [[0, 0], [0.6, 0]], [0.25, 0.4], {0}, k)


def rev(k):
    return ScaledModel(("X1", "X2"), [[0, 0.15], [0.7, 0]], [0.25, 0.3], {0}, k)


class TestExpm:
    @pytest.mark.parametrize("scale", [1e-4, 1e-2, 0.3, 1, 5, 50, 500])
    def test_against_scipy(self, scale):
        rng = np.random.default_rng(int(scale * 1000))
        for n in (1, 2, 5, 12):
            A = rng.standard_normal((n, n)) * scale / n
            np.testing.assert_allclose(expm(A), scipy.linalg.expm(A), rtol=1e-11, atol=1e-13)

    def test_zero_and_diagonal(self):
        np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))
        d = np.array([-3.0, 0.5, 2.0])
        np.testing.assert_allclose(expm(np.diag(d)), np.diag(np.exp(d)), rtol=1e-14)

    def test_nilpotent(self):
        A = np.array([[0, 2.0, 0], [0, 0, 3.0], [0, 0, 0]])
        np.testing.assert_allclose(expm(A), np.eye(3) + A + A @ A / 2, rtol=0, atol=1e-15)


class TestSolveExact:
    def test_starts_unlabeled(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = random_scaled_model(rng)
            assert np.array_equal(solve_exact(m, [0.0]).values[0], np.ones(m.n_nodes))

    def test_first_pool_decouples(self):
        t = np.linspace(0, 40, 81)
        x = solve_exact(irr(), t).values
        np.testing.assert_allclose(x[:, 0], 0.25 + 0.75 * np.exp(-0.35 * t), rtol=0, atol=1e-14)

    def test_second_pool_closed_form(self):
        # x2' = k2 (0.6 x1 + 0.4 - x2) with x1 known, solved by variation of constants
        k1, k2 = 0.35, 0.3
        t = np.linspace(0, 40, 41)
        xss2 = 0.6 * 0.25 + 0.4
        c = 0.6 * 0.75 * k2 / (k2 - k1)
        x2 = xss2 + c * np.exp(-k1 * t) + (1 - xss2 - c) * np.exp(-k2 * t)
        np.testing.assert_allclose(solve_exact(irr(), t).values[:, 1], x2, atol=1e-13)

    def test_converges_to_steady_state(self):
        m = rev((1, 1 / 25))
        xss = steady_state(m).xbar_ss
        # the slow mode decays at about 0.036, so t = 200 still leaves ~4e-4
        lam, V = np.linalg.eig(m.system_matrix)
        coeff = np.linalg.solve(V, 1 - xss)
        for t in (200.0, 500.0):
            predicted = xss + (V * np.exp(lam * t)) @ coeff
            np.testing.assert_allclose(solve_exact(m, [t]).values[0], predicted.real, atol=1e-12)
        np.testing.assert_allclose(solve_exact(m, [500.0]).values[0], xss, rtol=0, atol=1e-6)

    def test_stays_in_unit_box(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            m = random_scaled_model(rng, k_ratio=1e3)
            t = np.concatenate([[0], np.geomspace(1e-3, 3 * default_t_max(m), 60)])
            x = solve_exact(m, t).values
            assert x.min() >= -1e-9 and x.max() <= 1 + 1e-9

    def test_semigroup(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            m = random_scaled_model(rng, k_ratio=1e3)
            t1, t2 = rng.uniform(0, default_t_max(m), 2)
            direct = solve_exact(m, [t1 + t2]).values[0]
            xss = steady_state(m).xbar_ss
            mid = solve_exact(m, [t1]).values[0]
            stepped = xss + expm(t2 * m.system_matrix) @ (mid - xss)
            np.testing.assert_allclose(direct, stepped, rtol=0, atol=1e-10)

    def test_rejects_unsorted_times(self):
        with pytest.raises(ValueError):
            solve_exact(irr(), [1.0, 0.5])


class TestSolveNumeric:
    def test_irreversible(self):
        t = np.linspace(0, 40, 50)
        diff = solve_numeric(irr(), t, rel_tol=1e-8).values - solve_exact(irr(), t).values
        assert np.abs(diff).max() < 1e-7

    def test_empty_times(self):
        tr = solve_numeric(irr(), [])
        assert tr.values.shape == (0, 2)

    def test_stiff_model_succeeds_or_reports(self):
        m = irr(k=(1000, 0.01))
        t = np.linspace(0, 500, 11)
        try:
            tr = solve_numeric(m, t, rel_tol=1e-8, max_steps=20_000)
        except StiffnessError:
            return
        assert np.abs(tr.values - solve_exact(m, t).values).max() <= 1e-7

    def test_step_budget_exhaustion_is_reported(self):
        with pytest.raises(StiffnessError):
            solve_numeric(irr(k=(1000, 0.01)), [500.0], max_steps=100)

    def test_rejects_bad_tolerance(self):
        with pytest.raises(ValueError):
            solve_numeric(irr(), [1.0], rel_tol=0)


class TestPhasePlane:
    def test_case1_fast_nullcline(self):
        m = rev((1, 1 / 25))
        pp = phase_plane_sample(m)
        coef, const = pp.nullcline_coefficients[0], pp.nullcline_constants[0]
        sm = slow_manifold(m, 0)
        np.testing.assert_allclose(coef, sm.coefficients)
        assert const == sm.constant
        for x1 in (0.3, 0.5, 0.9):
            x2 = -(coef[0] * x1 + const) / coef[1]
            assert x2 == pytest.approx((x1 - 0.25) / 0.15)

    def test_field_matches_rhs(self):
        m = rev((1, 1 / 25))
        pp = phase_plane_sample(m, resolution=5)
        i, j = 2, 3
        x = np.array([pp.grid_x1[i, j], pp.grid_x2[i, j]])
        np.testing.assert_allclose([pp.field_x1[i, j], pp.field_x2[i, j]], m.rhs(x), atol=1e-15)

    def test_equilibrium(self):
        m = rev((1, 1 / 25))
        pp = phase_plane_sample(m)
        np.testing.assert_allclose(pp.equilibrium, steady_state(m).xbar_ss, atol=1e-15)
        np.testing.assert_allclose(m.rhs(pp.equilibrium), 0, atol=1e-15)
        np.testing.assert_array_equal(pp.trajectory.values[0], [1, 1])

    def test_case2_trajectory_near_manifold(self):
        # the start lies on the manifold; deviation along the way is O(k_slow / k_fast)
        m = rev((1 / 25, 1))
        pp = phase_plane_sample(m, n_times=2000)
        x = pp.trajectory.values
        dev = np.abs(x[:, 1] - (0.7 * x[:, 0] + 0.3))
        assert dev.max() <= 0.45 * (1 / 25)

    def test_requires_two_nodes(self):
        m = ScaledModel(("A",), [[0]], [0.5], {0}, [1])
        with pytest.raises(ValueError):
            phase_plane_sample(m)


def test_case2_confinement_scales_with_rate_ratio():
    # residual bound eps * C with C frozen from the eps = 1/25 case
    C = 0.45
    for eps in (1 / 10, 1 / 25, 1 / 100, 1 / 1000):
        m = rev((eps, 1))
        t = np.concatenate([[0], np.geomspace(1e-4, default_t_max(m), 3000)])
        x = solve_exact(m, t).values
        r = np.abs(slow_manifold(m, 1).residual(x))
        assert r.max() <= eps * C
