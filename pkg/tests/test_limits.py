"""Tests of the closed-form limit drift and diffusion coefficients."""

import math

import numpy as np
import pytest

from revolve.limits import (
    BalanceError,
    DiffusionLimit,
    GaussianSpec,
    discrete_limit_coefficients,
    gaussian_law_at,
    limit_coefficients,
)
from revolve.operator_lab import lab_limit_coefficients, solve_perturbation, gaussian_bump
from revolve.profiles import Atom, FirstAngleSine, VelocityProfile, builtin_profile
from revolve.sphere import build_grid

RES = {2: 32, 3: 24, 4: 16, 5: 12, 6: 14}


def grid_for(n):
    return build_grid(n, RES[n])


class TestSymmetricLimit:
    def test_msre_n3(self):
        limit = limit_coefficients(builtin_profile("msre_const", 3, c=1.0), grid_for(3))
        np.testing.assert_allclose(limit.drift, np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(limit.diffusion, np.eye(3) / 3.0, atol=1e-8)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    @pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
    def test_msre_all_dimensions(self, n, c):
        limit = limit_coefficients(builtin_profile("msre_const", n, c=c), grid_for(n))
        off = limit.diffusion - np.diag(np.diag(limit.diffusion))
        assert np.max(np.abs(off)) <= 1e-10
        assert np.max(np.abs(np.diag(limit.diffusion) - c * c / n)) <= 1e-8
        assert np.max(np.abs(limit.drift)) <= 1e-9


class TestExampleProfiles:
    def test_atomic_example(self):
        limit = limit_coefficients(builtin_profile("example3_atoms", 2), grid_for(2))
        np.testing.assert_allclose(
            limit.drift, [0.0, 1.0 / (2.0 * math.pi)], atol=1e-8
        )
        np.testing.assert_allclose(
            limit.diffusion, np.diag([1.0 / math.pi, 0.0]), atol=1e-8
        )

    def test_step_plane(self):
        limit = limit_coefficients(
            builtin_profile("step_half_sphere", 2, c=1.0, c1=1.0), grid_for(2)
        )
        np.testing.assert_allclose(limit.drift, [0.0, -1.0 / math.pi], atol=1e-8)
        np.testing.assert_allclose(limit.diffusion, 0.5 * np.eye(2), atol=1e-8)

    def test_step_n3(self):
        limit = limit_coefficients(
            builtin_profile("step_half_sphere", 3, c=1.0, c1=1.0), grid_for(3)
        )
        assert abs(abs(limit.drift[2]) - 0.25) <= 1e-8
        assert limit.drift[2] < 0.0
        np.testing.assert_allclose(limit.diffusion, np.eye(3) / 3.0, atol=1e-8)

    def test_paper_sign_recorded(self):
        limit = limit_coefficients(builtin_profile("example3_atoms", 2), grid_for(2))
        np.testing.assert_array_equal(limit.drift_paper_sign, -limit.drift)


class TestCoefficientStructure:
    def test_diffusion_ignores_c1_and_drift_ignores_c(self):
        g = grid_for(3)
        base = builtin_profile("step_half_sphere", 3, c=1.0, c1=1.0)
        other_c1 = builtin_profile("step_half_sphere", 3, c=1.0, c1=0.3)
        other_c = builtin_profile("step_half_sphere", 3, c=2.0, c1=1.0)
        l0, l1, l2 = (limit_coefficients(p, g) for p in (base, other_c1, other_c))
        np.testing.assert_array_equal(l0.diffusion, l1.diffusion)
        np.testing.assert_array_equal(l0.drift, l2.drift)

    def test_quadratic_scaling_in_c(self):
        g = grid_for(3)
        a1 = limit_coefficients(builtin_profile("msre_const", 3, c=1.0), g).diffusion
        a2 = limit_coefficients(builtin_profile("msre_const", 3, c=2.0), g).diffusion
        np.testing.assert_array_equal(a2, 4.0 * a1)

    def test_linear_scaling_in_c1(self):
        g = grid_for(2)
        d1 = limit_coefficients(
            builtin_profile("step_half_sphere", 2, c=1.0, c1=1.0), g
        ).drift
        d2 = limit_coefficients(
            builtin_profile("step_half_sphere", 2, c=1.0, c1=2.0), g
        ).drift
        np.testing.assert_array_equal(d2, 2.0 * d1)

    def test_balance_violation_raises(self):
        p = VelocityProfile(2, continuous_c=FirstAngleSine())
        with pytest.raises(BalanceError) as err:
            limit_coefficients(p, grid_for(2))
        assert err.value.report.residual_norm == pytest.approx(0.5, abs=1e-8)

    def test_type_invariants_enforced(self):
        with pytest.raises(ValueError):
            DiffusionLimit(2, np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            DiffusionLimit(2, np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestAgainstOperatorLab:
    def test_random_balanced_profiles_agree(self):
        # balanced planar speeds: any harmonic except frequency one
        rng = np.random.default_rng(77)
        g = grid_for(2)
        for _ in range(20):
            a0, a2, b2, d1, d2 = rng.normal(size=5)

            c_fn = _PlaneHarmonics(a0, a2, b2)
            c1_fn = _PlaneHarmonics(d1, d2, 0.0)
            p = VelocityProfile(2, continuous_c=c_fn, continuous_c1=c1_fn)
            limit = limit_coefficients(p, g)
            drift_lab, diffusion_lab = lab_limit_coefficients(p, g)
            np.testing.assert_allclose(drift_lab, limit.drift, atol=1e-8)
            np.testing.assert_allclose(diffusion_lab, limit.diffusion, atol=1e-8)
            sol = solve_perturbation(p, gaussian_bump(np.zeros(2), 1.0), np.zeros(2), g)
            np.testing.assert_allclose(sol.diffusion, limit.diffusion, atol=1e-8)
            np.testing.assert_allclose(sol.drift, limit.drift, atol=1e-8)


class _PlaneHarmonics:
    """a0 + a2 cos(2 theta) + b2 sin(2 theta): balanced in the plane."""

    def __init__(self, a0, a2, b2):
        self.a0, self.a2, self.b2 = a0, a2, b2

    def __call__(self, angles):
        t = angles[..., 0]
        return self.a0 + self.a2 * np.cos(2 * t) + self.b2 * np.sin(2 * t)


class TestDiscreteLaw:
    def test_four_compass_directions(self):
        angles = np.array([[0.0], [math.pi / 2], [math.pi], [3 * math.pi / 2]])
        p = np.full(4, 0.25)
        limit = discrete_limit_coefficients(2, angles, p, np.ones(4), np.zeros(4))
        np.testing.assert_allclose(limit.diffusion, 0.5 * np.eye(2), atol=1e-14)
        np.testing.assert_allclose(limit.drift, np.zeros(2), atol=1e-14)

    def test_count_normalized_atomic_example(self):
        p = builtin_profile("example3_atoms", 2)
        angles = np.stack([a.angles for a in p.atoms])
        probs = np.full(3, 1.0 / 3.0)
        c = np.array([a.c_value for a in p.atoms])
        c1 = np.array([a.c1_value for a in p.atoms])
        limit = discrete_limit_coefficients(2, angles, probs, c, c1)
        # count normalization differs from the 1/N convention by design
        np.testing.assert_allclose(limit.drift, [0.0, 1.0 / 3.0], atol=1e-14)
        np.testing.assert_allclose(limit.diffusion, np.diag([2.0 / 3.0, 0.0]), atol=1e-14)

    def test_unbalanced_discrete_raises(self):
        with pytest.raises(BalanceError):
            discrete_limit_coefficients(
                2, np.array([[0.0]]), np.array([1.0]), np.array([1.0]), np.array([0.0])
            )

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            discrete_limit_coefficients(
                2, np.array([[0.0], [1.0]]), np.array([0.7, 0.7]),
                np.zeros(2), np.zeros(2),
            )


class TestGaussianLaw:
    def test_msre_unit_law(self):
        limit = limit_coefficients(builtin_profile("msre_const", 2, c=1.0), grid_for(2))
        law = gaussian_law_at(limit, 1.0, np.zeros(2))
        np.testing.assert_allclose(law.mean, np.zeros(2), atol=1e-12)
        np.testing.assert_allclose(law.covariance, np.eye(2), atol=1e-8)

    def test_drift_only(self):
        limit = DiffusionLimit(2, np.array([1.0, -0.5]), np.zeros((2, 2)))
        law = gaussian_law_at(limit, 2.0, np.array([3.0, 0.0]))
        np.testing.assert_allclose(law.mean, [5.0, -1.0])
        np.testing.assert_array_equal(law.covariance, np.zeros((2, 2)))

    def test_time_scaling(self):
        limit = limit_coefficients(builtin_profile("msre_const", 3, c=1.0), grid_for(3))
        law1 = gaussian_law_at(limit, 1.5)
        law2 = gaussian_law_at(limit, 3.0)
        np.testing.assert_allclose(law2.covariance, 2.0 * law1.covariance, atol=1e-14)

    def test_nonpositive_time_rejected(self):
        limit = limit_coefficients(builtin_profile("msre_const", 2, c=1.0), grid_for(2))
        with pytest.raises(ValueError):
            gaussian_law_at(limit, 0.0)

    def test_gaussian_spec_validation(self):
        with pytest.raises(ValueError):
            GaussianSpec(np.zeros(2), np.array([[1.0, 0.5], [0.4, 1.0]]))
