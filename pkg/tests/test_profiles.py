"""Tests of velocity profiles and the balance / non-symmetry functionals."""

import math

import numpy as np
import pytest

from revolve.profiles import (
    Atom,
    ConstantSpeed,
    FirstAngleSine,
    LowerHalfStep,
    ProfileError,
    VelocityProfile,
    builtin_profile,
    check_balance,
    check_nonsymmetry,
)
from revolve.sphere import build_grid

RES = {2: 32, 3: 24, 4: 16, 5: 16, 6: 12}


def grid_for(n):
    return build_grid(n, RES[n])


class TestBuiltins:
    def test_msre_const(self):
        p = builtin_profile("msre_const", 3, c=1.0)
        assert p.continuous_c1 is None and not p.atoms
        angles = grid_for(3).nodes
        np.testing.assert_array_equal(p.c_values(angles), np.ones(angles.shape[0]))

    def test_sin_theta1_rejected_in_plane(self):
        with pytest.raises(ProfileError):
            builtin_profile("sin_theta1", 2)

    def test_sin_theta1_passes_balance(self):
        p = builtin_profile("sin_theta1", 3)
        report = check_balance(p, grid_for(3), tolerance=1e-10)
        assert report.satisfied

    def test_example3_is_three_atoms(self):
        p = builtin_profile("example3_atoms", 2)
        assert len(p.atoms) == 3 and not p.has_continuous
        with pytest.raises(ProfileError):
            builtin_profile("example3_atoms", 3)

    def test_unknown_name(self):
        with pytest.raises(ProfileError):
            builtin_profile("whirl", 2)


class TestProfileType:
    def test_mixed_requires_flag(self):
        atom = Atom(np.array([0.0]), 1.0, 1.0, 0.0)
        with pytest.raises(ProfileError):
            VelocityProfile(2, continuous_c=ConstantSpeed(1.0), atoms=(atom,))
        p = VelocityProfile(2, continuous_c=ConstantSpeed(1.0), atoms=(atom,), allow_mixed=True)
        assert p.mixed

    def test_atom_validation(self):
        with pytest.raises(ProfileError):
            Atom(np.array([0.0]), -1.0, 1.0, 0.0)
        with pytest.raises(ProfileError):
            VelocityProfile(3, atoms=(Atom(np.array([0.0]), 1.0, 1.0, 0.0),))

    def test_bounds_recorded(self):
        p = builtin_profile("step_half_sphere", 2, c=2.0, c1=0.5)
        sup_c, sup_c1 = p.bounds(grid_for(2))
        assert sup_c == pytest.approx(2.0)
        assert sup_c1 == pytest.approx(0.5)

    def test_unbounded_profile_rejected(self):
        p = VelocityProfile(2, continuous_c=lambda a: 1.0 / (a[..., 0] - a[..., 0]))
        with pytest.raises(ProfileError):
            p.bounds(grid_for(2))

    def test_values_at_atom_override(self):
        p = builtin_profile("example3_atoms", 2)
        angles = np.array([[0.0], [math.pi / 2.0], [1.0]])
        c, c1 = p.values_at(angles)
        np.testing.assert_allclose(c, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(c1, [0.0, 1.0, 0.0])

    def test_scalar_callable_fallback(self):
        p = VelocityProfile(2, continuous_c=lambda a: float(np.cos(2.0 * a[0])))
        vals = p.c_values(np.array([[0.0], [math.pi / 4.0]]))
        np.testing.assert_allclose(vals, [1.0, 0.0], atol=1e-15)


class TestBalance:
    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_msre_balance_everywhere(self, n):
        report = check_balance(builtin_profile("msre_const", n), grid_for(n), tolerance=1e-9)
        assert report.satisfied
        assert report.residual_norm <= 1e-10

    def test_msre_balance_n4_tight(self):
        report = check_balance(builtin_profile("msre_const", 4, c=1.0), grid_for(4))
        assert report.residual_norm <= 1e-10 and report.satisfied

    def test_plane_sine_residual(self):
        # same functional form as sin_theta1, forced into n=2
        p = VelocityProfile(2, continuous_c=FirstAngleSine(), name="sin_plane")
        report = check_balance(p, grid_for(2), tolerance=1e-8)
        np.testing.assert_allclose(report.residual_vector, [0.0, 0.5], atol=1e-8)
        assert not report.satisfied

    def test_balance_linear_in_c(self):
        g = grid_for(2)
        base = VelocityProfile(2, continuous_c=FirstAngleSine())
        scaled = VelocityProfile(2, continuous_c=FirstAngleSine(scale=2.0))
        r1 = check_balance(base, g).residual_vector
        r2 = check_balance(scaled, g).residual_vector
        np.testing.assert_array_equal(r2, 2.0 * r1)  # doubling is exact in floats

    def test_atom_weights_linear(self):
        g = grid_for(2)
        p = builtin_profile("example3_atoms", 2)
        doubled = VelocityProfile(
            2,
            atoms=tuple(
                Atom(a.angles, 2.0 * a.weight, a.c_value, a.c1_value) for a in p.atoms
            ),
        )
        np.testing.assert_array_equal(
            check_balance(doubled, g).residual_vector,
            2.0 * check_balance(p, g).residual_vector,
        )
        np.testing.assert_array_equal(
            check_nonsymmetry(doubled, g).residual_vector,
            2.0 * check_nonsymmetry(p, g).residual_vector,
        )

    def test_dimension_mismatch(self):
        with pytest.raises(ProfileError):
            check_balance(builtin_profile("msre_const", 3), grid_for(2))


class TestNonsymmetry:
    def test_no_drift_for_symmetric(self):
        report = check_nonsymmetry(builtin_profile("msre_const", 3), grid_for(3))
        assert report.residual_norm <= 1e-10
        assert not report.satisfied  # no drift detected

    def test_step_drift_plane(self):
        # oracle: (1/2pi) * int_pi^2pi sin = -1/pi on the second coordinate
        report = check_nonsymmetry(
            builtin_profile("step_half_sphere", 2, c=1.0, c1=1.0), grid_for(2)
        )
        assert abs(abs(report.residual_vector[1]) - 1.0 / math.pi) <= 1e-8
        assert report.residual_vector[1] < 0.0
        assert abs(report.residual_vector[0]) <= 1e-10
        assert report.satisfied

    def test_step_drift_n3(self):
        report = check_nonsymmetry(
            builtin_profile("step_half_sphere", 3, c=1.0, c1=1.0), grid_for(3)
        )
        assert abs(abs(report.residual_vector[2]) - 0.25) <= 1e-8
        assert report.residual_vector[2] < 0.0

    def test_plane_sine_drift(self):
        # c1(theta) = sin theta in the plane: drift functional (0, 1/2)
        p = VelocityProfile(2, continuous_c1=FirstAngleSine())
        report = check_nonsymmetry(p, grid_for(2))
        np.testing.assert_allclose(report.residual_vector, [0.0, 0.5], atol=1e-10)

    def test_c1_zero_profiles_have_zero_drift(self):
        for name, n in [("msre_const", 4), ("sin_theta1", 3)]:
            report = check_nonsymmetry(builtin_profile(name, n), grid_for(n))
            assert report.residual_norm <= 1e-10


class TestStepFunction:
    def test_step_values(self):
        step = LowerHalfStep(3.0)
        angles = np.array([[0.5, 0.1], [0.5, math.pi], [0.5, 5.0]])
        np.testing.assert_array_equal(step(angles), [0.0, 3.0, 3.0])

    def test_describe_roundtrips_builtin_parameters(self):
        p = builtin_profile("step_half_sphere", 3, c=2.0, c1=0.25)
        d = p.describe()
        assert d["c"]["value"] == 2.0
        assert d["c1"]["height"] == 0.25
        assert d["name"] == "step_half_sphere"
