"""Velocity profiles (c, c1) of random evolutions and their balance checks.

A profile assigns to each direction theta a fast speed c(theta), scaled by
1/eps in simulation, and a slow speed c1(theta). Both may be continuous
functions of the angles, a finite list of atoms (angle, weight, c, c1), or
a flagged mix. The symmetric model is c = const, c1 = 0.

Two functionals decide the model class:

  balance residual   r_i = <c * s_i>      (must vanish for a diffusion
                                           limit to exist),
  drift functional   b_i = <c1 * s_i>     (nonzero b breaks symmetry and
                                           produces deterministic drift),

where <.> is the normalized sphere average, and atoms contribute
f(theta_atom) * weight / N. Signs follow the transport convention: b is the
mean velocity E[c1 * s] of the slow component.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .sphere import QuadratureGrid, directions_from_angles, normalization_constant

__all__ = [
    "ProfileError",
    "Atom",
    "VelocityProfile",
    "BalanceReport",
    "ConstantSpeed",
    "FirstAngleSine",
    "LowerHalfStep",
    "builtin_profile",
    "check_balance",
    "check_nonsymmetry",
]

BUILTIN_NAMES = ("msre_const", "sin_theta1", "step_half_sphere", "example3_atoms")


class ProfileError(ValueError):
    """Invalid profile construction or use."""


# Continuous speed functions are plain callables mapping an (..., n-1) array
# of angles to an (...,) array of speeds. The builtins below are dataclasses
# so that configs pickle across process workers.


@dataclass(frozen=True)
class ConstantSpeed:
    value: float

    def __call__(self, angles: np.ndarray) -> np.ndarray:
        angles = np.asarray(angles, dtype=float)
        return np.full(angles.shape[:-1], self.value)


@dataclass(frozen=True)
class FirstAngleSine:
    """c(theta) = sin(theta_1); symmetric only for n >= 3."""

    scale: float = 1.0

    def __call__(self, angles: np.ndarray) -> np.ndarray:
        angles = np.asarray(angles, dtype=float)
        return self.scale * np.sin(angles[..., 0])


@dataclass(frozen=True)
class LowerHalfStep:
    """height on the half-sphere theta_{n-1} in [pi, 2*pi), zero elsewhere."""

    height: float

    def __call__(self, angles: np.ndarray) -> np.ndarray:
        angles = np.asarray(angles, dtype=float)
        return np.where(angles[..., -1] >= math.pi, self.height, 0.0)


@dataclass(frozen=True)
class Atom:
    """Point mass of a profile: angles (n-1,), positive weight, speeds c and c1."""

    angles: np.ndarray
    weight: float
    c_value: float
    c1_value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "angles", np.atleast_1d(np.asarray(self.angles, dtype=float)))
        if self.weight <= 0.0:
            raise ProfileError(f"atom weight must be positive, got {self.weight}")


def _evaluate(fn: Callable, angles: np.ndarray) -> np.ndarray:
    """Evaluate a speed function on rows of angles, vectorized when possible."""
    angles = np.asarray(angles, dtype=float)
    want = angles.shape[:-1]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # probing a possibly scalar-only callable
            out = np.asarray(fn(angles), dtype=float)
        if out.shape == want:
            return out
    except (TypeError, ValueError, IndexError):
        pass
    flat = angles.reshape(-1, angles.shape[-1])
    out = np.array([float(fn(row)) for row in flat])
    return out.reshape(want)


@dataclass(frozen=True)
class VelocityProfile:
    """Direction-dependent speeds (c, c1) with optional atoms.

    Continuous parts may be None (identically zero). Mixing continuous parts
    with atoms is legal only when allow_mixed=True; the default profiles are
    purely continuous or purely atomic.
    """

    dimension: int
    continuous_c: Callable | None = None
    continuous_c1: Callable | None = None
    atoms: tuple[Atom, ...] = ()
    allow_mixed: bool = False
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.dimension < 2:
            raise ProfileError(f"profile dimension must be >= 2, got {self.dimension}")
        object.__setattr__(self, "atoms", tuple(self.atoms))
        for atom in self.atoms:
            if atom.angles.size != self.dimension - 1:
                raise ProfileError(
                    f"atom has {atom.angles.size} angles, expected {self.dimension - 1}"
                )
        if self.mixed and not self.allow_mixed:
            raise ProfileError(
                "profile mixes continuous parts with atoms; pass allow_mixed=True "
                "if that is intended"
            )

    @property
    def has_continuous(self) -> bool:
        return self.continuous_c is not None or self.continuous_c1 is not None

    @property
    def mixed(self) -> bool:
        return self.has_continuous and bool(self.atoms)

    def c_values(self, angles: np.ndarray) -> np.ndarray:
        """Fast-speed values of the continuous part at the given angle rows."""
        angles = np.asarray(angles, dtype=float)
        if self.continuous_c is None:
            return np.zeros(angles.shape[:-1])
        return _evaluate(self.continuous_c, angles)

    def c1_values(self, angles: np.ndarray) -> np.ndarray:
        """Slow-speed values of the continuous part at the given angle rows."""
        angles = np.asarray(angles, dtype=float)
        if self.continuous_c1 is None:
            return np.zeros(angles.shape[:-1])
        return _evaluate(self.continuous_c1, angles)

    def values_at(self, angles: np.ndarray, atol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """(c, c1) at angle rows, with atom values overriding at matching angles."""
        angles = np.asarray(angles, dtype=float)
        c = self.c_values(angles)
        c1 = self.c1_values(angles)
        for atom in self.atoms:
            hit = np.max(np.abs(angles - atom.angles), axis=-1) <= atol
            c = np.where(hit, atom.c_value, c)
            c1 = np.where(hit, atom.c1_value, c1)
        return c, c1

    def bounds(self, grid: QuadratureGrid) -> tuple[float, float]:
        """Sup of |c| and |c1| over grid nodes and atoms; raises if not finite."""
        c = self.c_values(grid.nodes)
        c1 = self.c1_values(grid.nodes)
        sup_c = float(np.max(np.abs(c))) if c.size else 0.0
        sup_c1 = float(np.max(np.abs(c1))) if c1.size else 0.0
        for atom in self.atoms:
            sup_c = max(sup_c, abs(atom.c_value))
            sup_c1 = max(sup_c1, abs(atom.c1_value))
        if not (math.isfinite(sup_c) and math.isfinite(sup_c1)):
            raise ProfileError("speed functions must be bounded on the grid")
        return sup_c, sup_c1

    def describe(self) -> dict:
        """JSON-friendly summary used in fingerprints and manifests."""
        def _part(fn):
            if fn is None:
                return None
            if hasattr(fn, "__dataclass_fields__"):
                d = {"type": type(fn).__name__}
                d.update({k: getattr(fn, k) for k in fn.__dataclass_fields__})
                return d
            return {"type": "callable", "repr": repr(fn)}

        return {
            "name": self.name,
            "dimension": self.dimension,
            "c": _part(self.continuous_c),
            "c1": _part(self.continuous_c1),
            "atoms": [
                {
                    "angles": atom.angles.tolist(),
                    "weight": atom.weight,
                    "c": atom.c_value,
                    "c1": atom.c1_value,
                }
                for atom in self.atoms
            ],
        }


def builtin_profile(name: str, dimension: int, *, c: float = 1.0, c1: float = 1.0) -> VelocityProfile:
    """Construct one of the built-in profiles.

    msre_const:       c = const, c1 = 0 (the symmetric model)
    sin_theta1:       c(theta) = sin theta_1, c1 = 0; requires n >= 3
    step_half_sphere: c = const with c1 on the half-sphere theta_{n-1} >= pi
    example3_atoms:   n = 2 atomic profile with unit atoms at angles 0 and pi
                      carrying c = 1, and at pi/2 carrying c1 = 1
    """
    n = int(dimension)
    if name == "msre_const":
        return VelocityProfile(n, continuous_c=ConstantSpeed(c), name=name)
    if name == "sin_theta1":
        if n < 3:
            raise ProfileError(
                "sin_theta1 requires dimension >= 3: in the plane sin(theta) "
                "has a nonzero first moment and breaks the balance condition"
            )
        return VelocityProfile(n, continuous_c=FirstAngleSine(), name=name)
    if name == "step_half_sphere":
        return VelocityProfile(
            n,
            continuous_c=ConstantSpeed(c),
            continuous_c1=LowerHalfStep(c1),
            name=name,
        )
    if name == "example3_atoms":
        if n != 2:
            raise ProfileError(f"example3_atoms is a planar profile (n=2), got n={n}")
        atoms = (
            Atom(np.array([0.0]), 1.0, 1.0, 0.0),
            Atom(np.array([math.pi]), 1.0, 1.0, 0.0),
            Atom(np.array([math.pi / 2.0]), 1.0, 0.0, 1.0),
        )
        return VelocityProfile(n, atoms=atoms, name=name)
    raise ProfileError(f"unknown builtin profile {name!r}; known: {BUILTIN_NAMES}")


@dataclass(frozen=True)
class BalanceReport:
    """Residual of a first-moment functional and its verdict at a tolerance."""

    residual_vector: np.ndarray
    residual_norm: float
    satisfied: bool
    tolerance: float


def _first_moment(
    values: np.ndarray,
    atom_values: Sequence[float],
    profile: VelocityProfile,
    grid: QuadratureGrid,
) -> np.ndarray:
    """<f * s> over the grid plus atomic contributions weight*f*s(theta)/N."""
    residual = np.einsum("m,m,mi->i", grid.weights, values, grid.directions)
    if profile.atoms:
        inv_n = 1.0 / normalization_constant(profile.dimension)
        for atom, fval in zip(profile.atoms, atom_values):
            s_atom = directions_from_angles(atom.angles)
            residual = residual + atom.weight * fval * inv_n * s_atom
    return residual


def check_balance(
    profile: VelocityProfile, grid: QuadratureGrid, tolerance: float = 1e-10
) -> BalanceReport:
    """First moment of the fast speed; satisfied iff its norm is <= tolerance."""
    if grid.dimension != profile.dimension:
        raise ProfileError(
            f"grid dimension {grid.dimension} does not match profile dimension "
            f"{profile.dimension}"
        )
    profile.bounds(grid)
    residual = _first_moment(
        profile.c_values(grid.nodes),
        [atom.c_value for atom in profile.atoms],
        profile,
        grid,
    )
    norm = float(np.linalg.norm(residual))
    return BalanceReport(residual, norm, norm <= tolerance, tolerance)


def check_nonsymmetry(
    profile: VelocityProfile, grid: QuadratureGrid, tolerance: float = 1e-10
) -> BalanceReport:
    """First moment of the slow speed (the drift vector E[c1*s]).

    satisfied means a drift was detected, i.e. the norm EXCEEDS the tolerance.
    """
    if grid.dimension != profile.dimension:
        raise ProfileError(
            f"grid dimension {grid.dimension} does not match profile dimension "
            f"{profile.dimension}"
        )
    residual = _first_moment(
        profile.c1_values(grid.nodes),
        [atom.c1_value for atom in profile.atoms],
        profile,
        grid,
    )
    norm = float(np.linalg.norm(residual))
    return BalanceReport(residual, norm, norm > tolerance, tolerance)
