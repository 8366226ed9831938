"""Geometry of the unit sphere S_{n-1} in R^n.

Directions are parametrized by spherical angles theta = (theta_1, ..., theta_{n-1})
with theta_i in [0, pi) for i <= n-2 and theta_{n-1} in [0, 2*pi), through the chart

    s(theta) = (cos t1,
                sin t1 cos t2,
                ...,
                sin t1 ... sin t_{n-2} cos t_{n-1},
                sin t1 ... sin t_{n-2} sin t_{n-1}).

The surface measure in these coordinates has density

    mu(d theta) = sin^{n-2} t1 * sin^{n-3} t2 * ... * sin t_{n-2}  dt1 ... dt_{n-1},

with total mass N (the surface content of the unit sphere):

    N = (2*pi)^{n/2} / (2*4*...*(n-2))          for even n,
    N = (2*pi)^{(n-1)/2} * 2 / (3*5*...*(n-2))  for odd n,

empty products being 1 (so N = 2*pi for n=2 and N = 4*pi for n=3).

This module provides the chart and its inverse, the normalization constant,
the classical sin-power integrals, product quadrature grids realizing the
normalized average (1/N) * integral over the sphere, and exact uniform
sampling by Gaussian normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidDimensionError",
    "AngleVector",
    "UnitDirection",
    "QuadratureGrid",
    "direction_from_angles",
    "directions_from_angles",
    "angles_from_directions",
    "normalization_constant",
    "wallis_integral",
    "sin_power_integral",
    "build_grid",
    "sample_direction",
    "sample_directions",
]

_UNIT_NORM_TOL = 1e-12


class InvalidDimensionError(ValueError):
    """Raised when an operation is requested for dimension n < 2."""


def _check_dimension(n: int) -> int:
    n = int(n)
    if n < 2:
        raise InvalidDimensionError(f"sphere geometry requires dimension n >= 2, got {n}")
    return n


@dataclass(frozen=True)
class AngleVector:
    """Spherical angles of a point on S_{n-1}.

    Holds n-1 angles; the first n-2 lie in [0, pi), the last in [0, 2*pi).
    """

    angles: np.ndarray

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.angles, dtype=float))
        if a.ndim != 1 or a.size < 1:
            raise InvalidDimensionError("angle vector needs at least one angle (n >= 2)")
        object.__setattr__(self, "angles", a)
        polar = a[:-1]
        if np.any(polar < 0.0) or np.any(polar >= math.pi):
            raise ValueError(f"polar angles must lie in [0, pi), got {polar}")
        if not (0.0 <= a[-1] < 2.0 * math.pi):
            raise ValueError(f"azimuthal angle must lie in [0, 2*pi), got {a[-1]}")

    @property
    def dimension(self) -> int:
        return self.angles.size + 1


@dataclass(frozen=True)
class UnitDirection:
    """A unit vector in R^n (Cartesian components)."""

    components: np.ndarray

    def __post_init__(self) -> None:
        u = np.atleast_1d(np.asarray(self.components, dtype=float))
        if u.size < 2:
            raise InvalidDimensionError("unit direction needs at least 2 components")
        object.__setattr__(self, "components", u)
        norm = float(np.linalg.norm(u))
        if abs(norm - 1.0) > _UNIT_NORM_TOL:
            raise ValueError(f"direction norm deviates from 1 by {abs(norm - 1.0):.3e}")

    @property
    def dimension(self) -> int:
        return self.components.size


def directions_from_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized spherical chart: (..., n-1) angles -> (..., n) unit vectors."""
    a = np.asarray(angles, dtype=float)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise InvalidDimensionError("need at least one angle per point")
    n = a.shape[-1] + 1
    out = np.empty(a.shape[:-1] + (n,), dtype=float)
    sin_prod = np.cumprod(np.sin(a), axis=-1)
    cos_a = np.cos(a)
    out[..., 0] = cos_a[..., 0]
    for k in range(1, n - 1):
        out[..., k] = sin_prod[..., k - 1] * cos_a[..., k]
    out[..., n - 1] = sin_prod[..., n - 2]
    return out


def direction_from_angles(theta: AngleVector) -> UnitDirection:
    """Map spherical angles to the corresponding unit direction."""
    return UnitDirection(directions_from_angles(theta.angles))


def angles_from_directions(directions: np.ndarray) -> np.ndarray:
    """Inverse chart: (..., n) unit vectors -> (..., n-1) angles.

    Polar angles are recovered through arccos of successively deflated
    components; the azimuth through atan2 of the last two components,
    wrapped into [0, 2*pi). On the degenerate set where a leading sine
    vanishes the remaining angles are set to 0 (a measure-zero convention).
    """
    u = np.asarray(directions, dtype=float)
    n = u.shape[-1]
    if n < 2:
        raise InvalidDimensionError("directions need at least 2 components")
    out = np.empty(u.shape[:-1] + (n - 1,), dtype=float)
    if n == 2:
        out[..., 0] = np.mod(np.arctan2(u[..., 1], u[..., 0]), 2.0 * math.pi)
        return out
    sin_prod = np.ones(u.shape[:-1], dtype=float)
    for k in range(n - 2):
        ratio = np.divide(
            u[..., k],
            sin_prod,
            out=np.ones_like(sin_prod),
            where=np.abs(sin_prod) > 1e-300,
        )
        theta = np.arccos(np.clip(ratio, -1.0, 1.0))
        out[..., k] = theta
        sin_prod = sin_prod * np.sin(theta)
    out[..., n - 2] = np.mod(np.arctan2(u[..., n - 1], u[..., n - 2]), 2.0 * math.pi)
    return out


def normalization_constant(n: int) -> float:
    """Total surface content N of the unit sphere S_{n-1} in R^n."""
    n = _check_dimension(n)
    if n % 2 == 0:
        denom = 1.0
        for k in range(2, n - 1, 2):  # 2*4*...*(n-2)
            denom *= k
        return (2.0 * math.pi) ** (n // 2) / denom
    denom = 1.0
    for k in range(3, n - 1, 2):  # 3*5*...*(n-2)
        denom *= k
    return (2.0 * math.pi) ** ((n - 1) // 2) * 2.0 / denom


def wallis_integral(m: int, parity: str) -> float:
    """Sin-power integral over [0, pi].

    parity="even" returns int_0^pi sin^{2m} = pi * (2m-1)!! / (2m)!!,
    parity="odd"  returns int_0^pi sin^{2m+1} = 2 * (2m)!! / (2m+1)!!.
    """
    m = int(m)
    if m < 0:
        raise ValueError(f"sin-power order must be nonnegative, got m={m}")
    if parity == "even":
        value = math.pi
        for k in range(1, m + 1):
            value *= (2 * k - 1) / (2 * k)
        return value
    if parity == "odd":
        value = 2.0
        for k in range(1, m + 1):
            value *= (2 * k) / (2 * k + 1)
        return value
    raise ValueError(f"parity must be 'even' or 'odd', got {parity!r}")


def sin_power_integral(k: int) -> float:
    """int_0^pi sin^k(theta) d theta for any k >= 0."""
    if k % 2 == 0:
        return wallis_integral(k // 2, "even")
    return wallis_integral((k - 1) // 2, "odd")


@dataclass(frozen=True)
class QuadratureGrid:
    """Product quadrature realizing the normalized sphere average.

    weights sum to 1 and absorb both the angular density and the 1/N
    normalization; raw_total records the un-normalized mass (equal to N up
    to quadrature error). directions caches s(theta) at every node.
    """

    dimension: int
    nodes: np.ndarray      # (M, n-1) angles
    weights: np.ndarray    # (M,), positive, sums to 1
    raw_total: float
    directions: np.ndarray = field(default=None)  # (M, n), filled on build

    def __post_init__(self) -> None:
        if self.directions is None:
            object.__setattr__(self, "directions", directions_from_angles(self.nodes))
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"weights must sum to 1, got {total}")

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def average(self, values: np.ndarray) -> float:
        """Normalized sphere average (1/N) * integral of a node-sampled function."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def build_grid(n: int, resolution: int) -> QuadratureGrid:
    """Build a Gauss-Legendre product grid on S_{n-1}.

    Each polar axis theta_i (i = 1..n-2) carries `resolution` Gauss-Legendre
    nodes on (0, pi) with the density weight sin^{n-1-i} folded in. The
    azimuthal axis carries two Gauss-Legendre panels of `resolution` nodes on
    (0, pi) and (pi, 2*pi): spectrally exact for smooth integrands, and also
    for speeds that step between the azimuthal half-spheres, since every node
    is interior to a panel and never touches the jump. Weights are
    renormalized to sum to 1.
    """
    n = _check_dimension(n)
    resolution = int(resolution)
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")

    axis_nodes: list[np.ndarray] = []
    axis_weights: list[np.ndarray] = []
    x, w = np.polynomial.legendre.leggauss(resolution)
    theta_polar = (x + 1.0) * (math.pi / 2.0)
    w_polar = w * (math.pi / 2.0)
    for axis in range(n - 2):
        expo = n - 2 - axis  # sin^{n-2} on theta_1 down to sin^1 on theta_{n-2}
        axis_nodes.append(theta_polar)
        axis_weights.append(w_polar * np.sin(theta_polar) ** expo)
    axis_nodes.append(np.concatenate([theta_polar, theta_polar + math.pi]))
    axis_weights.append(np.concatenate([w_polar, w_polar]))

    mesh = np.meshgrid(*axis_nodes, indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    wmesh = np.meshgrid(*axis_weights, indexing="ij")
    raw = np.ones(nodes.shape[0], dtype=float)
    for wm in wmesh:
        raw = raw * wm.reshape(-1)
    raw_total = float(raw.sum())
    return QuadratureGrid(
        dimension=n,
        nodes=nodes,
        weights=raw / raw_total,
        raw_total=raw_total,
    )


def sample_directions(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `size` independent uniform directions on S_{n-1}, shape (size, n).

    Normalizes i.i.d. standard Gaussian vectors, which is exactly uniform in
    every dimension.
    """
    n = _check_dimension(n)
    g = rng.standard_normal((size, n))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def sample_direction(n: int, rng: np.random.Generator) -> UnitDirection:
    """Draw one uniform direction on S_{n-1}, advancing `rng` deterministically."""
    return UnitDirection(sample_directions(n, 1, rng)[0])
