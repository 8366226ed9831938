"""Discretized generator algebra of the switching evolution.

On a quadrature grid the averaging projector, the switching generator and
the potential operator act on direction-dependent fields f(theta) as

    Pi f  = sum_m w_m f_m          (projects onto constants),
    Q f   = Pi f - f               (null-space: constants),
    R0 f  = Pi f - f               (inverts Q on mean-zero fields,
                                    annihilates constants),

satisfying Pi Pi = Pi, Q Pi = Pi Q = 0 and R0 Q = Q R0 = I - Pi exactly up
to roundoff. The transport operator couples the direction to a smooth test
function phi on R^n. apply_s keeps the customary generator notation
S(theta) phi = -(s(theta), grad phi); everything in the perturbation solver
below instead uses the transport sign +(s, grad), the operator that actually
generates the simulated motion dx/dt = v * s(theta). This is the single
point where the two conventions meet: as a consequence all assembled limit
coefficients carry the physical drift E[c1 * s] and agree with the limits
module, while the opposite-sign functional stays available there as
drift_paper_sign.

The perturbation solver expands the generator

    L_eps = eps^-2 Q + eps^-1 c(theta) T(theta) + c1(theta) T(theta),
    T(theta) = (s(theta), grad),

on corrected test functions phi + eps*phi1 + eps^2*phi2 and solves the
resulting hierarchy exactly on the grid:

    phi1 = -R0 [c T phi]
    L0 phi = Pi [c T phi1] + Pi [c1 T phi]
    phi2 = -R0 [c T phi1 + c1 T phi]

so that L_eps (phi + eps phi1 + eps^2 phi2) - L0 phi
      = eps * (c T phi2 + c1 T phi1) + eps^2 * c1 T phi2

identically; the remainder is linear in eps up to the eps^2 tail, which
residual_scaling verifies empirically. Fields entering the hierarchy are
represented by their derivative coefficients ("jets") up to third order, so
all operator applications are exact contractions, not finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .limits import BalanceError
from .profiles import ProfileError, VelocityProfile, check_balance
from .sphere import AngleVector, QuadratureGrid, directions_from_angles
from .stats import RateFit, fit_loglog

__all__ = [
    "ThetaField",
    "TestFunction",
    "PerturbationSolution",
    "SolvabilityError",
    "project_pi",
    "apply_q",
    "apply_r0",
    "potential_identity_error",
    "apply_s",
    "gaussian_bump",
    "gaussian_monomial",
    "linear_function",
    "finite_difference_check",
    "lab_limit_coefficients",
    "solve_perturbation",
    "assembled_generator_residual",
    "residual_scaling",
]


class SolvabilityError(BalanceError):
    """Perturbation hierarchy unsolvable: the balance condition fails."""


# ---------------------------------------------------------------------------
# scalar fields over the grid


@dataclass(frozen=True)
class ThetaField:
    """A scalar function of the direction, sampled at the grid nodes."""

    grid: QuadratureGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.size,):
            raise ValueError(
                f"field has {values.shape} values for a grid of size {self.grid.size}"
            )


def project_pi(f: ThetaField) -> float:
    """Average of the field over the sphere (the projector onto constants).

    Grids here carry the continuous surface measure only; atomic speed
    profiles never alter the measure and are handled in closed form by the
    limits module.
    """
    return f.grid.average(f.values)


def apply_q(f: ThetaField) -> ThetaField:
    """Switching generator: Pi f - f."""
    return ThetaField(f.grid, project_pi(f) - f.values)


def apply_r0(f: ThetaField) -> ThetaField:
    """Potential operator: Pi f - f; inverts Q on mean-zero fields."""
    return ThetaField(f.grid, project_pi(f) - f.values)


def potential_identity_error(f: ThetaField) -> float:
    """Sup-norm of R0(Q f) - (f - Pi f); zero up to roundoff for any field."""
    lhs = apply_r0(apply_q(f)).values
    rhs = f.values - project_pi(f)
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# smooth test functions with analytic derivatives


@dataclass(frozen=True)
class TestFunction:
    """Smooth function on R^n with analytic derivatives up to third order.

    third may be None when the residual machinery is not needed;
    third_deriv_bound records a sup-norm bound on the third derivatives used
    in remainder estimates.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    dimension: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    third: Callable[[np.ndarray], np.ndarray] | None = None
    third_deriv_bound: float = math.inf


def gaussian_bump(center: np.ndarray, width: float) -> TestFunction:
    """exp(-|x - center|^2 / (2 width^2)) with closed-form derivatives.

    Not compactly supported, but decays fast enough that no estimate here
    depends on the tails.
    """
    center = np.asarray(center, dtype=float)
    n = center.size
    w2 = float(width) ** 2

    def value(x):
        u = np.asarray(x, dtype=float) - center
        return float(np.exp(-0.5 * np.dot(u, u) / w2))

    def gradient(x):
        u = np.asarray(x, dtype=float) - center
        return (-u / w2) * value(x)

    def hessian(x):
        u = np.asarray(x, dtype=float) - center
        return (np.outer(u, u) / w2**2 - np.eye(n) / w2) * value(x)

    def third(x):
        u = np.asarray(x, dtype=float) - center
        eye = np.eye(n)
        t = -np.einsum("i,j,k->ijk", u, u, u) / w2**3
        t += (
            np.einsum("ij,k->ijk", eye, u)
            + np.einsum("ik,j->ijk", eye, u)
            + np.einsum("jk,i->ijk", eye, u)
        ) / w2**2
        return t * value(x)

    return TestFunction(n, value, gradient, hessian, third, 3.0 / float(width) ** 3)


def gaussian_monomial(center: np.ndarray, width: float, axis: int) -> TestFunction:
    """(x_axis - center_axis) * gaussian_bump(center, width)."""
    g = gaussian_bump(center, width)
    center = np.asarray(center, dtype=float)
    n = center.size
    if not 0 <= axis < n:
        raise ValueError(f"axis must lie in [0, {n}), got {axis}")

    def value(x):
        u = np.asarray(x, dtype=float) - center
        return float(u[axis]) * g.value(x)

    def gradient(x):
        u = np.asarray(x, dtype=float) - center
        grad = u[axis] * g.gradient(x)
        grad[axis] += g.value(x)
        return grad

    def hessian(x):
        u = np.asarray(x, dtype=float) - center
        gg = g.gradient(x)
        h = u[axis] * g.hessian(x)
        h[axis, :] += gg
        h[:, axis] += gg
        return h

    def third(x):
        u = np.asarray(x, dtype=float) - center
        gh = g.hessian(x)
        t = u[axis] * g.third(x)
        t[axis, :, :] += gh
        t[:, axis, :] += gh
        t[:, :, axis] += gh
        return t

    return TestFunction(n, value, gradient, hessian, third, 8.0 / float(width) ** 2)


def linear_function(coefficients: np.ndarray, constant: float = 0.0) -> TestFunction:
    """a . x + b; zero Hessian and third derivatives."""
    a = np.asarray(coefficients, dtype=float)
    n = a.size

    return TestFunction(
        n,
        value=lambda x: float(np.dot(a, np.asarray(x, dtype=float)) + constant),
        gradient=lambda x: a.copy(),
        hessian=lambda x: np.zeros((n, n)),
        third=lambda x: np.zeros((n, n, n)),
        third_deriv_bound=0.0,
    )


def finite_difference_check(
    phi: TestFunction, rng: np.random.Generator, n_points: int = 100, h: float = 1e-5
) -> tuple[float, float]:
    """Max relative error of (gradient vs FD of value, hessian vs FD of gradient)."""
    n = phi.dimension
    worst_g = 0.0
    worst_h = 0.0
    for _ in range(n_points):
        x = rng.uniform(-1.5, 1.5, size=n)
        grad = phi.gradient(x)
        hess = phi.hessian(x)
        scale_g = max(1.0, float(np.max(np.abs(grad))))
        scale_h = max(1.0, float(np.max(np.abs(hess))))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd_g = (phi.value(x + e) - phi.value(x - e)) / (2 * h)
            worst_g = max(worst_g, abs(fd_g - grad[i]) / scale_g)
            fd_h = (phi.gradient(x + e) - phi.gradient(x - e)) / (2 * h)
            worst_h = max(worst_h, float(np.max(np.abs(fd_h - hess[i]))) / scale_h)
    return worst_g, worst_h


def apply_s(theta: AngleVector, phi: TestFunction, x: np.ndarray) -> float:
    """Directional transport in generator notation: -(s(theta), grad phi(x))."""
    if theta.dimension != phi.dimension:
        raise ValueError(
            f"angle dimension {theta.dimension} != test function dimension {phi.dimension}"
        )
    s = directions_from_angles(theta.angles)
    return -float(np.dot(s, phi.gradient(np.asarray(x, dtype=float))))


# ---------------------------------------------------------------------------
# derivative-coefficient fields (jets) over the grid


class _Jet:
    """Per-node coefficient tensors of a differential operator applied to phi.

    coeffs[k] has shape (M, n, ..., n) with k trailing direction axes; the
    represented field at node m is sum_k coeffs[k][m] . (k-th derivative of
    phi at x). A None entry is identically zero. Constant-in-theta jets are
    stored with leading axis 1 and broadcast.
    """

    __slots__ = ("n_nodes", "dim", "coeffs")

    def __init__(self, n_nodes: int, dim: int, coeffs: dict[int, np.ndarray]):
        self.n_nodes = n_nodes
        self.dim = dim
        self.coeffs = coeffs

    @classmethod
    def identity(cls, n_nodes: int, dim: int) -> "_Jet":
        return cls(n_nodes, dim, {0: np.ones((n_nodes,))})

    def pi(self, weights: np.ndarray) -> "_Jet":
        out = {}
        for k, arr in self.coeffs.items():
            if arr.shape[0] == 1:
                out[k] = arr.copy()
            else:
                out[k] = np.einsum("m...,m->...", arr, weights)[None, ...]
        return _Jet(self.n_nodes, self.dim, out)

    def transport(self, directions: np.ndarray) -> "_Jet":
        """(s, grad): raises each order k to k+1 with a leading s factor."""
        out = {}
        for k, arr in self.coeffs.items():
            if k + 1 > 3:
                raise ValueError("jet order above 3 is not supported")
            if arr.shape[0] == 1:
                arr = np.broadcast_to(arr, (directions.shape[0],) + arr.shape[1:])
            out[k + 1] = np.einsum("mi,m...->mi...", directions, arr)
        return _Jet(self.n_nodes, self.dim, out)

    def scaled(self, factor: np.ndarray) -> "_Jet":
        factor = np.asarray(factor, dtype=float)
        out = {}
        for k, arr in self.coeffs.items():
            if arr.shape[0] == 1 and factor.ndim > 0:
                arr = np.broadcast_to(arr, (factor.shape[0],) + arr.shape[1:])
            out[k] = arr * factor.reshape(factor.shape + (1,) * k)
        return _Jet(self.n_nodes, self.dim, out)

    def __add__(self, other: "_Jet") -> "_Jet":
        out = dict()
        for k in set(self.coeffs) | set(other.coeffs):
            a = self.coeffs.get(k)
            b = other.coeffs.get(k)
            if a is None:
                out[k] = b.copy()
            elif b is None:
                out[k] = a.copy()
            else:
                out[k] = a + b
        return _Jet(self.n_nodes, self.dim, out)

    def __sub__(self, other: "_Jet") -> "_Jet":
        return self + other.scaled(np.asarray(-1.0))

    def coefficient(self, order: int) -> np.ndarray:
        arr = self.coeffs.get(order)
        if arr is None:
            return np.zeros((1,) + (self.dim,) * order)
        return arr

    def evaluate(self, phi: TestFunction, x: np.ndarray) -> np.ndarray:
        """Field values at every node for the spatial point x."""
        x = np.asarray(x, dtype=float)
        total = np.zeros(self.n_nodes)
        derivs = {0: None, 1: None, 2: None, 3: None}
        for k, arr in sorted(self.coeffs.items()):
            if k == 0:
                d = phi.value(x)
                term = arr * d
            elif k == 1:
                term = arr @ phi.gradient(x)
            elif k == 2:
                term = np.einsum("mij,ij->m", arr, phi.hessian(x))
            else:
                if phi.third is None:
                    raise ValueError(
                        "third derivatives of the test function are required "
                        "for residual evaluation; construct it with an "
                        "analytic third-derivative tensor"
                    )
                term = np.einsum("mijk,ijk->m", arr, phi.third(x))
            if term.shape[0] == 1:
                term = np.broadcast_to(term, (self.n_nodes,))
            total = total + term
        return total


def _node_speeds(profile: VelocityProfile, grid: QuadratureGrid) -> tuple[np.ndarray, np.ndarray]:
    if profile.atoms:
        raise ProfileError(
            "atomic profiles are invisible to a continuous quadrature grid; "
            "use limits.limit_coefficients / discrete_limit_coefficients for "
            "their closed-form coefficients"
        )
    if profile.dimension != grid.dimension:
        raise ProfileError(
            f"profile dimension {profile.dimension} != grid dimension {grid.dimension}"
        )
    return profile.c_values(grid.nodes), profile.c1_values(grid.nodes)


def lab_limit_coefficients(
    profile: VelocityProfile, grid: QuadratureGrid
) -> tuple[np.ndarray, np.ndarray]:
    """(drift, diffusion) assembled through the operator hierarchy.

    drift_i = Pi[c1 s_i]; diffusion is Pi[c s ox (-R0 c s)], i.e. the
    second-order coefficient of Pi[c T phi1]: E[c^2 s_i s_j] minus the rank-one
    correction E[c s_i] E[c s_j] (zero under exact balance). Works directly
    with (M, n) contractions so it scales to fine grids in high dimension.
    """
    c, c1 = _node_speeds(profile, grid)
    s = grid.directions
    w = grid.weights
    b = c[:, None] * s
    mean_b = w @ b
    centered = b - mean_b
    diffusion = np.einsum("m,mk,mi->ki", w * c, s, centered)
    diffusion = 0.5 * (diffusion + diffusion.T)
    drift = w @ (c1[:, None] * s)
    return drift, diffusion


@dataclass(frozen=True)
class PerturbationSolution:
    """Solved corrector hierarchy at a fixed spatial point.

    phi1 and phi2 are the corrector fields evaluated at x; limit_value is
    L0 phi(x); drift and diffusion are the assembled generator coefficients
    (physical sign). residual(eps) returns the sup over nodes of the exact
    remainder eps * r1 + eps^2 * r2.
    """

    grid: QuadratureGrid
    point: np.ndarray
    phi1: ThetaField
    phi2: ThetaField
    limit_value: float
    drift: np.ndarray
    diffusion: np.ndarray
    _r1_values: np.ndarray
    _r2_values: np.ndarray

    def residual(self, eps: float) -> float:
        return float(np.max(np.abs(eps * self._r1_values + eps**2 * self._r2_values)))


def solve_perturbation(
    profile: VelocityProfile,
    phi: TestFunction,
    x: np.ndarray,
    grid: QuadratureGrid,
    balance_tolerance: float = 1e-8,
) -> PerturbationSolution:
    """Solve the corrector hierarchy for the given profile and test function.

    Requires the balance condition; otherwise raises SolvabilityError naming
    the residual vector. The correctors are exact on the grid, so the
    assembled remainder is identically eps * r1 + eps^2 * r2.
    """
    report = check_balance(profile, grid, tolerance=balance_tolerance)
    if not report.satisfied:
        raise SolvabilityError(report)
    if phi.dimension != grid.dimension:
        raise ValueError(
            f"test function dimension {phi.dimension} != grid dimension {grid.dimension}"
        )
    x = np.asarray(x, dtype=float)
    c, c1 = _node_speeds(profile, grid)
    s = grid.directions
    w = grid.weights
    m = grid.size

    jet_phi = _Jet.identity(m, grid.dimension)
    c_t_phi = jet_phi.transport(s).scaled(c)
    phi1 = c_t_phi - c_t_phi.pi(w)              # -R0 [c T phi]
    c_t_phi1 = phi1.transport(s).scaled(c)
    c1_t_phi = jet_phi.transport(s).scaled(c1)
    order_zero = c_t_phi1 + c1_t_phi
    l0 = order_zero.pi(w)
    phi2 = order_zero - l0                       # -R0 [c T phi1 + c1 T phi]
    r1 = phi2.transport(s).scaled(c) + phi1.transport(s).scaled(c1)
    r2 = phi2.transport(s).scaled(c1)

    drift = l0.coefficient(1)[0]
    diffusion = l0.coefficient(2)[0]
    diffusion = 0.5 * (diffusion + diffusion.T)
    limit_value = float(drift @ phi.gradient(x) + np.sum(diffusion * phi.hessian(x)))

    solution = PerturbationSolution(
        grid=grid,
        point=x,
        phi1=ThetaField(grid, phi1.evaluate(phi, x)),
        phi2=ThetaField(grid, phi2.evaluate(phi, x)),
        limit_value=limit_value,
        drift=drift,
        diffusion=diffusion,
        _r1_values=r1.evaluate(phi, x),
        _r2_values=r2.evaluate(phi, x),
    )
    object.__setattr__(solution, "_jets", (jet_phi, phi1, phi2))
    object.__setattr__(solution, "_speeds", (c, c1))
    object.__setattr__(solution, "_phi", phi)
    return solution


def assembled_generator_residual(solution: PerturbationSolution, eps: float) -> float:
    """Sup-node |L_eps phi_eps - L0 phi| assembled term by term.

    Applies eps^-2 Q + eps^-1 c T + c1 T to phi + eps phi1 + eps^2 phi2
    directly, without using the closed-form remainder; agreement with
    solution.residual(eps) certifies the hierarchy solve.
    """
    grid = solution.grid
    jet_phi, jet_phi1, jet_phi2 = solution._jets
    c, c1 = solution._speeds
    phi = solution._phi
    w = grid.weights
    s = grid.directions

    phi_eps = jet_phi + jet_phi1.scaled(np.asarray(eps)) + jet_phi2.scaled(np.asarray(eps**2))
    q_part = (phi_eps.pi(w) - phi_eps).scaled(np.asarray(eps**-2))
    transport = phi_eps.transport(s)
    l_eps = q_part + transport.scaled(c / eps) + transport.scaled(c1)
    values = l_eps.evaluate(phi, solution.point)
    return float(np.max(np.abs(values - solution.limit_value)))


def residual_scaling(
    profile: VelocityProfile,
    phi: TestFunction,
    x: np.ndarray,
    grid: QuadratureGrid,
    eps_list,
) -> RateFit:
    """Log-log slope of the perturbation remainder across epsilon values.

    Requires at least 4 positive epsilons spanning two decades. When every
    residual is below 1e-14 the fit is reported as exact (this happens for
    test functions whose relevant derivatives vanish identically).
    """
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if eps.size < 4:
        raise ValueError("need at least 4 epsilon values")
    if np.any(eps <= 0.0):
        raise ValueError("epsilon values must be positive")
    if eps.max() / eps.min() < 100.0:
        raise ValueError("epsilon values must span at least two decades")
    solution = solve_perturbation(profile, phi, x, grid)
    residuals = np.array([solution.residual(float(e)) for e in eps])
    return fit_loglog(eps, residuals)
