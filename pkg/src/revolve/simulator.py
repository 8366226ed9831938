"""Event-driven Monte-Carlo simulation of random evolutions.

A path holds a direction for an exponential time with mean eps^2 (Poisson
switching with intensity 1/eps^2), moves in a straight line at speed
v(theta) = c(theta)/eps + c1(theta), then resamples the direction afresh
from the switching law (uniform on the sphere, or a finite set with given
probabilities; self-transitions are allowed). Positions are integrated in
closed form segment by segment, so there is no time-discretization error.

Reproducibility: every path owns a counter-based Philox stream keyed by
(seed, path_index), so path i is a pure function of the configuration and
its index. Ensembles are therefore bit-identical for any number of workers,
and any single path can be replayed in isolation.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from numpy.random import Generator, Philox

from .profiles import VelocityProfile
from .sphere import angles_from_directions, directions_from_angles

__all__ = [
    "UniformSphere",
    "DiscreteSwitching",
    "EvolutionConfig",
    "Trajectory",
    "EndpointEnsemble",
    "simulate_path",
    "simulate_ensemble",
    "config_fingerprint",
    "resolve_workers",
]

_MAX_SEED = 2**64


@dataclass(frozen=True)
class UniformSphere:
    """Switching law: fresh uniform direction on S_{n-1} at every event."""


@dataclass(frozen=True)
class DiscreteSwitching:
    """Switching law over a finite direction set with fixed probabilities."""

    angles: np.ndarray         # (K, n-1)
    probabilities: np.ndarray  # (K,), sums to 1

    def __post_init__(self) -> None:
        angles = np.atleast_2d(np.asarray(self.angles, dtype=float))
        p = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "probabilities", p)
        if p.ndim != 1 or p.size != angles.shape[0]:
            raise ValueError("need one probability per direction")
        if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1 within 1e-12")


SwitchingLaw = Union[UniformSphere, DiscreteSwitching]


@dataclass(frozen=True)
class EvolutionConfig:
    """Full description of one simulation experiment."""

    dimension: int
    epsilon: float
    profile: VelocityProfile
    horizon: float
    x0: np.ndarray
    n_paths: int
    seed: int
    switching: SwitchingLaw = field(default_factory=UniformSphere)
    initial_direction: np.ndarray | None = None  # angles; None = draw from the law

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.dimension < 2:
            raise ValueError(f"dimension must be >= 2, got {self.dimension}")
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not (0 <= int(self.seed) < _MAX_SEED):
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.x0.shape != (self.dimension,):
            raise ValueError(f"x0 must have shape ({self.dimension},), got {self.x0.shape}")
        if self.profile.dimension != self.dimension:
            raise ValueError(
                f"profile dimension {self.profile.dimension} != config dimension {self.dimension}"
            )
        if isinstance(self.switching, DiscreteSwitching):
            if self.switching.angles.shape[1] != self.dimension - 1:
                raise ValueError("discrete switching angles do not match the dimension")
        if self.initial_direction is not None:
            init = np.atleast_1d(np.asarray(self.initial_direction, dtype=float))
            if init.shape != (self.dimension - 1,):
                raise ValueError("initial_direction must be an angle vector of length n-1")
            object.__setattr__(self, "initial_direction", init)

    def describe(self) -> dict:
        """Canonical JSON-friendly form, used for fingerprints and manifests."""
        switching: dict
        if isinstance(self.switching, UniformSphere):
            switching = {"kind": "uniform_sphere"}
        else:
            switching = {
                "kind": "discrete",
                "angles": self.switching.angles.tolist(),
                "probabilities": self.switching.probabilities.tolist(),
            }
        return {
            "dimension": self.dimension,
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "x0": self.x0.tolist(),
            "n_paths": self.n_paths,
            "seed": int(self.seed),
            "profile": self.profile.describe(),
            "switching": switching,
            "initial_direction": (
                None if self.initial_direction is None else self.initial_direction.tolist()
            ),
        }


def config_fingerprint(config: EvolutionConfig) -> str:
    """sha256 over the canonical config description."""
    payload = json.dumps(config.describe(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class Trajectory:
    """One exact piecewise-linear path.

    positions[k+1] = positions[k] + v_k * (t_{k+1} - t_k) * s_k with the
    segment times t_0 = 0 < switch_times < t_last = horizon; directions holds
    one unit vector per segment.
    """

    horizon: float
    switch_times: np.ndarray   # (m,), strictly inside (0, horizon)
    directions: np.ndarray     # (m+1, n)
    positions: np.ndarray      # (m+2, n), starts at x0, ends at x(horizon)

    @property
    def times(self) -> np.ndarray:
        return np.concatenate(([0.0], self.switch_times, [self.horizon]))

    @property
    def endpoint(self) -> np.ndarray:
        return self.positions[-1]


@dataclass(frozen=True)
class EndpointEnsemble:
    """Endpoints of independent paths at the common horizon."""

    dimension: int
    t: float
    points: np.ndarray  # (n_paths, n)
    config_fingerprint: str

    def __post_init__(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != self.dimension:
            raise ValueError("points must be (n_paths, dimension)")


def _path_rng(seed: int, path_index: int) -> Generator:
    # Philox key packs (seed, path_index) into 128 bits: distinct paths get
    # distinct, statistically independent counter-based streams.
    return Generator(Philox(key=(int(seed) << 64) + int(path_index)))


def _draw_switch_times(rng: Generator, epsilon: float, horizon: float) -> np.ndarray:
    """Event epochs of the Poisson clock inside (0, horizon)."""
    mean = epsilon * epsilon
    expected = horizon / mean
    block = max(16, int(expected + 6.0 * math.sqrt(expected) + 16.0))
    waits = rng.exponential(mean, size=block)
    total = float(waits.sum())
    while total < horizon:
        more = rng.exponential(mean, size=block)
        waits = np.concatenate([waits, more])
        total += float(more.sum())
    epochs = np.cumsum(waits)
    m = int(np.searchsorted(epochs, horizon))
    return epochs[:m]


def _simulate_arrays(
    config: EvolutionConfig, path_index: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Core path draw: (switch_times, directions (m+1, n), displacements (m+1, n))."""
    rng = _path_rng(config.seed, path_index)
    n = config.dimension
    switch_times = _draw_switch_times(rng, config.epsilon, config.horizon)
    m = switch_times.size
    n_draw = m if config.initial_direction is not None else m + 1

    if isinstance(config.switching, UniformSphere):
        if n_draw > 0:
            g = rng.standard_normal((n_draw, n))
            drawn = g / np.linalg.norm(g, axis=-1, keepdims=True)
        else:
            drawn = np.empty((0, n))
        if config.initial_direction is not None:
            first = directions_from_angles(config.initial_direction)
            dirs = np.vstack([first[None, :], drawn])
        else:
            dirs = drawn
        angles = angles_from_directions(dirs)
    else:
        law = config.switching
        idx = rng.choice(law.angles.shape[0], size=n_draw, p=law.probabilities)
        angles = law.angles[idx]
        if config.initial_direction is not None:
            angles = np.vstack([config.initial_direction[None, :], angles])
        dirs = directions_from_angles(angles)

    c, c1 = config.profile.values_at(angles)
    speeds = c / config.epsilon + c1
    bounds = np.concatenate(([0.0], switch_times, [config.horizon]))
    durations = np.diff(bounds)
    displacements = (speeds * durations)[:, None] * dirs
    return switch_times, dirs, displacements


def simulate_path(config: EvolutionConfig, path_index: int) -> Trajectory:
    """Simulate one path exactly; deterministic in (config.seed, path_index)."""
    switch_times, dirs, displacements = _simulate_arrays(config, path_index)
    positions = np.vstack([config.x0[None, :], config.x0 + np.cumsum(displacements, axis=0)])
    return Trajectory(config.horizon, switch_times, dirs, positions)


def _endpoint(config: EvolutionConfig, path_index: int) -> np.ndarray:
    _, _, displacements = _simulate_arrays(config, path_index)
    return config.x0 + displacements.sum(axis=0)


def _endpoint_block(config: EvolutionConfig, start: int, stop: int) -> np.ndarray:
    out = np.empty((stop - start, config.dimension))
    for i in range(start, stop):
        try:
            out[i - start] = _endpoint(config, i)
        except MemoryError as exc:
            raise RuntimeError(
                f"resource exhaustion: completed paths [{start}, {i}) of [{start}, {stop})"
            ) from exc
    return out


def resolve_workers(workers: int | None) -> int:
    """Explicit argument wins; else the REVOLVE_THREADS env var; else 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("REVOLVE_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            warnings.warn(f"ignoring non-integer REVOLVE_THREADS={env!r}")
    return 1


def simulate_ensemble(config: EvolutionConfig, workers: int | None = None) -> EndpointEnsemble:
    """Endpoints of n_paths independent paths.

    The result is bit-identical for any worker count: each path is computed
    from its own (seed, path_index) stream and written at its own row.
    """
    if (
        config.profile.atoms
        and not config.profile.has_continuous
        and isinstance(config.switching, UniformSphere)
    ):
        warnings.warn(
            "purely atomic profile under uniform switching: the sampled "
            "directions miss the atoms almost surely, so the particle never "
            "moves; use discrete switching over the atom angles instead"
        )
    workers = resolve_workers(workers)
    points = np.empty((config.n_paths, config.dimension))
    if workers == 1 or config.n_paths < 4 * workers:
        points[:] = _endpoint_block(config, 0, config.n_paths)
    else:
        n_chunks = min(config.n_paths, 4 * workers)
        edges = np.linspace(0, config.n_paths, n_chunks + 1, dtype=int)
        spans = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                blocks = pool.map(
                    _endpoint_block,
                    [config] * len(spans),
                    [a for a, _ in spans],
                    [b for _, b in spans],
                )
                for (a, b), block in zip(spans, blocks):
                    points[a:b] = block
        except Exception as exc:  # pool/pickling failure: fall back to serial
            warnings.warn(f"parallel execution failed ({exc!r}); running serially")
            points[:] = _endpoint_block(config, 0, config.n_paths)
    return EndpointEnsemble(
        dimension=config.dimension,
        t=config.horizon,
        points=points,
        config_fingerprint=config_fingerprint(config),
    )


def with_epsilon(config: EvolutionConfig, epsilon: float, seed: int | None = None) -> EvolutionConfig:
    """Copy of the config at another epsilon (and optionally another seed)."""
    return replace(
        config, epsilon=epsilon, seed=config.seed if seed is None else seed
    )
