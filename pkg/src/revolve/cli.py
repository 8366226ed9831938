"""Command-line orchestration: configs, subcommands, artifacts.

Subcommands: verify-operators, limit-coeffs, simulate, converge, report.
Experiments are described by a strict JSON config (unknown keys are
rejected, numeric constraints re-checked on load, errors carry the dotted
field path). Every run writes a manifest.json echoing the parsed config,
the seed and the package version; the manifest timestamp is the only
non-reproducible byte in any artifact. Floats in CSV files are written
with 17 significant digits so reruns are byte-identical.

Exit codes: 0 success, 2 config/schema violation, 3 balance or solvability
failure (the error JSON names the residual vector), 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .limits import BalanceError, gaussian_law_at, limit_coefficients
from .operator_lab import (
    ThetaField,
    apply_q,
    apply_r0,
    gaussian_bump,
    lab_limit_coefficients,
    potential_identity_error,
    project_pi,
    residual_scaling,
)
from .profiles import Atom, BUILTIN_NAMES, ProfileError, VelocityProfile, builtin_profile
from .simulator import (
    DiscreteSwitching,
    EvolutionConfig,
    UniformSphere,
    simulate_ensemble,
    simulate_path,
)
from .sphere import build_grid
from .stats import ks_marginals, limit_for_config, run_sweep, summarize

__all__ = ["SchemaError", "ExperimentConfig", "load_config", "run", "main"]

MODES = ("verify-operators", "limit-coeffs", "simulate", "converge", "report")
DEFAULT_EPS_SWEEP = (1e-1, 10**-1.5, 1e-2, 10**-2.5, 1e-3)


class SchemaError(ValueError):
    """Config violates the schema; path points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# strict config parsing


def _require_keys(obj: dict, path: str, required: tuple, optional: tuple) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected an object, got {type(obj).__name__}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise SchemaError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    for key in required:
        if key not in obj:
            raise SchemaError(f"{path}.{key}", "missing required key")


def _number(obj: dict, path: str, key: str, default=None) -> float:
    if key not in obj:
        if default is None:
            raise SchemaError(f"{path}.{key}", "missing required key")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"{path}.{key}", f"expected a finite number, got {v!r}")
    return float(v)


def _integer(obj: dict, path: str, key: str, default=None) -> int:
    if key not in obj:
        if default is None:
            raise SchemaError(f"{path}.{key}", "missing required key")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{path}.{key}", f"expected an integer, got {v!r}")
    return v


def _vector(obj: dict, path: str, key: str, length: int | None = None) -> np.ndarray:
    v = obj.get(key)
    if not isinstance(v, list) or not all(
        isinstance(e, (int, float)) and not isinstance(e, bool) for e in v
    ):
        raise SchemaError(f"{path}.{key}", "expected a list of numbers")
    if length is not None and len(v) != length:
        raise SchemaError(f"{path}.{key}", f"expected exactly {length} entries, got {len(v)}")
    return np.asarray(v, dtype=float)


def _parse_profile(obj, path: str, dimension: int) -> VelocityProfile:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    if "atoms" in obj:
        _require_keys(obj, path, ("atoms",), ())
        if not isinstance(obj["atoms"], list) or not obj["atoms"]:
            raise SchemaError(f"{path}.atoms", "expected a non-empty list")
        atoms = []
        for k, entry in enumerate(obj["atoms"]):
            apath = f"{path}.atoms[{k}]"
            _require_keys(entry, apath, ("angles", "weight", "c", "c1"), ())
            angles = _vector(entry, apath, "angles", length=dimension - 1)
            weight = _number(entry, apath, "weight")
            if weight <= 0.0:
                raise SchemaError(f"{apath}.weight", "must be positive")
            try:
                atoms.append(
                    Atom(angles, weight, _number(entry, apath, "c"), _number(entry, apath, "c1"))
                )
            except (ProfileError, ValueError) as exc:
                raise SchemaError(apath, str(exc)) from exc
        return VelocityProfile(dimension, atoms=tuple(atoms), name="custom_atoms")
    _require_keys(obj, path, ("name",), ("c", "c1"))
    name = obj["name"]
    if name not in BUILTIN_NAMES:
        raise SchemaError(f"{path}.name", f"unknown profile; known: {list(BUILTIN_NAMES)}")
    kwargs = {}
    if "c" in obj:
        kwargs["c"] = _number(obj, path, "c")
    if "c1" in obj:
        kwargs["c1"] = _number(obj, path, "c1")
    try:
        return builtin_profile(name, dimension, **kwargs)
    except ProfileError as exc:
        raise SchemaError(path, str(exc)) from exc


def _parse_switching(obj, path: str, dimension: int):
    if obj is None:
        return UniformSphere()
    _require_keys(obj, path, ("kind",), ("angles", "probabilities"))
    kind = obj["kind"]
    if kind == "uniform_sphere":
        if "angles" in obj or "probabilities" in obj:
            raise SchemaError(path, "uniform_sphere takes no angles/probabilities")
        return UniformSphere()
    if kind != "discrete":
        raise SchemaError(f"{path}.kind", "must be 'uniform_sphere' or 'discrete'")
    if "angles" not in obj or "probabilities" not in obj:
        raise SchemaError(path, "discrete switching needs angles and probabilities")
    rows = obj["angles"]
    if not isinstance(rows, list) or not rows:
        raise SchemaError(f"{path}.angles", "expected a non-empty list of angle rows")
    angles = []
    for k, row in enumerate(rows):
        angles.append(_vector({"row": row}, f"{path}.angles[{k}]", "row", length=dimension - 1))
    probs = _vector(obj, path, "probabilities", length=len(rows))
    if np.any(probs < 0.0) or abs(float(probs.sum()) - 1.0) > 1e-12:
        raise SchemaError(
            f"{path}.probabilities", "must be nonnegative and sum to 1 within 1e-12"
        )
    return DiscreteSwitching(np.asarray(angles), probs)


def _parse_evolution(obj, path: str) -> EvolutionConfig:
    _require_keys(
        obj,
        path,
        ("dimension", "epsilon", "horizon", "x0", "n_paths", "profile"),
        ("seed", "switching", "initial_direction"),
    )
    dimension = _integer(obj, path, "dimension")
    if dimension < 2:
        raise SchemaError(f"{path}.dimension", "must be >= 2")
    epsilon = _number(obj, path, "epsilon")
    if not (0.0 < epsilon <= 1.0):
        raise SchemaError(f"{path}.epsilon", "must lie in (0, 1]")
    horizon = _number(obj, path, "horizon")
    if horizon <= 0.0:
        raise SchemaError(f"{path}.horizon", "must be positive")
    x0 = _vector(obj, path, "x0", length=dimension)
    n_paths = _integer(obj, path, "n_paths")
    if n_paths < 1:
        raise SchemaError(f"{path}.n_paths", "must be >= 1")
    seed = _integer(obj, path, "seed", default=0)
    if not (0 <= seed < 2**64):
        raise SchemaError(f"{path}.seed", "must be an unsigned 64-bit integer")
    profile = _parse_profile(obj["profile"], f"{path}.profile", dimension)
    switching = _parse_switching(obj.get("switching"), f"{path}.switching", dimension)
    initial = None
    if obj.get("initial_direction") is not None:
        initial = _vector(obj, path, "initial_direction", length=dimension - 1)
    try:
        return EvolutionConfig(
            dimension=dimension,
            epsilon=epsilon,
            profile=profile,
            horizon=horizon,
            x0=x0,
            n_paths=n_paths,
            seed=seed,
            switching=switching,
            initial_direction=initial,
        )
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed and validated experiment description."""

    mode: str
    evolution: EvolutionConfig
    grid_resolution: int = 32
    eps_sweep: tuple[float, ...] = DEFAULT_EPS_SWEEP
    replicates: int = 20
    output_dir: str | None = None

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "evolution": self.evolution.describe(),
            "grid_resolution": self.grid_resolution,
            "eps_sweep": list(self.eps_sweep),
            "replicates": self.replicates,
            "output_dir": self.output_dir,
        }


def load_config(document: dict, mode: str, seed_override: int | None = None) -> ExperimentConfig:
    """Validate a raw JSON document against the strict schema."""
    _require_keys(
        document,
        "config",
        ("evolution",),
        ("mode", "grid_resolution", "eps_sweep", "replicates", "output_dir"),
    )
    if "mode" in document:
        if document["mode"] not in MODES:
            raise SchemaError("config.mode", f"must be one of {list(MODES)}")
        if document["mode"] != mode:
            raise SchemaError(
                "config.mode", f"config says {document['mode']!r} but subcommand is {mode!r}"
            )
    evolution = _parse_evolution(document["evolution"], "config.evolution")
    if seed_override is not None:
        if not (0 <= seed_override < 2**64):
            raise SchemaError("config.evolution.seed", "seed override out of u64 range")
        from dataclasses import replace

        evolution = replace(evolution, seed=seed_override)
    grid_resolution = _integer(document, "config", "grid_resolution", default=32)
    if grid_resolution < 2:
        raise SchemaError("config.grid_resolution", "must be >= 2")
    if "eps_sweep" in document:
        sweep = _vector(document, "config", "eps_sweep")
        if np.any(sweep <= 0.0):
            raise SchemaError("config.eps_sweep", "entries must be positive")
        eps_sweep = tuple(float(e) for e in sweep)
    else:
        eps_sweep = DEFAULT_EPS_SWEEP
    replicates = _integer(document, "config", "replicates", default=20)
    if replicates < 1:
        raise SchemaError("config.replicates", "must be >= 1")
    output_dir = document.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise SchemaError("config.output_dir", "expected a string path")
    return ExperimentConfig(mode, evolution, grid_resolution, eps_sweep, replicates, output_dir)


# ---------------------------------------------------------------------------
# artifact writers


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, config: ExperimentConfig) -> None:
    _write_json(
        out / "manifest.json",
        {
            "artifact_version": __version__,
            "mode": config.mode,
            "seed": int(config.evolution.seed),
            "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "config": config.describe(),
        },
    )


def _write_endpoints_csv(path: Path, points: np.ndarray) -> None:
    n = points.shape[1]
    header = "path_index," + ",".join(f"x{i + 1}" for i in range(n))
    lines = [header]
    for idx, row in enumerate(points):
        lines.append(str(idx) + "," + ",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_trajectories_csv(path: Path, config: EvolutionConfig) -> None:
    n = config.dimension
    header = "path_index,t," + ",".join(f"x{i + 1}" for i in range(n))
    lines = [header]
    for idx in range(config.n_paths):
        trajectory = simulate_path(config, idx)
        for t, pos in zip(trajectory.times, trajectory.positions):
            lines.append(f"{idx},{_fmt(t)}," + ",".join(_fmt(v) for v in pos))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommand bodies


def _run_verify_operators(config: ExperimentConfig, out: Path) -> dict:
    evo = config.evolution
    grid = build_grid(evo.dimension, config.grid_resolution)
    rng = np.random.default_rng(evo.seed)
    worst = {"pi_idempotent": 0.0, "q_pi": 0.0, "pi_q": 0.0, "r0_q_identity": 0.0}
    for _ in range(100):
        f = ThetaField(grid, rng.standard_normal(grid.size))
        pi_f = project_pi(f)
        worst["pi_idempotent"] = max(
            worst["pi_idempotent"],
            abs(project_pi(ThetaField(grid, np.full(grid.size, pi_f))) - pi_f),
        )
        worst["q_pi"] = max(
            worst["q_pi"],
            float(np.max(np.abs(apply_q(ThetaField(grid, np.full(grid.size, pi_f))).values))),
        )
        worst["pi_q"] = max(worst["pi_q"], abs(project_pi(apply_q(f))))
        worst["r0_q_identity"] = max(worst["r0_q_identity"], potential_identity_error(f))

    report: dict = {"dimension": evo.dimension, "identity_residuals": worst}
    limit = limit_coefficients(evo.profile, grid)
    report["limit_coefficients"] = {
        "drift": limit.drift.tolist(),
        "diffusion": limit.diffusion.tolist(),
        "drift_paper_sign": limit.drift_paper_sign.tolist(),
    }
    if not evo.profile.atoms:
        drift_lab, diffusion_lab = lab_limit_coefficients(evo.profile, grid)
        report["limit_coefficients"]["lab_vs_quadrature_max_diff"] = float(
            max(
                np.max(np.abs(drift_lab - limit.drift)),
                np.max(np.abs(diffusion_lab - limit.diffusion)),
            )
        )
        phi = gaussian_bump(evo.x0, 1.0)
        # residual scaling needs >= 4 epsilons over >= 2 decades; a sweep
        # tuned for `converge` may be narrower, so fall back to the default
        sweep = np.asarray(config.eps_sweep, dtype=float)
        if sweep.size < 4 or sweep.max() / sweep.min() < 100.0:
            sweep = np.asarray(DEFAULT_EPS_SWEEP)
        fit = residual_scaling(evo.profile, phi, evo.x0 + 0.25, grid, sweep)
        report["residual_scaling"] = {
            "eps": fit.eps_values.tolist(),
            "residual": fit.metric_values.tolist(),
            "slope": fit.slope,
            "exact": fit.exact,
        }
    else:
        report["residual_scaling"] = {
            "skipped": "atomic profile is not representable on the continuous grid"
        }
    _write_json(out / "operator_report.json", report)
    return report


def _run_limit_coeffs(config: ExperimentConfig, out: Path, paper_sign: bool) -> dict:
    grid = build_grid(config.evolution.dimension, config.grid_resolution)
    limit = limit_coefficients(config.evolution.profile, grid)
    payload = {"drift": limit.drift.tolist(), "A": limit.diffusion.tolist()}
    if paper_sign:
        payload["drift_paper_sign"] = limit.drift_paper_sign.tolist()
    _write_json(out / "limit_coeffs.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return payload


def _run_simulate(config: ExperimentConfig, out: Path, full_trajectories: bool) -> dict:
    ensemble = simulate_ensemble(config.evolution)
    _write_endpoints_csv(out / "endpoints.csv", ensemble.points)
    if full_trajectories:
        _write_trajectories_csv(out / "trajectories.csv", config.evolution)
    summary = summarize(ensemble)
    payload = {
        "n_paths": int(ensemble.points.shape[0]),
        "mean": summary.mean.tolist(),
        "covariance": summary.covariance.tolist(),
        "fingerprint": ensemble.config_fingerprint,
    }
    _write_json(out / "simulate_summary.json", payload)
    return payload


def _run_converge(config: ExperimentConfig, out: Path) -> dict:
    result = run_sweep(
        config.evolution, config.eps_sweep, grid_resolution=config.grid_resolution
    )
    payload = {
        "eps": result.eps_values.tolist(),
        "metric": result.metric_values.tolist(),
        "noise_floor": result.noise_floors.tolist(),
        "ks_pvalues": result.ks_pvalues.tolist(),
        "slope": result.fit.slope,
        "intercept": result.fit.intercept,
        "r_squared": result.fit.r_squared,
        "plateau": result.fit.plateau,
    }
    _write_json(out / "sweep.json", payload)
    lines = ["epsilon,metric,noise_floor,min_ks_pvalue"]
    for k in range(result.eps_values.size):
        lines.append(
            ",".join(
                [
                    _fmt(result.eps_values[k]),
                    _fmt(result.metric_values[k]),
                    _fmt(result.noise_floors[k]),
                    _fmt(float(result.ks_pvalues[k].min())),
                ]
            )
        )
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return payload


def _run_report(config: ExperimentConfig, out: Path) -> dict:
    evo = config.evolution
    limit = limit_for_config(evo, config.grid_resolution)
    target = gaussian_law_at(limit, evo.horizon, evo.x0)
    ensemble = simulate_ensemble(evo)
    summary = summarize(ensemble)
    ks = ks_marginals(ensemble, target)

    lines = ["coordinate,mean,se_mean,target_mean,variance,target_variance,ks_pvalue"]
    for i in range(evo.dimension):
        lines.append(
            ",".join(
                [
                    f"x{i + 1}",
                    _fmt(summary.mean[i]),
                    _fmt(summary.se_mean[i]),
                    _fmt(target.mean[i]),
                    _fmt(summary.covariance[i, i]),
                    _fmt(target.covariance[i, i]),
                    _fmt(ks.pvalues[i]),
                ]
            )
        )
    (out / "moments.csv").write_text("\n".join(lines) + "\n")

    text = [
        f"random evolution report (n={evo.dimension}, eps={evo.epsilon}, "
        f"T={evo.horizon}, paths={evo.n_paths}, seed={evo.seed})",
        f"limit drift:     {np.array2string(limit.drift, precision=6)}",
        f"limit diffusion: {np.array2string(limit.diffusion, precision=6)}",
        f"endpoint mean:   {np.array2string(summary.mean, precision=6)}",
        f"endpoint cov:    {np.array2string(summary.covariance, precision=6)}",
        f"KS p-values:     {np.array2string(ks.pvalues, precision=4)}",
        f"min KS p-value:  {ks.min_pvalue:.4g}",
    ]
    (out / "report.txt").write_text("\n".join(text) + "\n")
    return {"min_ks_pvalue": ks.min_pvalue}


def run(
    config: ExperimentConfig,
    out_dir: str | None = None,
    paper_sign: bool = False,
    full_trajectories: bool = False,
) -> int:
    """Execute the configured mode, writing artifacts into the output directory."""
    out = Path(out_dir or config.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, config)
    if config.mode == "verify-operators":
        _run_verify_operators(config, out)
    elif config.mode == "limit-coeffs":
        _run_limit_coeffs(config, out, paper_sign)
    elif config.mode == "simulate":
        _run_simulate(config, out, full_trajectories)
    elif config.mode == "converge":
        _run_converge(config, out)
    elif config.mode == "report":
        _run_report(config, out)
    else:
        raise SchemaError("config.mode", f"unknown mode {config.mode!r}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revolve",
        description="Monte-Carlo and operator laboratory for random evolutions",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default: config or ./out)")
        p.add_argument("--seed", type=int, default=None, help="override evolution.seed")
        if mode == "limit-coeffs":
            p.add_argument(
                "--paper-sign",
                action="store_true",
                help="also emit the opposite-sign drift functional",
            )
        if mode == "simulate":
            p.add_argument(
                "--full-trajectories",
                action="store_true",
                help="dump every path segment to trajectories.csv",
            )
    return parser


def _error_json(kind: str, message: str, **extra) -> str:
    payload = {"error": {"kind": kind, "message": message, **extra}}
    return json.dumps(payload, sort_keys=True)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        try:
            document = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise SchemaError("config", f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError("config", f"invalid JSON: {exc}") from exc
        config = load_config(document, args.mode, seed_override=args.seed)
        return run(
            config,
            out_dir=args.out,
            paper_sign=getattr(args, "paper_sign", False),
            full_trajectories=getattr(args, "full_trajectories", False),
        )
    except SchemaError as exc:
        print(_error_json("schema", str(exc), path=exc.path))
        return 2
    except BalanceError as exc:
        print(
            _error_json(
                "balance",
                str(exc),
                residual=exc.report.residual_vector.tolist(),
                residual_norm=exc.report.residual_norm,
            )
        )
        return 3
    except (ProfileError, ValueError) as exc:
        print(_error_json("invalid", str(exc)))
        return 1


if __name__ == "__main__":
    sys.exit(main())
