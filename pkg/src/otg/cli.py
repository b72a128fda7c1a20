"""Command-line front end: config-driven solves, the bundled experiment
registry, and the grid-refinement error table.

Subcommands
-----------
``solve --config <path> [--out <dir>]``
    Run one geodesic solve described by a JSON config; write solution.json,
    snapshots.csv, velocity0.csv, newton_log.csv and continuation_log.csv.

``example <name> [--out <dir>]``
    Run one of the registered experiments ex1..ex10.  ex1 additionally
    writes error_vs_exact.csv comparing the computed initial velocity with
    the known analytic field.

``convergence [--full] [--out <dir>]``
    Run the torus experiment at a ladder of grid spacings and write
    table1.csv with max/L2 velocity errors, Newton iteration counts, and
    observed convergence orders.  The two finest spacings only run under
    ``--full``.

Exit codes: 0 success, 2 continuation stalled, 3 configuration error.
Environment: ``OTG_THREADS`` caps the batched-kernel thread count (0 = auto).
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

from .continuation import (
    ContinuationSchedule,
    GeodesicProblem,
    GeodesicSolution,
    HomotopyKind,
    run,
)
from .density import exact_initial_velocity_ex1, spec_from_dict, spec_to_dict
from .errors import ConfigError, ContinuationStalled, OTGError, UnknownExample
from .grid import Boundary, LatticeGrid
from .integrator import IntegratorConfig, Scheme
from .shooting import ShootingConfig

_DEFAULT_SNAPSHOT_TIMES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

_TORUS_BETA = 1.0 / (256.0 * math.pi**2)


@dataclass(frozen=True)
class OutputConfig:
    directory: str | None = None
    snapshot_times: tuple[float, ...] = _DEFAULT_SNAPSHOT_TIMES


@dataclass(frozen=True)
class RunConfig:
    grid: LatticeGrid
    mu_spec: object
    nu_spec: object
    kind: HomotopyKind
    K: int
    integrator: IntegratorConfig
    shooting: ShootingConfig
    continuation: ContinuationSchedule
    output: OutputConfig

    def problem(self) -> GeodesicProblem:
        return GeodesicProblem(self.grid, self.mu_spec, self.nu_spec, self.kind, self.K)


def _block(data: dict, key: str, required: bool = False) -> dict:
    val = data.pop(key, None)
    if val is None:
        if required:
            raise ConfigError(f"missing required config block {key!r}")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"config block {key!r} must be an object")
    return dict(val)


def _reject_unknown(block: dict, context: str) -> None:
    if block:
        raise ConfigError(f"unknown keys in {context}: {sorted(block)}")


def _get(block: dict, key: str, default=None, required: bool = False):
    if key in block:
        return block.pop(key)
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


def config_from_dict(data: dict) -> RunConfig:
    """Validate a JSON-style config dict; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be an object")
    data = dict(data)
    try:
        gblock = _block(data, "grid", required=True)
        grid = LatticeGrid(
            dim=int(_get(gblock, "dim", required=True)),
            n=int(_get(gblock, "n", required=True)),
            lower=float(_get(gblock, "lower", required=True)),
            upper=float(_get(gblock, "upper", required=True)),
            boundary=Boundary(_get(gblock, "boundary", "no_flux")),
        )
        _reject_unknown(gblock, "grid")

        mu_raw = data.pop("mu", None)
        nu_raw = data.pop("nu", None)
        if mu_raw is None or nu_raw is None:
            raise ConfigError("config needs 'mu' and 'nu' density specs")
        mu_spec = spec_from_dict(mu_raw)
        nu_spec = spec_from_dict(nu_raw)

        kind = HomotopyKind(data.pop("homotopy", "linear_path"))
        K = int(data.pop("K", None) or 0)
        if K < 1:
            raise ConfigError("config needs K >= 1")

        iblock = _block(data, "integrator")
        integ = IntegratorConfig(
            scheme=Scheme(_get(iblock, "scheme", Scheme.SYMPLECTIC_EULER)),
            steps=int(_get(iblock, "steps", 30)),
            blowup_norm_threshold=float(_get(iblock, "blowup_threshold", 1e8)),
        )
        _reject_unknown(iblock, "integrator")

        sblock = _block(data, "shooting")
        barrier = _get(sblock, "barrier", None)
        shoot = ShootingConfig(
            newton_max_iters=int(_get(sblock, "newton_max_iters", 30)),
            rel_stop=float(_get(sblock, "rel_stop", 1e-5)),
            abs_stop=float(_get(sblock, "abs_stop", 1e-9)),
            fd_step=float(_get(sblock, "fd_step", 1e-6)),
            fd_floor=float(_get(sblock, "fd_floor", 1e-8)),
            barrier=None if barrier is None else float(barrier),
            frozen_jacobian=bool(_get(sblock, "frozen_jacobian", False)),
        )
        _reject_unknown(sblock, "shooting")

        cblock = _block(data, "continuation")
        sched = ContinuationSchedule(
            lambda0=float(_get(cblock, "lambda0", 0.1)),
            L=int(_get(cblock, "L", 20)),
            max_shrinks=int(_get(cblock, "max_shrinks", 6)),
            try_direct_first=bool(_get(cblock, "try_direct", True)),
        )
        _reject_unknown(cblock, "continuation")

        oblock = _block(data, "output")
        times = _get(oblock, "snapshot_times", list(_DEFAULT_SNAPSHOT_TIMES))
        out = OutputConfig(
            directory=_get(oblock, "directory", None),
            snapshot_times=tuple(float(t) for t in times),
        )
        _reject_unknown(oblock, "output")
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    _reject_unknown(data, "config")
    if any(not 0.0 <= t <= 1.0 for t in out.snapshot_times):
        raise ConfigError("snapshot times must lie in [0, 1]")
    return RunConfig(grid, mu_spec, nu_spec, kind, K, integ, shoot, sched, out)


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "grid": {
            "dim": cfg.grid.dim,
            "n": cfg.grid.n,
            "lower": cfg.grid.lower,
            "upper": cfg.grid.upper,
            "boundary": cfg.grid.boundary.value,
        },
        "mu": spec_to_dict(cfg.mu_spec),
        "nu": spec_to_dict(cfg.nu_spec),
        "homotopy": cfg.kind.value,
        "K": cfg.K,
        "integrator": {
            "scheme": cfg.integrator.scheme.value,
            "steps": cfg.integrator.steps,
            "blowup_threshold": cfg.integrator.blowup_norm_threshold,
        },
        "shooting": {
            "newton_max_iters": cfg.shooting.newton_max_iters,
            "rel_stop": cfg.shooting.rel_stop,
            "abs_stop": cfg.shooting.abs_stop,
            "fd_step": cfg.shooting.fd_step,
            "fd_floor": cfg.shooting.fd_floor,
            "barrier": cfg.shooting.barrier,
            "frozen_jacobian": cfg.shooting.frozen_jacobian,
        },
        "continuation": {
            "lambda0": cfg.continuation.lambda0,
            "L": cfg.continuation.L,
            "max_shrinks": cfg.continuation.max_shrinks,
            "try_direct": cfg.continuation.try_direct_first,
        },
        "output": {
            "directory": cfg.output.directory,
            "snapshot_times": list(cfg.output.snapshot_times),
        },
    }


# --- experiment registry ------------------------------------------------------


def _ex1(n: int = 16) -> dict:
    return {
        "grid": {"dim": 2, "n": n, "lower": 0.0, "upper": 1.0, "boundary": "periodic"},
        "mu": {"kind": "monge_ampere", "beta": _TORUS_BETA},
        "nu": {"kind": "uniform"},
        "homotopy": "linear_path",
        "K": 1,
        "integrator": {"steps": 160},
        "shooting": {"frozen_jacobian": True, "newton_max_iters": 30},
    }


def _gauss1d(rate, center, shift):
    return {"kind": "gaussian", "rates": [rate], "centers": [center], "shift": shift}


EXAMPLES: dict[str, dict] = {
    "ex1": _ex1(),
    "ex2": {
        "grid": {"dim": 1, "n": 100, "lower": -0.5, "upper": 2.5},
        "mu": _gauss1d(15.0, 0.4, 1e-4),
        "nu": _gauss1d(15.0, 1.4, 1e-4),
        "homotopy": "gaussian_path",
        "continuation": {"try_direct": False},
        "K": 60,
        "integrator": {"steps": 300},
    },
    "ex3": {
        "grid": {"dim": 1, "n": 40, "lower": 0.0, "upper": 2.0},
        "mu": {"kind": "uniform"},
        "nu": _gauss1d(25.0, 1.0, 0.0),
        "homotopy": "linear_path",
        "continuation": {"try_direct": False},
        "K": 60,
        "integrator": {"steps": 20},
    },
    "ex4": {
        "grid": {"dim": 1, "n": 75, "lower": -0.5, "upper": 2.5},
        "mu": _gauss1d(50.0, 0.4, 1e-4),
        "nu": _gauss1d(50.0, 1.4, 1e-4),
        "homotopy": "gaussian_path",
        "continuation": {"try_direct": False},
        "K": 80,
        "integrator": {"steps": 200},
    },
    "ex5": {
        "grid": {"dim": 2, "n": 25, "lower": -1.0, "upper": 4.0},
        "mu": {
            "kind": "gaussian",
            "rates": [5.0, 5.0],
            "centers": [1.5, 0.5],
            "shift": 0.01,
        },
        "nu": {
            "kind": "two_bump_gaussian",
            "bumps": [
                {"rates": [5.0, 5.0], "centers": [2.45, 2.45]},
                {"rates": [5.0, 5.0], "centers": [0.55, 2.45]},
            ],
            "shift": 0.01,
        },
        "homotopy": "gaussian_path",
        "continuation": {"try_direct": False},
        "K": 10,
        "integrator": {"steps": 30},
        "shooting": {"barrier": 1e-5},
    },
    "ex6": {
        "grid": {"dim": 2, "n": 20, "lower": -1.0, "upper": 3.0},
        "mu": {
            "kind": "gaussian",
            "rates": [5.0, 2.5],
            "centers": [0.3, 0.5],
            "shift": 1e-3,
        },
        "nu": {
            "kind": "gaussian",
            "rates": [10.0, 5.0],
            "centers": [1.3, 1.5],
            "shift": 1e-3,
        },
        "homotopy": "gaussian_path",
        "continuation": {"try_direct": False},
        "K": 10,
        "integrator": {"steps": 30},
    },
    "ex7": {
        "grid": {"dim": 2, "n": 20, "lower": -1.0, "upper": 3.0},
        "mu": {
            "kind": "laplace",
            "rates": [5.0, 5.0],
            "centers": [0.6, 0.5],
            "shift": 1e-3,
        },
        "nu": {
            "kind": "laplace",
            "rates": [5.0, 5.0],
            "centers": [1.6, 1.5],
            "shift": 1e-3,
        },
        "homotopy": "linear_path",
        "continuation": {"try_direct": False},
        "K": 10,
        "integrator": {"steps": 30},
    },
    "ex8": {
        "grid": {"dim": 2, "n": 20, "lower": -1.0, "upper": 3.0},
        "mu": {"kind": "uniform"},
        "nu": {
            "kind": "laplace",
            "rates": [10.0, 10.0],
            "centers": [1.6, 1.5],
            "shift": 0.01,
        },
        "homotopy": "linear_path",
        "continuation": {"try_direct": False},
        "K": 10,
        "integrator": {"steps": 30},
    },
    "ex9": {
        "grid": {"dim": 2, "n": 20, "lower": -1.0, "upper": 3.0},
        "mu": {"kind": "polynomial"},
        "nu": {
            "kind": "laplace",
            "rates": [10.0, 10.0],
            "centers": [1.6, 1.5],
            "shift": 0.01,
        },
        "homotopy": "linear_path",
        "continuation": {"try_direct": False},
        "K": 10,
        "integrator": {"steps": 30},
    },
    "ex10": {
        "grid": {"dim": 2, "n": 20, "lower": -1.0, "upper": 3.0},
        "mu": {
            "kind": "gaussian",
            "rates": [50.0, 50.0],
            "centers": [0.3, 0.5],
            "shift": 1e-3,
        },
        "nu": {
            "kind": "gaussian",
            "rates": [50.0, 50.0],
            "centers": [1.3, 1.5],
            "shift": 1e-3,
        },
        "homotopy": "gaussian_path",
        "continuation": {"try_direct": False},
        "K": 10,
        "integrator": {"steps": 30},
        "shooting": {"barrier": 1e-3},
    },
}


def example_config(name: str) -> RunConfig:
    if name not in EXAMPLES:
        raise UnknownExample(
            f"unknown example {name!r}; choose one of {sorted(EXAMPLES)}"
        )
    return config_from_dict(json.loads(json.dumps(EXAMPLES[name])))


# --- output emission ----------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row)
        )
    path.write_text("\n".join(lines) + "\n")


def node_velocity_from_potential(grid: LatticeGrid, potential: np.ndarray) -> np.ndarray:
    """Per-axis node velocity by forward differencing the potential.

    Each node takes the outgoing edge difference along every axis divided by
    the spacing; the upper no-flux boundary falls back to the incoming edge.
    Periodic axes wrap.
    """
    sg = np.asarray(potential, dtype=float).reshape(grid.shape)
    dx = grid.spacing
    comps = []
    for axis in range(grid.dim):
        s = np.moveaxis(sg, axis, -1)
        v = np.empty_like(s)
        if grid.boundary is Boundary.PERIODIC:
            v[:] = (np.roll(s, -1, axis=-1) - s) / dx
        else:
            v[..., :-1] = (s[..., 1:] - s[..., :-1]) / dx
            v[..., -1] = (s[..., -1] - s[..., -2]) / dx
        comps.append(np.moveaxis(v, -1, axis).ravel())
    return np.stack(comps, axis=1)


def write_outputs(cfg: RunConfig, sol: GeodesicSolution, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid
    coords = grid.coordinates()
    axis_names = [f"x{a + 1}" for a in range(grid.dim)]

    rows = []
    for t, field in sol.snapshots:
        for node in range(grid.num_nodes):
            rows.append(
                (float(t), node, *map(float, coords[node]), float(field.values[node]))
            )
    _write_csv(out_dir / "snapshots.csv", ["t", "node", *axis_names, "rho"], rows)

    vel = node_velocity_from_potential(grid, sol.S0)
    vel_names = [f"v{a + 1}" for a in range(grid.dim)]
    rows = [
        (
            node,
            *map(float, coords[node]),
            float(sol.S0[node]),
            *map(float, vel[node]),
        )
        for node in range(grid.num_nodes)
    ]
    _write_csv(
        out_dir / "velocity0.csv", ["node", *axis_names, "S0", *vel_names], rows
    )

    rows = []
    for lam, log in sol.newton_logs:
        for r in log:
            rows.append(
                (
                    float(lam),
                    r.iteration,
                    float(r.f_norm2),
                    float(r.f_inf),
                    float(r.step_norm),
                    r.barrier_activations,
                )
            )
    _write_csv(
        out_dir / "newton_log.csv",
        ["lambda", "iteration", "f_norm2", "f_inf", "step_norm", "barrier_activations"],
        rows,
    )

    rows = [
        (float(r.lam), r.newton_iterations, float(r.final_f_inf), r.shrink_count)
        for r in sol.continuation_log
    ]
    _write_csv(
        out_dir / "continuation_log.csv",
        ["lambda", "newton_iterations", "final_f_inf", "shrinks"],
        rows,
    )

    payload = {
        "distance": sol.distance,
        "lambda_schedule": [r.lam for r in sol.continuation_log],
        "newton_iterations_total": int(
            sum(r.newton_iterations for r in sol.continuation_log)
        ),
        "newton_iterations_per_lambda": [
            [r.lam, r.newton_iterations] for r in sol.continuation_log
        ],
        "boundary_residual_inf": sol.boundary_residual_inf,
        "min_breakpoint_density": sol.min_breakpoint_density,
        "success": sol.success,
        "wall_time_seconds": sol.wall_time,
        "config": config_to_dict(cfg),
    }
    (out_dir / "solution.json").write_text(json.dumps(payload, indent=2) + "\n")


def velocity_error_vs_exact(
    cfg: RunConfig, sol: GeodesicSolution
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Computed vs analytic initial velocity for the torus experiment."""
    grid = cfg.grid
    computed = node_velocity_from_potential(grid, sol.S0)
    exact = exact_initial_velocity_ex1(grid, cfg.mu_spec.beta)
    err = computed - exact
    max_err = float(np.abs(err).max())
    l2_err = float(np.sqrt((err**2).sum() * grid.cell_volume))
    return computed, exact, max_err, l2_err


def _write_ex1_error_csv(cfg: RunConfig, sol: GeodesicSolution, out_dir: Path) -> None:
    grid = cfg.grid
    computed, exact, max_err, l2_err = velocity_error_vs_exact(cfg, sol)
    coords = grid.coordinates()
    rows = [
        (
            node,
            *map(float, coords[node]),
            *map(float, computed[node]),
            *map(float, exact[node]),
        )
        for node in range(grid.num_nodes)
    ]
    _write_csv(
        out_dir / "error_vs_exact.csv",
        ["node", "x1", "x2", "v1_computed", "v2_computed", "v1_exact", "v2_exact"],
        rows,
    )
    payload = json.loads((out_dir / "solution.json").read_text())
    payload["velocity_error"] = {"max": max_err, "l2": l2_err}
    (out_dir / "solution.json").write_text(json.dumps(payload, indent=2) + "\n")


def run_config(cfg: RunConfig) -> GeodesicSolution:
    return run(
        cfg.problem(),
        cfg.continuation,
        cfg.integrator,
        cfg.shooting,
        snapshot_times=cfg.output.snapshot_times,
    )


# --- commands -----------------------------------------------------------------


def _resolve_out(cfg: RunConfig, out_arg: str | None, fallback: str) -> Path:
    if out_arg:
        return Path(out_arg)
    if cfg.output.directory:
        return Path(cfg.output.directory)
    return Path(fallback)


def cmd_solve(config_path: str, out_dir: str | None = None) -> int:
    try:
        raw = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 3
    try:
        cfg = config_from_dict(raw)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 3
    try:
        sol = run_config(cfg)
    except ContinuationStalled as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_outputs(cfg, sol, _resolve_out(cfg, out_dir, "otg-results/solve"))
    return 0


def cmd_example(name: str, out_dir: str | None = None) -> int:
    try:
        cfg = example_config(name)
    except UnknownExample as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    try:
        sol = run_config(cfg)
    except ContinuationStalled as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _resolve_out(cfg, out_dir, f"otg-results/{name}")
    write_outputs(cfg, sol, out)
    if name == "ex1":
        _write_ex1_error_csv(cfg, sol, out)
    return 0


_CONVERGENCE_GRIDS = (16, 32)
_CONVERGENCE_GRIDS_FULL = (16, 32, 64, 128)


def cmd_convergence(full: bool = False, out_dir: str | None = None) -> int:
    sizes = _CONVERGENCE_GRIDS_FULL if full else _CONVERGENCE_GRIDS
    rows = []
    prev_l2 = None
    for n in sizes:
        cfg = config_from_dict(_ex1(n=n))
        t0 = time.perf_counter()
        try:
            sol = run_config(cfg)
        except ContinuationStalled as exc:
            print(f"error at n={n}: {exc}", file=sys.stderr)
            return 2
        _, _, max_err, l2_err = velocity_error_vs_exact(cfg, sol)
        iters = sum(r.newton_iterations for r in sol.continuation_log)
        order = math.log2(prev_l2 / l2_err) if prev_l2 else float("nan")
        rows.append((float(cfg.grid.spacing), max_err, l2_err, iters, float(order)))
        prev_l2 = l2_err
        print(
            f"n={n}: dx={cfg.grid.spacing:.5g} max_err={max_err:.3e} "
            f"l2_err={l2_err:.3e} iters={iters} ({time.perf_counter() - t0:.1f}s)",
            file=sys.stderr,
        )
    out = Path(out_dir) if out_dir else Path("otg-results/convergence")
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "table1.csv",
        ["dx", "max_error", "l2_error", "iterations", "observed_order"],
        rows,
    )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otg",
        description="Wasserstein geodesics between lattice densities "
        "via continuation multiple shooting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a solve described by a JSON config")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default=None)

    p_ex = sub.add_parser("example", help="run a registered experiment")
    p_ex.add_argument("name")
    p_ex.add_argument("--out", default=None)

    p_conv = sub.add_parser("convergence", help="grid-refinement error table")
    p_conv.add_argument("--full", action="store_true")
    p_conv.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.out)
        if args.command == "example":
            return cmd_example(args.name, args.out)
        return cmd_convergence(full=args.full, out_dir=args.out)
    except OTGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
