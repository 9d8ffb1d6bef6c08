"""Command-line front end.

    cascade-opo SUBCOMMAND --config PATH [--out DIR] [options]

Each run writes its CSV files plus a ``manifest`` into the output directory.
The manifest is itself a valid config (scaled units, every value explicit),
so ``--config OUT/manifest`` reproduces the run byte for byte.

Exit codes: 0 success, 1 failed check, 2 config error, 3 numerical guard.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import semiclassical as sc
from .config import ConfigError, RunConfig, format_config, parse_config
from .fock import DimensionError, partial_trace
from .model import SYMMETRY_ANGLES
from .trajectories import (
    LeakageError,
    StepSizeError,
    TraceDriftError,
    master_evolve,
    master_steady_state,
    run_ensemble,
)
from .wigner import GridTooCoarse, find_humps, rotation_symmetry_deviation, wigner

log = logging.getLogger("cascade_opo")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalGuard(RuntimeError):
    pass


def fmt(x) -> str:
    """Floats at 17 significant digits so they round-trip through decimal."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


BRANCH_HEADER = ["eps", "branch_id", "n1", "n2", "phi1", "phi2", "stable", "max_re_eig"]


def _branch_rows(eps, branches):
    for b in branches:
        yield [float(eps), b.branch_id, b.n1, b.n2, b.phi1, b.phi2, b.status, b.max_re_eig]


def cmd_steady_state(cfg: RunConfig, args, out: Path) -> tuple[list[Path], dict]:
    eps = cfg.cascade.epsilon
    branches = sc.analytic_branches(cfg.cascade, eps)
    files = [write_csv(out / "steady_state.csv", BRANCH_HEADER, _branch_rows(eps, branches))]
    if cfg.optics is not None:
        rows = []
        for b in branches:
            p_th, p1, p2 = sc.output_powers(b, cfg.cascade, cfg.optics, cfg.rate_scale or 1.0)
            rows.append([b.branch_id, p_th, p1, p2])
        files.append(write_csv(out / "powers.csv", ["branch_id", "P_th", "P1_out", "P2_out"], rows))
    return files, {}


def cmd_scan(cfg: RunConfig, args, out: Path):
    lo, hi, steps = cfg.run["eps_from"], cfg.run["eps_to"], cfg.run["eps_steps"]
    res = sc.scan(cfg.cascade, lo, hi, steps, direction="both", seed=cfg.trajectory.master_seed)
    rows = [r for p in res.points for r in _branch_rows(p.eps, p.branches)]
    files = [write_csv(out / "scan.csv", BRANCH_HEADER, rows)]
    att = []
    for p in res.points:
        att.append([p.eps, p.up, abs(p.up_state.alpha1) ** 2, abs(p.up_state.alpha2) ** 2, p.up_converged,
                    p.down, abs(p.down_state.alpha1) ** 2, abs(p.down_state.alpha2) ** 2, p.down_converged])
    files.append(write_csv(out / "attractors.csv",
                           ["eps", "up", "up_n1", "up_n2", "up_converged",
                            "down", "down_n1", "down_n2", "down_converged"], att))
    mask = res.hysteresis_mask()
    info = {"hysteresis_points": int(mask.sum())}
    if mask.any():
        info["hysteresis_from"] = fmt(res.eps[mask].min())
        info["hysteresis_to"] = fmt(res.eps[mask].max())
    return files, info


def _ensemble(cfg: RunConfig, args):
    res = run_ensemble(cfg.cascade, cfg.hilbert, cfg.trajectory, workers=args.workers)
    if res.flagged and args.strict_leakage:
        raise LeakageError(
            f"ensemble population of the top two Fock levels reached {np.max(res.top_population):.2e}; "
            "increase n_max"
        )
    return res


def cmd_trajectory(cfg: RunConfig, args, out: Path):
    res = _ensemble(cfg, args)
    rows = zip(res.times, res.mean_n1, res.sem_n1, res.mean_n2, res.sem_n2, res.cum_jumps_1, res.cum_jumps_2)
    path = write_csv(out / "trajectory.csv",
                     ["t", "mean_n1", "sem_n1", "mean_n2", "sem_n2", "cum_jumps_1", "cum_jumps_2"], rows)
    return [path], {"leakage_flagged": res.flagged, "max_top_population": fmt(float(np.max(res.top_population)))}


def _steady_reduced(cfg: RunConfig, args):
    """Steady-state reduced matrices (rho1, rho2) from the requested source."""
    source = cfg.run.get("source", "master" if cfg.hilbert.dim <= 1024 else "trajectory")
    if source == "master":
        run = master_steady_state(cfg.hilbert.vacuum(), cfg.cascade, cfg.hilbert)
        info = {"source": "master", "steady_time": fmt(run.t), "residual": fmt(run.residual)}
        return partial_trace(run.rho, 1, cfg.hilbert), partial_trace(run.rho, 2, cfg.hilbert), info
    res = _ensemble(cfg, args)
    info = {"source": "trajectory", "leakage_flagged": res.flagged}
    return res.rho1_ss, res.rho2_ss, info


def _write_grid(out: Path, mode: int, grid, cfg: RunConfig) -> list[Path]:
    X, Y = np.meshgrid(grid.xs, grid.ys)
    csv = write_csv(out / f"wigner_mode{mode}.csv", ["x", "y", "w"],
                    zip(X.ravel(), Y.ravel(), grid.values.ravel()))
    s = grid.spec
    meta = {
        "mode": mode, "x_min": s.x_min, "x_max": s.x_max, "y_min": s.y_min, "y_max": s.y_max,
        "nx": s.nx, "ny": s.ny, "order": "row-major, y outer, x inner",
        "variant": cfg.cascade.variant.value, "epsilon": cfg.cascade.epsilon,
        "integral": grid.integral(),
    }
    side = out / f"wigner_mode{mode}.json"
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [csv, side]


def cmd_master(cfg: RunConfig, args, out: Path):
    t = cfg.trajectory
    run = master_evolve(cfg.hilbert.vacuum(), cfg.cascade, cfg.hilbert, t.t_final,
                        record_every=t.dt * t.record_stride)
    path = write_csv(out / "master.csv", ["t", "n1", "n2"], zip(run.times, run.n1, run.n2))
    return [path], {"dt": fmt(run.dt)}


def cmd_wigner(cfg: RunConfig, args, out: Path):
    r1, r2, info = _steady_reduced(cfg, args)
    files = []
    for mode, rho in ((1, r1), (2, r2)):
        grid = wigner(rho, cfg.grid_for(rho.shape[0] - 1))
        files += _write_grid(out, mode, grid, cfg)
        humps = find_humps(grid)
        files.append(write_csv(out / f"humps_mode{mode}.csv", ["x", "y", "height", "r", "theta"],
                               ([h.x, h.y, h.height, h.r, h.theta] for h in humps)))
        info[f"humps_mode{mode}"] = len(humps)
    return files, info


def cmd_symmetry_check(cfg: RunConfig, args, out: Path):
    mode = cfg.run.get("mode", 1)
    angle = cfg.run.get("angle", SYMMETRY_ANGLES[cfg.cascade.variant][mode - 1] % (2 * math.pi))
    tol = cfg.run.get("tolerance", 1e-6)
    r1, r2, info = _steady_reduced(cfg, args)
    rho = r1 if mode == 1 else r2
    grid = wigner(rho, cfg.grid_for(rho.shape[0] - 1))
    dev = rotation_symmetry_deviation(grid, angle)
    passed = dev.relative < tol
    files = _write_grid(out, mode, grid, cfg)
    files.append(write_csv(out / "symmetry.csv",
                           ["mode", "angle", "deviation", "max_abs", "relative", "tolerance", "passed"],
                           [[mode, float(angle), dev.absolute, dev.max_abs, dev.relative, float(tol), passed]]))
    info.update(relative_deviation=fmt(dev.relative), passed=passed)
    print(f"mode {mode} rotation by {angle:.6f} rad: relative deviation {dev.relative:.3e} "
          f"({'below' if passed else 'above'} tolerance {tol:g})")
    return files, info


COMMANDS = {
    "steady-state": cmd_steady_state,
    "scan": cmd_scan,
    "trajectory": cmd_trajectory,
    "master": cmd_master,
    "wigner": cmd_wigner,
    "symmetry-check": cmd_symmetry_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascade-opo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
        s.add_argument("--seed", type=int, help="master seed override")
        s.add_argument("--traj", type=int, help="number of trajectories override")
        s.add_argument("--workers", type=int, default=1, help="processes for trajectory ensembles")
        s.add_argument("--strict-leakage", action="store_true",
                       help="treat a tripped leakage watchdog as an error (exit 3)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "scan":
            s.add_argument("--eps-from", type=float)
            s.add_argument("--eps-to", type=float)
            s.add_argument("--eps-steps", type=int)
        if name in ("symmetry-check", "wigner"):
            s.add_argument("--source", choices=("master", "trajectory"))
        if name == "symmetry-check":
            s.add_argument("--angle", type=float, help="rotation angle in radians")
            s.add_argument("--mode", type=int, choices=(1, 2))
            s.add_argument("--tolerance", type=float)
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    t = cfg.trajectory
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        t = replace(t, master_seed=args.seed)
    if args.traj is not None:
        if args.traj < 1:
            raise ConfigError("--traj must be >= 1")
        t = replace(t, n_traj=args.traj)
    run = dict(cfg.run)
    for flag, key in (("eps_from", "eps_from"), ("eps_to", "eps_to"), ("eps_steps", "eps_steps"),
                      ("angle", "angle"), ("mode", "mode"), ("source", "source"), ("tolerance", "tolerance")):
        value = getattr(args, flag, None)
        if value is not None:
            run[key] = value
    if args.command == "scan":
        missing = [k for k in ("eps_from", "eps_to", "eps_steps") if k not in run]
        if missing:
            raise ConfigError("scan needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
        if not run["eps_from"] < run["eps_to"] or run["eps_steps"] < 2 or run["eps_from"] < 0:
            raise ConfigError("scan needs 0 <= --eps-from < --eps-to and --eps-steps >= 2")
    if args.command == "symmetry-check" and "angle" in run and not 0 < run["angle"] < 2 * math.pi:
        raise ConfigError("--angle must lie in (0, 2 pi)")
    # only keep options meaningful for this subcommand so manifests stay minimal
    keep = {"scan": ("eps_from", "eps_to", "eps_steps"),
            "symmetry-check": ("angle", "mode", "source", "tolerance"),
            "wigner": ("source",)}.get(args.command, ())
    run = {k: v for k, v in run.items() if k in keep}
    return replace(cfg, trajectory=t, run=run)


def write_manifest(out: Path, cfg: RunConfig, command: str, files: list[Path], info: dict) -> Path:
    text = format_config(cfg)
    text += "\n[status]\n" + f"command = {command}\n"
    for k, v in info.items():
        text += f"{k} = {fmt(v)}\n"
    text += "\n[artifacts]\n"
    for f in files:
        text += f"{f.name} = sha256:{sha256(f)}\n"
    path = out / "manifest"
    path.write_text(text, encoding="utf-8")
    return path


HINTS = {
    StepSizeError: "reduce dt in [trajectory]",
    LeakageError: "increase n_max in [hilbert]",
    DimensionError: "lower n_max or use the trajectory source",
    TraceDriftError: "reduce the master-equation step or the truncation",
    GridTooCoarse: "increase [grid] extent or points",
    NumericalGuard: "see message",
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(parse_config(args.config), args)
        out = args.out or cfg.out_dir
        if out is None:
            raise ConfigError("no output directory: pass --out or set [output] dir")
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files, info = COMMANDS[args.command](cfg, args, out)
    except (StepSizeError, LeakageError, DimensionError, TraceDriftError, GridTooCoarse) as exc:
        print(f"numerical guard: {exc}\nhint: {HINTS[type(exc)]}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_manifest(out, cfg, args.command, files, info)
    for f in files:
        print(f)
    if info.get("passed") is False:
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
