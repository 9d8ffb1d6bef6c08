"""Run configuration: a flat ``key = value`` file with optional ``[section]`` headers.

Every key belongs to exactly one section; keys written before any header are
routed to their section by name.  ``units = si`` takes rates in s^-1 and
rescales them by gamma1; ``units = scaled`` takes ratios to gamma1 directly.
Times (dt, t_final) are always in units of 1/gamma1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .fock import HilbertSpec
from .model import CascadeConfig, Variant
from .semiclassical import OpticsParams
from .trajectories import TrajectoryConfig
from .wigner import GridSpec


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.line = line


ALIASES = {
    "k1": "k", "k2": "k",
    "chi1": "chi", "chi2": "chi",
    "k1_over_gamma1": "k_over_gamma1", "k2_over_gamma1": "k_over_gamma1",
    "chi1_over_gamma1": "chi_over_gamma1", "chi2_over_gamma1": "chi_over_gamma1",
    "phi": "Phi", "e_abs": "E_abs",
    "n": "n_max",
    "master_seed": "seed",
}

SECTIONS = {
    "model": {"variant": str, "units": str, "gamma1": float, "gamma2": float, "chi": float, "k": float,
              "gamma2_over_gamma1": float, "chi_over_gamma1": float, "k_over_gamma1": float,
              "epsilon": float, "E_abs": float, "Phi": float, "gamma1_si": float},
    "hilbert": {"n_max": int, "n_max_1": int, "n_max_2": int},
    "trajectory": {"dt": float, "t_final": float, "n_traj": int, "seed": int, "record_stride": int,
                   "transient_fraction": float, "dp_max": float},
    "grid": {"extent": float, "points": int},
    "optics": {"omega": float, "L": float},
    "output": {"dir": str},
    "run": {"eps_from": float, "eps_to": float, "eps_steps": int, "angle": float, "mode": int,
            "source": str, "tolerance": float},
}
# written into manifests, skipped on reading
IGNORED_SECTIONS = {"artifacts", "status"}

KEY_SECTION = {key: sec for sec, keys in SECTIONS.items() for key in keys}


@dataclass
class RunConfig:
    cascade: CascadeConfig
    hilbert: HilbertSpec
    trajectory: TrajectoryConfig
    grid_extent: float | None = None
    grid_points: int = 101
    optics: OpticsParams | None = None
    out_dir: Path | None = None
    rate_scale: float | None = None  # gamma1 in s^-1 when known
    run: dict = field(default_factory=dict)

    def grid_for(self, n_max: int) -> GridSpec:
        extent = self.grid_extent if self.grid_extent is not None else 1.25 * (math.sqrt(n_max) + 1.0)
        return GridSpec.square(extent, self.grid_points)


def _convert(raw: str, kind, key, path, line):
    try:
        if kind is int:
            value = int(raw)
        elif kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"{key} = {raw!r} is not a valid {kind.__name__}", path, line) from None
    return value


def read_entries(text: str, path: str = "<config>") -> dict[str, tuple[object, int]]:
    """Parse text into {key: (value, line)} with types and section membership checked."""
    entries: dict[str, tuple[object, int]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in SECTIONS and section not in IGNORED_SECTIONS:
                raise ConfigError(f"unknown section [{section}]", path, lineno)
            continue
        if section in IGNORED_SECTIONS:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, ALIASES.get(key.lower(), key))
        if key not in KEY_SECTION and key.lower() in KEY_SECTION:
            key = key.lower()
        if key not in KEY_SECTION:
            raise ConfigError(f"unknown key {key!r}", path, lineno)
        home = KEY_SECTION[key]
        if section is not None and section != home:
            raise ConfigError(f"key {key!r} belongs in [{home}], not [{section}]", path, lineno)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r} (first set on line {entries[key][1]})", path, lineno)
        entries[key] = (_convert(value, SECTIONS[home][key], key, path, lineno), lineno)
    return entries


def parse_config_text(text: str, path: str = "<config>") -> RunConfig:
    e = read_entries(text, path)
    get = lambda k, default=None: e[k][0] if k in e else default
    line = lambda k: e[k][1] if k in e else None

    def need(k):
        if k not in e:
            raise ConfigError(f"missing required key {k!r}", path)
        return e[k][0]

    try:
        variant = Variant.parse(need("variant"))
    except ValueError as exc:
        raise ConfigError(str(exc), path, line("variant")) from None
    units = str(need("units")).lower()
    if units not in ("si", "scaled"):
        raise ConfigError(f"units must be 'si' or 'scaled', got {units!r}", path, line("units"))

    def positive(k, value):
        if value <= 0:
            raise ConfigError(f"{k} must be positive, got {value!r}", path, line(k))
        return value

    def nonneg(k, value):
        if value < 0:
            raise ConfigError(f"{k} must be non-negative, got {value!r}", path, line(k))
        return value

    si_keys = ("gamma1", "gamma2", "chi", "k")
    scaled_keys = ("gamma2_over_gamma1", "chi_over_gamma1", "k_over_gamma1", "gamma1_si")
    wrong = [k for k in (scaled_keys if units == "si" else si_keys) if k in e]
    if wrong:
        raise ConfigError(f"key {wrong[0]!r} does not fit units = {units}", path, line(wrong[0]))
    if units == "si":
        g1 = positive("gamma1", need("gamma1"))
        g2 = positive("gamma2", need("gamma2")) / g1
        chi = positive("chi", need("chi")) / g1
        k = nonneg("k", need("k")) / g1
        rate_scale = g1
    else:
        g2 = positive("gamma2_over_gamma1", need("gamma2_over_gamma1"))
        chi = positive("chi_over_gamma1", get("chi_over_gamma1", 1.0))
        k = nonneg("k_over_gamma1", need("k_over_gamma1"))
        rate_scale = get("gamma1_si")
        if rate_scale is not None:
            positive("gamma1_si", rate_scale)
    if ("epsilon" in e) == ("E_abs" in e):
        raise ConfigError("give exactly one of 'epsilon' or 'E_abs'", path)
    phi = get("Phi", 0.0)
    base = CascadeConfig(variant, chi=chi, k=k, gamma1=1.0, gamma2=g2, E_abs=0.0, Phi=phi)
    if "epsilon" in e:
        cascade = base.with_epsilon(nonneg("epsilon", e["epsilon"][0]))
    else:
        cascade = CascadeConfig(variant, chi=chi, k=k, gamma1=1.0, gamma2=g2,
                                E_abs=nonneg("E_abs", e["E_abs"][0]), Phi=phi)

    n1 = get("n_max_1", get("n_max"))
    n2 = get("n_max_2", get("n_max"))
    if n1 is None or n2 is None:
        raise ConfigError("missing truncation: set 'n_max' (or 'n_max_1' and 'n_max_2')", path)
    if "n_max" in e and ("n_max_1" in e or "n_max_2" in e):
        raise ConfigError("give either 'n_max' or 'n_max_1'/'n_max_2'", path, line("n_max"))
    for key in ("n_max", "n_max_1", "n_max_2"):
        if key in e and e[key][0] < 1:
            raise ConfigError(f"{key} must be >= 1", path, line(key))
    hilbert = HilbertSpec(n1, n2)

    checks = {
        "dt": (lambda v: v > 0, "must be positive"),
        "t_final": (lambda v: v > 0, "must be positive"),
        "n_traj": (lambda v: v >= 1, "must be >= 1"),
        "seed": (lambda v: 0 <= v < 2**64, "must be a 64-bit unsigned integer"),
        "record_stride": (lambda v: v >= 1, "must be >= 1"),
        "transient_fraction": (lambda v: 0 <= v < 1, "must lie in [0, 1)"),
        "dp_max": (lambda v: 0 < v < 1, "must lie in (0, 1)"),
    }
    tkw = {}
    for key, (ok, msg) in checks.items():
        if key in e:
            if not ok(e[key][0]):
                raise ConfigError(f"{key} {msg}", path, line(key))
            tkw["master_seed" if key == "seed" else key] = e[key][0]
    trajectory = TrajectoryConfig.default_for(cascade, **tkw)

    points = get("points", 101)
    if points < 3 or points % 2 == 0:
        raise ConfigError("grid points must be odd and >= 3", path, line("points"))
    extent = get("extent")
    if extent is not None:
        positive("extent", extent)

    optics = None
    if "omega" in e or "L" in e:
        optics = OpticsParams(omega=positive("omega", need("omega")), L=positive("L", need("L")))

    out_dir = Path(e["dir"][0]) if "dir" in e else None
    run = {k: e[k][0] for k in SECTIONS["run"] if k in e}
    if "mode" in run and run["mode"] not in (1, 2):
        raise ConfigError("mode must be 1 or 2", path, line("mode"))
    if "source" in run and run["source"] not in ("master", "trajectory"):
        raise ConfigError("source must be 'master' or 'trajectory'", path, line("source"))
    return RunConfig(cascade, hilbert, trajectory, extent, points, optics, out_dir, rate_scale, run)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config_text(text, str(path))


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Resolved configuration in scaled units; parses back to an identical RunConfig."""
    c, t = cfg.cascade, cfg.trajectory
    lines = [
        "[model]",
        f"variant = {c.variant.value}",
        "units = scaled",
        f"gamma2_over_gamma1 = {_fmt(c.gamma2 / c.gamma1)}",
        f"chi_over_gamma1 = {_fmt(c.chi / c.gamma1)}",
        f"k_over_gamma1 = {_fmt(c.k / c.gamma1)}",
        f"E_abs = {_fmt(c.E_abs)}",
        f"Phi = {_fmt(c.Phi)}",
    ]
    if cfg.rate_scale is not None:
        lines.append(f"gamma1_si = {_fmt(cfg.rate_scale)}")
    lines += [
        "", "[hilbert]",
        f"n_max_1 = {cfg.hilbert.n_max_1}",
        f"n_max_2 = {cfg.hilbert.n_max_2}",
        "", "[trajectory]",
        f"dt = {_fmt(t.dt)}",
        f"t_final = {_fmt(t.t_final)}",
        f"n_traj = {t.n_traj}",
        f"seed = {t.master_seed}",
        f"record_stride = {t.record_stride}",
        f"transient_fraction = {_fmt(t.transient_fraction)}",
        f"dp_max = {_fmt(t.dp_max)}",
        "", "[grid]",
        f"points = {cfg.grid_points}",
    ]
    if cfg.grid_extent is not None:
        lines.append(f"extent = {_fmt(cfg.grid_extent)}")
    if cfg.optics is not None:
        lines += ["", "[optics]", f"omega = {_fmt(cfg.optics.omega)}", f"L = {_fmt(cfg.optics.L)}"]
    if cfg.run:
        lines += ["", "[run]"] + [f"{k} = {_fmt(v)}" for k, v in cfg.run.items()]
    return "\n".join(lines) + "\n"
