"""Mean-field steady states, linear stability and hysteresis sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import CascadeConfig, Variant

MARGINAL_TOL = 1e-12
FIXED_POINT_TOL = 1e-8


class NotAFixedPoint(ValueError):
    pass


@dataclass(frozen=True)
class MeanFieldState:
    alpha1: complex
    alpha2: complex

    def __post_init__(self):
        object.__setattr__(self, "alpha1", complex(self.alpha1))
        object.__setattr__(self, "alpha2", complex(self.alpha2))
        if not all(math.isfinite(v) for v in (self.alpha1.real, self.alpha1.imag, self.alpha2.real, self.alpha2.imag)):
            raise ValueError("mean-field amplitudes must be finite")

    @classmethod
    def from_polar(cls, n1, phi1, n2, phi2):
        return cls(math.sqrt(n1) * complex(math.cos(phi1), math.sin(phi1)),
                   math.sqrt(n2) * complex(math.cos(phi2), math.sin(phi2)))

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2])

    def norm(self) -> float:
        return math.hypot(abs(self.alpha1), abs(self.alpha2))


@dataclass
class Branch:
    n1: float
    n2: float
    phi1: float
    phi2: float
    branch_id: str
    status: str = "unknown"  # stable | unstable | marginal
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    @property
    def stable(self) -> bool:
        return self.status == "stable"

    @property
    def state(self) -> MeanFieldState:
        return MeanFieldState.from_polar(self.n1, self.phi1, self.n2, self.phi2)

    @property
    def max_re_eig(self) -> float:
        return float(np.max(self.eigenvalues.real)) if len(self.eigenvalues) else float("nan")


def _terms(a1: complex, a2: complex, c: CascadeConfig):
    """Individual terms of d(alpha1)/dt and d(alpha2)/dt."""
    E = c.E
    if c.variant is Variant.FOUR_PHOTON:
        t1 = (-c.gamma1 * a1, 2 * c.k * a2 * a1.conjugate())
        t2 = (-c.gamma2 * a2, 2 * c.chi * a2.conjugate() * E, -c.k * a1 * a1)
    else:
        t1 = (-c.gamma1 * a1, c.chi * a2.conjugate() * E, 2 * c.k * a2 * a1.conjugate())
        t2 = (-c.gamma2 * a2, c.chi * a1.conjugate() * E, -c.k * a1 * a1)
    return t1, t2


def mean_field_rhs(state: MeanFieldState, config: CascadeConfig) -> MeanFieldState:
    t1, t2 = _terms(state.alpha1, state.alpha2, config)
    return MeanFieldState(sum(t1), sum(t2))


def relative_residual(state: MeanFieldState, config: CascadeConfig) -> float:
    """|rhs| divided by the size of its largest contributing term (0 at the origin)."""
    t1, t2 = _terms(state.alpha1, state.alpha2, config)
    scale = max(abs(t) for t in t1 + t2)
    if scale == 0:
        return 0.0
    return math.hypot(abs(sum(t1)), abs(sum(t2))) / scale


def threshold(config: CascadeConfig) -> float:
    """Pump amplitude at which the zero solution loses stability."""
    return config.threshold


def jacobian(state: MeanFieldState, config: CascadeConfig) -> np.ndarray:
    """4x4 real Jacobian in (Re a1, Im a1, Re a2, Im a2)."""
    a1, a2, E, k, chi = state.alpha1, state.alpha2, config.E, config.k, config.chi
    # df_j = A_jl d(alpha_l) + B_jl d(alpha_l*)
    if config.variant is Variant.FOUR_PHOTON:
        A = np.array([[-config.gamma1, 2 * k * a1.conjugate()], [-2 * k * a1, -config.gamma2]])
        B = np.array([[2 * k * a2, 0], [0, 2 * chi * E]])
    else:
        A = np.array([[-config.gamma1, 2 * k * a1.conjugate()], [-2 * k * a1, -config.gamma2]])
        B = np.array([[2 * k * a2, chi * E], [chi * E, 0]])
    J = np.empty((4, 4))
    P, M = A + B, A - B
    for j in range(2):
        for l in range(2):
            J[2 * j, 2 * l] = P[j, l].real
            J[2 * j, 2 * l + 1] = -M[j, l].imag
            J[2 * j + 1, 2 * l] = P[j, l].imag
            J[2 * j + 1, 2 * l + 1] = M[j, l].real
    return J


def stability(point, config: CascadeConfig) -> tuple[np.ndarray, str]:
    """Jacobian eigenvalues at a fixed point and its status.

    ``point`` is a Branch or a MeanFieldState.  Status is "stable" if every
    real part is below -1e-12, "marginal" if the largest lies within 1e-12 of
    zero, "unstable" otherwise.
    """
    state = point.state if isinstance(point, Branch) else point
    res = relative_residual(state, config)
    if res > FIXED_POINT_TOL:
        raise NotAFixedPoint(f"relative residual {res:.3e} exceeds {FIXED_POINT_TOL:g}")
    eig = np.linalg.eigvals(jacobian(state, config))
    eig = eig[np.argsort(-eig.real, kind="stable")]
    top = eig.real.max()
    if top < -MARGINAL_TOL:
        status = "stable"
    elif top <= MARGINAL_TOL:
        status = "marginal"
    else:
        status = "unstable"
    return eig, status


def _candidates(config: CascadeConfig, eps: float):
    g1, g2, k, Phi = config.gamma1, config.gamma2, config.k, config.Phi
    yield Branch(0.0, 0.0, 0.0, 0.0, "zero")
    if k == 0 or eps < 1:
        return
    if config.variant is Variant.FOUR_PHOTON:
        n1 = g1 * g2 * (eps - 1) / (2 * k * k)
        n2 = g1 * g1 / (4 * k * k)
        for m in range(4):
            # alpha2 must carry the phase of alpha1**2, which pins n to m mod 2
            yield Branch(n1, n2, Phi / 4 + m * math.pi / 2, Phi / 2 + (m % 2) * math.pi, f"upper:m={m}")
        return
    s = math.sqrt(eps * eps - 1)
    chiE = eps * math.sqrt(8 * g1 * g2) / 3  # chi2 |E|
    for family, sign in (("upper", 1.0), ("lower", -1.0)):
        # signed real amplitudes along the phase ray phi1 = Phi/3 + 2 pi n / 3
        x1 = math.sqrt(8 * g1 * g2) * (eps + sign * 3 * s) / (12 * k)
        x2 = x1 * (chiE - k * x1) / g2
        for n in range(3):
            phi1 = Phi / 3 + 2 * math.pi * n / 3 + (math.pi if x1 < 0 else 0.0)
            phi2 = 2 * Phi / 3 - 2 * math.pi * n / 3 + (math.pi if x2 < 0 else 0.0)
            yield Branch(x1 * x1, x2 * x2, phi1, phi2, f"{family}:n={n}")


def analytic_branches(config: CascadeConfig, epsilon: float) -> list[Branch]:
    """Closed-form steady states at pump ``epsilon`` (in threshold units) with stability.

    The pump phase of ``config`` is kept; its magnitude is replaced.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    cfg = config.with_epsilon(epsilon)
    out = []
    for b in _candidates(cfg, epsilon):
        if relative_residual(b.state, cfg) > 1e-10:
            continue
        b.eigenvalues, b.status = stability(b, cfg)
        out.append(b)
    return out


def zero_branch_boundary(config: CascadeConfig, lo: float = 0.5, hi: float = 2.0, tol: float = 1e-10) -> float:
    """Bisect the pump value where the origin stops being stable."""
    origin = MeanFieldState(0, 0)

    def stable_at(eps):
        return stability(origin, config.with_epsilon(eps))[1] == "stable"

    if not stable_at(lo) or stable_at(hi):
        raise ValueError(f"no stability change of the zero branch inside [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stable_at(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- time integration ------------------------------------------------------

@numba.njit(cache=True)
def _rhs(a1, a2, four, g1, g2, chi, k, E):
    if four:
        d1 = -g1 * a1 + 2.0 * k * a2 * np.conj(a1)
        d2 = -g2 * a2 + 2.0 * chi * np.conj(a2) * E - k * a1 * a1
    else:
        d1 = -g1 * a1 + chi * np.conj(a2) * E + 2.0 * k * a2 * np.conj(a1)
        d2 = -g2 * a2 + chi * np.conj(a1) * E - k * a1 * a1
    return d1, d2


@numba.njit(cache=True)
def _rk4_relax(a1, a2, four, g1, g2, chi, k, E, dt, window_steps, max_windows, tol, cap):
    # status: 0 not converged, 1 converged, 2 amplitude passed cap
    for w in range(max_windows):
        s1, s2 = a1, a2
        for _ in range(window_steps):
            k11, k12 = _rhs(a1, a2, four, g1, g2, chi, k, E)
            k21, k22 = _rhs(a1 + 0.5 * dt * k11, a2 + 0.5 * dt * k12, four, g1, g2, chi, k, E)
            k31, k32 = _rhs(a1 + 0.5 * dt * k21, a2 + 0.5 * dt * k22, four, g1, g2, chi, k, E)
            k41, k42 = _rhs(a1 + dt * k31, a2 + dt * k32, four, g1, g2, chi, k, E)
            a1 = a1 + dt / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
            a2 = a2 + dt / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
            if not abs(a1) + abs(a2) < cap:
                return a1, a2, 2, w + 1
        change = np.sqrt(abs(a1 - s1) ** 2 + abs(a2 - s2) ** 2)
        size = np.sqrt(abs(a1) ** 2 + abs(a2) ** 2)
        if change < tol * max(1.0, size):
            return a1, a2, 1, w + 1
    return a1, a2, 0, max_windows


@dataclass
class Relaxation:
    state: MeanFieldState
    converged: bool
    time: float
    runaway: bool = False


def relax(state: MeanFieldState, config: CascadeConfig, tol: float = 1e-10, max_time: float | None = None) -> Relaxation:
    """Integrate the mean-field equations with fixed-step RK4 until stationary.

    dt = 0.01 / max(gamma); convergence means the state moved less than ``tol``
    (relative to max(1, |alpha|)) over a window of 10 / min(gamma).  Growth past
    ``runaway_cap(config)`` stops the integration with ``runaway=True``.
    """
    gmax, gmin = max(config.gamma1, config.gamma2), min(config.gamma1, config.gamma2)
    dt = 0.01 / gmax
    window = 10.0 / gmin
    steps = max(1, int(round(window / dt)))
    if max_time is None:
        max_time = 2.0e4 / gmin
    max_windows = max(1, int(math.ceil(max_time / (steps * dt))))
    a1, a2, code, used = _rk4_relax(
        complex(state.alpha1), complex(state.alpha2), config.variant is Variant.FOUR_PHOTON,
        config.gamma1, config.gamma2, config.chi, config.k, config.E, dt, steps, max_windows, tol,
        runaway_cap(config),
    )
    return Relaxation(MeanFieldState(a1, a2), code == 1, used * steps * dt, runaway=code == 2)


def runaway_cap(config: CascadeConfig) -> float:
    gmax = max(config.gamma1, config.gamma2)
    scale = gmax / config.k if config.k > 0 else 1.0
    return 1e6 * (1.0 + scale) * (1.0 + abs(config.E) * config.chi / gmax)


RUNAWAY = "runaway"


@dataclass
class ScanPoint:
    eps: float
    branches: list[Branch]
    up: str | None = None
    down: str | None = None
    up_state: MeanFieldState | None = None
    down_state: MeanFieldState | None = None
    up_converged: bool = True
    down_converged: bool = True


@dataclass
class ScanResult:
    variant: Variant
    points: list[ScanPoint]

    @property
    def eps(self) -> np.ndarray:
        return np.array([p.eps for p in self.points])

    def hysteresis_mask(self) -> np.ndarray:
        """True where up- and down-sweeps settled on different branch families."""
        fam = lambda bid: None if bid is None else bid.split(":")[0]
        return np.array([fam(p.up) != fam(p.down) for p in self.points])


def nearest_branch(state: MeanFieldState, branches: list[Branch]) -> Branch:
    x = state.as_array()
    return min(branches, key=lambda b: np.linalg.norm(b.state.as_array() - x))


def _sweep(config, grid, start: MeanFieldState, rng, noise):
    out = []
    current = start
    for eps in grid:
        cfg = config.with_epsilon(eps)
        kick = noise * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        seed = MeanFieldState(current.alpha1 + kick[0], current.alpha2 + kick[1])
        rel = relax(seed, cfg)
        out.append((rel.state, rel.converged, rel.runaway))
        # after a runaway the next point restarts near the origin
        current = MeanFieldState(0, 0) if rel.runaway else rel.state
    return out


def _label(state, runaway, branches):
    if runaway or not branches:
        return RUNAWAY if runaway else None
    return nearest_branch(state, branches).branch_id


def scan(config: CascadeConfig, eps_lo: float, eps_hi: float, steps: int,
         direction: str = "both", noise: float = 1e-6, seed: int = 0) -> ScanResult:
    """Sweep the pump and record analytic branches plus the attractor each sweep lands on.

    Every point is warm-started from the previous attractor plus a complex
    Gaussian kick of size ``noise``; the down-sweep starts from the last
    up-sweep attractor, or from the strongest stable branch at ``eps_hi``.
    """
    if not eps_lo < eps_hi:
        raise ValueError("need eps_lo < eps_hi")
    if steps < 2:
        raise ValueError("need at least two scan points")
    if direction not in ("up", "down", "both"):
        raise ValueError(f"direction must be up, down or both, not {direction!r}")
    grid = np.linspace(eps_lo, eps_hi, steps)
    points = [ScanPoint(float(e), analytic_branches(config, float(e))) for e in grid]
    rng = np.random.default_rng(seed)
    last = None
    if direction in ("up", "both"):
        res = _sweep(config, grid, MeanFieldState(0, 0), rng, noise)
        for p, (st, ok, run) in zip(points, res):
            p.up_state, p.up_converged = st, ok
            p.up = _label(st, run, p.branches)
        last = res[-1][0] if not res[-1][2] else None
    if direction in ("down", "both"):
        if last is None:
            stable = [b for b in points[-1].branches if b.stable]
            last = max(stable, key=lambda b: b.n1).state if stable else MeanFieldState(0, 0)
        res = _sweep(config, grid[::-1], last, rng, noise)[::-1]
        for p, (st, ok, run) in zip(points, res):
            p.down_state, p.down_converged = st, ok
            p.down = _label(st, run, p.branches)
    return ScanResult(config.variant, points)


# -- output powers ---------------------------------------------------------

HBAR = 1.054571817e-34
C_LIGHT = 299792458.0


@dataclass(frozen=True)
class OpticsParams:
    omega: float  # pump angular frequency, rad/s
    L: float  # optical path of the pump, m
    c: float = C_LIGHT
    hbar: float = HBAR

    def __post_init__(self):
        if min(self.omega, self.L, self.c, self.hbar) <= 0:
            raise ValueError("optics parameters must be positive")


def subharmonic_frequencies(variant, omega: float) -> tuple[float, float]:
    if Variant.parse(variant) is Variant.FOUR_PHOTON:
        return omega / 4, omega / 2
    return omega / 3, 2 * omega / 3


def output_powers(branch: Branch, config: CascadeConfig, optics: OpticsParams,
                  rate_scale: float = 1.0) -> tuple[float, float, float]:
    """(P_th, P1_out, P2_out) in watts.

    ``rate_scale`` converts the config's rates to s^-1 (gamma1 in s^-1 when the
    config is in gamma1-scaled units).  E_th and photon numbers are invariant
    under that rescaling.
    """
    w1, w2 = subharmonic_frequencies(config.variant, optics.omega)
    p_th = optics.c * optics.hbar * optics.omega * config.threshold ** 2 / (2 * optics.L)
    p1 = 2 * optics.hbar * w1 * config.gamma1 * rate_scale * branch.n1
    p2 = 2 * optics.hbar * w2 * config.gamma2 * rate_scale * branch.n2
    return p_th, p1, p2
