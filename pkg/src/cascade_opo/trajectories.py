"""Quantum-jump trajectories and a dense master-equation oracle.

The no-jump step is the first-order update (1 - i dt H_eff) followed by
renormalisation; a jump applies sqrt(2 gamma_i) a_i.  One uniform variate per
step decides between mode-1 jump, mode-2 jump and no jump.  Each trajectory
draws from its own Philox stream keyed by (master_seed, traj_index), so
ensembles are reproducible independently of how they are scheduled.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .fock import (
    DimensionError,
    HilbertSpec,
    partial_trace,
    projector,
    reduced_from_state,
    top_level_population,
)
from .model import CascadeConfig, operators

log = logging.getLogger(__name__)

DP_MAX = 0.05
LEAKAGE_LIMIT = 1e-4
MASTER_MAX_DIM = 1024


class StepSizeError(RuntimeError):
    pass


class LeakageError(RuntimeError):
    pass


class TraceDriftError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float = 1e-3
    t_final: float = 50.0
    n_traj: int = 1000
    master_seed: int = 0
    record_stride: int = 100
    transient_fraction: float = 0.5
    dp_max: float = DP_MAX
    leakage_limit: float = LEAKAGE_LIMIT

    def __post_init__(self):
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if not 0 <= self.transient_fraction < 1:
            raise ValueError("transient_fraction must lie in [0, 1)")
        if not 0 < self.dp_max < 1:
            raise ValueError("dp_max must lie in (0, 1)")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @classmethod
    def default_for(cls, config: CascadeConfig, **kw) -> "TrajectoryConfig":
        kw.setdefault("t_final", 20.0 / min(config.gamma1, config.gamma2))
        return cls(**kw)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def record_times(self) -> np.ndarray:
        idx = np.arange(0, self.n_steps + 1, self.record_stride)
        return idx * self.dt


@dataclass(frozen=True)
class JumpRecord:
    time: float
    mode: int


def trajectory_rng(master_seed: int, traj_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(traj_index,))
    return np.random.Generator(np.random.Philox(ss))


# -- single step (reference implementation) --------------------------------

def jump_probabilities(psi: np.ndarray, config: CascadeConfig, spec: HilbertSpec, dt: float):
    ops = operators(config, spec)
    p = np.abs(psi) ** 2
    return 2 * config.gamma1 * dt * float(p @ ops.n1), 2 * config.gamma2 * dt * float(p @ ops.n2)


def step(psi: np.ndarray, config: CascadeConfig, spec: HilbertSpec, dt: float,
         rng: np.random.Generator, t: float = 0.0, dp_max: float = DP_MAX):
    """One first-order quantum-jump update; returns (new state, JumpRecord or None)."""
    ops = operators(config, spec)
    dp1, dp2 = jump_probabilities(psi, config, spec, dt)
    if dp1 + dp2 >= dp_max:
        raise StepSizeError(
            f"jump probability {dp1 + dp2:.4f} per step exceeds {dp_max}; reduce dt below "
            f"{dt * dp_max / (dp1 + dp2):.3e}"
        )
    u = rng.random()
    if u < dp1:
        out = math.sqrt(2 * config.gamma1) * (ops.a1 @ psi) / math.sqrt(dp1 / dt)
        rec = JumpRecord(t + dt, 1)
    elif u < dp1 + dp2:
        out = math.sqrt(2 * config.gamma2) * (ops.a2 @ psi) / math.sqrt(dp2 / dt)
        rec = JumpRecord(t + dt, 2)
    else:
        out = (psi - 1j * dt * (ops.H_eff @ psi)) / math.sqrt(1 - dp1 - dp2)
        rec = None
    return out / np.linalg.norm(out), rec


# -- compiled inner loop ---------------------------------------------------

@numba.njit(cache=True)
def _moments(psi, n1d, n2d):
    e1 = 0.0
    e2 = 0.0
    for i in range(psi.shape[0]):
        p = psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
        e1 += p * n1d[i]
        e2 += p * n2d[i]
    return e1, e2


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _advance(psi, offsets, diags, n1d, n2d, g1, g2, N2, dt, nsteps, t0,
             uniforms, upos, dpmax, jump_t, jump_m, njumps):
    """Advance ``nsteps`` steps of size dt, halving a step while its jump probability is too large.

    Returns (upos, njumps, steps_done).  Stops early when the uniform buffer
    or the jump buffer runs out so the caller can refill and resume.
    """
    d = psi.shape[0]
    work = np.empty(d, dtype=np.complex128)
    e1, e2 = _moments(psi, n1d, n2d)
    for s in range(nsteps):
        # worst case one uniform per halving level
        if upos + 64 > uniforms.shape[0] or njumps + 64 > jump_t.shape[0]:
            return upos, njumps, s
        t = t0 + s * dt
        remaining = dt
        while remaining > 1e-15 * dt:
            h = remaining
            dp1 = 2.0 * g1 * h * e1
            dp2 = 2.0 * g2 * h * e2
            while dp1 + dp2 >= dpmax:
                h *= 0.5
                dp1 *= 0.5
                dp2 *= 0.5
            u = uniforms[upos]
            upos += 1
            nrm2 = 0.0
            f1 = 0.0
            f2 = 0.0
            if u < dp1 + dp2:
                mode = 1 if u < dp1 else 2
                for i in range(d):
                    work[i] = 0.0
                for i in range(d):
                    n1 = i // N2
                    n2 = i - n1 * N2
                    if mode == 1 and n1 > 0:
                        work[i - N2] = math.sqrt(n1) * psi[i]
                    elif mode == 2 and n2 > 0:
                        work[i - 1] = math.sqrt(n2) * psi[i]
                for i in range(d):
                    p = work[i].real * work[i].real + work[i].imag * work[i].imag
                    nrm2 += p
                    f1 += p * n1d[i]
                    f2 += p * n2d[i]
                jump_t[njumps] = t + (dt - remaining) + h
                jump_m[njumps] = mode
                njumps += 1
            else:
                # H_eff is stored by diagonals: diags[k, j] = H[j - offsets[k], j]
                for i in range(d):
                    work[i] = psi[i]
                c = -1j * h
                for k in range(offsets.shape[0]):
                    off = offsets[k]
                    lo = max(0, -off)
                    hi = min(d, d - off)
                    row = diags[k]
                    for i in range(lo, hi):
                        work[i] += c * (row[i + off] * psi[i + off])
                for i in range(d):
                    p = work[i].real * work[i].real + work[i].imag * work[i].imag
                    nrm2 += p
                    f1 += p * n1d[i]
                    f2 += p * n2d[i]
            scale = 1.0 / math.sqrt(nrm2)
            for i in range(d):
                psi[i] = work[i] * scale
            e1 = f1 / nrm2
            e2 = f2 / nrm2
            remaining -= h
    return upos, njumps, nsteps


class _Stepper:
    """Drives ``_advance`` for one trajectory, managing the uniform and jump buffers."""

    def __init__(self, psi, config: CascadeConfig, spec: HilbertSpec, tcfg: TrajectoryConfig, rng):
        K = operators(config, spec).H_eff.todia()
        self.offsets = K.offsets.astype(np.int64)
        self.diags = np.ascontiguousarray(K.data, dtype=np.complex128)
        self.n1d, self.n2d = spec.number_diagonals()
        self.g1, self.g2 = float(config.gamma1), float(config.gamma2)
        self.N2 = spec.n_max_2 + 1
        self.tcfg = tcfg
        self.rng = rng
        self.psi = np.array(psi, dtype=np.complex128)
        self.block = max(4096, 2 * tcfg.record_stride + 128)
        self.uniforms = rng.random(self.block)
        self.upos = 0
        self.jump_t = np.empty(1024)
        self.jump_m = np.empty(1024, dtype=np.int64)
        self.jumps: list[JumpRecord] = []
        self.t = 0.0
        self.step_index = 0

    def run(self, nsteps: int) -> None:
        done = 0
        while done < nsteps:
            if self.upos + 64 > self.uniforms.shape[0]:
                # keep unused draws so the consumed stream does not depend on block size
                self.uniforms = np.concatenate([self.uniforms[self.upos:], self.rng.random(self.block)])
                self.upos = 0
            t0 = (self.step_index + done) * self.tcfg.dt
            self.upos, nj, k = _advance(
                self.psi, self.offsets, self.diags, self.n1d, self.n2d,
                self.g1, self.g2, self.N2, self.tcfg.dt, nsteps - done, t0,
                self.uniforms, self.upos, self.tcfg.dp_max, self.jump_t, self.jump_m, 0,
            )
            self.jumps.extend(JumpRecord(float(t), int(m)) for t, m in zip(self.jump_t[:nj], self.jump_m[:nj]))
            done += k
        self.step_index += nsteps
        self.t = self.step_index * self.tcfg.dt


@dataclass
class TrajectoryResult:
    traj_index: int
    times: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    cum_jumps_1: np.ndarray
    cum_jumps_2: np.ndarray
    jumps: list[JumpRecord]
    max_top_population: float
    states: list[np.ndarray] | None = None

    @property
    def flagged(self) -> bool:
        return self.max_top_population >= LEAKAGE_LIMIT


def _records(initial, config, spec, tcfg, traj_index):
    """Yield (record index, time, state, jumps so far) at every record point."""
    psi0 = np.asarray(initial, dtype=complex)
    if psi0.shape != (spec.dim,):
        raise DimensionError(f"initial state has shape {psi0.shape}, expected ({spec.dim},)")
    psi0 = psi0 / np.linalg.norm(psi0)
    stepper = _Stepper(psi0, config, spec, tcfg, trajectory_rng(tcfg.master_seed, traj_index))
    n_steps = tcfg.n_steps
    idx = 0
    yield idx, 0.0, stepper.psi, stepper.jumps
    while stepper.step_index < n_steps:
        stepper.run(min(tcfg.record_stride, n_steps - stepper.step_index))
        idx += 1
        yield idx, stepper.t, stepper.psi, stepper.jumps


def run_trajectory(initial: np.ndarray, config: CascadeConfig, spec: HilbertSpec,
                   tcfg: TrajectoryConfig, traj_index: int, keep_states: bool = False,
                   strict_leakage: bool = False) -> TrajectoryResult:
    """One quantum-jump trajectory recorded every ``record_stride`` steps.

    With ``strict_leakage`` a LeakageError is raised as soon as the top two
    Fock levels of either mode hold ``leakage_limit`` of the population.
    """
    ops = operators(config, spec)
    times, n1, n2, c1, c2, states = [], [], [], [], [], []
    top = 0.0
    for _, t, psi, jumps in _records(initial, config, spec, tcfg, traj_index):
        p = np.abs(psi) ** 2
        times.append(t)
        n1.append(float(p @ ops.n1))
        n2.append(float(p @ ops.n2))
        c1.append(sum(1 for j in jumps if j.mode == 1))
        c2.append(len(jumps) - c1[-1])
        top = max(top, *top_level_population(p, spec))
        if strict_leakage and top >= tcfg.leakage_limit:
            raise LeakageError(
                f"trajectory {traj_index}: top Fock levels hold {top:.2e} of the population at t={t:g}; "
                "increase n_max"
            )
        if keep_states:
            states.append(psi.copy())
    return TrajectoryResult(traj_index, np.array(times), np.array(n1), np.array(n2),
                            np.array(c1), np.array(c2), list(jumps), top,
                            states if keep_states else None)


# -- ensembles -------------------------------------------------------------

@dataclass
class _Contribution:
    n1: np.ndarray
    n2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    top: np.ndarray  # per record, max over modes of top-two-level population
    rho1_ss: np.ndarray
    rho2_ss: np.ndarray
    rho_final: np.ndarray | None


def _contribution(initial, config, spec, tcfg, traj_index, keep_full) -> _Contribution:
    ops = operators(config, spec)
    times = tcfg.record_times
    start = tcfg.transient_fraction * tcfg.t_final
    m = len(times)
    n1, n2 = np.empty(m), np.empty(m)
    c1, c2 = np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64)
    top = np.empty(m)
    d1, d2 = spec.dims
    r1, r2 = np.zeros((d1, d1), complex), np.zeros((d2, d2), complex)
    final = None
    for idx, t, psi, jumps in _records(initial, config, spec, tcfg, traj_index):
        p = np.abs(psi) ** 2
        n1[idx], n2[idx] = p @ ops.n1, p @ ops.n2
        c1[idx] = sum(1 for j in jumps if j.mode == 1)
        c2[idx] = len(jumps) - c1[idx]
        top[idx] = max(top_level_population(p, spec))
        if t >= start - 1e-12 * tcfg.t_final:
            r1 += reduced_from_state(psi, 1, spec)
            r2 += reduced_from_state(psi, 2, spec)
        if keep_full and idx == m - 1:
            final = projector(psi)
    return _Contribution(n1, n2, c1, c2, top, r1, r2, final)


def _chunk(args):
    initial, config, spec, tcfg, indices, keep_full = args
    return [_contribution(initial, config, spec, tcfg, i, keep_full) for i in indices]


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_n1: np.ndarray
    sem_n1: np.ndarray
    mean_n2: np.ndarray
    sem_n2: np.ndarray
    cum_jumps_1: np.ndarray
    cum_jumps_2: np.ndarray
    rho1_ss: np.ndarray
    rho2_ss: np.ndarray
    rho_final: np.ndarray | None
    top_population: np.ndarray  # ensemble mean per record
    n_traj: int
    steady_samples: int

    @property
    def flagged(self) -> bool:
        return bool(np.max(self.top_population) >= LEAKAGE_LIMIT)


class EnsembleAccumulator:
    """Running sums over trajectories; add contributions in trajectory order."""

    def __init__(self, tcfg: TrajectoryConfig, spec: HilbertSpec, keep_full: bool):
        m = len(tcfg.record_times)
        d1, d2 = spec.dims
        self.tcfg, self.spec = tcfg, spec
        self.count = 0
        self.s_n1, self.s_n2 = np.zeros(m), np.zeros(m)
        self.q_n1, self.q_n2 = np.zeros(m), np.zeros(m)
        self.c1, self.c2 = np.zeros(m, dtype=np.int64), np.zeros(m, dtype=np.int64)
        self.top = np.zeros(m)
        self.r1, self.r2 = np.zeros((d1, d1), complex), np.zeros((d2, d2), complex)
        self.full = np.zeros((spec.dim, spec.dim), complex) if keep_full else None

    def add(self, c: _Contribution) -> None:
        self.count += 1
        self.s_n1 += c.n1
        self.s_n2 += c.n2
        self.q_n1 += c.n1 ** 2
        self.q_n2 += c.n2 ** 2
        self.c1 += c.c1
        self.c2 += c.c2
        self.top += c.top
        self.r1 += c.rho1_ss
        self.r2 += c.rho2_ss
        if self.full is not None:
            self.full += c.rho_final

    def result(self) -> EnsembleResult:
        n = self.count
        times = self.tcfg.record_times
        start = self.tcfg.transient_fraction * self.tcfg.t_final
        samples = int(np.sum(times >= start - 1e-12 * self.tcfg.t_final))

        def sem(s, q):
            if n < 2:
                return np.zeros_like(s)
            var = np.maximum(q / n - (s / n) ** 2, 0.0) * n / (n - 1)
            return np.sqrt(var / n)

        norm = lambda r: r / np.trace(r).real
        return EnsembleResult(
            times=times,
            mean_n1=self.s_n1 / n, sem_n1=sem(self.s_n1, self.q_n1),
            mean_n2=self.s_n2 / n, sem_n2=sem(self.s_n2, self.q_n2),
            cum_jumps_1=self.c1.copy(), cum_jumps_2=self.c2.copy(),
            rho1_ss=norm(self.r1), rho2_ss=norm(self.r2),
            rho_final=None if self.full is None else norm(self.full),
            top_population=self.top / n,
            n_traj=n, steady_samples=samples,
        )


def run_ensemble(config: CascadeConfig, spec: HilbertSpec, tcfg: TrajectoryConfig,
                 initial: np.ndarray | None = None, keep_full: bool = False,
                 workers: int | None = 1) -> EnsembleResult:
    """Run ``tcfg.n_traj`` trajectories and merge them in index order.

    ``workers`` > 1 spreads contiguous index chunks over processes; the merge
    order is fixed so the result is bit-identical for any worker count.
    """
    if initial is None:
        initial = spec.vacuum()
    if keep_full and spec.dim > MASTER_MAX_DIM:
        raise DimensionError(f"full ensemble density requested for dimension {spec.dim} > {MASTER_MAX_DIM}")
    acc = EnsembleAccumulator(tcfg, spec, keep_full)
    workers = workers or os.cpu_count() or 1
    indices = list(range(tcfg.n_traj))
    if workers <= 1:
        for i in indices:
            acc.add(_contribution(initial, config, spec, tcfg, i, keep_full))
    else:
        size = max(1, math.ceil(len(indices) / (4 * workers)))
        chunks = [indices[i:i + size] for i in range(0, len(indices), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_chunk, [(initial, config, spec, tcfg, ch, keep_full) for ch in chunks]):
                for c in part:
                    acc.add(c)
    res = acc.result()
    if res.flagged:
        log.warning("leakage watchdog: top Fock levels reach %.2e (limit %.0e)",
                    float(np.max(res.top_population)), LEAKAGE_LIMIT)
    return res


def ensemble_density(config: CascadeConfig, spec: HilbertSpec, tcfg: TrajectoryConfig,
                     reduce_to: int | None = None, steady_state: bool = False,
                     workers: int | None = 1) -> np.ndarray:
    """Trajectory-averaged density matrix at t_final, or time-averaged after the transient."""
    if steady_state:
        if reduce_to is None:
            raise ValueError("steady-state averaging is kept for reduced (single-mode) matrices only")
        res = run_ensemble(config, spec, tcfg, workers=workers)
        return res.rho1_ss if reduce_to == 1 else res.rho2_ss
    res = run_ensemble(config, spec, tcfg, keep_full=True, workers=workers)
    if reduce_to is None:
        return res.rho_final
    return partial_trace(res.rho_final, reduce_to, spec)


# -- master-equation oracle ------------------------------------------------

def liouvillian_bound(config: CascadeConfig, spec: HilbertSpec) -> float:
    """Upper bound on the spectral radius of the Liouvillian."""
    K = operators(config, spec).H_eff
    absK = abs(K)
    k1 = float(absK.sum(axis=0).max())
    kinf = float(absK.sum(axis=1).max())
    return 2 * math.sqrt(k1 * kinf) + 2 * (config.gamma1 * spec.n_max_1 + config.gamma2 * spec.n_max_2)


@numba.njit(cache=True, fastmath=True)
def _lindblad_dia(rho, offsets, diags, g1, g2, N2, out):
    """out = -i(K rho - rho K†) + 2 g1 a1 rho a1† + 2 g2 a2 rho a2† for Hermitian rho.

    K is stored by diagonals (K[i, i + off] = diags[k, i + off]).
    """
    d = rho.shape[0]
    X = np.zeros((d, d), dtype=np.complex128)
    for k in range(offsets.shape[0]):
        off = offsets[k]
        for i in range(max(0, -off), min(d, d - off)):
            c = -1j * diags[k, i + off]
            src = rho[i + off]
            dst = X[i]
            for j in range(d):
                dst[j] += c * src[j]
    for i in range(d):
        m1 = i // N2
        m2 = i - m1 * N2
        for j in range(d):
            v = X[i, j] + np.conj(X[j, i])
            n1 = j // N2
            n2 = j - n1 * N2
            if i + N2 < d and j + N2 < d:
                v += 2.0 * g1 * math.sqrt((m1 + 1.0) * (n1 + 1.0)) * rho[i + N2, j + N2]
            if m2 + 1 < N2 and n2 + 1 < N2:
                v += 2.0 * g2 * math.sqrt((m2 + 1.0) * (n2 + 1.0)) * rho[i + 1, j + 1]
            out[i, j] = v
    return out


class _Lindblad:
    """Compiled Liouvillian action for one (config, spec), Hermitian inputs only."""

    def __init__(self, config: CascadeConfig, spec: HilbertSpec):
        K = operators(config, spec).H_eff.todia()
        self.offsets = K.offsets.astype(np.int64)
        self.diags = np.ascontiguousarray(K.data, dtype=np.complex128)
        self.g1, self.g2 = float(config.gamma1), float(config.gamma2)
        self.N2 = spec.n_max_2 + 1

    def __call__(self, rho):
        out = np.empty_like(rho)
        return _lindblad_dia(np.ascontiguousarray(rho), self.offsets, self.diags,
                             self.g1, self.g2, self.N2, out)


def _rk4(rho, L, dt):
    k1 = L(rho)
    k2 = L(rho + 0.5 * dt * k1)
    k3 = L(rho + 0.5 * dt * k2)
    k4 = L(rho + dt * k3)
    out = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (out + out.conj().T)


@dataclass
class MasterRun:
    rho: np.ndarray
    t: float
    dt: float
    times: list = field(default_factory=list)
    n1: list = field(default_factory=list)
    n2: list = field(default_factory=list)
    residual: float = float("nan")


def _master_setup(initial, config, spec, dt, max_dim, safety=0.5):
    if spec.dim > max_dim:
        raise DimensionError(f"composite dimension {spec.dim} exceeds the dense master-equation guard {max_dim}")
    rho = np.array(initial, dtype=complex)
    if rho.ndim == 1:
        rho = projector(rho / np.linalg.norm(rho))
    if rho.shape != (spec.dim, spec.dim):
        raise DimensionError(f"initial density matrix has shape {rho.shape}, expected {spec.dim}")
    if dt is None:
        dt = safety / liouvillian_bound(config, spec)
    return rho, dt


def _check_trace(rho, tr0, t):
    drift = abs(np.trace(rho).real - tr0)
    if drift > 1e-8:
        raise TraceDriftError(f"trace drifted by {drift:.2e} by t={t:g}")


def master_evolve(initial, config: CascadeConfig, spec: HilbertSpec, t_final: float,
                  dt: float | None = None, record_every: float | None = None,
                  max_dim: int = MASTER_MAX_DIM) -> MasterRun:
    """Fixed-step RK4 integration of the master equation up to ``t_final``.

    The default step is 0.5 / liouvillian_bound, shortened so that an integer
    number of steps lands exactly on ``t_final``.
    """
    rho, dt = _master_setup(initial, config, spec, dt, max_dim)
    n = max(1, int(math.ceil(t_final / dt)))
    dt = t_final / n
    ops = operators(config, spec)
    tr0 = np.trace(rho).real
    run = MasterRun(rho, 0.0, dt)
    every = n + 1 if record_every is None else max(1, int(round(record_every / dt)))

    def record(r, t):
        diag = np.diagonal(r).real
        run.times.append(t)
        run.n1.append(float(diag @ ops.n1))
        run.n2.append(float(diag @ ops.n2))

    L = _Lindblad(config, spec)
    record(rho, 0.0)
    for i in range(1, n + 1):
        rho = _rk4(rho, L, dt)
        if i % every == 0 or i == n:
            record(rho, i * dt)
    _check_trace(rho, tr0, t_final)
    run.rho, run.t = rho, t_final
    return run


def master_integrate(initial, config: CascadeConfig, spec: HilbertSpec, t_final: float,
                     dt: float | None = None, max_dim: int = MASTER_MAX_DIM) -> np.ndarray:
    return master_evolve(initial, config, spec, t_final, dt=dt, max_dim=max_dim).rho


def master_steady_state(initial, config: CascadeConfig, spec: HilbertSpec, tol: float = 1e-9,
                        max_time: float = 2000.0, dt: float | None = None,
                        max_dim: int = MASTER_MAX_DIM) -> MasterRun:
    """Integrate until max |d rho / dt| < tol.  Raises RuntimeError if ``max_time`` passes first.

    The default step sits near the RK4 stability edge; accuracy along the way
    does not matter because L(rho) = 0 is a fixed point of the RK4 map.
    """
    rho, dt = _master_setup(initial, config, spec, dt, max_dim, safety=2.0)
    tr0 = np.trace(rho).real
    check = max(1, int(round(1.0 / dt)))
    L = _Lindblad(config, spec)
    t, i, res = 0.0, 0, float("nan")
    while t < max_time:
        rho = _rk4(rho, L, dt)
        i += 1
        t = i * dt
        if i % check == 0:
            res = float(np.max(np.abs(L(rho))))
            if res < tol:
                _check_trace(rho, tr0, t)
                return MasterRun(rho, t, dt, residual=res)
    raise RuntimeError(f"no steady state within t={max_time:g} (last residual {res:.2e})")
