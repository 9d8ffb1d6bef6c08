"""Cascade Hamiltonians, dissipators and phase-rotation symmetries.

All operators are built with hbar = 1.  Rates may be given in any consistent
unit; the CLI rescales everything by gamma1 so that time is gamma1 * t.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .fock import DimensionError, HilbertSpec, mode_operators


class Variant(enum.Enum):
    FOUR_PHOTON = "four_photon"  # w -> w/2 -> w/4
    THREE_PHOTON = "three_photon"  # w -> w/3 + 2w/3, 2w/3 -> w/3 + w/3

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"four": "four_photon", "a": "four_photon", "three": "three_photon", "b": "three_photon"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown variant {value!r}") from None


@dataclass(frozen=True)
class CascadeConfig:
    """Physical parameters of one cascaded oscillator.

    ``chi`` is the pump coupling (chi1 or chi2 depending on the variant) and
    ``k`` the intermode coupling (k1 or k2).  The pump is E = E_abs * exp(i Phi).
    """

    variant: Variant
    chi: float
    k: float
    gamma1: float
    gamma2: float
    E_abs: float
    Phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in ("chi", "k", "gamma1", "gamma2", "E_abs", "Phi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("damping rates gamma1, gamma2 must be positive")
        if self.chi < 0 or self.k < 0 or self.E_abs < 0:
            raise ValueError("chi, k and E_abs must be non-negative")

    @property
    def E(self) -> complex:
        return self.E_abs * complex(math.cos(self.Phi), math.sin(self.Phi))

    @property
    def threshold(self) -> float:
        if self.chi == 0:
            raise ZeroDivisionError("threshold undefined for chi = 0")
        if self.variant is Variant.FOUR_PHOTON:
            return self.gamma2 / (2.0 * self.chi)
        return 2.0 * math.sqrt(2.0 * self.gamma1 * self.gamma2) / (3.0 * self.chi)

    @property
    def epsilon(self) -> float:
        return self.E_abs / self.threshold

    def with_epsilon(self, epsilon: float) -> "CascadeConfig":
        return replace(self, E_abs=epsilon * self.threshold)

    @classmethod
    def from_epsilon(cls, variant, epsilon, k, gamma2, gamma1=1.0, chi=1.0, Phi=0.0):
        cfg = cls(variant, chi=chi, k=k, gamma1=gamma1, gamma2=gamma2, E_abs=0.0, Phi=Phi)
        return cfg.with_epsilon(epsilon)


class Operators(NamedTuple):
    a1: sp.csr_matrix
    a2: sp.csr_matrix
    H: sp.csr_matrix
    H_eff: sp.csr_matrix
    n1: np.ndarray  # diagonal of a1†a1
    n2: np.ndarray


def _clean(op) -> sp.csr_matrix:
    op = sp.csr_matrix(op, dtype=complex)
    op.eliminate_zeros()
    op.sort_indices()
    return op


@functools.lru_cache(maxsize=32)
def operators(config: CascadeConfig, spec: HilbertSpec) -> Operators:
    """All composite-space operators for ``config``; cached, treat as read-only."""
    a1, a2 = mode_operators(spec)
    c1, c2 = a1.getH().tocsr(), a2.getH().tocsr()
    if config.variant is Variant.FOUR_PHOTON:
        pump = c2 @ c2
    else:
        pump = c1 @ c2
    # H = i (X - X†) with X the "creation" half of each process
    X = config.chi * config.E * pump + config.k * (c1 @ c1 @ a2)
    H = _clean(1j * (X - X.getH()))
    n1, n2 = spec.number_diagonals()
    damping = sp.diags(config.gamma1 * n1 + config.gamma2 * n2, format="csr")
    H_eff = _clean(H - 1j * damping)
    return Operators(a1, a2, H, H_eff, n1, n2)


def build_hamiltonian(config: CascadeConfig, spec: HilbertSpec) -> sp.csr_matrix:
    return operators(config, spec).H.copy()


def build_effective_hamiltonian(config: CascadeConfig, spec: HilbertSpec) -> sp.csr_matrix:
    """H - i(gamma1 a1†a1 + gamma2 a2†a2), the no-jump generator."""
    return operators(config, spec).H_eff.copy()


def jump_operators(config: CascadeConfig, spec: HilbertSpec) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    ops = operators(config, spec)
    return (
        _clean(math.sqrt(2 * config.gamma1) * ops.a1),
        _clean(math.sqrt(2 * config.gamma2) * ops.a2),
    )


def _sandwich(rho4: np.ndarray, mode: int) -> np.ndarray:
    # a rho a† on the (d1, d2, d1, d2) view: shift both indices of one mode down
    out = np.zeros_like(rho4)
    if mode == 1:
        s = np.sqrt(np.arange(1, rho4.shape[0]))
        out[:-1, :, :-1, :] = s[:, None, None, None] * s[None, None, :, None] * rho4[1:, :, 1:, :]
    else:
        s = np.sqrt(np.arange(1, rho4.shape[1]))
        out[:, :-1, :, :-1] = s[None, :, None, None] * s[None, None, None, :] * rho4[:, 1:, :, 1:]
    return out


def liouvillian_apply(rho: np.ndarray, config: CascadeConfig, spec: HilbertSpec) -> np.ndarray:
    """Right-hand side of the two-mode Lindblad master equation."""
    if rho.shape != (spec.dim, spec.dim):
        raise DimensionError(f"rho has shape {rho.shape}, composite dimension is {spec.dim}")
    K = operators(config, spec).H_eff
    left = K @ rho
    right = (K @ rho.conj().T).conj().T  # rho K†
    out = -1j * (left - right)
    r4 = rho.reshape(*spec.dims, *spec.dims)
    jumps = 2 * config.gamma1 * _sandwich(r4, 1) + 2 * config.gamma2 * _sandwich(r4, 2)
    return out + jumps.reshape(spec.dim, spec.dim)


def liouvillian_apply_hermitian(rho: np.ndarray, config: CascadeConfig, spec: HilbertSpec) -> np.ndarray:
    """Same as :func:`liouvillian_apply` but assumes rho is Hermitian (one sparse product)."""
    K = operators(config, spec).H_eff
    X = -1j * (K @ rho)
    r4 = rho.reshape(*spec.dims, *spec.dims)
    jumps = 2 * config.gamma1 * _sandwich(r4, 1) + 2 * config.gamma2 * _sandwich(r4, 2)
    return X + X.conj().T + jumps.reshape(spec.dim, spec.dim)


SYMMETRY_ANGLES = {
    Variant.FOUR_PHOTON: (math.pi / 2, math.pi),
    # every monomial of the three-photon Hamiltonian is neutral under these
    Variant.THREE_PHOTON: (2 * math.pi / 3, 4 * math.pi / 3),
}


@dataclass(frozen=True)
class SymmetryOperator:
    phi1: float
    phi2: float
    spec: HilbertSpec

    @property
    def diagonal(self) -> np.ndarray:
        n1, n2 = self.spec.number_diagonals()
        return np.exp(1j * (self.phi1 * n1 + self.phi2 * n2))

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.diags(self.diagonal, format="csr")

    def conjugate(self, rho: np.ndarray) -> np.ndarray:
        """U rho U†."""
        u = self.diagonal
        return u[:, None] * rho * u.conj()[None, :]


def symmetry_operator(variant, spec: HilbertSpec) -> SymmetryOperator:
    phi1, phi2 = SYMMETRY_ANGLES[Variant.parse(variant)]
    return SymmetryOperator(phi1, phi2, spec)


def mode_rotation(phi: float, n_max: int) -> np.ndarray:
    """Diagonal of exp(i phi a†a) on one mode."""
    return np.exp(1j * phi * np.arange(n_max + 1))
