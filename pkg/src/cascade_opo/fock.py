"""Truncated two-mode Fock space.

Operators are ``scipy.sparse.csr_matrix`` (complex128), state vectors are 1-D
complex arrays and density matrices are dense 2-D complex arrays.  Mode 1 is
the outer (slow) index: ``|n1, n2>`` sits at ``n1 * (n_max_2 + 1) + n2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class HilbertSpec:
    n_max_1: int
    n_max_2: int

    def __post_init__(self):
        if self.n_max_1 < 1 or self.n_max_2 < 1:
            raise ValueError(
                f"truncation must be >= 1 per mode, got ({self.n_max_1}, {self.n_max_2})"
            )

    @classmethod
    def square(cls, n_max: int) -> "HilbertSpec":
        return cls(n_max, n_max)

    @property
    def dims(self) -> tuple[int, int]:
        return self.n_max_1 + 1, self.n_max_2 + 1

    @property
    def dim(self) -> int:
        return (self.n_max_1 + 1) * (self.n_max_2 + 1)

    def index(self, n1: int, n2: int) -> int:
        if not (0 <= n1 <= self.n_max_1 and 0 <= n2 <= self.n_max_2):
            raise IndexError(f"|{n1},{n2}> outside truncation {self.dims}")
        return n1 * (self.n_max_2 + 1) + n2

    def basis(self, n1: int, n2: int) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(n1, n2)] = 1.0
        return psi

    def vacuum(self) -> np.ndarray:
        return self.basis(0, 0)

    def number_diagonals(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonals of a1†a1 and a2†a2 on the composite space."""
        n1 = np.repeat(np.arange(self.n_max_1 + 1, dtype=float), self.n_max_2 + 1)
        n2 = np.tile(np.arange(self.n_max_2 + 1, dtype=float), self.n_max_1 + 1)
        return n1, n2


def make_annihilation(n_max: int) -> sp.csr_matrix:
    """Lowering operator on ``n_max + 1`` Fock levels, <n-1|a|n> = sqrt(n)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    return sp.diags(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1, format="csr", dtype=complex)


def embed(op, mode: int, spec: HilbertSpec) -> sp.csr_matrix:
    """Lift a single-mode operator onto the composite space."""
    if mode not in (1, 2):
        raise ValueError(f"mode must be 1 or 2, got {mode!r}")
    d1, d2 = spec.dims
    want = d1 if mode == 1 else d2
    if op.shape != (want, want):
        raise DimensionError(f"mode {mode} operator must be {want}x{want}, got {op.shape}")
    if mode == 1:
        out = sp.kron(op, sp.identity(d2, dtype=complex), format="csr")
    else:
        out = sp.kron(sp.identity(d1, dtype=complex), op, format="csr")
    out.eliminate_zeros()
    return out


def mode_operators(spec: HilbertSpec) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Composite-space annihilators (a1, a2)."""
    return (
        embed(make_annihilation(spec.n_max_1), 1, spec),
        embed(make_annihilation(spec.n_max_2), 2, spec),
    )


def normalize(psi: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return psi / norm


def projector(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


def expectation(op, state: np.ndarray) -> complex:
    """<psi|op|psi> for a vector, Tr(rho op) for a matrix."""
    d = op.shape[0]
    if state.ndim == 1:
        if state.shape[0] != d:
            raise DimensionError(f"state has dimension {state.shape[0]}, operator {d}")
        return complex(np.vdot(state, op @ state))
    if state.shape != (d, d):
        raise DimensionError(f"density matrix has shape {state.shape}, operator {d}")
    # Tr(rho op) = sum_ij rho_ij op_ji
    if sp.issparse(op):
        coo = op.tocoo()
        return complex(np.sum(state[coo.col, coo.row] * coo.data))
    return complex(np.sum(state * np.asarray(op).T))


def partial_trace(rho: np.ndarray, keep: int, spec: HilbertSpec) -> np.ndarray:
    d1, d2 = spec.dims
    if rho.shape != (spec.dim, spec.dim):
        raise DimensionError(f"rho has shape {rho.shape}, composite dimension is {spec.dim}")
    r = rho.reshape(d1, d2, d1, d2)
    if keep == 1:
        return np.einsum("ajbj->ab", r)
    if keep == 2:
        return np.einsum("iaib->ab", r)
    raise ValueError(f"keep must be 1 or 2, got {keep!r}")


def reduced_from_state(psi: np.ndarray, keep: int, spec: HilbertSpec) -> np.ndarray:
    """Reduced density matrix of a pure state without forming |psi><psi|."""
    m = psi.reshape(spec.dims)
    if keep == 1:
        return m @ m.conj().T
    if keep == 2:
        return m.T @ m.conj()
    raise ValueError(f"keep must be 1 or 2, got {keep!r}")


def top_level_population(probs: np.ndarray, spec: HilbertSpec, levels: int = 2) -> tuple[float, float]:
    """Population in the highest ``levels`` Fock states of each mode.

    ``probs`` is |psi|^2 (or the diagonal of rho) on the composite space.
    """
    p = probs.reshape(spec.dims)
    return float(p[-levels:, :].sum()), float(p[:, -levels:].sum())


def check_density_matrix(rho: np.ndarray, herm_tol=1e-10, trace_tol=1e-8, eig_tol=1e-8) -> None:
    """Raise ValueError unless rho is Hermitian, unit trace and positive."""
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"density matrix trace {tr!r} differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -eig_tol:
        raise ValueError("density matrix has negative eigenvalues")
