"""Single-mode Wigner functions on the (X, Y) = (Re alpha, Im alpha) plane.

W(alpha) = (2/pi) Tr[rho D(alpha) P D(alpha)†] with P the parity operator,
normalised so that the integral over dX dY is Tr(rho) and the vacuum is
(2/pi) exp(-2|alpha|^2).  Matrix elements use a normalised Laguerre
recurrence, so no factorials are ever formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import gammaln


class GridTooCoarse(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int = 101
    ny: int = 101

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if n < 3 or n % 2 == 0:
                raise ValueError("grid sizes must be odd and >= 3 so the origin is a node")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("empty grid extent")

    @classmethod
    def square(cls, extent: float, n: int = 101) -> "GridSpec":
        return cls(-extent, extent, -extent, extent, n, n)

    @classmethod
    def default(cls, n_max: int) -> "GridSpec":
        return cls.square(1.25 * (math.sqrt(n_max) + 1.0), 101)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)


@dataclass
class WignerGrid:
    spec: GridSpec
    values: np.ndarray  # shape (ny, nx); values[iy, ix] = W(xs[ix], ys[iy])
    rho: np.ndarray | None = field(default=None, repr=False)

    @property
    def xs(self):
        return self.spec.xs

    @property
    def ys(self):
        return self.spec.ys

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.xs, axis=1), self.ys))

    def polar(self, r, theta) -> np.ndarray:
        """Bilinear interpolation at polar coordinates."""
        interp = RegularGridInterpolator((self.ys, self.xs), self.values, method="linear")
        r, theta = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float))
        pts = np.stack([r * np.sin(theta), r * np.cos(theta)], axis=-1)
        return interp(pts)


def wigner_at(rho: np.ndarray, alpha) -> np.ndarray:
    """Evaluate the Wigner function of ``rho`` at complex points ``alpha``."""
    rho = np.asarray(rho, dtype=complex)
    if np.max(np.abs(rho - rho.conj().T), initial=0.0) > 1e-10:
        raise ValueError("density matrix is not Hermitian")
    alpha = np.asarray(alpha, dtype=complex)
    shape = alpha.shape
    a = alpha.ravel()
    N = rho.shape[0]
    x = 4.0 * np.abs(a) ** 2
    mag = 2.0 * np.abs(a)
    with np.errstate(divide="ignore"):
        logmag = np.log(mag)
    phase = np.exp(1j * np.angle(a))
    total = np.zeros(a.shape, dtype=complex)
    for L in range(N):
        diag = np.diagonal(rho, L)  # rho[n, n+L]
        if not np.any(diag):
            continue
        # g_n = sqrt(n! L! / (n+L)!) L_n^L(x), built upward in n
        g_prev = np.ones_like(x)
        acc = diag[0] * g_prev
        if len(diag) > 1:
            g = (1.0 + L - x) / math.sqrt(L + 1.0)
            acc = acc - diag[1] * g
            for n in range(1, len(diag) - 1):
                c1 = math.sqrt((n + 1.0) / (n + 1.0 + L))
                c0 = (n + L) * math.sqrt(n * (n + 1.0) / ((n + L) * (n + L + 1.0)))
                g_next = ((2 * n + 1 + L - x) * g * c1 - c0 * g_prev) / (n + 1.0)
                g_prev, g = g, g_next
                acc = acc + (-1) ** (n + 1) * diag[n + 1] * g
        # (2|alpha|)^L / sqrt(L!) * exp(-2|alpha|^2), in log space
        if L == 0:
            pref = np.exp(-0.5 * x)
        else:
            pref = np.exp(L * logmag - 0.5 * gammaln(L + 1.0) - 0.5 * x) * phase ** L
        weight = 1.0 if L == 0 else 2.0
        total += weight * pref * acc
    return (2.0 / math.pi * total.real).reshape(shape)


def wigner(rho: np.ndarray, grid: GridSpec | None = None, check: bool = True) -> WignerGrid:
    """Wigner function of a single-mode density matrix on a rectangular grid.

    Raises GridTooCoarse when the trapezoidal integral misses Tr(rho) by more
    than 5%.
    """
    rho = np.asarray(rho, dtype=complex)
    if grid is None:
        grid = GridSpec.default(rho.shape[0] - 1)
    X, Y = np.meshgrid(grid.xs, grid.ys)
    out = WignerGrid(grid, wigner_at(rho, X + 1j * Y), rho)
    if check:
        tr = np.trace(rho).real
        if abs(out.integral() - tr) > 0.05 * abs(tr):
            raise GridTooCoarse(f"grid integral {out.integral():.4f} differs from trace {tr:.4f}; enlarge the grid")
    return out


class SymmetryDeviation(NamedTuple):
    absolute: float
    max_abs: float

    @property
    def relative(self) -> float:
        return self.absolute / self.max_abs if self.max_abs > 0 else 0.0


def rotation_symmetry_deviation(grid: WignerGrid, angle: float, n_radii: int = 64,
                                n_angles: int = 360, method: str = "auto") -> SymmetryDeviation:
    """max |W(r, theta + angle) - W(r, theta)| over a polar sample.

    ``method="exact"`` re-evaluates W from the grid's density matrix at the
    sample points; ``"bilinear"`` interpolates the stored grid.  ``"auto"``
    picks exact when the density matrix is available.
    """
    if not 0 < angle < 2 * math.pi:
        raise ValueError("angle must lie in (0, 2 pi)")
    if method == "auto":
        method = "exact" if grid.rho is not None else "bilinear"
    s = grid.spec
    h = max((s.x_max - s.x_min) / (s.nx - 1), (s.y_max - s.y_min) / (s.ny - 1))
    r_max = min(-s.x_min, s.x_max, -s.y_min, s.y_max) - h
    r = np.linspace(r_max / n_radii, r_max, n_radii)
    theta = 2 * math.pi * np.arange(n_angles) / n_angles
    R, T = np.meshgrid(r, theta, indexing="ij")
    if method == "exact":
        if grid.rho is None:
            raise ValueError("exact evaluation needs the density matrix")
        w0 = wigner_at(grid.rho, R * np.exp(1j * T))
        w1 = wigner_at(grid.rho, R * np.exp(1j * (T + angle)))
    elif method == "bilinear":
        w0 = grid.polar(R, T)
        w1 = grid.polar(R, T + angle)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SymmetryDeviation(float(np.max(np.abs(w1 - w0))), float(np.max(np.abs(grid.values))))


@dataclass(frozen=True)
class Hump:
    x: float
    y: float
    height: float

    @property
    def r(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def theta(self) -> float:
        return math.atan2(self.y, self.x) % (2 * math.pi)


def find_humps(grid: WignerGrid, min_height_fraction: float = 0.2, min_radius: float = 0.5) -> list[Hump]:
    """Strict 8-neighbour local maxima above a height fraction and outside a radius, sorted by angle."""
    if not 0 < min_height_fraction < 1:
        raise ValueError("min_height_fraction must lie in (0, 1)")
    W = grid.values
    core = W[1:-1, 1:-1]
    is_max = np.ones(core.shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_max &= core > W[1 + dy:W.shape[0] - 1 + dy, 1 + dx:W.shape[1] - 1 + dx]
    is_max &= core >= min_height_fraction * W.max()
    is_max &= core > 0
    iy, ix = np.nonzero(is_max)
    xs, ys = grid.xs[1:-1], grid.ys[1:-1]
    humps = [Hump(float(xs[i]), float(ys[j]), float(core[j, i])) for j, i in zip(iy, ix)]
    humps = [h for h in humps if h.r >= min_radius]
    return sorted(humps, key=lambda h: h.theta)
