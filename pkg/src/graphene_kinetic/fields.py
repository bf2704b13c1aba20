"""Densities reconstructed from particles, observables and L1 errors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hopping import Ensemble
from .phase_model import Mode
from .quantum_ref import Grid1D


class OutOfDomainError(ValueError):
    def __init__(self, message, indices):
        super().__init__(message)
        self.indices = indices


class GridMismatchError(ValueError):
    pass


@dataclass
class Density1D:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise ValueError(f"values must have shape ({self.grid.n},)")
        if np.any(self.values < 0):
            raise ValueError("density values must be non-negative")

    def mass(self) -> float:
        return float(self.grid.h * self.values.sum())


def quintic_bspline(u):
    """Centred quintic B-spline; support ``|u| < 3`` and unit integral."""
    a = np.abs(np.asarray(u, dtype=float))
    a2 = a * a
    a4 = a2 * a2
    inner = (66.0 - 60.0 * a2 + 30.0 * a4 - 10.0 * a4 * a) / 120.0
    mid = (51.0 + 75.0 * a - 210.0 * a2 + 150.0 * a2 * a - 45.0 * a4 + 5.0 * a4 * a) / 120.0
    outer = (3.0 - a) ** 5 / 120.0
    return np.where(a <= 1.0, inner, np.where(a <= 2.0, mid, np.where(a < 3.0, outer, 0.0)))


def _stencil(frac):
    """Weights on nodes ``i0 - 2 .. i0 + 3`` for a particle at ``i0 + frac``."""
    return [quintic_bspline(frac - off) for off in range(-2, 4)]


def deposit_density(particles: Ensemble, grid: Grid1D, mode_filter: Mode | None = None,
                    margin: int = 3) -> Density1D:
    """Scatter particle weights onto ``grid`` with the quintic B-spline in ``x1 / h``.

    Particles must lie at least ``margin`` cells inside the grid.  The
    density is mass per unit length, so ``h * sum(values)`` equals the
    deposited weight.
    """
    x = particles.x[:, 0]
    w = particles.weight
    if mode_filter is not None:
        keep = particles.sign == int(mode_filter)
        x, w = x[keep], w[keep]
    u = (x - grid.x_min) / grid.h
    bad = np.nonzero(~((u >= margin) & (u <= grid.n - 1 - margin)))[0]
    if bad.size:
        idx = bad if mode_filter is None else np.nonzero(keep)[0][bad]
        raise OutOfDomainError(f"{bad.size} particle(s) outside the deposition region: "
                               f"{idx[:10].tolist()}", idx)
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    out = np.zeros(grid.n)
    for off, wk in zip(range(-2, 4), _stencil(frac)):
        out += np.bincount(i0 + off, weights=w * wk, minlength=grid.n)
    return Density1D(grid, out / grid.h)


def density_from_values(grid: Grid1D, values) -> Density1D:
    return Density1D(grid, np.maximum(np.asarray(values, dtype=float), 0.0))


def l1_error(d1: Density1D, d2: Density1D) -> float:
    if d1.grid != d2.grid:
        raise GridMismatchError("densities live on different grids")
    return float(d1.grid.h * np.sum(np.abs(d1.values - d2.values)))


def observable(particles: Ensemble, a: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
               mode: Mode | None = None) -> float:
    """``sum_j w_j a(x_j, xi_j, sign_j)``, optionally restricted to one mode.

    ``a`` receives the position and momentum arrays of shape ``(n, 2)`` and
    the band signs.
    """
    sel = slice(None) if mode is None else particles.sign == int(mode)
    vals = a(particles.x[sel], particles.xi[sel], particles.sign[sel])
    return float(np.sum(particles.weight[sel] * np.broadcast_to(vals, particles.weight[sel].shape)))


def write_density_csv(path, density: Density1D) -> None:
    np.savetxt(path, np.column_stack([density.grid.x, density.values]), delimiter=",",
               header="x,rho", comments="", fmt="%.17g")


def write_metrics_csv(path, eps, err) -> None:
    np.savetxt(path, np.column_stack([eps, err]), delimiter=",", header="epsilon,err",
               comments="", fmt="%.17g")
